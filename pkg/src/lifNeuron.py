import logging
from dataclasses import dataclass

import numpy as np

from src.errors import ShapeError
from src.loadConfig import Hyperparams

logger = logging.getLogger(__name__)


@dataclass
class LayerParams:
    """Synaptic weights w_ji (fan_out x fan_in) and one spiking threshold per output neuron."""
    weights: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got shape {self.weights.shape}")
        if self.thresholds.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"thresholds shape {self.thresholds.shape} does not match {self.weights.shape[0]} neurons"
            )

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.thresholds.copy())


@dataclass
class LayerTrace:
    """
    Per-timestep record of one layer, each array shaped (fan_out x T).

    V is the membrane potential at the spike decision, before any reset, so
    S[i, t] == 1 exactly when V[i, t] >= Th_i.
    """
    I: np.ndarray
    V: np.ndarray
    S: np.ndarray

    @property
    def time_steps(self) -> int:
        return self.S.shape[1]

    def spike_counts(self) -> np.ndarray:
        return self.S.sum(axis=1)


def layer_forward(params: LayerParams, spikes_in: np.ndarray, hp: Hyperparams) -> LayerTrace:
    """
    Run a layer of current-based LIF neurons over all time steps.

    With I[-1] = 0 and V_post[-1] = v_rest:
        I[t]      = current_decay * I[t-1] + W @ S_in[t]
        V[t]      = voltage_decay * V_post[t-1] + I[t]
        S[t]      = V[t] >= Th
        V_post[t] = v_rest where S[t] else V[t]

    Args:
        params: Layer weights and thresholds
        spikes_in: Binary input raster, shape (fan_in x T)
        hp: Hyperparams (decays, v_rest)

    Returns:
        LayerTrace with I, V (pre-reset) and S
    """
    spikes_in = np.asarray(spikes_in)
    if spikes_in.ndim != 2 or spikes_in.shape[0] != params.fan_in:
        raise ShapeError(f"input shape {spikes_in.shape} does not match fan_in {params.fan_in}")
    T = spikes_in.shape[1]
    if T < 1:
        raise ShapeError("input has no time steps")

    dtype = params.weights.dtype
    alpha = dtype.type(hp.current_decay)
    beta = dtype.type(hp.voltage_decay)
    v_rest = dtype.type(hp.v_rest)
    thresholds = params.thresholds

    drive = params.weights @ spikes_in.astype(dtype)

    I = np.empty((params.fan_out, T), dtype=dtype)
    V = np.empty((params.fan_out, T), dtype=dtype)
    S = np.empty((params.fan_out, T), dtype=dtype)

    current = np.zeros(params.fan_out, dtype=dtype)
    v_post = np.full(params.fan_out, v_rest, dtype=dtype)
    for t in range(T):
        current = alpha * current + drive[:, t]
        voltage = beta * v_post + current
        fired = voltage >= thresholds
        I[:, t] = current
        V[:, t] = voltage
        S[:, t] = fired
        v_post = np.where(fired, v_rest, voltage)

    return LayerTrace(I=I, V=V, S=S)


def surrogate_dS_dV(V, Th, hp: Hyperparams):
    """(s / tau) * exp(-|V - Th| / tau); peaks at V == Th. Works elementwise on arrays."""
    return (hp.s / hp.tau) * np.exp(-np.abs(V - Th) / hp.tau)


def surrogate_dS_dTh(V, Th, hp: Hyperparams):
    """Derivative of the spike w.r.t. the threshold: the negative of surrogate_dS_dV."""
    return -surrogate_dS_dV(V, Th, hp)


def no_spike_bound(params: LayerParams, hp: Hyperparams) -> np.ndarray:
    """
    Per-neuron upper bound on V for any binary input. A neuron whose threshold
    exceeds its bound can never fire.
    """
    gain = (1.0 - hp.current_decay) * (1.0 - hp.voltage_decay)
    return np.abs(params.weights).sum(axis=1) / gain + max(hp.v_rest, 0.0)
