"""
Spatiotemporal error backpropagation for current-based LIF networks.

The backward pass walks the unrolled recurrences of `layer_forward` in
reverse: layers from output to input, time from T-1 to 0. The spike step
function is differentiated with the exponential surrogate, both with respect to
the membrane potential (for weights) and to the threshold (for thresholds).
A reset step blocks temporal credit: dV_post[t]/dV[t] is taken as 1 - S[t].
"""
import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import NumericError, PreconditionError, ShapeError
from src.lifNeuron import LayerTrace, surrogate_dS_dV
from src.loadConfig import Hyperparams
from src.snnNetwork import Network, forward, predict_from_trace

logger = logging.getLogger(__name__)

# Desired output spike rate per neuron, entries in [0, 1]
TargetRates = np.ndarray


def make_target(label: int, num_outputs: int, hp: Hyperparams) -> TargetRates:
    """false_rate everywhere except true_rate at the labelled class."""
    if not 0 <= label < num_outputs:
        raise ShapeError(f"label {label} outside {num_outputs} output neurons")
    target = np.full(num_outputs, hp.false_rate, dtype=np.float64)
    target[label] = hp.true_rate
    return target


@dataclass
class GradientSet:
    """dL/dW and dL/dTh for every layer, shaped like the LayerParams they belong to."""
    dW: List[np.ndarray]
    dTh: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: Network) -> "GradientSet":
        return cls(
            dW=[np.zeros_like(layer.weights, dtype=np.float64) for layer in net.layers],
            dTh=[np.zeros_like(layer.thresholds, dtype=np.float64) for layer in net.layers],
        )

    def add_(self, other: "GradientSet") -> "GradientSet":
        for mine, theirs in zip(self.dW, other.dW):
            mine += theirs
        for mine, theirs in zip(self.dTh, other.dTh):
            mine += theirs
        return self

    def scale_(self, factor: float) -> "GradientSet":
        for g in self.dW + self.dTh:
            g *= factor
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.dW + self.dTh)


def output_rates(trace: LayerTrace) -> np.ndarray:
    return trace.S.mean(axis=1)


def loss_mse_rate(output_trace: LayerTrace, target: TargetRates) -> float:
    """(1/N) * sum_i (r_i - target_i)^2 with r_i the spike rate of output neuron i."""
    rates = output_rates(output_trace)
    if rates.shape != np.shape(target):
        raise ShapeError(f"{rates.shape[0]} output neurons but target has shape {np.shape(target)}")
    return float(np.mean((rates - target) ** 2))


def _zero_spike_grad(V, Th, hp):
    return np.zeros_like(V)


def _surrogate_spike_grad(V, Th, hp):
    return surrogate_dS_dV(V, Th, hp)


def _layer_adjoint(layer, trace, spikes_in, dS, hp, spike_grad, dV_extra=None):
    """
    Reverse one layer through time.

    Args:
        layer: Parameters of the layer
        trace: Its forward trace
        spikes_in: Spikes that drove it (fan_in x T)
        dS: Loss adjoint of its output spikes (fan_out x T)
        hp: Hyperparams (decays, surrogate shape)
        spike_grad: dS/dV as a function of (V, Th, hp)
        dV_extra: Loss terms that hit V directly (membrane loss only)

    Returns:
        (dW, dTh, dS_in) where dS_in is the adjoint of the layer's input spikes
    """
    T = trace.time_steps
    alpha = hp.current_decay
    beta = hp.voltage_decay

    dS = np.asarray(dS, dtype=np.float64)
    spike_slope = spike_grad(trace.V.astype(np.float64), layer.thresholds.astype(np.float64)[:, None], hp)
    local = dS * spike_slope
    gate = 1.0 - trace.S.astype(np.float64)

    dI = np.empty_like(local)
    dV_next = np.zeros(local.shape[0])
    dI_next = np.zeros(local.shape[0])
    for t in range(T - 1, -1, -1):
        dV = local[:, t] + beta * gate[:, t] * dV_next
        if dV_extra is not None:
            dV = dV + dV_extra[:, t]
        dI_next = dV + alpha * dI_next
        dI[:, t] = dI_next
        dV_next = dV

    dW = dI @ spikes_in.astype(np.float64).T
    # dS/dTh is the negated slope
    dTh = -local.sum(axis=1)
    dS_in = layer.weights.astype(np.float64).T @ dI
    return dW, dTh, dS_in


def _check_traces(net, traces, spikes_in):
    if len(traces) != len(net.layers):
        raise ShapeError(f"{len(traces)} traces for {len(net.layers)} layers")
    if np.shape(spikes_in)[0] != net.num_inputs:
        raise ShapeError(f"input has {np.shape(spikes_in)[0]} rows, network expects {net.num_inputs}")
    for layer, trace in zip(net.layers, traces):
        if trace.S.shape[0] != layer.fan_out or trace.time_steps != np.shape(spikes_in)[1]:
            raise ShapeError(f"trace shape {trace.S.shape} does not match layer of {layer.fan_out} neurons")


def _backpropagate(net, traces, spikes_in, dS_out, spike_grad, dV_extra_out=None):
    grads = GradientSet(dW=[None] * len(net.layers), dTh=[None] * len(net.layers))
    dS = dS_out
    dV_extra = dV_extra_out
    for index in range(len(net.layers) - 1, -1, -1):
        below = traces[index - 1].S if index > 0 else spikes_in
        dW, dTh, dS = _layer_adjoint(net.layers[index], traces[index], below, dS, net.hp, spike_grad, dV_extra)
        grads.dW[index] = dW
        grads.dTh[index] = dTh
        dV_extra = None

    if not grads.is_finite():
        raise NumericError("non-finite gradient; check tau and the decay constants")
    return grads


def backward(net: Network, traces: Sequence[LayerTrace], spikes_in: np.ndarray,
             target: TargetRates) -> GradientSet:
    """
    Gradients of the rate MSE loss with respect to every weight and threshold.

    Args:
        net: The network that produced `traces`
        traces: forward(net, spikes_in)
        spikes_in: Input raster (num_inputs x T)
        target: Desired output rates

    Returns:
        GradientSet; neither `net` nor `traces` is modified
    """
    _check_traces(net, traces, spikes_in)
    output = traces[-1]
    if output.S.shape[0] != np.shape(target)[0]:
        raise ShapeError(f"target has {np.shape(target)[0]} entries for {output.S.shape[0]} outputs")

    T = output.time_steps
    N = output.S.shape[0]
    dL_dr = 2.0 * (output_rates(output) - target) / N
    dS_out = np.repeat((dL_dr / T)[:, None], T, axis=1)
    return _backpropagate(net, traces, spikes_in, dS_out, _surrogate_spike_grad)


def membrane_loss(net: Network, spikes_in: np.ndarray, target_v: np.ndarray) -> float:
    """MSE between the output layer's final-step membrane potentials and `target_v`."""
    final_v = forward(net, spikes_in)[-1].V[:, -1]
    return float(np.mean((final_v - target_v) ** 2))


def backward_membrane_loss(net: Network, traces: Sequence[LayerTrace], spikes_in: np.ndarray,
                           target_v: np.ndarray) -> GradientSet:
    """
    Exact gradients of `membrane_loss` for a network in which nothing spikes.

    With no spikes the forward pass is linear in the weights and the step
    function is flat, so its true derivative (zero) is used instead of the
    surrogate; the result then matches finite differences.

    Raises:
        PreconditionError if any neuron spiked
    """
    _check_traces(net, traces, spikes_in)
    if any(np.any(trace.S) for trace in traces):
        raise PreconditionError("backward_membrane_loss needs a network with no spikes on this input")

    output = traces[-1]
    N, T = output.V.shape
    dV_extra = np.zeros((N, T))
    dV_extra[:, -1] = 2.0 * (output.V[:, -1] - target_v) / N
    return _backpropagate(net, traces, spikes_in, np.zeros((N, T)), _zero_spike_grad, dV_extra)


@dataclass
class SampleResult:
    label: int
    prediction: int
    loss: float
    spike_counts: List[np.ndarray]
    grads: Optional[GradientSet] = None


def run_sample(net: Network, spikes_in: np.ndarray, label: int, with_grads: bool = True) -> SampleResult:
    """Forward one sample and, when asked, backpropagate its rate loss."""
    traces = forward(net, spikes_in)
    target = make_target(label, net.num_outputs, net.hp)
    loss = loss_mse_rate(traces[-1], target)
    grads = backward(net, traces, spikes_in, target) if with_grads else None
    return SampleResult(
        label=label,
        prediction=predict_from_trace(traces[-1]),
        loss=loss,
        spike_counts=[trace.spike_counts() for trace in traces],
        grads=grads,
    )


def run_samples(net: Network, samples, with_grads: bool = True,
                executor: Optional[Executor] = None) -> List[SampleResult]:
    """run_sample over a list of (raster, label), results in sample order."""
    def work(sample):
        raster, label = sample
        return run_sample(net, raster, label, with_grads)

    if executor is None:
        return [work(sample) for sample in samples]
    return list(executor.map(work, samples))


def batch_gradients(net: Network, batch, executor: Optional[Executor] = None
                    ) -> Tuple[GradientSet, List[SampleResult]]:
    """
    Mean gradient over a batch.

    Per-sample gradients may be computed concurrently but are summed in sample
    order, so the result is the same for any worker count.
    """
    results = run_samples(net, batch, with_grads=True, executor=executor)
    total = GradientSet.zeros_like(net)
    for result in results:
        total.add_(result.grads)
    total.scale_(1.0 / len(results))
    return total, results
