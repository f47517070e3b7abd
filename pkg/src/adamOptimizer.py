import logging
from typing import Dict, List, Optional

import numpy as np

from src.errors import ShapeError
from src.loadConfig import Hyperparams
from src.snnNetwork import Network
from src.spatiotemporalBackprop import GradientSet

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class AdamOptimizer:
    """
    Adam with two parameter groups: synaptic weights (lr_w) and spiking
    thresholds (lr_th). Each group keeps its own first/second moment buffers,
    so lr_th = 0 freezes the thresholds without touching the weight updates.
    th_clamp_min only applies while thresholds learn: with lr_th = 0 the
    thresholds stay at their current values even if they sit below the floor.
    """

    def __init__(self, net: Network, beta1: float = BETA1, beta2: float = BETA2, epsilon: float = EPSILON):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

        # first moment estimates
        self.m_w = [np.zeros(layer.weights.shape) for layer in net.layers]
        self.m_th = [np.zeros(layer.thresholds.shape) for layer in net.layers]
        # second moment estimates
        self.v_w = [np.zeros(layer.weights.shape) for layer in net.layers]
        self.v_th = [np.zeros(layer.thresholds.shape) for layer in net.layers]
        # step counter
        self.k = 0

    def _update(self, param, grad, m, v, lr, bc1, bc2):
        if param.shape != grad.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match parameter shape {param.shape}")

        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * (grad * grad)

        if lr == 0:
            return
        denom = np.sqrt(v / bc2) + self.epsilon
        param -= ((lr / bc1) * m / denom).astype(param.dtype)

    def step(self, net: Network, grads: GradientSet, hp: Optional[Hyperparams] = None) -> Network:
        """
        Apply one Adam update in place to every weight and threshold.

        Args:
            net: Network to update (needs exclusive access)
            grads: Mean batch gradients
            hp: Learning rates and optional threshold floor (ignored when lr_th is 0);
                defaults to net.hp

        Returns:
            The updated network
        """
        hp = hp or net.hp
        if len(grads.dW) != len(net.layers) or len(grads.dTh) != len(net.layers):
            raise ShapeError(f"gradients for {len(grads.dW)} layers, network has {len(net.layers)}")

        self.k += 1
        bc1 = 1.0 - self.beta1 ** self.k
        bc2 = 1.0 - self.beta2 ** self.k

        for i, layer in enumerate(net.layers):
            self._update(layer.weights, grads.dW[i], self.m_w[i], self.v_w[i], hp.lr_w, bc1, bc2)
            self._update(layer.thresholds, grads.dTh[i], self.m_th[i], self.v_th[i], hp.lr_th, bc1, bc2)
            if hp.th_clamp_min is not None and hp.lr_th != 0:
                np.maximum(layer.thresholds, hp.th_clamp_min, out=layer.thresholds)

        return net

    def state_arrays(self) -> Dict:
        """Moments and step counter in the layout the checkpoint writer expects."""
        return {
            "step": self.k,
            "m_w": self.m_w,
            "v_w": self.v_w,
            "m_th": self.m_th,
            "v_th": self.v_th,
        }

    @classmethod
    def from_state_arrays(cls, net: Network, state: Dict) -> "AdamOptimizer":
        optimizer = cls(net)
        optimizer.k = int(state["step"])
        for key in ("m_w", "v_w", "m_th", "v_th"):
            arrays: List[np.ndarray] = [np.array(a, dtype=np.float64) for a in state[key]]
            expected = [buf.shape for buf in getattr(optimizer, key)]
            if [a.shape for a in arrays] != expected:
                raise ShapeError(f"optimizer state '{key}' does not match the network")
            setattr(optimizer, key, arrays)
        return optimizer
