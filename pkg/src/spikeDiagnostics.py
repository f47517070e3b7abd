import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.errors import PreconditionError
from src.lifNeuron import LayerTrace
from src.snnNetwork import Network

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "epoch", "split", "loss", "accuracy", "layer",
    "dead_pct", "mean_spike_rate", "mean_threshold", "weight_drift", "wall_seconds",
]


def dead_neuron_pct(traces_over_epoch: Sequence[Sequence[LayerTrace]], layer: int) -> float:
    """
    Percentage of neurons in `layer` that never spiked on any sample or time step.

    Args:
        traces_over_epoch: One list of per-layer traces per sample
        layer: Layer index

    Returns:
        Value in [0, 100]
    """
    if not traces_over_epoch:
        raise PreconditionError("dead_neuron_pct needs at least one sample")
    counts = sum(sample[layer].spike_counts() for sample in traces_over_epoch)
    return 100.0 * float(np.count_nonzero(counts == 0)) / len(counts)


def mean_spike_rate(traces_over_epoch: Sequence[Sequence[LayerTrace]], layer: int) -> float:
    """Spikes per neuron per time step, averaged over neurons, samples and time."""
    if not traces_over_epoch:
        return 0.0
    total = sum(float(sample[layer].S.sum()) for sample in traces_over_epoch)
    neurons, T = traces_over_epoch[0][layer].S.shape
    return total / (neurons * len(traces_over_epoch) * T)


def weight_drift(net: Network, net_init: Network) -> float:
    """Mean absolute change of every weight relative to `net_init`."""
    diffs = [np.abs(now.weights.astype(np.float64) - start.weights.astype(np.float64)).ravel()
             for now, start in zip(net.layers, net_init.layers)]
    flat = np.concatenate(diffs)
    return float(flat.mean()) if flat.size else 0.0


def mean_thresholds(net: Network) -> List[float]:
    return [float(layer.thresholds.mean()) for layer in net.layers]


class ActivityMonitor:
    """
    Accumulates per-neuron spike counts over an evaluation window.

    Samples are merged in the order they are added. With window='batch' the
    dead-neuron percentage is computed per batch (see end_batch) and averaged;
    with window='epoch' a neuron is dead only if it stayed silent for the whole
    epoch.
    """

    def __init__(self, layer_sizes: Sequence[int], time_steps: int, window: str = "epoch"):
        self.layer_sizes = list(layer_sizes)
        self.time_steps = time_steps
        self.window = window
        self.counts = [np.zeros(size) for size in self.layer_sizes]
        self.batch_counts = [np.zeros(size) for size in self.layer_sizes]
        self.batch_dead: List[List[float]] = []
        self.samples = 0
        self.batch_samples = 0

    def add(self, spike_counts: Sequence[np.ndarray]):
        for total, batch, counts in zip(self.counts, self.batch_counts, spike_counts):
            total += counts
            batch += counts
        self.samples += 1
        self.batch_samples += 1

    def end_batch(self):
        if self.batch_samples == 0:
            return
        self.batch_dead.append([_pct_zero(c) for c in self.batch_counts])
        for c in self.batch_counts:
            c[:] = 0
        self.batch_samples = 0

    def dead_pct(self, layer: int) -> float:
        if self.samples == 0:
            raise PreconditionError("no samples recorded")
        if self.window == "batch":
            self.end_batch()
            return float(np.mean([row[layer] for row in self.batch_dead]))
        return _pct_zero(self.counts[layer])

    def mean_rate(self, layer: int) -> float:
        if self.samples == 0:
            return 0.0
        return float(self.counts[layer].sum()) / (self.layer_sizes[layer] * self.samples * self.time_steps)


def _pct_zero(counts):
    return 100.0 * float(np.count_nonzero(counts == 0)) / len(counts)


@dataclass
class RunMetrics:
    epoch: int
    split: str
    loss: float
    accuracy: float
    dead_pct: List[float] = field(default_factory=list)
    mean_spike_rate: List[float] = field(default_factory=list)
    mean_threshold: List[float] = field(default_factory=list)
    weight_drift: float = 0.0
    wall_seconds: float = 0.0

    def rows(self) -> List[Dict]:
        """One CSV row per layer; layers are numbered from 1."""
        return [
            {
                "epoch": self.epoch,
                "split": self.split,
                "loss": self.loss,
                "accuracy": self.accuracy,
                "layer": i + 1,
                "dead_pct": self.dead_pct[i],
                "mean_spike_rate": self.mean_spike_rate[i],
                "mean_threshold": self.mean_threshold[i],
                "weight_drift": self.weight_drift,
                "wall_seconds": self.wall_seconds,
            }
            for i in range(len(self.dead_pct))
        ]


def collect_metrics(epoch: int, split: str, losses: Sequence[float], correct: int, monitor: ActivityMonitor,
                    net: Network, net_init: Network, wall_seconds: float = 0.0) -> RunMetrics:
    """Summarize one split of one epoch."""
    return RunMetrics(
        epoch=epoch,
        split=split,
        loss=float(np.mean(losses)) if len(losses) else 0.0,
        accuracy=correct / len(losses) if len(losses) else 0.0,
        dead_pct=[monitor.dead_pct(i) for i in range(len(monitor.layer_sizes))],
        mean_spike_rate=[monitor.mean_rate(i) for i in range(len(monitor.layer_sizes))],
        mean_threshold=mean_thresholds(net),
        weight_drift=weight_drift(net, net_init),
        wall_seconds=wall_seconds,
    )


def epochs_to_reach(history: Sequence[RunMetrics], target_accuracy: float) -> Optional[int]:
    """First epoch whose test accuracy reaches `target_accuracy`, or None."""
    for metrics in history:
        if metrics.split == "test" and metrics.accuracy >= target_accuracy:
            return metrics.epoch
    return None
