import os
import time
import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from src.adamOptimizer import AdamOptimizer
from src.errors import NumericError
from src.generateMetrics import append_metrics, save_json_output, start_metrics_csv
from src.snnNetwork import Network, copy_network, save_checkpoint
from src.spatiotemporalBackprop import batch_gradients, run_samples
from src.spikeDiagnostics import ActivityMonitor, RunMetrics, collect_metrics, epochs_to_reach

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
BEST_CHECKPOINT = "best.rsnn"
FINAL_CHECKPOINT = "final.rsnn"
INIT_CHECKPOINT = "init.rsnn"
SUMMARY_FILE = "summary.json"


@dataclass
class EpochResult:
    losses: List[float]
    correct: int
    monitor: ActivityMonitor

    @property
    def accuracy(self) -> float:
        return self.correct / len(self.losses) if self.losses else 0.0


@dataclass
class TrainingResult:
    out_dir: str
    metrics_path: str
    history: List[RunMetrics] = field(default_factory=list)
    best_accuracy: float = 0.0
    best_epoch: int = 0
    epochs_run: int = 0
    stop_reason: str = "completed"

    @property
    def final_test(self) -> Optional[RunMetrics]:
        tests = [m for m in self.history if m.split == "test"]
        return tests[-1] if tests else None


@contextmanager
def sample_executor(threads: int):
    """Thread pool for per-sample forward/backward passes; None when single-threaded."""
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            yield pool
    else:
        yield None


def _new_monitor(net):
    return ActivityMonitor(net.spec.layer_sizes[1:], net.hp.time_steps, net.hp.dead_window)


def train_epoch(net: Network, optimizer: AdamOptimizer, train_set, epoch: int,
                executor: Optional[Executor] = None, show_progress: bool = True) -> EpochResult:
    """
    One pass over the training set in mini-batches.

    The shuffle order is drawn from default_rng([seed, epoch]), so any epoch can
    be replayed on its own (e.g. after resuming from a checkpoint).

    Args:
        net: Network, updated in place
        optimizer: Adam state, updated in place
        train_set: List of (raster, label)
        epoch: 1-based epoch number
        executor: Optional pool for per-sample passes
        show_progress: Show a tqdm bar over batches

    Returns:
        EpochResult with per-sample losses, correct count and activity
    """
    hp = net.hp
    order = np.random.default_rng([hp.seed, epoch]).permutation(len(train_set))
    monitor = _new_monitor(net)
    losses: List[float] = []
    correct = 0

    starts = range(0, len(order), hp.batch_size)
    for start in tqdm(starts, desc=f"Epoch {epoch}", disable=not show_progress, leave=False):
        batch = [train_set[i] for i in order[start:start + hp.batch_size]]
        grads, results = batch_gradients(net, batch, executor=executor)

        for result in results:
            losses.append(result.loss)
            correct += int(result.prediction == result.label)
            monitor.add(result.spike_counts)
        monitor.end_batch()

        if not np.all(np.isfinite([r.loss for r in results])):
            raise NumericError(f"non-finite loss in epoch {epoch}")

        optimizer.step(net, grads)

    return EpochResult(losses=losses, correct=correct, monitor=monitor)


def evaluate(net: Network, samples, executor: Optional[Executor] = None) -> EpochResult:
    """Forward-only pass over `samples`; the network is not modified."""
    monitor = _new_monitor(net)
    results = run_samples(net, samples, with_grads=False, executor=executor)
    losses = []
    correct = 0
    for index, result in enumerate(results, 1):
        losses.append(result.loss)
        correct += int(result.prediction == result.label)
        monitor.add(result.spike_counts)
        if index % net.hp.batch_size == 0:
            monitor.end_batch()
    monitor.end_batch()
    return EpochResult(losses=losses, correct=correct, monitor=monitor)


def _checkpoint(path, net, optimizer, epoch):
    state = optimizer.state_arrays() if net.hp.save_optimizer_state else None
    save_checkpoint(path, net, state, epoch)


def run_training(net: Network, train_set, test_set, out_dir: str,
                 optimizer: Optional[AdamOptimizer] = None, start_epoch: int = 1,
                 net_init: Optional[Network] = None, extra_header: Optional[Dict[str, str]] = None,
                 threads: int = 1, show_progress: bool = True) -> TrainingResult:
    """
    Train for hp.epochs epochs, evaluating the test split after each one.

    Writes into `out_dir`:
        * init.rsnn: the weights drift is measured from (first epoch only)
        * metrics.csv: config comment block, then one row per (epoch, split, layer)
        * best.rsnn: checkpoint of the best test accuracy so far
        * final.rsnn: checkpoint after the last epoch
        * summary.json: final/best accuracy and epochs to reach target_accuracy

    Args:
        net: Network to train in place
        train_set: List of (raster, label)
        test_set: List of (raster, label)
        out_dir: Run directory
        optimizer: Existing Adam state (resume), or None for a fresh one
        start_epoch: First epoch number to run
        net_init: Reference for weight drift; defaults to a copy of `net`. Pass the
            run's init.rsnn when resuming, otherwise drift restarts from zero
        extra_header: Additional comment lines for the metrics CSV
        threads: Worker threads for per-sample passes
        show_progress: Show tqdm bars

    Returns:
        TrainingResult
    """
    hp = net.hp
    os.makedirs(out_dir, exist_ok=True)
    optimizer = optimizer or AdamOptimizer(net)
    net_init = net_init or copy_network(net)

    metrics_path = os.path.join(out_dir, METRICS_FILE)
    if start_epoch > 1 and os.path.exists(metrics_path):
        logger.info(f"Resuming at epoch {start_epoch}, appending to {metrics_path}")
    else:
        start_metrics_csv(metrics_path, hp, extra_header)
    if start_epoch == 1:
        save_checkpoint(os.path.join(out_dir, INIT_CHECKPOINT), net_init)

    result = TrainingResult(out_dir=out_dir, metrics_path=metrics_path, epochs_run=start_epoch - 1)
    run_started = time.perf_counter()
    epochs_since_best = 0

    with sample_executor(threads) as executor:
        for epoch in range(start_epoch, hp.epochs + 1):
            epoch_started = time.perf_counter()
            trained = train_epoch(net, optimizer, train_set, epoch, executor, show_progress)
            tested = evaluate(net, test_set, executor)
            elapsed = time.perf_counter() - epoch_started
            wall = elapsed if hp.record_wall_time else 0.0

            for split, outcome in (("train", trained), ("test", tested)):
                metrics = collect_metrics(epoch, split, outcome.losses, outcome.correct, outcome.monitor,
                                          net, net_init, wall)
                if not np.isfinite(metrics.loss):
                    raise NumericError(f"non-finite {split} loss at epoch {epoch}")
                append_metrics(metrics_path, metrics)
                result.history.append(metrics)

            result.epochs_run = epoch
            logger.info(
                f"Epoch {epoch}/{hp.epochs}: train loss {np.mean(trained.losses):.5f} "
                f"acc {trained.accuracy:.4f} | test acc {tested.accuracy:.4f} "
                f"| dead% L1 {result.history[-1].dead_pct[0]:.1f} ({elapsed:.1f}s)"
            )

            if tested.accuracy > result.best_accuracy or result.best_epoch == 0:
                result.best_accuracy = tested.accuracy
                result.best_epoch = epoch
                epochs_since_best = 0
                _checkpoint(os.path.join(out_dir, BEST_CHECKPOINT), net, optimizer, epoch)
            else:
                epochs_since_best += 1

            if hp.patience and epochs_since_best >= hp.patience:
                result.stop_reason = "early_stop"
                logger.info(f"No test improvement for {hp.patience} epochs, stopping")
                break
            if hp.time_budget and time.perf_counter() - run_started >= hp.time_budget:
                result.stop_reason = "time_budget"
                logger.info(f"Time budget of {hp.time_budget}s used up, stopping")
                break

    _checkpoint(os.path.join(out_dir, FINAL_CHECKPOINT), net, optimizer, result.epochs_run)

    final = result.final_test
    summary = {
        "epochs_run": result.epochs_run,
        "stop_reason": result.stop_reason,
        "final_test_accuracy": final.accuracy if final else None,
        "best_test_accuracy": result.best_accuracy,
        "best_epoch": result.best_epoch,
        "target_accuracy": hp.target_accuracy,
        "epochs_to_target": epochs_to_reach(result.history, hp.target_accuracy),
        "final_dead_pct": final.dead_pct if final else None,
        "final_mean_threshold": final.mean_threshold if final else None,
    }
    save_json_output(summary, os.path.join(out_dir, SUMMARY_FILE))
    return result
