#!/usr/bin/env python3
import os
import sys
import logging
import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

from dotenv import load_dotenv
from tqdm import tqdm

# Make sure the parent directory is in the path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.errors import ConfigError, DataError, RouserError
from src.loadConfig import Hyperparams, apply_overrides, load_config
from src.parseEvents import (
    NEUTRAL_SUFFIX,
    NMNIST_SUFFIX,
    count_dataset_files,
    list_sample_files,
    load_dataset_dir,
    raster_to_stream,
    read_event_file,
    read_nmnist_file,
    synthetic_datasets,
    write_neutral,
)
from src.snnNetwork import (
    Network,
    init_network,
    load_checkpoint,
    parameter_count,
    parse_architecture,
    save_checkpoint,
    weight_fingerprint,
)
from src.adamOptimizer import AdamOptimizer
from src.generateMetrics import (
    append_metrics,
    read_header,
    start_metrics_csv,
    write_ablation_csv,
    write_sweep_csv,
)
from src.spikeDiagnostics import collect_metrics, epochs_to_reach
from src.trainNetwork import INIT_CHECKPOINT, evaluate, run_training, sample_executor

logger = logging.getLogger("rouser")

BANNER = "=" * 80


@dataclass
class DataSource:
    """Where a run gets its samples; small enough to hand to a worker process."""
    synthetic: bool
    data_dir: Optional[str] = None


@dataclass
class RunJob:
    hp: Hyperparams
    source: DataSource
    run_dir: str
    init_checkpoint: Optional[str] = None
    threads: int = 1
    show_progress: bool = False


def worker_threads():
    """Per-sample worker threads, capped by ROUSER_THREADS (may come from .env)."""
    raw = os.getenv("ROUSER_THREADS", "1")
    try:
        threads = int(raw)
    except ValueError as e:
        raise ConfigError(f"ROUSER_THREADS must be an integer, got {raw!r}") from e
    return max(1, threads)


def resolve_config(args):
    hp = load_config(args.config)
    hp = apply_overrides(hp, args.set)
    if getattr(args, "seed", None) is not None:
        hp = hp.replace(seed=args.seed)
    return hp


def load_data(source, hp, show_progress=True):
    """
    Train and test samples for a run.

    Returns:
        (train_set, test_set), each a list of (raster, label)
    """
    spec = parse_architecture(hp.architecture)
    if source.synthetic:
        if spec.layer_sizes[0] != hp.synthetic_neurons or spec.layer_sizes[-1] != hp.synthetic_classes:
            raise ConfigError(
                f"architecture {spec} does not fit the synthetic task "
                f"({hp.synthetic_neurons} inputs, {hp.synthetic_classes} classes)",
                key="architecture",
            )
        return synthetic_datasets(hp)

    if not source.data_dir or not os.path.isdir(source.data_dir):
        raise DataError(f"data directory not found: {source.data_dir}")

    threads = worker_threads()
    train_set = load_dataset_dir(source.data_dir, "train", hp, threads, hp.max_train_samples, show_progress)
    test_set = load_dataset_dir(source.data_dir, "test", hp, threads, hp.max_test_samples, show_progress)

    inputs = train_set[0][0].shape[0]
    if inputs != spec.layer_sizes[0]:
        raise DataError(f"samples have {inputs} input neurons but architecture {spec} expects {spec.layer_sizes[0]}")
    labels = {label for _, label in train_set + test_set}
    if max(labels) >= spec.layer_sizes[-1]:
        raise DataError(f"label {max(labels)} does not fit {spec.layer_sizes[-1]} output neurons")
    return train_set, test_set


def build_network(job: RunJob) -> Tuple[Network, Dict[str, str]]:
    """Fresh network from the seed, or the shared initial checkpoint of an ablation."""
    if job.init_checkpoint is None:
        net = init_network(parse_architecture(job.hp.architecture), job.hp, job.hp.seed)
    else:
        stored = load_checkpoint(job.init_checkpoint).net
        net = Network(layers=stored.layers, spec=stored.spec, hp=job.hp)
    return net, {"init_fingerprint": weight_fingerprint(net)}


def run_job(job: RunJob, data=None):
    """
    One complete training run. Top-level so it can execute in a worker process.
    """
    if data is None:
        data = load_data(job.source, job.hp, job.show_progress)
    train_set, test_set = data
    net, header = build_network(job)
    return run_training(
        net, train_set, test_set, job.run_dir,
        extra_header=header, threads=job.threads, show_progress=job.show_progress,
    )


def run_jobs(jobs, workers, data=None):
    """Run jobs in order, or in a process pool when workers > 1."""
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run_job, jobs))
    return [run_job(job, data) for job in jobs]


def parse_float_list(text, name):
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"--{name} must be a comma separated list of numbers: {e}") from e


def _source(args):
    if not args.synthetic and not args.data_dir:
        raise ConfigError("give --data-dir or --synthetic")
    return DataSource(synthetic=args.synthetic, data_dir=args.data_dir)


def resume_reference(checkpoint_path):
    """Initial weights saved next to the checkpoint being resumed, if the run left them."""
    path = os.path.join(os.path.dirname(checkpoint_path), INIT_CHECKPOINT)
    if not os.path.exists(path):
        logger.warning(f"No {INIT_CHECKPOINT} next to {checkpoint_path}; weight drift restarts from the resumed weights")
        return None
    return load_checkpoint(path).net


def cmd_train(args):
    hp = resolve_config(args)
    source = _source(args)
    run_dir = os.path.join(args.out_dir, args.run_name)
    print(f"\n{BANNER}\nTraining {hp.architecture} for {hp.epochs} epochs (lr_th={hp.lr_th}) -> {run_dir}\n{BANNER}")

    train_set, test_set = load_data(source, hp, not args.quiet)
    threads = worker_threads()

    if args.resume:
        checkpoint = load_checkpoint(args.resume)
        if checkpoint.optimizer_state is None:
            raise DataError(f"{args.resume} has no optimizer state; train with save_optimizer_state = true")
        net = Network(layers=checkpoint.net.layers, spec=checkpoint.net.spec, hp=hp)
        optimizer = AdamOptimizer.from_state_arrays(net, checkpoint.optimizer_state)
        net_init = resume_reference(args.resume)
        logger.info(f"Resuming from {args.resume} after epoch {checkpoint.epoch}")
        result = run_training(net, train_set, test_set, run_dir, optimizer=optimizer,
                              start_epoch=checkpoint.epoch + 1, net_init=net_init,
                              threads=threads, show_progress=not args.quiet)
    else:
        net, header = build_network(RunJob(hp=hp, source=source, run_dir=run_dir))
        result = run_training(net, train_set, test_set, run_dir, extra_header=header,
                              threads=threads, show_progress=not args.quiet)

    final = result.final_test
    print(f"\nTraining finished after {result.epochs_run} epochs ({result.stop_reason})")
    if final:
        print(f"Final test accuracy: {final.accuracy:.4f} (best {result.best_accuracy:.4f} at epoch {result.best_epoch})")
    reached = epochs_to_reach(result.history, hp.target_accuracy)
    print(f"Epochs to reach {hp.target_accuracy:.0%}: {reached if reached is not None else 'not reached'}")
    print(f"Metrics: {result.metrics_path}")
    return 0


def cmd_eval(args):
    checkpoint = load_checkpoint(args.checkpoint)
    hp = apply_overrides(checkpoint.net.hp, args.set)
    net = Network(layers=checkpoint.net.layers, spec=checkpoint.net.spec, hp=hp)
    _, test_set = load_data(_source(args), hp, not args.quiet)

    with sample_executor(worker_threads()) as executor:
        outcome = evaluate(net, test_set, executor)
    metrics = collect_metrics(checkpoint.epoch, "test", outcome.losses, outcome.correct, outcome.monitor, net, net)

    out_path = os.path.join(args.out_dir, "eval.csv")
    start_metrics_csv(out_path, hp, {"checkpoint": os.path.abspath(args.checkpoint)})
    append_metrics(out_path, metrics)

    print(f"Accuracy: {metrics.accuracy:.4f} on {len(test_set)} samples")
    for layer, dead in enumerate(metrics.dead_pct, 1):
        print(f"  layer {layer}: dead {dead:.2f}%  mean rate {metrics.mean_spike_rate[layer - 1]:.5f}")
    return 0


def cmd_sweep_th(args):
    hp = resolve_config(args)
    grid = parse_float_list(args.grid, "grid")
    if len(grid) < 2:
        raise ConfigError("sweep needs >=2 grid points", key="grid")
    source = _source(args)

    sweep_dir = os.path.join(args.out_dir, args.run_name)
    jobs = [
        RunJob(hp=hp.replace(th_init=th, lr_th=0.0), source=source,
               run_dir=os.path.join(sweep_dir, f"th_{th:g}"), threads=worker_threads())
        for th in grid
    ]
    print(f"\n{BANNER}\nThreshold grid search over {grid} (baseline, seed {hp.seed})\n{BANNER}")

    data = None if args.jobs > 1 else load_data(source, hp, not args.quiet)
    results = run_jobs(jobs, args.jobs, data)

    rows = []
    for th, result in zip(grid, results):
        final = result.final_test
        rows.append({
            "th_init": th,
            "final_accuracy": final.accuracy,
            "best_accuracy": result.best_accuracy,
            "final_dead_pct_layer1": final.dead_pct[0],
            "epochs_to_target": epochs_to_reach(result.history, hp.target_accuracy) or -1,
        })
        print(f"th_init={th:g}: final accuracy {final.accuracy:.4f}, dead% L1 {final.dead_pct[0]:.1f}")

    write_sweep_csv(os.path.join(sweep_dir, "sweep.csv"), rows, hp)
    return 0


def check_fingerprints(metrics_paths):
    """True when every metrics file records the same initial-weight fingerprint."""
    prints = {path: read_header(path).get("init_fingerprint") for path in metrics_paths}
    distinct = set(prints.values())
    if len(distinct) != 1 or None in distinct:
        for path, value in prints.items():
            logger.error(f"init_fingerprint {value} in {path}")
        return False
    return True


def cmd_ablate(args):
    hp = resolve_config(args)
    lr_values = parse_float_list(args.lr_th_list, "lr-th-list")
    if not lr_values:
        raise ConfigError("--lr-th-list is empty")
    source = _source(args)

    ablate_dir = os.path.join(args.out_dir, args.run_name)
    init_path = os.path.join(ablate_dir, "init.rsnn")
    init_net = init_network(parse_architecture(hp.architecture), hp, hp.seed)
    save_checkpoint(init_path, init_net)
    fingerprint = weight_fingerprint(init_net)
    print(f"\n{BANNER}\nAblation over lr_th={lr_values}, initial weights {fingerprint[:16]}...\n{BANNER}")

    jobs = [
        RunJob(hp=hp.replace(lr_th=lr), source=source, run_dir=os.path.join(ablate_dir, f"lr_th_{lr:g}"),
               init_checkpoint=init_path, threads=worker_threads())
        for lr in lr_values
    ]
    data = None if args.jobs > 1 else load_data(source, hp, not args.quiet)
    results = run_jobs(jobs, args.jobs, data)

    paths = [result.metrics_path for result in results]
    if not check_fingerprints(paths):
        raise DataError("ablation runs did not start from identical initial weights")

    write_ablation_csv(os.path.join(ablate_dir, "ablation.csv"), dict(zip(lr_values, paths)), fingerprint)
    for lr, result in zip(lr_values, results):
        final = result.final_test
        print(f"lr_th={lr:g}: final accuracy {final.accuracy:.4f}, dead% L1 {final.dead_pct[0]:.1f}")
    return 0


def cmd_gen_synthetic(args):
    hp = resolve_config(args)
    train_set, test_set = synthetic_datasets(hp)

    for split, split_samples in (("train", train_set), ("test", test_set)):
        for index, (raster, label) in enumerate(split_samples):
            path = os.path.join(args.out_dir, split, str(label), f"sample_{index:05d}{NEUTRAL_SUFFIX}")
            write_neutral(raster_to_stream(raster, label, hp.bin_width), path)

    print(f"Wrote {len(train_set)} train and {len(test_set)} test samples to {args.out_dir}")
    return 0


def _convert_one(item):
    source_path, label, dest_path = item
    return write_neutral(read_nmnist_file(source_path, label), dest_path)


def cmd_convert_nmnist(args):
    if not os.path.isdir(args.nmnist_dir):
        raise DataError(f"NMNIST directory not found: {args.nmnist_dir}")

    work = []
    for split in ("train", "test"):
        for path, label in list_sample_files(args.nmnist_dir, split):
            if not path.endswith(NMNIST_SUFFIX):
                continue
            name = os.path.splitext(os.path.basename(path))[0] + NEUTRAL_SUFFIX
            work.append((path, label, os.path.join(args.out_dir, split, str(label), name)))

    progress = dict(total=len(work), desc="Converting", disable=args.quiet)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for _ in tqdm(pool.map(_convert_one, work, chunksize=64), **progress):
                pass
    else:
        for item in tqdm(work, **progress):
            _convert_one(item)

    counts = count_dataset_files(args.out_dir)
    print(f"Converted {len(work)} files: {counts}")
    return 0


def cmd_inspect(args):
    path = args.path
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")

    if path.endswith(".rsnn"):
        checkpoint = load_checkpoint(path)
        net = checkpoint.net
        print(f"Checkpoint: {path}")
        print(f"Architecture: {net.spec} ({parameter_count(net.spec)} parameters)")
        print(f"Epoch: {checkpoint.epoch}, optimizer state: {'yes' if checkpoint.optimizer_state else 'no'}")
        print(f"Initial weight fingerprint: {weight_fingerprint(net)}")
        for i, layer in enumerate(net.layers, 1):
            th = layer.thresholds
            print(f"  layer {i}: {layer.fan_in} -> {layer.fan_out}, thresholds "
                  f"min {th.min():.4f} mean {th.mean():.4f} max {th.max():.4f}")
        return 0

    stream = read_event_file(path, label=-1)
    print(f"Event file: {path}")
    print(f"Geometry: {stream.width}x{stream.height}x{stream.polarities}, label {stream.label}")
    print(f"Events: {len(stream)}")
    if len(stream):
        print(f"Time span: {stream.t.min()} - {stream.t.max()} us")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-th": cmd_sweep_th,
    "ablate": cmd_ablate,
    "gen-synthetic": cmd_gen_synthetic,
    "convert-nmnist": cmd_convert_nmnist,
    "inspect": cmd_inspect,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None,
                        help="Path to a key = value config file (defaults for every omitted key)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one config key; may be repeated")
    common.add_argument("--out-dir", "-o", type=str, default="../data/runs",
                        help="Directory for all outputs")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    common.add_argument("--quiet", "-q", action="store_true", help="No progress bars")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data-dir", "-d", type=str, default=None,
                      help="Dataset root with train/ and test/ label folders (.revt or NMNIST .bin)")
    data.add_argument("--synthetic", action="store_true",
                      help="Use the built-in synthetic spatiotemporal task")
    data.add_argument("--seed", type=int, default=None, help="Override the config seed")

    runs = argparse.ArgumentParser(add_help=False)
    runs.add_argument("--jobs", "-j", type=int, default=1,
                      help="Grid points trained in parallel processes (default: 1)")

    parser = argparse.ArgumentParser(description="Spiking neural network training with learnable thresholds")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common, data], help="Train a network")
    train.add_argument("--run-name", type=str, default="train", help="Subdirectory of --out-dir for this run")
    train.add_argument("--resume", type=str, default=None, help="Checkpoint with optimizer state to continue from")

    evaluate_cmd = sub.add_parser("eval", parents=[common, data], help="Evaluate a checkpoint on the test split")
    evaluate_cmd.add_argument("--checkpoint", type=str, required=True, help="Checkpoint (.rsnn) to evaluate")

    sweep = sub.add_parser("sweep-th", parents=[common, data, runs], help="Baseline threshold grid search")
    sweep.add_argument("--grid", type=str, default="0.25,0.75,1.25,2.5,5.0",
                       help="Comma separated th_init values")
    sweep.add_argument("--run-name", type=str, default="sweep")

    ablate = sub.add_parser("ablate", parents=[common, data, runs], help="Threshold learning rate ablation")
    ablate.add_argument("--lr-th-list", type=str, default="0,0.0001,0.001",
                        help="Comma separated lr_th values")
    ablate.add_argument("--run-name", type=str, default="ablate")

    sub.add_parser("gen-synthetic", parents=[common], help="Write the synthetic task as neutral event files")

    convert = sub.add_parser("convert-nmnist", parents=[common, runs],
                             help="Convert NMNIST .bin files to the neutral event format")
    convert.add_argument("--nmnist-dir", type=str, required=True,
                         help="NMNIST root with Train/ and Test/ digit folders")

    inspect = sub.add_parser("inspect", parents=[common], help="Summarize a checkpoint or event file")
    inspect.add_argument("path", type=str)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    try:
        return COMMANDS[args.command](args)
    except RouserError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
