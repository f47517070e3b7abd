import os
import glob
import struct
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

import numpy as np
from tqdm import tqdm

from src.errors import DataError

logger = logging.getLogger(__name__)

# NMNIST sensor geometry (ATIS saccade recordings)
NMNIST_WIDTH = 34
NMNIST_HEIGHT = 34
NMNIST_POLARITIES = 2
NMNIST_RECORD_BYTES = 5

NEUTRAL_MAGIC = b"REVT"
NEUTRAL_VERSION = 1
NEUTRAL_SUFFIX = ".revt"
NMNIST_SUFFIX = ".bin"

# magic, version, width, height, polarities, reserved, label, event count
NEUTRAL_HEADER = struct.Struct("<4sHHHBBIQ")
NEUTRAL_EVENT = np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1"), ("t", "<u4")])

Sample = Tuple[np.ndarray, int]


class Event(NamedTuple):
    x: int
    y: int
    polarity: int
    timestamp: int


@dataclass(eq=False)
class EventStream:
    """
    Timestamped polarity events from one recording, with its sensor geometry
    and class label. Events are stored column-wise and kept sorted by timestamp.
    """
    width: int
    height: int
    polarities: int
    label: int
    x: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    t: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        if not (len(self.x) == len(self.y) == len(self.p) == len(self.t)):
            raise DataError("event columns have different lengths")

    def __len__(self):
        return len(self.t)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.label == other.label
            and all(np.array_equal(a, b) for a, b in zip(self.columns, other.columns))
        )

    @property
    def geometry(self) -> Tuple[int, int, int]:
        return (self.width, self.height, self.polarities)

    @property
    def columns(self):
        return (self.x, self.y, self.p, self.t)

    @property
    def num_neurons(self) -> int:
        return self.width * self.height * self.polarities

    @property
    def events(self) -> List[Event]:
        return [Event(int(x), int(y), int(p), int(t)) for x, y, p, t in zip(*self.columns)]

    def validate(self):
        """Raise DataError if any event falls outside the declared geometry."""
        if len(self) == 0:
            return
        if self.t.min() < 0:
            raise DataError("negative timestamp")
        if self.x.min() < 0 or self.x.max() >= self.width:
            raise DataError(f"x out of range for width {self.width}")
        if self.y.min() < 0 or self.y.max() >= self.height:
            raise DataError(f"y out of range for height {self.height}")
        if self.p.min() < 0 or self.p.max() >= self.polarities:
            raise DataError(f"polarity out of range for {self.polarities} polarities")
        if np.any(np.diff(self.t) < 0):
            raise DataError("events are not sorted by timestamp")


def _sorted_stream(width, height, polarities, label, x, y, p, t):
    order = np.argsort(t, kind="stable")
    return EventStream(width, height, polarities, int(label), x[order], y[order], p[order], t[order])


def parse_nmnist(data: bytes, label: int) -> EventStream:
    """
    Decode an NMNIST binary recording.

    Each event is a 40 bit record:
        * byte 0: x address
        * byte 1: y address
        * byte 2 bit 7: polarity (1 = ON)
        * byte 2 bits 6..0 + bytes 3, 4: 23 bit timestamp in microseconds (big endian)

    Args:
        data: Raw file contents
        label: Class index (taken from the directory the file lives in)

    Returns:
        EventStream on the 34x34x2 sensor, sorted by timestamp
    """
    if len(data) % NMNIST_RECORD_BYTES != 0:
        raise DataError("length not divisible by 5")

    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, NMNIST_RECORD_BYTES).astype(np.int64)
    x = records[:, 0]
    y = records[:, 1]
    p = records[:, 2] >> 7
    t = ((records[:, 2] & 0x7F) << 16) | (records[:, 3] << 8) | records[:, 4]

    if len(records) and (x.max() >= NMNIST_WIDTH or y.max() >= NMNIST_HEIGHT):
        raise DataError(f"address out of range: x or y >= {NMNIST_WIDTH}")

    return _sorted_stream(NMNIST_WIDTH, NMNIST_HEIGHT, NMNIST_POLARITIES, label, x, y, p, t)


def read_nmnist_file(path: str, label: int) -> EventStream:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return parse_nmnist(data, label)
    except DataError as e:
        raise DataError(f"{path}: {e}") from e


def encode_nmnist(stream: EventStream) -> bytes:
    """Inverse of parse_nmnist; the stream must live on the NMNIST sensor."""
    if stream.geometry != (NMNIST_WIDTH, NMNIST_HEIGHT, NMNIST_POLARITIES):
        raise DataError(f"not NMNIST geometry: {stream.geometry}")
    if len(stream) and stream.t.max() >= 1 << 23:
        raise DataError("timestamp does not fit in 23 bits")

    out = np.zeros((len(stream), NMNIST_RECORD_BYTES), dtype=np.uint8)
    out[:, 0] = stream.x
    out[:, 1] = stream.y
    out[:, 2] = ((stream.t >> 16) & 0x7F) | (stream.p << 7)
    out[:, 3] = (stream.t >> 8) & 0xFF
    out[:, 4] = stream.t & 0xFF
    return out.tobytes()


def encode_neutral(stream: EventStream) -> bytes:
    """Serialize a stream to the little-endian neutral event format."""
    stream.validate()
    header = NEUTRAL_HEADER.pack(
        NEUTRAL_MAGIC, NEUTRAL_VERSION,
        stream.width, stream.height, stream.polarities, 0,
        stream.label, len(stream),
    )
    body = np.zeros(len(stream), dtype=NEUTRAL_EVENT)
    body["x"] = stream.x
    body["y"] = stream.y
    body["p"] = stream.p
    body["t"] = stream.t
    return header + body.tobytes()


def decode_neutral(data: bytes) -> EventStream:
    """Parse neutral-format bytes back into an EventStream."""
    if len(data) < NEUTRAL_HEADER.size:
        raise DataError("truncated payload: header incomplete")

    magic, version, width, height, polarities, _, label, count = NEUTRAL_HEADER.unpack_from(data, 0)
    if magic != NEUTRAL_MAGIC:
        raise DataError("bad magic")
    if version != NEUTRAL_VERSION:
        raise DataError(f"version mismatch: file has {version}, reader supports {NEUTRAL_VERSION}")

    expected = NEUTRAL_HEADER.size + count * NEUTRAL_EVENT.itemsize
    if len(data) < expected:
        raise DataError(f"truncated payload: expected {expected} bytes, got {len(data)}")

    if count == 0:
        return EventStream(width, height, polarities, label)
    body = np.frombuffer(data, dtype=NEUTRAL_EVENT, count=count, offset=NEUTRAL_HEADER.size)
    stream = EventStream(width, height, polarities, label, body["x"], body["y"], body["p"], body["t"])
    # the file is not trusted: out-of-range addresses would alias onto other raster rows
    stream.validate()
    return stream


def write_neutral(stream: EventStream, path: str) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_neutral(stream))
    return path


def read_neutral(path: str) -> EventStream:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_neutral(data)
    except DataError as e:
        raise DataError(f"{path}: {e}") from e


def rasterize(stream: EventStream, T: int, bin_width: int) -> np.ndarray:
    """
    Bin a stream into a dense binary spike raster.

    Neuron index is polarity*(W*H) + y*W + x. An event at timestamp t lands in
    bin t // bin_width; bins >= T are dropped, and several events in the same
    (neuron, bin) collapse to a single 1.

    Returns:
        uint8 array of shape (num_neurons, T)
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if bin_width < 1:
        raise ValueError(f"bin_width must be >= 1, got {bin_width}")

    raster = np.zeros((stream.num_neurons, T), dtype=np.uint8)
    if len(stream) == 0:
        return raster

    bins = stream.t // bin_width
    keep = bins < T
    neuron = stream.p * (stream.width * stream.height) + stream.y * stream.width + stream.x
    raster[neuron[keep], bins[keep]] = 1
    return raster


def raster_to_stream(raster: np.ndarray, label: int, bin_width: int) -> EventStream:
    """
    Express a (neurons x T) raster as a one-row, one-polarity event stream so it
    can be stored in the neutral format. rasterize() with the same bin width and
    T gives the raster back.
    """
    neuron, bins = np.nonzero(raster)
    t = bins.astype(np.int64) * bin_width
    zeros = np.zeros(len(t), dtype=np.int64)
    return _sorted_stream(raster.shape[0], 1, 1, label, neuron, zeros, zeros, t)


def gen_synthetic(num_classes: int, neurons: int, T: int, jitter: float, seed: int,
                  samples_per_class: int = 50, rate: float = 0.1, active: int = 0) -> List[Sample]:
    """
    Generate a spatiotemporal pattern classification task.

    Each class gets a fixed random template: `active` input neurons (half of them
    by default), each firing at a few class-specific time steps. Samples copy
    their class template, then delete each spike with probability `jitter` and
    shift the survivors by a rounded normal offset with std jitter*T/10 steps
    (clipped to the window).

    Args:
        num_classes: Number of classes (>= 2)
        neurons: Input neurons per sample (>= num_classes)
        T: Time steps per sample
        jitter: Noise level in [0, 1]; 0 reproduces the templates exactly
        seed: RNG seed; the dataset is a pure function of all arguments
        samples_per_class: Samples generated per class
        rate: Template spike rate of an active neuron (at least one spike)
        active: Input neurons per template; 0 picks neurons // 2

    Returns:
        List of (raster, label), class by class
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if neurons < num_classes:
        raise ValueError("need at least as many neurons as classes")
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 <= active <= neurons:
        raise ValueError("active must be between 0 and the number of neurons")

    rng = np.random.default_rng(seed)
    active_count = active or max(1, neurons // 2)
    spikes_per_neuron = min(T, max(1, int(round(rate * T))))

    templates = []
    for _ in range(num_classes):
        template = np.zeros((neurons, T), dtype=np.uint8)
        for n in rng.choice(neurons, size=active_count, replace=False):
            template[n, rng.choice(T, size=spikes_per_neuron, replace=False)] = 1
        templates.append(template)

    samples = []
    timing_std = jitter * T / 10.0
    for label, template in enumerate(templates):
        rows, cols = np.nonzero(template)
        for _ in range(samples_per_class):
            if jitter == 0:
                samples.append((template.copy(), label))
                continue
            keep = rng.random(len(rows)) >= jitter
            shift = np.rint(rng.normal(0.0, timing_std, len(rows))).astype(np.int64)
            moved = np.clip(cols + shift, 0, T - 1)
            sample = np.zeros_like(template)
            sample[rows[keep], moved[keep]] = 1
            samples.append((sample, label))

    return samples


def split_synthetic(samples: List[Sample], train_per_class: int) -> Tuple[List[Sample], List[Sample]]:
    """First `train_per_class` samples of every class go to train, the rest to test."""
    seen = {}
    train, test = [], []
    for raster, label in samples:
        seen[label] = seen.get(label, 0) + 1
        (train if seen[label] <= train_per_class else test).append((raster, label))
    return train, test


def synthetic_datasets(hp) -> Tuple[List[Sample], List[Sample]]:
    """Train/test split of the synthetic task described by `hp`."""
    samples = gen_synthetic(
        hp.synthetic_classes, hp.synthetic_neurons, hp.time_steps, hp.synthetic_jitter, hp.seed,
        samples_per_class=hp.synthetic_train_per_class + hp.synthetic_test_per_class,
        rate=hp.synthetic_rate,
        active=hp.synthetic_active,
    )
    return split_synthetic(samples, hp.synthetic_train_per_class)


def _find_split_dir(root, split):
    for name in (split, split.capitalize(), split.upper()):
        candidate = os.path.join(root, name)
        if os.path.isdir(candidate):
            return candidate
    return None


def list_sample_files(root: str, split: str) -> List[Tuple[str, int]]:
    """
    List (path, label) for every event file under <root>/<split>/<label>/.
    Label directories must be integer names (NMNIST convention: one per digit).
    """
    split_dir = _find_split_dir(root, split)
    if split_dir is None:
        raise DataError(f"no '{split}' directory under {root}")

    files = []
    for label_dir in sorted(os.listdir(split_dir)):
        full = os.path.join(split_dir, label_dir)
        if not os.path.isdir(full):
            continue
        try:
            label = int(label_dir)
        except ValueError:
            logger.warning(f"Skipping non-numeric label directory {full}")
            continue
        if label < 0:
            raise DataError(f"negative class label directory {full}")
        for suffix in (NEUTRAL_SUFFIX, NMNIST_SUFFIX):
            for path in sorted(glob.glob(os.path.join(full, f"*{suffix}"))):
                files.append((path, label))
    return files


def count_dataset_files(root: str):
    """Number of event files per split, e.g. {'train': 60000, 'test': 10000} for NMNIST."""
    counts = {}
    for split in ("train", "test"):
        if _find_split_dir(root, split) is not None:
            counts[split] = len(list_sample_files(root, split))
    return counts


def read_event_file(path: str, label: int) -> EventStream:
    if path.endswith(NEUTRAL_SUFFIX):
        return read_neutral(path)
    return read_nmnist_file(path, label)


def _load_sample(item, T, bin_width):
    # directory name is the label, whatever the file header says
    path, label = item
    try:
        stream = read_event_file(path, label)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return rasterize(stream, T, bin_width), label


def load_dataset_dir(root: str, split: str, hp, workers: int = 1, max_samples: int = 0,
                     show_progress: bool = True) -> List[Sample]:
    """
    Load and rasterize one split of a dataset directory.

    Args:
        root: Dataset root containing train/ and test/
        split: 'train' or 'test'
        hp: Hyperparams (time_steps, bin_width, seed)
        workers: Reader threads
        max_samples: Seeded random subset size (0 keeps everything)
        show_progress: Show a tqdm bar

    Returns:
        List of (raster, label)
    """
    files = list_sample_files(root, split)
    if not files:
        raise DataError(f"no event files found for split '{split}' under {root}")

    if max_samples and max_samples < len(files):
        keep = np.sort(np.random.default_rng(hp.seed).permutation(len(files))[:max_samples])
        files = [files[i] for i in keep]
        logger.info(f"Using a seeded subset of {len(files)} {split} samples")

    def load(item):
        return _load_sample(item, hp.time_steps, hp.bin_width)

    progress = dict(total=len(files), desc=f"Loading {split}", disable=not show_progress)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(tqdm(pool.map(load, files), **progress))
    else:
        samples = [load(item) for item in tqdm(files, **progress)]

    sizes = {raster.shape[0] for raster, _ in samples}
    if len(sizes) != 1:
        raise DataError(f"samples under {root}/{split} have different neuron counts: {sorted(sizes)}")

    logger.info(f"Loaded {len(samples)} {split} samples with {sizes.pop()} input neurons")
    return samples
