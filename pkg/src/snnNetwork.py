import os
import re
import struct
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.errors import DataError, ShapeError
from src.lifNeuron import LayerParams, LayerTrace, layer_forward
from src.loadConfig import Hyperparams, dump_config, load_config_text

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RSNN"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct("<4sHI")
LAYER_HEADER = struct.Struct("<II")
OPTIMIZER_HEADER = struct.Struct("<QI")

LAYER_PATTERN = re.compile(r"^\d+(x\d+)*$")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths from input to output, e.g. (2312, 500, 500, 10)."""
    layer_sizes: Tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs an input size and at least one layer")
        if any(size < 1 for size in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(fan_out, fan_in) of every layer."""
        return [(self.layer_sizes[i + 1], self.layer_sizes[i]) for i in range(self.num_layers)]

    def __str__(self):
        return "-".join(str(size) for size in self.layer_sizes)


def parse_architecture(text: str) -> NetworkSpec:
    """
    Parse an architecture string such as '34x34x2-500-500-10'.

    '-' separates layers and 'x' multiplies the dimensions of one layer, so the
    input above has 34*34*2 = 2312 neurons.
    """
    parts = [part.strip() for part in str(text).strip().split("-")]
    sizes = []
    for part in parts:
        if not LAYER_PATTERN.match(part):
            raise ValueError(f"bad layer '{part}' in architecture '{text}'")
        size = 1
        for dim in part.split("x"):
            size *= int(dim)
        sizes.append(size)
    return NetworkSpec(tuple(sizes))


def parameter_count(spec: NetworkSpec) -> int:
    """Weights plus one threshold per neuron, over all layers."""
    return sum(fan_out * fan_in + fan_out for fan_out, fan_in in spec.layer_shapes())


@dataclass
class Network:
    layers: List[LayerParams]
    spec: NetworkSpec
    hp: Hyperparams

    def __post_init__(self):
        shapes = [layer.weights.shape for layer in self.layers]
        if shapes != self.spec.layer_shapes():
            raise ShapeError(f"layer shapes {shapes} do not match spec {self.spec}")

    @property
    def num_inputs(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def num_outputs(self) -> int:
        return self.spec.layer_sizes[-1]


def init_network(spec: NetworkSpec, hp: Hyperparams, seed: int) -> Network:
    """
    Kaiming-normal weights (std sqrt(2 / fan_in)) and every threshold at th_init.

    Args:
        spec: Layer sizes
        hp: Hyperparams (th_init, dtype)
        seed: RNG seed; the same seed always gives the same network

    Returns:
        A freshly initialized Network
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(hp.dtype)
    layers = []
    for fan_out, fan_in in spec.layer_shapes():
        weights = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)).astype(dtype)
        thresholds = np.full(fan_out, hp.th_init, dtype=dtype)
        layers.append(LayerParams(weights, thresholds))

    logger.debug(f"Initialized {spec} with seed {seed} ({parameter_count(spec)} parameters)")
    return Network(layers=layers, spec=spec, hp=hp)


def copy_network(net: Network) -> Network:
    return Network(layers=[layer.copy() for layer in net.layers], spec=net.spec, hp=net.hp)


def forward(net: Network, spikes_in: np.ndarray) -> List[LayerTrace]:
    """
    Feed a (num_inputs x T) raster through every layer.

    Returns:
        One LayerTrace per layer; layer l consumes the spikes of layer l-1
    """
    spikes_in = np.asarray(spikes_in)
    if spikes_in.ndim != 2 or spikes_in.shape[0] != net.num_inputs:
        raise ShapeError(f"input shape {spikes_in.shape} does not match {net.num_inputs} inputs")

    traces = []
    spikes = spikes_in
    for layer in net.layers:
        trace = layer_forward(layer, spikes, net.hp)
        traces.append(trace)
        spikes = trace.S
    return traces


def predict_from_trace(output: LayerTrace) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties
    return int(np.argmax(output.spike_counts()))


def predict(net: Network, spikes_in: np.ndarray) -> int:
    """Class with the most output spikes; ties go to the lowest index."""
    return predict_from_trace(forward(net, spikes_in)[-1])


def weight_fingerprint(net: Network) -> str:
    """SHA-256 of all weights as little-endian float64, layer by layer."""
    digest = hashlib.sha256()
    for layer in net.layers:
        digest.update(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
    return digest.hexdigest()


@dataclass
class Checkpoint:
    net: Network
    optimizer_state: Optional[Dict] = None
    epoch: int = 0


def encode_checkpoint(net: Network, optimizer_state: Optional[Dict] = None, epoch: int = 0) -> bytes:
    """
    Serialize a network to the RSNN container.

    Layout (little endian): magic, u16 version, u32 layer count; per layer u32
    fan_in, u32 fan_out, f64 weights row-major, f64 thresholds; u32 length plus
    the hyperparameters in config grammar; u8 optimizer flag, and when set u64
    Adam step, u32 epoch and the per-layer moments (m_w, v_w, m_th, v_th).
    """
    chunks = [CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(net.layers))]
    for layer in net.layers:
        chunks.append(LAYER_HEADER.pack(layer.fan_in, layer.fan_out))
        chunks.append(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(layer.thresholds, dtype="<f8").tobytes())

    config = dump_config(net.hp).encode("utf-8")
    chunks.append(struct.pack("<I", len(config)))
    chunks.append(config)

    if optimizer_state is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<B", 1))
        chunks.append(OPTIMIZER_HEADER.pack(optimizer_state["step"], epoch))
        for i in range(len(net.layers)):
            for key in ("m_w", "v_w", "m_th", "v_th"):
                chunks.append(np.ascontiguousarray(optimizer_state[key][i], dtype="<f8").tobytes())

    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, fmt: struct.Struct):
        if self.offset + fmt.size > len(self.data):
            raise DataError("truncated checkpoint")
        values = fmt.unpack_from(self.data, self.offset)
        self.offset += fmt.size
        return values

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        end = self.offset + 8 * count
        if end > len(self.data):
            raise DataError("truncated checkpoint")
        values = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.offset).reshape(shape)
        self.offset = end
        return values.astype(np.float64)

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise DataError("truncated checkpoint")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk


def decode_checkpoint(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    magic, version, layer_count = reader.unpack(CHECKPOINT_HEADER)
    if magic != CHECKPOINT_MAGIC:
        raise DataError("bad magic: not an RSNN checkpoint")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    if layer_count == 0:
        raise DataError("checkpoint has no layers")

    raw_layers = []
    for _ in range(layer_count):
        fan_in, fan_out = reader.unpack(LAYER_HEADER)
        weights = reader.array((fan_out, fan_in))
        thresholds = reader.array((fan_out,))
        raw_layers.append((weights, thresholds))

    (config_len,) = reader.unpack(struct.Struct("<I"))
    hp = load_config_text(reader.raw(config_len).decode("utf-8"))

    dtype = np.dtype(hp.dtype)
    layers = [LayerParams(w.astype(dtype), th.astype(dtype)) for w, th in raw_layers]
    for below, above in zip(layers, layers[1:]):
        if above.fan_in != below.fan_out:
            raise DataError(f"layer fan_in {above.fan_in} does not follow fan_out {below.fan_out}")
    sizes = [layers[0].fan_in] + [layer.fan_out for layer in layers]
    net = Network(layers=layers, spec=NetworkSpec(tuple(sizes)), hp=hp)

    optimizer_state = None
    epoch = 0
    (has_optimizer,) = reader.unpack(struct.Struct("<B"))
    if has_optimizer:
        step, epoch = reader.unpack(OPTIMIZER_HEADER)
        optimizer_state = {"step": step, "m_w": [], "v_w": [], "m_th": [], "v_th": []}
        for layer in layers:
            optimizer_state["m_w"].append(reader.array(layer.weights.shape))
            optimizer_state["v_w"].append(reader.array(layer.weights.shape))
            optimizer_state["m_th"].append(reader.array(layer.thresholds.shape))
            optimizer_state["v_th"].append(reader.array(layer.thresholds.shape))

    return Checkpoint(net=net, optimizer_state=optimizer_state, epoch=epoch)


def save_checkpoint(path: str, net: Network, optimizer_state: Optional[Dict] = None, epoch: int = 0) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_checkpoint(net, optimizer_state, epoch))
    logger.info(f"Saved checkpoint to {path}")
    return path


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode_checkpoint(data)
    except DataError as e:
        raise DataError(f"{path}: {e}") from e
