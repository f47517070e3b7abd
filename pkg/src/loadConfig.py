import os
import math
import logging
import dataclasses
from dataclasses import dataclass, fields
from typing import Any, Dict, Iterable, List, Optional

from src.errors import ConfigError

logger = logging.getLogger(__name__)

TRUE_WORDS = {"true", "1", "yes", "on"}
FALSE_WORDS = {"false", "0", "no", "off"}
NONE_WORDS = {"none", "null", ""}

DTYPES = ("float64", "float32")
DEAD_WINDOWS = ("epoch", "batch")


@dataclass(frozen=True)
class Hyperparams:
    """
    Every hyperparameter of a training run.

    The first eight fields are the published defaults (initial threshold,
    surrogate scale and steepness, both learning rates, the two decays and the
    resting potential). The rest control the run itself.
    """
    th_init: float = 1.25
    s: float = 1.5
    tau: float = 3.75
    lr_w: float = 0.001
    lr_th: float = 0.001
    current_decay: float = 0.75
    voltage_decay: float = 0.97
    v_rest: float = 0.0
    true_rate: float = 0.2
    false_rate: float = 0.03
    time_steps: int = 300
    batch_size: int = 32
    epochs: int = 50
    seed: int = 7
    th_clamp_min: Optional[float] = None

    # run control
    bin_width: int = 1000
    architecture: str = "34x34x2-500-500-10"
    dtype: str = "float64"
    dead_window: str = "epoch"
    patience: int = 0
    time_budget: float = 0.0
    target_accuracy: float = 0.95
    save_optimizer_state: bool = False
    record_wall_time: bool = False
    max_train_samples: int = 0
    max_test_samples: int = 0

    # synthetic task
    synthetic_classes: int = 2
    synthetic_neurons: int = 20
    synthetic_train_per_class: int = 40
    synthetic_test_per_class: int = 20
    synthetic_jitter: float = 0.1
    # input neurons in each class template; 0 means half of synthetic_neurons
    synthetic_active: int = 0
    synthetic_rate: float = 0.1

    @property
    def baseline(self) -> bool:
        """True when thresholds are frozen (lr_th == 0)."""
        return self.lr_th == 0

    def replace(self, **changes) -> "Hyperparams":
        """Return a validated copy with some fields changed."""
        return validate(dataclasses.replace(self, **changes))


FIELD_TYPES = {f.name: f.type for f in fields(Hyperparams)}


def parse_value(key: str, raw: str) -> Any:
    """
    Coerce a raw config string into the declared type of `key`.

    Args:
        key: Hyperparams field name
        raw: Text to the right of `=`

    Returns:
        The coerced value
    """
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key '{key}'", key=key)

    declared = FIELD_TYPES[key]
    text = raw.strip()

    try:
        if declared is bool:
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if declared is int:
            number = float(text)
            if not number.is_integer():
                raise ValueError(f"not an integer: {text!r}")
            return int(number)
        if declared is float:
            return float(text)
        if declared == Optional[float]:
            if text.lower() in NONE_WORDS:
                return None
            return float(text)
        return text
    except ValueError as e:
        raise ConfigError(f"invalid value for '{key}': {e}", key=key) from e


def _fail(key, message):
    raise ConfigError(f"{key}: {message}", key=key)


def validate(hp: Hyperparams) -> Hyperparams:
    """
    Check every invariant of a Hyperparams value.

    Raises:
        ConfigError naming the first offending key
    """
    for f in fields(hp):
        value = getattr(hp, f.name)
        if isinstance(value, float) and not math.isfinite(value):
            _fail(f.name, "must be finite")

    if not 0 <= hp.current_decay < 1:
        _fail("current_decay", f"must satisfy 0 <= current_decay < 1, got {hp.current_decay}")
    if not 0 <= hp.voltage_decay < 1:
        _fail("voltage_decay", f"must satisfy 0 <= voltage_decay < 1, got {hp.voltage_decay}")
    if hp.tau <= 0:
        _fail("tau", f"must be > 0, got {hp.tau}")
    if hp.s <= 0:
        _fail("s", f"must be > 0, got {hp.s}")
    if hp.th_init <= hp.v_rest:
        _fail("th_init", f"must exceed v_rest ({hp.v_rest}), got {hp.th_init}")
    if hp.true_rate > 1:
        _fail("true_rate", f"must be <= 1, got {hp.true_rate}")
    if not 0 <= hp.false_rate < hp.true_rate:
        _fail("false_rate", f"need 0 <= false_rate < true_rate, got {hp.false_rate} vs {hp.true_rate}")
    if hp.lr_w < 0:
        _fail("lr_w", "must be >= 0")
    if hp.lr_th < 0:
        _fail("lr_th", "must be >= 0")

    for key in ("time_steps", "batch_size", "epochs", "bin_width"):
        if getattr(hp, key) < 1:
            _fail(key, "must be a positive integer")
    for key in ("seed", "patience", "max_train_samples", "max_test_samples"):
        if getattr(hp, key) < 0:
            _fail(key, "must be >= 0")
    if hp.time_budget < 0:
        _fail("time_budget", "must be >= 0")
    if not 0 < hp.target_accuracy <= 1:
        _fail("target_accuracy", "must be in (0, 1]")
    if hp.dtype not in DTYPES:
        _fail("dtype", f"must be one of {DTYPES}")
    if hp.dead_window not in DEAD_WINDOWS:
        _fail("dead_window", f"must be one of {DEAD_WINDOWS}")

    if hp.synthetic_classes < 2:
        _fail("synthetic_classes", "need at least 2 classes")
    if hp.synthetic_neurons < hp.synthetic_classes:
        _fail("synthetic_neurons", "need at least as many neurons as classes")
    if hp.synthetic_train_per_class < 1 or hp.synthetic_test_per_class < 1:
        _fail("synthetic_train_per_class", "per-class sample counts must be positive")
    if not 0 <= hp.synthetic_jitter <= 1:
        _fail("synthetic_jitter", "must be in [0, 1]")
    if not 0 <= hp.synthetic_active <= hp.synthetic_neurons:
        _fail("synthetic_active", f"must be in [0, synthetic_neurons], got {hp.synthetic_active}")
    if not 0 < hp.synthetic_rate <= 1:
        _fail("synthetic_rate", "must be in (0, 1]")

    # Deferred: snnNetwork imports this module for Hyperparams
    from src.snnNetwork import parse_architecture
    try:
        parse_architecture(hp.architecture)
    except ValueError as e:
        _fail("architecture", str(e))

    return hp


def parse_config_text(text: str, source: str = "<string>") -> Dict[str, Any]:
    """
    Parse the flat `key = value` grammar into a dict of coerced values.

    Blank lines and anything after `#` are ignored. A key appearing twice keeps
    its last value.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"{source}:{lineno}: malformed line (expected 'key = value'): {line.strip()!r}")
        key, raw = content.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key before '='")
        values[key] = parse_value(key, raw)
    return values


def load_config(path: Optional[str] = None) -> Hyperparams:
    """
    Load hyperparameters from a config file, defaulting every omitted key.

    Args:
        path: Path to a UTF-8 `key = value` file, or None for pure defaults

    Returns:
        A validated Hyperparams
    """
    if path is None:
        return validate(Hyperparams())

    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        text = f.read()

    values = parse_config_text(text, source=path)
    logger.info(f"Loaded {len(values)} config keys from {path}")
    return validate(Hyperparams(**values))


def load_config_text(text: str) -> Hyperparams:
    """Same as load_config, for config text already in memory (checkpoints)."""
    return validate(Hyperparams(**parse_config_text(text)))


def apply_overrides(hp: Hyperparams, overrides: Iterable[str]) -> Hyperparams:
    """
    Apply `key=value` overrides (the CLI's `--set` flags) on top of `hp`.
    """
    changes = {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        changes[key] = parse_value(key, raw)
    if changes:
        logger.debug(f"Applying overrides: {changes}")
    return validate(dataclasses.replace(hp, **changes))


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_lines(hp: Hyperparams) -> List[str]:
    """Every field as a `key = value` line, in declaration order."""
    return [f"{f.name} = {_format_value(getattr(hp, f.name))}" for f in fields(hp)]


def dump_config(hp: Hyperparams) -> str:
    """Serialize to the config grammar. load_config_text(dump_config(hp)) == hp."""
    return "\n".join(config_lines(hp)) + "\n"
