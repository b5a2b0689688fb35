import os
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Dict, Iterable, Optional, Tuple

from dotenv import load_dotenv

from dcdnn.errors import ConfigurationError

load_dotenv()


class Config:
    # Default run config file (key = value text)
    CONFIG_PATH = os.getenv("DCDNN_CONFIG")

    # Run ledger
    RUN_DB_PATH = os.getenv("DCDNN_RUN_DB", "./data/runs.db")

    # Runtime
    LOG_LEVEL = os.getenv("DCDNN_LOG_LEVEL", "INFO")
    THREADS = int(os.getenv("DCDNN_THREADS", 1))


config = Config()


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of the pipeline and its default"""

    # Network geometry
    block_sizes: Tuple[int, ...] = (4, 8, 16, 32)
    ref_lines: int = 8
    hidden_dims: Dict[int, int] = field(default_factory=lambda: {4: 128, 8: 256, 16: 256, 32: 512})
    depth: int = 4
    unit_init: bool = False
    value_scale: float = 1.0 / 255.0
    store_dtype: str = "float64"

    # Clustering
    modes: int = 2
    kappa: float = 0.02
    perturb_bias: bool = False
    perturb_slopes: bool = False
    rounds: int = 8
    stop_threshold: float = 0.97
    min_split_gain: Optional[float] = None

    # Optimisation
    pretrain_epochs: int = 40
    pretrain_lr_start: float = 0.1
    pretrain_lr_floor: float = 0.0001
    pretrain_step: int = 10
    recursive_epochs: int = 30
    recursive_lr_start: float = 0.01
    recursive_lr_floor: float = 0.0001
    recursive_step: int = 10
    batch_sizes: Dict[int, int] = field(default_factory=lambda: {4: 128, 8: 128, 16: 64, 32: 64})
    gamma: float = 1e-4
    momentum: float = 0.9

    # Data
    pu_size: int = 8
    tiling: str = "uniform4"
    stride: Optional[int] = None
    filter: bool = True
    causal: bool = True

    # Mode decision
    qp: int = 27
    lambda_override: Optional[float] = None
    flag_bits: float = 1.0
    baseline_mode_bits: float = 6.0

    # Reproducibility
    seed: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.modes < 1 or self.modes & (self.modes - 1):
            raise ConfigurationError(f"modes must be a power of two, got {self.modes}")
        if self.ref_lines < 1 or self.depth < 1:
            raise ConfigurationError("ref_lines and depth must be >= 1")
        for n in self.block_sizes:
            if n not in (4, 8, 16, 32):
                raise ConfigurationError(f"unsupported block size {n}")
            if n not in self.hidden_dims or n not in self.batch_sizes:
                raise ConfigurationError(f"hidden_dims and batch_sizes need an entry for {n}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.kappa < 0:
            raise ConfigurationError(f"kappa must be >= 0, got {self.kappa}")
        if self.store_dtype not in ("float64", "float32"):
            raise ConfigurationError(f"store_dtype must be float64 or float32, got {self.store_dtype}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError(f"seed must lie in [0, 2**64), got {self.seed}")

    def require_block_sizes(self, sizes: Iterable[int], source: str) -> None:
        outside = sorted(set(sizes) - set(self.block_sizes))
        if outside:
            raise ConfigurationError(f"{source} uses block sizes {outside} outside block_sizes {list(self.block_sizes)}")

    def with_overrides(self, pairs: Iterable[str]) -> "RunConfig":
        """Apply CLI `key=value` overrides"""
        updates = {}
        for pair in pairs:
            if "=" not in pair:
                raise ConfigurationError(f"override must look like key=value, got {pair!r}")
            key, value = pair.split("=", 1)
            updates.update(_parse_pair(key.strip(), value.strip()))
        return replace(self, **updates)

    def echo(self) -> Dict:
        """Plain-JSON form written into every manifest"""
        data = asdict(self)
        data["block_sizes"] = list(self.block_sizes)
        data["hidden_dims"] = {str(k): v for k, v in sorted(self.hidden_dims.items())}
        data["batch_sizes"] = {str(k): v for k, v in sorted(self.batch_sizes.items())}
        return data


# ============================================================
# KEY = VALUE FILES
# ============================================================

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_map(text: str) -> Dict[int, int]:
    result = {}
    for item in text.split(","):
        key, value = item.split(":")
        result[int(key)] = int(value)
    return result


def _parse_pair(key: str, value: str) -> Dict:
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown config key: {key}")
    kind = _FIELD_TYPES[key]
    try:
        if kind in (Optional[float], Optional[int]) and value.lower() in ("none", ""):
            parsed = None
        elif kind == Optional[float]:
            parsed = float(value)
        elif kind == Optional[int]:
            parsed = int(value)
        elif kind is bool:
            parsed = _parse_bool(value)
        elif kind is int:
            parsed = int(value)
        elif kind is float:
            parsed = float(value)
        elif kind == Tuple[int, ...]:
            parsed = tuple(int(v) for v in value.split(","))
        elif kind == Dict[int, int]:
            parsed = _parse_int_map(value)
        else:
            parsed = value
    except ValueError as e:
        raise ConfigurationError(f"bad value for {key}: {value!r} ({e})")
    return {key: parsed}


def load_run_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """Read a key = value config file (if any) and apply overrides"""
    path = path or config.CONFIG_PATH
    updates = {}
    if path:
        if not os.path.exists(path):
            raise ConfigurationError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigurationError(f"{path}:{lineno}: expected key = value")
                key, value = line.split("=", 1)
                updates.update(_parse_pair(key.strip(), value.strip()))
    return replace(RunConfig(), **updates).with_overrides(overrides)
