"""Pipeline configuration: one JSON document, validated before any work.

Unknown keys and out-of-range values raise ``ConfigError`` at load time.
Command-line flags are applied on top of the file (flags win).
"""
import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .errors import ConfigError
from .library import BASIS_NAMES
from .spline import SplineGrid
from .training import TrainConfig


def _reject_unknown(d, cls, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


@dataclass
class DataSpec:
    """Where samples come from and how they are split."""
    csv: Optional[str] = None
    generator: Optional[str] = None  # "dab" or "pv" when csv is None
    features: Optional[list] = None  # None: every column except the target
    target: Optional[str] = None
    count: int = 50000
    C: float = 2.0
    d_range: list = field(default_factory=lambda: [0.3, 0.7])
    exclude: Optional[list] = None
    data_seed: int = 0
    train_fraction: float = 0.8
    split_seed: int = 0

    def __post_init__(self):
        if (self.csv is None) == (self.generator is None):
            raise ConfigError("data: give exactly one of 'csv' or 'generator'")
        if self.generator not in (None, "dab", "pv"):
            raise ConfigError(f"data: unknown generator {self.generator!r}")
        if self.csv is not None and not self.target:
            raise ConfigError("data: CSV sources need a 'target' column")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("data: train_fraction must lie in (0, 1)")
        if self.count < 2:
            raise ConfigError("data: count must be at least 2")
        if len(self.d_range) != 2:
            raise ConfigError("data: d_range needs two numbers")
        if self.exclude is not None and len(self.exclude) != 2:
            raise ConfigError("data: exclude needs two numbers")

    @classmethod
    def from_dict(cls, d):
        _reject_unknown(d, cls, "data")
        return cls(**d)


@dataclass
class RefineSpec:
    max_steps: int = 3000
    learning_rate: float = 1e-2

    def __post_init__(self):
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigError("refine: max_steps must be a positive integer")
        if not self.learning_rate > 0:
            raise ConfigError("refine: learning_rate must be positive")

    @classmethod
    def from_dict(cls, d):
        _reject_unknown(d, cls, "refine")
        return cls(**d)


def parse_edge(text):
    """``"l/i/j"`` -> (layer, in_node, out_node)."""
    try:
        parts = tuple(int(p) for p in text.split("/"))
    except ValueError:
        parts = ()
    if len(parts) != 3 or min(parts) < 0:
        raise ConfigError(f"edge must look like layer/in/out, got {text!r}")
    return parts


def parse_override(text):
    """``"edge=l/i/j:basis"`` (the ``edge=`` prefix is optional)."""
    body = text[5:] if text.startswith("edge=") else text
    coord, sep, name = body.partition(":")
    if not sep or not name:
        raise ConfigError(f"override must look like edge=l/i/j:basis, got {text!r}")
    if name not in BASIS_NAMES:
        raise ConfigError(f"override names unknown basis {name!r}")
    return parse_edge(coord), name


@dataclass
class PipelineConfig:
    data: Optional[DataSpec] = None
    shape: list = field(default_factory=lambda: [1, 3, 1])
    grid: dict = field(default_factory=lambda: {"G": 5, "k": 3})
    train: TrainConfig = field(default_factory=TrainConfig)
    refine: RefineSpec = field(default_factory=RefineSpec)
    overrides: dict = field(default_factory=dict)  # "l/i/j" -> basis
    noise: float = 0.0
    noise_seed: int = 0
    holdout: Optional[DataSpec] = None  # extra evaluation set, e.g. extrapolation range
    with_mlp: bool = False
    mlp_shape: Optional[list] = None
    precision: int = 2
    out: Optional[str] = None

    def __post_init__(self):
        if len(self.shape) < 2 or any(int(n) != n or n < 1 for n in self.shape):
            raise ConfigError(f"shape must be >= 2 positive integers, got {self.shape}")
        unknown = sorted(set(self.grid) - {"G", "k", "domain"})
        if unknown:
            raise ConfigError(f"grid: unknown keys {unknown}")
        self.spline_grid()  # validates G, k, domain
        for key, name in self.overrides.items():
            parse_edge(key)
            if name not in BASIS_NAMES:
                raise ConfigError(f"override names unknown basis {name!r}")
        if not 0.0 <= self.noise < 1.0:
            raise ConfigError("noise must lie in [0, 1)")
        if int(self.precision) != self.precision or self.precision < 0:
            raise ConfigError("precision must be a non-negative integer")

    def spline_grid(self):
        lo, hi = self.grid.get("domain", [-1.0, 1.0])
        return SplineGrid(lo, hi, self.grid.get("G", 5), self.grid.get("k", 3))

    def override_map(self):
        return {parse_edge(k): v for k, v in self.overrides.items()}

    @classmethod
    def from_dict(cls, d):
        _reject_unknown(d, cls, "config")
        d = dict(d)
        for key in ("data", "holdout"):
            if d.get(key) is not None:
                d[key] = DataSpec.from_dict(d[key])
        if "train" in d:
            if not isinstance(d["train"], dict):
                raise ConfigError("train: expected an object")
            d["train"] = TrainConfig.from_dict(d["train"])
        if "refine" in d:
            d["refine"] = RefineSpec.from_dict(d["refine"])
        return cls(**d)

    def to_dict(self):
        return asdict(self)


def load_config(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return PipelineConfig.from_dict(doc)
