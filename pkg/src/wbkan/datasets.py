"""Datasets: the closed-form DAB generator, CSV ingestion, min-max scaling, splits.

The DAB converter under single phase shift control obeys

    V_out = C / (D (1 - D)),   C = 2 L P f / (n V_in),

which is singular at D = 0 and D = 1.
"""
import csv
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, EmptyDataError, MissingColumnError


class DegenerateColumnWarning(UserWarning):
    """A constant column was scaled to 0.5 instead of [0, 1]."""


@dataclass(frozen=True)
class DabParams:
    """Circuit constants. Units: H, W, Hz, dimensionless, V."""
    L: float = 60e-6
    P: float = 100.0 / 3.0
    f: float = 50e3
    n: float = 1.0
    V_in: float = 100.0

    def __post_init__(self):
        for name in ("L", "P", "f", "n", "V_in"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"DAB parameter {name} must be positive, got {v}")

    @property
    def C(self):
        return 2.0 * self.L * self.P * self.f / (self.n * self.V_in)

    @classmethod
    def with_constant(cls, C, **kw):
        """Parameters whose lumped constant equals ``C`` (solved for P)."""
        base = cls(**kw)
        if not C > 0:
            raise ConfigError("C must be positive")
        return replace(base, P=C * base.n * base.V_in / (2.0 * base.L * base.f))

    def v_out(self, D):
        D = np.asarray(D, dtype=np.float64)
        return self.C / (D * (1.0 - D))


@dataclass
class NormParams:
    """Per-column min/max, in column order (features first, then target)."""
    columns: list
    mins: np.ndarray
    maxs: np.ndarray
    degenerate: list = field(default_factory=list)

    def to_dict(self):
        return {"columns": list(self.columns), "min": [float(v) for v in self.mins],
                "max": [float(v) for v in self.maxs], "degenerate": list(self.degenerate)}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["columns"]), np.asarray(d["min"], dtype=np.float64),
                   np.asarray(d["max"], dtype=np.float64), list(d.get("degenerate", [])))


@dataclass
class Dataset:
    feature_names: list
    X: np.ndarray  # (N, d)
    target_name: Optional[str]
    y: Optional[np.ndarray]  # (N,) or None for unlabelled data
    units: dict = field(default_factory=dict)
    train_idx: Optional[np.ndarray] = None
    test_idx: Optional[np.ndarray] = None
    seed: Optional[int] = None
    dropped: int = 0
    norm: Optional[NormParams] = None
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.feature_names):
            raise DataError("feature matrix does not match the feature names")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
            if len(self.y) != len(self.X):
                raise DataError("feature and target columns differ in length")

    def __len__(self):
        return len(self.X)

    @property
    def columns(self):
        names = list(self.feature_names)
        return names + [self.target_name] if self.y is not None else names

    def matrix(self):
        """All columns stacked, features first."""
        return self.X if self.y is None else np.column_stack([self.X, self.y])

    def _part(self, idx):
        if idx is None:
            raise DataError("dataset has not been split")
        return self.X[idx], (None if self.y is None else self.y[idx])

    def train(self):
        return self._part(self.train_idx)

    def test(self):
        return self._part(self.test_idx)

    def column(self, name):
        if name == self.target_name and self.y is not None:
            return self.y
        try:
            return self.X[:, self.feature_names.index(name)]
        except ValueError:
            raise MissingColumnError(name) from None

    def metadata(self):
        return {
            "features": list(self.feature_names),
            "target": self.target_name,
            "units": dict(self.units),
            "rows": len(self),
            "dropped_rows": int(self.dropped),
            "split_seed": self.seed,
            "train_rows": None if self.train_idx is None else int(len(self.train_idx)),
            "normalization": None if self.norm is None else self.norm.to_dict(),
            "source": self.source,
        }


# --------------------------------------------------------------------------
# generation

def _sample_intervals(rng, intervals, count):
    """Uniform samples on a union of disjoint [lo, hi) intervals."""
    lengths = np.array([hi - lo for lo, hi in intervals])
    u = rng.uniform(0.0, lengths.sum(), count)
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    which = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, len(intervals) - 1)
    los = np.array([lo for lo, _ in intervals])
    return los[which] + (u - edges[which])


TRAIN_D_RANGE = (0.3, 0.7)


def generate_dab(params=None, count=50000, d_lo=0.3, d_hi=0.7, seed=0, exclude=None):
    """Sample D uniformly on [d_lo, d_hi] and compute V_out in closed form.

    ``exclude=(a, b)`` removes the open interval (a, b) from the sampling
    range, e.g. ``d_lo=0.2, d_hi=0.8, exclude=(0.3, 0.7)`` gives samples on
    (0.2, 0.3] U [0.7, 0.8) for extrapolation tests.
    """
    params = params or DabParams()
    if not (0.0 < d_lo < d_hi < 1.0):
        raise ConfigError(f"need 0 < d_lo < d_hi < 1, got [{d_lo}, {d_hi}]")
    if count < 1:
        raise ConfigError("count must be positive")
    rng = np.random.default_rng(seed)
    if exclude is None:
        D = rng.uniform(d_lo, d_hi, count)
    else:
        a, b = exclude
        if not (d_lo <= a < b <= d_hi):
            raise ConfigError("excluded interval must lie inside [d_lo, d_hi]")
        D = _sample_intervals(rng, [(d_lo, a), (b, d_hi)], count)
        D = np.where(D < a, d_lo + a - D, D)  # reflect [d_lo, a) onto (d_lo, a]
    return Dataset(["D"], D[:, None], "V_out", params.v_out(D),
                   units={"D": "1", "V_out": "V"}, seed=seed,
                   source={"generator": "dab", "C": params.C, "L": params.L, "P": params.P,
                           "f": params.f, "n": params.n, "V_in": params.V_in,
                           "d_range": [d_lo, d_hi],
                           "exclude": None if exclude is None else list(exclude)})


# --------------------------------------------------------------------------
# CSV

def _parse(cell):
    try:
        v = float(cell)
    except (TypeError, ValueError):
        return None
    return v if math.isfinite(v) else None


def load_csv(path, features=None, target=None):
    """Read the named numeric columns from a headed, comma-separated file.

    Rows with a missing, non-numeric or non-finite entry in any requested
    column are dropped; the count is kept in ``Dataset.dropped``. Values are
    stored as written, so sign conventions (e.g. negative discharge current)
    pass through untouched. ``features=None`` takes every column except the
    target.
    """
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataError(f"{path}: file is empty (no header row)")
        header = [h.strip() for h in header]
        features = list(features) if features is not None else [h for h in header if h != target]
        wanted = features + ([target] if target is not None else [])
        for name in wanted:
            if name not in header:
                raise MissingColumnError(name)
        cols = [header.index(name) for name in wanted]
        rows, dropped = [], 0
        for raw in reader:
            if not raw or all(not c.strip() for c in raw):
                continue
            vals = [_parse(raw[c]) if c < len(raw) else None for c in cols]
            if any(v is None for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    if not rows:
        raise EmptyDataError(f"{path}: no usable rows ({dropped} dropped)")
    data = np.array(rows, dtype=np.float64)
    d = len(features)
    return Dataset(features, data[:, :d], target, data[:, d] if target is not None else None,
                   dropped=dropped, source={"csv": str(path)})


def write_csv(dataset, path):
    """Write all columns with a header; floats use round-trip repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.columns)
        for row in dataset.matrix():
            w.writerow([repr(float(v)) for v in row])


def write_sidecar(dataset, path):
    with open(path, "w") as fh:
        json.dump(dataset.metadata(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# scaling and splitting

def minmax_normalize(dataset):
    """Map every column onto [0, 1]. Returns (scaled dataset, NormParams).

    Constant columns become 0.5 and raise a ``DegenerateColumnWarning``.
    """
    M = dataset.matrix()
    mins, maxs = M.min(axis=0), M.max(axis=0)
    span = maxs - mins
    flat = span == 0
    scaled = np.where(flat, 0.5, (M - mins) / np.where(flat, 1.0, span))
    names = dataset.columns
    degenerate = [names[c] for c in np.nonzero(flat)[0]]
    if degenerate:
        warnings.warn(f"constant columns scaled to 0.5: {degenerate}", DegenerateColumnWarning,
                      stacklevel=2)
    params = NormParams(names, mins, maxs, degenerate)
    d = len(dataset.feature_names)
    out = replace(dataset, X=scaled[:, :d], y=scaled[:, d] if dataset.y is not None else None,
                  norm=params)
    return out, params


def denormalize(params, values, column=None):
    """Invert ``minmax_normalize``; ``column`` picks one column's parameters."""
    values = np.asarray(values, dtype=np.float64)
    if column is None:
        lo, hi = params.mins, params.maxs
    else:
        c = params.columns.index(column)
        lo, hi = params.mins[c], params.maxs[c]
    span = hi - lo
    return np.where(span == 0, lo, lo + values * span)


def split(dataset, train_fraction=0.8, seed=0):
    """Random disjoint train/test assignment; train gets floor(fraction * N) rows."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    if n < 2:
        raise EmptyDataError("splitting needs at least two samples")
    n_train = int(math.floor(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"fraction {train_fraction} leaves one side of a {n}-row split empty")
    order = np.random.default_rng(seed).permutation(n)
    return replace(dataset, train_idx=np.sort(order[:n_train]),
                   test_idx=np.sort(order[n_train:]), seed=seed)


PV_DRIVERS = ("radiation", "temperature", "windspeed")


def pv_power(radiation, temperature, windspeed):
    """Additive synthetic photovoltaic law on unit-scaled drivers.

    Power rises with radiation (dominant), falls with temperature, and rises
    then falls with wind speed.
    """
    return 0.2 + 0.7 * radiation - 0.2 * temperature + 0.1 * np.sin(np.pi * windspeed)


def generate_pv(count=2000, seed=0, noise_columns=3, noise_std=0.005):
    """PV-style surrogate: three drivers, independent noise columns, power target.

    Drivers and noise columns are uniform on [0, 1]; power follows
    ``pv_power`` plus Gaussian measurement noise of ``noise_std``.
    """
    if count < 2:
        raise ConfigError("count must be at least 2")
    rng = np.random.default_rng(seed)
    drivers = rng.uniform(0.0, 1.0, (count, len(PV_DRIVERS)))
    noise = rng.uniform(0.0, 1.0, (count, noise_columns))
    power = pv_power(*drivers.T) + rng.normal(0.0, noise_std, count)
    names = list(PV_DRIVERS) + [f"noise_{i + 1}" for i in range(noise_columns)]
    return Dataset(names, np.column_stack([drivers, noise]), "power", power, seed=seed,
                   source={"generator": "pv", "noise_columns": noise_columns,
                           "noise_std": noise_std})
