"""Metrics, correlations, Morris screening, noise injection and the MLP baseline."""
import csv
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError, EmptyDataError, NumericalError, UndefinedCorrelationError
from .network import dsilu, silu
from .training import Adam


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.shape != yhat.shape:
        raise DataError(f"length mismatch: {y.size} targets vs {yhat.size} predictions")
    if y.size == 0:
        raise EmptyDataError("metrics need at least one sample")
    return y, yhat


def rmse(y, yhat):
    y, yhat = _pair(y, yhat)
    err = np.abs(y - yhat)
    top = float(err.max())
    if top == 0.0 or not np.isfinite(top):
        return top
    # scaling by the largest error keeps tiny residuals from underflowing when squared
    return top * float(np.sqrt(np.mean((err / top) ** 2)))


def energy_error(y, yhat):
    """Mean absolute deviation (the "energy error" of the DAB experiments)."""
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


@dataclass
class MetricReport:
    rmse: float
    ee: float
    tag: str
    count: int

    def __post_init__(self):
        if self.rmse < 0 or self.ee < 0:
            raise NumericalError("metrics must be non-negative")
        # power-mean inequality; slack covers rounding in the two reductions
        if self.rmse < self.ee * (1.0 - 1e-12):
            raise NumericalError(f"rmse {self.rmse} < ee {self.ee}")


def evaluate(y, yhat, tag=""):
    y, yhat = _pair(y, yhat)
    return MetricReport(rmse(y, yhat), energy_error(y, yhat), tag, int(y.size))


def write_metrics_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "tag", "count", "rmse", "ee"])
        for model, r in reports:
            w.writerow([model, r.tag, r.count, repr(r.rmse), repr(r.ee)])


# --------------------------------------------------------------------------
# correlations

def _corr_pair(x, y):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DataError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise EmptyDataError("correlation needs at least two samples")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    return x, y


def pearson(x, y):
    x, y = _corr_pair(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    r = float(xc @ yc / math.sqrt(float(xc @ xc) * float(yc @ yc)))
    return max(-1.0, min(1.0, r))


def spearman(x, y):
    """Pearson correlation of average ranks."""
    x, y = _corr_pair(x, y)
    return pearson(stats.rankdata(x), stats.rankdata(y))


def kendall(x, y):
    """Kendall tau-b (tie-corrected)."""
    x, y = _corr_pair(x, y)
    return float(stats.kendalltau(x, y, variant="b").statistic)


@dataclass
class CorrelationRow:
    variable: str
    pearson: Optional[float]
    spearman: Optional[float]
    kendall: Optional[float]


def correlation_table(X, y, names):
    """One row per feature; a constant feature gets ``None`` entries."""
    X = np.asarray(X, dtype=np.float64)
    rows = []
    for c, name in enumerate(names):
        try:
            vals = [f(X[:, c], y) for f in (pearson, spearman, kendall)]
        except UndefinedCorrelationError:
            vals = [None, None, None]
        rows.append(CorrelationRow(name, *vals))
    return rows


def write_correlations_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variable", "pearson", "spearman", "kendall"])
        for r in rows:
            w.writerow([r.variable] + ["undefined" if v is None else repr(v)
                                       for v in (r.pearson, r.spearman, r.kendall)])


# --------------------------------------------------------------------------
# Morris elementary effects

@dataclass
class SensitivityReport:
    names: list
    mu_star: list  # mean |elementary effect| per variable
    mu: list
    sigma: list
    r: int
    delta: float
    levels: int

    def to_dict(self):
        return asdict(self)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "mu_star", "mu", "sigma"])
            for row in zip(self.names, self.mu_star, self.mu, self.sigma):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def morris_trajectory(rng, k, p, delta):
    """One one-at-a-time path on the p-level unit grid.

    Returns (points (k+1, k), order of varied coordinates, signed steps).
    """
    levels = np.arange(p) / (p - 1)
    sign = rng.choice([-1.0, 1.0], size=k)
    x = np.empty(k)
    for i in range(k):
        ok = levels[(levels + sign[i] * delta >= -1e-12) & (levels + sign[i] * delta <= 1 + 1e-12)]
        x[i] = rng.choice(ok)
    order = rng.permutation(k)
    pts = [x.copy()]
    for i in order:
        x[i] += sign[i] * delta
        pts.append(x.copy())
    return np.array(pts), order, sign[order] * delta


def morris_sensitivity(model, lo, hi, r=50, p=4, delta=None, seed=0, names=None):
    """Mean absolute elementary effects of ``model`` over the box [lo, hi].

    ``model`` maps an (n, k) array to n outputs. Effects are difference
    quotients in the model's own input units, so a linear model returns its
    coefficient magnitudes.
    """
    lo = np.asarray(lo, dtype=np.float64).reshape(-1)
    hi = np.asarray(hi, dtype=np.float64).reshape(-1)
    if lo.shape != hi.shape or not np.all(np.isfinite(lo) & np.isfinite(hi)) or np.any(hi <= lo):
        raise ConfigError("domain box must be finite with hi > lo in every coordinate")
    if r < 2:
        raise ConfigError("need at least two trajectories")
    if p < 2:
        raise ConfigError("need at least two levels")
    delta = p / (2.0 * (p - 1)) if delta is None else float(delta)
    if not 0 < delta <= 1:
        raise ConfigError("delta must lie in (0, 1]")
    k = lo.size
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(k)]
    rng = np.random.default_rng(seed)
    span = hi - lo
    effects = np.empty((r, k))
    for t in range(r):
        pts, order, steps = morris_trajectory(rng, k, p, delta)
        try:
            f = np.asarray(model(lo + pts * span), dtype=np.float64).reshape(-1)
        except Exception as exc:
            raise NumericalError(f"model evaluation failed in trajectory {t}: {exc}") from exc
        if f.size != k + 1 or not np.all(np.isfinite(f)):
            raise NumericalError(f"model returned invalid values in trajectory {t}")
        effects[t, order] = np.diff(f) / (steps * span[order])
    return SensitivityReport(names, np.abs(effects).mean(axis=0).tolist(),
                             effects.mean(axis=0).tolist(), effects.std(axis=0).tolist(),
                             r, delta, p)


# --------------------------------------------------------------------------
# noise

def add_noise(column, level=0.10, seed=0):
    """Multiplicative uniform noise: v -> v * (1 + u), u ~ U(-level, level)."""
    if not 0.0 <= level < 1.0:
        raise ConfigError(f"noise level must lie in [0, 1), got {level}")
    column = np.asarray(column, dtype=np.float64)
    if level == 0.0:
        return column.copy()
    u = np.random.default_rng(seed).uniform(-level, level, column.shape)
    return column * (1.0 + u)


# --------------------------------------------------------------------------
# MLP baseline

@dataclass
class MlpBaseline:
    shape: list
    weights: list  # W_l of shape (n_l, n_{l+1})
    biases: list
    in_scale: np.ndarray
    in_shift: np.ndarray
    out_scale: float = 1.0
    out_shift: float = 0.0

    def __post_init__(self):
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.shape[l], self.shape[l + 1]) or b.shape != (self.shape[l + 1],):
                raise ConfigError(f"layer {l} weights do not match shape {self.shape}")

    def to_dict(self):
        return {"shape": list(self.shape),
                "weights": [W.tolist() for W in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "in_scale": self.in_scale.tolist(), "in_shift": self.in_shift.tolist(),
                "out_scale": float(self.out_scale), "out_shift": float(self.out_shift)}


def mlp_init(shape, seed=0):
    """Uniform fan-in initialisation; biases start at zero."""
    shape = [int(s) for s in shape]
    if len(shape) < 2 or min(shape) < 1:
        raise ConfigError(f"invalid MLP shape {shape}")
    rng = np.random.default_rng(seed)
    weights = [rng.uniform(-1, 1, (a, b)) * math.sqrt(3.0 / a) for a, b in zip(shape, shape[1:])]
    biases = [np.zeros(b) for b in shape[1:]]
    return MlpBaseline(shape, weights, biases, np.ones(shape[0]), np.zeros(shape[0]))


def _mlp_forward(mlp, Xn):
    acts, pre = [Xn], []
    h = Xn
    last = len(mlp.weights) - 1
    for l, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ W + b
        pre.append(z)
        h = z if l == last else silu(z)
        acts.append(h)
    return h, acts, pre


def mlp_grads(mlp, Xn, yn):
    """MSE on normalised targets and its gradients w.r.t. weights and biases."""
    out, acts, pre = _mlp_forward(mlp, Xn)
    yn = yn.reshape(out.shape)
    resid = out - yn
    loss = float(np.mean(resid ** 2))
    g = 2.0 * resid / resid.size
    gW, gb = [None] * len(mlp.weights), [None] * len(mlp.weights)
    for l in range(len(mlp.weights) - 1, -1, -1):
        if l != len(mlp.weights) - 1:
            g = g * dsilu(pre[l])
        gW[l] = acts[l].T @ g
        gb[l] = g.sum(axis=0)
        g = g @ mlp.weights[l].T
    return loss, gW, gb


def mlp_train(X, y, shape=None, learning_rate=1e-2, max_steps=2000, seed=0,
              convergence_tol=1e-9, convergence_window=50):
    """Full-batch Adam on MSE with the same stopping rule as KAN training.

    Inputs and targets are min-max mapped to [-1, 1] internally.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if len(X) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    shape = list(shape) if shape is not None else [X.shape[1], 32, 32, 1]
    if shape[0] != X.shape[1] or shape[-1] != 1:
        raise ConfigError(f"MLP shape {shape} does not fit {X.shape[1]} inputs and one output")
    mlp = mlp_init(shape, seed)
    x_lo, x_hi = X.min(axis=0), X.max(axis=0)
    span = np.where(x_hi > x_lo, x_hi - x_lo, 1.0)
    mlp.in_scale = 2.0 / span
    mlp.in_shift = -1.0 - x_lo * mlp.in_scale
    y_lo, y_hi = float(y.min()), float(y.max())
    mlp.out_scale = (y_hi - y_lo) / 2.0 if y_hi > y_lo else 1.0
    mlp.out_shift = y_lo + mlp.out_scale
    Xn = X * mlp.in_scale + mlp.in_shift
    yn = (y - mlp.out_shift) / mlp.out_scale
    params = [{"W": W, "b": b} for W, b in zip(mlp.weights, mlp.biases)]
    opt = Adam(params, lr=learning_rate)
    history = []
    for step in range(max_steps):
        loss, gW, gb = mlp_grads(mlp, Xn, yn)
        if not math.isfinite(loss):
            raise NumericalError("MLP training diverged", step=step)
        history.append(loss)
        w = convergence_window
        if step >= w and history[step - w] - loss < convergence_tol:
            break
        opt.step([{"W": a, "b": b} for a, b in zip(gW, gb)])
    return mlp


def mlp_eval(mlp, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    out, _, _ = _mlp_forward(mlp, X * mlp.in_scale + mlp.in_shift)
    return out[:, 0] * mlp.out_scale + mlp.out_shift


# --------------------------------------------------------------------------
# tables

PERFORMANCE_COLUMNS = ["Training set", "Test set", "Training set(noise)", "Test set(noise)"]


def performance_table(results):
    """Rows ``(model, metric, values...)`` for ``results = {model: [MetricReport x4]}``.

    Each model contributes an RMSE row and an EE row, with the reports in the
    order of ``PERFORMANCE_COLUMNS``.
    """
    rows = []
    for model, reports in results.items():
        if len(reports) != len(PERFORMANCE_COLUMNS):
            raise ConfigError(f"{model}: expected {len(PERFORMANCE_COLUMNS)} reports")
        rows.append([model, "RMSE"] + [r.rmse for r in reports])
        rows.append(["", "EE"] + [r.ee for r in reports])
    return rows


def format_table(rows, headers, precision=4):
    """Aligned plain-text table; floats are printed at ``precision`` decimals."""
    cells = [[h for h in headers]]
    for row in rows:
        cells.append([f"{v:.{precision}f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[c]) for r in cells) for c in range(len(headers))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in cells]
    return "\n".join(lines)
