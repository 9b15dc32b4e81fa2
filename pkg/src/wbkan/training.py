"""Sparsification training and node pruning.

The training objective is

    total = mse + lam * (mu1 * sum_l |Phi_l|_1 + mu2 * sum_l S(Phi_l))

where ``|Phi_l|_1`` sums the mean absolute outputs of a layer's edges over the
batch and ``S`` is the entropy of those magnitudes.
"""
import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import regularize
from .errors import ConfigError, DivergenceError, EmptyDataError, NumericalError
from .network import KanNetwork, backward, edge_eval, forward_layers, save_model


@dataclass
class TrainConfig:
    lam: float = 0.01
    mu1: float = 1.0
    mu2: float = 1.0
    learning_rate: float = 1e-2
    max_steps: int = 2000
    batch_size: Optional[int] = None  # None = full batch
    seed: int = 0
    prune_threshold: float = 1e-2
    convergence_tol: float = 1e-9
    convergence_window: int = 50

    def __post_init__(self):
        for name in ("lam", "mu1", "mu2", "prune_threshold"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise ConfigError("max_steps must be a positive integer")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if not self.convergence_tol > 0:
            raise ConfigError("convergence_tol must be positive")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)


class Adam:
    """Bias-corrected adaptive-moment updates over a list of parameter dicts."""

    def __init__(self, params, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            for k in p:
                m[k] *= self.beta1
                m[k] += (1.0 - self.beta1) * g[k]
                v[k] *= self.beta2
                v[k] += (1.0 - self.beta2) * g[k] ** 2
                p[k] -= self.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + self.eps)


# --------------------------------------------------------------------------
# regularisation terms

def edge_l1(edge, inputs):
    """Mean absolute output of one edge over its incoming node values."""
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    if inputs.size == 0:
        raise EmptyDataError("edge_l1 needs at least one sample")
    return float(np.mean(np.abs(edge_eval(edge, inputs))))


def _layer_phi(layer, inputs):
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    if inputs.shape[0] == 0:
        raise EmptyDataError("layer regularisers need at least one sample")
    phi, _ = layer.forward(inputs)
    return phi


def layer_l1(layer, inputs):
    """Sum of edge L1 magnitudes; ``inputs`` is the (N, n_in) batch entering the layer."""
    return float(regularize.edge_magnitudes(_layer_phi(layer, inputs)).sum())


def layer_entropy(layer, inputs):
    """Entropy of the layer's edge magnitudes. Returns (S, degenerate)."""
    return regularize.entropy(regularize.edge_magnitudes(_layer_phi(layer, inputs)))


def total_loss(net, X, y, config):
    """LossBreakdown for the full objective on a batch."""
    if len(X) == 0:
        raise EmptyDataError("empty batch")
    loss, _ = backward(net, X, y, config.lam, config.mu1, config.mu2)
    return loss


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainReport:
    total: list = field(default_factory=list)
    pred: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    entropy: list = field(default_factory=list)
    steps: int = 0
    wall_time: float = 0.0
    snapshot_id: str = ""
    converged: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "total", "pred", "l1", "entropy"])
            for s, row in enumerate(zip(self.total, self.pred, self.l1, self.entropy)):
                w.writerow([s] + [repr(float(v)) for v in row])


def snapshot_id(net):
    blob = json.dumps(save_model(net), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _batches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        while True:
            yield None
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start:start + batch_size]


def train(net, X, y, config=None, regularize_loss=True):
    """Minimise the regularised objective in place with Adam.

    Stops after ``max_steps`` or once the total loss improved by less than
    ``convergence_tol`` over the last ``convergence_window`` steps.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise EmptyDataError("cannot train on an empty dataset")
    lam = config.lam if regularize_loss else 0.0
    rng = np.random.default_rng(config.seed)
    batches = _batches(len(X), config.batch_size, rng)
    opt = Adam([layer.params() for layer in net.layers], lr=config.learning_rate)
    report = TrainReport()
    t0 = time.perf_counter()
    last_good = net.copy()
    for step in range(config.max_steps):
        idx = next(batches)
        xb, yb = (X, y) if idx is None else (X[idx], y[idx])
        try:
            loss, grads = backward(net, xb, yb, lam, config.mu1, config.mu2)
        except NumericalError as exc:
            raise DivergenceError(f"training diverged: {exc}", step, last_good) from exc
        report.total.append(loss.total)
        report.pred.append(loss.pred)
        report.l1.append(loss.l1)
        report.entropy.append(loss.entropy)
        w = config.convergence_window
        if step >= w and report.total[step - w] - loss.total < config.convergence_tol:
            report.converged = True
            break
        if step % 100 == 0:
            last_good = net.copy()
        opt.step(grads)
    report.steps = len(report.total)
    report.wall_time = time.perf_counter() - t0
    report.snapshot_id = snapshot_id(net)
    return report


# --------------------------------------------------------------------------
# pruning

@dataclass
class PruneReport:
    importance: list  # per hidden layer: list of node scores
    keep: list  # per node layer (input .. output): list of bools
    shape_before: list
    shape_after: list
    threshold: float
    forced: list = field(default_factory=list)  # hidden layers kept alive artificially

    def to_dict(self):
        return asdict(self)


def edge_magnitudes(net, X):
    """Per layer (n_out, n_in) L1 magnitudes over raw inputs ``X``."""
    _, trace = forward_layers(net, net.normalize_inputs(np.asarray(X, dtype=np.float64)))
    return [regularize.edge_magnitudes(phi) for phi, _ in trace]


def node_importance(net, X):
    """min(max incoming L1, max outgoing L1) for each hidden node."""
    mags = edge_magnitudes(net, X)
    scores = []
    for l in range(1, len(net.layers)):
        incoming = mags[l - 1].max(axis=1)
        outgoing = mags[l].max(axis=0)
        scores.append(np.minimum(incoming, outgoing))
    return scores


def prune(net, X, threshold=1e-2):
    """Remove hidden nodes whose importance is below ``threshold``."""
    if threshold < 0:
        raise ConfigError("prune threshold must be non-negative")
    scores = node_importance(net, X)
    shape = net.shape
    keep = [np.ones(shape[0], dtype=bool)]
    forced = []
    for l, s in enumerate(scores, start=1):
        mask = s >= threshold
        if not mask.any():
            mask[int(np.argmax(s))] = True
            forced.append(l)
        keep.append(mask)
    keep.append(np.ones(shape[-1], dtype=bool))

    new_shape = [int(m.sum()) for m in keep]
    pruned = KanNetwork(new_shape, net.grid, net.input_names, net.output_names)
    for name in ("in_scale", "in_shift", "out_scale", "out_shift"):
        setattr(pruned, name, getattr(net, name).copy())
    for l, (old, new) in enumerate(zip(net.layers, pruned.layers)):
        rows = np.nonzero(keep[l + 1])[0]
        cols = np.nonzero(keep[l])[0]
        for attr in ("form", "w_b", "w_s", "coeffs", "basis", "affine"):
            setattr(new, attr, getattr(old, attr)[np.ix_(rows, cols)].copy())
    report = PruneReport(
        importance=[[float(v) for v in s] for s in scores],
        keep=[[bool(v) for v in m] for m in keep],
        shape_before=list(shape),
        shape_after=new_shape,
        threshold=float(threshold),
        forced=forced,
    )
    return pruned, report
