"""Dependency discovery by contrasting real rows with column-shuffled rows.

Real rows satisfy whatever relation ``f(x_1, ..., x_d) = 0`` links the
variables; shuffling each column independently destroys it while keeping every
marginal. A KAN with a gaussian output edge is trained to output 1 on real
rows and 0 on shuffled ones, so only the variables taking part in the relation
need live first-layer edges.
"""
import csv
import json
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .network import EdgeActivation, forward, init_network
from .regularize import edge_magnitudes
from .training import TrainConfig, train

# minimum gap between mean scores on positives and negatives for the first-layer
# magnitudes to count as evidence of a relation
MIN_SEPARATION = 0.1


class NoDependencyWarning(UserWarning):
    """The contrastive model could not separate real rows from shuffled ones."""


@dataclass
class ContrastiveSet:
    features: np.ndarray  # (2N, d): positives first, then negatives
    labels: np.ndarray  # (2N,) 1.0 for positives, 0.0 for negatives
    positive: np.ndarray  # (2N,) bool provenance mask
    seed: int

    @property
    def n_pairs(self):
        return int(self.positive.sum())


def build_contrastive(X, seed=0):
    """Positives are the rows of ``X``; negatives permute every column independently."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("contrastive construction needs an (N, d) matrix")
    n, d = X.shape
    if n < 2:
        raise DataError("need at least two rows to permute")
    if d < 2:
        raise DataError("need at least two variables to relate")
    rng = np.random.default_rng(seed)
    neg = np.column_stack([X[rng.permutation(n), c] for c in range(d)])
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    return ContrastiveSet(np.vstack([X, neg]), labels, labels.astype(bool), seed)


@dataclass
class ImportanceReport:
    names: list
    magnitude: list  # per variable, max L1 over its first-layer edges (positives)
    kept: list
    ranking: list  # variable names, most important first
    threshold: float
    separation: Optional[float] = None  # mean score on positives minus negatives

    @property
    def dependency_found(self):
        return any(self.kept)

    def to_dict(self):
        return asdict(self)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", "magnitude"])
            for name in self.ranking:
                w.writerow([name, repr(self.magnitude[self.names.index(name)])])


def importance(net, X, names, threshold, separation=None):
    """Rank variables by the largest L1 magnitude among their first-layer edges.

    When ``separation`` is given and below ``MIN_SEPARATION`` the model did not
    tell real rows from shuffled ones, so no variable is kept: magnitudes of
    a model that learned nothing carry no information about dependencies.
    """
    phi, _ = net.layers[0].forward(net.normalize_inputs(np.asarray(X, dtype=np.float64)))
    mags = edge_magnitudes(phi).max(axis=0)
    order = sorted(range(len(names)), key=lambda c: (-mags[c], c))
    informative = separation is None or separation >= MIN_SEPARATION
    return ImportanceReport(list(names), [float(m) for m in mags],
                            [bool(informative and m >= threshold) for m in mags],
                            [names[c] for c in order], float(threshold),
                            None if separation is None else float(separation))


def train_unsupervised(cs, shape=None, config=None, names=None, grid=None, warmup_steps=200):
    """Fit a ``[d, h, 1]`` network whose last-layer edges are gaussians.

    The gaussian edges stay symbolic throughout; their affine parameters
    train with everything else on squared error against the 1/0 labels plus
    the usual sparsity penalties. The first ``warmup_steps`` of the step budget
    run without the penalties: a sum of per-variable edges has the same mean on
    real and shuffled rows, so the relation is only found through a weak
    second-order signal, and penalising from step one can shrink every edge
    onto the trivial "always 0.5" answer first.
    Returns (net, ImportanceReport, TrainReport).
    """
    config = config or TrainConfig()
    d = cs.features.shape[1]
    shape = list(shape) if shape is not None else [d, 1, 1]
    if len(shape) != 3 or shape[0] != d or shape[2] != 1:
        raise ShapeError(f"unsupervised shape must be [{d}, h, 1], got {shape}")
    names = list(names) if names is not None else [f"x{i + 1}" for i in range(d)]
    if len(names) != d:
        raise ConfigError("one name per variable required")
    net = init_network(shape, grid, seed=config.seed, input_names=names, output_names=["score"])
    lo = cs.features.min(axis=0)
    hi = cs.features.max(axis=0)
    net.set_normalizers(lo, hi)  # labels already live on [0, 1]; no target scaling
    last = net.layers[-1]
    for i in range(last.n_in):
        last.set_edge(i, 0, EdgeActivation.symbolic("gaussian", 1.0, 0.0, 1.0, 0.0))
    warmup = min(int(warmup_steps), config.max_steps - 1)
    if warmup > 0:
        first = train(net, cs.features, cs.labels, replace(config, max_steps=warmup),
                      regularize_loss=False)
        report = train(net, cs.features, cs.labels,
                       replace(config, max_steps=config.max_steps - warmup))
        for key in ("total", "pred", "l1", "entropy"):
            setattr(report, key, getattr(first, key) + getattr(report, key))
        report.steps = len(report.total)
        report.wall_time += first.wall_time
    else:
        report = train(net, cs.features, cs.labels, config)
    pos, neg = label_balance(net, cs)
    imp = importance(net, cs.features[cs.positive], names, config.prune_threshold, pos - neg)
    if pos - neg < MIN_SEPARATION:
        warnings.warn(f"positives and negatives score alike (gap {pos - neg:.3g}); "
                      "no dependency found", NoDependencyWarning, stacklevel=2)
    return net, imp, report


def label_balance(net, cs):
    """(mean score on positives, mean score on negatives)."""
    scores = forward(net, cs.features)[:, 0]
    return float(scores[cs.positive].mean()), float(scores[~cs.positive].mean())
