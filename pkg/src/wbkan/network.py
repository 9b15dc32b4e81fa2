"""KAN edges and the layers and networks built from them.

Every edge carries a univariate activation. A spline edge computes
``w_b * silu(x) + w_s * sum_i c_i B_i(x)``; a symbolic edge computes
``c * g(a * x + b) + d`` for a library basis ``g``; a zero edge is pruned.
Nodes only sum their incoming edges.

Layer parameters are stored as dense arrays indexed ``[out, in]``. The
public edge accessors take ``(i, j)`` = (input node, output node), matching
the usual ``phi_l^(i,j)`` naming.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels, regularize
from .errors import (
    DimensionMismatchError,
    DomainError,
    NumericalError,
    SchemaError,
    ShapeError,
    UnknownBasisError,
)
from .library import DEFAULT_LIBRARY, LIBRARY_VERSION, get_basis
from .spline import SplineGrid, basis_batch

ZERO, SPLINE, SYMBOLIC = "zero", "spline", "symbolic"
_CODES = {ZERO: 0, SPLINE: 1, SYMBOLIC: 2}
_FORMS = {v: k for k, v in _CODES.items()}

MODEL_FORMAT = "wbkan-model"
MODEL_VERSION = 1

IDENTITY_AFFINE = (1.0, 0.0, 1.0, 0.0)


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + np.tanh(0.5 * x))


def dsilu(x):
    x = np.asarray(x, dtype=np.float64)
    s = 0.5 * (1.0 + np.tanh(0.5 * x))
    return s * (1.0 + x * (1.0 - s))


@dataclass
class EdgeActivation:
    form: str
    w_b: float = 0.0
    w_s: float = 0.0
    coeffs: Optional[np.ndarray] = None
    grid: Optional[SplineGrid] = None
    basis_id: Optional[str] = None
    affine: tuple = IDENTITY_AFFINE

    def __post_init__(self):
        if self.form not in _CODES:
            raise ValueError(f"unknown edge form {self.form!r}")
        if self.form == SPLINE:
            if self.grid is None:
                raise ValueError("spline edge needs a grid")
            self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
            if self.coeffs.shape != (self.grid.n_basis,):
                raise ValueError(
                    f"expected {self.grid.n_basis} coefficients, got {self.coeffs.shape}"
                )
        elif self.form == SYMBOLIC:
            get_basis(self.basis_id)
            self.affine = tuple(float(v) for v in self.affine)
            if self.affine[0] == 0.0 and self.basis_id != "constant":
                raise ValueError("symbolic edge needs a nonzero input scale")

    @classmethod
    def zero(cls):
        return cls(ZERO)

    @classmethod
    def spline(cls, grid, coeffs, w_b=1.0, w_s=1.0):
        return cls(SPLINE, w_b=float(w_b), w_s=float(w_s), coeffs=coeffs, grid=grid)

    @classmethod
    def symbolic(cls, basis_id, a=1.0, b=0.0, c=1.0, d=0.0):
        return cls(SYMBOLIC, basis_id=basis_id, affine=(a, b, c, d))


def edge_eval(edge, x):
    """Evaluate one edge at a scalar or array of inputs."""
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if edge.form == ZERO:
        out = np.zeros_like(x)
    elif edge.form == SPLINE:
        B, _ = basis_batch(x, edge.grid)
        out = edge.w_b * silu(x) + edge.w_s * (B @ edge.coeffs)
    else:
        a, b, c, d = edge.affine
        g = get_basis(edge.basis_id)
        u = a * x + b
        if g.bad_points(u).any():
            raise DomainError(f"{edge.basis_id} is singular at its argument")
        out = c * g(u) + d
    return float(out[0]) if scalar else out


class KanLayer:
    """One layer: an ``n_out x n_in`` array of edge activations."""

    def __init__(self, n_in, n_out, grid):
        if n_in < 1 or n_out < 1:
            raise ShapeError(f"layer dimensions must be positive, got {n_in}x{n_out}")
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.grid = grid
        shape = (self.n_out, self.n_in)
        self.form = np.full(shape, _CODES[SPLINE], dtype=np.int8)
        self.w_b = np.ones(shape)
        self.w_s = np.ones(shape)
        self.coeffs = np.zeros(shape + (grid.n_basis,))
        self.basis = np.full(shape, "", dtype=object)
        self.affine = np.tile(np.array(IDENTITY_AFFINE), shape + (1,))

    # -- edge access --------------------------------------------------------

    def edge(self, i, j):
        form = _FORMS[int(self.form[j, i])]
        if form == SPLINE:
            return EdgeActivation.spline(self.grid, self.coeffs[j, i].copy(),
                                         self.w_b[j, i], self.w_s[j, i])
        if form == SYMBOLIC:
            return EdgeActivation.symbolic(self.basis[j, i], *self.affine[j, i])
        return EdgeActivation.zero()

    def set_edge(self, i, j, edge):
        self.form[j, i] = _CODES[edge.form]
        self.w_b[j, i] = 0.0
        self.w_s[j, i] = 0.0
        self.coeffs[j, i] = 0.0
        self.basis[j, i] = ""
        self.affine[j, i] = IDENTITY_AFFINE
        if edge.form == SPLINE:
            if edge.grid != self.grid:
                raise ValueError("edge grid differs from layer grid")
            self.w_b[j, i] = edge.w_b
            self.w_s[j, i] = edge.w_s
            self.coeffs[j, i] = edge.coeffs
        elif edge.form == SYMBOLIC:
            self.basis[j, i] = edge.basis_id
            self.affine[j, i] = edge.affine

    def forms(self):
        return [[_FORMS[int(c)] for c in row] for row in self.form]

    def edges_of(self, form):
        """(i, j) pairs of all edges with the given form."""
        js, is_ = np.nonzero(self.form == _CODES[form])
        return [(int(i), int(j)) for j, i in zip(js, is_)]

    def copy(self):
        new = KanLayer(self.n_in, self.n_out, self.grid)
        for name in ("form", "w_b", "w_s", "coeffs", "basis", "affine"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def params(self):
        return {"w_b": self.w_b, "w_s": self.w_s, "coeffs": self.coeffs,
                "affine": self.affine}

    # -- numerics -----------------------------------------------------------

    def forward(self, X, index=None):
        """Edge outputs ``phi`` (N, n_out, n_in) and a cache for backward."""
        spline_mask = self.form == _CODES[SPLINE]
        cache = {"X": X, "spline_mask": spline_mask, "symbolic": {}, "spline": None}
        if spline_mask.any():
            phi, cache["spline"] = kernels.spline_forward(
                X, self.grid, self.w_b, self.w_s, self.coeffs, spline_mask)
        else:
            phi = np.zeros((X.shape[0], self.n_out, self.n_in))
        for i, j in self.edges_of(SYMBOLIC):
            g = get_basis(self.basis[j, i])
            a, b, c, d = self.affine[j, i]
            u = a * X[:, i] + b
            if g.bad_points(u).any():
                raise DomainError(f"{self.basis[j, i]} evaluated at a singular point",
                                  layer=index, edge=(i, j))
            gu = g(u)
            phi[:, j, i] = c * gu + d
            cache["symbolic"][(i, j)] = (u, gu, g.deriv(u))
        if not np.all(np.isfinite(phi)):
            bad = np.argwhere(~np.isfinite(phi).all(axis=0))[0]
            raise NumericalError("non-finite edge output", layer=index,
                                 edge=(int(bad[1]), int(bad[0])))
        return phi, cache

    def backward(self, cache, G):
        """Parameter gradients and dL/dX given dL/dphi ``G`` (N, n_out, n_in)."""
        grads = {k: np.zeros_like(v) for k, v in self.params().items()}
        if cache["spline"] is not None:
            grads["w_b"], grads["w_s"], grads["coeffs"], dX = kernels.spline_backward(
                cache["spline"], G, self.w_b, self.w_s, self.coeffs, cache["spline_mask"])
        else:
            dX = np.zeros_like(cache["X"])
        for (i, j), (u, gu, dgu) in cache["symbolic"].items():
            a, b, c, d = self.affine[j, i]
            g_edge = G[:, j, i]
            t = g_edge * c * dgu
            grads["affine"][j, i] = (
                np.dot(t, cache["X"][:, i]),
                t.sum(),
                np.dot(g_edge, gu),
                g_edge.sum(),
            )
            dX[:, i] += t * a
        return grads, dX


class KanNetwork:
    """Layer stack plus the affine maps between raw units and the grid domain.

    Raw inputs are mapped with ``x' = x * in_scale + in_shift`` before layer 0
    and outputs are mapped back with ``y = y' * out_scale + out_shift``.
    """

    def __init__(self, shape, grid=None, input_names=None, output_names=None):
        shape = [int(n) for n in shape]
        if len(shape) < 2 or any(n < 1 for n in shape):
            raise ShapeError(f"shape needs >= 2 positive entries, got {shape}")
        self.grid = grid if grid is not None else SplineGrid()
        self.layers = [KanLayer(shape[l], shape[l + 1], self.grid)
                       for l in range(len(shape) - 1)]
        self.in_scale = np.ones(shape[0])
        self.in_shift = np.zeros(shape[0])
        self.out_scale = np.ones(shape[-1])
        self.out_shift = np.zeros(shape[-1])
        self.input_names = list(input_names) if input_names else [
            f"x{i + 1}" for i in range(shape[0])]
        self.output_names = list(output_names) if output_names else (
            ["y"] if shape[-1] == 1 else [f"y{i + 1}" for i in range(shape[-1])])

    @property
    def shape(self):
        return [self.layers[0].n_in] + [layer.n_out for layer in self.layers]

    def copy(self):
        new = KanNetwork(self.shape, self.grid, self.input_names, self.output_names)
        new.layers = [layer.copy() for layer in self.layers]
        for name in ("in_scale", "in_shift", "out_scale", "out_shift"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def set_normalizers(self, x_lo, x_hi, y_lo=None, y_hi=None):
        """Min-max map raw input ranges onto the grid domain and targets onto it too."""
        lo, hi = self.grid.domain_lo, self.grid.domain_hi
        x_lo = np.asarray(x_lo, dtype=np.float64)
        x_hi = np.asarray(x_hi, dtype=np.float64)
        span = np.where(x_hi > x_lo, x_hi - x_lo, 1.0)
        self.in_scale = (hi - lo) / span
        self.in_shift = lo - x_lo * self.in_scale
        if y_lo is not None:
            y_lo = np.asarray(y_lo, dtype=np.float64) * np.ones(self.shape[-1])
            y_hi = np.asarray(y_hi, dtype=np.float64) * np.ones(self.shape[-1])
            yspan = np.where(y_hi > y_lo, y_hi - y_lo, 1.0)
            self.out_scale = yspan / (hi - lo)
            self.out_shift = y_lo - lo * self.out_scale

    def normalize_inputs(self, X):
        return X * self.in_scale + self.in_shift

    def normalize_targets(self, y):
        return (y - self.out_shift) / self.out_scale

    def denormalize_outputs(self, yn):
        return yn * self.out_scale + self.out_shift

    def spline_edges(self):
        return [(l, i, j) for l, layer in enumerate(self.layers)
                for i, j in layer.edges_of(SPLINE)]

    def forward(self, X):
        return forward(self, X)


# --------------------------------------------------------------------------
# network-level operations

def _as_batch(net, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.shape[0]:
        raise ShapeError(f"expected inputs with {net.shape[0]} features, got shape {X.shape}")
    return X, single


def forward_layers(net, Xn):
    """Forward on normalised inputs. Returns (outputs, [(phi, cache)] per layer)."""
    trace = []
    h = Xn
    for l, layer in enumerate(net.layers):
        phi, cache = layer.forward(h, index=l)
        trace.append((phi, cache))
        h = phi.sum(axis=2)
    return h, trace


def forward(net, X):
    """Raw inputs (n_0,) or (N, n_0) -> raw outputs (n_N,) or (N, n_N)."""
    X, single = _as_batch(net, X)
    out, _ = forward_layers(net, net.normalize_inputs(X))
    y = net.denormalize_outputs(out)
    return y[0] if single else y


@dataclass
class LossBreakdown:
    total: float
    pred: float
    l1: float
    entropy: float
    degenerate_layers: list = field(default_factory=list)


def backward(net, X, y, lam=0.0, mu1=1.0, mu2=1.0, pred=True):
    """Loss and per-layer parameter gradients.

    The prediction loss is the mean squared error in normalised target units.
    With ``lam > 0`` the L1 and entropy penalties of every layer are included.
    Returns ``(LossBreakdown, [grad dict per layer])``.
    """
    X, _ = _as_batch(net, X)
    y = np.asarray(y, dtype=np.float64).reshape(X.shape[0], -1)
    yn = net.normalize_targets(y)
    out, trace = forward_layers(net, net.normalize_inputs(X))
    resid = out - yn
    pred_loss = float(np.mean(resid ** 2)) if pred else 0.0
    d_out = 2.0 * resid / resid.size if pred else np.zeros_like(resid)

    l1_total = 0.0
    ent_total = 0.0
    degenerate = []
    for l, (phi, _) in enumerate(trace):
        l1, S, deg = regularize.layer_terms(phi)
        l1_total += l1
        ent_total += S
        if deg:
            degenerate.append(l)
    total = pred_loss + lam * (mu1 * l1_total + mu2 * ent_total)
    if not np.isfinite(total):
        raise NumericalError("non-finite loss")

    grads = [None] * len(net.layers)
    dh = d_out
    for l in range(len(net.layers) - 1, -1, -1):
        phi, cache = trace[l]
        G = np.broadcast_to(dh[:, :, None], phi.shape)
        if lam > 0.0:
            G = G + regularize.phi_grad(phi, lam, mu1, mu2)
        grads[l], dh = net.layers[l].backward(cache, G)
        for name, g in grads[l].items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name}", layer=l)
    return LossBreakdown(total, pred_loss, l1_total, ent_total, degenerate), grads


def init_network(shape, grid=None, seed=0, noise_scale=0.1, input_names=None,
                 output_names=None):
    """Fresh all-spline network: w_b = w_s = 1, coefficients ~ Normal(0, noise_scale)."""
    net = KanNetwork(shape, grid, input_names, output_names)
    rng = np.random.default_rng(seed)
    for layer in net.layers:
        layer.coeffs[...] = rng.normal(0.0, noise_scale, size=layer.coeffs.shape)
    return net


# --------------------------------------------------------------------------
# persistence

def _edge_doc(layer, i, j):
    form = _FORMS[int(layer.form[j, i])]
    if form == SPLINE:
        return {"form": SPLINE, "w_b": float(layer.w_b[j, i]),
                "w_s": float(layer.w_s[j, i]),
                "coeffs": [float(c) for c in layer.coeffs[j, i]]}
    if form == SYMBOLIC:
        return {"form": SYMBOLIC, "basis": str(layer.basis[j, i]),
                "affine": [float(v) for v in layer.affine[j, i]]}
    return {"form": ZERO}


def save_model(net):
    """JSON-ready dict. Floats are written at full precision by ``json``."""
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "library_version": LIBRARY_VERSION,
        "shape": net.shape,
        "grid": net.grid.to_dict(),
        "input_names": list(net.input_names),
        "output_names": list(net.output_names),
        "normalizer": {
            "in_scale": [float(v) for v in net.in_scale],
            "in_shift": [float(v) for v in net.in_shift],
            "out_scale": [float(v) for v in net.out_scale],
            "out_shift": [float(v) for v in net.out_shift],
        },
        "layers": [
            {"n_in": layer.n_in, "n_out": layer.n_out,
             "edges": [[_edge_doc(layer, i, j) for i in range(layer.n_in)]
                       for j in range(layer.n_out)]}
            for layer in net.layers
        ],
    }


def _require(doc, key, path, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"missing field {key!r}", path)
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"field {key!r} has wrong type", f"{path}.{key}")
    return value


def _floats(values, n, path):
    if not isinstance(values, list) or len(values) != n:
        raise DimensionMismatchError(f"expected {n} numbers", path)
    try:
        arr = np.array(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError("expected numbers", path) from None
    return arr


def load_model(doc):
    """Rebuild a network from ``save_model`` output, validating as it goes."""
    if not isinstance(doc, dict):
        raise SchemaError("model document must be an object")
    if doc.get("format", MODEL_FORMAT) != MODEL_FORMAT:
        raise SchemaError("not a model document", "$.format")
    version = _require(doc, "version", "$", int)
    if version != MODEL_VERSION:
        raise SchemaError(f"unsupported version {version}", "$.version")
    shape = _require(doc, "shape", "$", list)
    if len(shape) < 2 or not all(isinstance(n, int) and n > 0 for n in shape):
        raise SchemaError("shape must hold >= 2 positive integers", "$.shape")
    g = _require(doc, "grid", "$", dict)
    try:
        grid = SplineGrid(float(g["domain_lo"]), float(g["domain_hi"]), int(g["G"]), int(g["k"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad grid: {exc}", "$.grid") from None
    net = KanNetwork(shape, grid, doc.get("input_names"), doc.get("output_names"))
    if len(net.input_names) != shape[0]:
        raise DimensionMismatchError("input_names length differs from shape[0]", "$.input_names")
    if len(net.output_names) != shape[-1]:
        raise DimensionMismatchError("output_names length differs from shape[-1]", "$.output_names")
    norm = _require(doc, "normalizer", "$", dict)
    for key, n in (("in_scale", shape[0]), ("in_shift", shape[0]),
                   ("out_scale", shape[-1]), ("out_shift", shape[-1])):
        setattr(net, key, _floats(_require(norm, key, "$.normalizer"), n, f"$.normalizer.{key}"))
    layers = _require(doc, "layers", "$", list)
    if len(layers) != len(shape) - 1:
        raise DimensionMismatchError(f"expected {len(shape) - 1} layers", "$.layers")
    for l, (ldoc, layer) in enumerate(zip(layers, net.layers)):
        lpath = f"$.layers[{l}]"
        edges = _require(ldoc, "edges", lpath, list)
        if len(edges) != layer.n_out or any(
                not isinstance(row, list) or len(row) != layer.n_in for row in edges):
            got = f"{len(edges)}x{len(edges[0]) if edges and isinstance(edges[0], list) else '?'}"
            raise DimensionMismatchError(
                f"edge grid {got} does not match {layer.n_out}x{layer.n_in}",
                f"{lpath}.edges")
        for j, row in enumerate(edges):
            for i, e in enumerate(row):
                epath = f"{lpath}.edges[{j}][{i}]"
                form = _require(e, "form", epath, str)
                if form == SPLINE:
                    coeffs = _floats(_require(e, "coeffs", epath), grid.n_basis, f"{epath}.coeffs")
                    edge = EdgeActivation.spline(grid, coeffs, float(_require(e, "w_b", epath)),
                                                 float(_require(e, "w_s", epath)))
                elif form == SYMBOLIC:
                    name = _require(e, "basis", epath, str)
                    if name not in DEFAULT_LIBRARY:
                        raise UnknownBasisError(f"unknown basis_id {name!r}", f"{epath}.basis")
                    affine = _floats(_require(e, "affine", epath), 4, f"{epath}.affine")
                    edge = EdgeActivation.symbolic(name, *affine)
                elif form == ZERO:
                    edge = EdgeActivation.zero()
                else:
                    raise SchemaError(f"unknown edge form {form!r}", f"{epath}.form")
                layer.set_edge(i, j, edge)
    return net
