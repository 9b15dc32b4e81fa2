"""Snapping spline edges to library functions, then refining and printing the formula.

Each surviving spline edge is compared against every library basis ``g`` by
fitting ``c * g(a * x + b) + d`` to the edge's (input, output) samples and
scoring the fit with R^2. The input scale and shift come from a derivative-free
grid search (see ``fit_affine``); ``c`` and ``d`` are linear least squares.
"""
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigError, DataError, NumericalError, UnsnappedError
from .library import DEFAULT_LIBRARY, get_basis
from .network import (
    SPLINE,
    SYMBOLIC,
    ZERO,
    EdgeActivation,
    backward,
    edge_eval,
    forward_layers,
)
from .training import Adam

R2_FLOOR = 0.8
MAX_SEARCH_SAMPLES = 512


class CoverageWarning(UserWarning):
    pass


@dataclass
class AffineFit:
    basis: str
    a: float
    b: float
    c: float
    d: float
    r2: float
    coverage: float = 1.0
    degenerate: bool = False

    @property
    def affine(self):
        return (self.a, self.b, self.c, self.d)


def _is_flat(ys):
    """True when samples are constant up to rounding noise."""
    return float(np.ptp(ys)) <= 1e-12 * max(1.0, float(np.max(np.abs(ys))))


def _linear_fit(g, y, valid):
    """Least-squares (c, d) and SS_res of y ~ c * g + d over valid samples."""
    gv, yv = g[valid], y[valid]
    gm = gv.mean()
    ym = yv.mean()
    gc = gv - gm
    sgg = float(gc @ gc)
    if sgg <= 1e-300 * max(len(gv), 1):
        return 0.0, ym, float(((yv - ym) ** 2).sum())
    c = float(gc @ (yv - ym)) / sgg
    d = ym - c * gm
    r = yv - (c * gv + d)
    return c, d, float(r @ r)


def _grid_scores(g, x, y, a_vals, s_vals):
    """R^2 for every (a, s) pair with u = a * (x - s); invalid cells get -inf.

    Cells where more than 5% of samples hit a singularity are rejected.
    """
    u = a_vals[:, None, None] * (x[None, None, :] - s_vals[None, :, None])
    bad = g.bad_points(u)
    with np.errstate(all="ignore"):
        G = np.where(bad, 0.0, g(np.where(bad, 1.0, u)))
    bad |= ~np.isfinite(G)
    G = np.where(bad, 0.0, G)
    good = ~bad
    n = good.sum(axis=2)
    nz = np.maximum(n, 1)
    ym = (good * y).sum(axis=2) / nz
    yc = np.where(good, y - ym[..., None], 0.0)
    syy = (yc * yc).sum(axis=2)
    with np.errstate(all="ignore"):  # huge exp/cube values overflow to inf
        gm = G.sum(axis=2) / nz
        gc = np.where(good, G - gm[..., None], 0.0)
        sgy = (gc * yc).sum(axis=2)
        sgg = (gc * gc).sum(axis=2)
        r2 = sgy ** 2 / (sgg * syy)
    r2 = np.where((sgg > 1e-300) & (syy > 0) & (n >= 0.95 * x.size) & np.isfinite(r2),
                  r2, -np.inf)
    return r2


def _search_points(x, y, limit):
    if x.size <= limit:
        return x, y
    idx = np.linspace(0, x.size - 1, limit).round().astype(int)
    order = np.argsort(x, kind="stable")[idx]
    return x[order], y[order]


def _score(g, a, s, x, y):
    u = a * (x - s)
    bad = g.bad_points(u)
    with np.errstate(all="ignore"):
        gu = np.where(bad, np.nan, g(np.where(bad, 1.0, u)))
    valid = ~bad & np.isfinite(gu)
    if valid.sum() < 0.95 * x.size or valid.sum() < 2:
        return -np.inf, None
    c, d, ssr = _linear_fit(gu, y, valid)
    yv = y[valid]
    sst = float(((yv - yv.mean()) ** 2).sum())
    if sst <= 0:
        return -np.inf, None
    return 1.0 - ssr / sst, (c, d, valid.mean())


def fit_affine(basis, xs, ys, a_range=(1e-2, 1e2), n_a=41, n_s=41, passes=5, polish=True):
    """Best ``c * g(a * x + b) + d`` for one basis ``g``.

    The input map is searched as ``a * (x - s)`` with ``|a|`` on a log grid over
    ``a_range`` (both signs) and ``s`` spanning the sample range widened by two
    spans on each side. The best cell is refined by ``passes`` step-halving
    sweeps, then polished with bounded least squares.
    """
    g = get_basis(basis) if isinstance(basis, str) else basis
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if xs.shape != ys.shape:
        raise DataError("xs and ys differ in length")
    if xs.size < 10:
        raise DataError(f"fit_affine needs at least 10 samples, got {xs.size}")
    if _is_flat(ys):
        return AffineFit("constant", 1.0, 0.0, 0.0, float(ys.mean()), float("nan"),
                         degenerate=True)
    if g.name == "constant":
        return AffineFit("constant", 1.0, 0.0, 0.0, float(ys.mean()), 0.0)

    xq, yq = _search_points(xs, ys, MAX_SEARCH_SAMPLES)
    lo, hi = float(xs.min()), float(xs.max())
    span = hi - lo if hi > lo else 1.0
    log_lo, log_hi = math.log10(a_range[0]), math.log10(a_range[1])
    mags = np.logspace(log_lo, log_hi, n_a)
    a_vals = np.concatenate([-mags[::-1], mags])
    s_lo, s_hi = lo - 2 * span, hi + 2 * span
    s_vals = np.linspace(s_lo, s_hi, n_s)
    r2 = _grid_scores(g, xq, yq, a_vals, s_vals)
    if not np.isfinite(r2).any():
        return AffineFit(g.name, 1.0, 0.0, 0.0, float(ys.mean()), -np.inf, coverage=0.0)
    ia, is_ = np.unravel_index(int(np.argmax(r2)), r2.shape)
    sign = math.copysign(1.0, a_vals[ia])
    la = math.log10(abs(a_vals[ia]))
    s = float(s_vals[is_])
    best = float(r2[ia, is_])

    # step-halving refinement in (log10|a|, s)
    da = (log_hi - log_lo) / (n_a - 1)
    ds = (s_hi - s_lo) / (n_s - 1)
    for _ in range(passes):
        cand_la = np.clip(la + da * np.array([-1.0, 0.0, 1.0]), log_lo, log_hi)
        cand_s = np.clip(s + ds * np.array([-1.0, 0.0, 1.0]), s_lo, s_hi)
        local = _grid_scores(g, xq, yq, sign * 10.0 ** cand_la, cand_s)
        i, j = np.unravel_index(int(np.argmax(local)), local.shape)
        if local[i, j] > best:
            best = float(local[i, j])
            la, s = float(cand_la[i]), float(cand_s[j])
        da *= 0.5
        ds *= 0.5

    if polish:
        la, s = _polish(g, xq, yq, sign, la, s, (log_lo, log_hi), (s_lo, s_hi))

    a = sign * 10.0 ** la
    r2_full, lin = _score(g, a, s, xs, ys)
    if lin is None:
        return AffineFit(g.name, a, -a * s, 0.0, float(ys.mean()), -np.inf, coverage=0.0)
    c, d, coverage = lin
    if coverage < 0.95:
        warnings.warn(f"{g.name}: {100 * (1 - coverage):.1f}% of samples excluded",
                      CoverageWarning)
    return AffineFit(g.name, float(a), float(-a * s), float(c), float(d), float(r2_full),
                     coverage=float(coverage))


def _polish(g, x, y, sign, la, s, la_bounds, s_bounds):
    """Variable-projection least squares over (log10|a|, s) inside the search box."""
    scale = float(np.std(y)) or 1.0

    def resid(p):
        u = sign * 10.0 ** p[0] * (x - p[1])
        bad = g.bad_points(u)
        with np.errstate(all="ignore"):
            gu = g(np.where(bad, 1.0, u))
        if bad.any() or not np.all(np.isfinite(gu)):
            return np.full(x.size, 1e6)
        c, d, _ = _linear_fit(gu, y, np.ones(x.size, dtype=bool))
        return (y - (c * gu + d)) / scale

    start = np.array([la, s])
    eps = 1e-12
    lb = np.array([la_bounds[0], s_bounds[0]])
    ub = np.array([la_bounds[1], s_bounds[1]])
    start = np.clip(start, lb + eps, ub - eps)
    try:
        res = least_squares(resid, start, bounds=(lb, ub), method="trf",
                            x_scale=np.array([0.1, 0.1 * (ub[1] - lb[1])]),
                            xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=400)
    except (ValueError, FloatingPointError):
        return la, s
    base = float(resid(start) @ resid(start))
    if float(res.fun @ res.fun) <= base:
        return float(res.x[0]), float(res.x[1])
    return la, s


# --------------------------------------------------------------------------
# snapping

@dataclass
class SnapEntry:
    layer: int
    edge: tuple  # (in_node, out_node)
    status: str  # SNAPPED, UNSNAPPED, DEGENERATE, OVERRIDE
    basis: Optional[str]
    affine: Optional[list]
    r2: Optional[float]
    mode: str = "auto"
    candidates: list = field(default_factory=list)  # [(basis, r2)] best first


@dataclass
class SnapReport:
    entries: list = field(default_factory=list)

    def to_dict(self):
        return {"entries": [asdict(e) for e in self.entries]}

    def unsnapped(self):
        return [(e.layer,) + tuple(e.edge) for e in self.entries if e.status == "UNSNAPPED"]


def _nan_to_none(v):
    return None if v is None or not np.isfinite(v) else float(v)


TIE_RTOL = 0.01


def _break_ties(ranked, order, rtol=TIE_RTOL):
    """Earliest library basis whose residual is within ``rtol`` of the best.

    Flexible bases (tan, sigmoid, gaussian, ...) can shave a fraction of a
    percent off the residual of a simpler exact law by fitting noise or spline
    wiggle, so residual differences below ``rtol`` are treated as ties and
    resolved by library order, which lists simpler functions first.
    """
    best_res = 1.0 - ranked[0].r2
    band = best_res * (1.0 + rtol) + 1e-15
    tied = [f for f in ranked if 1.0 - f.r2 <= band]
    return min(tied, key=lambda f: order.index(f.basis))


def snap_samples(xs, ys, library=None, override=None, r2_floor=R2_FLOOR):
    """Choose a basis for samples ``ys ~ c * g(a * xs + b) + d``.

    Returns ``(fit, entry)`` where ``fit`` is the chosen ``AffineFit`` or
    None when no candidate reaches ``r2_floor``; ``entry`` has layer/edge
    left at -1/(). Candidates that would hit a singularity on ``xs`` are not
    eligible.
    """
    lib = DEFAULT_LIBRARY if library is None else library
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if _is_flat(ys):
        fit = fit_affine("constant", xs, ys)
        return fit, SnapEntry(-1, (), "DEGENERATE", "constant", list(fit.affine), None,
                              mode="auto")
    if override is not None:
        get_basis(override, lib)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoverageWarning)
        fits = [fit_affine(lib[name], xs, ys) for name in lib]
    eligible = [f for f in fits if f.coverage == 1.0 and np.isfinite(f.r2)]
    ranked = sorted(eligible, key=lambda f: -f.r2)  # stable: library order breaks ties
    candidates = [(f.basis, float(f.r2)) for f in ranked]
    if override is not None:
        chosen = next(f for f in fits if f.basis == override)
        return chosen, SnapEntry(-1, (), "SNAPPED", override, list(chosen.affine),
                                 _nan_to_none(chosen.r2), mode="override",
                                 candidates=candidates)
    if not ranked or ranked[0].r2 < r2_floor:
        return None, SnapEntry(-1, (), "UNSNAPPED", None, None,
                               ranked[0].r2 if ranked else None, candidates=candidates)
    best = _break_ties(ranked, list(lib))
    return best, SnapEntry(-1, (), "SNAPPED", best.basis, list(best.affine), float(best.r2),
                           candidates=candidates)


def snap_edge(edge, inputs, library=None, override=None, r2_floor=R2_FLOOR):
    """Replace a spline edge by its best symbolic surrogate.

    Returns ``(new_edge, entry)``; an UNSNAPPED entry returns the edge unchanged.
    """
    if edge.form != SPLINE:
        raise ConfigError("snap_edge expects a spline edge")
    inputs = np.asarray(inputs, dtype=np.float64).reshape(-1)
    fit, entry = snap_samples(inputs, edge_eval(edge, inputs), library, override, r2_floor)
    if fit is None:
        return edge, entry
    return EdgeActivation.symbolic(fit.basis, *fit.affine), entry


def node_inputs(net, X):
    """Normalised node values entering each layer for raw inputs ``X``."""
    h = net.normalize_inputs(np.asarray(X, dtype=np.float64))
    values = [h]
    _, trace = forward_layers(net, h)
    for phi, _ in trace[:-1]:
        values.append(phi.sum(axis=2))
    return values


def snap_network(net, X, overrides=None, library=None, r2_floor=R2_FLOOR):
    """Snap every spline edge of a copy of ``net``.

    ``overrides`` maps ``(layer, in_node, out_node)`` to a basis name.
    Layers are snapped in order: each edge is fitted against the node values
    produced by the already-snapped layers before it, so every chosen basis
    is finite on the inputs it will actually receive.
    """
    overrides = dict(overrides or {})
    for key, name in overrides.items():
        l, i, j = key
        get_basis(name, library)
        if not (0 <= l < len(net.layers) and 0 <= i < net.layers[l].n_in
                and 0 <= j < net.layers[l].n_out):
            raise ConfigError(f"override for nonexistent edge {l}/{i}/{j}")
    out = net.copy()
    report = SnapReport()
    for l, layer in enumerate(net.layers):
        inputs = node_inputs(out, X)[l]
        for i, j in layer.edges_of(SPLINE):
            new, entry = snap_edge(layer.edge(i, j), inputs[:, i], library,
                                   overrides.get((l, i, j)), r2_floor)
            entry.layer, entry.edge = l, (i, j)
            out.layers[l].set_edge(i, j, new)
            report.entries.append(entry)
    return out, report


# --------------------------------------------------------------------------
# refinement

@dataclass
class RefineReport:
    initial_loss: float
    final_loss: float
    steps: int
    losses: list = field(default_factory=list)


def refine(net, X, y, max_steps=3000, learning_rate=1e-2, tol=1e-12, window=100,
           min_learning_rate=1e-6):
    """Fine-tune all symbolic affine parameters on the prediction loss.

    Structure is frozen and no regularisers apply. The learning rate halves
    whenever the best loss improves by less than ``tol`` over ``window``
    steps; the run ends once it would drop below ``min_learning_rate``.
    The best parameters seen are kept, so the loss never increases.
    """
    spline_edges = net.spline_edges()
    if spline_edges:
        raise UnsnappedError(spline_edges)
    params = [{"affine": layer.affine} for layer in net.layers]
    opt = Adam(params, lr=learning_rate)
    loss, grads = backward(net, X, y)
    initial = best = loss.pred
    best_params = [layer.affine.copy() for layer in net.layers]
    history = [best]
    mark = best
    since = 0
    steps = 0
    for steps in range(1, max_steps + 1):
        opt.step([{"affine": g["affine"]} for g in grads])
        try:
            loss, grads = backward(net, X, y)
            current = loss.pred
        except NumericalError:
            current = math.inf
        if current < best:
            best = current
            best_params = [layer.affine.copy() for layer in net.layers]
        history.append(best)
        since += 1
        if not math.isfinite(current):
            # wandered into a singularity: restart from the best point, slower
            for layer, p in zip(net.layers, best_params):
                layer.affine[...] = p
            opt = Adam(params, lr=opt.lr * 0.5)
            loss, grads = backward(net, X, y)
            since = 0
            mark = best
            if opt.lr < min_learning_rate:
                break
            continue
        if since >= window:
            if mark - best < tol:
                if opt.lr * 0.5 < min_learning_rate:
                    break
                opt.lr *= 0.5
            mark = best
            since = 0
    for layer, p in zip(net.layers, best_params):
        layer.affine[...] = p
    return RefineReport(initial, best, steps, history)


# --------------------------------------------------------------------------
# expressions

@dataclass
class Var:
    name: str
    index: int


@dataclass
class Affine:
    """``c * g(a * child + b) + d``"""
    basis: str
    a: float
    b: float
    c: float
    d: float
    child: object


@dataclass
class Sum:
    terms: list
    const: float = 0.0


def evaluate(expr, X):
    """Evaluate an expression tree on raw inputs ``X`` (N, n_inputs)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if isinstance(expr, Var):
        return X[:, expr.index]
    if isinstance(expr, Sum):
        out = np.full(X.shape[0], expr.const)
        for t in expr.terms:
            out = out + evaluate(t, X)
        return out
    g = get_basis(expr.basis)
    with np.errstate(all="ignore"):
        return expr.c * g(expr.a * evaluate(expr.child, X) + expr.b) + expr.d


def _scale_sum(s, k, shift=0.0):
    """k * s + shift as a new Sum."""
    terms = [Affine(t.basis, t.a, t.b, t.c * k, t.d * k, t.child) for t in s.terms]
    return Sum(terms, s.const * k + shift)


def _simplify(expr):
    """Fold scales into sums and absorb identity edges and constants."""
    if isinstance(expr, Var):
        return expr
    if isinstance(expr, Affine):
        child = _simplify(expr.child)
        if isinstance(child, Sum) and expr.basis != "constant":
            child = _scale_sum(child, expr.a, expr.b)
            return Affine(expr.basis, 1.0, 0.0, expr.c, expr.d, child)
        return Affine(expr.basis, expr.a, expr.b, expr.c, expr.d, child)
    terms = []
    const = expr.const
    for t in expr.terms:
        t = _simplify(t)
        if isinstance(t, Affine) and t.basis == "constant":
            const += t.c + t.d
            continue
        if isinstance(t, Affine) and t.basis == "identity" and isinstance(t.child, Sum):
            inner = _scale_sum(t.child, t.c * t.a, t.c * t.b + t.d)
            terms.extend(inner.terms)
            const += inner.const
            continue
        if isinstance(t, Affine):
            const += t.d
            t = Affine(t.basis, t.a, t.b, t.c, 0.0, t.child)
        terms.append(t)
    return Sum(terms, const)


def build_expression(net, output=0):
    """Expression tree for one output of an all-symbolic network, in raw units."""
    bad = net.spline_edges()
    if bad:
        raise UnsnappedError(bad)
    exprs = [None] * net.shape[0]
    for l, layer in enumerate(net.layers):
        nxt = []
        for j in range(layer.n_out):
            terms = []
            for i in range(layer.n_in):
                if layer.form[j, i] != 2:
                    continue
                a, b, c, d = layer.affine[j, i]
                basis = layer.basis[j, i]
                if l == 0:
                    child = Var(net.input_names[i], i)
                    a, b = a * net.in_scale[i], a * net.in_shift[i] + b
                else:
                    child = exprs[i]
                terms.append(Affine(basis, a, b, c, d, child))
            nxt.append(Sum(terms, 0.0))
        exprs = nxt
    top = _scale_sum(exprs[output], net.out_scale[output], net.out_shift[output])
    return _simplify(top)


def _num(v, precision):
    if precision is None:
        return repr(float(v))
    text = f"{v:.{precision}f}"
    return "0" if float(text) == 0.0 else text


def _coef(v, precision):
    """Like ``_num`` but a nonzero factor never collapses to a bare 0."""
    text = _num(v, precision)
    if text == "0" and v != 0.0:
        text = f"{v:.{max(precision, 1)}g}"
    return text


def _linear_text(k, child_text, shift, precision, atomic_child):
    parts = []
    if k == 1.0:
        parts.append(child_text)
    elif k == -1.0:
        parts.append(f"-{child_text}" if atomic_child else f"-({child_text})")
    elif atomic_child and child_text.startswith("1/"):
        parts.append(f"{_coef(k, precision)}{child_text[1:]}")
    else:
        parts.append(f"{_coef(k, precision)}*{child_text if atomic_child else '(' + child_text + ')'}")
    text = parts[0]
    if shift != 0.0:
        sv = _num(abs(shift), precision)
        if sv != "0":
            text += (" + " if shift > 0 else " - ") + sv
    return text


# g(a*u) = scale(a) * g(u) for these bases
_HOMOGENEOUS = {"square": lambda a: a * a, "cube": lambda a: a ** 3,
                "reciprocal": lambda a: 1.0 / a, "abs": abs}


def _unit_scale(expr):
    """Rewrite c*g(a*u + b) as (c*s(a))*g(u + b/a) for homogeneous g.

    The value is unchanged; the printed numbers stay on the scale of the
    data instead of trading a tiny ``a`` against a huge ``c``.
    """
    scale = _HOMOGENEOUS.get(expr.basis)
    if scale is None or expr.a in (0.0, 1.0):
        return expr
    with np.errstate(all="ignore"):
        c, b = expr.c * scale(expr.a), expr.b / expr.a
    if not (np.isfinite(c) and np.isfinite(b)) or (c == 0.0 and expr.c != 0.0):
        return expr
    return Affine(expr.basis, 1.0, b, c, expr.d, expr.child)


def render(expr, precision=2):
    """Formula text. ``precision=None`` writes every number at full precision."""
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Affine):
        expr = _unit_scale(expr)
        g = get_basis(expr.basis)
        atomic = isinstance(expr.child, Var)
        inner = render(expr.child, precision)
        arg = _linear_text(expr.a, inner, expr.b, precision, atomic)
        body = g.template.format(arg)
        # the identity template adds no brackets, so a compound argument needs them
        atomic_body = g.template != "{}" or (atomic and arg == inner)
        return _linear_text(expr.c, body, expr.d, precision, atomic_body)
    pieces = []
    for t in expr.terms:
        text = render(t, precision)
        if text.startswith("-"):
            pieces.append(("-", text[1:]))
        else:
            pieces.append(("+", text))
    const_text = _num(abs(expr.const), precision)
    if expr.const != 0.0 and const_text != "0":
        pieces.append(("+" if expr.const > 0 else "-", const_text))
    if not pieces:
        return "0"
    sign, first = pieces[0]
    out = ("-" if sign == "-" else "") + first
    for sign, text in pieces[1:]:
        out += f" {sign} {text}"
    return out


def emit_formula(net, precision=2, output=0):
    """``(formula_text, expression)`` for one output of an all-symbolic network."""
    expr = build_expression(net, output)
    return f"{net.output_names[output]} = {render(expr, precision)}", expr
