"""SVG activation plots, one file per layer.

Each edge gets a small panel with its curve sampled over the grid domain.
Stroke opacity is the edge's L1 magnitude over the layer maximum, so
pruned-away and zero edges fade out.
"""
import os
import warnings
from xml.sax.saxutils import escape

import numpy as np

from .library import get_basis
from .network import SPLINE, SYMBOLIC, ZERO, edge_eval, forward_layers
from .regularize import edge_magnitudes

PANEL = 90
PAD = 14
SAMPLES = 200


class PlotWarning(UserWarning):
    """A plot could not be written; the pipeline carries on."""


def _curve(edge, xs):
    """Sample points and edge values, with NaN at singular points.

    Poles of a symbolic basis that fall between samples get an extra NaN
    sample, so the curve is never drawn straight across them.
    """
    if edge.form != SYMBOLIC:
        return xs, edge_eval(edge, xs)
    a, b, c, d = edge.affine
    g = get_basis(edge.basis_id)
    if a != 0.0:
        u_ends = a * xs[[0, -1]] + b
        poles = (g.pole_points(u_ends.min(), u_ends.max()) - b) / a
        xs = np.sort(np.concatenate([xs, poles]))
    u = a * xs + b
    bad = g.bad_points(u)
    with np.errstate(all="ignore"):
        y = c * g(np.where(bad, 0.5, u)) + d
    if a != 0.0:
        bad |= np.isin(xs, poles)
    return xs, np.where(bad | ~np.isfinite(y), np.nan, y)


def _paths(xs, ys, x0, y0):
    """Polyline strings for the finite runs of ``ys`` inside one panel."""
    finite = np.isfinite(ys)
    if not finite.any():
        return []
    lo, hi = np.nanmin(ys), np.nanmax(ys)
    span = hi - lo if hi > lo else 1.0
    px = x0 + (xs - xs[0]) / (xs[-1] - xs[0]) * PANEL
    py = y0 + PANEL - (ys - lo) / span * PANEL if hi > lo else np.full_like(ys, y0 + PANEL / 2)
    runs, current = [], []
    for ok, a, b in zip(finite, px, py):
        if ok:
            current.append(f"{a:.2f},{b:.2f}")
        elif current:
            runs.append(current)
            current = []
    if current:
        runs.append(current)
    return [" ".join(r) for r in runs if len(r) > 1]


def layer_svg(layer, magnitudes, title=""):
    """SVG 1.1 document for one layer; ``magnitudes`` is (n_out, n_in)."""
    grid = layer.grid
    xs = np.linspace(grid.domain_lo, grid.domain_hi, SAMPLES)
    top = float(np.max(magnitudes)) if np.size(magnitudes) else 0.0
    width = layer.n_in * (PANEL + PAD) + PAD
    height = layer.n_out * (PANEL + PAD) + PAD + 16
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<title>{escape(title)}</title>',
        f'<text x="{PAD}" y="12" font-family="sans-serif" font-size="10">{escape(title)}</text>',
    ]
    for j in range(layer.n_out):
        for i in range(layer.n_in):
            edge = layer.edge(i, j)
            x0 = PAD + i * (PANEL + PAD)
            y0 = 16 + PAD + j * (PANEL + PAD)
            opacity = 0.0 if edge.form == ZERO or top <= 0 else float(magnitudes[j, i]) / top
            label = {ZERO: "zero", SPLINE: "spline"}.get(edge.form, edge.basis_id)
            parts.append(f'<g id="edge-{i}-{j}" data-form="{edge.form}">')
            parts.append(f'<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" '
                         'fill="none" stroke="#cccccc" stroke-width="0.5"/>')
            parts.append(f'<text x="{x0 + 2}" y="{y0 + 9}" font-family="sans-serif" '
                         f'font-size="7">{i}-&gt;{j} {escape(label)}</text>')
            cx, ys = (xs, np.zeros_like(xs)) if edge.form == ZERO else _curve(edge, xs)
            for pts in _paths(cx, ys, x0, y0):
                parts.append(f'<polyline points="{pts}" fill="none" stroke="#000000" '
                             f'stroke-width="1.2" stroke-opacity="{opacity:.4f}"/>')
            parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def layer_magnitudes(net, X=None):
    """Per-layer (n_out, n_in) L1 magnitudes over ``X`` (or the grid when absent)."""
    if X is None:
        xs = np.linspace(net.grid.domain_lo, net.grid.domain_hi, SAMPLES)
        Xn = np.repeat(xs[:, None], net.shape[0], axis=1)
    else:
        Xn = net.normalize_inputs(np.asarray(X, dtype=np.float64))
    _, trace = forward_layers(net, Xn)
    return [edge_magnitudes(phi) for phi, _ in trace]


def write_plots(net, out_dir, X=None, prefix="layer"):
    """Write ``<out_dir>/<prefix>_<l>.svg`` for every layer; warn instead of failing."""
    written = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        mags = layer_magnitudes(net, X)
    except Exception as exc:  # plots are best-effort
        warnings.warn(f"plots skipped: {exc}", PlotWarning, stacklevel=2)
        return written
    for l, layer in enumerate(net.layers):
        path = os.path.join(out_dir, f"{prefix}_{l}.svg")
        try:
            with open(path, "w") as fh:
                fh.write(layer_svg(layer, mags[l], title=f"layer {l}"))
            written.append(path)
        except Exception as exc:
            warnings.warn(f"plot {path} failed: {exc}", PlotWarning, stacklevel=2)
    return written
