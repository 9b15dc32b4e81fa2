"""Uniform-knot B-spline bases and their derivatives.

A grid with ``G`` intervals and order ``k`` on ``[lo, hi]`` has ``G + 2k + 1``
knots (``k`` extra equally spaced knots beyond each end) and ``G + k`` basis
functions. Inputs outside the domain are clamped to the boundary, so the
bases keep their partition-of-unity property everywhere and the derivative
vanishes outside ``[lo, hi]``.
"""
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import GridError


@dataclass(frozen=True)
class SplineGrid:
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    G: int = 5
    k: int = 3

    def __post_init__(self):
        if int(self.G) != self.G or self.G < 1:
            raise GridError(f"grid needs at least one interval, got G={self.G}")
        if int(self.k) != self.k or self.k < 0:
            raise GridError(f"spline order must be non-negative, got k={self.k}")
        if not (np.isfinite(self.domain_lo) and np.isfinite(self.domain_hi)):
            raise GridError("grid domain must be finite")
        if not self.domain_lo < self.domain_hi:
            raise GridError(
                f"reversed or empty domain [{self.domain_lo}, {self.domain_hi}]"
            )

    @property
    def h(self):
        return (self.domain_hi - self.domain_lo) / self.G

    @property
    def n_basis(self):
        return self.G + self.k

    @property
    def knots(self):
        m = np.arange(self.G + 2 * self.k + 1, dtype=np.float64)
        return self.domain_lo + (m - self.k) * self.h

    def to_dict(self):
        return {"domain_lo": self.domain_lo, "domain_hi": self.domain_hi,
                "G": self.G, "k": self.k}


# --------------------------------------------------------------------------
# kernels

@_accel.njit
def local_basis(xv, lo, hi, G, k, vals, dvals, prev):
    """Nonzero bases at one point.

    Fills ``vals[r] = B_{s-k+r}(x)`` and ``dvals`` likewise for r = 0..k and
    returns the first basis index ``s - k``. ``prev`` is scratch of length k + 1.

    Works in units of the knot spacing: with ``u`` the offset of x inside its
    interval, every Cox-de Boor denominator on a uniform grid equals the
    current degree.
    """
    h = (hi - lo) / G
    inside = lo <= xv <= hi
    xv = min(max(xv, lo), hi)
    pos = (xv - lo) / h
    jv = min(max(int(np.floor(pos)), 0), G - 1)
    u = pos - jv
    vals[0] = 1.0
    for j in range(1, k + 1):
        if j == k:
            for r in range(k):
                prev[r] = vals[r]
        inv = 1.0 / j
        saved = 0.0
        for r in range(j):
            temp = vals[r] * inv
            vals[r] = saved + (r + 1 - u) * temp
            saved = (u + j - r - 1) * temp
        vals[j] = saved
    for r in range(k + 1):
        dvals[r] = 0.0
    if k > 0 and inside:
        # d/dx B_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h on uniform knots
        for r in range(k + 1):
            d = 0.0
            if r >= 1:
                d += prev[r - 1]
            if r <= k - 1:
                d -= prev[r]
            dvals[r] = d / h
    return jv


@_accel.njit
def _basis_loop(x, lo, hi, G, k):
    n = x.shape[0]
    B = np.zeros((n, G + k))
    dB = np.zeros((n, G + k))
    vals = np.zeros(k + 1)
    dvals = np.zeros(k + 1)
    prev = np.zeros(k + 1)
    for q in range(n):
        first = local_basis(x[q], lo, hi, G, k, vals, dvals, prev)
        for r in range(k + 1):
            B[q, first + r] = vals[r]
            dB[q, first + r] = dvals[r]
    return B, dB


def _basis_numpy(x, lo, hi, G, k):
    """Vectorised Cox-de Boor over the full knot vector."""
    h = (hi - lo) / G
    inside = (x >= lo) & (x <= hi)
    xc = np.clip(x, lo, hi)
    n_knots = G + 2 * k + 1
    t = lo + (np.arange(n_knots) - k) * h
    span = np.clip(np.floor((xc - lo) / h).astype(np.int64), 0, G - 1) + k
    Bp = np.zeros((x.shape[0], n_knots - 1))
    Bp[np.arange(x.shape[0]), span] = 1.0
    lower = Bp
    xcol = xc[:, None]
    for p in range(1, k + 1):
        lower = Bp
        m = np.arange(n_knots - 1 - p)
        Bp = ((xcol - t[m]) * lower[:, m] + (t[m + p + 1] - xcol) * lower[:, m + 1]) / (p * h)
    B = Bp
    if k == 0:
        dB = np.zeros_like(B)
    else:
        dB = (lower[:, :-1] - lower[:, 1:]) / h
        dB[~inside] = 0.0
    return B, dB


def basis_batch(x, grid):
    """Basis values and derivatives at every sample of ``x``, each (N, G+k)."""
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if _accel.HAVE_NUMBA:
        return _basis_loop(x, float(grid.domain_lo), float(grid.domain_hi),
                           int(grid.G), int(grid.k))
    return _basis_numpy(x, float(grid.domain_lo), float(grid.domain_hi),
                        int(grid.G), int(grid.k))


def basis_values(grid, x):
    """B_i(x) for i = 1..G+k at a single point."""
    return basis_batch(np.array([x], dtype=np.float64), grid)[0][0]


def basis_derivatives(grid, x):
    """dB_i/dx at a single point (zero outside the domain, where x is clamped)."""
    return basis_batch(np.array([x], dtype=np.float64), grid)[1][0]
