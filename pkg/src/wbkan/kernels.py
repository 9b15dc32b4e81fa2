"""Fused forward/backward kernels for the spline edges of one layer.

Two implementations with identical results (to rounding):

* a per-sample loop compiled by numba, which touches only the ``k + 1``
  nonzero bases of each input, and
* a dense numpy path built on the full ``(N, G + k)`` basis matrix.

The numba path is used whenever ``_accel.HAVE_NUMBA`` is true.
"""
import numpy as np

from . import _accel
from .spline import basis_batch, local_basis


@_accel.njit
def _forward_loop(X, lo, hi, G, k, w_b, w_s, coeffs, mask):
    N, n_in = X.shape
    n_out = w_b.shape[0]
    active = np.zeros(n_in, dtype=np.bool_)
    for j in range(n_out):
        for i in range(n_in):
            if mask[j, i]:
                active[i] = True
    first = np.zeros((N, n_in), dtype=np.int64)
    Bl = np.zeros((N, n_in, k + 1))
    sl = np.zeros((N, n_in))
    dsl = np.zeros((N, n_in))
    phi = np.zeros((N, n_out, n_in))
    spl = np.zeros((N, n_out, n_in))
    dspl = np.zeros((N, n_out, n_in))
    vals = np.zeros(k + 1)
    dvals = np.zeros(k + 1)
    prev = np.zeros(k + 1)
    for q in range(N):
        for i in range(n_in):
            if not active[i]:
                continue
            xv = X[q, i]
            f = local_basis(xv, lo, hi, G, k, vals, dvals, prev)
            first[q, i] = f
            for r in range(k + 1):
                Bl[q, i, r] = vals[r]
            sig = 0.5 * (1.0 + np.tanh(0.5 * xv))
            s = xv * sig
            sl[q, i] = s
            dsl[q, i] = sig * (1.0 + xv * (1.0 - sig))
            for j in range(n_out):
                if not mask[j, i]:
                    continue
                acc = 0.0
                dacc = 0.0
                for r in range(k + 1):
                    acc += coeffs[j, i, f + r] * vals[r]
                    dacc += coeffs[j, i, f + r] * dvals[r]
                spl[q, j, i] = acc
                dspl[q, j, i] = dacc
                phi[q, j, i] = w_b[j, i] * s + w_s[j, i] * acc
    return phi, first, Bl, sl, dsl, spl, dspl


@_accel.njit
def _backward_loop(Gphi, first, Bl, sl, dsl, spl, dspl, w_b, w_s, mask, nb):
    N, n_out, n_in = Gphi.shape
    k1 = Bl.shape[2]
    g_wb = np.zeros((n_out, n_in))
    g_ws = np.zeros((n_out, n_in))
    g_c = np.zeros((n_out, n_in, nb))
    dX = np.zeros((N, n_in))
    for q in range(N):
        for j in range(n_out):
            for i in range(n_in):
                if not mask[j, i]:
                    continue
                g = Gphi[q, j, i]
                if g == 0.0:
                    continue
                g_wb[j, i] += g * sl[q, i]
                g_ws[j, i] += g * spl[q, j, i]
                f = first[q, i]
                gw = g * w_s[j, i]
                for r in range(k1):
                    g_c[j, i, f + r] += gw * Bl[q, i, r]
                dX[q, i] += g * (w_b[j, i] * dsl[q, i] + w_s[j, i] * dspl[q, j, i])
    return g_wb, g_ws, g_c, dX


def _silu_pair(X):
    sig = 0.5 * (1.0 + np.tanh(0.5 * X))
    return X * sig, sig * (1.0 + X * (1.0 - sig))


def _forward_numpy(X, grid, w_b, w_s, coeffs, mask):
    N, n_in = X.shape
    nb = grid.n_basis
    B = np.zeros((N, n_in, nb))
    dB = np.zeros((N, n_in, nb))
    for i in np.nonzero(mask.any(axis=0))[0]:
        B[:, i], dB[:, i] = basis_batch(X[:, i], grid)
    s, ds = _silu_pair(X)
    spl = np.einsum("nib,jib->nji", B, coeffs)
    phi = np.where(mask, w_b * s[:, None, :] + w_s * spl, 0.0)
    return phi, {"B": B, "dB": dB, "silu": s, "dsilu": ds, "spl": spl}


def _backward_numpy(cache, Gphi, w_b, w_s, coeffs, mask):
    Gs = Gphi * mask
    g_wb = np.einsum("nji,ni->ji", Gs, cache["silu"])
    g_ws = np.einsum("nji,nji->ji", Gs, cache["spl"])
    g_c = np.einsum("nji,nib->jib", Gs, cache["B"]) * w_s[..., None]
    dspl = np.einsum("nib,jib->nji", cache["dB"], coeffs)
    dX = np.einsum("nji,ji->ni", Gs, w_b) * cache["dsilu"]
    dX += np.einsum("nji,nji->ni", Gs * w_s, dspl)
    return g_wb, g_ws, g_c, dX


def spline_forward(X, grid, w_b, w_s, coeffs, mask):
    """Spline-edge outputs (zero on non-spline edges) and a backward cache."""
    if _accel.HAVE_NUMBA:
        X = np.ascontiguousarray(X, dtype=np.float64)
        phi, first, Bl, sl, dsl, spl, dspl = _forward_loop(
            X, float(grid.domain_lo), float(grid.domain_hi), int(grid.G), int(grid.k),
            w_b, w_s, coeffs, mask)
        return phi, {"kind": "loop", "first": first, "Bl": Bl, "silu": sl,
                     "dsilu": dsl, "spl": spl, "dspl": dspl}
    phi, cache = _forward_numpy(X, grid, w_b, w_s, coeffs, mask)
    cache["kind"] = "dense"
    return phi, cache


def spline_backward(cache, Gphi, w_b, w_s, coeffs, mask):
    """Gradients (w_b, w_s, coeffs) and dL/dX for the spline edges."""
    if cache["kind"] == "loop":
        return _backward_loop(np.ascontiguousarray(Gphi), cache["first"], cache["Bl"],
                              cache["silu"], cache["dsilu"], cache["spl"], cache["dspl"],
                              w_b, w_s, mask, coeffs.shape[2])
    return _backward_numpy(cache, Gphi, w_b, w_s, coeffs, mask)
