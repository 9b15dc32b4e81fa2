"""Time the numba kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--samples 40000] [--repeat 5]

Both paths live in the same process: the dispatch in ``wbkan.kernels`` and
``wbkan.spline`` reads ``_accel.HAVE_NUMBA`` at call time, so flipping it
selects the fallback exactly as ``WBKAN_DISABLE_NUMBA=1`` would at import.
Outputs of the two paths are compared before timing.
"""
import argparse
import time

import numpy as np

from wbkan import _accel
from wbkan.kernels import spline_backward, spline_forward
from wbkan.network import backward, init_network
from wbkan.spline import SplineGrid, basis_batch


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n):
    rng = np.random.default_rng(0)
    grid = SplineGrid(G=5, k=3)
    x = rng.uniform(-1, 1, n)
    yield "basis_batch", lambda: basis_batch(x, grid)

    for n_in, n_out in ((1, 3), (3, 7)):
        X = rng.uniform(-1, 1, (n, n_in))
        w_b = rng.normal(size=(n_out, n_in))
        w_s = rng.normal(size=(n_out, n_in))
        coeffs = rng.normal(size=(n_out, n_in, grid.n_basis))
        mask = np.ones((n_out, n_in), dtype=bool)
        G = rng.normal(size=(n, n_out, n_in))

        def layer(X=X, w_b=w_b, w_s=w_s, coeffs=coeffs, mask=mask, G=G):
            _, cache = spline_forward(X, grid, w_b, w_s, coeffs, mask)
            return spline_backward(cache, G, w_b, w_s, coeffs, mask)

        yield f"layer fwd+bwd [{n_in}->{n_out}]", layer

    net = init_network([1, 3, 1], seed=0)
    Xd = rng.uniform(-1, 1, (n, 1))
    yd = np.sin(3 * Xd[:, 0])
    yield "train step [1,3,1] lam=0.01", lambda: backward(net, Xd, yd, 0.01)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=40000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is disabled or missing; nothing to compare")

    print(f"{'case':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args.samples):
        _accel.HAVE_NUMBA = True
        ref = fn()  # also triggers compilation
        t_jit = best_of(fn, args.repeat)
        _accel.HAVE_NUMBA = False
        try:
            alt = fn()
            t_np = best_of(fn, args.repeat)
        finally:
            _accel.HAVE_NUMBA = True
        err = max(float(np.max(np.abs(a - b), initial=0.0))
                  for a, b in zip(_leaves(ref), _leaves(alt)))
        print(f"{name:34s} {t_jit * 1e3:10.2f} {t_np * 1e3:10.2f} {t_np / t_jit:7.1f}x"
              f"   (max |diff| {err:.1e})")


def _leaves(obj):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _leaves(obj[k])
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            yield from _leaves(v)
    else:
        yield np.asarray(getattr(obj, "total", obj), dtype=np.float64)


if __name__ == "__main__":
    main()
