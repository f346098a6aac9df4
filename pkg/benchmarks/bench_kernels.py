"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--size 128] [--repeat 3]

Each kernel is run once per backend to warm up (JIT compile), then timed as
the best of ``--repeat`` runs.  Outputs are checked for agreement.
"""
import argparse
import time

import numpy as np

from fgstereo import _accel
from fgstereo.cost_volume import LabelField, sparse_ncc
from fgstereo.factor_graph import LbpConfig, build_graph, run_lbp
from fgstereo.neighborhood import build_dependency_structure
from fgstereo.postprocess import weighted_median


def _cases(n, rng):
    left = rng.random((n, n))
    right = np.roll(left, -5, axis=1)
    lo = rng.integers(0, 8, n * n)
    size = rng.integers(4, 12, n * n)
    nbrs = build_dependency_structure(left)
    vals = rng.random((n * n, 11)) + 1e-3
    mask = np.arange(11)[None, :] < size[:, None]
    vals = np.where(mask, vals, 0.0)
    prior = LabelField((n, n), lo, size, vals / vals.sum(1, keepdims=True))
    graph = build_graph(prior, nbrs)
    disp = rng.integers(0, 30, (n, n)).astype(float)
    lbp_cfg = LbpConfig(tau=0.0, max_iter=5, min_iter=5)
    return {
        "sparse_ncc": lambda: sparse_ncc(left, right, lo, size),
        "dependency_structure": lambda: build_dependency_structure(left).members,
        "lbp_5_iterations": lambda: run_lbp(graph, lbp_cfg)[0].values,
        "weighted_median": lambda: weighted_median(disp, left),
    }


def _time(fn, repeat):
    fn()
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    cases = _cases(args.size, np.random.default_rng(0))
    print(f"image {args.size}x{args.size}, best of {args.repeat}")
    print(f"{'kernel':24s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases.items():
        res = {}
        for b in ("numba", "numpy"):
            prev = _accel.set_backend(b)
            res[b] = _time(fn, args.repeat)
            _accel.set_backend(prev)
        (tn, on), (tp, op) = res["numba"], res["numpy"]
        diff = float(np.max(np.abs(np.asarray(on, dtype=float) - np.asarray(op, dtype=float))))
        print(f"{name:24s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
