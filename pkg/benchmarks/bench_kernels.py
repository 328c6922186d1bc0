"""Compare the compiled and numpy kernels on a batched forward+backward pass.

    python benchmarks/bench_kernels.py [--graphs 200] [--template rings+gnn] [--repeat 20]
"""
import argparse
import time

import numpy as np

from lrnn import _pykernels
from lrnn.autodiff import init_params
from lrnn.graph import flatten, stacked_params
from lrnn.molecules import builtin_template, generate_synthetic
from lrnn.train import build_graphs

try:
    from lrnn import _ckernels
except ImportError:
    _ckernels = None


def bench(impl, flat, W, B, repeat):
    grad = np.zeros((flat.n_nodes, flat.d))
    best_f = best_b = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        values = impl.forward(flat, W, B)
        t1 = time.perf_counter()
        grad[:] = 0.0
        grad[flat.outputs] = 1.0
        impl.backward(flat, values, W, B, grad)
        t2 = time.perf_counter()
        best_f, best_b = min(best_f, t1 - t0), min(best_b, t2 - t1)
    return values, best_f, best_b


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--graphs", type=int, default=200)
    ap.add_argument("--template", default="rings+gnn")
    ap.add_argument("--layers", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    t = builtin_template(args.template, args.layers)
    params = init_params(t, 3, 42)
    corpus = generate_synthetic("random-ring-task", args.graphs, 42)
    flat = flatten(build_graphs(corpus, t, params))
    W, B = stacked_params(flat, params)
    print(f"{args.graphs} graphs, {flat.n_nodes} nodes, {len(flat.in_src)} edges, template {args.template}")

    rows = [("numpy", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    ref = None
    for name, impl in rows:
        values, f, b = bench(impl, flat, W, B, args.repeat)
        if ref is None:
            ref, base = values, f + b
        diff = float(np.max(np.abs(values - ref)))
        print(f"{name:7s} forward {f * 1e3:8.2f} ms  backward {b * 1e3:8.2f} ms  "
              f"speedup {base / (f + b):5.2f}x  max|diff| {diff:.1e}")
    if _ckernels is None:
        print("compiled kernels not built; only the numpy path was timed")


if __name__ == "__main__":
    main()
