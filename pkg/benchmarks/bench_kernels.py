"""Compiled kernels versus the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Also times a full GNN forward/backward pass and a 540k-id split with each
backend, since those are the two places the kernels sit on a hot path.
"""

import argparse
import random
import time

import numpy as np

from sgkit import _kernels_py

try:
    from sgkit import _kernels as _cy
except ImportError:
    _cy = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    vals = rng.standard_normal((200_000, 64))
    idx = rng.integers(0, 20_000, 200_000)
    n = 540_005
    draws = np.random.Generator(np.random.PCG64(1)).integers(0, np.arange(n, 1, -1))
    return {
        "scatter_add_rows 200k x 64": lambda k: k.scatter_add_rows(vals, idx, 20_000),
        "segment_mean 200k x 64": lambda k: k.segment_mean(vals, idx, 20_000),
        "fisher_yates 540k": lambda k: k.fisher_yates(np.arange(n, dtype=np.int64), draws),
    }


def gnn_case(kernel_module):
    from sgkit import kernels
    from sgkit.encoder import HashEmbeddingBackend, gnn_backward, gnn_forward, init_params, lower
    from sgkit.synth import random_graph

    backend = HashEmbeddingBackend(128)
    graphs = [lower(random_graph(random.Random(s), max_items=30), backend) for s in range(50)]
    params = init_params(128, hidden=128, n_layers=5, seed=0)

    def run():
        saved = (kernels.scatter_add_rows, kernels.segment_mean)
        kernels.scatter_add_rows, kernels.segment_mean = kernel_module.scatter_add_rows, kernel_module.segment_mean
        try:
            for lw in graphs:
                out = gnn_forward(lw, params)
                gnn_backward(lw, params, out, np.ones_like(out.node_states), np.ones_like(out.edge_states))
        finally:
            kernels.scatter_add_rows, kernels.segment_mean = saved

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _kernels_py)] + ([("cython", _cy)] if _cy is not None else [])
    if _cy is None:
        print("compiled extension not built; timing the fallback only")
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng).items():
        rows.append((name, {b: best_of(lambda: fn(mod), args.repeat) for b, mod in backends}))
    rows.append(("GNN fwd+bwd, 50 graphs, D=128, L=5",
                 {b: best_of(gnn_case(mod), args.repeat) for b, mod in backends}))
    print(f"{'case':<38} {'python':>10} {'cython':>10} {'speedup':>8}")
    for name, t in rows:
        cy = t.get("cython")
        speed = f"{t['python'] / cy:7.1f}x" if cy else "      -"
        cy_txt = f"{cy * 1e3:8.1f}ms" if cy else "         -"
        print(f"{name:<38} {t['python'] * 1e3:8.1f}ms {cy_txt} {speed}")


if __name__ == "__main__":
    main()
