"""Benchmark the numba kernels against the pure-numpy fallback.

Times the two hot primitives (CSR weighted gather, row scatter-add) and a
full forward+backward pass on a synthetic graph sized like a mid-size
training run. Results also double as a correctness cross-check: both paths
must agree bitwise.

Usage: python benchmarks/bench_kernels.py [--edges 2000000] [--dim 64]
"""

import argparse
import time

import numpy as np

from agrec import kernels
from agrec.model import ModelConfig, forward
from agrec.synth import assemble_world, planted_world
from agrec.training import backward


def _timeit(fn, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_primitives(n_rows, n_src, n_edges, dim, rng):
    rows = np.sort(rng.integers(0, n_rows, size=n_edges))
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr).astype(np.int64)
    indices = rng.integers(0, n_src, size=n_edges).astype(np.int64)
    coef = rng.uniform(0.01, 1.0, size=n_edges)
    src = rng.normal(size=(n_src, dim))

    out_nb = kernels._gather_rows_numba(indptr, indices, coef, src,
                                        np.zeros((n_rows, dim)))
    out_np = kernels._gather_rows_numpy(indptr, indices, coef, src,
                                        np.zeros((n_rows, dim)))
    assert np.array_equal(out_nb, out_np), "gather paths disagree"

    t_nb = _timeit(lambda: kernels._gather_rows_numba(
        indptr, indices, coef, src, np.zeros((n_rows, dim))))
    t_np = _timeit(lambda: kernels._gather_rows_numpy(
        indptr, indices, coef, src, np.zeros((n_rows, dim))))
    yield "gather_rows", t_nb, t_np

    idx = rng.integers(0, n_rows, size=n_edges).astype(np.int64)
    vals = rng.normal(size=(n_edges, dim))
    acc_nb = np.zeros((n_rows, dim))
    acc_np = np.zeros((n_rows, dim))
    kernels._scatter_rows_numba(acc_nb, idx, vals)
    kernels._scatter_rows_numpy(acc_np, idx, vals)
    assert np.array_equal(acc_nb, acc_np), "scatter paths disagree"

    t_nb = _timeit(lambda: kernels._scatter_rows_numba(
        np.zeros((n_rows, dim)), idx, vals))
    t_np = _timeit(lambda: kernels._scatter_rows_numpy(
        np.zeros((n_rows, dim)), idx, vals))
    yield "scatter_rows", t_nb, t_np


def bench_model_pass(dim, rng):
    """One full-graph forward+backward on a planted world, per backend."""
    world = planted_world(n_users=500, n_items=2000, n_item_keywords=60,
                          n_aesthetic_keywords=30, seed=1)
    bundle, split, _ = assemble_world(world, seed=1)
    cfg = ModelConfig(dim=dim, layers=3, seed=0)
    from agrec.model import init_tables

    tables = init_tables(bundle, cfg)
    pairs = np.asarray(split.train[:4096], dtype=np.int64)
    users, pos = pairs[:, 0], pairs[:, 1]
    negs = rng.integers(0, len(bundle.vocab_i), size=users.shape[0])

    def one_pass():
        stack = forward(tables, bundle, cfg)
        backward(users, pos, negs, stack, bundle, cfg)

    times = {}
    for backend in ("numba", "numpy"):
        kernels._gather_impl = (kernels._gather_rows_numba if backend == "numba"
                                else kernels._gather_rows_numpy)
        kernels._scatter_impl = (kernels._scatter_rows_numba if backend == "numba"
                                 else kernels._scatter_rows_numpy)
        times[backend] = _timeit(one_pass, repeat=3)
    kernels._gather_impl = (kernels._gather_rows_numba
                            if kernels.active_backend() == "numba"
                            else kernels._gather_rows_numpy)
    kernels._scatter_impl = (kernels._scatter_rows_numba
                             if kernels.active_backend() == "numba"
                             else kernels._scatter_rows_numpy)
    yield "forward+backward", times["numba"], times["numpy"]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--edges", type=int, default=2_000_000)
    parser.add_argument("--rows", type=int, default=50_000)
    parser.add_argument("--src", type=int, default=50_000)
    parser.add_argument("--dim", type=int, default=64)
    args = parser.parse_args()

    if not kernels.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"edges={args.edges:,} rows={args.rows:,} dim={args.dim}")
    print(f"{'kernel':<18} {'numba':>10} {'numpy':>10} {'speedup':>9}")
    rows = list(bench_primitives(args.rows, args.src, args.edges, args.dim, rng))
    rows += list(bench_model_pass(args.dim, rng))
    for name, t_nb, t_np in rows:
        print(f"{name:<18} {t_nb * 1e3:>8.1f}ms {t_np * 1e3:>8.1f}ms "
              f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
