#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--repeats N]

Both paths are loaded into one process (the env flag only changes which
one the package binds at import), so the comparison is apples to apples.
Numba timings exclude JIT compilation via a warmup pass.
"""

import argparse
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from emlabel import _kernels
from emlabel.taxonomy import feasible_intervals


def _time(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _make_tree_arrays(rng, n_nodes=4000, branching=4):
    parents = np.full(n_nodes, -1, dtype=np.int64)
    for i in range(1, n_nodes):
        parents[i] = rng.integers(max(0, (i - 1) // branching), i)
    children = [[] for _ in range(n_nodes)]
    for i in range(1, n_nodes):
        children[parents[i]].append(i)
    ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    flat = []
    for i in range(n_nodes):
        flat.extend(children[i])
        ptr[i + 1] = len(flat)
    idx = np.asarray(flat, dtype=np.int64)
    depth = np.zeros(n_nodes, dtype=np.int64)
    for i in range(1, n_nodes):
        depth[i] = depth[parents[i]] + 1
    internal = [i for i in range(n_nodes) if children[i]]
    down = np.asarray(sorted(internal, key=lambda i: depth[i]), dtype=np.int64)
    up = np.asarray(sorted(internal, key=lambda i: -depth[i]), dtype=np.int64)
    return ptr, idx, up, down


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if not _kernels._HAVE_NUMBA:
        print("numba unavailable; nothing to compare")
        return 1
    np_impl = _kernels.NUMPY_IMPL
    nb_impl = _kernels.numba_impl()
    rng = np.random.default_rng(0)

    rows = []

    # pool scoring: 200k x 64 catalog sample
    X = rng.standard_normal((200_000, 64))
    w = rng.standard_normal(64)
    nb_impl["score_sigmoid"](X[:10], w, 0.0)
    rows.append(
        (
            "score_sigmoid (200k x 64)",
            _time(np_impl["score_sigmoid"], X, w, 0.0, repeats=args.repeats),
            _time(nb_impl["score_sigmoid"], X, w, 0.0, repeats=args.repeats),
        )
    )

    # logistic objective+gradient: the retrain inner loop
    Xt = rng.standard_normal((5_000, 67))
    yt = (rng.random(5_000) < 0.3).astype(np.float64)
    wt = rng.standard_normal(67)
    nb_impl["logistic_obj_grad"](Xt[:10], yt[:10], wt, 0.0, 1.0)
    rows.append(
        (
            "logistic_obj_grad (5k x 67)",
            _time(np_impl["logistic_obj_grad"], Xt, yt, wt, 0.0, 1.0, repeats=args.repeats),
            _time(nb_impl["logistic_obj_grad"], Xt, yt, wt, 0.0, 1.0, repeats=args.repeats),
        )
    )

    # duplicate grouping: all-pairs with early exit
    img = rng.standard_normal((3_000, 16))
    txt = rng.standard_normal((3_000, 16))
    nb_impl["dup_groups"](img[:5], txt[:5], 0.5, 0.5)
    rows.append(
        (
            "dup_groups (3k records)",
            _time(np_impl["dup_groups"], img, txt, 0.5, 0.5, repeats=max(1, args.repeats // 2)),
            _time(nb_impl["dup_groups"], img, txt, 0.5, 0.5, repeats=max(1, args.repeats // 2)),
        )
    )

    # taxonomy consistency sweeps on a large tree
    ptr, idx, up, down = _make_tree_arrays(rng)
    p0 = rng.random(len(ptr) - 1)
    fixed = rng.random(len(ptr) - 1) < 0.2
    cap = np.ones(len(ptr) - 1)
    nb_impl["sweep_up"](p0.copy(), fixed, cap, up, ptr, idx)
    nb_impl["sweep_down"](p0.copy(), fixed, cap, down, ptr, idx)

    def np_sweeps():
        p = p0.copy()
        np_impl["sweep_up"](p, fixed, cap, up, ptr, idx)
        np_impl["sweep_down"](p, fixed, cap, down, ptr, idx)

    def nb_sweeps():
        p = p0.copy()
        nb_impl["sweep_up"](p, fixed, cap, up, ptr, idx)
        nb_impl["sweep_down"](p, fixed, cap, down, ptr, idx)

    rows.append(
        (
            "consistency sweeps (4k-node tree)",
            _time(np_sweeps, repeats=args.repeats),
            _time(nb_sweeps, repeats=args.repeats),
        )
    )

    print(f"{'kernel':<36}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for name, t_np, t_nb in rows:
        print(f"{name:<36}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms{t_np / t_nb:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
