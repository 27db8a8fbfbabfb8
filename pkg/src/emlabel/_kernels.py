"""Hot numeric kernels: numba-jitted with pure-numpy fallbacks.

Kernel selection is controlled by the EMLABEL_KERNELS environment variable:

* ``auto``  (default) - use numba when importable, else numpy
* ``numba`` - require numba, fail loudly if missing
* ``numpy`` - force the pure-numpy path

All kernels are sequential: reductions run in a fixed order so repeated
runs produce bit-identical results. ``benchmarks/bench_kernels.py``
compares both paths.
"""

from __future__ import annotations

import os

import numpy as np

_MODE = os.environ.get("EMLABEL_KERNELS", "auto").strip().lower()
if _MODE not in ("auto", "numba", "numpy"):
    raise ValueError(f"EMLABEL_KERNELS must be auto|numba|numpy, got {_MODE!r}")

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

if _MODE == "numba" and not _HAVE_NUMBA:  # pragma: no cover
    raise ImportError("EMLABEL_KERNELS=numba but numba is not importable")

USE_NUMBA = _HAVE_NUMBA if _MODE == "auto" else _MODE == "numba"


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------


def sigmoid_np(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def score_sigmoid_np(X, w, b):
    return sigmoid_np(X @ w + b)


def logistic_obj_grad_np(X, y, w, b, lam):
    """Mean log-loss + (lam/2)||w||^2 (bias unpenalized) and its gradient."""
    n = X.shape[0]
    z = X @ w + b
    # softplus(z) - y*z, stable for large |z|
    obj = float(np.mean(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z))
    obj += 0.5 * lam * float(w @ w)
    p = sigmoid_np(z)
    r = p - y
    gw = X.T @ r / n + lam * w
    gb = float(np.mean(r))
    return obj, gw, gb


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


def dup_groups_np(img, txt, img_eps2, txt_eps2):
    """Union-find roots for records whose image OR text embeddings are near.

    Distances are Euclidean; thresholds are squared. Returns an int64 array
    mapping each row to its group root (smallest index in the group).
    """
    n = img.shape[0]
    parent = np.arange(n, dtype=np.int64)
    for i in range(n - 1):
        di = np.sum((img[i + 1 :] - img[i]) ** 2, axis=1)
        dt = np.sum((txt[i + 1 :] - txt[i]) ** 2, axis=1)
        close = np.nonzero((di < img_eps2) | (dt < txt_eps2))[0]
        for off in close:
            j = i + 1 + int(off)
            ri, rj = _find(parent, i), _find(parent, j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    for i in range(n):
        parent[i] = _find(parent, i)
    return parent


def sweep_up_np(p, fixed, cap, up_order, child_ptr, child_idx):
    """Leaves-to-root sweep: clip unfixed parents into [max-child, min(1, sum)],
    never above the node's static feasibility ceiling."""
    max_change = 0.0
    for v in up_order:
        if fixed[v]:
            continue
        lo = 0.0
        s = 0.0
        for c in child_idx[child_ptr[v] : child_ptr[v + 1]]:
            pc = p[c]
            s += pc
            if pc > lo:
                lo = pc
        hi = min(min(1.0, s), cap[v])
        new = min(max(p[v], lo), hi)
        change = abs(new - p[v])
        if change > max_change:
            max_change = change
        p[v] = new
    return max_change


def sweep_down_np(p, fixed, cap, down_order, child_ptr, child_idx):
    """Root-to-leaves sweep: clamp children to min(parent, ceiling), then
    water-fill unfixed children up (multiplicatively, then additively for
    zeros) until the child sum reaches the parent value."""
    max_change = 0.0
    for v in down_order:
        pv = p[v]
        kids = child_idx[child_ptr[v] : child_ptr[v + 1]]
        total = 0.0
        for c in kids:
            if not fixed[c]:
                limit = min(pv, cap[c])
                if p[c] > limit:
                    change = p[c] - limit
                    if change > max_change:
                        max_change = change
                    p[c] = limit
            total += p[c]
        deficit = pv - total
        rounds = 0
        while deficit > 1e-15 and rounds <= 2 * len(kids) + 2:
            rounds += 1
            s_raisable = 0.0
            n_room = 0
            for c in kids:
                if not fixed[c] and p[c] < min(pv, cap[c]):
                    s_raisable += p[c]
                    n_room += 1
            if n_room == 0:
                break
            if s_raisable > 1e-300:
                t = (s_raisable + deficit) / s_raisable
                for c in kids:
                    limit = min(pv, cap[c])
                    if not fixed[c] and p[c] < limit:
                        new = min(limit, t * p[c])
                        delta = new - p[c]
                        deficit -= delta
                        if delta > max_change:
                            max_change = delta
                        p[c] = new
            else:
                add = deficit / n_room
                for c in kids:
                    limit = min(pv, cap[c])
                    if not fixed[c] and p[c] < limit:
                        new = min(limit, p[c] + add)
                        delta = new - p[c]
                        deficit -= delta
                        if delta > max_change:
                            max_change = delta
                        p[c] = new
    return max_change


NUMPY_IMPL = {
    "sigmoid": sigmoid_np,
    "score_sigmoid": score_sigmoid_np,
    "logistic_obj_grad": logistic_obj_grad_np,
    "dup_groups": dup_groups_np,
    "sweep_up": sweep_up_np,
    "sweep_down": sweep_down_np,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

_NUMBA_IMPL = None


def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def sigmoid_nb(z):
        out = np.empty(z.shape[0], dtype=np.float64)
        for i in range(z.shape[0]):
            zi = z[i]
            if zi >= 0.0:
                out[i] = 1.0 / (1.0 + np.exp(-zi))
            else:
                ez = np.exp(zi)
                out[i] = ez / (1.0 + ez)
        return out

    @njit(cache=True)
    def score_sigmoid_nb(X, w, b):
        n, d = X.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            z = b
            for j in range(d):
                z += X[i, j] * w[j]
            if z >= 0.0:
                out[i] = 1.0 / (1.0 + np.exp(-z))
            else:
                ez = np.exp(z)
                out[i] = ez / (1.0 + ez)
        return out

    @njit(cache=True)
    def logistic_obj_grad_nb(X, y, w, b, lam):
        n, d = X.shape
        obj = 0.0
        gw = np.zeros(d, dtype=np.float64)
        gb = 0.0
        for i in range(n):
            z = b
            for j in range(d):
                z += X[i, j] * w[j]
            if z > 0.0:
                obj += z + np.log1p(np.exp(-z)) - y[i] * z
                p = 1.0 / (1.0 + np.exp(-z))
            else:
                obj += np.log1p(np.exp(z)) - y[i] * z
                ez = np.exp(z)
                p = ez / (1.0 + ez)
            r = p - y[i]
            for j in range(d):
                gw[j] += X[i, j] * r
            gb += r
        obj /= n
        reg = 0.0
        for j in range(d):
            gw[j] = gw[j] / n + lam * w[j]
            reg += w[j] * w[j]
        obj += 0.5 * lam * reg
        return obj, gw, gb / n

    @njit(cache=True)
    def _find_nb(parent, i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            nxt = parent[i]
            parent[i] = root
            i = nxt
        return root

    @njit(cache=True)
    def dup_groups_nb(img, txt, img_eps2, txt_eps2):
        n = img.shape[0]
        di = img.shape[1]
        dt = txt.shape[1]
        parent = np.arange(n)
        for i in range(n - 1):
            for j in range(i + 1, n):
                close = False
                acc = 0.0
                for k in range(di):
                    diff = img[i, k] - img[j, k]
                    acc += diff * diff
                    if acc >= img_eps2:
                        break
                if acc < img_eps2:
                    close = True
                else:
                    acc = 0.0
                    for k in range(dt):
                        diff = txt[i, k] - txt[j, k]
                        acc += diff * diff
                        if acc >= txt_eps2:
                            break
                    if acc < txt_eps2:
                        close = True
                if close:
                    ri = _find_nb(parent, i)
                    rj = _find_nb(parent, j)
                    if ri != rj:
                        if ri < rj:
                            parent[rj] = ri
                        else:
                            parent[ri] = rj
        for i in range(n):
            parent[i] = _find_nb(parent, i)
        return parent

    @njit(cache=True)
    def sweep_up_nb(p, fixed, cap, up_order, child_ptr, child_idx):
        max_change = 0.0
        for oi in range(up_order.shape[0]):
            v = up_order[oi]
            if fixed[v]:
                continue
            lo = 0.0
            s = 0.0
            for ci in range(child_ptr[v], child_ptr[v + 1]):
                pc = p[child_idx[ci]]
                s += pc
                if pc > lo:
                    lo = pc
            hi = min(min(1.0, s), cap[v])
            new = min(max(p[v], lo), hi)
            change = abs(new - p[v])
            if change > max_change:
                max_change = change
            p[v] = new
        return max_change

    @njit(cache=True)
    def sweep_down_nb(p, fixed, cap, down_order, child_ptr, child_idx):
        max_change = 0.0
        for oi in range(down_order.shape[0]):
            v = down_order[oi]
            pv = p[v]
            start = child_ptr[v]
            end = child_ptr[v + 1]
            total = 0.0
            for ci in range(start, end):
                c = child_idx[ci]
                if not fixed[c]:
                    limit = min(pv, cap[c])
                    if p[c] > limit:
                        change = p[c] - limit
                        if change > max_change:
                            max_change = change
                        p[c] = limit
                total += p[c]
            deficit = pv - total
            rounds = 0
            max_rounds = 2 * (end - start) + 2
            while deficit > 1e-15 and rounds <= max_rounds:
                rounds += 1
                s_raisable = 0.0
                n_room = 0
                for ci in range(start, end):
                    c = child_idx[ci]
                    if not fixed[c] and p[c] < min(pv, cap[c]):
                        s_raisable += p[c]
                        n_room += 1
                if n_room == 0:
                    break
                if s_raisable > 1e-300:
                    t = (s_raisable + deficit) / s_raisable
                    for ci in range(start, end):
                        c = child_idx[ci]
                        limit = min(pv, cap[c])
                        if not fixed[c] and p[c] < limit:
                            new = min(limit, t * p[c])
                            delta = new - p[c]
                            deficit -= delta
                            if delta > max_change:
                                max_change = delta
                            p[c] = new
                else:
                    add = deficit / n_room
                    for ci in range(start, end):
                        c = child_idx[ci]
                        limit = min(pv, cap[c])
                        if not fixed[c] and p[c] < limit:
                            new = min(limit, p[c] + add)
                            delta = new - p[c]
                            deficit -= delta
                            if delta > max_change:
                                max_change = delta
                            p[c] = new
        return max_change

    return {
        "sigmoid": sigmoid_nb,
        "score_sigmoid": score_sigmoid_nb,
        "logistic_obj_grad": logistic_obj_grad_nb,
        "dup_groups": dup_groups_nb,
        "sweep_up": sweep_up_nb,
        "sweep_down": sweep_down_nb,
    }


def numba_impl():
    """Compile (once) and return the numba kernel table."""
    global _NUMBA_IMPL
    if _NUMBA_IMPL is None:
        if not _HAVE_NUMBA:
            raise ImportError("numba is not available")
        _NUMBA_IMPL = _build_numba_impl()
    return _NUMBA_IMPL


_ACTIVE = numba_impl() if USE_NUMBA else NUMPY_IMPL

sigmoid = _ACTIVE["sigmoid"]
score_sigmoid = _ACTIVE["score_sigmoid"]
logistic_obj_grad = _ACTIVE["logistic_obj_grad"]
dup_groups = _ACTIVE["dup_groups"]
sweep_up = _ACTIVE["sweep_up"]
sweep_down = _ACTIVE["sweep_down"]


def warmup():
    """Trigger JIT compilation of every active kernel on tiny inputs."""
    X = np.ones((2, 2))
    y = np.array([0.0, 1.0])
    w = np.zeros(2)
    sigmoid(np.zeros(2))
    score_sigmoid(X, w, 0.0)
    logistic_obj_grad(X, y, w, 0.0, 1.0)
    dup_groups(X, X, 0.5, 0.5)
    p = np.array([0.5, 0.2])
    fixed = np.array([False, False])
    cap = np.ones(2)
    order = np.array([0], dtype=np.int64)
    ptr = np.array([0, 1, 1], dtype=np.int64)
    idx = np.array([1], dtype=np.int64)
    sweep_up(p, fixed, cap, order, ptr, idx)
    sweep_down(p, fixed, cap, order, ptr, idx)
