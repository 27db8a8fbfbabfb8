"""Material/category taxonomy: tree representation, seller-string matching,
the iterative probability-consistency projection, and hierarchical losses."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DataError, InfeasibleConstraints, InvalidArgument

POSITIVE = 1
NEGATIVE = 0
UNKNOWN = -1

PROB_CLIP = 1e-7
CONVERGENCE_TOL = 1e-6
BOUND_TOL = 1e-9
MAX_SWEEPS = 100


@dataclass(frozen=True)
class TaxonomyNode:
    id: str
    display_name: str
    parent_id: str | None = None
    aliases: tuple[str, ...] = ()


class Taxonomy:
    """Rooted tree of nodes with array views used by the sweep kernels.

    Array indices are assigned in sorted-id order, so every derived
    quantity is independent of the order nodes appear in the source file.
    """

    def __init__(self, nodes: list[TaxonomyNode]):
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate taxonomy node id(s): {dupes}")
        self.nodes = sorted(nodes, key=lambda n: n.id)
        self._index = {n.id: i for i, n in enumerate(self.nodes)}
        roots = [n.id for n in self.nodes if n.parent_id is None]
        if len(roots) != 1:
            raise DataError(f"taxonomy must have exactly one root, found {roots}")
        self.root = roots[0]
        for n in self.nodes:
            if n.parent_id is not None and n.parent_id not in self._index:
                raise DataError(f"node {n.id!r} has dangling parent {n.parent_id!r}")

        n_nodes = len(self.nodes)
        self.parent = np.full(n_nodes, -1, dtype=np.int64)
        for i, n in enumerate(self.nodes):
            if n.parent_id is not None:
                self.parent[i] = self._index[n.parent_id]

        self.depth = np.zeros(n_nodes, dtype=np.int64)
        for i in range(n_nodes):
            d, v, hops = 0, i, 0
            while self.parent[v] != -1:
                v = self.parent[v]
                d += 1
                hops += 1
                if hops > n_nodes:
                    raise DataError(f"cycle in taxonomy at node {self.nodes[i].id!r}")
            self.depth[i] = d

        children: list[list[int]] = [[] for _ in range(n_nodes)]
        for i in range(n_nodes):
            if self.parent[i] != -1:
                children[self.parent[i]].append(i)
        self.child_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
        flat: list[int] = []
        for i in range(n_nodes):
            flat.extend(children[i])
            self.child_ptr[i + 1] = len(flat)
        self.child_idx = np.asarray(flat, dtype=np.int64)

        internal = [i for i in range(n_nodes) if children[i]]
        self.down_order = np.asarray(
            sorted(internal, key=lambda i: (self.depth[i], self.nodes[i].id)), dtype=np.int64
        )
        self.up_order = np.asarray(
            sorted(internal, key=lambda i: (-self.depth[i], self.nodes[i].id)), dtype=np.int64
        )

        self._alias_table = {}
        for n in self.nodes:
            for key in (n.id, n.display_name, *n.aliases):
                norm = _normalize_token(key)
                if norm:
                    self._alias_table.setdefault(norm, n.id)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def index(self, node_id: str) -> int:
        if node_id not in self._index:
            raise InvalidArgument(f"unknown taxonomy node {node_id!r}")
        return self._index[node_id]

    def node(self, node_id: str) -> TaxonomyNode:
        return self.nodes[self.index(node_id)]

    def children_of(self, node_id: str) -> list[str]:
        i = self.index(node_id)
        return [self.nodes[c].id for c in self.child_idx[self.child_ptr[i] : self.child_ptr[i + 1]]]

    def is_leaf(self, node_id: str) -> bool:
        i = self.index(node_id)
        return self.child_ptr[i] == self.child_ptr[i + 1]

    def ancestors_of(self, node_id: str) -> list[str]:
        """Strict ancestors, nearest first."""
        out = []
        v = self.parent[self.index(node_id)]
        while v != -1:
            out.append(self.nodes[v].id)
            v = self.parent[v]
        return out

    def path_to(self, node_id: str) -> list[str]:
        """Root-first path ending at node_id."""
        return list(reversed([node_id] + self.ancestors_of(node_id)))

    def is_valid_path(self, path: list[str]) -> bool:
        if not path or path[0] != self.root:
            return False
        for a, b in zip(path, path[1:]):
            if a not in self._index or b not in self._index:
                return False
            if self.parent[self.index(b)] != self.index(a):
                return False
        return True

    def max_depth(self) -> int:
        return int(self.depth.max())


def load_taxonomy(path) -> Taxonomy:
    """Parse a tab-separated taxonomy file.

    Line format: ``id<TAB>parent_id<TAB>display_name<TAB>aliases`` where
    parent_id is empty for the root and aliases are comma-separated.
    Blank lines and ``#`` comments are skipped.
    """
    nodes = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise DataError(f"{path}:{lineno}: expected at least 3 tab-separated fields")
        node_id, parent_id, display = parts[0].strip(), parts[1].strip(), parts[2].strip()
        if not node_id:
            raise DataError(f"{path}:{lineno}: empty node id")
        if parent_id == node_id:
            raise DataError(f"{path}:{lineno}: node {node_id!r} is its own parent (cycle)")
        aliases = ()
        if len(parts) >= 4 and parts[3].strip():
            aliases = tuple(a.strip() for a in parts[3].split(",") if a.strip())
        nodes.append(TaxonomyNode(node_id, display, parent_id or None, aliases))
    return Taxonomy(nodes)


_PERCENT_RE = re.compile(r"\d+(?:\.\d+)?\s*%")
_NON_ALNUM_RE = re.compile(r"[^a-z0-9]+")
_DELIMITERS_RE = re.compile(r"[,;/|+]|&| and ")


def _normalize_token(token: str) -> str:
    token = token.lower().strip()
    token = _PERCENT_RE.sub(" ", token)
    token = _NON_ALNUM_RE.sub(" ", token)
    return " ".join(token.split())


@dataclass
class MatchResult:
    nodes: list[str]
    unmatched: list[str]


def match_material_string(raw: str, taxonomy: Taxonomy) -> MatchResult:
    """Map a seller-entered materials string to taxonomy node ids.

    The string is lower-cased, stripped of percentages and punctuation,
    split on common delimiters, and each token is looked up exactly
    against node ids, display names, and the alias table. Tokens with no
    match are reported back, never guessed at.
    """
    nodes: list[str] = []
    unmatched: list[str] = []
    for token in _DELIMITERS_RE.split(raw.lower()):
        norm = _normalize_token(token)
        if not norm:
            continue
        hit = taxonomy._alias_table.get(norm)
        if hit is not None:
            if hit not in nodes:
                nodes.append(hit)
        else:
            unmatched.append(norm)
    return MatchResult(nodes, unmatched)


@dataclass
class MaterialLabelState:
    """Per-node hard labels, probabilities, and the fixed mask the
    consistency projection must not move."""

    labels: np.ndarray  # int8: POSITIVE/NEGATIVE/UNKNOWN
    probs: np.ndarray  # float64 in [0, 1]
    fixed: np.ndarray  # bool

    @classmethod
    def empty(cls, taxonomy: Taxonomy) -> "MaterialLabelState":
        n = len(taxonomy)
        return cls(
            labels=np.full(n, UNKNOWN, dtype=np.int8),
            probs=np.zeros(n, dtype=np.float64),
            fixed=np.zeros(n, dtype=bool),
        )

    @classmethod
    def from_labels(
        cls,
        taxonomy: Taxonomy,
        positive=(),
        negative=(),
        probs: dict | None = None,
        fixed=(),
    ) -> "MaterialLabelState":
        """Build a state from node-id collections. POSITIVE propagates to
        ancestors; hard labels pin the matching probability and are fixed."""
        state = cls.empty(taxonomy)
        for node_id in positive:
            for nid in [node_id] + taxonomy.ancestors_of(node_id):
                i = taxonomy.index(nid)
                state.labels[i] = POSITIVE
                state.probs[i] = 1.0
                state.fixed[i] = True
        for node_id in negative:
            i = taxonomy.index(node_id)
            if state.labels[i] == POSITIVE:
                raise InvalidArgument(f"node {node_id!r} is both positive and negative")
            state.labels[i] = NEGATIVE
            state.probs[i] = 0.0
            state.fixed[i] = True
        if probs:
            for node_id, p in probs.items():
                i = taxonomy.index(node_id)
                if not state.fixed[i]:
                    state.probs[i] = float(p)
        for node_id in fixed:
            state.fixed[taxonomy.index(node_id)] = True
        return state

    def copy(self) -> "MaterialLabelState":
        return MaterialLabelState(self.labels.copy(), self.probs.copy(), self.fixed.copy())

    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNKNOWN


def _max_supported(child_his: np.ndarray) -> float:
    """Largest v in [0, 1] with sum_c min(hi_c, v) >= v.

    The gap function is concave piecewise-linear and zero at the origin,
    so the feasible set is an interval [0, V]; walk segments until the
    gap goes negative.
    """
    k = len(child_his)
    hs = np.sort(child_his)
    prev = 0.0
    g_prev = 0.0
    for m in range(k + 1):
        end = hs[m] if m < k else 1.0
        if end > 1.0:
            end = 1.0
        slope = (k - m) - 1
        g_end = g_prev + slope * (end - prev)
        if g_end < 0.0:
            return prev + g_prev / float(-slope)
        prev, g_prev = end, g_end
        if prev >= 1.0:
            break
    return 1.0


def feasible_intervals(taxonomy: Taxonomy, probs: np.ndarray, fixed: np.ndarray):
    """Bottom-up interval propagation over achievable node values.

    Returns (lo, hi) arrays; raises InfeasibleConstraints when some fixed
    value cannot be extended to a fully consistent assignment.
    """
    n = len(taxonomy)
    lo = np.zeros(n)
    hi = np.ones(n)
    violations = []
    order = sorted(range(n), key=lambda i: -taxonomy.depth[i])
    for v in order:
        kids = taxonomy.child_idx[taxonomy.child_ptr[v] : taxonomy.child_ptr[v + 1]]
        if len(kids):
            lo_v = float(np.max(lo[kids]))
            hi_v = _max_supported(hi[kids])
        else:
            lo_v, hi_v = 0.0, 1.0
        if fixed[v]:
            if probs[v] < lo_v - BOUND_TOL or probs[v] > hi_v + BOUND_TOL:
                violations.append(taxonomy.nodes[v].id)
            lo[v] = hi[v] = probs[v]
        else:
            if lo_v > hi_v + BOUND_TOL:
                violations.append(taxonomy.nodes[v].id)
            lo[v], hi[v] = lo_v, min(hi_v, 1.0)
    if violations:
        raise InfeasibleConstraints(
            f"fixed probabilities admit no consistent assignment at node(s) {sorted(violations)}",
            nodes=sorted(violations),
        )
    return lo, hi


def project_consistent_with_info(
    state: MaterialLabelState, taxonomy: Taxonomy, tol: float = CONVERGENCE_TOL
):
    """Run alternating up/down sweeps; returns (projected_state, sweeps_used).

    The feasibility pre-check yields per-node achievable ceilings; sweeps
    respect them so a parent is never raised above what its own fixed
    descendants can support (which would oscillate forever).
    """
    probs = np.asarray(state.probs, dtype=np.float64)
    if np.any(probs < 0) or np.any(probs > 1) or not np.all(np.isfinite(probs)):
        raise InvalidArgument("probabilities must lie in [0, 1]")
    _, cap = feasible_intervals(taxonomy, probs, state.fixed)

    out = state.copy()
    p = out.probs
    fixed = out.fixed
    free = ~fixed
    np.minimum(p, cap, where=free, out=p)
    iterations = 0
    for _ in range(MAX_SWEEPS):
        iterations += 1
        c_up = _kernels.sweep_up(
            p, fixed, cap, taxonomy.up_order, taxonomy.child_ptr, taxonomy.child_idx
        )
        c_down = _kernels.sweep_down(
            p, fixed, cap, taxonomy.down_order, taxonomy.child_ptr, taxonomy.child_idx
        )
        if max(c_up, c_down) < tol:
            break
    return out, iterations


def project_consistent(
    state: MaterialLabelState, taxonomy: Taxonomy, tol: float = CONVERGENCE_TOL
) -> MaterialLabelState:
    """Enforce max-child <= parent <= min(1, child-sum) at every internal
    node without moving fixed entries."""
    out, _ = project_consistent_with_info(state, taxonomy, tol)
    return out


def consistency_violations(taxonomy: Taxonomy, probs: np.ndarray, tol: float = BOUND_TOL):
    """List (node_id, lo, hi, value) for internal nodes breaking the bounds."""
    bad = []
    for v in taxonomy.down_order:
        kids = taxonomy.child_idx[taxonomy.child_ptr[v] : taxonomy.child_ptr[v + 1]]
        lo = float(np.max(probs[kids]))
        hi = min(1.0, float(np.sum(probs[kids])))
        if probs[v] < lo - tol or probs[v] > hi + tol:
            bad.append((taxonomy.nodes[v].id, lo, hi, float(probs[v])))
    return bad


def masked_bce(pred: np.ndarray, state: MaterialLabelState) -> float:
    """Mean binary cross-entropy over hard-labeled nodes only.

    UNKNOWN nodes never contribute, which is what keeps descendants of a
    positively labeled internal node out of the mean unless they carry
    labels of their own.
    """
    mask = state.labeled_mask()
    if not np.any(mask):
        return 0.0
    p = np.clip(np.asarray(pred, dtype=np.float64)[mask], PROB_CLIP, 1.0 - PROB_CLIP)
    y = (state.labels[mask] == POSITIVE).astype(np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def default_level_weights(depth: int) -> np.ndarray:
    """Deeper levels matter less: w_l = 1/l."""
    return 1.0 / np.arange(1, depth + 1)


def hierarchical_ce(pred, path: list[str], level_weights, taxonomy: Taxonomy) -> float:
    """Weighted mean over path levels of -log p(correct child | correct parent).

    ``pred`` maps a parent node id to a child-id -> probability mapping.
    Only distributions under parents on the correct path are consulted.
    """
    if not taxonomy.is_valid_path(path):
        raise InvalidArgument(f"not a root-first taxonomy path: {path}")
    depth = len(path) - 1
    if depth < 1:
        raise InvalidArgument("path must contain at least one level below the root")
    weights = np.asarray(level_weights, dtype=np.float64)
    if len(weights) < depth:
        raise InvalidArgument(f"need >= {depth} level weights, got {len(weights)}")
    if np.any(weights[:depth] <= 0):
        raise InvalidArgument("level weights must be positive")
    num = 0.0
    den = 0.0
    for level in range(1, depth + 1):
        parent_id, child_id = path[level - 1], path[level]
        if parent_id not in pred:
            raise InvalidArgument(f"missing child distribution for node {parent_id!r}")
        p = max(float(pred[parent_id].get(child_id, 0.0)), PROB_CLIP)
        w = float(weights[level - 1])
        num += w * -math.log(p)
        den += w
    return num / den


def hierarchical_accuracy(pred_paths, true_paths, taxonomy: Taxonomy) -> float:
    """Fraction of levels matched, averaged first over level then instance."""
    if len(pred_paths) != len(true_paths) or not true_paths:
        raise InvalidArgument("need equal-length, nonempty path batches")
    per_instance = []
    for pred, true in zip(pred_paths, true_paths):
        if not taxonomy.is_valid_path(true):
            raise InvalidArgument(f"invalid true path: {true}")
        depth = len(true) - 1
        if depth < 1:
            raise InvalidArgument("paths must descend below the root")
        hits = sum(
            1 for lvl in range(1, depth + 1) if lvl < len(pred) and pred[lvl] == true[lvl]
        )
        per_instance.append(hits / depth)
    return float(np.mean(per_instance))
