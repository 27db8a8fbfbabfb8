import json

import numpy as np
import pytest

from emlabel import _kernels, category_taxonomy_path, materials_taxonomy_path
from emlabel import taxonomy as tax_mod
from emlabel.datastore import ingest_catalog


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the jit kernels once so timed tests measure steady state."""
    _kernels.warmup()


@pytest.fixture(scope="session")
def materials_tax():
    return tax_mod.load_taxonomy(materials_taxonomy_path())


@pytest.fixture(scope="session")
def category_tax():
    return tax_mod.load_taxonomy(category_taxonomy_path())


def write_catalog(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    return path


def make_catalog_file(path, n=20, dim=4, seed=0, text_fn=None, extra=None):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        row = {
            "id": f"obj{i:04d}",
            "title": f"Item {i}",
            "text": text_fn(i) if text_fn else f"plain item number {i}",
            "embedding": [float(x) for x in rng.standard_normal(dim)],
        }
        if extra:
            row.update(extra(i) or {})
        rows.append(row)
    return write_catalog(path, rows)


@pytest.fixture
def small_catalog(tmp_path):
    path = make_catalog_file(tmp_path / "catalog.jsonl", n=24, dim=4, seed=3,
                             text_fn=lambda i: f"wicker basket {i}" if i % 3 == 0 else f"steel knife {i}")
    return ingest_catalog(path, 4).catalog


# --- random taxonomy instances (shared by unit and acceptance tests) --------


def random_tree(rng, max_nodes=12, max_depth=4):
    n = int(rng.integers(2, max_nodes + 1))
    parents = [-1]
    depths = [0]
    for i in range(1, n):
        candidates = [j for j in range(i) if depths[j] < max_depth - 1]
        p = int(rng.choice(candidates))
        parents.append(p)
        depths.append(depths[p] + 1)
    nodes = [
        tax_mod.TaxonomyNode(
            f"n{i:02d}", f"Node {i}", None if parents[i] == -1 else f"n{parents[i]:02d}"
        )
        for i in range(n)
    ]
    return tax_mod.Taxonomy(nodes)


def consistent_assignment(rng, tax):
    """Bottom-up random assignment satisfying the parent bounds exactly."""
    p = np.zeros(len(tax))
    for v in sorted(range(len(tax)), key=lambda i: -tax.depth[i]):
        kids = tax.child_idx[tax.child_ptr[v] : tax.child_ptr[v + 1]]
        if len(kids) == 0:
            p[v] = rng.random()
        else:
            lo = float(p[kids].max())
            hi = min(1.0, float(p[kids].sum()))
            p[v] = lo + (hi - lo) * rng.random()
    return p


def feasible_instance(rng, tax, fixed_rate=0.3):
    """Random probabilities plus a fixed mask that is feasible by
    construction (the fixed values extend to a consistent assignment)."""
    base = consistent_assignment(rng, tax)
    fixed = rng.random(len(tax)) < fixed_rate
    probs = np.where(fixed, base, rng.random(len(tax)))
    state = tax_mod.MaterialLabelState.empty(tax)
    state.probs = probs
    state.fixed = fixed
    return state
