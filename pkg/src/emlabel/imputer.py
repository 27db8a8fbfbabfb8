"""Two-generation EM-style fill-in of missing attributes.

Each attribute head is a linear model over the object embedding plus the
other (standardized) attributes, with missing inputs at the standardized
mean. Generation 1 trains on observed targets; generation 2 retrains
after synthetic fill-in, so both inputs and targets improve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from . import taxonomy as tax_mod
from .datastore import Catalog, MaterialLabels, ObjectRecord
from .errors import InvalidArgument

TARGETS = ("PRICE", "MASS", "MATERIALS", "CATEGORY", "RATINGS")

# Task loss weights consumed as configuration constants.
DEFAULT_LOSS_WEIGHTS = {
    "PRICE": 5.0,
    "MASS": 5.0,
    "MATERIALS": 140.0,
    "CATEGORY": 1.0,
    "RATINGS": 1.0,
}

LOSS_BY_TARGET = {
    "PRICE": "ALDE",
    "MASS": "ALDE",
    "MATERIALS": "MASKED_BCE",
    "CATEGORY": "HIERARCHICAL_CE",
    "RATINGS": "WEIGHTED_KL",
}

_BLOCK_FOR_TARGET = {
    "PRICE": "price",
    "MASS": "mass",
    "MATERIALS": "materials",
    "CATEGORY": "category",
    "RATINGS": "ratings",
}
_INPUT_ORDER = ("embedding", "price", "mass", "ratings", "materials", "category")

MIN_OBSERVED = 10
RIDGE_LAMBDA = 1e-3


@dataclass
class Features:
    """Catalog-aligned raw feature blocks (NaN marks a missing value)."""

    n: int
    blocks: dict
    present: dict  # target -> bool (value available now, observed or synthetic)
    observed: dict  # target -> bool (value present and not synthetic)
    material_nodes: list
    material_targets: np.ndarray  # (n, M), NaN where a node is unknown
    material_hard: list  # per row: (positive ids, negative ids) or None
    category_paths: list
    n_reviews: np.ndarray


def _ratings_probs(rec: ObjectRecord):
    if rec.ratings_hist is not None and sum(rec.ratings_hist) > 0:
        h = np.asarray(rec.ratings_hist, dtype=np.float64)
        return h / h.sum()
    if rec.ratings_probs is not None:
        return np.asarray(rec.ratings_probs, dtype=np.float64)
    return None


def build_features(catalog: Catalog, material_tax: tax_mod.Taxonomy, category_tax: tax_mod.Taxonomy) -> Features:
    n = len(catalog)
    m_nodes = [node.id for node in material_tax.nodes]
    m_index = {nid: i for i, nid in enumerate(m_nodes)}
    c_nodes = [node.id for node in category_tax.nodes]
    c_index = {nid: i for i, nid in enumerate(c_nodes)}

    price = np.full((n, 1), np.nan)
    mass = np.full((n, 1), np.nan)
    ratings = np.full((n, 5), np.nan)
    materials = np.full((n, len(m_nodes)), np.nan)
    category = np.full((n, len(c_nodes)), np.nan)
    present = {t: np.zeros(n, dtype=bool) for t in TARGETS}
    observed = {t: np.zeros(n, dtype=bool) for t in TARGETS}
    material_hard = [None] * n
    category_paths = [None] * n
    n_reviews = np.zeros(n, dtype=np.float64)

    for i, rec in enumerate(catalog):
        if rec.price is not None and rec.price > 0:
            price[i, 0] = np.log(rec.price)
            present["PRICE"][i] = True
            observed["PRICE"][i] = "price" not in rec.synthetic
        if rec.mass_kg is not None and rec.mass_kg > 0:
            mass[i, 0] = np.log(rec.mass_kg)
            present["MASS"][i] = True
            observed["MASS"][i] = "mass_kg" not in rec.synthetic
        probs = _ratings_probs(rec)
        if probs is not None:
            ratings[i] = probs
            present["RATINGS"][i] = True
            observed["RATINGS"][i] = "ratings" not in rec.synthetic
        n_reviews[i] = rec.num_reviews or 0
        if rec.materials is not None:
            mat = rec.materials
            pos, neg = [], []
            for nid in mat.positive:
                if nid in m_index:
                    materials[i, m_index[nid]] = 1.0
                    pos.append(nid)
            for nid in mat.negative:
                if nid in m_index:
                    materials[i, m_index[nid]] = 0.0
                    neg.append(nid)
            for nid, p in mat.probs.items():
                if nid in m_index and np.isnan(materials[i, m_index[nid]]):
                    materials[i, m_index[nid]] = float(p)
            material_hard[i] = (pos, neg)
            present["MATERIALS"][i] = True
            observed["MATERIALS"][i] = "materials" not in rec.synthetic
        if rec.category_path:
            path = [p for p in rec.category_path if p in c_index]
            if path:
                category[i] = 0.0
                for nid in path:
                    category[i, c_index[nid]] = 1.0
                category_paths[i] = rec.category_path
                present["CATEGORY"][i] = True
                observed["CATEGORY"][i] = "category_path" not in rec.synthetic
    blocks = {
        "embedding": catalog.embeddings,
        "price": price,
        "mass": mass,
        "ratings": ratings,
        "materials": materials,
        "category": category,
    }
    return Features(
        n=n,
        blocks=blocks,
        present=present,
        observed=observed,
        material_nodes=m_nodes,
        material_targets=materials,
        material_hard=material_hard,
        category_paths=category_paths,
        n_reviews=n_reviews,
    )


def _input_matrix(features: Features, target: str, stats=None):
    """Standardized concatenation of all non-target blocks; NaN -> 0."""
    names = [b for b in _INPUT_ORDER if b != _BLOCK_FOR_TARGET[target]]
    X = np.hstack([features.blocks[b] for b in names])
    if stats is None:
        known = ~np.isnan(X)
        counts = known.sum(axis=0)
        filled = np.where(known, X, 0.0)
        safe = np.maximum(counts, 1)
        mean = filled.sum(axis=0) / safe
        var = (np.where(known, (X - mean) ** 2, 0.0)).sum(axis=0) / safe
        std = np.sqrt(var)
        mean = np.where(counts > 0, mean, 0.0)
        std = np.where((counts > 0) & (std > 0), std, 1.0)
        stats = (mean, std)
    Xs = (X - stats[0]) / stats[1]
    return np.nan_to_num(Xs, nan=0.0), stats


def _ridge_fit(X, Y, lam=RIDGE_LAMBDA):
    """Multi-output ridge with unpenalized bias; returns (W, b)."""
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    reg = np.eye(d + 1) * lam
    reg[d, d] = 0.0
    A = Xa.T @ Xa / n + reg
    B = Xa.T @ np.atleast_2d(Y.T).T / n
    sol = np.linalg.solve(A, B)
    return sol[:d], sol[d]


def _softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def _softmax_fit(X, y_idx, n_classes, lam=RIDGE_LAMBDA, iters=400, lr=0.05):
    """Full-batch Adam on multinomial CE from a zero init (deterministic)."""
    n, d = X.shape
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), y_idx] = 1.0
    mW, vW = np.zeros_like(W), np.zeros_like(W)
    mb, vb = np.zeros_like(b), np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for t in range(1, iters + 1):
        P = _softmax(X @ W + b)
        gW = X.T @ (P - Y) / n + lam * W
        gb = (P - Y).mean(axis=0)
        mW = beta1 * mW + (1 - beta1) * gW
        vW = beta2 * vW + (1 - beta2) * gW * gW
        mb = beta1 * mb + (1 - beta1) * gb
        vb = beta2 * vb + (1 - beta2) * gb * gb
        W -= lr * (mW / (1 - beta1**t)) / (np.sqrt(vW / (1 - beta2**t)) + eps)
        b -= lr * (mb / (1 - beta1**t)) / (np.sqrt(vb / (1 - beta2**t)) + eps)
    return W, b


@dataclass
class AttributeHead:
    target: str
    loss: str
    loss_weight: float
    input_stats: tuple | None = None
    model: dict = field(default_factory=dict)
    skipped: bool = False
    reason: str = ""
    train_rows: int = 0


def fit_heads(
    catalog: Catalog,
    generation: int,
    material_tax: tax_mod.Taxonomy,
    category_tax: tax_mod.Taxonomy,
    exclude_rows=(),
    loss_weights=None,
) -> list[AttributeHead]:
    """Fit one head per attribute.

    Generation 1 trains on rows where the target is observed; generation
    2 additionally uses synthetic targets from the previous fill pass.
    Heads whose target is observed on fewer than 10 rows are skipped and
    flagged, not raised.
    """
    if generation not in (1, 2) and generation < 1:
        raise InvalidArgument("generation must be >= 1")
    weights = dict(DEFAULT_LOSS_WEIGHTS)
    if loss_weights:
        weights.update(loss_weights)
    features = build_features(catalog, material_tax, category_tax)
    excluded = np.zeros(features.n, dtype=bool)
    if len(exclude_rows):
        excluded[np.asarray(list(exclude_rows), dtype=np.int64)] = True

    heads = []
    for target in TARGETS:
        head = AttributeHead(target=target, loss=LOSS_BY_TARGET[target], loss_weight=weights[target])
        eligible = features.observed[target] if generation == 1 else features.present[target]
        rows = np.nonzero(eligible & ~excluded)[0]
        n_observed = int(np.count_nonzero(features.observed[target] & ~excluded))
        if n_observed < MIN_OBSERVED:
            head.skipped = True
            head.reason = f"target observed on {n_observed} < {MIN_OBSERVED} objects"
            heads.append(head)
            continue
        head.train_rows = len(rows)
        X_all, stats = _input_matrix(features, target)
        head.input_stats = stats
        X = X_all[rows]
        if target in ("PRICE", "MASS"):
            y = features.blocks[_BLOCK_FOR_TARGET[target]][rows, 0]
            W, b = _ridge_fit(X, y[:, None])
            head.model = {"W": W, "b": b}
        elif target == "RATINGS":
            Y = features.blocks["ratings"][rows]
            W, b = _ridge_fit(X, Y)
            head.model = {"W": W, "b": b}
        elif target == "MATERIALS":
            head.model = {"nodes": {}}
            targets = features.material_targets
            for j, node_id in enumerate(features.material_nodes):
                known = np.nonzero(~np.isnan(targets[:, j]) & eligible & ~excluded)[0]
                if len(known) < 2:
                    prior = float(np.nanmean(targets[:, j])) if len(known) else 0.0
                    head.model["nodes"][node_id] = {"const": 0.0 if np.isnan(prior) else prior}
                    continue
                yj = targets[known, j]
                if np.all(yj == yj[0]):
                    head.model["nodes"][node_id] = {"const": float(yj[0])}
                    continue
                W, b = _ridge_fit(X_all[known], yj[:, None])
                head.model["nodes"][node_id] = {"W": W[:, 0], "b": float(b[0])}
        elif target == "CATEGORY":
            head.model = {"parents": {}}
            for parent in category_tax.nodes:
                child_ids = category_tax.children_of(parent.id)
                if not child_ids:
                    continue
                child_pos = {c: k for k, c in enumerate(child_ids)}
                xs, ys = [], []
                for i in rows:
                    path = features.category_paths[i]
                    if path is None:
                        continue
                    try:
                        at = path.index(parent.id)
                    except ValueError:
                        continue
                    if at + 1 < len(path) and path[at + 1] in child_pos:
                        xs.append(i)
                        ys.append(child_pos[path[at + 1]])
                entry = {"children": child_ids}
                if len(xs) >= 2 and len(set(ys)) >= 2:
                    W, b = _softmax_fit(X_all[np.asarray(xs)], np.asarray(ys), len(child_ids))
                    entry.update(W=W, b=b)
                else:
                    counts = np.ones(len(child_ids))
                    for yv in ys:
                        counts[yv] += 1.0
                    entry["dist"] = counts / counts.sum()
                head.model["parents"][parent.id] = entry
        heads.append(head)
    return heads


def _head_inputs(head: AttributeHead, features: Features) -> np.ndarray:
    X, _ = _input_matrix(features, head.target, stats=head.input_stats)
    return X


def predict_head(head: AttributeHead, features: Features, rows: np.ndarray):
    """Predictions for the given rows, in the head's native output space."""
    if head.skipped:
        raise InvalidArgument(f"head {head.target} was skipped: {head.reason}")
    X = _head_inputs(head, features)[rows]
    if head.target in ("PRICE", "MASS"):
        return X @ head.model["W"][:, 0] + head.model["b"][0]  # log-space
    if head.target == "RATINGS":
        raw = X @ head.model["W"] + head.model["b"]
        clipped = np.maximum(raw, metrics_mod.PROB_FLOOR)
        return clipped / clipped.sum(axis=1, keepdims=True)
    if head.target == "MATERIALS":
        out = np.empty((len(rows), len(features.material_nodes)))
        for j, node_id in enumerate(features.material_nodes):
            entry = head.model["nodes"][node_id]
            if "const" in entry:
                out[:, j] = entry["const"]
            else:
                out[:, j] = X @ entry["W"] + entry["b"]
        return np.clip(out, 0.0, 1.0)
    if head.target == "CATEGORY":
        return X  # callers use category_distributions / predict_paths
    raise InvalidArgument(f"unknown head target {head.target}")


def category_distribution(head: AttributeHead, x_row: np.ndarray, parent_id: str):
    entry = head.model["parents"].get(parent_id)
    if entry is None:
        return None
    if "W" in entry:
        p = _softmax((x_row @ entry["W"] + entry["b"])[None, :])[0]
    else:
        p = entry["dist"]
    return dict(zip(entry["children"], p))


def predict_category_path(head: AttributeHead, x_row: np.ndarray, category_tax: tax_mod.Taxonomy):
    """Greedy root-to-leaf argmax path."""
    path = [category_tax.root]
    while True:
        dist = category_distribution(head, x_row, path[-1])
        if not dist:
            break
        path.append(max(dist.items(), key=lambda kv: (kv[1], kv[0]))[0])
    return path


def _copy_record(rec: ObjectRecord) -> ObjectRecord:
    return ObjectRecord(
        id=rec.id,
        title=rec.title,
        text=rec.text,
        price=rec.price,
        mass_kg=rec.mass_kg,
        package_mass_kg=rec.package_mass_kg,
        materials=MaterialLabels(
            positive=list(rec.materials.positive),
            negative=list(rec.materials.negative),
            probs=dict(rec.materials.probs),
            fixed=list(rec.materials.fixed),
        )
        if rec.materials
        else None,
        category_path=list(rec.category_path) if rec.category_path else None,
        ratings_hist=list(rec.ratings_hist) if rec.ratings_hist else None,
        ratings_probs=list(rec.ratings_probs) if rec.ratings_probs else None,
        num_reviews=rec.num_reviews,
        image_refs=list(rec.image_refs) if rec.image_refs else None,
        source_url=rec.source_url,
        synthetic=set(rec.synthetic),
    )


def fill_missing(
    catalog: Catalog,
    heads,
    material_tax: tax_mod.Taxonomy,
    category_tax: tax_mod.Taxonomy,
) -> Catalog:
    """Fill every missing target with its head prediction (synthetic-flagged).

    Observed values are never touched. Material fills are projected to
    taxonomy consistency with observed nodes held fixed.
    """
    features = build_features(catalog, material_tax, category_tax)
    head_by_target = {h.target: h for h in heads}
    records = [_copy_record(r) for r in catalog.records]
    all_rows = np.arange(features.n)

    cache = {}
    for target in TARGETS:
        head = head_by_target.get(target)
        if head is None or head.skipped:
            continue
        missing = np.nonzero(~features.present[target])[0]
        if target == "MATERIALS":
            # also enrich partially observed rows whose unknown nodes need probabilities
            partial = np.nonzero(
                features.present[target] & np.isnan(features.material_targets).any(axis=1)
            )[0]
            missing = np.unique(np.concatenate([missing, partial]))
        if len(missing) == 0:
            continue
        cache[target] = (missing, predict_head(head, features, missing))

    for target, (rows, preds) in cache.items():
        head = head_by_target[target]
        X_cat = _head_inputs(head, features) if target == "CATEGORY" else None
        for k, i in enumerate(rows):
            rec = records[i]
            if target == "PRICE":
                rec.price = float(np.exp(preds[k]))
                rec.synthetic.add("price")
            elif target == "MASS":
                rec.mass_kg = float(np.exp(preds[k]))
                rec.synthetic.add("mass_kg")
            elif target == "RATINGS":
                rec.ratings_probs = [float(p) for p in preds[k]]
                rec.synthetic.add("ratings")
            elif target == "CATEGORY":
                rec.category_path = predict_category_path(head, X_cat[i], category_tax)
                rec.synthetic.add("category_path")
            elif target == "MATERIALS":
                was_missing = not features.present[target][i]
                state = tax_mod.MaterialLabelState.empty(material_tax)
                state.probs = np.clip(np.asarray(preds[k], dtype=np.float64), 0.0, 1.0)
                known = ~np.isnan(features.material_targets[i])
                state.probs[known] = features.material_targets[i][known]
                state.fixed = known.copy()
                projected = tax_mod.project_consistent(state, material_tax)
                mat = rec.materials or MaterialLabels()
                mat.probs = {
                    nid: float(projected.probs[j])
                    for j, nid in enumerate(features.material_nodes)
                }
                rec.materials = mat
                if was_missing:
                    rec.synthetic.add("materials")
    return Catalog(
        records,
        catalog.embeddings.copy(),
        image_slice=catalog.image_slice,
        text_slice=catalog.text_slice,
    )


def evaluate_heads(heads, catalog, rows, material_tax, category_tax) -> dict:
    """Per-head loss on the given (fully observed) validation rows."""
    features = build_features(catalog, material_tax, category_tax)
    rows = np.asarray(list(rows), dtype=np.int64)
    out = {}
    for head in heads:
        if head.skipped:
            out[head.target] = None
            continue
        if head.target in ("PRICE", "MASS"):
            truth = features.blocks[_BLOCK_FOR_TARGET[head.target]][rows, 0]
            pred = predict_head(head, features, rows)
            out[head.target] = float(np.mean(np.abs(pred - truth)))  # mean ALDE in log space
        elif head.target == "RATINGS":
            pred = predict_head(head, features, rows)
            batch = []
            for k, i in enumerate(rows):
                true = metrics_mod.RatingsDistribution(
                    features.blocks["ratings"][i], int(features.n_reviews[i])
                )
                batch.append((true, metrics_mod.RatingsDistribution(pred[k], 0)))
            out[head.target] = metrics_mod.weighted_mean_kl(batch)
        elif head.target == "MATERIALS":
            pred = predict_head(head, features, rows)
            losses = []
            for k, i in enumerate(rows):
                hard = features.material_hard[i]
                if hard is None or not (hard[0] or hard[1]):
                    continue
                state = tax_mod.MaterialLabelState.from_labels(
                    material_tax, positive=hard[0], negative=hard[1]
                )
                losses.append(tax_mod.masked_bce(pred[k], state))
            out[head.target] = float(np.mean(losses)) if losses else None
        elif head.target == "CATEGORY":
            X = _head_inputs(head, features)
            losses = []
            for i in rows:
                path = features.category_paths[i]
                if path is None or not category_tax.is_valid_path(path):
                    continue
                dists = {}
                ok = True
                for parent_id in path[:-1]:
                    dist = category_distribution(head, X[i], parent_id)
                    if dist is None:
                        ok = False
                        break
                    dists[parent_id] = dist
                if not ok:
                    continue
                weights = tax_mod.default_level_weights(len(path) - 1)
                losses.append(tax_mod.hierarchical_ce(dists, path, weights, category_tax))
            out[head.target] = float(np.mean(losses)) if losses else None
    return out


@dataclass
class EmReport:
    generations: list  # one {target: loss} dict per generation
    val_rows: int

    def improved_counts(self) -> int:
        """Heads whose final-generation loss <= generation-1 loss."""
        if len(self.generations) < 2:
            return 0
        first, last = self.generations[0], self.generations[-1]
        return sum(
            1
            for t in TARGETS
            if first.get(t) is not None and last.get(t) is not None and last[t] <= first[t]
        )


def run_em(
    catalog: Catalog,
    material_tax: tax_mod.Taxonomy,
    category_tax: tax_mod.Taxonomy,
    generations: int = 2,
    seed: int = 0,
    val_fraction: float = 0.2,
    loss_weights=None,
):
    """Alternate fit_heads / fill_missing; returns (report, filled catalog).

    Heads are compared across generations on a held-out, fully observed
    validation split that never enters head training.
    """
    if generations < 1:
        raise InvalidArgument("generations must be >= 1")
    features = build_features(catalog, material_tax, category_tax)
    fully = np.nonzero(
        np.logical_and.reduce([features.observed[t] for t in TARGETS])
    )[0]
    rng = np.random.default_rng(seed)
    n_val = max(1, int(len(fully) * val_fraction)) if len(fully) else 0
    val_rows = np.sort(rng.choice(fully, size=n_val, replace=False)) if n_val else np.array([], dtype=np.int64)

    current = catalog
    gen_losses = []
    for g in range(1, generations + 1):
        heads = fit_heads(
            current,
            min(g, 2),
            material_tax,
            category_tax,
            exclude_rows=val_rows,
            loss_weights=loss_weights,
        )
        current = fill_missing(current, heads, material_tax, category_tax)
        gen_losses.append(evaluate_heads(heads, current, val_rows, material_tax, category_tax))
    return EmReport(generations=gen_losses, val_rows=len(val_rows)), current
