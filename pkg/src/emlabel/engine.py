"""Smart Labeling session engine: candidate selection per mode and
retrain-on-page-advance.

Modes: word-search (seeding), active (uncertainty sampling), correction
(probability range), review (cross-validated mislabel ranking). Pages are
deterministic functions of (project state, seed, mode, params).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import linmodel, textmatch
from .datastore import Catalog, LabelStore, Project
from .errors import FailedPrecondition, InvalidArgument

DEFAULT_POOL_SIZE = 50_000
DEFAULT_PAGE_SIZE = 48

_MODE_SALT = {"SEARCH": 1, "ACTIVE": 2, "CORRECTION": 3, "REVIEW": 4}


@dataclass
class PageItem:
    object_id: str
    probability: float | None
    label: str | None  # POSITIVE | NEGATIVE | None


@dataclass
class CandidatePage:
    mode: str
    items: list[PageItem]
    page_token: str
    pool_stats: dict

    def ids(self) -> list[str]:
        return [it.object_id for it in self.items]


@dataclass
class TrainReport:
    iterations: int
    pool_positive_rate: float | None
    labeled_counts: tuple[int, int]  # (positive, negative)
    model_version: int
    model_stale: bool = False
    retrained: bool = False


def _label_name(v) -> str | None:
    if v is None:
        return None
    return "POSITIVE" if v == 1 else "NEGATIVE"


class LabelingEngine:
    """Serves candidate pages and retrains the per-project linear model.

    The feature standardizer is fit once over the whole catalog embedding
    matrix, so retrains are stable as the labeled set grows.
    """

    def __init__(self, catalog: Catalog, store: LabelStore, lam: float = linmodel.DEFAULT_LAMBDA):
        self.catalog = catalog
        self.store = store
        self.lam = lam
        self._standardizer = (
            linmodel.fit_standardizer(catalog.embeddings) if len(catalog) >= 2 else None
        )

    # -- helpers ------------------------------------------------------------

    def _token(self, *parts) -> str:
        h = hashlib.blake2s("|".join(str(p) for p in parts).encode()).hexdigest()[:16]
        return h

    def _rng(self, proj: Project, mode: str, *extra) -> np.random.Generator:
        return np.random.default_rng(
            [proj.seed & 0xFFFFFFFFFFFFFFFF, _MODE_SALT.get(mode, 0), len(proj.label_log)]
            + [abs(hash_stable(e)) for e in extra]
        )

    def _unlabeled_rows(self, proj: Project) -> np.ndarray:
        labeled = proj.current
        return np.array(
            [i for i, oid in enumerate(self.catalog.ids) if oid not in labeled], dtype=np.int64
        )

    def _labeled_design(self, proj: Project):
        ids = sorted(proj.current)
        rows = np.array([self.catalog.row(oid) for oid in ids], dtype=np.int64)
        emb = self._standardizer.transform(self.catalog.embeddings[rows])
        bits = textmatch.bits_matrix(
            [self.catalog.lower_texts[i] for i in rows], proj.keyword_features
        )
        X = np.hstack([emb, bits.astype(np.float64)])
        y = np.array([proj.current[oid] for oid in ids], dtype=np.float64)
        return ids, X, y

    def _score_rows(self, proj: Project, rows: np.ndarray) -> np.ndarray:
        model = proj.model
        emb = self.catalog.embeddings[rows]
        bits = textmatch.bits_matrix(
            [self.catalog.lower_texts[i] for i in rows], proj.keyword_features
        )
        return linmodel.predict_proba_matrix(model, emb, bits)

    def _pool_sample(self, proj: Project, mode: str, pool_size: int) -> np.ndarray:
        unlabeled = self._unlabeled_rows(proj)
        if len(unlabeled) <= pool_size:
            return unlabeled
        rng = self._rng(proj, mode, pool_size)
        pick = rng.choice(len(unlabeled), size=pool_size, replace=False)
        pick.sort()
        return unlabeled[pick]

    def _pool_stats(self, proj: Project) -> dict:
        pos, neg = proj.labeled_counts()
        return {
            "unlabeled_pool_size": len(self.catalog) - len(proj.current),
            "labeled_pos": pos,
            "labeled_neg": neg,
        }

    def ensure_model(self, proj: Project) -> None:
        """Train the project model if absent; raises FailedPrecondition when
        there are not yet labels from both classes."""
        if proj.model is not None:
            return
        pos, neg = proj.labeled_counts()
        if pos == 0 or neg == 0:
            raise FailedPrecondition(
                "no trained model and insufficient labels to train (need >= 1 positive "
                "and >= 1 negative; use word-search first)"
            )
        self._refit(proj)

    def _refit(self, proj: Project) -> linmodel.LinearModel:
        ids, X, y = self._labeled_design(proj)
        fitted = linmodel.fit_logistic(X, y, self.lam)
        fitted.standardizer = self._standardizer
        fitted.n_keyword_features = len(proj.keyword_features)
        fitted.feature_version = proj.keyword_features.version
        proj.model = fitted
        proj.model_version += 1
        proj.model_stale = False
        self.store.save_project(proj)
        return fitted

    # -- modes ----------------------------------------------------------------

    def word_search_page(
        self, project: str, term: str, page: int = 0, page_size: int = DEFAULT_PAGE_SIZE
    ) -> CandidatePage:
        proj = self.store.get_project(project)
        ids, total = textmatch.word_search(self.catalog, term, proj.seed, page, page_size)
        probs = None
        if proj.model is not None and ids:
            rows = np.array([self.catalog.row(i) for i in ids], dtype=np.int64)
            probs = self._score_rows(proj, rows)
        items = [
            PageItem(
                object_id=oid,
                probability=float(probs[i]) if probs is not None else None,
                label=_label_name(proj.current.get(oid)),
            )
            for i, oid in enumerate(ids)
        ]
        stats = self._pool_stats(proj)
        stats["total_matches"] = total
        return CandidatePage("SEARCH", items, self._token("SEARCH", term, page, proj.seed), stats)

    def next_uncertain_page(
        self,
        project: str,
        pool_size: int = DEFAULT_POOL_SIZE,
        page_size: int = DEFAULT_PAGE_SIZE,
    ) -> CandidatePage:
        proj = self.store.get_project(project)
        self.ensure_model(proj)
        rows = self._pool_sample(proj, "ACTIVE", pool_size)
        if len(rows) == 0:
            return CandidatePage("ACTIVE", [], self._token("ACTIVE", proj.seed), self._pool_stats(proj))
        probs = self._score_rows(proj, rows)
        order = sorted(
            range(len(rows)), key=lambda i: (abs(probs[i] - 0.5), self.catalog.ids[rows[i]])
        )[:page_size]
        items = [
            PageItem(self.catalog.ids[rows[i]], float(probs[i]), None) for i in order
        ]
        return CandidatePage(
            "ACTIVE",
            items,
            self._token("ACTIVE", proj.seed, len(proj.label_log)),
            self._pool_stats(proj),
        )

    def range_page(
        self,
        project: str,
        lo: float,
        hi: float,
        page_size: int = DEFAULT_PAGE_SIZE,
        pool_size: int = DEFAULT_POOL_SIZE,
    ) -> CandidatePage:
        if not (0.0 <= lo < hi <= 1.0):
            raise InvalidArgument(f"need 0 <= lo < hi <= 1, got [{lo}, {hi}]")
        proj = self.store.get_project(project)
        self.ensure_model(proj)
        rows = self._pool_sample(proj, "CORRECTION", pool_size)
        items: list[PageItem] = []
        if len(rows):
            probs = self._score_rows(proj, rows)
            in_range = np.nonzero((probs >= lo) & (probs <= hi))[0]
            rng = self._rng(proj, "CORRECTION", lo, hi)
            if len(in_range) > page_size:
                in_range = rng.choice(in_range, size=page_size, replace=False)
            else:
                in_range = rng.permutation(in_range)
            items = [
                PageItem(self.catalog.ids[rows[i]], float(probs[i]), None) for i in in_range
            ]
        return CandidatePage(
            "CORRECTION",
            items,
            self._token("CORRECTION", proj.seed, lo, hi, len(proj.label_log)),
            self._pool_stats(proj),
        )

    def mislabel_ranking(self, project: str, k: int = 20):
        """(object_id, score, p_heldout, y) sorted by descending score."""
        proj = self.store.get_project(project)
        ids, X, y = self._labeled_design(proj)
        scores, p_heldout = linmodel.mislabel_scores_kfold(X, y, self.lam, proj.seed, k=k)
        ranked = sorted(
            zip(ids, scores, p_heldout, y), key=lambda t: (-t[1], t[0])
        )
        return ranked

    def review_page(
        self, project: str, page_size: int = DEFAULT_PAGE_SIZE, k: int = 20
    ) -> CandidatePage:
        proj = self.store.get_project(project)
        ranked = self.mislabel_ranking(project, k=k)[:page_size]
        items = [
            PageItem(oid, float(p), _label_name(int(yv))) for oid, _, p, yv in ranked
        ]
        return CandidatePage(
            "REVIEW",
            items,
            self._token("REVIEW", proj.seed, k, len(proj.label_log)),
            self._pool_stats(proj),
        )

    # -- retraining -----------------------------------------------------------

    def pool_positive_rate(self, proj: Project, pool_size: int = DEFAULT_POOL_SIZE) -> float | None:
        if proj.model is None:
            return None
        rows = self._pool_sample(proj, "ACTIVE", pool_size)
        if len(rows) == 0:
            return None
        probs = self._score_rows(proj, rows)
        return float(np.mean(probs >= 0.5))

    def advance_and_retrain(self, project: str, page_labels, ts=None) -> TrainReport:
        """Append the page's label events, then refit on all current labels.

        ``page_labels`` is a list of (object_id, value, mode) triples;
        skipped objects simply do not appear. With zero new events the
        refit is skipped and the previous weights stay in place.
        """
        proj = self.store.get_project(project)
        if page_labels:
            self.store.append_events(project, page_labels, ts=ts)
        retrained = False
        if page_labels:
            pos, neg = proj.labeled_counts()
            if pos > 0 and neg > 0:
                self._refit(proj)
                retrained = True
            else:
                # single-class label set: keep serving the previous weights
                proj.model_stale = True
        pos, neg = proj.labeled_counts()
        return TrainReport(
            iterations=proj.model.iterations if proj.model else 0,
            pool_positive_rate=self.pool_positive_rate(proj),
            labeled_counts=(pos, neg),
            model_version=proj.model_version,
            model_stale=proj.model_stale,
            retrained=retrained,
        )

    def retrain(self, project: str) -> TrainReport:
        """Explicit retrain trigger."""
        proj = self.store.get_project(project)
        pos, neg = proj.labeled_counts()
        if pos == 0 or neg == 0:
            raise FailedPrecondition("need >= 1 positive and >= 1 negative label to train")
        self._refit(proj)
        return TrainReport(
            iterations=proj.model.iterations,
            pool_positive_rate=self.pool_positive_rate(proj),
            labeled_counts=(pos, neg),
            model_version=proj.model_version,
            retrained=True,
        )


def hash_stable(value) -> int:
    """Deterministic 63-bit hash for seeding (process-salt-free)."""
    h = hashlib.blake2s(repr(value).encode("utf-8")).digest()[:8]
    return int.from_bytes(h, "big") >> 1
