"""Synthetic catalogs and a simulated labeler so the full Smart Labeling
protocol is reproducible and measurable without humans.

Ground truth is a hidden linear function of the embedding thresholded at
the requested prevalence; listing texts are synthesized so seed keywords
correlate with the truth; the oracle flips labels at the configured noise
rate and abstains near the decision boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics as metrics_mod
from . import taxonomy as tax_mod
from .datastore import Catalog, LabelStore, MaterialLabels, ObjectRecord
from .engine import LabelingEngine
from .errors import InvalidArgument
from .linmodel import predict_proba_matrix
from .textmatch import bits_matrix

SEED_KEYWORDS = ("zephyr", "quartz", "garnet")
_FILLERS = (
    "widget", "holder", "classic", "deluxe", "compact", "portable", "indoor",
    "outdoor", "premium", "basic", "set", "kit", "accessory", "spare", "large",
    "small", "modern", "vintage", "durable", "light", "heavy", "pro", "mini", "max",
)
_NEGATIVE_KEYWORD_RATE = 0.02
_SIM_TS = "1970-01-01T00:00:00+00:00"


@dataclass
class SyntheticSpec:
    n_objects: int = 100_000
    embedding_dim: int = 64
    prevalence: float = 0.02
    label_noise: float = 0.02
    abstain_band: float = 0.05
    keyword_correlation: float = 0.5
    seed: int = 7

    def __post_init__(self):
        if self.n_objects < 100:
            raise InvalidArgument("n_objects must be >= 100")
        for name in ("prevalence", "label_noise", "abstain_band", "keyword_correlation"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidArgument(f"{name} must be in [0, 1], got {v}")


@dataclass
class GeneratedCatalog:
    catalog: Catalog
    truth: np.ndarray  # bool, the hidden noiseless label
    score: np.ndarray  # calibrated truth score in [0, 1]; 0.5 at the boundary
    flip: np.ndarray  # bool, per-object noise flips
    spec: SyntheticSpec


def generate_catalog(spec: SyntheticSpec) -> GeneratedCatalog:
    """Embeddings, hidden truth, and keyword-correlated listing texts."""
    rng = np.random.default_rng(spec.seed)
    n, d = spec.n_objects, spec.embedding_dim
    X = rng.standard_normal((n, d))
    w = rng.standard_normal(d)
    raw = X @ w
    k = int(round(n * spec.prevalence))
    if k < 1 or k > n - 1:
        raise InvalidArgument(
            f"prevalence {spec.prevalence} leaves a single class after thresholding"
        )
    tau = float(np.partition(raw, n - k)[n - k])
    truth = raw >= tau
    temp = float(np.std(raw)) / 4.0
    z = (raw - tau) / temp
    score = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
    flip = rng.random(n) < spec.label_noise

    filler_idx = rng.integers(0, len(_FILLERS), size=(n, 3))
    kw_coin = rng.random(n)
    kw_pick = rng.integers(0, len(SEED_KEYWORDS), size=n)
    records = []
    for i in range(n):
        words = [_FILLERS[j] for j in filler_idx[i]]
        rate = spec.keyword_correlation if truth[i] else _NEGATIVE_KEYWORD_RATE
        if kw_coin[i] < rate:
            words.insert(1, SEED_KEYWORDS[kw_pick[i]])
        title = " ".join(words[:2]).title()
        text = f"{title}. {' '.join(words)} model {i:06d}"
        records.append(ObjectRecord(id=f"obj{i:07d}", title=title, text=text))
    catalog = Catalog(records, X)
    return GeneratedCatalog(catalog=catalog, truth=truth, score=score, flip=flip, spec=spec)


def oracle_label(row: int, gen: GeneratedCatalog, abstain_band: float | None = None, noiseless: bool = False) -> str:
    """POSITIVE/NEGATIVE per the (possibly flipped) truth, or SKIP near the
    boundary where a human could not label confidently."""
    band = gen.spec.abstain_band if abstain_band is None else abstain_band
    if abs(gen.score[row] - 0.5) < band:
        return "SKIP"
    value = bool(gen.truth[row])
    if not noiseless and gen.flip[row]:
        value = not value
    return "POSITIVE" if value else "NEGATIVE"


@dataclass
class ProtocolConfig:
    page_size: int = 48
    pool_size: int = 50_000
    test_size: int = 1500
    seed_target: int = 50  # positives and negatives to collect via word search
    seed_label_cap: int = 300
    active_fraction: float = 0.70  # budget share spent before correction passes
    correction_pages: int = 2
    correction_ranges: tuple = ((0.5, 1.0), (0.1, 0.5))
    review_pages: int = 1
    stall_pages: int = 2  # consecutive unlabelable pages before a phase ends


@dataclass
class ProtocolResult:
    strategy: str
    spec: SyntheticSpec
    curve: list  # dicts: labels_used, precision, recall, f1, accuracy
    labels_used: int
    test_size: int
    test_positives: int
    train_positives: int
    errors: int

    def final(self) -> dict:
        return self.curve[-1] if self.curve else {}

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "spec": asdict(self.spec),
            "curve": self.curve,
            "labels_used": self.labels_used,
            "test_size": self.test_size,
            "test_positives": self.test_positives,
            "train_positives": self.train_positives,
            "errors": self.errors,
        }

    def summary_table(self) -> str:
        f = self.final()
        header = f"{'strategy':<10}{'# Train':>9}{'# Train +':>11}{'# Test':>8}{'# Test +':>10}{'# Errors':>10}{'Prec':>7}{'Rec':>7}{'F1':>7}{'Acc':>7}"
        row = (
            f"{self.strategy:<10}{self.labels_used:>9}{self.train_positives:>11}"
            f"{self.test_size:>8}{self.test_positives:>10}{self.errors:>10}"
            f"{100 * f.get('precision', 0.0):>7.1f}{100 * f.get('recall', 0.0):>7.1f}"
            f"{100 * f.get('f1', 0.0):>7.1f}{100 * f.get('accuracy', 0.0):>7.1f}"
        )
        return header + "\n" + row


class _ProtocolRun:
    def __init__(self, spec: SyntheticSpec, budget: int, strategy: str, config: ProtocolConfig):
        if budget < 100:
            raise InvalidArgument("budget must be >= 100 labels")
        if strategy not in ("SMART", "RANDOM"):
            raise InvalidArgument(f"unknown strategy {strategy!r}")
        self.spec = spec
        self.budget = budget
        self.strategy = strategy
        self.config = config
        self.gen = generate_catalog(spec)
        n = len(self.gen.catalog)

        rng = np.random.default_rng([spec.seed, 0x7E57])
        test_rows = np.sort(rng.choice(n, size=min(config.test_size, n // 4), replace=False))
        test_mask = np.zeros(n, dtype=bool)
        test_mask[test_rows] = True
        confident = np.abs(self.gen.score[test_rows] - 0.5) >= spec.abstain_band
        self.test_rows = test_rows[confident]  # undecidable samples are discarded
        self.test_truth = self.gen.truth[self.test_rows]
        self.test_emb = self.gen.catalog.embeddings[self.test_rows]
        self.test_texts = [self.gen.catalog.lower_texts[i] for i in self.test_rows]

        train_rows = np.nonzero(~test_mask)[0]
        records = [self.gen.catalog.records[i] for i in train_rows]
        self.catalog = Catalog(records, self.gen.catalog.embeddings[train_rows])
        self.row_of = {rec.id: train_rows[i] for i, rec in enumerate(records)}

        self.store = LabelStore(self.catalog)
        self.store.create_project("sim", seed=spec.seed)
        self.store.set_features("sim", SEED_KEYWORDS)
        self.engine = LabelingEngine(self.catalog, self.store)
        self.labels_used = 0
        self.curve: list[dict] = []
        self._rng = np.random.default_rng([spec.seed, 0xA11])

    # -- oracle interaction -------------------------------------------------

    def _label_items(self, object_ids, mode: str, noiseless: bool = False):
        events = []
        for oid in object_ids:
            if self.labels_used + len(events) >= self.budget:
                break
            value = oracle_label(self.row_of[oid], self.gen, noiseless=noiseless)
            if value == "SKIP":
                continue
            events.append((oid, value, mode))
        return events

    def _advance(self, events) -> None:
        self.engine.advance_and_retrain("sim", events, ts=_SIM_TS)
        self.labels_used += len(events)

    def _checkpoint(self) -> None:
        proj = self.store.get_project("sim")
        if proj.model is None:
            return
        bits = bits_matrix(self.test_texts, proj.keyword_features)
        probs = predict_proba_matrix(proj.model, self.test_emb, bits)
        pred = probs >= 0.5
        tp = int(np.sum(pred & self.test_truth))
        fp = int(np.sum(pred & ~self.test_truth))
        fn = int(np.sum(~pred & self.test_truth))
        tn = int(np.sum(~pred & ~self.test_truth))
        prf = metrics_mod.binary_prf(tp, fp, fn, tn)
        self.curve.append(
            {
                "labels_used": self.labels_used,
                "precision": prf.precision or 0.0,
                "recall": prf.recall or 0.0,
                "f1": prf.f1 or 0.0,
                "accuracy": prf.accuracy or 0.0,
                "errors": fp + fn,
            }
        )

    def _budget_left(self) -> int:
        return self.budget - self.labels_used

    # -- phases ---------------------------------------------------------------

    def _seed_phase(self):
        proj = self.store.get_project("sim")
        cap = min(self.config.seed_label_cap, self.budget)
        term_idx, page = 0, 0
        stalled = 0
        while self.labels_used < cap:
            pos, neg = proj.labeled_counts()
            if pos >= self.config.seed_target and neg >= self.config.seed_target:
                break
            term = SEED_KEYWORDS[term_idx % len(SEED_KEYWORDS)]
            cp = self.engine.word_search_page("sim", term, page=page, page_size=self.config.page_size)
            fresh = [it.object_id for it in cp.items if it.label is None]
            events = self._label_items(fresh, "WORD_SEARCH")
            if events:
                self.store.append_events("sim", events, ts=_SIM_TS)
                self.labels_used += len(events)
                stalled = 0
            else:
                stalled += 1
            page += 1
            if page * self.config.page_size >= cp.pool_stats["total_matches"] or stalled >= self.config.stall_pages:
                term_idx += 1
                page = 0
                stalled = 0
                if term_idx >= 3 * len(SEED_KEYWORDS):
                    break
        # ensure both classes exist; fall back to random objects if needed
        proj = self.store.get_project("sim")
        guard = 0
        while min(proj.labeled_counts()) == 0 and self._budget_left() > 0 and guard < 50:
            rows = self._rng.choice(len(self.catalog), size=self.config.page_size, replace=False)
            events = self._label_items([self.catalog.ids[r] for r in rows], "WORD_SEARCH")
            if events:
                self.store.append_events("sim", events, ts=_SIM_TS)
                self.labels_used += len(events)
            guard += 1
        if min(proj.labeled_counts()) > 0:
            self.engine.retrain("sim")
            self._checkpoint()

    def _active_phase(self, until: int):
        stalled = 0
        while self.labels_used < until and stalled < self.config.stall_pages:
            cp = self.engine.next_uncertain_page(
                "sim", pool_size=self.config.pool_size, page_size=self.config.page_size
            )
            if not cp.items:
                break
            events = self._label_items(cp.ids(), "ACTIVE")
            if not events:
                stalled += 1
                continue
            stalled = 0
            self._advance(events)
            self._checkpoint()

    def _correction_phase(self):
        for lo, hi in self.config.correction_ranges:
            for _ in range(self.config.correction_pages):
                if self._budget_left() <= 0:
                    return
                cp = self.engine.range_page(
                    "sim", lo, hi, page_size=self.config.page_size, pool_size=self.config.pool_size
                )
                if not cp.items:
                    break
                events = self._label_items(cp.ids(), "CORRECTION")
                if not events:
                    break
                self._advance(events)
                self._checkpoint()

    def _review_phase(self):
        proj = self.store.get_project("sim")
        if len(proj.current) < 20:
            return
        for _ in range(self.config.review_pages):
            if self._budget_left() <= 0:
                return
            cp = self.engine.review_page("sim", page_size=self.config.page_size, k=20)
            events = []
            for item in cp.items:
                if self.labels_used + len(events) >= self.budget:
                    break
                # a careful second look: the noiseless truth, still honoring abstention
                value = oracle_label(self.row_of[item.object_id], self.gen, noiseless=True)
                if value == "SKIP" or value == item.label:
                    continue
                events.append((item.object_id, value, "REVIEW"))
            if not events:
                break
            self._advance(events)
            self._checkpoint()

    def _random_strategy(self):
        order = self._rng.permutation(len(self.catalog))
        cursor = 0
        while self._budget_left() > 0 and cursor < len(order):
            batch = []
            while cursor < len(order) and len(batch) < self.config.page_size:
                batch.append(self.catalog.ids[order[cursor]])
                cursor += 1
            events = self._label_items(batch, "IMPORT")
            if not events:
                continue
            proj = self.store.get_project("sim")
            self.store.append_events("sim", events, ts=_SIM_TS)
            self.labels_used += len(events)
            if min(proj.labeled_counts()) > 0:
                self.engine.retrain("sim")
                self._checkpoint()

    def run(self) -> ProtocolResult:
        if self.strategy == "SMART":
            self._seed_phase()
            self._active_phase(int(self.budget * self.config.active_fraction))
            self._correction_phase()
            self._review_phase()
            self._active_phase(self.budget)
        else:
            self._random_strategy()
        proj = self.store.get_project("sim")
        pos, _ = proj.labeled_counts()
        final = self.curve[-1] if self.curve else {}
        return ProtocolResult(
            strategy=self.strategy,
            spec=self.spec,
            curve=self.curve,
            labels_used=self.labels_used,
            test_size=int(len(self.test_rows)),
            test_positives=int(self.test_truth.sum()),
            train_positives=pos,
            errors=int(final.get("errors", 0)),
        )


def run_protocol(
    spec: SyntheticSpec,
    budget: int,
    strategy: str = "SMART",
    config: ProtocolConfig | None = None,
) -> ProtocolResult:
    """Execute the full labeling flow end-to-end against the oracle.

    SMART: word-search seeding, uncertainty-sampling pages, correction
    passes over [0.5, 1.0] and [0.1, 0.5], one review pass, then active
    pages until the budget runs out. RANDOM: uniformly sampled labels at
    the same retrain cadence. Evaluation is on a held-out uniform test
    set labeled by the noiseless truth with abstained items discarded.
    """
    return _ProtocolRun(spec, budget, strategy, config or ProtocolConfig()).run()


# --- attribute-rich catalog for the imputation harness ----------------------


@dataclass
class McarSpec:
    n_objects: int = 1500
    embedding_dim: int = 16
    latent_dim: int = 6
    embedding_noise: float = 0.6
    attr_noise: float = 0.15
    missing_rate: float = 0.3
    seed: int = 0


def generate_mcar_catalog(
    spec: McarSpec, material_tax: tax_mod.Taxonomy, category_tax: tax_mod.Taxonomy
) -> Catalog:
    """Catalog whose five attributes share a latent factor, with values
    knocked out completely at random.

    The embedding is a noisy view of the latent, so the attributes carry
    information about each other beyond the embedding; that is what makes
    a second fill-in generation measurably better than the first.
    """
    rng = np.random.default_rng(spec.seed)
    n, d, L = spec.n_objects, spec.embedding_dim, spec.latent_dim
    Z = rng.standard_normal((n, L))
    A = rng.standard_normal((L, d)) / np.sqrt(L)
    X = Z @ A + spec.embedding_noise * rng.standard_normal((n, d))

    w_price = rng.standard_normal(L) / np.sqrt(L)
    w_mass = rng.standard_normal(L) / np.sqrt(L)
    log_price = 2.5 + Z @ w_price * 1.2 + spec.attr_noise * rng.standard_normal(n)
    log_mass = 0.3 + Z @ w_mass * 1.4 + spec.attr_noise * rng.standard_normal(n)

    W_r = rng.standard_normal((L, 5)) * 0.9
    r_logits = Z @ W_r + spec.attr_noise * rng.standard_normal((n, 5))
    r_probs = np.exp(r_logits - r_logits.max(axis=1, keepdims=True))
    r_probs /= r_probs.sum(axis=1, keepdims=True)
    n_reviews = rng.integers(1, 200, size=n)

    m_leaves = [nd.id for nd in material_tax.nodes if material_tax.is_leaf(nd.id)]
    W_m = rng.standard_normal((L, len(m_leaves))) * 1.1
    m_choice = np.argmax(Z @ W_m + spec.attr_noise * rng.standard_normal((n, len(m_leaves))), axis=1)

    c_leaves = [nd.id for nd in category_tax.nodes if category_tax.is_leaf(nd.id)]
    W_c = rng.standard_normal((L, len(c_leaves))) * 1.1
    c_choice = np.argmax(Z @ W_c + spec.attr_noise * rng.standard_normal((n, len(c_leaves))), axis=1)

    missing = rng.random((n, 5)) < spec.missing_rate
    root_kids = material_tax.children_of(material_tax.root)
    records = []
    for i in range(n):
        rec = ObjectRecord(id=f"mc{i:06d}", title=f"item {i}", text=f"synthetic item {i:06d}")
        if not missing[i, 0]:
            rec.price = float(np.exp(log_price[i]))
        if not missing[i, 1]:
            rec.mass_kg = float(np.exp(log_mass[i]))
        if not missing[i, 2]:
            leaf = m_leaves[m_choice[i]]
            path = material_tax.path_to(leaf)
            positives = [nid for nid in path if nid != material_tax.root]
            top = path[1] if len(path) > 1 else None
            negatives = [nid for nid in root_kids if nid != top]
            rec.materials = MaterialLabels(positive=positives, negative=negatives)
        if not missing[i, 3]:
            rec.category_path = category_tax.path_to(c_leaves[c_choice[i]])
        if not missing[i, 4]:
            hist = rng.multinomial(int(n_reviews[i]), r_probs[i])
            rec.ratings_hist = [int(x) for x in hist]
            rec.num_reviews = int(hist.sum())
        records.append(rec)
    return Catalog(records, X)
