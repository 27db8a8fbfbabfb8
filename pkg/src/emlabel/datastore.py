"""Catalog ingest/dedup/export and the append-only label-event log.

The catalog file is line-delimited JSON (UTF-8), one object per line with
fields: id, title, text, embedding, price, mass_kg, package_mass_kg,
materials, category_path, ratings_hist, num_reviews, image_refs,
source_url. The label log is line-delimited JSON events (seq, project,
object_id, value, mode, ts). Labeling state is whatever the log replays
to: corrections are new events, never edits.
"""

from __future__ import annotations

import datetime as dt
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, linmodel, textmatch
from .errors import (
    AlreadyExists,
    DataError,
    FailedPrecondition,
    InvalidArgument,
    NotFound,
)

POUNDS_TO_KG = 0.45359237
DEFAULT_SEED = 20240501

LABEL_VALUES = ("POSITIVE", "NEGATIVE", "CLEAR")
LABEL_MODES = ("WORD_SEARCH", "ACTIVE", "CORRECTION", "REVIEW", "IMPORT")

# Optional attributes counted when dedup keeps "the record with the most
# attributes filled in".
OPTIONAL_ATTRS = (
    "price",
    "mass_kg",
    "package_mass_kg",
    "materials",
    "category_path",
    "ratings_hist",
    "num_reviews",
    "image_refs",
    "source_url",
)


def pounds_to_kg(lb: float) -> float:
    return lb * POUNDS_TO_KG


@dataclass
class MaterialLabels:
    """Record-level material annotations in serialization form."""

    positive: list[str] = field(default_factory=list)
    negative: list[str] = field(default_factory=list)
    probs: dict[str, float] = field(default_factory=dict)
    fixed: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "positive": self.positive,
            "negative": self.negative,
            "probs": self.probs,
            "fixed": self.fixed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "MaterialLabels":
        return cls(
            positive=list(d.get("positive", [])),
            negative=list(d.get("negative", [])),
            probs={k: float(v) for k, v in d.get("probs", {}).items()},
            fixed=list(d.get("fixed", [])),
        )


@dataclass
class ObjectRecord:
    id: str
    title: str = ""
    text: str = ""
    embedding: np.ndarray | None = None
    price: float | None = None
    mass_kg: float | None = None
    package_mass_kg: float | None = None
    materials: MaterialLabels | None = None
    category_path: list[str] | None = None
    ratings_hist: list[int] | None = None
    ratings_probs: list[float] | None = None  # synthetic fills; observed ratings use the hist
    num_reviews: int | None = None
    image_refs: list[str] | None = None
    source_url: str | None = None
    synthetic: set[str] = field(default_factory=set)

    def attr_count(self) -> int:
        return sum(1 for a in OPTIONAL_ATTRS if getattr(self, a) is not None)

    def to_json(self) -> dict:
        d = {"id": self.id, "title": self.title, "text": self.text}
        d["embedding"] = [float(x) for x in self.embedding]
        for a in OPTIONAL_ATTRS:
            v = getattr(self, a)
            if v is None:
                continue
            d[a] = v.to_json() if a == "materials" else v
        if self.ratings_probs is not None:
            d["ratings_probs"] = self.ratings_probs
        if self.synthetic:
            d["synthetic"] = sorted(self.synthetic)
        return d


def _parse_record(d: dict, expected_dim: int) -> tuple[ObjectRecord, np.ndarray]:
    if not isinstance(d, dict):
        raise DataError("record is not a key/value object")
    oid = d.get("id")
    if not isinstance(oid, str) or not oid:
        raise DataError("missing or empty id")
    emb = d.get("embedding")
    if not isinstance(emb, list):
        raise DataError(f"record {oid!r}: missing embedding")
    vec = np.asarray(emb, dtype=np.float64)
    if vec.ndim != 1 or len(vec) != expected_dim:
        raise DataError(f"record {oid!r}: embedding has dim {vec.shape}, expected {expected_dim}")
    if not np.all(np.isfinite(vec)):
        raise DataError(f"record {oid!r}: non-finite embedding values")

    rec = ObjectRecord(id=oid, title=str(d.get("title", "")), text=str(d.get("text", "")))
    if "price" in d:
        rec.price = float(d["price"])
        if rec.price < 0:
            raise DataError(f"record {oid!r}: negative price")
    mass = d.get("mass_kg")
    if mass is None and "mass_lb" in d:
        mass = pounds_to_kg(float(d["mass_lb"]))
    if mass is not None:
        rec.mass_kg = float(mass)
        if rec.mass_kg <= 0:
            raise DataError(f"record {oid!r}: mass must be > 0 kg")
    pmass = d.get("package_mass_kg")
    if pmass is None and "package_mass_lb" in d:
        pmass = pounds_to_kg(float(d["package_mass_lb"]))
    if pmass is not None:
        rec.package_mass_kg = float(pmass)
        if rec.package_mass_kg <= 0:
            raise DataError(f"record {oid!r}: package mass must be > 0 kg")
    if "materials" in d and d["materials"] is not None:
        rec.materials = MaterialLabels.from_json(d["materials"])
    if "category_path" in d and d["category_path"] is not None:
        rec.category_path = [str(x) for x in d["category_path"]]
    if "ratings_hist" in d and d["ratings_hist"] is not None:
        hist = [int(x) for x in d["ratings_hist"]]
        if len(hist) != 5 or any(x < 0 for x in hist):
            raise DataError(f"record {oid!r}: ratings_hist must be 5 non-negative counts")
        rec.ratings_hist = hist
    if "num_reviews" in d and d["num_reviews"] is not None:
        rec.num_reviews = int(d["num_reviews"])
        if rec.num_reviews < 0:
            raise DataError(f"record {oid!r}: num_reviews must be >= 0")
    if rec.ratings_hist is not None:
        total = sum(rec.ratings_hist)
        if rec.num_reviews is None:
            rec.num_reviews = total
        elif rec.num_reviews != total:
            raise DataError(
                f"record {oid!r}: ratings_hist sums to {total}, num_reviews is {rec.num_reviews}"
            )
    if "ratings_probs" in d and d["ratings_probs"] is not None:
        probs = [float(x) for x in d["ratings_probs"]]
        if len(probs) != 5 or any(p < 0 for p in probs):
            raise DataError(f"record {oid!r}: ratings_probs must be 5 non-negative floats")
        rec.ratings_probs = probs
    if "image_refs" in d and d["image_refs"] is not None:
        rec.image_refs = [str(x) for x in d["image_refs"]]
    if "source_url" in d and d["source_url"] is not None:
        rec.source_url = str(d["source_url"])
    rec.synthetic = set(d.get("synthetic", []))
    return rec, vec


class Catalog:
    """Immutable snapshot of the object catalog.

    Embeddings live in one contiguous (n, D) matrix; each record's
    ``embedding`` attribute is a read-only view of its row.
    """

    def __init__(self, records, embeddings, image_slice=None, text_slice=None):
        self.records: list[ObjectRecord] = list(records)
        self.embeddings = np.ascontiguousarray(embeddings, dtype=np.float64)
        self.embeddings.setflags(write=False)
        if len(self.records) != len(self.embeddings):
            raise InvalidArgument("record/embedding count mismatch")
        self.dim = self.embeddings.shape[1] if len(self.embeddings) else 0
        self.image_slice = image_slice
        self.text_slice = text_slice
        self.ids = [r.id for r in self.records]
        self._by_id = {r.id: i for i, r in enumerate(self.records)}
        if len(self._by_id) != len(self.ids):
            raise DataError("duplicate ids in catalog")
        for i, r in enumerate(self.records):
            r.embedding = self.embeddings[i]
        self.lower_texts = [r.text.lower() for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __contains__(self, object_id: str) -> bool:
        return object_id in self._by_id

    def row(self, object_id: str) -> int:
        try:
            return self._by_id[object_id]
        except KeyError:
            raise NotFound(f"unknown object {object_id!r}") from None

    def get(self, object_id: str) -> ObjectRecord:
        return self.records[self.row(object_id)]

    def slice_matrix(self, sl) -> np.ndarray:
        return self.embeddings[:, sl[0] : sl[1]]

    def write(self, path) -> int:
        with open(path, "w", encoding="utf-8") as f:
            for rec in self.records:
                f.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
        return len(self.records)


@dataclass
class IngestResult:
    catalog: Catalog
    count: int
    rejected: list[tuple[int, str]]  # (line number, diagnostic)


def ingest_catalog(path, expected_dim: int, image_slice=None, text_slice=None) -> IngestResult:
    """Load and index a line-delimited catalog file.

    Records with bad embeddings or unreadable lines are rejected
    individually with a line-number diagnostic; a duplicate id rejects the
    whole file.
    """
    if expected_dim <= 0:
        raise InvalidArgument("expected_dim must be > 0")
    for sl, total in ((image_slice, expected_dim), (text_slice, expected_dim)):
        if sl is not None and not (0 <= sl[0] < sl[1] <= total):
            raise InvalidArgument(f"bad embedding slice {sl} for dim {total}")
    records: list[ObjectRecord] = []
    vectors: list[np.ndarray] = []
    seen: dict[str, int] = {}
    rejected: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                rejected.append((lineno, f"unreadable line: {e.msg}"))
                continue
            try:
                rec, vec = _parse_record(payload, expected_dim)
            except DataError as e:
                rejected.append((lineno, str(e)))
                continue
            if rec.id in seen:
                raise DataError(
                    f"duplicate id {rec.id!r} at line {lineno} (first seen line {seen[rec.id]})"
                )
            seen[rec.id] = lineno
            records.append(rec)
            vectors.append(vec)
    emb = np.vstack(vectors) if vectors else np.zeros((0, expected_dim))
    catalog = Catalog(records, emb, image_slice=image_slice, text_slice=text_slice)
    return IngestResult(catalog=catalog, count=len(records), rejected=rejected)


def dedup_catalog(catalog: Catalog, image_eps: float, text_eps: float) -> Catalog:
    """Collapse near-duplicate groups, keeping the best-annotated record.

    Two records are near when either embedding slice is closer than its
    epsilon (Euclidean). Groups are transitive closures (union-find), so
    the result is order-independent; within a group the record with the
    most non-null attributes wins, ties break to the smaller id.
    """
    if image_eps <= 0 or text_eps <= 0:
        raise InvalidArgument("dedup epsilons must be > 0")
    if catalog.image_slice is None or catalog.text_slice is None:
        raise FailedPrecondition("catalog was ingested without image/text embedding slices")
    if len(catalog) == 0:
        return catalog
    img = np.ascontiguousarray(catalog.slice_matrix(catalog.image_slice))
    txt = np.ascontiguousarray(catalog.slice_matrix(catalog.text_slice))
    roots = _kernels.dup_groups(img, txt, float(image_eps) ** 2, float(text_eps) ** 2)
    groups: dict[int, list[int]] = {}
    for i, r in enumerate(roots):
        groups.setdefault(int(r), []).append(i)
    keep: list[int] = []
    for members in groups.values():
        best = min(members, key=lambda i: (-catalog.records[i].attr_count(), catalog.records[i].id))
        keep.append(best)
    keep.sort()
    records = [catalog.records[i] for i in keep]
    emb = catalog.embeddings[keep].copy()
    return Catalog(records, emb, image_slice=catalog.image_slice, text_slice=catalog.text_slice)


# --- label events ----------------------------------------------------------


@dataclass(frozen=True)
class LabelEvent:
    seq: int
    project: str
    object_id: str
    value: str  # POSITIVE | NEGATIVE | CLEAR
    mode: str  # WORD_SEARCH | ACTIVE | CORRECTION | REVIEW | IMPORT
    ts: str  # RFC 3339

    def to_json(self) -> dict:
        return {
            "seq": self.seq,
            "project": self.project,
            "object_id": self.object_id,
            "value": self.value,
            "mode": self.mode,
            "ts": self.ts,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LabelEvent":
        return cls(
            seq=int(d["seq"]),
            project=str(d["project"]),
            object_id=str(d["object_id"]),
            value=str(d["value"]),
            mode=str(d["mode"]),
            ts=str(d["ts"]),
        )


def utc_now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat()


def replay_current(events) -> dict[str, int]:
    """Fold an event sequence into the current-label map (1/0 per object)."""
    current: dict[str, int] = {}
    for e in events:
        if e.value == "POSITIVE":
            current[e.object_id] = 1
        elif e.value == "NEGATIVE":
            current[e.object_id] = 0
        elif e.value == "CLEAR":
            current.pop(e.object_id, None)
        else:
            raise DataError(f"unknown label value {e.value!r}")
    return current


@dataclass
class Project:
    name: str
    seed: int = DEFAULT_SEED
    keyword_features: textmatch.KeywordFeatureSet = field(
        default_factory=textmatch.KeywordFeatureSet
    )
    notes: str = ""
    model: linmodel.LinearModel | None = None
    label_log: list[LabelEvent] = field(default_factory=list)
    current: dict[str, int] = field(default_factory=dict)
    next_seq: int = 1
    model_version: int = 0
    model_stale: bool = False

    def labeled_counts(self) -> tuple[int, int]:
        pos = sum(1 for v in self.current.values() if v == 1)
        return pos, len(self.current) - pos


class LabelStore:
    """Projects plus the append-only event log.

    Single writer (guarded by a lock); state is fully replayable from the
    log plus the project metadata files. With state_dir=None everything
    stays in memory.
    """

    def __init__(self, catalog: Catalog, state_dir=None):
        self.catalog = catalog
        self.state_dir = Path(state_dir) if state_dir is not None else None
        self.projects: dict[str, Project] = {}
        self._lock = threading.Lock()
        self._events_fh = None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            (self.state_dir / "projects").mkdir(exist_ok=True)
            self._load()
            self._events_fh = open(self.state_dir / "events.jsonl", "a", encoding="utf-8")

    def close(self):
        if self._events_fh is not None:
            self._events_fh.close()
            self._events_fh = None

    def _load(self):
        for pf in sorted((self.state_dir / "projects").glob("*.json")):
            d = json.loads(pf.read_text(encoding="utf-8"))
            proj = Project(
                name=d["name"],
                seed=int(d["seed"]),
                keyword_features=textmatch.KeywordFeatureSet(
                    tuple(d["keyword_features"]), version=int(d["feature_version"])
                ),
                notes=d.get("notes", ""),
                model_version=int(d.get("model_version", 0)),
            )
            if d.get("model"):
                proj.model = linmodel.model_from_blob(d["model"])
            self.projects[proj.name] = proj
        events_path = self.state_dir / "events.jsonl"
        if events_path.exists():
            with open(events_path, "r", encoding="utf-8") as f:
                for line in f:
                    if not line.strip():
                        continue
                    e = LabelEvent.from_json(json.loads(line))
                    proj = self.projects.get(e.project)
                    if proj is None:
                        proj = Project(name=e.project)
                        self.projects[e.project] = proj
                    proj.label_log.append(e)
            for proj in self.projects.values():
                proj.current = replay_current(proj.label_log)
                proj.next_seq = max((e.seq for e in proj.label_log), default=0) + 1

    def save_project(self, proj: Project):
        if self.state_dir is None:
            return
        d = {
            "name": proj.name,
            "seed": proj.seed,
            "keyword_features": list(proj.keyword_features),
            "feature_version": proj.keyword_features.version,
            "notes": proj.notes,
            "model_version": proj.model_version,
            "model": linmodel.model_to_blob(proj.model) if proj.model else None,
        }
        path = self.state_dir / "projects" / f"{proj.name}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(d, sort_keys=True), encoding="utf-8")
        os.replace(tmp, path)

    def create_project(self, name: str, seed: int = DEFAULT_SEED) -> Project:
        if not name or "/" in name:
            raise InvalidArgument(f"bad project name {name!r}")
        with self._lock:
            if name in self.projects:
                raise AlreadyExists(f"project {name!r} already exists")
            proj = Project(name=name, seed=seed)
            self.projects[name] = proj
            self.save_project(proj)
            return proj

    def get_project(self, name: str) -> Project:
        try:
            return self.projects[name]
        except KeyError:
            raise NotFound(f"unknown project {name!r}") from None

    def set_features(self, name: str, match_strings) -> textmatch.KeywordFeatureSet:
        with self._lock:
            proj = self.get_project(name)
            new = textmatch.KeywordFeatureSet(
                tuple(match_strings), version=proj.keyword_features.version + 1
            )
            proj.keyword_features = new
            self.save_project(proj)
            return new

    def _write_events(self, events):
        if self._events_fh is None:
            return
        for e in events:
            self._events_fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
        self._events_fh.flush()
        os.fsync(self._events_fh.fileno())

    def append_label(self, project: str, object_id: str, value: str, mode: str, ts=None) -> int:
        return self.append_events(project, [(object_id, value, mode)], ts=ts)[0]

    def append_events(self, project: str, triples, ts=None) -> list[int]:
        """Append (object_id, value, mode) triples atomically; returns seqs."""
        with self._lock:
            proj = self.get_project(project)
            events = []
            for object_id, value, mode in triples:
                if object_id not in self.catalog:
                    raise NotFound(f"unknown object {object_id!r}")
                if value not in LABEL_VALUES:
                    raise InvalidArgument(f"bad label value {value!r}")
                if mode not in LABEL_MODES:
                    raise InvalidArgument(f"bad label mode {mode!r}")
                events.append(
                    LabelEvent(
                        seq=proj.next_seq + len(events),
                        project=project,
                        object_id=object_id,
                        value=value,
                        mode=mode,
                        ts=ts or utc_now(),
                    )
                )
            self._write_events(events)  # durable before the in-memory ack
            proj.label_log.extend(events)
            proj.next_seq += len(events)
            for e in events:
                if e.value == "POSITIVE":
                    proj.current[e.object_id] = 1
                elif e.value == "NEGATIVE":
                    proj.current[e.object_id] = 0
                else:
                    proj.current.pop(e.object_id, None)
            return [e.seq for e in events]

    def export_labels(self, project: str, path) -> int:
        """One `id<TAB>probability<TAB>manual_label?` line per catalog object.

        Manual labels override the model: POSITIVE exports 1.0 and
        NEGATIVE exports 0.0.
        """
        proj = self.get_project(project)
        if proj.model is None:
            raise FailedPrecondition(f"project {project!r} has no trained model")
        bits = textmatch.bits_matrix(self.catalog.lower_texts, proj.keyword_features)
        probs = linmodel.predict_proba_matrix(proj.model, self.catalog.embeddings, bits)
        count = 0
        with open(path, "w", encoding="utf-8") as f:
            for i, oid in enumerate(self.catalog.ids):
                manual = proj.current.get(oid)
                if manual is None:
                    f.write(f"{oid}\t{float(probs[i])!r}\t\n")
                else:
                    f.write(f"{oid}\t{float(manual)!r}\t{'POSITIVE' if manual else 'NEGATIVE'}\n")
                count += 1
        return count
