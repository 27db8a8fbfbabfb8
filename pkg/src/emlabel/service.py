"""HTTP facade over the labeling engine: projects, candidate pages,
labels, retraining, stats, and export.

Single-user-per-project concurrency is enforced with leases: mutating
endpoints require the current lease token and answer 423 when it is
stale. Mutations accept an idempotency key and replay the stored response
on retry.
"""

from __future__ import annotations

import secrets
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass

from fastapi import FastAPI, Header, Query
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .datastore import Catalog, LabelStore, utc_now
from .engine import DEFAULT_PAGE_SIZE, DEFAULT_POOL_SIZE, CandidatePage, LabelingEngine, TrainReport
from .errors import (
    AlreadyExists,
    DegenerateLabels,
    EmlabelError,
    FailedPrecondition,
    InvalidArgument,
    NotFound,
    StaleLease,
    StaleModel,
)

DEFAULT_LEASE_TTL = 900.0

_STATUS_BY_CODE = {
    "invalid_argument": 400,
    "not_found": 404,
    "already_exists": 409,
    "failed_precondition": 409,
    "degenerate_labels": 409,
    "stale_model": 409,
    "data_error": 400,
    "infeasible_constraints": 400,
    "training_failure": 500,
    "stale_lease": 423,
    "internal": 500,
}


@dataclass
class Lease:
    token: str
    expires: float


class ProjectCreate(BaseModel):
    name: str
    seed: int = 20240501


class FeaturesBody(BaseModel):
    match_strings: list[str]


class LabelItemBody(BaseModel):
    object_id: str
    value: str
    mode: str = "ACTIVE"


class LabelsBody(BaseModel):
    labels: list[LabelItemBody] = Field(default_factory=list)


def _page_json(page: CandidatePage, catalog: Catalog) -> dict:
    items = []
    for it in page.items:
        rec = catalog.get(it.object_id)
        items.append(
            {
                "object_id": it.object_id,
                "probability": it.probability,
                "label": it.label,
                "title": rec.title,
                "image_refs": rec.image_refs or [],
                "source_url": rec.source_url,
            }
        )
    return {"mode": page.mode, "page_token": page.page_token, "items": items, "pool_stats": page.pool_stats}


def _report_json(report: TrainReport) -> dict:
    return {
        "iterations": report.iterations,
        "pool_positive_rate": report.pool_positive_rate,
        "labeled_counts": {"positive": report.labeled_counts[0], "negative": report.labeled_counts[1]},
        "model_version": report.model_version,
        "model_stale": report.model_stale,
        "retrained": report.retrained,
    }


def create_app(
    catalog: Catalog,
    store: LabelStore,
    engine: LabelingEngine | None = None,
    lease_ttl: float = DEFAULT_LEASE_TTL,
) -> FastAPI:
    engine = engine or LabelingEngine(catalog, store)

    @asynccontextmanager
    async def _lifespan(_: FastAPI):
        yield
        store.close()  # flush the event log on graceful shutdown

    app = FastAPI(title="emlabel", version="0.1.0", lifespan=_lifespan)
    leases: dict[str, Lease] = {}
    idempotent: dict[tuple[str, str], dict] = {}

    @app.exception_handler(EmlabelError)
    def _handle(_, exc: EmlabelError):
        return JSONResponse(
            status_code=_STATUS_BY_CODE.get(exc.code, 500),
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    def _check_lease(project: str, token: str | None):
        lease = leases.get(project)
        if lease is None or time.time() > lease.expires or token != lease.token:
            raise StaleLease(f"no valid lease for project {project!r}; reacquire via POST lease")

    @app.get("/health")
    def health():
        return {"status": "ok", "catalog_count": len(catalog), "time": utc_now()}

    @app.get("/projects")
    def list_projects():
        out = []
        for name in sorted(store.projects):
            proj = store.projects[name]
            pos, neg = proj.labeled_counts()
            out.append(
                {
                    "name": name,
                    "labeled_pos": pos,
                    "labeled_neg": neg,
                    "model_version": proj.model_version,
                    "feature_version": proj.keyword_features.version,
                }
            )
        return {"projects": out}

    @app.post("/projects", status_code=201)
    def create_project(body: ProjectCreate):
        proj = store.create_project(body.name, seed=body.seed)
        lease = Lease(token=secrets.token_hex(16), expires=time.time() + lease_ttl)
        leases[proj.name] = lease
        return {"name": proj.name, "seed": proj.seed, "lease": lease.token, "lease_expires": lease.expires}

    @app.get("/projects/{project}")
    def get_project(project: str):
        proj = store.get_project(project)
        pos, neg = proj.labeled_counts()
        return {
            "name": proj.name,
            "seed": proj.seed,
            "notes": proj.notes,
            "keyword_features": list(proj.keyword_features),
            "feature_version": proj.keyword_features.version,
            "labeled_pos": pos,
            "labeled_neg": neg,
            "model_version": proj.model_version,
            "model_stale": proj.model_stale,
            "has_model": proj.model is not None,
        }

    @app.post("/projects/{project}/lease")
    def acquire_lease(project: str):
        store.get_project(project)  # 404 on unknown
        lease = leases.get(project)
        if lease is not None and time.time() <= lease.expires:
            raise StaleLease(f"project {project!r} is leased by another session")
        lease = Lease(token=secrets.token_hex(16), expires=time.time() + lease_ttl)
        leases[project] = lease
        return {"lease": lease.token, "lease_expires": lease.expires}

    @app.post("/projects/{project}/features")
    def set_features(project: str, body: FeaturesBody, x_lease_token: str | None = Header(default=None)):
        _check_lease(project, x_lease_token)
        features = store.set_features(project, tuple(body.match_strings))
        return {"feature_version": features.version, "match_strings": list(features)}

    @app.get("/projects/{project}/candidates")
    def candidates(
        project: str,
        mode: str = Query(...),
        term: str | None = None,
        lo: float | None = None,
        hi: float | None = None,
        page: int = 0,
        page_size: int = DEFAULT_PAGE_SIZE,
        pool_size: int = DEFAULT_POOL_SIZE,
        k: int = 20,
    ):
        mode = mode.lower()
        if mode == "search":
            if not term:
                raise InvalidArgument("mode=search requires term")
            cp = engine.word_search_page(project, term, page=page, page_size=page_size)
        elif mode == "active":
            cp = engine.next_uncertain_page(project, pool_size=pool_size, page_size=page_size)
        elif mode == "correction":
            if lo is None or hi is None:
                raise InvalidArgument("mode=correction requires lo and hi")
            cp = engine.range_page(project, lo, hi, page_size=page_size, pool_size=pool_size)
        elif mode == "review":
            cp = engine.review_page(project, page_size=page_size, k=k)
        else:
            raise InvalidArgument(f"unknown mode {mode!r}")
        return _page_json(cp, catalog)

    @app.post("/projects/{project}/labels")
    def post_labels(
        project: str,
        body: LabelsBody,
        x_lease_token: str | None = Header(default=None),
        idempotency_key: str | None = Header(default=None),
    ):
        _check_lease(project, x_lease_token)
        if idempotency_key is not None:
            cached = idempotent.get((project, idempotency_key))
            if cached is not None:
                return cached
        triples = [(l.object_id, l.value, l.mode) for l in body.labels]
        try:
            report = engine.advance_and_retrain(project, triples)
            payload = _report_json(report)
        except DegenerateLabels as exc:
            proj = store.get_project(project)
            proj.model_stale = True
            pos, neg = proj.labeled_counts()
            payload = {
                "iterations": 0,
                "pool_positive_rate": None,
                "labeled_counts": {"positive": pos, "negative": neg},
                "model_version": proj.model_version,
                "model_stale": True,
                "retrained": False,
                "detail": str(exc),
            }
        if idempotency_key is not None:
            idempotent[(project, idempotency_key)] = payload
        return payload

    @app.post("/projects/{project}/retrain")
    def retrain(project: str, x_lease_token: str | None = Header(default=None)):
        _check_lease(project, x_lease_token)
        return _report_json(engine.retrain(project))

    @app.get("/projects/{project}/stats")
    def stats(project: str):
        proj = store.get_project(project)
        pos, neg = proj.labeled_counts()
        return {
            "labeled_pos": pos,
            "labeled_neg": neg,
            "unlabeled": len(catalog) - len(proj.current),
            "events": len(proj.label_log),
            "model_version": proj.model_version,
            "model_stale": proj.model_stale,
            "pool_positive_rate": engine.pool_positive_rate(proj),
            "feature_version": proj.keyword_features.version,
        }

    @app.get("/objects/{object_id}")
    def get_object(object_id: str):
        rec = catalog.get(object_id)
        return {
            "id": rec.id,
            "title": rec.title,
            "text": rec.text,
            "price": rec.price,
            "mass_kg": rec.mass_kg,
            "category_path": rec.category_path,
            "num_reviews": rec.num_reviews,
            "image_refs": rec.image_refs or [],
            "source_url": rec.source_url,
        }

    @app.get("/projects/{project}/export")
    def export(project: str):
        proj = store.get_project(project)
        if proj.model is None:
            raise FailedPrecondition(f"project {project!r} has no trained model")
        import os
        import tempfile

        fd, tmp = tempfile.mkstemp(suffix=".tsv")
        os.close(fd)
        try:
            store.export_labels(project, tmp)
            with open(tmp, "r", encoding="utf-8") as f:
                content = f.read()
        finally:
            os.unlink(tmp)
        return PlainTextResponse(content, media_type="text/tab-separated-values")

    return app


def serve(catalog_path, state_dir, dim: int, host: str = "127.0.0.1", port: int = 8000):
    """Ingest the catalog, open the store, and run uvicorn until stopped."""
    import uvicorn

    from .datastore import ingest_catalog

    result = ingest_catalog(catalog_path, dim)
    store = LabelStore(result.catalog, state_dir=state_dir)
    app = create_app(result.catalog, store)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return app
