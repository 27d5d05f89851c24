"""HTTP service over the store, pipeline and report loop.

Auth is a static bearer token taken from AFTERCAST_API_TOKEN (compared in
constant time, checked before any lookup); unset token means an open
instance for local use. Error bodies are machine-readable codes only, no
filesystem detail. Report responses carry the artifact content hash in
an X-Content-Hash header, and GET /v1/reports/{id} returns the stored
payload byte for byte.
"""

from __future__ import annotations

import hmac
import json
import os
import time

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from . import __version__
from .pipeline import PipelineConfig, run_pipeline
from .reports import (
    KIND_BY_FAMILY,
    MissingArtifact,
    RemoteNarrativeProvider,
    generate_report,
)
from .serialize import hash_bytes
from .store import ArtifactStore, NotFound

TOKEN_ENV = "AFTERCAST_API_TOKEN"
NARRATIVE_ENV = "AFTERCAST_NARRATIVE_URL"
RUN_BUDGET_SECONDS = 60.0

_CONTENT_TYPES = {
    "residuals": "text/csv; charset=utf-8",
    "forecasts": "application/json",
    "weights": "application/json",
    "scorecard_report": "application/json",
    "trend_report": "application/json",
    "monthly_trend_report": "application/json",
}
_REPORT_KINDS = frozenset(KIND_BY_FAMILY.values())
_FAMILY_BY_PATH = {
    "scorecard": "performance_scorecard",
    "trend-overall": "trend_overall",
    "trend-monthly": "trend_monthly",
}


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": {"code": code, "message": message}},
    )


def create_app(
    store: ArtifactStore | None = None,
    token: str | None = None,
    narrative_url: str | None = None,
) -> FastAPI:
    """Build the app; omitted arguments fall back to environment config."""
    if store is None:
        store = ArtifactStore(os.environ.get("AFTERCAST_STORE", "store"))
    if token is None:
        token = os.environ.get(TOKEN_ENV, "")
    if narrative_url is None:
        narrative_url = os.environ.get(NARRATIVE_ENV, "")
    provider = RemoteNarrativeProvider(narrative_url) if narrative_url else None

    app = FastAPI(title="aftercast", version=__version__, docs_url=None,
                  redoc_url=None, openapi_url=None)
    app.state.store = store
    app.state.token = token
    app.state.provider = provider

    def authorized(request: Request) -> bool:
        if not token:
            return True
        header = request.headers.get("authorization", "")
        scheme, _, presented = header.partition(" ")
        if scheme.lower() != "bearer":
            return False
        return hmac.compare_digest(presented.encode(), token.encode())

    @app.exception_handler(NotFound)
    async def not_found_handler(request, exc):
        return _error(404, "not_found", str(exc))

    @app.exception_handler(MissingArtifact)
    async def missing_handler(request, exc):
        return _error(404, "missing_artifact", str(exc))

    @app.exception_handler(ValueError)
    async def value_error_handler(request, exc):
        return _error(422, "invalid_config", str(exc))

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request, exc):
        return _error(422, "invalid_config", "request body must be a JSON object")

    @app.exception_handler(StarletteHTTPException)
    async def http_handler(request, exc):
        code = {404: "not_found", 405: "method_not_allowed"}.get(
            exc.status_code, "error"
        )
        return _error(exc.status_code, code, str(exc.detail))

    @app.middleware("http")
    async def auth_gate(request: Request, call_next):
        # health stays open for liveness probes; everything else is
        # rejected before any dataset or artifact lookup happens
        if request.url.path != "/v1/health" and not authorized(request):
            return _error(401, "unauthorized", "missing or invalid bearer token")
        return await call_next(request)

    @app.get("/v1/health")
    async def health():
        root = store.root
        return {
            "status": "ok",
            "version": __version__,
            "store": {
                "datasets": len(store.list_datasets()),
                "writable": os.access(root, os.W_OK),
            },
        }

    @app.post("/v1/runs")
    async def post_run(request: Request):
        body = await _json_body(request)
        dataset_id = body.get("dataset_id")
        if not dataset_id or not isinstance(dataset_id, str):
            raise ValueError("missing dataset_id")
        config_raw = body.get("config", {})
        if not isinstance(config_raw, dict):
            raise ValueError("config must be an object")
        unknown = set(body) - {"dataset_id", "config"}
        if unknown:
            raise ValueError(f"unknown parameter {sorted(unknown)[0]!r}")
        config = _pipeline_config(dataset_id, config_raw)
        if not store.has_dataset(dataset_id):
            raise NotFound(f"dataset {dataset_id!r} not registered")
        started = time.monotonic()
        result = run_pipeline(store, config)
        elapsed = time.monotonic() - started
        return {
            "run_id": result.residuals_run_id,
            "dataset_id": result.dataset_id,
            "config_hash": result.config_hash,
            "artifacts": result.run_ids(),
            "n_records": result.n_records,
            "n_skips": result.n_skips,
            "leakage_violations": result.leakage_violations,
            "reused": result.reused,
            "elapsed_s": round(elapsed, 3),
            "budget_s": RUN_BUDGET_SECONDS,
        }

    @app.get("/v1/runs/{run_id}")
    async def get_run(run_id: str):
        record, payload = store.fetch_artifact(run_id)
        return {
            "run_id": record.run_id,
            "dataset_id": record.dataset_id,
            "config_hash": record.config_hash,
            "kind": record.kind,
            "size_bytes": len(payload),
        }

    @app.post("/v1/reports/{path_family}")
    async def post_report(path_family: str, request: Request):
        family = _FAMILY_BY_PATH.get(path_family)
        if family is None:
            return _error(404, "not_found", f"no report endpoint {path_family!r}")
        body = await _json_body(request)
        stated = body.get("report_family") or body.get("family")
        if stated is not None:
            normalized = str(stated).replace("-", "_")
            if normalized not in (family, path_family.replace("-", "_")):
                raise ValueError(
                    f"report_family {stated!r} conflicts with endpoint"
                )
        body = {
            k: v for k, v in body.items() if k not in ("report_family", "family")
        }
        body["report_family"] = family
        result = generate_report(store, body, provider=app.state.provider)
        return Response(
            content=result.payload,
            media_type="application/json",
            headers={
                "X-Content-Hash": result.content_hash,
                "X-Run-Id": result.run_id,
            },
        )

    @app.get("/v1/reports/{run_id}")
    async def get_report(run_id: str):
        record, payload = store.fetch_artifact(run_id)
        if record.kind in _REPORT_KINDS:
            content_hash = json.loads(payload)["content_hash"]
        else:
            content_hash = hash_bytes(payload)
        return Response(
            content=payload,
            media_type=_CONTENT_TYPES.get(record.kind, "application/octet-stream"),
            headers={"X-Content-Hash": content_hash},
        )

    return app


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise ValueError("request body must be valid JSON") from None
    if not isinstance(body, dict):
        raise ValueError("request body must be a JSON object")
    return body


def _pipeline_config(dataset_id: str, raw: dict) -> PipelineConfig:
    kwargs: dict = {"dataset_id": dataset_id}
    fields = {
        "horizons", "n_origins", "gap", "min_train", "models",
        "interval_level", "k_clusters",
    }
    for key, value in raw.items():
        if key not in fields:
            raise ValueError(f"unknown parameter {key!r}")
        if key in ("horizons", "models") and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ValueError(str(exc)) from None
