"""HTTP facade: one immutable index shared across requests, leakage excluded
per request. Corpus or taxonomy changes require a restart."""
from __future__ import annotations

import hashlib
import logging

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import PipelineConfig
from .errors import TtpmapError
from .generation import run_pipeline
from .retriever import build_index
from .taxonomy import load_taxonomy

logger = logging.getLogger(__name__)


class AnnotateRequest(BaseModel):
    text: str = Field(min_length=1)


def _error_trace_id(text: str, error: str) -> str:
    digest = hashlib.sha256(f"{text}\x00{error}".encode("utf-8")).hexdigest()
    return digest[:16]


def create_app(config: PipelineConfig) -> FastAPI:
    from .cli import _load_corpus

    taxonomy = load_taxonomy(config.taxonomy_path, config.taxonomy_format)
    corpus = _load_corpus(config)
    index = build_index(corpus) if len(corpus) else None
    reranker_backend, generator_backend = config.backends()
    hyper = config.hyper()

    app = FastAPI(title="ttpmap annotation service")

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request body",
                                                      "detail": exc.errors()})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "examples": len(corpus), "taxonomy_entries": len(taxonomy)}

    @app.post("/v1/annotate")
    def annotate(request: AnnotateRequest):
        try:
            annotation = run_pipeline(
                request.text, corpus, taxonomy, reranker_backend, generator_backend,
                hyper, query_id="request", prebuilt_index=index, with_trace=True,
            )
        except TtpmapError as exc:
            trace_id = _error_trace_id(request.text, str(exc))
            logger.error("annotation failed (trace %s): %s", trace_id, exc)
            return JSONResponse(status_code=500,
                                content={"error": str(exc), "trace_id": trace_id})
        trace = annotation.trace or {}
        return {
            "trace_id": trace.get("trace_id", ""),
            "predicted": [{"id": str(t), "name": taxonomy.name_of(t)}
                          for t in annotation.predicted],
            "exemplars": [{"text": text, "labels": list(labels)}
                          for text, labels in trace.get("exemplars", [])],
            "degraded": annotation.degraded,
        }

    return app
