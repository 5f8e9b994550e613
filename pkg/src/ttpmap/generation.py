"""Generator client, end-to-end pipeline composition, and training export.

The generator is reached over a generic chat wire, so the candidate
constraint is enforced by post-hoc filtering of the emitted IDs rather than
by constrained decoding. The exporter emits instruction-tuning records whose
``input`` is byte-identical to the inference-time context for the same text.
"""
from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

from .backends import ChatBackend, request_payload
from .context import GeneratorContext, build_context, render_labels
from .corpus import AnnotatedExample, Corpus, normalize_text, retrieval_view
from .errors import EmptyPrediction, TtpmapError
from .reranker import (CandidateList, RankedCandidates, WindowPlan,
                       candidates_from_pairs, reorder_pairs, rerank)
from .retriever import Bm25Index, Retrieval, build_index, search
from .taxonomy import MalformedId, Taxonomy, TechniqueId, parse_id

logger = logging.getLogger(__name__)

GENERATOR_INSTRUCTION = (
    "You are a security analyst annotating threat intelligence text with "
    "MITRE ATT&CK techniques. The input is a security text, optionally "
    "followed by [text]/[technique] separated example annotations. Identify "
    "the technique and sub-technique IDs describing the behaviors in the "
    "security text and output them as a list."
)

_PREDICTION_ID_RE = re.compile(r"(?<![A-Za-z0-9])[Tt]\d{4}(?:\.\d{3})?(?!\d)")


@dataclass
class GenerationConfig:
    """Sampling knobs for the generator call."""

    temperature: float = 0.7
    top_p: float = 0.1
    max_output_tokens: Optional[int] = None
    strict_candidate_filter: bool = False

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 <= self.top_p <= 1:
            raise ValueError(f"top_p must be in [0, 1], got {self.top_p}")


@dataclass
class Annotation:
    """Predicted label sequence for one query, with provenance flags."""

    query_id: str
    predicted: list[TechniqueId]
    raw_response: str
    filtered_count: int = 0
    degraded: bool = False
    trace: Optional[dict] = None


def extract_predictions(response: str, taxonomy: Taxonomy,
                        allowed: Optional[set[str]] = None) -> tuple[list[TechniqueId], int]:
    """Scan a response for technique IDs in emission order.

    Duplicates are deduped (first wins). IDs absent from the taxonomy are
    always dropped; with ``allowed`` set, IDs outside it are dropped too.
    Returns the kept IDs and the count of dropped (non-duplicate) mentions.
    """
    seen: set[str] = set()
    kept: list[TechniqueId] = []
    filtered = 0
    for match in _PREDICTION_ID_RE.finditer(response):
        try:
            tid = parse_id(match.group(0))
        except MalformedId:
            continue
        canonical = str(tid)
        if canonical in seen:
            continue
        seen.add(canonical)
        if tid not in taxonomy:
            filtered += 1
            continue
        if allowed is not None and canonical not in allowed:
            filtered += 1
            continue
        kept.append(tid)
    return kept, filtered


def annotate(context: GeneratorContext, backend: ChatBackend, cfg: GenerationConfig,
             taxonomy: Taxonomy, candidates: Optional[RankedCandidates] = None,
             *, model: str = "generator", query_id: str = "") -> Annotation:
    """Send the context to the generator and parse the emitted label sequence.

    Raises EmptyPrediction when filtering removes everything; the caller
    decides the fallback. BackendError propagates after the backend's own
    retries -- never an empty silent success.
    """
    messages = [
        {"role": "system", "content": GENERATOR_INSTRUCTION},
        {"role": "user", "content": context.serialized},
    ]
    payload = request_payload(model, messages, cfg.temperature, cfg.top_p,
                              cfg.max_output_tokens)
    response = backend.complete(payload)
    allowed = None
    if cfg.strict_candidate_filter and candidates is not None:
        allowed = {str(t) for t in candidates.order}
    predicted, filtered = extract_predictions(response, taxonomy, allowed)
    if not predicted:
        raise EmptyPrediction("no predicted labels survived filtering",
                              raw_response=response, filtered_count=filtered)
    return Annotation(query_id=query_id, predicted=predicted, raw_response=response,
                      filtered_count=filtered)


@dataclass
class PipelineHyper:
    """Hyperparameters of the full retrieve/re-rank/generate chain."""

    K: int = 40
    k: int = 3
    window: int = 40
    overlap: int = 20
    context_budget: int = 2048
    include_names: bool = True
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    reranker_model: str = "reranker"
    generator_model: str = "generator"

    def __post_init__(self):
        if not self.K >= self.k >= 0:
            raise ValueError(f"need K >= k >= 0, got K={self.K} k={self.k}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if not 0 <= self.overlap < self.window:
            raise ValueError(f"overlap must be in [0, window), got {self.overlap}")


@contextmanager
def _stage(name: str):
    try:
        yield
    except TtpmapError as exc:
        exc.args = (f"[stage:{name}] {exc}",)
        raise


def trace_id_of(trace: dict) -> str:
    canonical = json.dumps(trace, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def run_pipeline(query: str, corpus: Corpus, taxonomy: Taxonomy,
                 reranker_backend: ChatBackend, generator_backend: ChatBackend,
                 hyper: Optional[PipelineHyper] = None, *, query_id: str = "",
                 prebuilt_index: Optional[Bm25Index] = None,
                 with_trace: bool = False) -> Annotation:
    """Compose retrieval view -> search -> re-rank -> context -> generate.

    With ``prebuilt_index`` (a shared index over the full corpus) leakage
    exclusion is applied per request by skipping documents whose text matches
    the query; otherwise the view is indexed exactly. An EmptyPrediction from
    the generator becomes an explicitly empty annotation.
    """
    hyper = hyper or PipelineHyper()
    with _stage("retrieval"):
        if prebuilt_index is not None:
            needle = normalize_text(query)
            excluded = frozenset(ex.id for ex in corpus
                                 if normalize_text(ex.text) == needle)
            hits = search(prebuilt_index, query, hyper.K, exclude=excluded)
        else:
            view = retrieval_view(corpus, query)
            if len(view) == 0:
                hits = Retrieval(hits=[])
            else:
                hits = search(build_index(view), query, hyper.K)
    with _stage("rerank"):
        if hits.hits:
            candidates = candidates_from_pairs(hits, corpus, taxonomy)
            plan = WindowPlan.for_candidates(len(candidates), hyper.window,
                                             hyper.overlap)
            ranked = rerank(query, candidates, reranker_backend, plan,
                            model=hyper.reranker_model)
            ranked.pairs = reorder_pairs(hits, ranked.order, corpus)
        else:
            candidates = CandidateList(items=[])
            ranked = RankedCandidates(order=[], provenance={})
    with _stage("context"):
        ctx = build_context(query, ranked.pairs, hyper.k, hyper.context_budget,
                            taxonomy, hyper.include_names)
    with _stage("generate"):
        try:
            annotation = annotate(ctx, generator_backend, hyper.generation, taxonomy,
                                  ranked, model=hyper.generator_model,
                                  query_id=query_id)
        except EmptyPrediction as exc:
            logger.info("query %s: empty prediction after filtering %d id(s)",
                        query_id or "<unnamed>", exc.filtered_count)
            annotation = Annotation(query_id=query_id, predicted=[],
                                    raw_response=exc.raw_response,
                                    filtered_count=exc.filtered_count)
    annotation.degraded = ranked.degraded
    if with_trace:
        trace = {
            "query_id": query_id,
            "query": query,
            "hits": [[doc_id, score] for doc_id, score in hits.hits],
            "candidates": [str(c.id) for c in candidates],
            "reranked_order": [str(t) for t in ranked.order],
            "reranker_provenance": ranked.provenance,
            "reranker_responses": ranked.raw_responses,
            "exemplars": [[text, [str(t) for t in labels]]
                          for text, labels in ctx.exemplars],
            "context_tokens": ctx.token_estimate,
            "raw_response": annotation.raw_response,
            "predicted": [str(t) for t in annotation.predicted],
            "filtered_count": annotation.filtered_count,
            "degraded": annotation.degraded,
        }
        trace["trace_id"] = trace_id_of(trace)
        annotation.trace = trace
    return annotation


@dataclass
class TrainingExport:
    """Instruction-tuning records plus the per-record failures that were skipped."""

    records: list[dict]
    failures: list[dict]


def export_training(corpus: Corpus, taxonomy: Taxonomy,
                    reranker_backend: ChatBackend,
                    hyper: Optional[PipelineHyper] = None,
                    oversample_multi: int = 3,
                    concurrency: int = 1) -> TrainingExport:
    """Build fine-tuning data in the exact inference prompt format.

    One record per example: the fixed instruction, the serialized context
    built from the leakage-excluded retrieval view, and the canonical gold
    rendering. Multi-label examples are emitted ``oversample_multi`` times.
    Per-record pipeline errors are logged and skipped. Records come out in
    corpus order regardless of ``concurrency``.
    """
    hyper = hyper or PipelineHyper()
    if oversample_multi < 1:
        raise ValueError(f"oversample factor must be >= 1, got {oversample_multi}")

    def build_one(ex: AnnotatedExample) -> dict:
        view = retrieval_view(corpus, ex.text)
        if len(view) == 0:
            pairs: list[AnnotatedExample] = []
        else:
            hits = search(build_index(view), ex.text, hyper.K)
            if hits.hits:
                candidates = candidates_from_pairs(hits, corpus, taxonomy)
                plan = WindowPlan.for_candidates(len(candidates), hyper.window,
                                                 hyper.overlap)
                ranked = rerank(ex.text, candidates, reranker_backend, plan,
                                model=hyper.reranker_model)
                pairs = reorder_pairs(hits, ranked.order, corpus)
            else:
                pairs = []
        ctx = build_context(ex.text, pairs, hyper.k, hyper.context_budget,
                            taxonomy, hyper.include_names)
        return {
            "instruction": GENERATOR_INSTRUCTION,
            "input": ctx.serialized,
            "output": render_labels(ex.labels, taxonomy, hyper.include_names),
        }

    outcomes: list[tuple[AnnotatedExample, dict | None, str | None]] = []
    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            futures = [(ex, pool.submit(build_one, ex)) for ex in corpus]
            for ex, future in futures:
                try:
                    outcomes.append((ex, future.result(), None))
                except TtpmapError as exc:
                    outcomes.append((ex, None, str(exc)))
    else:
        for ex in corpus:
            try:
                outcomes.append((ex, build_one(ex), None))
            except TtpmapError as exc:
                outcomes.append((ex, None, str(exc)))

    records: list[dict] = []
    failures: list[dict] = []
    for ex, record, error in outcomes:
        if record is None:
            logger.warning("skipping training example %s: %s", ex.id, error)
            failures.append({"id": ex.id, "error": error})
            continue
        copies = oversample_multi if len(ex.labels) > 1 else 1
        records.extend([dict(record)] * copies)
    return TrainingExport(records=records, failures=failures)


def save_training_jsonl(export: TrainingExport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in export.records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
