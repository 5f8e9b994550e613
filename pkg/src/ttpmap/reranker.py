"""LLM listwise re-ranking of retrieved candidate techniques.

Retrieved pairs are flattened into a candidate technique list, shown to an
instruction-tuned model window by window, and the parsed rankings are folded
back into one full ordering. Windows run tail-to-head so strong candidates
buried deep in the retriever order can bubble forward across windows.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backends import ChatBackend, request_payload
from .corpus import AnnotatedExample, Corpus, normalize_text
from .errors import BackendError, UnparseableResponse
from .retriever import Retrieval
from .taxonomy import MalformedId, Taxonomy, TechniqueId, parse_id

logger = logging.getLogger(__name__)

RERANKER_SYSTEM_PROMPT = """\
Act as an expert security analyst specializing in ranking a given list of \
MITRE ATT&CK techniques by their relevance to a security query.

## Objectives:
1. Determine if the given query describes an adversarial or attack behavior.
2. If it does, identify and rank the most relevant techniques and \
sub-techniques from the provided list, ensuring comprehensive coverage.

## Instructions for Ranking:

### 1. Break Down the Query:
- Decompose the given security query into distinct attack steps or phases.
- Identify any implied or explicitly mentioned behaviors that indicate \
specific adversarial (sub-)techniques.

### 2. Match Techniques:
- Map each identified step or behavior to the most appropriate technique or \
sub-technique from the provided list (if available for the corresponding \
technique).
- Consider that the query may involve multiple (sub-)techniques (both direct \
and implied).

### 3. Provide Explanation:
- For each matching technique, explain the connection between the query and \
the corresponding adversarial behavior.
- No reasoning is needed for techniques that do not match the query.

## Final Output Format:
After providing your detailed reasoning, output the final ranked list of \
techniques in descending order of relevance using this format:

[Technique A] > [Technique B] > [Technique C] > ...

No variations or extra formatting allowed.
"""

RANKGPT_SYSTEM_PROMPT = (
    "You are RankGPT, an intelligent assistant that can rank passages based "
    "on their relevancy to the query."
)


@dataclass(frozen=True)
class Candidate:
    """One technique shown to the re-ranker, with its best retriever rank."""

    id: TechniqueId
    name: str
    description: str
    best_retriever_rank: int


@dataclass
class CandidateList:
    items: list[Candidate]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, index):
        return self.items[index]


@dataclass
class RankedCandidates:
    """Full candidate ordering with per-id provenance and the derived pair order."""

    order: list[TechniqueId]
    provenance: dict[str, dict]
    pairs: list[AnnotatedExample] = field(default_factory=list)
    degraded: bool = False
    raw_responses: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class WindowPlan:
    """Sliding-window offsets over the candidate list, processed tail-to-head."""

    window_size: int
    stride: int
    offsets: tuple[int, ...]

    @classmethod
    def for_candidates(cls, n: int, window_size: int, overlap: int) -> "WindowPlan":
        if window_size < 1:
            raise ValueError(f"window size must be >= 1, got {window_size}")
        if not 0 <= overlap < window_size:
            raise ValueError(f"overlap must be in [0, window size), got {overlap}")
        stride = window_size - overlap
        offsets = []
        offset = max(0, n - window_size)
        while True:
            offsets.append(offset)
            if offset == 0:
                break
            offset = max(0, offset - stride)
        return cls(window_size=window_size, stride=stride, offsets=tuple(offsets))


def candidates_from_pairs(hits: Retrieval, corpus: Corpus,
                          taxonomy: Taxonomy) -> CandidateList:
    """Union of retrieved pairs' labels, enriched with taxonomy metadata.

    Each candidate carries the minimum retriever rank over the pairs that
    contributed it; ordering is by that rank, then ID. Labels unknown to the
    taxonomy are kept with empty descriptions.
    """
    best_rank: dict[TechniqueId, int] = {}
    for rank, (doc_id, _score) in enumerate(hits.hits, start=1):
        for label in corpus[doc_id].labels:
            if label not in best_rank:
                best_rank[label] = rank
    items = []
    for tid in sorted(best_rank, key=lambda t: (best_rank[t], str(t))):
        entry = taxonomy.get(tid)
        if entry is None:
            logger.info("candidate %s not in taxonomy; shown without description", tid)
            items.append(Candidate(id=tid, name="", description="",
                                   best_retriever_rank=best_rank[tid]))
        else:
            items.append(Candidate(id=tid, name=entry.name, description=entry.description,
                                   best_retriever_rank=best_rank[tid]))
    return CandidateList(items=items)


def _candidate_line(position: int, candidate: Candidate) -> str:
    label = str(candidate.id)
    if candidate.name:
        label += f" ({candidate.name})"
    line = f"Technique {position}: {label}"
    if candidate.description:
        line += ": " + normalize_text(candidate.description)
    return line


def build_prompt(query: str, window: Sequence[Candidate]) -> list[dict]:
    """Chat messages for one window: system framework + enumerated techniques + query."""
    lines = [_candidate_line(i, c) for i, c in enumerate(window, start=1)]
    user = "## Given Techniques:\n" + "\n".join(lines) + f"\n\n## Query:\n{query}"
    return [
        {"role": "system", "content": RERANKER_SYSTEM_PROMPT},
        {"role": "user", "content": user},
    ]


def build_rankgpt_prompt(query: str, window: Sequence[Candidate]) -> list[dict]:
    """Alternate generic-ranking template, kept for comparison runs only."""
    lines = [f"[{i}] {_candidate_line(i, c).split(': ', 1)[1]}"
             for i, c in enumerate(window, start=1)]
    user = (
        f"## Objectives:\nI will provide you with {len(window)} passages, each "
        "indicated by a number identifier []. Rank the passages based on their "
        "relevance to the query.\n\n"
        "## Given Passages:\n" + "\n".join(lines) +
        f"\n\n## Query:\n{query}\n\n"
        "Output the ranking as identifiers separated by ' > '."
    )
    return [
        {"role": "system", "content": RANKGPT_SYSTEM_PROMPT},
        {"role": "user", "content": user},
    ]


_ID_TOKEN_RE = re.compile(r"[Tt]\d{4}(?:\.\d{3})?")
_INDEX_TOKEN_RE = re.compile(r"^\[?(\d{1,4})\]?$")


def _parse_token(token: str, window_ids: list[str]) -> Optional[str]:
    """One `>`-separated segment -> canonical id in the window, or None."""
    match = _ID_TOKEN_RE.search(token)
    if match is not None:
        try:
            canonical = str(parse_id(match.group(0)))
        except MalformedId:
            return None
        return canonical if canonical in window_ids else None
    match = _INDEX_TOKEN_RE.match(token.strip().strip(".,;:!"))
    if match is not None:
        index = int(match.group(1)) - 1
        if 0 <= index < len(window_ids):
            return window_ids[index]
    return None


def parse_ranking(response: str, window: Sequence[Candidate]) -> list[TechniqueId]:
    """Extract the last ranking line and complete it into a window permutation.

    Tokens are technique IDs or 1-based ``[i]`` indices into the window;
    unknown and duplicate tokens are dropped (first occurrence wins) and ids
    missing from the response are appended in window order. Raises
    UnparseableResponse only when no ranking line exists at all.
    """
    window_ids = [str(c.id) for c in window]
    by_id = {str(c.id): c.id for c in window}
    parsed: Optional[list[str]] = None
    pending_header = False
    for line in response.splitlines():
        if ">" in line:
            tokens = [t for t in (seg.strip() for seg in line.split(">")) if t]
            if len(tokens) >= 2:
                hits = [_parse_token(t, window_ids) for t in tokens]
                hits = [h for h in hits if h is not None]
                if hits:
                    parsed = hits
                    pending_header = False
                    continue
        # Short rankings (e.g. a one-candidate window) carry no '>' chain;
        # accept bare IDs on or directly after a "Final Ranking" header.
        is_header = re.search(r"final\s+ranking", line, re.IGNORECASE) is not None
        if is_header or pending_header:
            hits = [str(parse_id(m.group(0))) for m in _ID_TOKEN_RE.finditer(line)]
            hits = [h for h in hits if h in window_ids]
            if hits:
                parsed = hits
                pending_header = False
            elif is_header:
                pending_header = True
            elif line.strip():
                pending_header = False
    if parsed is None:
        raise UnparseableResponse("no ranking line found in response")
    seen: set[str] = set()
    ordered: list[str] = []
    for canonical in parsed:
        if canonical not in seen:
            seen.add(canonical)
            ordered.append(canonical)
    for canonical in window_ids:
        if canonical not in seen:
            seen.add(canonical)
            ordered.append(canonical)
    return [by_id[c] for c in ordered]


def rerank(query: str, candidates: CandidateList, backend: ChatBackend,
           plan: WindowPlan, *, model: str = "reranker",
           max_tokens: Optional[int] = None,
           prompt_builder=build_prompt) -> RankedCandidates:
    """Order all candidates via sliding-window listwise prompts.

    Each window's parsed ranking overwrites its span of the working order
    before the next window slides (tail-to-head). Backend failure after
    retries degrades the affected window to its current order and marks the
    result degraded; temperature is pinned to 0.
    """
    working = list(candidates.items)
    raw_responses: list[str] = []
    degraded = False
    for offset in plan.offsets:
        window = working[offset:offset + plan.window_size]
        if not window:
            continue
        messages = prompt_builder(query, window)
        payload = request_payload(model, messages, temperature=0.0, max_tokens=max_tokens)
        try:
            response = backend.complete(payload)
        except BackendError as exc:
            logger.warning("window at offset %d degraded to retriever order: %s",
                           offset, exc)
            degraded = True
            continue
        raw_responses.append(response)
        try:
            ordered_ids = parse_ranking(response, window)
        except UnparseableResponse:
            retry_messages = messages + [
                {"role": "assistant", "content": response},
                {"role": "user", "content": "Output ONLY the ranking line."},
            ]
            retry_payload = request_payload(model, retry_messages, temperature=0.0,
                                            max_tokens=max_tokens)
            try:
                retry_response = backend.complete(retry_payload)
            except BackendError as exc:
                logger.warning("window at offset %d degraded on retry: %s", offset, exc)
                degraded = True
                continue
            raw_responses.append(retry_response)
            try:
                ordered_ids = parse_ranking(retry_response, window)
            except UnparseableResponse:
                logger.warning("window at offset %d unparseable twice; keeping "
                               "window order", offset)
                continue
        by_id = {str(c.id): c for c in window}
        working[offset:offset + plan.window_size] = [by_id[str(t)] for t in ordered_ids]
    order = [c.id for c in working]
    provenance = {
        str(c.id): {"retriever_rank": c.best_retriever_rank, "reranker_rank": position}
        for position, c in enumerate(working, start=1)
    }
    return RankedCandidates(order=order, provenance=provenance, degraded=degraded,
                            raw_responses=raw_responses)


def reorder_pairs(hits: Retrieval, order: Sequence[TechniqueId],
                  corpus: Corpus) -> list[AnnotatedExample]:
    """Reorder retrieved pairs by the best re-ranker rank among their labels.

    Pairs whose labels are all absent from the order sort after every scored
    pair; ties and the unscored tail keep retriever order (stable sort).
    """
    rank_of = {str(tid): position for position, tid in enumerate(order, start=1)}
    pairs = [corpus[doc_id] for doc_id, _score in hits.hits]
    return sorted(
        pairs,
        key=lambda ex: min((rank_of.get(str(t), math.inf) for t in ex.labels),
                           default=math.inf),
    )
