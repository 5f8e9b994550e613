"""Generator context: query plus re-ranked exemplar pairs behind separator tokens.

The serialized form is both the inference prompt body and the training-record
input, so it must be deterministic and pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .corpus import AnnotatedExample
from .errors import QueryTooLong
from .taxonomy import Taxonomy, TechniqueId

TEXT_SEPARATOR = "[text]"
TECHNIQUE_SEPARATOR = "[technique]"

# Whitespace tokens under-count model tokens; the safety factor keeps the
# estimate above the real count for typical security text.
_TOKEN_SAFETY_FACTOR = 1.3


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text.split()) * _TOKEN_SAFETY_FACTOR)


def render_labels(labels: Sequence[TechniqueId], taxonomy: Optional[Taxonomy] = None,
                  include_names: bool = True) -> str:
    """Comma-separated canonical IDs, with taxonomy names unless disabled."""
    parts = []
    for tid in labels:
        name = taxonomy.name_of(tid) if (taxonomy is not None and include_names) else ""
        parts.append(f"{tid}: {name}" if name else str(tid))
    return ", ".join(parts)


@dataclass(frozen=True)
class GeneratorContext:
    query: str
    exemplars: tuple[tuple[str, tuple[TechniqueId, ...]], ...]
    serialized: str
    token_estimate: int


def build_context(query: str, pairs: Sequence[AnnotatedExample], k: int, budget: int,
                  taxonomy: Optional[Taxonomy] = None, include_names: bool = True,
                  token_counter: Optional[Callable[[str], int]] = None) -> GeneratorContext:
    """Serialize the query with up to k exemplars inside the token budget.

    Template: ``x [text] x1 [technique] Y1 [text] x2 [technique] Y2 ...``.
    Exemplars are dropped from the tail until the estimate fits; the query is
    never truncated (QueryTooLong if it alone exceeds the budget). Pass
    ``token_counter`` to swap the whitespace estimate for an exact tokenizer.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if budget <= 0:
        raise ValueError(f"budget must be > 0, got {budget}")
    count = token_counter or estimate_tokens

    def serialize(selected: Sequence[AnnotatedExample]) -> str:
        parts = [query]
        for ex in selected:
            parts.append(TEXT_SEPARATOR)
            parts.append(ex.text)
            parts.append(TECHNIQUE_SEPARATOR)
            parts.append(render_labels(ex.labels, taxonomy, include_names))
        return " ".join(parts)

    if count(query) > budget:
        raise QueryTooLong(f"query alone exceeds the {budget}-token budget")
    chosen = list(pairs[:min(k, len(pairs))])
    serialized = serialize(chosen)
    while chosen and count(serialized) > budget:
        chosen.pop()
        serialized = serialize(chosen)
    return GeneratorContext(
        query=query,
        exemplars=tuple((ex.text, tuple(ex.labels)) for ex in chosen),
        serialized=serialized,
        token_estimate=count(serialized),
    )
