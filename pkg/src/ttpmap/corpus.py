"""Paired dataset handling: annotated examples and leakage-excluded views.

Datasets are JSONL, one record per line:
``{"id": str?, "text": str, "labels": [str], "source": str?}``.
Records missing ``id`` get ``source:line-number``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

from .errors import EmptyCorpus, FormatError, MalformedId
from .taxonomy import TechniqueId, parse_id


def normalize_text(text: str) -> str:
    """Collapse whitespace runs and trim; the equality used for leakage exclusion."""
    return " ".join(text.split())


@dataclass(frozen=True)
class AnnotatedExample:
    """One security text with its ordered gold (sub-)technique labels."""

    id: str
    text: str
    labels: tuple[TechniqueId, ...]
    split: str = "train"
    source: str = ""


class Corpus:
    """Ordered, id-indexed collection of annotated examples."""

    def __init__(self, examples: list[AnnotatedExample]):
        self.examples = list(examples)
        self._by_id: dict[str, AnnotatedExample] = {}
        for ex in self.examples:
            if ex.id in self._by_id:
                raise FormatError(f"duplicate example id: {ex.id}")
            self._by_id[ex.id] = ex

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[AnnotatedExample]:
        return iter(self.examples)

    def __contains__(self, example_id: str) -> bool:
        return example_id in self._by_id

    def __getitem__(self, example_id: str) -> AnnotatedExample:
        return self._by_id[example_id]

    def get(self, example_id: str) -> Optional[AnnotatedExample]:
        return self._by_id.get(example_id)


def load_jsonl(path: Union[str, Path], split: str = "train", source: str = "") -> Corpus:
    """Load a JSONL dataset in file order, parsing labels strictly.

    A record whose labels are missing, empty, or malformed is a FormatError
    (malformed IDs surface as MalformedId carrying the record locator).
    """
    path = Path(path)
    source = source or path.stem
    examples = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "text" not in record:
                raise FormatError(f"{path}:{line_no}: record must be an object with 'text'")
            raw_labels = record.get("labels")
            if not isinstance(raw_labels, list) or not raw_labels:
                raise FormatError(f"{path}:{line_no}: record has zero labels")
            labels = []
            for raw in raw_labels:
                try:
                    labels.append(parse_id(raw))
                except MalformedId as exc:
                    raise MalformedId(f"{path}:{line_no}: {exc}") from exc
            examples.append(AnnotatedExample(
                id=str(record.get("id") or f"{source}:{line_no}"),
                text=str(record["text"]),
                labels=tuple(labels),
                split=split,
                source=str(record.get("source") or source),
            ))
    return Corpus(examples)


def save_jsonl(corpus: Corpus, path: Union[str, Path]) -> None:
    """Canonical re-serialization; load(save(load(f))) is a fixed point."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in corpus:
            record = {
                "id": ex.id,
                "text": ex.text,
                "labels": [str(t) for t in ex.labels],
                "source": ex.source,
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def retrieval_view(corpus: Corpus, query_text: str) -> Corpus:
    """The leakage-excluded corpus: every example whose text differs from the query.

    Equality is exact after whitespace normalization; duplicates of the query
    text are all excluded. The input corpus is unmodified.
    """
    needle = normalize_text(query_text)
    return Corpus([ex for ex in corpus if normalize_text(ex.text) != needle])


@dataclass(frozen=True)
class CorpusStats:
    n_examples: int
    mean_label_count: float
    mean_token_count: float
    unique_label_count: int


def stats(corpus: Corpus, tokenizer=None) -> CorpusStats:
    """Summary statistics; token counts use the retriever's tokenizer by default."""
    if len(corpus) == 0:
        raise EmptyCorpus("cannot compute stats of an empty corpus")
    if tokenizer is None:
        from .retriever import tokenize as tokenizer
    n = len(corpus)
    label_total = sum(len(ex.labels) for ex in corpus)
    token_total = sum(len(tokenizer(ex.text)) for ex in corpus)
    unique = {str(t) for ex in corpus for t in ex.labels}
    return CorpusStats(
        n_examples=n,
        mean_label_count=label_total / n,
        mean_token_count=token_total / n,
        unique_label_count=len(unique),
    )
