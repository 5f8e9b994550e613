"""Sparse lexical retrieval over the paired corpus.

BM25 with the non-negative idf variant:

    idf(t)     = ln(1 + (N - df + 0.5) / (df + 0.5))
    score(q,d) = sum over query tokens t of
                 idf(t) * tf / (tf + k1 * (1 - b + b * len(d) / avg_len))

idf never goes negative under this variant, so adding a query term that
occurs in a document can only raise its score.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Union

from .errors import EmptyCorpus, FormatError

if TYPE_CHECKING:
    from .corpus import Corpus

# Split on non-alphanumerics, but keep technique-ID-shaped tokens (t1059.004)
# intact with their dot. No stemming, no stopwords.
_TOKEN_RE = re.compile(r"(?<![a-z0-9])t\d{4}\.\d{3}(?![a-z0-9])|[a-z0-9]+")

_INDEX_FORMAT_VERSION = 1


def tokenize(text: str) -> list[str]:
    """Lowercase tokens; '.' survives only inside technique-ID-shaped tokens."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Bm25Index:
    """Inverted index: term -> [(doc id, term frequency)] plus length statistics."""

    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    N: int
    k1: float
    b: float
    doc_order: dict[str, int] = field(default_factory=dict)


@dataclass
class Retrieval:
    """Score-descending hits; ids distinct, scores non-increasing."""

    hits: list[tuple[str, float]]

    def ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


def build_index(view: "Corpus", k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    """Index the view in its deterministic document order."""
    if k1 <= 0:
        raise ValueError(f"k1 must be > 0, got {k1}")
    if not 0 <= b <= 1:
        raise ValueError(f"b must be in [0, 1], got {b}")
    if len(view) == 0:
        raise EmptyCorpus("cannot index an empty corpus")
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    doc_order: dict[str, int] = {}
    for position, ex in enumerate(view):
        tokens = tokenize(ex.text)
        doc_lengths[ex.id] = len(tokens)
        doc_order[ex.id] = position
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((ex.id, tf))
    total = sum(doc_lengths.values())
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=total / len(doc_lengths),
        N=len(doc_lengths),
        k1=k1,
        b=b,
        doc_order=doc_order,
    )


def idf(index: Bm25Index, term: str) -> float:
    df = len(index.postings.get(term, ()))
    return math.log(1 + (index.N - df + 0.5) / (df + 0.5))


def search(index: Bm25Index, query: str, K: int,
           exclude: frozenset[str] | set[str] = frozenset()) -> Retrieval:
    """Top-K hits, score-descending, ties broken by document insertion order.

    Documents scoring 0 are dropped; a query with no matching terms returns
    an empty Retrieval. ``exclude`` skips documents by id without touching
    the index statistics (used for per-request leakage exclusion against a
    shared index).
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    scores: dict[str, float] = {}
    for term in tokenize(query):
        posting = index.postings.get(term)
        if not posting:
            continue
        term_idf = idf(index, term)
        for doc_id, tf in posting:
            if doc_id in exclude:
                continue
            length = index.doc_lengths[doc_id]
            norm = index.k1 * (1 - index.b + index.b * length / index.avg_doc_length)
            scores[doc_id] = scores.get(doc_id, 0.0) + term_idf * tf / (tf + norm)
    ranked = sorted(
        ((doc_id, score) for doc_id, score in scores.items() if score > 0.0),
        key=lambda item: (-item[1], index.doc_order[item[0]]),
    )
    return Retrieval(hits=ranked[:K])


def save_index(index: Bm25Index, path: Union[str, Path]) -> None:
    """Persist as a line-oriented postings dump (format private to this package)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "format_version": _INDEX_FORMAT_VERSION,
            "N": index.N,
            "avg_doc_length": index.avg_doc_length,
            "k1": index.k1,
            "b": index.b,
            "doc_lengths": index.doc_lengths,
            "doc_order": index.doc_order,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for term in sorted(index.postings):
            fh.write(json.dumps({"t": term, "p": index.postings[term]}) + "\n")


def load_index(path: Union[str, Path]) -> Bm25Index:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: corrupt index header: {exc}") from exc
        if header.get("format_version") != _INDEX_FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported index format version "
                              f"{header.get('format_version')!r}")
        postings: dict[str, list[tuple[str, int]]] = {}
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                postings[record["t"]] = [(doc_id, tf) for doc_id, tf in record["p"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{line_no}: corrupt postings line") from exc
    return Bm25Index(
        postings=postings,
        doc_lengths=dict(header["doc_lengths"]),
        avg_doc_length=float(header["avg_doc_length"]),
        N=int(header["N"]),
        k1=float(header["k1"]),
        b=float(header["b"]),
        doc_order={k: int(v) for k, v in header["doc_order"].items()},
    )
