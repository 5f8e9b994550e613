"""Scoring: set-based P/R/F1 at technique and sub-technique level, plus @k.

Micro-averaging pools (tp, fp, fn) across examples before computing the
triple; example-averaging means the per-example triples instead. Technique
level truncates sub-technique suffixes on both sides before scoring.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from .corpus import Corpus
from .errors import LevelMismatch, MissingPrediction
from .generation import Annotation
from .reranker import RankedCandidates
from .taxonomy import TechniqueId, truncate

LEVELS = ("technique", "sub")


@dataclass(frozen=True)
class LabelSet:
    """Unordered unique labels at one granularity level."""

    ids: frozenset[TechniqueId]
    level: str

    @classmethod
    def from_labels(cls, labels: Sequence[TechniqueId], level: str) -> "LabelSet":
        if level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {level!r}")
        if level == "technique":
            labels = [truncate(t) for t in labels]
        return cls(ids=frozenset(labels), level=level)


def score_sets(pred: LabelSet, gold: LabelSet) -> tuple[int, int, int]:
    """(tp, fp, fn) under set semantics."""
    if pred.level != gold.level:
        raise LevelMismatch(f"cannot score {pred.level} against {gold.level}")
    tp = len(pred.ids & gold.ids)
    return tp, len(pred.ids) - tp, len(gold.ids) - tp


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    n_examples: int
    level: str
    mode: str
    dataset: str = ""
    average: str = "micro"
    per_example: list[dict] = field(default_factory=list)


def _build_report(rows: list[tuple[str, int, int, int]], level: str, mode: str,
                  dataset: str, average: str) -> MetricsReport:
    per_example = []
    for example_id, tp, fp, fn in rows:
        p, r, f1 = _prf(tp, fp, fn)
        per_example.append({"id": example_id, "tp": tp, "fp": fp, "fn": fn,
                            "precision": p, "recall": r, "f1": f1})
    if average == "micro":
        tp = sum(row[1] for row in rows)
        fp = sum(row[2] for row in rows)
        fn = sum(row[3] for row in rows)
        p, r, f1 = _prf(tp, fp, fn)
    elif average == "example":
        n = len(per_example) or 1
        p = sum(e["precision"] for e in per_example) / n
        r = sum(e["recall"] for e in per_example) / n
        f1 = sum(e["f1"] for e in per_example) / n
    else:
        raise ValueError(f"average must be 'micro' or 'example', got {average!r}")
    return MetricsReport(precision=p, recall=r, f1=f1, n_examples=len(rows),
                         level=level, mode=mode, dataset=dataset, average=average,
                         per_example=per_example)


def evaluate(predictions: Sequence[Annotation], gold: Corpus, level: str = "sub",
             average: str = "micro", dataset: str = "") -> MetricsReport:
    """Score end-to-end predictions against a gold corpus, aligned by example id.

    Every gold example needs a prediction (MissingPrediction otherwise);
    prediction ids without a gold example are ignored.
    """
    by_id = {a.query_id: a for a in predictions}
    missing = [ex.id for ex in gold if ex.id not in by_id]
    if missing:
        raise MissingPrediction(missing)
    rows = []
    for ex in gold:
        pred = LabelSet.from_labels(by_id[ex.id].predicted, level)
        gold_set = LabelSet.from_labels(ex.labels, level)
        tp, fp, fn = score_sets(pred, gold_set)
        rows.append((ex.id, tp, fp, fn))
    return _build_report(rows, level, "end_to_end", dataset, average)


def top_k_labels(order: Sequence[TechniqueId], k: int, level: str) -> list[TechniqueId]:
    """Level-truncate, dedup preserving order, then trim to k distinct labels."""
    seen: set[str] = set()
    out: list[TechniqueId] = []
    for tid in order:
        if level == "technique":
            tid = truncate(tid)
        canonical = str(tid)
        if canonical not in seen:
            seen.add(canonical)
            out.append(tid)
        if len(out) == k:
            break
    return out


def evaluate_at_k(rankings: Mapping[str, Union[RankedCandidates, Sequence[TechniqueId]]],
                  gold: Corpus, k: int, level: str = "sub", average: str = "micro",
                  dataset: str = "") -> MetricsReport:
    """Score the top-k of each ranking against gold (ranking metrics @k)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    missing = [ex.id for ex in gold if ex.id not in rankings]
    if missing:
        raise MissingPrediction(missing)
    rows = []
    for ex in gold:
        ranking = rankings[ex.id]
        order = ranking.order if isinstance(ranking, RankedCandidates) else ranking
        if not order:
            raise ValueError(f"ranking for {ex.id} has no candidates")
        pred = LabelSet.from_labels(top_k_labels(order, k, level), level)
        gold_set = LabelSet.from_labels(ex.labels, level)
        tp, fp, fn = score_sets(pred, gold_set)
        rows.append((ex.id, tp, fp, fn))
    return _build_report(rows, level, f"at_{k}", dataset, average)


_COLUMNS = ("dataset", "level", "mode", "n", "precision", "recall", "f1")


def report_table(reports: Sequence[MetricsReport]) -> tuple[str, str]:
    """(csv_text, pretty_text); P/R/F1 rendered as percentages to 2 decimals."""
    rows = [
        (r.dataset, r.level, r.mode, str(r.n_examples),
         f"{100 * r.precision:.2f}", f"{100 * r.recall:.2f}", f"{100 * r.f1:.2f}")
        for r in reports
    ]
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(_COLUMNS)
    writer.writerows(rows)
    widths = [max(len(col), *(len(row[i]) for row in rows)) if rows else len(col)
              for i, col in enumerate(_COLUMNS)]
    lines = ["  ".join(col.ljust(widths[i]) for i, col in enumerate(_COLUMNS))]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return buffer.getvalue(), "\n".join(lines)
