"""Multi-label evaluation: micro/macro P/R/F1, average Jaccard, per-statute table.

Conventions: every 0/0 ratio is 0; Jaccard of two empty sets is 1.0 (an
empty prediction for an unlabelled case is exactly right); macro averages
run over ALL registry labels, including ones never seen in gold or
predictions.  Counts are plain ints and the arithmetic is plain Python, so
results are reproducible down to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Set

import numpy as np

from .corpus import Statute


@dataclass
class LabelConfusion:
    """Per-statute TP/FP/FN tallies over a prediction run."""

    tp: list[int]
    fp: list[int]
    fn: list[int]

    @property
    def num_labels(self) -> int:
        return len(self.tp)

    def totals(self) -> tuple[int, int, int]:
        return sum(self.tp), sum(self.fp), sum(self.fn)


def confusion_from_sets(
    predicted: Sequence[Set[int]], gold: Sequence[Set[int]], num_labels: int
) -> LabelConfusion:
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} prediction sets vs {len(gold)} gold sets")
    conf = LabelConfusion(tp=[0] * num_labels, fp=[0] * num_labels, fn=[0] * num_labels)
    for pred_set, gold_set in zip(predicted, gold):
        for label in pred_set:
            if label in gold_set:
                conf.tp[label] += 1
            else:
                conf.fp[label] += 1
        for label in gold_set:
            if label not in pred_set:
                conf.fn[label] += 1
    return conf


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def micro_prf(confusion: LabelConfusion) -> tuple[float, float, float]:
    """P/R/F1 over globally pooled TP/FP/FN counts."""
    return prf(*confusion.totals())


def macro_prf(confusion: LabelConfusion) -> tuple[float, float, float]:
    """Arithmetic mean of per-label P/R/F1 across all labels."""
    n = confusion.num_labels
    per_label = [prf(confusion.tp[i], confusion.fp[i], confusion.fn[i]) for i in range(n)]
    precision = sum(v[0] for v in per_label) / n
    recall = sum(v[1] for v in per_label) / n
    f1 = sum(v[2] for v in per_label) / n
    return precision, recall, f1


def avg_jaccard(
    predicted: Sequence[tuple[str, Set[int]]], gold: Sequence[tuple[str, Set[int]]]
) -> float:
    """Mean per-case |P∩G| / |P∪G| over case-aligned records."""
    if len(predicted) != len(gold):
        raise ValueError(f"{len(predicted)} prediction records vs {len(gold)} gold records")
    if not predicted:
        raise ValueError("no cases to score")
    total = 0.0
    for (pred_id, pred_set), (gold_id, gold_set) in zip(predicted, gold):
        if pred_id != gold_id:
            raise ValueError(f"misaligned case ids: {pred_id!r} vs {gold_id!r}")
        union = len(pred_set | gold_set)
        total += len(pred_set & gold_set) / union if union > 0 else 1.0
    return total / len(predicted)


def evaluate_sets(
    predicted: Sequence[tuple[str, Set[int]]],
    gold: Sequence[tuple[str, Set[int]]],
    num_labels: int,
) -> dict:
    """Micro + macro P/R/F1 and average Jaccard in one report dict."""
    conf = confusion_from_sets([p for _, p in predicted], [g for _, g in gold], num_labels)
    micro = micro_prf(conf)
    macro = macro_prf(conf)
    return {
        "micro": {"precision": micro[0], "recall": micro[1], "f1": micro[2]},
        "macro": {"precision": macro[0], "recall": macro[1], "f1": macro[2]},
        "avg_jaccard": avg_jaccard(predicted, gold),
    }


@dataclass(frozen=True)
class StatuteReportRow:
    statute_id: int
    name: str
    f1: float
    train_count: int
    confusable_count: int | None


def confusable_counts(statute_matrix: np.ndarray, threshold: float = 0.75) -> list[int]:
    """For each statute, how many OTHER statutes have content embeddings
    with cosine similarity at or above the threshold."""
    mat = np.asarray(statute_matrix, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = mat / safe[:, None]
    sims = unit @ unit.T
    sims[norms == 0, :] = 0.0
    sims[:, norms == 0] = 0.0
    np.fill_diagonal(sims, 0.0)
    return [int((row >= threshold).sum()) for row in sims]


def per_statute_report(
    confusion: LabelConfusion,
    registry: Sequence[Statute],
    train_counts: Mapping[int, int],
    statute_matrix: np.ndarray | None = None,
    similarity_threshold: float = 0.75,
) -> list[StatuteReportRow]:
    """Per-statute F1 next to training frequency and content confusability."""
    if len(registry) != confusion.num_labels:
        raise ValueError(f"registry size {len(registry)} vs {confusion.num_labels} labels")
    confusable = (
        confusable_counts(statute_matrix, similarity_threshold)
        if statute_matrix is not None
        else None
    )
    rows = []
    for statute in registry:
        i = statute.statute_id
        _, _, f1 = prf(confusion.tp[i], confusion.fp[i], confusion.fn[i])
        rows.append(
            StatuteReportRow(
                statute_id=i,
                name=statute.name,
                f1=f1,
                train_count=int(train_counts.get(i, 0)),
                confusable_count=confusable[i] if confusable is not None else None,
            )
        )
    return rows
