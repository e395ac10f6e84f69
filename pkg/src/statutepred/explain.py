"""Attention-based explanations and their counterfactual evaluation.

An explanation for a predicted statute is the union over heads of the
sentence each head weights highest (argmax ties go to the lower index), so
it holds at most H sentences and possibly fewer when heads agree.

Two counterfactual scores check whether those sentences actually drive the
prediction.  For every (case, predicted statute) pair:

* necessity - drop the explanation sentences and re-run prediction; the
  pair counts when the statute is NOT predicted again (a case left with no
  sentences counts as not predicted: no evidence, no assertion);
* sufficiency - keep ONLY the explanation sentences (original order) and
  re-run; the pair counts when the statute IS predicted again.

Re-runs reuse the cached sentence vectors (rows are dropped or selected,
never re-encoded), so the scores are exact and cheap.  Both ratios share
one denominator: the total number of (case, predicted statute) pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import model
from .embeddings import EmbeddedCase


class NotPredictedError(ValueError):
    """Asked to explain a statute the model did not predict for this case."""


@dataclass(frozen=True)
class HeadPick:
    head: int
    sentence: int
    weight: float


@dataclass(frozen=True)
class Explanation:
    case_id: str
    statute_id: int
    sentence_indices: tuple[int, ...]   # ascending, deduplicated
    head_picks: tuple[HeadPick, ...]


def explain_from_trace(case_id: str, trace: model.ForwardTrace, statute: int) -> Explanation:
    if not 0 <= statute < trace.probs.shape[0]:
        raise ValueError(f"statute index {statute} outside [0, {trace.probs.shape[0]})")
    if statute not in trace.predicted_set():
        raise NotPredictedError(
            f"statute {statute} is not predicted for case {case_id!r} "
            f"(p={trace.positive_probs()[statute]:.4f})"
        )
    picks = []
    for head in range(trace.alpha.shape[1]):
        weights = trace.alpha[statute, head]
        j = int(np.argmax(weights))  # argmax takes the lowest index on ties
        picks.append(HeadPick(head=head, sentence=j, weight=float(weights[j])))
    indices = tuple(sorted({p.sentence for p in picks}))
    return Explanation(
        case_id=case_id, statute_id=statute, sentence_indices=indices, head_picks=tuple(picks)
    )


def explain(
    params: model.ModelParams,
    config: model.ModelConfig,
    case_id: str,
    X: np.ndarray,
    Y: np.ndarray,
    statute: int,
) -> Explanation:
    trace = model.forward(params, config, X, Y, training=False)
    return explain_from_trace(case_id, trace, statute)


def explanations_for_case(
    params: model.ModelParams,
    config: model.ModelConfig,
    case_id: str,
    X: np.ndarray,
    Y: np.ndarray,
) -> list[Explanation]:
    """One explanation per predicted statute, ascending statute id."""
    trace = model.forward(params, config, X, Y, training=False)
    return [explain_from_trace(case_id, trace, s) for s in sorted(trace.predicted_set())]


@dataclass
class StatuteCounts:
    predictions: int = 0
    removed_not_repredicted: int = 0
    retained_repredicted: int = 0


@dataclass
class CounterfactualReport:
    total_predictions: int = 0
    removed_not_repredicted: int = 0
    retained_repredicted: int = 0
    per_statute: dict[int, StatuteCounts] = field(default_factory=dict)

    @property
    def nf(self) -> float:
        if self.total_predictions == 0:
            return 0.0
        return self.removed_not_repredicted / self.total_predictions

    @property
    def sf(self) -> float:
        if self.total_predictions == 0:
            return 0.0
        return self.retained_repredicted / self.total_predictions

    def as_dict(self, names: dict[int, str] | None = None) -> dict:
        def label(i: int) -> str:
            return names[i] if names else str(i)

        return {
            "total": self.total_predictions,
            "nf_numerator": self.removed_not_repredicted,
            "nf": self.nf,
            "sf_numerator": self.retained_repredicted,
            "sf": self.sf,
            "per_statute": {
                label(i): {
                    "predictions": c.predictions,
                    "nf_numerator": c.removed_not_repredicted,
                    "sf_numerator": c.retained_repredicted,
                }
                for i, c in sorted(self.per_statute.items())
            },
        }


def counterfactual_report(
    params: model.ModelParams,
    config: model.ModelConfig,
    cases: Sequence[EmbeddedCase],
    Y: np.ndarray,
) -> CounterfactualReport:
    """Necessity and sufficiency tallies over every predicted statute.

    Predicted statutes are evaluated regardless of gold correctness.
    """
    Y = np.asarray(Y, dtype=np.float64)
    report = CounterfactualReport()
    for case in cases:
        X = np.asarray(case.matrix, dtype=np.float64)
        trace = model.forward(params, config, X, Y, training=False)
        for statute in sorted(trace.predicted_set()):
            explanation = explain_from_trace(case.case_id, trace, statute)
            picked = list(explanation.sentence_indices)
            counts = report.per_statute.setdefault(statute, StatuteCounts())
            report.total_predictions += 1
            counts.predictions += 1

            remaining = [j for j in range(X.shape[0]) if j not in explanation.sentence_indices]
            if not remaining:
                still_predicted = False
            else:
                still_predicted = (
                    statute in model.predict(params, config, X[remaining], Y).predicted
                )
            if not still_predicted:
                report.removed_not_repredicted += 1
                counts.removed_not_repredicted += 1

            reduced = statute in model.predict(params, config, X[picked], Y).predicted
            if reduced:
                report.retained_repredicted += 1
                counts.retained_repredicted += 1
    return report


def necessity_factor(
    params: model.ModelParams,
    config: model.ModelConfig,
    cases: Sequence[EmbeddedCase],
    Y: np.ndarray,
) -> float:
    """Fraction of predictions that flip off when their explanation is removed."""
    return counterfactual_report(params, config, cases, Y).nf


def sufficiency_factor(
    params: model.ModelParams,
    config: model.ModelConfig,
    cases: Sequence[EmbeddedCase],
    Y: np.ndarray,
) -> float:
    """Fraction of predictions reproduced from the explanation sentences alone."""
    return counterfactual_report(params, config, cases, Y).sf
