"""Mini-batch Adam training with dev-set model selection.

Batch loss is the SUM of per-instance losses (recorded in checkpoint
metadata; the learning rate absorbs the scale).  After every epoch the dev
split is scored and the parameters with the best dev macro-F1 are the ones
returned.  A fixed seed fixes initialization order, batch shuffling, and
dropout masks, so single-threaded runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import metrics, model
from .embeddings import EmbeddedCase

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries epoch/batch context in the message."""


@dataclass(frozen=True)
class TrainerOptions:
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 30
    patience: int | None = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when set")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_micro_f1: float
    dev_macro_f1: float
    dev_avg_jaccard: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "dev_micro_f1": self.dev_micro_f1,
            "dev_macro_f1": self.dev_macro_f1,
            "dev_avg_jaccard": self.dev_avg_jaccard,
        }


@dataclass
class TrainResult:
    params: model.ModelParams
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


class _Adam:
    def __init__(self, params: model.ModelParams, learning_rate: float):
        self.lr = learning_rate
        self.step_count = 0
        self.m = model.zeros_like_params(params)
        self.v = model.zeros_like_params(params)

    def step(self, params: model.ModelParams, grads: model.ModelParams) -> None:
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - ADAM_BETA1**t
        bias2 = 1.0 - ADAM_BETA2**t
        for name in model.ModelParams.TENSOR_NAMES:
            g = getattr(grads, name)
            m = getattr(self.m, name)
            v = getattr(self.v, name)
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * np.square(g)
            update = (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPS)
            getattr(params, name)[...] -= self.lr * update


def evaluate(
    params: model.ModelParams,
    config: model.ModelConfig,
    cases: Sequence[EmbeddedCase],
    Y: np.ndarray,
) -> dict:
    """Predict every case and score against its gold labels."""
    predicted = []
    gold = []
    for case in cases:
        pred = model.predict(params, config, case.matrix, Y)
        predicted.append((case.case_id, set(pred.predicted)))
        gold.append((case.case_id, set(case.gold_labels)))
    return metrics.evaluate_sets(predicted, gold, config.num_statutes)


def train(
    initial: model.ModelParams,
    config: model.ModelConfig,
    train_cases: Sequence[EmbeddedCase],
    dev_cases: Sequence[EmbeddedCase],
    Y: np.ndarray,
    options: TrainerOptions,
) -> TrainResult:
    """Run the optimization loop; returns the best-dev parameters.

    With zero epochs the initial parameters come back unchanged.  With an
    empty dev split no model selection happens and the final parameters
    are returned.
    """
    if options.epochs == 0:
        return TrainResult(params=initial, history=[], best_epoch=0)
    if not train_cases:
        raise ValueError("no training cases")
    Y = np.asarray(Y, dtype=np.float64)
    params = initial.copy()
    optimizer = _Adam(params, options.learning_rate)
    rng = np.random.default_rng(options.seed)

    history: list[EpochStats] = []
    best_params = None
    best_macro = -1.0
    best_epoch = 0
    epochs_since_best = 0

    for epoch in range(1, options.epochs + 1):
        order = rng.permutation(len(train_cases))
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, len(order), options.batch_size)):
            batch = order[start : start + options.batch_size]
            grads = model.zeros_like_params(params)
            for case_index in batch:
                case = train_cases[case_index]
                dropout_seed = int(rng.integers(0, 2**31 - 1))
                try:
                    trace = model.forward(
                        params, config, case.matrix, Y, training=True, dropout_seed=dropout_seed
                    )
                    total, _ = model.loss(trace, case.gold_labels, config)
                except FloatingPointError as exc:
                    raise TrainingDiverged(
                        f"divergence at epoch {epoch}, batch {batch_index}, "
                        f"case {case.case_id!r}: {exc}"
                    ) from exc
                if not np.isfinite(total):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {batch_index}, "
                        f"case {case.case_id!r}"
                    )
                epoch_loss += total
                g = model.backward(params, config, case.matrix, Y, case.gold_labels, trace)
                for name in model.ModelParams.TENSOR_NAMES:
                    getattr(grads, name)[...] += getattr(g, name)
            optimizer.step(params, grads)

        stats = EpochStats(
            epoch=epoch,
            train_loss=epoch_loss / len(train_cases),
            dev_micro_f1=0.0,
            dev_macro_f1=0.0,
            dev_avg_jaccard=0.0,
        )
        if dev_cases:
            scores = evaluate(params, config, dev_cases, Y)
            stats.dev_micro_f1 = scores["micro"]["f1"]
            stats.dev_macro_f1 = scores["macro"]["f1"]
            stats.dev_avg_jaccard = scores["avg_jaccard"]
            if stats.dev_macro_f1 > best_macro:
                best_macro = stats.dev_macro_f1
                best_params = params.copy()
                best_epoch = epoch
                epochs_since_best = 0
            else:
                epochs_since_best += 1
        history.append(stats)
        if (
            dev_cases
            and options.patience is not None
            and epochs_since_best >= options.patience
        ):
            break

    if best_params is None:
        best_params = params
        best_epoch = history[-1].epoch if history else 0
    return TrainResult(params=best_params, history=history, best_epoch=best_epoch)
