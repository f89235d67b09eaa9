"""Evaluation metrics: per-class PRF, micro-averaged ROC/PR AUC, pipeline accuracy.

AUCs flatten the (sample, class) pairs one-vs-rest. ROC ties earn half
credit, which makes the rank formulation agree exactly with trapezoidal
integration. PR area uses the step-wise sum over recall increments (no
interpolation). Pipeline metrics treat the four heads jointly: exact-match
accuracy, at-least-k partial accuracy, and the mean of per-model accuracies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

PIPELINE_TARGETS = ("RAMCOUNT", "CPUTIME", "IOINTENSITY", "WALLTIME")


@dataclass
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @classmethod
    def from_labels(cls, y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ValueError("y_true and y_pred must share length")
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (y_true, y_pred), 1)
        return cls(counts=counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ClasswiseReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_precision: float
    micro_recall: float
    micro_f1: float
    accuracy: float
    zero_division_flags: list[str] = field(default_factory=list)


def per_class_prf(cm: ConfusionMatrix) -> ClasswiseReport:
    """Per-class precision/recall/F1 with macro and micro aggregates.

    Zero denominators yield 0 and are flagged rather than raising, since
    rare classes can receive no predictions at small sample sizes.
    """
    counts = cm.counts
    if counts.size == 0 or cm.n_classes < 2:
        raise ValueError("confusion matrix must cover at least 2 classes")

    tp = np.diag(counts).astype(float)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    flags: list[str] = []

    precision = np.zeros(cm.n_classes)
    recall = np.zeros(cm.n_classes)
    f1 = np.zeros(cm.n_classes)
    for c in range(cm.n_classes):
        if tp[c] + fp[c] > 0:
            precision[c] = tp[c] / (tp[c] + fp[c])
        else:
            flags.append(f"precision[{c}]")
        if tp[c] + fn[c] > 0:
            recall[c] = tp[c] / (tp[c] + fn[c])
        else:
            flags.append(f"recall[{c}]")
        if precision[c] + recall[c] > 0:
            f1[c] = 2 * precision[c] * recall[c] / (precision[c] + recall[c])
        else:
            flags.append(f"f1[{c}]")

    total = counts.sum()
    micro_tp = tp.sum()
    micro = micro_tp / total if total > 0 else 0.0

    return ClasswiseReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=counts.sum(axis=1),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        micro_precision=float(micro),
        micro_recall=float(micro),
        micro_f1=float(micro),
        accuracy=float(micro),
        zero_division_flags=flags,
    )


def _flatten_ovr(probs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(labels) != probs.shape[0]:
        raise ValueError("probs must be (n_samples, n_classes) aligned with labels")
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return probs.ravel(), onehot.ravel()


def roc_auc_micro(probs: np.ndarray, labels: np.ndarray) -> float:
    """Micro-average ROC AUC over the flattened one-vs-rest expansion.

    Computed as the Mann-Whitney statistic with average ranks, i.e. the
    probability that a random positive outscores a random negative, ties
    counting one half.
    """
    scores, positive = _flatten_ovr(probs, labels)
    n_pos = positive.sum()
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative pair")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0   # average rank, 1-based
        i = j + 1
    rank_sum = ranks[positive == 1.0].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc_micro(probs: np.ndarray, labels: np.ndarray) -> float:
    """Micro-average PR AUC: sum of (R_i - R_{i-1}) * P_i over score thresholds."""
    scores, positive = _flatten_ovr(probs, labels)
    n_pos = positive.sum()
    if n_pos == 0:
        raise ValueError("need at least one positive pair")

    order = np.argsort(-scores, kind="mergesort")
    scores = scores[order]
    positive = positive[order]

    tp = np.cumsum(positive)
    pred_pos = np.arange(1, len(scores) + 1)
    # thresholds sit at the last index of each tie group
    boundary = np.append(scores[1:] != scores[:-1], True)
    precision = tp[boundary] / pred_pos[boundary]
    recall = tp[boundary] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def roc_curve_points(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(fpr, tpr) points of the micro-average ROC curve, for plotting."""
    scores, positive = _flatten_ovr(probs, labels)
    n_pos = positive.sum()
    n_neg = len(positive) - n_pos
    order = np.argsort(-scores, kind="mergesort")
    positive = positive[order]
    scores = scores[order]
    tp = np.cumsum(positive)
    fp = np.cumsum(1.0 - positive)
    boundary = np.append(scores[1:] != scores[:-1], True)
    tpr = np.concatenate([[0.0], tp[boundary] / n_pos])
    fpr = np.concatenate([[0.0], fp[boundary] / n_neg])
    return np.column_stack([fpr, tpr])


def pr_curve_points(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(recall, precision) points of the micro-average PR curve."""
    scores, positive = _flatten_ovr(probs, labels)
    n_pos = positive.sum()
    order = np.argsort(-scores, kind="mergesort")
    positive = positive[order]
    scores = scores[order]
    tp = np.cumsum(positive)
    pred_pos = np.arange(1, len(scores) + 1)
    boundary = np.append(scores[1:] != scores[:-1], True)
    precision = np.concatenate([[1.0], tp[boundary] / pred_pos[boundary]])
    recall = np.concatenate([[0.0], tp[boundary] / n_pos])
    return np.column_stack([recall, precision])


@dataclass
class PipelineReport:
    """Joint accuracy of the four heads on one evaluation set."""

    exact_match_accuracy: float
    at_least_k: dict[int, float]              # k in 1..4
    per_model_accuracy: dict[str, float]
    average_pipeline_accuracy: float
    n_samples: int

    def as_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "exact_match_accuracy": self.exact_match_accuracy,
            "at_least_k": {str(k): v for k, v in self.at_least_k.items()},
            "per_model_accuracy": dict(self.per_model_accuracy),
            "average_pipeline_accuracy": self.average_pipeline_accuracy,
        }


def pipeline_metrics(
    predictions: Mapping[str, Sequence[int]],
    labels: Mapping[str, Sequence[int]],
) -> PipelineReport:
    """Exact-match, at-least-k and average accuracy over the four targets."""
    missing = set(PIPELINE_TARGETS) - set(predictions) | set(PIPELINE_TARGETS) - set(labels)
    if missing:
        raise ValueError(f"missing targets: {sorted(missing)}")

    pred = {t: np.asarray(predictions[t], dtype=np.int64) for t in PIPELINE_TARGETS}
    true = {t: np.asarray(labels[t], dtype=np.int64) for t in PIPELINE_TARGETS}
    lengths = {len(v) for v in pred.values()} | {len(v) for v in true.values()}
    if len(lengths) != 1:
        raise ValueError("prediction and label vectors must share length")
    n = lengths.pop()
    if n < 1:
        raise ValueError("need at least one sample")

    correct = np.stack([pred[t] == true[t] for t in PIPELINE_TARGETS])  # (4, n)
    n_correct = correct.sum(axis=0)

    per_model = {t: float(correct[i].mean()) for i, t in enumerate(PIPELINE_TARGETS)}
    at_least = {k: float((n_correct >= k).mean()) for k in (1, 2, 3, 4)}

    return PipelineReport(
        exact_match_accuracy=at_least[4],
        at_least_k=at_least,
        per_model_accuracy=per_model,
        average_pipeline_accuracy=float(np.mean(list(per_model.values()))),
        n_samples=n,
    )


def average_pipeline_accuracy(per_model: Sequence[float]) -> float:
    """Unweighted mean of the individual model accuracies."""
    if len(per_model) == 0:
        raise ValueError("need at least one accuracy")
    return float(np.mean(np.asarray(per_model, dtype=float)))
