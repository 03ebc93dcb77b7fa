"""ROC curves, AUC, the Youden threshold and group-wise AUC reports."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateLabelsError(ValueError):
    """Raised when a score/label set lacks one of the two classes."""


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by descending threshold.

    ``thresholds[0]`` is ``+inf`` and ``thresholds[-1]`` is ``-inf``; the finite
    entries are midpoints between consecutive distinct scores.  A sample is
    called positive when ``score >= threshold``.
    """

    thresholds: np.ndarray
    true_positives: np.ndarray
    true_negatives: np.ndarray
    positives: int
    negatives: int
    min_score: float

    @property
    def sensitivity(self) -> np.ndarray:
        return self.true_positives / self.positives

    @property
    def specificity(self) -> np.ndarray:
        return self.true_negatives / self.negatives


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be 1-D vectors of equal length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise DegenerateLabelsError("ROC analysis needs both positive and negative labels")
    return scores, labels.astype(np.int64)


def roc_curve(scores, labels) -> RocCurve:
    scores, labels = _validate(scores, labels)
    distinct, inverse = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inverse, weights=labels, minlength=distinct.size).astype(np.int64)
    neg_at = np.bincount(inverse, minlength=distinct.size) - pos_at
    n_pos, n_neg = int(pos_at.sum()), int(neg_at.sum())

    lo, hi = distinct[:-1], distinct[1:]
    mids = (lo + hi) / 2
    # Rounding can land a midpoint on the lower score; then it must sit on the upper one.
    mids = np.where(mids > lo, mids, hi)

    # Threshold just below distinct[i] (descending order) admits scores >= distinct[i].
    tp_desc = np.cumsum(pos_at[::-1])  # positives with score >= distinct[::-1][i]
    fp_desc = np.cumsum(neg_at[::-1])
    tp = np.concatenate([[0], tp_desc])
    fp = np.concatenate([[0], fp_desc])
    thresholds = np.concatenate([[np.inf], mids[::-1], [-np.inf]])
    return RocCurve(
        thresholds=thresholds,
        true_positives=tp,
        true_negatives=n_neg - fp,
        positives=n_pos,
        negatives=n_neg,
        min_score=float(distinct[0]),
    )


def auc_from_roc(roc: RocCurve) -> float:
    tpr = roc.sensitivity
    fpr = 1.0 - roc.specificity
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


def auc_score(scores, labels) -> float:
    return auc_from_roc(roc_curve(scores, labels))


def youden_threshold(roc: RocCurve) -> float:
    """Threshold maximising sensitivity + specificity.

    Ties go to the smallest finite threshold.  When no finite threshold reaches
    the maximum (for instance every score is tied), the result is the smallest
    score, which classifies every sample as positive just like ``-inf``.
    """
    # u + v compared exactly as tp * N + tn * P.
    j = roc.true_positives * roc.negatives + roc.true_negatives * roc.positives
    finite = np.isfinite(roc.thresholds)
    best = j.max()
    candidates = roc.thresholds[finite & (j == best)]
    if candidates.size:
        return float(candidates.min())
    return roc.min_score


@dataclass(frozen=True)
class GroupAucReport:
    aligned_auc: float | None
    conflicting_auc: float | None
    overall_auc: float | None
    counts: dict

    @property
    def balanced_auc(self) -> float | None:
        if self.aligned_auc is None or self.conflicting_auc is None:
            return None
        return (self.aligned_auc + self.conflicting_auc) / 2

    @property
    def gap(self) -> float | None:
        if self.aligned_auc is None or self.conflicting_auc is None:
            return None
        return self.aligned_auc - self.conflicting_auc

    def to_dict(self) -> dict:
        return {
            "aligned": self.aligned_auc,
            "conflicting": self.conflicting_auc,
            "balanced": self.balanced_auc,
            "overall": self.overall_auc,
            "counts": dict(self.counts),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> GroupAucReport:
        return cls(doc["aligned"], doc["conflicting"], doc["overall"], dict(doc.get("counts", {})))


def _auc_or_none(scores, labels) -> float | None:
    if labels.size == 0 or labels.min() == labels.max():
        return None
    return auc_score(scores, labels)


def group_auc_report(scores, y, b=None) -> GroupAucReport:
    """AUC on bias-aligned, bias-conflicting and all samples.

    Subsets lacking a class, or missing bias labels, yield ``None`` entries.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if scores.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    counts = {"total": int(y.size)}
    overall = _auc_or_none(scores, y)
    if b is None:
        return GroupAucReport(None, None, overall, counts)
    b = np.asarray(b, dtype=np.int64)
    if b.shape != y.shape:
        raise ValueError("bias labels differ in length")
    aligned = y == b
    counts["aligned"] = int(aligned.sum())
    counts["conflicting"] = int((~aligned).sum())
    return GroupAucReport(
        _auc_or_none(scores[aligned], y[aligned]),
        _auc_or_none(scores[~aligned], y[~aligned]),
        overall,
        counts,
    )
