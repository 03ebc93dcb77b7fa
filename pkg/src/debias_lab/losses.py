"""Cross entropy, generalized cross entropy and the bias-balanced softmax loss.

Every loss returns ``(mean_loss, grad_logits)`` where ``grad_logits`` is the
gradient of the mean loss with respect to the pre-softmax logits.  Loss code
is written for any number of classes ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import softmax_stable

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class PriorTable:
    """Per-bias-class target frequencies p(y=j | b) with Laplace smoothing."""

    counts: np.ndarray  # shape (k, num_bias_classes)
    smoothing_alpha: float = 1.0

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] < 2 or counts.shape[1] < 1:
            raise ValueError(f"counts must be a (k>=2, bias classes) matrix, got {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing_alpha must be >= 0")
        object.__setattr__(self, "counts", counts)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def num_bias_classes(self) -> int:
        return self.counts.shape[1]

    @property
    def probs(self) -> np.ndarray:
        a = self.smoothing_alpha
        num = self.counts + a
        den = self.counts.sum(axis=0, keepdims=True) + self.num_classes * a
        with np.errstate(invalid="ignore", divide="ignore"):
            return num / den

    def log_priors(self, b: np.ndarray) -> np.ndarray:
        """Rows of log p(. | b) for each bias label, shape (batch, k)."""
        b = np.asarray(b, dtype=np.int64)
        if b.size and (b.min() < 0 or b.max() >= self.num_bias_classes):
            raise ValueError("bias label out of range")
        p = self.probs[:, b].T
        if not np.all(p > 0):
            raise ValueError("zero or undefined prior for a bias group; use smoothing_alpha > 0")
        return np.log(p)

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "num_bias_classes": self.num_bias_classes,
            "smoothing_alpha": self.smoothing_alpha,
            "counts": self.counts.tolist(),
            "probs": [[None if np.isnan(v) else float(v) for v in row] for row in self.probs],
        }


def _check_labels(y, n: int, k: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError(f"labels have shape {y.shape}, expected ({n},)")
    if n and (y.min() < 0 or y.max() >= k):
        raise ValueError("label out of range")
    return y


def _onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def ce_per_sample(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    f_y = probs[np.arange(len(y)), y]
    return -np.log(np.maximum(f_y, PROB_FLOOR))


def ce_loss(probs: np.ndarray, y) -> tuple[float, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    y = _check_labels(y, n, k)
    loss = float(np.mean(ce_per_sample(probs, y)))
    return loss, (probs - _onehot(y, k)) / n


def gce_per_sample(probs: np.ndarray, y: np.ndarray, q: float) -> np.ndarray:
    f_y = probs[np.arange(len(y)), y]
    return (1.0 - f_y**q) / q


def gce_loss(probs: np.ndarray, y, q: float) -> tuple[float, np.ndarray]:
    """Generalized cross entropy ``(1 - f_y^q) / q``.

    The logits gradient is the CE gradient scaled per sample by ``f_y^q``.
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    probs = np.asarray(probs, dtype=np.float64)
    n, k = probs.shape
    y = _check_labels(y, n, k)
    weight = probs[np.arange(n), y] ** q
    loss = float(np.mean(gce_per_sample(probs, y, q)))
    return loss, weight[:, None] * (probs - _onehot(y, k)) / n


def bias_balanced_probs(logits: np.ndarray, priors: PriorTable, b) -> np.ndarray:
    """softmax(eta + log p(. | b)), i.e. prior-reweighted softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[1] != priors.num_classes:
        raise ValueError("logit width does not match the prior table")
    return softmax_stable(logits + priors.log_priors(b))


def _adjusted_log_softmax(logits, priors, b) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) + priors.log_priors(b)
    zmax = z.max(axis=1, keepdims=True)
    return z - (zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True)))


def bs_per_sample(logits: np.ndarray, y: np.ndarray, b, priors: PriorTable) -> np.ndarray:
    return -_adjusted_log_softmax(logits, priors, b)[np.arange(len(y)), y]


def bs_loss(logits: np.ndarray, y, b, priors: PriorTable) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    n, k = logits.shape
    if k != priors.num_classes:
        raise ValueError("logit width does not match the prior table")
    y = _check_labels(y, n, k)
    b = _check_labels(b, n, priors.num_bias_classes)
    log_phi_hat = _adjusted_log_softmax(logits, priors, b)
    loss = float(-np.mean(log_phi_hat[np.arange(n), y]))
    return loss, (np.exp(log_phi_hat) - _onehot(y, k)) / n
