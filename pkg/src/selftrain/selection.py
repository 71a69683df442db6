"""Pseudo-label acceptance rules.

Two rules are provided: the fixed max-softmax threshold of the NoisyStudent
baseline, and a normalized-entropy threshold chosen on validation data by the
ROC point nearest the top-left corner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import scale_logits

THRESHOLD_GRID = np.linspace(0.0, 1.0, 500)
DEFAULT_SOFTMAX_THRESHOLD = 0.5


class DegenerateValidation(ValueError):
    """Validation predictions are all correct or all wrong, so the ROC is undefined."""


@dataclass(frozen=True)
class PredictionBatch:
    logits: np.ndarray
    probs: np.ndarray
    argmax_class: np.ndarray
    max_confidence: np.ndarray
    normalized_entropy: np.ndarray
    tau: float = 1.0

    @classmethod
    def from_logits(cls, logits, tau: float = 1.0) -> "PredictionBatch":
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 2 or logits.shape[1] < 2:
            raise ValueError("need logits of shape (n, N_c) with N_c >= 2")
        probs = scale_logits(logits, tau)
        return cls(logits, probs, probs.argmax(axis=1), probs.max(axis=1),
                   _entropy_rows(probs), float(tau))

    def __len__(self) -> int:
        return len(self.logits)

    @property
    def num_classes(self) -> int:
        return self.logits.shape[1]

    def subset(self, index) -> "PredictionBatch":
        return PredictionBatch(self.logits[index], self.probs[index], self.argmax_class[index],
                               self.max_confidence[index], self.normalized_entropy[index], self.tau)


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    tpr_at: float
    fpr_at: float
    roc_points: tuple  # ((fpr, tpr, threshold), ...) in candidate order
    fallback: bool = False


def _entropy_rows(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    h = -terms.sum(axis=1) / math.log(probs.shape[1])
    return np.clip(h, 0.0, 1.0)


def normalized_entropy(p, num_classes: int | None = None) -> float:
    """Shannon entropy of ``p`` divided by ``log(num_classes)``; ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    k = len(p) if num_classes is None else num_classes
    if k < 2:
        raise ValueError("need at least two classes")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("p must be a probability vector")
    nz = p[p > 0]
    return float(min(max(-(nz * np.log(nz)).sum() / math.log(k), 0.0), 1.0))


def select_entropy_threshold(val_predictions: PredictionBatch, val_labels,
                             candidates=THRESHOLD_GRID) -> ThresholdChoice:
    """Choose the entropy cutoff whose (FPR, TPR) lies closest to (0, 1).

    A validation row is a positive when its argmax equals its label. At cutoff
    ``t`` a row is accepted iff its normalized entropy is ``<= t``. Ties go to
    the smaller cutoff.
    """
    labels = np.asarray(val_labels)
    if len(labels) != len(val_predictions) or len(labels) == 0:
        raise ValueError("need one label per validation prediction")
    correct = val_predictions.argmax_class == labels
    n_pos = int(correct.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateValidation(
            "validation predictions are all correct or all incorrect; "
            "fall back to the median validation entropy")
    h = val_predictions.normalized_entropy
    pos_sorted = np.sort(h[correct])
    neg_sorted = np.sort(h[~correct])
    cand = np.asarray(candidates, dtype=np.float64)
    tp = np.searchsorted(pos_sorted, cand, side="right")
    fp = np.searchsorted(neg_sorted, cand, side="right")
    tpr = tp / n_pos
    fpr = fp / n_neg
    dist = np.sqrt(fpr ** 2 + (1.0 - tpr) ** 2)
    best = int(np.argmin(dist))  # first minimum == smallest threshold
    roc = tuple((float(f), float(t), float(c)) for f, t, c in zip(fpr, tpr, cand))
    return ThresholdChoice(float(cand[best]), float(tpr[best]), float(fpr[best]), roc)


def median_entropy_choice(val_predictions: PredictionBatch) -> ThresholdChoice:
    """Fallback used when the ROC is undefined."""
    t = float(np.median(val_predictions.normalized_entropy))
    return ThresholdChoice(t, float("nan"), float("nan"), (), fallback=True)


def apply_entropy_threshold(pool: PredictionBatch, threshold: float):
    """Accept rows with normalized entropy ``<= threshold``.

    Returns ``(mask, targets)`` where targets are the calibrated softmax rows
    of the accepted samples.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    mask = pool.normalized_entropy <= threshold
    return mask, pool.probs[mask]


def apply_softmax_threshold(pool: PredictionBatch, threshold: float = DEFAULT_SOFTMAX_THRESHOLD):
    """Accept rows whose max softmax is strictly above ``threshold``."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return pool.max_confidence > threshold
