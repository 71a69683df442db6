"""Temperature scaling fitted by grid search on Expected Calibration Error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import softmax

NUM_BINS = 15
# 400 points, 0.05 apart, both endpoints included; i/20 is exact for i = 20, so 1.0 is on the grid
TEMPERATURE_GRID = np.arange(1, 401) / 20.0


@dataclass(frozen=True)
class CalibrationResult:
    tau: float
    ece_before: float
    ece_after: float
    grid: tuple  # ((temperature, ece), ...)


def ece_from_probs(probs, labels, num_bins: int = NUM_BINS) -> float:
    """ECE over equal-width bins ``(b/B, (b+1)/B]`` of the max-softmax confidence.

    A confidence of exactly 0 falls in the first bin.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    n = len(labels)
    if n == 0:
        raise ValueError("empty batch")
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    edges = np.arange(num_bins + 1) / num_bins
    bins = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, num_bins - 1)
    counts = np.bincount(bins, minlength=num_bins)
    conf_sum = np.bincount(bins, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(bins, weights=correct, minlength=num_bins)
    # |B|/N * |acc - conf| == |sum(correct) - sum(conf)| / N
    return float(np.abs(acc_sum - conf_sum).sum() / n)


def ece(logits, labels, num_bins: int = NUM_BINS) -> float:
    return ece_from_probs(softmax(logits), labels, num_bins)


def scale_logits(logits, tau: float) -> np.ndarray:
    """Row-wise ``softmax(logits / tau)``."""
    if not tau > 0:
        raise ValueError("temperature must be > 0")
    return softmax(np.asarray(logits, dtype=np.float64) / tau)


def fit_temperature(val_logits, val_labels, num_bins: int = NUM_BINS,
                    grid=TEMPERATURE_GRID) -> CalibrationResult:
    """Pick the grid temperature with the lowest validation ECE.

    Ties go to the temperature closest to 1.0, then to the smaller one.
    """
    val_logits = np.asarray(val_logits, dtype=np.float64)
    if len(val_labels) == 0:
        raise ValueError("empty validation batch")
    scores = [(float(t), ece_from_probs(scale_logits(val_logits, t), val_labels, num_bins)) for t in grid]
    best_t, best_e = min(scores, key=lambda te: (te[1], abs(te[0] - 1.0), te[0]))
    return CalibrationResult(
        tau=best_t,
        ece_before=ece(val_logits, val_labels, num_bins),
        ece_after=best_e,
        grid=tuple(scores),
    )
