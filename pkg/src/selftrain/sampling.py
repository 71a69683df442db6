"""Mini-batch samplers over a labeled pool and a pseudo-labeled pool.

Samplers return index batches; the pipeline turns them into feature batches.
Each sampler owns its RNG, so one instance gives one reproducible sequence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .selection import PredictionBatch

log = logging.getLogger(__name__)


class IndexBatch(NamedTuple):
    labeled: np.ndarray  # indices into the labeled pool
    pseudo: np.ndarray  # indices into the pseudo-labeled pool


@dataclass(frozen=True)
class SplitBatchConfig:
    batch_size: int = 100
    labeled_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction < 1.0:
            raise ValueError("labeled_fraction must lie in (0, 1)")
        if not 1 <= self.labeled_per_batch <= self.batch_size - 1:
            raise ValueError("labeled_fraction * batch_size must round to a count in [1, batch_size - 1]")

    @property
    def labeled_per_batch(self) -> int:
        return int(round(self.labeled_fraction * self.batch_size))

    @property
    def pseudo_per_batch(self) -> int:
        return self.batch_size - self.labeled_per_batch


@dataclass(frozen=True)
class SampleWeights:
    class_length_weight: np.ndarray  # 1/N_c before pool normalisation
    confidence_weight: np.ndarray  # max(y)/max(S_c) before pool normalisation
    final_weight: np.ndarray  # mean of the two pool-normalised vectors

    def dump(self, ids=None) -> str:
        """Tab-separated audit table: id, class_length, confidence, final."""
        ids = np.arange(len(self.final_weight)) if ids is None else ids
        rows = ["id\tclass_length_weight\tconfidence_weight\tfinal_weight"]
        for i, a, b, c in zip(ids, self.class_length_weight, self.confidence_weight, self.final_weight):
            rows.append(f"{int(i)}\t{float(a)!r}\t{float(b)!r}\t{float(c)!r}")
        return "\n".join(rows) + "\n"


class UniformSampler:
    """Shuffles the concatenated pools every epoch and cuts consecutive batches."""

    def __init__(self, n_labeled: int, n_pseudo: int, batch_size: int, seed: int):
        if n_labeled < 1 or n_pseudo < 1:
            raise ValueError("pools must be non-empty")
        if n_labeled + n_pseudo < batch_size:
            raise ValueError("combined pool is smaller than one batch")
        self.n_labeled, self.n_pseudo, self.batch_size = n_labeled, n_pseudo, batch_size
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0F1]))

    def epoch(self, _epoch: int = 0) -> list[IndexBatch]:
        order = self.rng.permutation(self.n_labeled + self.n_pseudo)
        out = []
        for start in range(0, len(order), self.batch_size):
            chunk = order[start:start + self.batch_size]
            is_lab = chunk < self.n_labeled
            out.append(IndexBatch(chunk[is_lab], chunk[~is_lab] - self.n_labeled))
        return out

    def __iter__(self) -> Iterator[list[IndexBatch]]:
        while True:
            yield self.epoch()


class SplitBatchSampler:
    """Fixed labeled/pseudo composition; both sides drawn with replacement.

    One epoch holds ``ceil(n_pseudo / pseudo_per_batch)`` batches. Pseudo rows
    are drawn proportionally to ``weights.final_weight`` when weights are given.
    """

    def __init__(self, n_labeled: int, n_pseudo: int, config: SplitBatchConfig,
                 weights: Optional[SampleWeights] = None):
        if n_labeled < 1 or n_pseudo < 1:
            raise ValueError("pools must be non-empty")
        self.n_labeled, self.n_pseudo, self.config = n_labeled, n_pseudo, config
        self.p = None
        if weights is not None:
            w = np.asarray(weights.final_weight, dtype=np.float64)
            if len(w) != n_pseudo:
                raise ValueError("one weight per pseudo-labeled sample required")
            self.p = w / w.sum()
            self._cdf = np.cumsum(self.p)
            self._cdf[-1] = 1.0
        self.rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5B1]))
        self.batches_per_epoch = math.ceil(n_pseudo / config.pseudo_per_batch)

    def draw_pseudo(self, size: int) -> np.ndarray:
        if self.p is None:
            return self.rng.integers(0, self.n_pseudo, size=size)
        return np.searchsorted(self._cdf, self.rng.random(size), side="right")

    def next_batch(self) -> IndexBatch:
        lab = self.rng.integers(0, self.n_labeled, size=self.config.labeled_per_batch)
        return IndexBatch(lab, self.draw_pseudo(self.config.pseudo_per_batch))

    def epoch(self, _epoch: int = 0) -> list[IndexBatch]:
        return [self.next_batch() for _ in range(self.batches_per_epoch)]

    def __iter__(self) -> Iterator[list[IndexBatch]]:
        while True:
            yield self.epoch()


def uniform_batches(n_labeled: int, n_pseudo: int, batch_size: int = 100, seed: int = 0) -> UniformSampler:
    return UniformSampler(n_labeled, n_pseudo, batch_size, seed)


def split_batches(n_labeled: int, n_pseudo: int, config: SplitBatchConfig,
                  pseudo_weights: Optional[SampleWeights] = None) -> SplitBatchSampler:
    return SplitBatchSampler(n_labeled, n_pseudo, config, pseudo_weights)


def compute_sample_weights(pool: PredictionBatch) -> SampleWeights:
    """Average of inverse-class-size and per-class-normalised confidence weights.

    Both vectors are normalised to sum to 1 over the pool before averaging.
    Classes are the (calibrated) argmax predictions of the pool.
    """
    n = len(pool)
    if n == 0:
        raise ValueError("empty pool")
    cls = pool.argmax_class
    conf = pool.max_confidence
    counts = np.bincount(cls, minlength=pool.num_classes)
    class_max = np.zeros(pool.num_classes)
    np.maximum.at(class_max, cls, conf)
    length_w = 1.0 / counts[cls]
    conf_w = conf / class_max[cls]
    final = 0.5 * (length_w / length_w.sum() + conf_w / conf_w.sum())
    return SampleWeights(length_w, conf_w, final)


def naive_class_balance(pool: PredictionBatch, softmax_threshold: float, per_class_count: int) -> np.ndarray:
    """Per-class top-confidence selection with cyclic oversampling.

    Returns pool indices (with repeats). Per class: keep rows whose max
    softmax exceeds the threshold, sort by confidence (descending, ties by
    index), take the top ``per_class_count``, and repeat the survivors in
    order when there are too few. Classes without survivors are skipped.
    """
    if not 0.0 <= softmax_threshold <= 1.0:
        raise ValueError("softmax_threshold must lie in [0, 1]")
    if per_class_count < 1:
        raise ValueError("per_class_count must be >= 1")
    picked = []
    for c in range(pool.num_classes):
        idx = np.flatnonzero((pool.argmax_class == c) & (pool.max_confidence > softmax_threshold))
        if len(idx) == 0:
            log.info("class %d has no pseudo-labels above %.3f; skipped", c, softmax_threshold)
            continue
        idx = idx[np.argsort(-pool.max_confidence[idx], kind="stable")]
        picked.append(np.resize(idx, per_class_count))
    return np.concatenate(picked) if picked else np.zeros(0, dtype=np.int64)
