"""Prototype-distance open-set filter.

Each target class gets a mean embedding and a Beta distribution fitted to
scaled member-to-prototype distances. A pool sample is rejected as
non-target when its distance CDF exceeds the global threshold for every
class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

DEFAULT_CDF_CANDIDATES = (0.80, 0.85, 0.90, 0.95)
SCALE_MARGIN = 1.01

_CF_MAX_ITER = 1000
_CF_EPS = 1e-16
_TINY = 1e-300


def _beta_continued_fraction(x: float, a: float, b: float) -> float:
    # modified Lentz evaluation of the continued fraction for I_x(a, b)
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + num / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + num / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def beta_cdf(x: float, alpha: float, beta: float) -> float:
    """Regularized incomplete beta function ``I_x(alpha, beta)``."""
    if not (alpha > 0 and beta > 0 and math.isfinite(alpha) and math.isfinite(beta)):
        raise ValueError("alpha and beta must be finite and > 0")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    log_front = (math.lgamma(alpha + beta) - math.lgamma(alpha) - math.lgamma(beta)
                 + alpha * math.log(x) + beta * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast for x < (a+1)/(a+b+2); use the symmetry otherwise
    if x < (alpha + 1.0) / (alpha + beta + 2.0):
        val = front * _beta_continued_fraction(x, alpha, beta) / alpha
    else:
        val = 1.0 - front * _beta_continued_fraction(1.0 - x, beta, alpha) / beta
    return min(max(val, 0.0), 1.0)


def fit_beta_moments(samples) -> tuple[float, float]:
    """Method-of-moments Beta fit on values in (0, 1), population variance."""
    s = np.asarray(samples, dtype=np.float64)
    if len(s) < 2:
        raise ValueError("need at least two samples")
    if np.any(s <= 0) or np.any(s >= 1):
        raise ValueError("samples must lie strictly inside (0, 1)")
    m = float(s.mean())
    v = float(s.var())
    if v <= 0:
        raise ValueError("zero variance: all distances are identical; add jitter to the embeddings")
    common = m * (1.0 - m) / v - 1.0
    if common <= 0:
        raise ValueError("variance too large for a Beta fit")
    return m * common, (1.0 - m) * common


@dataclass(frozen=True)
class PrototypeModel:
    prototypes: np.ndarray  # (N_c, embedding_dim)
    alphas: np.ndarray
    betas: np.ndarray
    distance_scale: np.ndarray  # per class

    @property
    def num_classes(self) -> int:
        return len(self.prototypes)

    def to_text(self) -> str:
        lines = ["selftrain-prototypes 1", f"classes {self.num_classes}",
                 f"embedding_dim {self.prototypes.shape[1]}"]
        for k in range(self.num_classes):
            lines.append(f"class {k} alpha {float(self.alphas[k])!r} beta {float(self.betas[k])!r} "
                         f"scale {float(self.distance_scale[k])!r}")
            lines.append(" ".join(repr(float(v)) for v in self.prototypes[k]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PrototypeModel":
        lines = text.splitlines()
        if not lines or lines[0] != "selftrain-prototypes 1":
            raise ValueError("not a prototype file")
        k = int(lines[1].split()[1])
        protos, a, b, s = [], [], [], []
        for i in range(k):
            head = lines[3 + 2 * i].split()
            a.append(float(head[3]))
            b.append(float(head[5]))
            s.append(float(head[7]))
            protos.append([float(v) for v in lines[4 + 2 * i].split()])
        return cls(np.array(protos), np.array(a), np.array(b), np.array(s))


def _by_class(embeddings_by_class) -> list:
    if isinstance(embeddings_by_class, Mapping):
        keys = sorted(embeddings_by_class)
        if keys != list(range(len(keys))):
            raise ValueError("class keys must be 0..N_c-1")
        return [np.asarray(embeddings_by_class[k], dtype=np.float64) for k in keys]
    return [np.asarray(e, dtype=np.float64) for e in embeddings_by_class]


def build_prototypes(embeddings_by_class, fit_embeddings_by_class=None) -> PrototypeModel:
    """Class-mean prototypes with per-class Beta fits on scaled distances.

    Prototypes come from ``embeddings_by_class``. Distances for the Beta fit
    come from ``fit_embeddings_by_class`` when given, else from the same
    embeddings. Each class's distances are divided by 1.01 times their
    maximum so they fall in (0, 1).
    """
    proto_sets = _by_class(embeddings_by_class)
    fit_sets = proto_sets if fit_embeddings_by_class is None else _by_class(fit_embeddings_by_class)
    if len(fit_sets) != len(proto_sets):
        raise ValueError("prototype and fit embeddings cover different classes")
    protos, alphas, betas, scales = [], [], [], []
    for k, (pe, fe) in enumerate(zip(proto_sets, fit_sets)):
        if len(pe) < 3 or len(fe) < 3:
            raise ValueError(f"class {k} needs at least 3 embeddings")
        proto = pe.mean(axis=0)
        dist = np.linalg.norm(fe - proto, axis=1)
        scale = SCALE_MARGIN * dist.max()
        if scale <= 0 or np.ptp(dist) == 0:
            raise ValueError(f"class {k}: zero variance in prototype distances; add jitter to the embeddings")
        scaled = dist / scale
        # a member sitting exactly on the prototype would leave the open interval
        scaled = np.clip(scaled, np.finfo(float).tiny, None)
        try:
            a, b = fit_beta_moments(scaled)
        except ValueError as exc:
            raise ValueError(f"class {k}: {exc}") from exc
        protos.append(proto)
        alphas.append(a)
        betas.append(b)
        scales.append(scale)
    return PrototypeModel(np.array(protos), np.array(alphas), np.array(betas), np.array(scales))


def class_cdfs(model: PrototypeModel, embeddings) -> np.ndarray:
    """Per-sample, per-class Beta CDF of the scaled (and clamped) distance."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[1] != model.prototypes.shape[1]:
        raise ValueError("embedding dimension does not match the prototypes")
    dist = np.linalg.norm(emb[:, None, :] - model.prototypes[None, :, :], axis=2)
    scaled = np.minimum(dist / model.distance_scale[None, :], 1.0)
    out = np.empty_like(scaled)
    for k in range(model.num_classes):
        a, b = float(model.alphas[k]), float(model.betas[k])
        out[:, k] = [beta_cdf(float(x), a, b) for x in scaled[:, k]]
    return out


def filter_open_set(model: PrototypeModel, pool_embeddings, cdf_threshold: float,
                    cdfs: Optional[np.ndarray] = None) -> np.ndarray:
    """Keep mask: False where the CDF exceeds the threshold for every class."""
    if not 0.0 <= cdf_threshold <= 1.0:
        raise ValueError("cdf_threshold must lie in [0, 1]")
    if cdfs is None:
        cdfs = class_cdfs(model, pool_embeddings)
    return ~np.all(cdfs > cdf_threshold, axis=1)


def rejection_report(cdfs: np.ndarray, keep: np.ndarray, ids=None) -> str:
    ids = np.arange(len(keep)) if ids is None else ids
    rows = ["id\tmin_cdf\tverdict"]
    for i, c, k in zip(ids, cdfs.min(axis=1), keep):
        rows.append(f"{int(i)}\t{c:.6f}\t{'keep' if k else 'reject'}")
    return "\n".join(rows) + "\n"


def select_cdf_threshold(candidates: Sequence[float], evaluate: Callable[[float], float]) -> float:
    """Candidate with the highest ``evaluate(threshold)``; ties go to the larger threshold."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate thresholds")
    if len(candidates) == 1:
        return float(candidates[0])
    scored = [(float(evaluate(t)), float(t)) for t in candidates]
    return max(scored)[1]
