"""Small dense classifiers trained with mini-batch SGD, plus hard/soft/mixed losses.

Models are a multinomial logistic regression (hidden width 0) or a
one-hidden-layer ReLU MLP. All math is plain numpy in float64.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

log = logging.getLogger(__name__)


class Tier(enum.Enum):
    LOGISTIC = 0
    SMALL = 32
    LARGE = 128

    @property
    def width(self) -> int:
        return self.value


class LossMode(enum.Enum):
    HARD = "hard"
    SOFT = "soft"
    MIXED = "mixed"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class Classifier:
    tier: Tier
    feature_dim: int
    num_classes: int
    init_seed: int
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @classmethod
    def create(cls, tier: Tier, feature_dim: int, num_classes: int, seed: int) -> "Classifier":
        """Uniform fan-in initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        rng = np.random.default_rng(np.random.SeedSequence([seed, tier.width]))
        dims = [feature_dim] + ([tier.width] if tier.width else []) + [num_classes]
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(tier, feature_dim, num_classes, seed, weights, biases)

    def copy(self) -> "Classifier":
        return Classifier(self.tier, self.feature_dim, self.num_classes, self.init_seed,
                          [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    @property
    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params)

    def same_weights(self, other: "Classifier") -> bool:
        return (self.tier == other.tier and len(self.params) == len(other.params)
                and all(np.array_equal(a, b) for a, b in zip(self.params, other.params)))


# -- forward -----------------------------------------------------------------


def _check_input(model: Classifier, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.feature_dim:
        raise ValueError(f"expected features of shape (n, {model.feature_dim}), got {x.shape}")
    return x


def _forward(model: Classifier, x: np.ndarray):
    if model.tier is Tier.LOGISTIC:
        return None, x @ model.weights[0] + model.biases[0]
    pre = x @ model.weights[0] + model.biases[0]
    hidden = np.maximum(pre, 0.0)
    return hidden, hidden @ model.weights[1] + model.biases[1]


def predict_logits(model: Classifier, x) -> np.ndarray:
    x = _check_input(model, x)
    return _forward(model, x)[1]


def penultimate_features(model: Classifier, x) -> np.ndarray:
    """Hidden-layer ReLU activations (the embedding used for open-set filtering)."""
    if model.tier is Tier.LOGISTIC:
        raise ValueError("logistic model has no hidden layer")
    x = _check_input(model, x)
    return _forward(model, x)[0]


def predict(model: Classifier, x) -> np.ndarray:
    return predict_logits(model, x).argmax(axis=1)


def accuracy(model: Classifier, x, labels) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(predict(model, x) == np.asarray(labels)))


# -- losses ------------------------------------------------------------------


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def hard_loss(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label index out of range")
    return float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())


def _check_targets(targets: np.ndarray) -> None:
    if np.any(targets < 0) or np.any(np.abs(targets.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("targets must be probability vectors (non-negative, summing to 1)")


def soft_loss(logits, targets) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) == 0:
        raise ValueError("empty batch")
    _check_targets(targets)
    return float(-(targets * log_softmax(logits)).sum(axis=1).mean())


def mixed_loss(labeled_logits, labels, pseudo_logits, pseudo_targets, lambda_b: float = 0.5) -> float:
    """``lambda_b * hard(labeled) + (1 - lambda_b) * soft(pseudo)``."""
    if not 0.0 <= lambda_b <= 1.0:
        raise ValueError("lambda_b must lie in [0, 1]")
    if len(labels) == 0 or len(pseudo_targets) == 0:
        raise ValueError("mixed loss needs both a labeled and a pseudo-labeled sub-batch")
    return lambda_b * hard_loss(labeled_logits, labels) + (1.0 - lambda_b) * soft_loss(pseudo_logits, pseudo_targets)


# -- gradients ---------------------------------------------------------------


def loss_and_grads(model: Classifier, x: np.ndarray, targets: np.ndarray,
                   row_weights: np.ndarray) -> tuple[float, list]:
    """Weighted cross-entropy ``-sum_i w_i sum_c t_ic log p_ic`` and its gradients.

    Every loss in this module is this form: hard loss uses one-hot targets and
    ``w_i = 1/n``; the mixed loss puts ``lambda_b/n_l`` on labeled rows and
    ``(1 - lambda_b)/n_p`` on pseudo-labeled rows. Gradients are returned in
    ``model.params`` order.
    """
    hidden, logits = _forward(model, x)
    logp = log_softmax(logits)
    loss = float(-(row_weights * (targets * logp).sum(axis=1)).sum())
    # d/dlogits: w_i * (p_i * sum_c t_ic - t_i)
    dlogits = row_weights[:, None] * (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets)
    if model.tier is Tier.LOGISTIC:
        return loss, [x.T @ dlogits, dlogits.sum(axis=0)]
    w2 = model.weights[1]
    dhidden = dlogits @ w2.T
    dhidden[hidden <= 0] = 0.0
    return loss, [x.T @ dhidden, dhidden.sum(axis=0), hidden.T @ dlogits, dlogits.sum(axis=0)]


@dataclass(frozen=True)
class Batch:
    """One training mini-batch split into its labeled and pseudo-labeled rows."""

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    pseudo_x: np.ndarray
    pseudo_targets: np.ndarray


def batch_objective(batch: Batch, num_classes: int, mode: LossMode, lambda_b: float):
    """Stack a batch into ``(x, targets, row_weights)`` for :func:`loss_and_grads`.

    HARD turns pseudo targets into one-hot argmax labels and SOFT keeps them;
    both weigh every row ``1/n`` (plain mean). MIXED weighs the two sub-batches
    by ``lambda_b`` and ``1 - lambda_b``.
    """
    n_l, n_p = len(batch.labeled_y), len(batch.pseudo_targets)
    pseudo_t = batch.pseudo_targets
    if mode is LossMode.HARD and n_p:
        pseudo_t = one_hot(pseudo_t.argmax(axis=1), num_classes)
    x = np.concatenate([batch.labeled_x, batch.pseudo_x]) if n_p else batch.labeled_x
    t = np.concatenate([one_hot(batch.labeled_y, num_classes), pseudo_t]) if n_p else one_hot(batch.labeled_y, num_classes)
    if mode is LossMode.MIXED:
        if n_l == 0 or n_p == 0:
            raise ValueError("mixed loss needs both a labeled and a pseudo-labeled sub-batch")
        w = np.concatenate([np.full(n_l, lambda_b / n_l), np.full(n_p, (1.0 - lambda_b) / n_p)])
    else:
        w = np.full(n_l + n_p, 1.0 / (n_l + n_p))
    return x, t, w


# -- training ----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.05
    momentum: float = 0.9
    # multiply the rate by decay_factor at each fraction of the epoch budget
    decay_at: tuple = (0.5, 0.75)
    decay_factor: float = 0.1
    weight_decay: float = 5e-4
    seed: int = 0
    loss_mode: LossMode = LossMode.MIXED
    lambda_b: float = 0.5
    # std of Gaussian jitter added to training inputs (0 disables)
    input_noise: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.lambda_b <= 1.0:
            raise ValueError("lambda_b must lie in [0, 1]")
        if self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0 and learning_rate > 0")

    def rate_at(self, epoch: int) -> float:
        steps = sum(epoch >= int(f * self.epochs) for f in self.decay_at)
        return self.learning_rate * self.decay_factor ** steps


def train(model: Classifier, batches: Callable[[int], Iterable[Batch]], config: TrainConfig):
    """SGD with momentum on ``model`` in place.

    ``batches(epoch)`` returns the batches of one epoch. Returns the model and
    the per-epoch mean training loss.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7A1]))
    velocity = [np.zeros_like(p) for p in model.params]
    trace = []
    for epoch in range(config.epochs):
        lr = config.rate_at(epoch)
        total, count = 0.0, 0
        for batch in batches(epoch):
            x, t, w = batch_objective(batch, model.num_classes, config.loss_mode, config.lambda_b)
            if config.input_noise > 0:
                x = x + rng.standard_normal(x.shape) * config.input_noise
            loss, grads = loss_and_grads(model, x, t, w)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (lr={lr:g}); "
                                       "learning rate is probably too high")
            for p, g, v in zip(model.params, grads, velocity):
                if config.weight_decay and p.ndim == 2:
                    g = g + config.weight_decay * p
                v *= config.momentum
                v -= lr * g
                p += v
            total += loss
            count += 1
        if not model.is_finite():
            raise TrainingDiverged(f"non-finite weights after epoch {epoch} (lr={lr:g})")
        trace.append(total / max(count, 1))
    return model, trace


# -- checkpoints -------------------------------------------------------------

_CKPT_MAGIC = "selftrain-checkpoint 1"


def checkpoint_text(model: Classifier) -> str:
    lines = [_CKPT_MAGIC, f"tier {model.tier.name}", f"feature_dim {model.feature_dim}",
             f"num_classes {model.num_classes}", f"init_seed {model.init_seed}",
             f"layers {len(model.weights)}"]
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"weight {i} {w.shape[0]} {w.shape[1]}")
        lines += [" ".join(repr(float(v)) for v in row) for row in w]
        lines.append(f"bias {i} {b.shape[0]}")
        lines.append(" ".join(repr(float(v)) for v in b))
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_checkpoint(model: Classifier, path) -> None:
    Path(path).write_text(checkpoint_text(model))


def parse_checkpoint(text: str) -> Classifier:
    lines = text.splitlines()
    try:
        if lines[0] != _CKPT_MAGIC:
            raise ValueError("not a selftrain checkpoint")
        head = dict(line.split(" ", 1) for line in lines[1:6])
        tier = Tier[head["tier"]]
        d, k, seed, n_layers = (int(head[key]) for key in ("feature_dim", "num_classes", "init_seed", "layers"))
        pos = 6
        weights, biases = [], []
        for i in range(n_layers):
            _, idx, rows, cols = lines[pos].split()
            rows, cols = int(rows), int(cols)
            w = np.array([[float(v) for v in lines[pos + 1 + r].split()] for r in range(rows)]).reshape(rows, cols)
            pos += 1 + rows
            _, idx, size = lines[pos].split()
            b = np.array([float(v) for v in lines[pos + 1].split()])
            if b.shape != (int(size),):
                raise ValueError("bias size mismatch")
            pos += 2
            weights.append(w)
            biases.append(b)
        if lines[pos] != "end":
            raise ValueError("missing end marker")
    except (IndexError, KeyError) as exc:
        raise ValueError(f"malformed checkpoint: {exc}") from exc
    model = Classifier(tier, d, k, seed, weights, biases)
    expected = Classifier.create(tier, d, k, seed)
    if [p.shape for p in model.params] != [p.shape for p in expected.params]:
        raise ValueError("checkpoint layer shapes do not match its tier and dimensions")
    return model


def load_checkpoint(path) -> Classifier:
    return parse_checkpoint(Path(path).read_text())
