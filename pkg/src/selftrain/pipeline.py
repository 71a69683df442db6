"""Iterative teacher-student self-training with every ablation axis exposed.

One run trains a teacher on the labeled partition, then repeats: calibrate,
pseudo-label the unlabeled pool, select, sample, train a student, evaluate.
The best model so far (by validation accuracy) is the teacher of the next
iteration and the fine-tuning source.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

from . import calibration, model as mdl, openset, sampling, selection
from .data import DataSplit, within_class_std
from .model import Classifier, LossMode, Tier, TrainConfig
from .selection import DEFAULT_SOFTMAX_THRESHOLD

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class EmptyPseudoLabelSet(RuntimeError):
    pass


class Loss(enum.Enum):
    HARD = "hard"
    SOFT = "soft"


class StudentInit(enum.Enum):
    FRESH_TRAIN = "fresh_train"
    FINE_TUNE = "fine_tune"


class Batching(enum.Enum):
    UNIFORM = "uniform"
    SPLIT_BATCH = "split_batch"


class Sampler(enum.Enum):
    # every selected pseudo-label once, no re-weighting (roadmap experiments 1-3)
    FULL_POOL = "full_pool"
    NAIVE_CLASS_BALANCE = "naive_class_balance"
    WEIGHTED_SPLIT_BATCH = "weighted_split_batch"


class Selection(enum.Enum):
    # no thresholding (roadmap experiments 1-3 and 4-right)
    ACCEPT_ALL = "accept_all"
    NAIVE_SOFTMAX = "naive_softmax"
    CALIBRATED_ENTROPY = "calibrated_entropy"


class Sizing(enum.Enum):
    NS_SMALL_TEACHER = "ns_small_teacher"
    SAME_SIZED_SMALL = "same_sized_small"
    SAME_SIZED_LARGE = "same_sized_large"

    @property
    def teacher_tier(self) -> Tier:
        return Tier.LARGE if self is Sizing.SAME_SIZED_LARGE else Tier.SMALL

    @property
    def student_tier(self) -> Tier:
        return Tier.SMALL if self is Sizing.SAME_SIZED_SMALL else Tier.LARGE


@dataclass(frozen=True)
class PipelineConfig:
    loss: Loss = Loss.SOFT
    student_init: StudentInit = StudentInit.FINE_TUNE
    batching: Batching = Batching.SPLIT_BATCH
    sampler: Sampler = Sampler.WEIGHTED_SPLIT_BATCH
    selection: Selection = Selection.CALIBRATED_ENTROPY
    sizing: Sizing = Sizing.SAME_SIZED_LARGE
    softmax_threshold: float = DEFAULT_SOFTMAX_THRESHOLD
    labeled_fraction: float = 0.2
    lambda_b: float = 0.5
    open_set_filter: bool = False
    cdf_candidates: tuple = openset.DEFAULT_CDF_CANDIDATES
    cdf_search_epochs: int = 20
    num_student_iterations: int = 3
    teacher_epochs: int = 200
    student_epochs: int = 100
    batch_size: int = 100
    learning_rate: float = 0.05
    weight_decay: float = 0.02
    # student input jitter std as a multiple of the pooled within-class std of the labeled data
    input_noise: float = 1.5
    # NaiveClassBalance count per class; None means ceil(|pool| / N_c)
    per_class_count: Optional[int] = None
    preset: str = "custom"

    def __post_init__(self):
        if self.sampler is Sampler.WEIGHTED_SPLIT_BATCH and self.batching is not Batching.SPLIT_BATCH:
            raise ConfigError("the weighted sampler requires split_batch batching")
        if not 0.0 <= self.softmax_threshold <= 1.0:
            raise ConfigError("softmax_threshold must lie in [0, 1]")
        if not 0.0 <= self.lambda_b <= 1.0:
            raise ConfigError("lambda_b must lie in [0, 1]")
        if self.num_student_iterations < 0 or self.teacher_epochs < 1 or self.student_epochs < 1:
            raise ConfigError("iteration and epoch counts must be positive")
        if self.open_set_filter and not self.cdf_candidates:
            raise ConfigError("open-set filtering needs at least one CDF threshold candidate")
        if any(not 0.0 <= t <= 1.0 for t in self.cdf_candidates):
            raise ConfigError("CDF thresholds must lie in [0, 1]")
        if self.per_class_count is not None and self.per_class_count < 1:
            raise ConfigError("per_class_count must be >= 1")
        try:
            sampling.SplitBatchConfig(self.batch_size, self.labeled_fraction)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def calibrates(self) -> bool:
        return self.selection is Selection.CALIBRATED_ENTROPY

    def describe(self) -> list[tuple[str, str]]:
        """Every field as (name, text), enums by value; used in report headers."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            elif v is None:
                v = "auto"
            out.append((f.name, str(v)))
        return out


_EST = dict(loss=Loss.SOFT, student_init=StudentInit.FINE_TUNE, batching=Batching.SPLIT_BATCH,
            sampler=Sampler.WEIGHTED_SPLIT_BATCH, selection=Selection.CALIBRATED_ENTROPY,
            sizing=Sizing.SAME_SIZED_LARGE)
_NS = dict(loss=Loss.SOFT, student_init=StudentInit.FRESH_TRAIN, batching=Batching.UNIFORM,
           sampler=Sampler.NAIVE_CLASS_BALANCE, selection=Selection.NAIVE_SOFTMAX,
           sizing=Sizing.NS_SMALL_TEACHER)
# the roadmap carries each winner forward; experiments 1-5 use same-sized small models
_BASE = dict(loss=Loss.SOFT, student_init=StudentInit.FRESH_TRAIN, batching=Batching.UNIFORM,
             sampler=Sampler.FULL_POOL, selection=Selection.ACCEPT_ALL, sizing=Sizing.SAME_SIZED_SMALL)
_EXP3 = dict(_BASE, student_init=StudentInit.FINE_TUNE)
_EXP4 = dict(_EXP3, batching=Batching.SPLIT_BATCH)
_NAIVE = dict(sampler=Sampler.NAIVE_CLASS_BALANCE, selection=Selection.NAIVE_SOFTMAX)

PRESETS = {
    "EST": _EST,
    "NS": _NS,
    "Exp1-left": dict(_BASE, loss=Loss.HARD),
    "Exp1-right": dict(_BASE),
    "Exp2-left": dict(_BASE),
    "Exp2-right": dict(_BASE, student_init=StudentInit.FINE_TUNE),
    "Exp3-left": dict(_EXP3),
    "Exp3-right": dict(_EXP4),
    "Exp4-left": dict(_EXP4, **_NAIVE),
    "Exp4-right": dict(_EXP4, sampler=Sampler.WEIGHTED_SPLIT_BATCH),
    "Exp5-left": dict(_EXP4, **_NAIVE),
    "Exp5-right": dict(_EXP4, sampler=Sampler.WEIGHTED_SPLIT_BATCH, selection=Selection.CALIBRATED_ENTROPY),
    "Exp6-left": dict(_EST, sizing=Sizing.NS_SMALL_TEACHER),
    "Exp6-right": dict(_EST),
}


def preset(name: str, **overrides) -> PipelineConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PipelineConfig(**{**PRESETS[name], "preset": name, **overrides})


# -- state -------------------------------------------------------------------


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    tau: float
    ece_before: float
    ece_after: float
    entropy_threshold: float
    n_accepted: int
    n_open_set_rejected: int
    pseudo_precision: float
    val_acc: float
    test_acc: float
    student_tier: str
    init_from: str  # "fresh" or "iteration <k>"
    cdf_threshold: float = float("nan")
    calibration: Optional[calibration.CalibrationResult] = None
    threshold: Optional[selection.ThresholdChoice] = None


@dataclass
class BestModel:
    iteration: int
    model: Classifier
    val_acc: float


@dataclass
class SelfTrainState:
    seed: int
    teacher: Classifier
    teacher_val_acc: float
    teacher_test_acc: float
    best: BestModel
    records: list = field(default_factory=list)
    # iteration -> model (0 is the initial teacher)
    checkpoints: dict = field(default_factory=dict)
    cdf_threshold: Optional[float] = None

    @property
    def iteration(self) -> int:
        return len(self.records)

    def best_of_tier(self, tier: Tier) -> Optional[BestModel]:
        best = None
        vals = {0: self.teacher_val_acc, **{r.iteration: r.val_acc for r in self.records}}
        for it, m in self.checkpoints.items():
            if m.tier is tier and (best is None or vals[it] > best.val_acc):
                best = BestModel(it, m, vals[it])
        return best


def _derive(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


# -- stages ------------------------------------------------------------------


def _labeled_epochs(x, y, batch_size, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E4]))
    empty_x = np.zeros((0, x.shape[1]))
    empty_t = np.zeros((0, int(y.max()) + 1 if len(y) else 0))

    def epoch(_):
        order = rng.permutation(len(y))
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            yield mdl.Batch(x[idx], y[idx], empty_x, empty_t)
    return epoch


def run_teacher(split: DataSplit, config: PipelineConfig, seed: int = 0):
    """Train the initial teacher on the labeled partition with the hard loss.

    Returns ``(model, metrics)`` with validation and test accuracy.
    """
    lab = split.labeled
    if len(lab) == 0:
        raise ConfigError("labeled partition is empty")
    teacher = Classifier.create(config.sizing.teacher_tier, split.feature_dim, split.num_target_classes,
                                _derive(seed, 1))
    tc = TrainConfig(epochs=config.teacher_epochs, batch_size=config.batch_size,
                     learning_rate=config.learning_rate, weight_decay=config.weight_decay,
                     seed=_derive(seed, 2), loss_mode=LossMode.HARD)
    mdl.train(teacher, _labeled_epochs(lab.features, lab.labels, config.batch_size, _derive(seed, 3)), tc)
    metrics = dict(val_acc=mdl.accuracy(teacher, split.validation.features, split.validation.labels),
                   test_acc=mdl.accuracy(teacher, split.test.features, split.test.labels))
    return teacher, metrics


def start_state(split: DataSplit, config: PipelineConfig, seed: int = 0) -> SelfTrainState:
    teacher, m = run_teacher(split, config, seed)
    return SelfTrainState(seed, teacher, m["val_acc"], m["test_acc"],
                          BestModel(0, teacher, m["val_acc"]), checkpoints={0: teacher})


def evaluate_pseudo_label_accuracy(predicted_classes, hidden_classes) -> float:
    """Fraction of accepted pseudo-labels whose argmax matches the hidden class."""
    predicted_classes = np.asarray(predicted_classes)
    hidden_classes = np.asarray(hidden_classes)
    if len(predicted_classes) == 0:
        raise ValueError("no accepted pseudo-labels")
    if len(predicted_classes) != len(hidden_classes):
        raise ValueError("length mismatch")
    return float(np.mean(predicted_classes == hidden_classes))


def init_student(config: PipelineConfig, feature_dim: int, num_classes: int, seed: int,
                 source: Optional[Classifier] = None) -> Classifier:
    tier = config.sizing.student_tier
    if config.student_init is StudentInit.FRESH_TRAIN or source is None:
        return Classifier.create(tier, feature_dim, num_classes, seed)
    if source.tier is not tier:
        raise ConfigError(f"cannot fine-tune a {tier.name} student from a {source.tier.name} checkpoint")
    return source.copy()


@dataclass
class _StudentResult:
    model: Classifier
    record: IterationRecord
    accepted_pool_index: np.ndarray


def open_set_keep(teacher: Classifier, split: DataSplit, pool_x: np.ndarray, threshold: float) -> np.ndarray:
    """Keep mask over ``pool_x`` from prototypes in the teacher's penultimate space."""
    emb = lambda x: mdl.penultimate_features(teacher, x)  # noqa: E731
    val, lab = split.validation, split.labeled
    k = split.num_target_classes
    model = openset.build_prototypes([emb(val.features[val.labels == c]) for c in range(k)],
                                     [emb(lab.features[lab.labels == c]) for c in range(k)])
    return openset.filter_open_set(model, emb(pool_x), threshold)


def _student_step(state: SelfTrainState, split: DataSplit, config: PipelineConfig,
                  iteration: int, epochs: int, cdf_threshold: Optional[float]) -> _StudentResult:
    teacher = state.best.model
    pool = split.unlabeled_view()
    pool_index = np.arange(len(pool))
    val = split.validation
    k = split.num_target_classes

    n_rejected = 0
    if config.open_set_filter:
        keep = open_set_keep(teacher, split, pool.features, cdf_threshold)
        n_rejected = int((~keep).sum())
        pool_index = pool_index[keep]

    val_logits = mdl.predict_logits(teacher, val.features)
    cal = None
    tau = 1.0
    if config.calibrates:
        cal = calibration.fit_temperature(val_logits, val.labels)
        tau = cal.tau
    preds = selection.PredictionBatch.from_logits(mdl.predict_logits(teacher, pool.features[pool_index]), tau)

    choice = None
    if config.selection is Selection.CALIBRATED_ENTROPY:
        val_preds = selection.PredictionBatch.from_logits(val_logits, tau)
        try:
            choice = selection.select_entropy_threshold(val_preds, val.labels)
        except selection.DegenerateValidation:
            choice = selection.median_entropy_choice(val_preds)
        mask, _ = selection.apply_entropy_threshold(preds, choice.threshold)
    elif config.selection is Selection.NAIVE_SOFTMAX:
        mask = selection.apply_softmax_threshold(preds, config.softmax_threshold)
    else:
        mask = np.ones(len(preds), dtype=bool)
    if not mask.any():
        raise EmptyPseudoLabelSet(f"iteration {iteration}: no pseudo-label passed selection; relax the threshold")
    accepted = preds.subset(mask)
    accepted_index = pool_index[mask]

    weights = None
    rows = np.arange(len(accepted))
    if config.sampler is Sampler.NAIVE_CLASS_BALANCE:
        per_class = config.per_class_count or math.ceil(len(pool_index) / k)
        thr = config.softmax_threshold if config.selection is Selection.NAIVE_SOFTMAX else 0.0
        rows = sampling.naive_class_balance(accepted, thr, per_class)
        if len(rows) == 0:
            raise EmptyPseudoLabelSet(f"iteration {iteration}: class balancing kept no pseudo-labels")
    elif config.sampler is Sampler.WEIGHTED_SPLIT_BATCH:
        weights = sampling.compute_sample_weights(accepted)

    ps_x = pool.features[accepted_index[rows]]
    ps_t = accepted.probs[rows]
    if config.loss is Loss.HARD:
        ps_t = mdl.one_hot(ps_t.argmax(axis=1), k)
    lab_x, lab_y = split.labeled.features, split.labeled.labels

    sampler_seed = _derive(state.seed, 10, iteration)
    if config.batching is Batching.SPLIT_BATCH:
        sb = sampling.SplitBatchConfig(config.batch_size, config.labeled_fraction, sampler_seed)
        batch_sampler = sampling.split_batches(len(lab_y), len(ps_t), sb, weights)
        loss_mode = LossMode.MIXED
    else:
        batch_sampler = sampling.uniform_batches(len(lab_y), len(ps_t), config.batch_size, sampler_seed)
        loss_mode = LossMode.SOFT

    def epoch_batches(e):
        for ib in batch_sampler.epoch(e):
            yield mdl.Batch(lab_x[ib.labeled], lab_y[ib.labeled], ps_x[ib.pseudo], ps_t[ib.pseudo])

    source = None
    if config.student_init is StudentInit.FINE_TUNE:
        if state.best.model.tier is config.sizing.student_tier:
            source_best = state.best
        else:
            # small-teacher sizing: fine-tune from the best student-sized checkpoint, if any
            source_best = state.best_of_tier(config.sizing.student_tier)
        source = None if source_best is None else source_best.model
        init_from = "fresh" if source_best is None else f"iteration {source_best.iteration}"
    else:
        init_from = "fresh"
    student = init_student(config, split.feature_dim, k, _derive(state.seed, 11, iteration), source)

    noise = config.input_noise * within_class_std(lab_x, lab_y)
    tc = TrainConfig(epochs=epochs, batch_size=config.batch_size, learning_rate=config.learning_rate,
                     weight_decay=config.weight_decay, seed=_derive(state.seed, 12, iteration),
                     loss_mode=loss_mode, lambda_b=config.lambda_b, input_noise=noise)
    mdl.train(student, epoch_batches, tc)

    record = IterationRecord(
        iteration=iteration,
        tau=tau,
        ece_before=cal.ece_before if cal else calibration.ece(val_logits, val.labels),
        ece_after=cal.ece_after if cal else calibration.ece(val_logits, val.labels),
        entropy_threshold=choice.threshold if choice else float("nan"),
        n_accepted=int(mask.sum()),
        n_open_set_rejected=n_rejected,
        pseudo_precision=evaluate_pseudo_label_accuracy(
            accepted.argmax_class, split.hidden_unlabeled_labels()[accepted_index]),
        val_acc=mdl.accuracy(student, val.features, val.labels),
        test_acc=mdl.accuracy(student, split.test.features, split.test.labels),
        student_tier=student.tier.name.lower(),
        init_from=init_from,
        cdf_threshold=float("nan") if cdf_threshold is None else float(cdf_threshold),
        calibration=cal,
        threshold=choice,
    )
    return _StudentResult(student, record, accepted_index)


def run_iteration(state: SelfTrainState, split: DataSplit, config: PipelineConfig) -> SelfTrainState:
    """Run one teacher -> student cycle and update ``state`` in place."""
    iteration = state.iteration + 1
    cdf_threshold = None
    if config.open_set_filter:
        if state.cdf_threshold is None:
            def trial(t):
                return _student_step(state, split, config, iteration, config.cdf_search_epochs, t).record.val_acc
            state.cdf_threshold = openset.select_cdf_threshold(config.cdf_candidates, trial)
        cdf_threshold = state.cdf_threshold
    result = _student_step(state, split, config, iteration, config.student_epochs, cdf_threshold)
    state.records.append(result.record)
    state.checkpoints[iteration] = result.model
    if result.record.val_acc > state.best.val_acc:
        state.best = BestModel(iteration, result.model, result.record.val_acc)
    log.info("seed %d iteration %d: val %.4f test %.4f accepted %d", state.seed, iteration,
             result.record.val_acc, result.record.test_acc, result.record.n_accepted)
    return state


def run_self_training(split: DataSplit, config: PipelineConfig, seed: int = 0) -> SelfTrainState:
    state = start_state(split, config, seed)
    for _ in range(config.num_student_iterations):
        run_iteration(state, split, config)
    return state


# -- experiments -------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    teacher_tier: str
    teacher_val_acc: float
    teacher_test_acc: float
    records: list
    best_iteration: int
    best_val_acc: float

    @classmethod
    def from_state(cls, state: SelfTrainState) -> "SeedResult":
        return cls(state.seed, state.teacher.tier.name.lower(), state.teacher_val_acc, state.teacher_test_acc,
                   list(state.records), state.best.iteration, state.best.val_acc)

    @property
    def best_model_test_acc(self) -> float:
        if self.best_iteration == 0:
            return self.teacher_test_acc
        return self.records[self.best_iteration - 1].test_acc


@dataclass
class ExperimentReport:
    config: PipelineConfig
    seeds: list
    results: list  # SeedResult per seed
    dataset: list = field(default_factory=list)  # (key, value) description of the data

    def mean_teacher_test(self) -> float:
        return float(np.mean([r.teacher_test_acc for r in self.results]))

    def mean_by_iteration(self, attr: str) -> list[float]:
        n = self.config.num_student_iterations
        return [float(np.mean([getattr(r.records[i], attr) for r in self.results])) for i in range(n)]

    def best_mean_test(self) -> tuple[int, float]:
        """Best seed-mean test accuracy over student iterations, as (iteration, value)."""
        means = self.mean_by_iteration("test_acc")
        if not means:
            return 0, self.mean_teacher_test()
        i = int(np.argmax(means))
        return i + 1, means[i]

    def final_mean_test(self) -> float:
        means = self.mean_by_iteration("test_acc")
        return means[-1] if means else self.mean_teacher_test()


def run_experiment(config: PipelineConfig, split: DataSplit, seeds: Sequence[int] = (0, 1, 2),
                   dataset_description=()) -> ExperimentReport:
    results = [SeedResult.from_state(run_self_training(split, config, s)) for s in seeds]
    return ExperimentReport(config, list(seeds), results, list(dataset_description))


def with_overrides(config: PipelineConfig, **kw) -> PipelineConfig:
    return replace(config, **kw)
