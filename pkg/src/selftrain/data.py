"""Synthetic Gaussian datasets, labeled/unlabeled splits and their text format.

Every partition is a set of rows with a globally unique integer id. Labeled
partitions (labeled, validation, test) carry class labels. The unlabeled pool
keeps the generating class of each row, but only evaluation code may read it:
training code receives a :class:`FeatureView`, which has no label field.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

FORMAT_VERSION = 1
PARTITIONS = ("labeled", "unlabeled", "validation", "test")
_MAGIC = "selftrain-partition"


class DataFormatError(ValueError):
    """Raised when a partition file is malformed or inconsistent."""


class Sample(NamedTuple):
    features: np.ndarray
    label: Optional[int]
    origin_class: Optional[int]


@dataclass(frozen=True)
class Partition:
    """Rows of one partition.

    ``labels`` is ``None`` for the unlabeled pool. ``origin`` always holds the
    generating class and equals ``labels`` on labeled partitions.
    """

    ids: np.ndarray
    features: np.ndarray
    labels: Optional[np.ndarray]
    origin: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n or len(self.origin) != n:
            raise ValueError("partition arrays have inconsistent lengths")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("partition arrays have inconsistent lengths")
        for arr in (self.ids, self.features, self.origin, self.labels):
            if arr is not None:
                arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.ids)

    def sample(self, i: int) -> Sample:
        label = None if self.labels is None else int(self.labels[i])
        return Sample(self.features[i], label, int(self.origin[i]))

    def view(self) -> "FeatureView":
        return FeatureView(self.ids, self.features)


@dataclass(frozen=True)
class FeatureView:
    """Feature-only view of a partition; what pseudo-labeling code consumes."""

    ids: np.ndarray
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, mask_or_index) -> "FeatureView":
        return FeatureView(self.ids[mask_or_index], self.features[mask_or_index])


@dataclass(frozen=True)
class DataSplit:
    labeled: Partition
    unlabeled: Partition
    validation: Partition
    test: Partition
    num_target_classes: int
    feature_dim: int

    def __post_init__(self):
        if self.num_target_classes < 1:
            raise ValueError("num_target_classes must be >= 1")
        for name in PARTITIONS:
            part = getattr(self, name)
            if part.features.shape[1] != self.feature_dim:
                raise ValueError(f"{name}: feature dimension {part.features.shape[1]} != {self.feature_dim}")
            if name == "unlabeled":
                if part.labels is not None:
                    raise ValueError("unlabeled partition must not carry labels")
                continue
            if part.labels is None:
                raise ValueError(f"{name}: labels missing")
            if len(part) and (part.labels.min() < 0 or part.labels.max() >= self.num_target_classes):
                raise ValueError(f"{name}: label outside [0, {self.num_target_classes})")
        all_ids = np.concatenate([getattr(self, n).ids for n in PARTITIONS])
        if len(np.unique(all_ids)) != len(all_ids):
            raise ValueError("partitions share sample ids")

    def partition(self, name: str) -> Partition:
        if name not in PARTITIONS:
            raise KeyError(name)
        return getattr(self, name)

    def unlabeled_view(self) -> FeatureView:
        return self.unlabeled.view()

    def hidden_unlabeled_labels(self) -> np.ndarray:
        """Generating classes of the unlabeled pool. Evaluation only."""
        return self.unlabeled.origin

    @property
    def is_open_set(self) -> bool:
        return bool(len(self.unlabeled)) and int(self.unlabeled.origin.max()) >= self.num_target_classes


@dataclass(frozen=True)
class GeneratorConfig:
    num_target_classes: int = 4
    num_nontarget_classes: int = 0
    feature_dim: int = 16
    n_labeled: int = 100
    n_unlabeled: int = 4000
    n_validation: int = 200
    n_test: int = 1000
    spread: float = 2.2
    within_std: float = 1.0
    seed: int = 0
    # fraction of the unlabeled pool drawn from non-target classes
    nontarget_fraction: float = 0.5
    # minimum distance, in within-class std units, from any non-target center to every target center
    nontarget_separation: float = 8.0
    # relative class frequencies for target classes; None means balanced
    class_proportions: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.num_target_classes < 1:
            raise ValueError("num_target_classes must be >= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.num_nontarget_classes < 0:
            raise ValueError("num_nontarget_classes must be >= 0")
        for name in ("n_labeled", "n_unlabeled", "n_validation", "n_test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.spread > 0 and self.within_std > 0):
            raise ValueError("spread and within_std must be > 0")
        if 0 < self.n_labeled < self.num_target_classes:
            raise ValueError("n_labeled cannot cover every target class")
        if not 0.0 <= self.nontarget_fraction <= 1.0:
            raise ValueError("nontarget_fraction must lie in [0, 1]")
        if self.class_proportions is not None:
            props = np.asarray(self.class_proportions, dtype=float)
            if len(props) != self.num_target_classes or np.any(props < 0) or props.sum() <= 0:
                raise ValueError("class_proportions must give one non-negative weight per target class")


def class_centers(num_classes: int, feature_dim: int, spread: float, seed: int) -> np.ndarray:
    """Deterministic class centers.

    With ``feature_dim >= num_classes`` the centers are the vertices of a
    regular simplex (pairwise distance ``spread * sqrt(2)``) in a random
    rotation; otherwise they sit on a ring of radius ``spread`` in a random
    2-plane (or on a line when ``feature_dim == 1``).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC3]))
    if feature_dim >= num_classes:
        verts = np.eye(num_classes) * spread
        verts -= verts.mean(axis=0)
        basis, _ = np.linalg.qr(rng.standard_normal((feature_dim, num_classes)))
        return verts @ basis.T
    if feature_dim == 1:
        return (np.arange(num_classes) - (num_classes - 1) / 2.0)[:, None] * spread
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1) * spread
    basis, _ = np.linalg.qr(rng.standard_normal((feature_dim, 2)))
    return ring @ basis.T


def _class_counts(n: int, proportions: np.ndarray) -> np.ndarray:
    # largest-remainder rounding, ties to the lower class index
    raw = proportions / proportions.sum() * n
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rest]] += 1
    return counts


def _draw(rng, centers, counts, std, first_class=0):
    labels = np.repeat(np.arange(len(counts)) + first_class, counts)
    rng.shuffle(labels)
    noise = rng.standard_normal((len(labels), centers.shape[1])) * std
    return centers[labels - first_class] + noise, labels


def nontarget_centers(target_centers: np.ndarray, num_nontarget: int, min_distance: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Place centers at least ``min_distance`` from every target center."""
    middle = target_centers.mean(axis=0)
    radius = np.linalg.norm(target_centers - middle, axis=1).max() + min_distance
    dirs = rng.standard_normal((num_nontarget, target_centers.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # triangle inequality: |m + r u - c| >= r - |c - m| >= min_distance
    return middle + radius * dirs


def generate_gaussian_dataset(config: GeneratorConfig) -> DataSplit:
    """Draw a split from isotropic Gaussian classes.

    Each partition has its own random stream, so resizing one partition
    leaves the others unchanged. Non-target classes only ever appear in the
    unlabeled pool.
    """
    c = config
    centers = class_centers(c.num_target_classes, c.feature_dim, c.spread, c.seed)
    props = (np.ones(c.num_target_classes) if c.class_proportions is None
             else np.asarray(c.class_proportions, dtype=float))
    streams = np.random.SeedSequence(c.seed).spawn(len(PARTITIONS) + 1)
    sizes = dict(labeled=c.n_labeled, unlabeled=c.n_unlabeled, validation=c.n_validation, test=c.n_test)

    parts = {}
    next_id = 0
    for name, stream in zip(PARTITIONS, streams):
        rng = np.random.default_rng(stream)
        n = sizes[name]
        n_nontarget = 0
        if name == "unlabeled" and c.num_nontarget_classes > 0:
            n_nontarget = int(round(c.nontarget_fraction * n))
        x, y = _draw(rng, centers, _class_counts(n - n_nontarget, props), c.within_std)
        if n_nontarget:
            extra = nontarget_centers(centers, c.num_nontarget_classes,
                                      c.nontarget_separation * c.within_std,
                                      np.random.default_rng(streams[-1]))
            xo, yo = _draw(rng, extra, _class_counts(n_nontarget, np.ones(c.num_nontarget_classes)),
                           c.within_std, first_class=c.num_target_classes)
            x, y = np.concatenate([x, xo]), np.concatenate([y, yo])
            perm = rng.permutation(n)
            x, y = x[perm], y[perm]
        ids = np.arange(next_id, next_id + n, dtype=np.int64)
        next_id += n
        labels = None if name == "unlabeled" else y.copy()
        parts[name] = Partition(ids, x, labels, y)
    return DataSplit(num_target_classes=c.num_target_classes, feature_dim=c.feature_dim, **parts)


def _labeled_rows(split: DataSplit):
    parts = [split.labeled, split.validation, split.test]
    x = np.concatenate([p.features for p in parts])
    y = np.concatenate([p.labels for p in parts])
    return x, y


def inject_open_set(split: DataSplit, nontarget_fraction: float, seed: int,
                    num_nontarget_classes: int = 2, separation: float = 8.0) -> DataSplit:
    """Replace a fraction of the unlabeled pool with non-target-class rows.

    Target centers and the within-class std are estimated from the labeled
    partitions; non-target centers are placed at least ``separation`` std
    away from every estimated target center. Replaced rows keep their ids.
    """
    if not 0.0 <= nontarget_fraction <= 1.0:
        raise ValueError("nontarget_fraction must lie in [0, 1]")
    if split.is_open_set:
        raise ValueError("split already contains non-target classes")
    pool = split.unlabeled
    n_replace = int(round(nontarget_fraction * len(pool)))
    if n_replace == 0:
        return split
    if num_nontarget_classes < 1:
        raise ValueError("num_nontarget_classes must be >= 1")

    x, y = _labeled_rows(split)
    present = np.unique(y)
    centers = np.stack([x[y == k].mean(axis=0) for k in present])
    resid = np.concatenate([x[y == k] - centers[i] for i, k in enumerate(present)])
    std = float(np.sqrt(np.mean(resid ** 2)))

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0E5]))
    extra = nontarget_centers(centers, num_nontarget_classes, separation * std, rng)
    xo, yo = _draw(rng, extra, _class_counts(n_replace, np.ones(num_nontarget_classes)), std,
                   first_class=split.num_target_classes)
    slots = np.sort(rng.choice(len(pool), size=n_replace, replace=False))
    feats = pool.features.copy()
    origin = pool.origin.copy()
    feats[slots] = xo
    origin[slots] = yo
    return replace(split, unlabeled=Partition(pool.ids.copy(), feats, None, origin))


# ----------------------------------------------------------------------------
# text format
#
#   selftrain-partition <version>
#   name <partition>
#   feature_dim <d>
#   num_target_classes <N_c>
#   rows <n>
#   <id> <label or -> <origin> <f_1> ... <f_d>      (n lines)
#   end
#
# Floats use repr(), the shortest decimal string that round-trips binary64.
# ----------------------------------------------------------------------------


def _format_partition(name: str, part: Partition, d: int, n_classes: int) -> str:
    lines = [f"{_MAGIC} {FORMAT_VERSION}", f"name {name}", f"feature_dim {d}",
             f"num_target_classes {n_classes}", f"rows {len(part)}"]
    for i in range(len(part)):
        label = "-" if part.labels is None else str(int(part.labels[i]))
        feats = " ".join(repr(float(v)) for v in part.features[i])
        lines.append(f"{int(part.ids[i])} {label} {int(part.origin[i])} {feats}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def partition_path(directory, name: str) -> Path:
    return Path(directory) / f"{name}.txt"


def save_split(split: DataSplit, directory) -> list[Path]:
    """Write one text file per partition into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in PARTITIONS:
        path = partition_path(directory, name)
        _atomic_write(path, _format_partition(name, split.partition(name), split.feature_dim,
                                              split.num_target_classes))
        paths.append(path)
    return paths


def _header_value(line: str, key: str) -> str:
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise DataFormatError(f"expected '{key} <value>', got {line!r}")
    return parts[1]


def _parse_partition(text: str, expected_name: str):
    lines = text.splitlines()
    if len(lines) < 6:
        raise DataFormatError("file truncated: header incomplete")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != _MAGIC:
        raise DataFormatError("not a selftrain partition file")
    if magic[1] != str(FORMAT_VERSION):
        raise DataFormatError(f"unknown format version {magic[1]}")
    name = _header_value(lines[1], "name")
    if name != expected_name:
        raise DataFormatError(f"expected partition {expected_name!r}, file holds {name!r}")
    try:
        d = int(_header_value(lines[2], "feature_dim"))
        n_classes = int(_header_value(lines[3], "num_target_classes"))
        n = int(_header_value(lines[4], "rows"))
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc
    body = lines[5:]
    if len(body) != n + 1 or body[-1] != "end":
        raise DataFormatError(f"file truncated or padded: expected {n} rows followed by 'end'")

    ids = np.empty(n, dtype=np.int64)
    origin = np.empty(n, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    feats = np.empty((n, d), dtype=np.float64)
    hidden = None
    for i, row in enumerate(body[:-1]):
        cols = row.split()
        if len(cols) != d + 3:
            raise DataFormatError(f"row {i}: expected {d + 3} columns, got {len(cols)} (dimension mismatch)")
        try:
            ids[i] = int(cols[0])
            origin[i] = int(cols[2])
            feats[i] = [float(v) for v in cols[3:]]
        except ValueError as exc:
            raise DataFormatError(f"row {i}: {exc}") from exc
        is_hidden = cols[1] == "-"
        if hidden is None:
            hidden = is_hidden
        elif hidden != is_hidden:
            raise DataFormatError(f"row {i}: mixes hidden and visible labels")
        if not is_hidden:
            try:
                labels[i] = int(cols[1])
            except ValueError as exc:
                raise DataFormatError(f"row {i}: {exc}") from exc
    if not np.all(np.isfinite(feats)):
        raise DataFormatError("non-finite feature value")
    if hidden is None:
        hidden = expected_name == "unlabeled"
    return d, n_classes, Partition(ids, feats, None if hidden else labels, origin)


def load_split(directory) -> DataSplit:
    """Read a split written by :func:`save_split`; raises on any inconsistency."""
    parts = {}
    dims = set()
    classes = set()
    for name in PARTITIONS:
        path = partition_path(directory, name)
        d, n_classes, part = _parse_partition(path.read_text(), name)
        dims.add(d)
        classes.add(n_classes)
        parts[name] = part
    if len(dims) != 1 or len(classes) != 1:
        raise DataFormatError("partitions disagree on feature_dim or num_target_classes")
    d, n_classes = dims.pop(), classes.pop()
    for name in ("labeled", "validation", "test"):
        p = parts[name]
        if p.labels is None:
            raise DataFormatError(f"{name}: labels missing")
        if not np.array_equal(p.labels, p.origin):
            raise DataFormatError(f"{name}: origin class differs from label")
    if parts["unlabeled"].labels is not None:
        raise DataFormatError("unlabeled: labels must be hidden")
    try:
        return DataSplit(num_target_classes=n_classes, feature_dim=d, **parts)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc


def splits_equal(a: DataSplit, b: DataSplit) -> bool:
    if (a.num_target_classes, a.feature_dim) != (b.num_target_classes, b.feature_dim):
        return False
    for name in PARTITIONS:
        pa, pb = a.partition(name), b.partition(name)
        if not (np.array_equal(pa.ids, pb.ids) and np.array_equal(pa.features, pb.features)
                and np.array_equal(pa.origin, pb.origin)):
            return False
        if (pa.labels is None) != (pb.labels is None):
            return False
        if pa.labels is not None and not np.array_equal(pa.labels, pb.labels):
            return False
    return True


def within_class_std(features: np.ndarray, labels: np.ndarray) -> float:
    """Pooled within-class standard deviation per coordinate."""
    resid = [features[labels == k] - features[labels == k].mean(axis=0) for k in np.unique(labels)]
    resid = np.concatenate(resid)
    return float(math.sqrt(np.mean(resid ** 2))) if resid.size else 0.0
