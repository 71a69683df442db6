"""Plain-text experiment reports.

Layout (one ``key=value`` record per line, sections in brackets)::

    # selftrain report v1
    [config]
    preset=EST
    loss=soft
    ...
    [dataset]
    ...
    [seed 0]
    teacher tier=large val_acc=0.735000 test_acc=0.741000
    iteration=1 tau=1.550000 ece_before=... ece_after=... entropy_threshold=... n_accepted=... pseudo_precision=... val_acc=... test_acc=...
    best iteration=2 val_acc=...
    [mean]
    teacher test_acc=...
    iteration=1 val_acc=... test_acc=... pseudo_precision=... n_accepted=...
    best_mean_test_score=... iteration=2

Reals are written with six decimals so reports compare byte-for-byte.
"""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path
from typing import Sequence

from .pipeline import ExperimentReport

HEADER = "# selftrain report v1"
ITERATION_FIELDS = ("iteration", "tau", "ece_before", "ece_after", "entropy_threshold", "n_accepted",
                    "pseudo_precision", "val_acc", "test_acc")


def fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6f}"
    return str(value)


def _kv(pairs) -> str:
    return " ".join(f"{k}={fmt(v)}" for k, v in pairs)


def iteration_line(rec) -> str:
    pairs = [(f, getattr(rec, f)) for f in ITERATION_FIELDS]
    pairs += [("open_set_rejected", rec.n_open_set_rejected), ("cdf_threshold", rec.cdf_threshold),
              ("student", rec.student_tier), ("init", rec.init_from.replace(" ", "-"))]
    return _kv(pairs)


def render(report: ExperimentReport) -> str:
    lines = [HEADER, "[config]"]
    lines += [f"{k}={v}" for k, v in report.config.describe()]
    lines.append("seeds=" + ", ".join(str(s) for s in report.seeds))
    if report.dataset:
        lines.append("[dataset]")
        lines += [f"{k}={v}" for k, v in report.dataset]
    for res in report.results:
        lines.append(f"[seed {res.seed}]")
        lines.append("teacher " + _kv([("tier", res.teacher_tier), ("val_acc", res.teacher_val_acc),
                                       ("test_acc", res.teacher_test_acc)]))
        lines += [iteration_line(r) for r in res.records]
        lines.append("best " + _kv([("iteration", res.best_iteration), ("val_acc", res.best_val_acc),
                                    ("test_acc", res.best_model_test_acc)]))
    lines.append("[mean]")
    lines.append("teacher " + _kv([("test_acc", report.mean_teacher_test())]))
    val = report.mean_by_iteration("val_acc")
    test = report.mean_by_iteration("test_acc")
    prec = report.mean_by_iteration("pseudo_precision")
    acc = report.mean_by_iteration("n_accepted")
    for i in range(len(test)):
        lines.append(_kv([("iteration", i + 1), ("val_acc", val[i]), ("test_acc", test[i]),
                          ("pseudo_precision", prec[i]), ("n_accepted", acc[i])]))
    it, best = report.best_mean_test()
    lines.append(_kv([("best_mean_test_score", best), ("iteration", it)]))
    return "\n".join(lines) + "\n"


def roc_table(report: ExperimentReport) -> str:
    """Tab-separated ROC points of every calibrated-entropy selection, for plotting."""
    rows = ["seed\titeration\tthreshold\tfpr\ttpr"]
    for res in report.results:
        for rec in res.records:
            if rec.threshold is None:
                continue
            for fpr, tpr, t in rec.threshold.roc_points:
                rows.append(f"{res.seed}\t{rec.iteration}\t{t:.6f}\t{fpr:.6f}\t{tpr:.6f}")
    return "\n".join(rows) + "\n"


def comparison_table(reports: Sequence[ExperimentReport]) -> str:
    """Side-by-side mean test accuracy per iteration for several presets."""
    n = max(r.config.num_student_iterations for r in reports)
    head = ["row"] + [r.config.preset for r in reports]
    rows = ["\t".join(head)]
    rows.append("\t".join(["teacher"] + [fmt(r.mean_teacher_test()) for r in reports]))
    for i in range(n):
        cells = []
        for r in reports:
            means = r.mean_by_iteration("test_acc")
            cells.append(fmt(means[i]) if i < len(means) else "-")
        rows.append("\t".join([f"iteration {i + 1}"] + cells))
    rows.append("\t".join(["best_mean_test"] + [fmt(r.best_mean_test()[1]) for r in reports]))
    return "\n".join(rows) + "\n"


def sweep_table(axis: str, values: Sequence, reports: Sequence[ExperimentReport]) -> str:
    """Trend of test accuracy against one swept dataset value; first row is the teacher."""
    rows = [f"{axis}\tbest_mean_test\tfinal_mean_test"]
    rows.append(f"teacher\t{fmt(reports[0].mean_teacher_test())}\t{fmt(reports[0].mean_teacher_test())}")
    for v, r in zip(values, reports):
        rows.append(f"{v}\t{fmt(r.best_mean_test()[1])}\t{fmt(r.final_mean_test())}")
    return "\n".join(rows) + "\n"


def write_atomic(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path
