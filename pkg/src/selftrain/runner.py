"""Config-driven experiment execution shared by the CLI and library callers."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from typing import Optional

from . import data
from .config import SWEEP_AXES, ConfigError, ExperimentConfig
from .pipeline import ExperimentReport, PipelineConfig, SeedResult, run_self_training


def _one_seed(args) -> SeedResult:
    cfg, generator, pipe, seed = args
    split = cfg.load_data(generator)
    return SeedResult.from_state(run_self_training(split, pipe, seed))


def _map(fn, jobs, parallel: int):
    if parallel <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, jobs))


def _reports(cfg: ExperimentConfig, generators: list, parallel: int) -> list[list[ExperimentReport]]:
    jobs = [(cfg, g, p, s) for g in generators for p in cfg.pipelines for s in cfg.seeds]
    results = iter(_map(_one_seed, jobs, parallel))
    out = []
    for g in generators:
        row = []
        for p in cfg.pipelines:
            seeds = [next(results) for _ in cfg.seeds]
            row.append(ExperimentReport(p, list(cfg.seeds), seeds, cfg.dataset_description(g)))
        out.append(row)
    return out


def run_config(cfg: ExperimentConfig, parallel: int = 1) -> list[ExperimentReport]:
    """One report per configured preset."""
    return _reports(cfg, [None], parallel)[0]


def sweep_generators(cfg: ExperimentConfig) -> list[data.GeneratorConfig]:
    if cfg.sweep_axis is None or not cfg.sweep_values:
        raise ConfigError("config has no [sweep] axis/values")
    if cfg.generator is None:
        raise ConfigError("a sweep needs a [dataset] generator block")
    if list(cfg.sweep_values) != sorted(cfg.sweep_values):
        raise ConfigError("sweep values must be ascending")
    key = SWEEP_AXES[cfg.sweep_axis]
    return [dataclasses.replace(cfg.generator, **{key: v}) for v in cfg.sweep_values]


def run_sweep(cfg: ExperimentConfig, parallel: int = 1,
              pipe: Optional[PipelineConfig] = None) -> list[ExperimentReport]:
    """One report per sweep value, for the first configured preset."""
    pipe = pipe or cfg.pipelines[0]
    cfg = dataclasses.replace(cfg, pipelines=(pipe,))
    return [row[0] for row in _reports(cfg, sweep_generators(cfg), parallel)]
