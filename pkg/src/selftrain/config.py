"""Experiment configuration files.

The format is INI as read by :mod:`configparser` (``key = value`` lines under
``[section]`` headers, ``#`` or ``;`` comments). Sections and keys::

    [dataset]      path = <split directory>   (load a saved split), or any
                   GeneratorConfig field to generate one; optionally
                   inject_fraction / inject_classes / inject_separation /
                   inject_seed to add non-target rows after generation
    [pipeline]     preset = <name>[, <name> ...] plus any PipelineConfig
                   field as an override applied to every preset
    [experiment]   seeds = 0, 1, 2 ; output = <directory>
    [sweep]        axis = unlabeled_size ; values = 500, 1000, ...

Unknown sections or keys are errors. Enum values are written by value
(``loss = soft``), tuples and lists comma-separated.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from . import data, pipeline
from .pipeline import ConfigError, PipelineConfig

SWEEP_AXES = {"unlabeled_size": "n_unlabeled", "labeled_size": "n_labeled"}
_INJECT_KEYS = {"inject_fraction": float, "inject_classes": int, "inject_separation": float, "inject_seed": int}


@dataclass(frozen=True)
class InjectionConfig:
    fraction: float = 0.0
    classes: int = 2
    separation: float = 8.0
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    pipelines: tuple
    seeds: tuple = (0, 1, 2)
    generator: Optional[data.GeneratorConfig] = None
    dataset_path: Optional[Path] = None
    injection: InjectionConfig = InjectionConfig()
    output: Path = Path("out")
    sweep_axis: Optional[str] = None
    sweep_values: tuple = ()

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=tuple(seeds))

    def load_data(self, generator: Optional[data.GeneratorConfig] = None) -> data.DataSplit:
        if self.dataset_path is not None and generator is None:
            split = data.load_split(self.dataset_path)
        else:
            split = data.generate_gaussian_dataset(generator or self.generator)
        if self.injection.fraction > 0:
            split = data.inject_open_set(split, self.injection.fraction, self.injection.seed,
                                         self.injection.classes, self.injection.separation)
        return split

    def dataset_description(self, generator: Optional[data.GeneratorConfig] = None) -> list:
        if self.dataset_path is not None and generator is None:
            out = [("path", str(self.dataset_path))]
        else:
            gen = generator or self.generator
            out = [(f.name, _text(getattr(gen, f.name))) for f in fields(gen)]
        if self.injection.fraction > 0:
            out += [(f"inject_{f.name}", _text(getattr(self.injection, f.name))) for f in fields(self.injection)]
        return out


def _text(v) -> str:
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, (tuple, list)):
        return ", ".join(str(x) for x in v)
    return "none" if v is None else str(v)


def _split_list(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def _convert(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if raw.strip().lower() in ("none", "auto", ""):
            return None
        return _convert(raw, next(a for a in args if a is not type(None)), key)
    try:
        if isinstance(tp, type) and issubclass(tp, enum.Enum):
            return tp(raw.strip().lower())
        if tp is bool:
            low = raw.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw.strip()
        if tp is tuple or origin in (tuple, typing.Sequence) or tp is typing.Sequence:
            return tuple(float(x) for x in _split_list(raw))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    raise ConfigError(f"unsupported type for {key!r}")


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def parse_config(text: str, base_dir: Path = Path(".")) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    unknown = set(cp.sections()) - {"dataset", "pipeline", "experiment", "sweep"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    gen_types = _field_types(data.GeneratorConfig)
    gen_kw, inject_kw, dataset_path = {}, {}, None
    if cp.has_section("dataset"):
        for key, raw in cp.items("dataset"):
            if key == "path":
                dataset_path = (base_dir / raw.strip()).resolve()
            elif key in _INJECT_KEYS:
                try:
                    inject_kw[key[len("inject_"):]] = _INJECT_KEYS[key](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
            elif key in gen_types:
                gen_kw[key] = _convert(raw, gen_types[key], key)
            else:
                raise ConfigError(f"unknown key in [dataset]: {key!r}")
    if dataset_path is not None and gen_kw:
        raise ConfigError("[dataset] takes either 'path' or generator keys, not both")
    try:
        generator = None if dataset_path is not None else data.GeneratorConfig(**gen_kw)
        injection = InjectionConfig(**inject_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    pipe_types = _field_types(PipelineConfig)
    presets, overrides = ["EST"], {}
    if cp.has_section("pipeline"):
        for key, raw in cp.items("pipeline"):
            if key == "preset":
                presets = _split_list(raw)
            elif key in pipe_types and key != "preset":
                overrides[key] = _convert(raw, pipe_types[key], key)
            else:
                raise ConfigError(f"unknown key in [pipeline]: {key!r}")
    if not presets:
        raise ConfigError("no preset named")
    try:
        pipelines = tuple(pipeline.preset(name, **overrides) if name != "custom"
                          else PipelineConfig(**overrides) for name in presets)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    seeds, output = (0, 1, 2), base_dir / "out"
    if cp.has_section("experiment"):
        for key, raw in cp.items("experiment"):
            if key == "seeds":
                try:
                    seeds = tuple(int(s) for s in _split_list(raw))
                except ValueError as exc:
                    raise ConfigError(f"bad seeds: {raw!r}") from exc
            elif key == "output":
                output = base_dir / raw.strip()
            else:
                raise ConfigError(f"unknown key in [experiment]: {key!r}")
    if not seeds:
        raise ConfigError("no seeds given")

    axis, values = None, ()
    if cp.has_section("sweep"):
        for key, raw in cp.items("sweep"):
            if key == "axis":
                axis = raw.strip()
                if axis not in SWEEP_AXES:
                    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
            elif key == "values":
                try:
                    values = tuple(int(v) for v in _split_list(raw))
                except ValueError as exc:
                    raise ConfigError(f"bad sweep values: {raw!r}") from exc
            else:
                raise ConfigError(f"unknown key in [sweep]: {key!r}")
    return ExperimentConfig(pipelines, seeds, generator, dataset_path, injection, Path(output), axis, values)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)
