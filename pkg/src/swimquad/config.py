"""Run configuration: one JSON document with a section per stage.

Angles are given in degrees everywhere in the file.  Unknown keys are rejected
with the dotted path of the offending entry.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .data import CUTOFF, FS, INTERP_SPEEDS, WINDOW, Grid, NoiseSpec
from .dynamics import BodyConfig
from .hydro import EfParams
from .kinematics import GaitParams, LinkageGeometry
from .lstm import TrainConfig
from .optimize import OptConfig

# data-collection grid and optimization search ranges (degrees / Hz)
GRID_BOUNDS = {"theta_H_min_deg": (-50.0, 10.0), "theta_K_max_deg": (-80.0, -20.0),
               "freq": (0.3, 0.6), "phi_deg": (60.0, 300.0)}
GAIT_BOUNDS = {"theta_H_min_deg": (-50.0, 10.0), "theta_K_max_deg": (-80.0, -20.0),
               "freq": (0.2, 0.65), "alpha_deg": (0.0, 360.0)}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"config error at '{path}': {message}")
        self.path = path


@dataclass(frozen=True)
class GridSection:
    theta_H_min_deg: tuple = (10.0, -10.0, -30.0, -50.0)
    theta_K_max_deg: tuple = (-20.0, -40.0, -60.0, -80.0)
    freq: tuple = (0.3, 0.4, 0.5, 0.6)
    phi_deg: tuple = (60.0, 120.0, 180.0, 240.0, 300.0)
    speeds: tuple = (0.0, 0.1, 0.2, 0.3)

    def grid(self) -> Grid:
        return Grid(tuple(self.theta_H_min_deg), tuple(self.theta_K_max_deg), tuple(self.freq),
                    tuple(math.radians(p) for p in self.phi_deg), tuple(self.speeds))


@dataclass(frozen=True)
class SynthSection:
    grid: GridSection = GridSection()
    noise: NoiseSpec = NoiseSpec()
    fs: float = FS


@dataclass(frozen=True)
class PreprocessSection:
    cutoff: float = CUTOFF
    interp_speeds: tuple = INTERP_SPEEDS
    window: int = WINDOW


@dataclass(frozen=True)
class GaitSection:
    theta_H_min_deg: float = 10.0
    theta_K_max_deg: float = -20.0
    freq: float = 0.65
    phi_deg: float = 60.0
    alpha_deg: tuple = (0.0, 0.0, 180.0, 180.0)

    def gait(self) -> GaitParams:
        return GaitParams.from_degrees(self.theta_H_min_deg, self.theta_K_max_deg, self.freq,
                                       math.radians(self.phi_deg),
                                       tuple(math.radians(a) for a in self.alpha_deg))


@dataclass(frozen=True)
class CompareSection:
    examples: int = 2
    speeds: tuple = (0.0, 0.1, 0.2, 0.3)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    geometry: LinkageGeometry = LinkageGeometry()
    ef: EfParams = EfParams()
    body: BodyConfig = BodyConfig()
    synth: SynthSection = SynthSection()
    preprocess: PreprocessSection = PreprocessSection()
    train: TrainConfig = field(default_factory=TrainConfig)
    optimize: OptConfig = OptConfig()
    simulate: GaitSection = GaitSection()
    compare: CompareSection = CompareSection()

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


SECTION_TYPES = {
    "geometry": LinkageGeometry, "ef": EfParams, "body": BodyConfig, "synth": SynthSection,
    "preprocess": PreprocessSection, "train": TrainConfig, "optimize": OptConfig,
    "simulate": GaitSection, "compare": CompareSection,
}
NESTED = {("synth", "grid"): GridSection, ("synth", "noise"): NoiseSpec}
# TrainConfig.seed and OptConfig.seed follow the top-level seed
DERIVED = {("train", "seed"), ("optimize", "seed")}


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, doc, path: str, prefix: tuple, overrides: dict):
    if not isinstance(doc, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name for f in fields(cls)}
    kwargs = dict(overrides)
    for key, value in doc.items():
        sub = f"{path}.{key}"
        if key not in names or (prefix + (key,)) in DERIVED:
            raise ConfigError(sub, "unknown key")
        nested = NESTED.get(prefix + (key,))
        kwargs[key] = _build(nested, value, sub, prefix + (key,), {}) if nested else _tuplify(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _check_range(path, value, bounds, label):
    lo, hi = bounds
    if not lo <= value <= hi:
        raise ConfigError(path, f"{value} outside the allowed {label} range [{lo}, {hi}]")


def validate(cfg: RunConfig) -> RunConfig:
    g = cfg.synth.grid
    for key in ("theta_H_min_deg", "theta_K_max_deg", "freq", "phi_deg"):
        values = getattr(g, key)
        if not values:
            raise ConfigError(f"synth.grid.{key}", "must not be empty")
        for i, v in enumerate(values):
            _check_range(f"synth.grid.{key}[{i}]", v, GRID_BOUNDS[key], "data-collection grid")
    if not g.speeds or any(v < 0 for v in g.speeds):
        raise ConfigError("synth.grid.speeds", "need at least one non-negative flow speed")
    s = cfg.simulate
    for key in ("theta_H_min_deg", "theta_K_max_deg", "freq"):
        _check_range(f"simulate.{key}", getattr(s, key), GAIT_BOUNDS[key], "gait search")
    if len(s.alpha_deg) != 4:
        raise ConfigError("simulate.alpha_deg", "need four phases (LF, RF, LH, RH)")
    for i, a in enumerate(s.alpha_deg):
        lo, hi = GAIT_BOUNDS["alpha_deg"]
        if not lo <= a < hi:
            raise ConfigError(f"simulate.alpha_deg[{i}]", f"{a} outside the gait search range [{lo}, {hi})")
    if cfg.preprocess.window < 2:
        raise ConfigError("preprocess.window", "must be >= 2")
    if cfg.compare.examples < 0:
        raise ConfigError("compare.examples", "must be >= 0")
    return cfg


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected an object")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    kwargs = {"seed": seed}
    for key, value in doc.items():
        if key == "seed":
            continue
        if key not in SECTION_TYPES:
            raise ConfigError(key, "unknown key")
        overrides = {"seed": seed} if key in ("train", "optimize") else {}
        kwargs[key] = _build(SECTION_TYPES[key], value, key, (key,), overrides)
    kwargs.setdefault("train", TrainConfig(seed=seed))
    kwargs.setdefault("optimize", OptConfig(seed=seed))
    return validate(RunConfig(**kwargs))


def load_config(path=None, seed: int | None = None) -> RunConfig:
    doc = {} if path is None else json.loads(Path(path).read_text())
    if seed is not None:
        doc = dict(doc, seed=seed)
    return from_dict(doc)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    d = cfg.to_dict()
    d["seed"] = seed
    d["train"].pop("seed")
    d["optimize"].pop("seed")
    return from_dict(d)
