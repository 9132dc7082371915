"""Run configuration: one YAML tree per experiment directory.

Every block maps onto a library dataclass; unknown keys anywhere are
rejected so typos fail loudly instead of silently using defaults.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from . import calib, dataio, pbm
from .control import MpcConfig, MpcScenario
from .errors import ConfigError
from .pipeline import LearnConfig, Toggles
from .props import MaterialParams


@dataclass(frozen=True)
class Paths:
    data_dir: str = "data"
    out_dir: str = "out"
    model_dir: str | None = None

    def model(self) -> Path:
        """Model artifacts live under ``out_dir/model`` unless set explicitly."""
        return Path(self.model_dir) if self.model_dir else Path(self.out_dir) / "model"


@dataclass(frozen=True)
class EvalConfig:
    """Split, horizon and diagnostic settings."""

    train_frac: float = 0.7
    horizon: int = 20
    acf_lags: int = 50
    lb_lags: int = 20
    segment_len: int = 256
    overlap: float = 0.5

    def __post_init__(self):
        if not 0 < self.train_frac < 1:
            raise ConfigError("eval.train_frac must lie in (0, 1)")
        if self.horizon < 1 or self.acf_lags < 1 or self.lb_lags < 1 or self.segment_len < 2:
            raise ConfigError("eval horizons, lags and segment length must be positive")

    def diag_kw(self) -> dict:
        return {"acf_lags": self.acf_lags, "lb_lags": self.lb_lags,
                "segment_len": self.segment_len, "overlap": self.overlap}


def _simple(cls, d, block):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{block}: expected a mapping")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"unknown keys in {block}: {sorted(unknown)}")
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{block}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    calibrate: bool = True
    export_trajectories: bool = False
    paths: Paths = field(default_factory=Paths)
    scenario: dataio.ScenarioSpec = field(default_factory=dataio.ScenarioSpec)
    pbm: pbm.SectionConfig = field(default_factory=pbm.SectionConfig)
    material: MaterialParams = field(default_factory=MaterialParams)
    calib: calib.CalibProblem = field(default_factory=calib.CalibProblem)
    learn: LearnConfig = field(default_factory=LearnConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    mpc_scenario: MpcScenario = field(default_factory=MpcScenario)
    toggles: Toggles = field(default_factory=Toggles)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        kw = {}
        for key in ("seed", "calibrate", "export_trajectories"):
            if key in d:
                kw[key] = d[key]
        builders = {
            "paths": lambda v: _simple(Paths, v, "paths"),
            "scenario": dataio.ScenarioSpec.from_dict,
            "pbm": pbm.SectionConfig.from_dict,
            "material": MaterialParams.from_dict,
            "calib": lambda v: _simple(calib.CalibProblem, v, "calib"),
            "learn": LearnConfig.from_dict,
            "eval": lambda v: _simple(EvalConfig, v, "eval"),
            "mpc": MpcConfig.from_dict,
            "mpc_scenario": MpcScenario.from_dict,
            "toggles": Toggles.from_names,
        }
        for key, build in builders.items():
            if key in d and d[key] is not None:
                try:
                    kw[key] = build(d[key])
                except TypeError as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
        if not isinstance(kw.get("seed", 0), int):
            raise ConfigError("seed must be an integer")
        return cls(**kw)

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            return v
        return {
            "seed": self.seed, "calibrate": self.calibrate,
            "export_trajectories": self.export_trajectories,
            "paths": asdict(self.paths), "scenario": self.scenario.to_dict(),
            "pbm": plain(self.pbm.to_dict()), "material": self.material.to_dict(),
            "calib": plain(asdict(self.calib)), "learn": plain(self.learn.to_dict()),
            "eval": asdict(self.eval), "mpc": asdict(self.mpc),
            "mpc_scenario": self.mpc_scenario.to_dict(), "toggles": self.toggles.active(),
        }


def load(path) -> RunConfig:
    """Read a YAML run configuration; an absent path gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return RunConfig.from_dict(raw)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
