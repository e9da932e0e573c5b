"""Experiment configuration: TOML files, presets and the config hash."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .branching import BranchingMechanism
from .environment import EnvironmentSpec, TruncatedStable
from .errors import ConfigError

ESTIMATORS = ("quenched", "pathwise")
CORRECTIONS = ("none", "explicit-ell")
HEADLINE_T_GRID = (50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0, 5000.0)


@dataclass(frozen=True)
class ExperimentConfig:
    mechanism: BranchingMechanism
    environment: EnvironmentSpec
    z: float = 1.0
    x: float = 1.0
    t_grid: Tuple[float, ...] = HEADLINE_T_GRID
    y_grid: Tuple[float, ...] = (1.0, 2.0, 4.0)
    n_paths: int = 100_000
    dt: float = 0.2
    seed: int = 2024
    estimator: str = "quenched"
    correction: str = "explicit-ell"
    bridge: bool = True
    name: str = "experiment"
    out: str = "out"
    conditioned: dict = field(default_factory=dict)
    pathsim: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "t_grid", tuple(float(t) for t in self.t_grid))
        object.__setattr__(self, "y_grid", tuple(float(y) for y in self.y_grid))
        if not self.t_grid:
            raise ConfigError("experiment.t_grid: must not be empty")
        if any(not (t > 0) for t in self.t_grid) or list(self.t_grid) != sorted(set(self.t_grid)):
            raise ConfigError("experiment.t_grid: must be positive and strictly increasing")
        if any(not (y > 0) for y in self.y_grid):
            raise ConfigError("experiment.y_grid: must be positive")
        if not (self.z > 0):
            raise ConfigError("experiment.z: must be positive")
        if not (self.x > 0):
            raise ConfigError("experiment.x: must be positive")
        if not (self.dt > 0):
            raise ConfigError("experiment.dt: must be positive")
        if int(self.n_paths) != self.n_paths or self.n_paths < 2:
            raise ConfigError("experiment.n_paths: must be an integer >= 2")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"experiment.estimator: must be one of {ESTIMATORS}")
        if self.correction not in CORRECTIONS:
            raise ConfigError(f"experiment.correction: must be one of {CORRECTIONS}")
        if abs(self.environment.branching_drift - self.mechanism.drift) > 0:
            raise ConfigError("environment was built with a different branching drift")

    def to_dict(self, include_out: bool = True) -> dict:
        exp = {
            "name": self.name, "z": self.z, "x": self.x, "t_grid": list(self.t_grid),
            "y_grid": list(self.y_grid), "n_paths": int(self.n_paths), "dt": self.dt,
            "seed": int(self.seed), "estimator": self.estimator, "correction": self.correction,
            "bridge": self.bridge,
        }
        if include_out:
            exp["out"] = self.out
        d = {"experiment": exp, "mechanism": self.mechanism.to_dict(),
             "environment": self.environment.to_dict()}
        if self.conditioned:
            d["conditioned"] = dict(self.conditioned)
        if self.pathsim:
            d["pathsim"] = dict(self.pathsim)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"experiment", "mechanism", "environment", "conditioned", "pathsim"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown section(s): {sorted(extra)}")
        for sec in ("mechanism", "environment"):
            if sec not in d:
                raise ConfigError(f"missing section [{sec}]")
        exp = dict(d.get("experiment", {}))
        allowed = {f.name for f in fields(cls)} - {"mechanism", "environment", "conditioned", "pathsim"}
        bad = set(exp) - allowed
        if bad:
            raise ConfigError(f"experiment: unknown field(s) {sorted(bad)}")
        try:
            mech = BranchingMechanism.from_dict(d["mechanism"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"mechanism: {e}") from e
        try:
            env = EnvironmentSpec.from_dict(d["environment"], branching_drift=mech.drift)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"environment: {e}") from e
        try:
            return cls(mech, env, conditioned=dict(d.get("conditioned", {})),
                       pathsim=dict(d.get("pathsim", {})), **exp)
        except TypeError as e:
            raise ConfigError(f"experiment: {e}") from e

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"config parse error: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_toml(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_toml())

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form, output directory excluded."""
        blob = json.dumps(self.to_dict(include_out=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self


def preset(name: str) -> ExperimentConfig:
    """Built-in examples: Brownian, spectrally negative stable and symmetric stable environments."""
    mech = BranchingMechanism(gaussian=1.0)
    if name == "brownian":
        env = EnvironmentSpec.from_kbar_drift(0.0, sigma=1.0)
        return ExperimentConfig(mech, env, name="brownian")
    if name == "spectrally-negative":
        c = 1.0 / math.gamma(-1.5)
        env = EnvironmentSpec.centered(0.0, TruncatedStable(0.0, c, 1.5), regular_downwards=True)
        return ExperimentConfig(mech, env, name="spectrally-negative", correction="none",
                                n_paths=20_000, t_grid=(20.0, 50.0, 100.0, 200.0, 500.0, 1000.0))
    if name == "stable":
        env = EnvironmentSpec.centered(0.0, TruncatedStable(0.5, 0.5, 1.5), regular_downwards=True)
        return ExperimentConfig(mech, env, name="stable", correction="none",
                                n_paths=20_000, t_grid=(20.0, 50.0, 100.0, 200.0, 500.0, 1000.0))
    raise ConfigError(f"unknown preset {name!r}")


PRESETS = ("brownian", "spectrally-negative", "stable")
