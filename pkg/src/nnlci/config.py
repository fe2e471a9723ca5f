"""Versioned JSON configuration for the whole pipeline.

Unknown keys anywhere are rejected so that typos fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .euler import SolverConfig
from .geometry import CaseSpec, Role, shape_matrix, translation_matrix
from .network import DEFAULT_SIZES, TrainConfig

SCHEMA_VERSION = 1
MATRICES = ("translation", "shape")


class ConfigError(ValueError):
    pass


@dataclass
class MeshSettings:
    nx: int = 20
    ny: int = 5
    finest_refinements: int = 2

    def __post_init__(self):
        if self.nx < 2 or self.ny < 1 or self.finest_refinements < 1:
            raise ConfigError("mesh needs nx >= 2, ny >= 1 and finest_refinements >= 1")


@dataclass
class CaseSelection:
    """Named case matrices plus explicit extra cases, per role."""

    training: list = field(default_factory=lambda: ["translation"])
    testing: list = field(default_factory=lambda: ["translation"])
    extra_training: list = field(default_factory=list)
    extra_testing: list = field(default_factory=list)

    def __post_init__(self):
        for name in self.training + self.testing:
            if name not in MATRICES:
                raise ConfigError(f"unknown case matrix {name!r}; choose from {MATRICES}")

    def cases(self, role: str) -> list:
        role = Role(role)
        names = self.training if role is Role.TRAINING else self.testing
        extra = self.extra_training if role is Role.TRAINING else self.extra_testing
        out = []
        for name in names:
            out += translation_matrix(role) if name == "translation" else shape_matrix(role)
        out += [CaseSpec.from_dict(d) for d in extra]
        return out


@dataclass
class PipelineConfig:
    schema_version: int = SCHEMA_VERSION
    workdir: str = "nnlci-run"
    seed: int = 0
    cases: CaseSelection = field(default_factory=CaseSelection)
    mesh: MeshSettings = field(default_factory=MeshSettings)
    solver: SolverConfig = field(default_factory=SolverConfig)
    network: list = field(default_factory=lambda: list(DEFAULT_SIZES))
    training: TrainConfig = field(default_factory=TrainConfig)

    def all_cases(self) -> list:
        seen, out = set(), []
        for c in self.cases.cases("training") + self.cases.cases("testing"):
            if c.case_id not in seen:
                seen.add(c.case_id)
                out.append(c)
        return out

    def find_case(self, case_id: str) -> CaseSpec:
        for c in self.all_cases():
            if c.case_id == case_id:
                return c
        raise ConfigError(f"case {case_id!r} is not in the configured case matrices")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        kwargs[key] = _build(sub, value, f"{where}.{key}") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_NESTED = {
    (PipelineConfig, "cases"): CaseSelection,
    (PipelineConfig, "mesh"): MeshSettings,
    (PipelineConfig, "solver"): SolverConfig,
    (PipelineConfig, "training"): TrainConfig,
}


def config_from_dict(data: dict) -> PipelineConfig:
    version = data.get("schema_version", SCHEMA_VERSION) if isinstance(data, dict) else None
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})")
    cfg = _build(PipelineConfig, data, "config")
    sizes = cfg.network
    if len(sizes) < 2 or sizes[0] != DEFAULT_SIZES[0] or sizes[-1] != DEFAULT_SIZES[-1]:
        raise ConfigError(f"network sizes must start at {DEFAULT_SIZES[0]} and end at {DEFAULT_SIZES[-1]}")
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_case(path) -> CaseSpec:
    try:
        return CaseSpec.from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a valid case file ({exc})") from exc
