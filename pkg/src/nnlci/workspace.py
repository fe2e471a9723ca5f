"""On-disk layout of pipeline artifacts.

Each stage writes into a fixed place under one root directory so the next
stage can find its inputs from the case list alone.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .geometry import CaseSpec


class MissingArtifactError(FileNotFoundError):
    """An upstream file is absent; ``command`` names the stage that makes it."""

    def __init__(self, path, command: str):
        super().__init__(f"{path} not found; run `nnlci {command}` first")
        self.path = Path(path)
        self.command = command


@dataclass(frozen=True)
class Workspace:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def mesh_path(self, case: CaseSpec, level: str) -> Path:
        return self.root / "meshes" / f"{case.case_id}_{level}.mesh"

    def solution_path(self, case: CaseSpec, level: str) -> Path:
        return self.root / "solutions" / f"{case.case_id}_{level}.sol"

    def dataset_path(self, role: str) -> Path:
        return self.root / "datasets" / f"{role}.dat"

    def model_path(self) -> Path:
        return self.root / "models" / "model.ckpt"

    def report_prefix(self, case: CaseSpec) -> Path:
        return self.root / "reports" / case.case_id

    def require(self, path: Path, command: str) -> Path:
        if not Path(path).exists():
            raise MissingArtifactError(path, command)
        return Path(path)
