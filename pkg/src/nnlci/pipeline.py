"""Stage functions shared by the command line and the test-suite."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .config import PipelineConfig
from .dataset import Normalizer, SampleSet, build_corpus, fit_normalizer, load_case_fields
from .euler import solve_steady, write_solution
from .evaluation import (predict_field, report_cell_data, write_metrics, write_report_csv,
                         write_vtk)
from .geometry import CaseSpec
from .mesh import LEVELS, build_levels, write_mesh
from .network import Batch, MlpModel, TrainConfig, load_checkpoint, train
from .workspace import Workspace

log = logging.getLogger(__name__)


@dataclass
class SolveSummary:
    case_id: str
    level: str
    n_cells: int
    converged: bool
    steps: int
    final_residual: float


def mesh_case(case: CaseSpec, ws: Workspace, cfg: PipelineConfig):
    meshes = build_levels(case, cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.finest_refinements)
    for level, mesh in zip(LEVELS, meshes):
        path = ws.mesh_path(case, level)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_mesh(mesh, path)
    return meshes


def solve_case(case: CaseSpec, ws: Workspace, cfg: PipelineConfig) -> list:
    """Mesh and solve one case on all three levels, writing every file."""
    meshes = mesh_case(case, ws, cfg)
    out = []
    for level, mesh in zip(LEVELS, meshes):
        result = solve_steady(mesh, case, cfg.solver)
        path = ws.solution_path(case, level)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_solution(result, path, ws.mesh_path(case, level), case, cfg.solver)
        rel = result.residual_history[-1] / result.residual_history[0]
        out.append(SolveSummary(case.case_id, level, mesh.n_cells, result.converged,
                                result.steps, rel))
        log.info("%s %s: %d steps, converged=%s, relative residual %.2e",
                 case.case_id, level, result.steps, result.converged, rel)
    return out


def map_cases(fn, cases, jobs: int = 1, *extra):
    """``fn(case, *extra)`` over cases, in a process pool when ``jobs > 1``.

    Results come back in case order regardless of completion order.
    """
    if jobs <= 1 or len(cases) <= 1:
        return [fn(c, *extra) for c in cases]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, cases, *([e] * len(cases) for e in extra)))


def solve_cases(cases, ws: Workspace, cfg: PipelineConfig, jobs: int = 1) -> list:
    return [s for group in map_cases(solve_case, list(cases), jobs, ws, cfg) for s in group]


def train_network(samples: SampleSet, sizes, config: TrainConfig,
                  normalizer: Normalizer | None = None):
    """Fit the normalizer (unless given), initialise from the seed, train.

    Returns (model, loss history).
    """
    norm = normalizer or fit_normalizer(samples)
    model = MlpModel.initialize(tuple(sizes), seed=config.seed)
    return train(model, Batch.from_samples(samples, norm), config, normalizer=norm)


def corpus(cfg: PipelineConfig, ws: Workspace, role: str) -> SampleSet:
    return build_corpus(cfg.cases.cases(role), ws, role)


def evaluate_case(case: CaseSpec, ws: Workspace, model_path, prefix=None) -> dict:
    """Predict one case and write its CSV report, JSON metrics and VTK field."""
    for level in LEVELS:
        ws.require(ws.solution_path(case, level), "solve")
    model = load_checkpoint(ws.require(model_path, "train"))
    data = load_case_fields(ws, case)
    report = predict_field(model, data)
    prefix = prefix or ws.report_prefix(case)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_report_csv(report, f"{prefix}.csv")
    finest = data.meshes[2]
    write_vtk(finest, f"{prefix}.vtk", report_cell_data(report, finest.n_cells), title=case.case_id)
    return write_metrics(report, f"{prefix}.json")
