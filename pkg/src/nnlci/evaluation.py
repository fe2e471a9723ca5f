"""Full-field prediction, area-weighted error norms and exports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .dataset import CaseFields, VARIABLES, prediction_points, stencil_batch, stencil_inputs
from .euler import GAMMA
from .interpolation import limited_gradients
from .mesh import Mesh
from .network import MlpModel

REPORT_COLUMNS = (["x", "y", "area"] + [f"truth_{v}" for v in VARIABLES]
                  + [f"pred_{v}" for v in VARIABLES] + [f"baseline_{v}" for v in VARIABLES]
                  + ["pressure", "mach"])


class MetricError(ArithmeticError):
    pass


class ReportError(ValueError):
    pass


# -- derived quantities ------------------------------------------------------------


def pressure(states, gamma: float = GAMMA) -> np.ndarray:
    u = np.asarray(states, dtype=float)
    return (gamma - 1.0) * (u[..., 3] - 0.5 * (u[..., 1] ** 2 + u[..., 2] ** 2) / u[..., 0])


def mach_number(states, gamma: float = GAMMA) -> np.ndarray:
    u = np.asarray(states, dtype=float)
    speed = np.hypot(u[..., 1], u[..., 2]) / u[..., 0]
    # non-physical predicted states give NaN rather than a warning
    with np.errstate(invalid="ignore"):
        return speed / np.sqrt(gamma * pressure(u, gamma) / u[..., 0])


def derived_fields(states, mesh: Mesh, gamma: float = GAMMA) -> dict:
    """Per-cell pressure, Mach number and limited density-gradient magnitude."""
    states = np.asarray(states, dtype=float)
    g = limited_gradients(mesh, states[:, :1])[:, :, 0]
    return {"pressure": pressure(states, gamma), "mach": mach_number(states, gamma),
            "density_gradient": np.hypot(g[:, 0], g[:, 1])}


# -- metrics -------------------------------------------------------------------------


def weighted_relative_l1(pred, truth, areas) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    a = np.asarray(areas, dtype=float)
    num = pred - truth
    if num.ndim > 1:
        num, den = np.abs(num).sum(axis=-1), np.abs(truth).sum(axis=-1)
    else:
        num, den = np.abs(num), np.abs(truth)
    d = float(a @ den)
    if not d > 0:
        raise MetricError("relative L1 denominator is zero")
    return float(a @ num) / d


def weighted_rrmse(pred, truth, areas) -> float:
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    a = np.asarray(areas, dtype=float)
    num, den = (pred - truth) ** 2, truth ** 2
    if num.ndim > 1:
        num, den = num.sum(axis=-1), den.sum(axis=-1)
    d = float(a @ den)
    if not d > 0:
        raise MetricError("RRMSE denominator is zero")
    return math.sqrt(float(a @ num) / d)


@dataclass
class FieldReport:
    """Prediction, truth and baseline at the valid finest-grid centroids."""

    case_id: str
    points: np.ndarray
    areas: np.ndarray
    predicted: np.ndarray
    truth: np.ndarray
    baseline: np.ndarray
    cells: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    n_excluded: int = 0

    def __post_init__(self):
        n = len(self.points)
        for name in ("areas", "predicted", "truth", "baseline"):
            if len(getattr(self, name)) != n:
                raise ReportError(f"{name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def derived(self) -> dict:
        return {"pressure": pressure(self.predicted), "mach": mach_number(self.predicted)}

    def metrics(self) -> dict:
        per_var = {v: {"relative_l1": weighted_relative_l1(self.predicted[:, k], self.truth[:, k], self.areas),
                       "baseline_relative_l1": weighted_relative_l1(self.baseline[:, k], self.truth[:, k], self.areas)}
                   for k, v in enumerate(VARIABLES)}
        return {"case_id": self.case_id, "n_points": len(self), "n_excluded": self.n_excluded,
                "relative_l1": relative_l1(self), "rrmse": rrmse(self),
                "baseline_relative_l1": baseline_error(self),
                "baseline_rrmse": weighted_rrmse(self.baseline, self.truth, self.areas),
                "mach_relative_l1": relative_l1(self, mode="mach"),
                "mach_baseline_relative_l1": baseline_error(self, mode="mach"),
                "per_variable": per_var}


def _check(report: FieldReport):
    if len(report) == 0:
        raise MetricError(f"report for {report.case_id} has no points")


def relative_l1(report: FieldReport, mode: str = "joint") -> float:
    """Area-weighted relative L1 of the prediction. ``mode``: joint or mach."""
    _check(report)
    if mode == "mach":
        return weighted_relative_l1(mach_number(report.predicted), mach_number(report.truth),
                                    report.areas)
    return weighted_relative_l1(report.predicted, report.truth, report.areas)


def rrmse(report: FieldReport) -> float:
    _check(report)
    return weighted_rrmse(report.predicted, report.truth, report.areas)


def baseline_error(report: FieldReport, mode: str = "joint") -> float:
    """Relative L1 of the finer-mesh interpolant against the truth."""
    _check(report)
    if mode == "mach":
        return weighted_relative_l1(mach_number(report.baseline), mach_number(report.truth),
                                    report.areas)
    return weighted_relative_l1(report.baseline, report.truth, report.areas)


# -- prediction -------------------------------------------------------------------


def predict_points(model: MlpModel, data: CaseFields, points):
    """NNLCI states at arbitrary points. Returns (states of valid points, mask)."""
    coarse, finer, _ = data.meshes
    fc, ff, _ = data.fields
    batch = stencil_batch(points, coarse, finer, data.trees)
    return model.predict(stencil_inputs(batch, fc, ff)), batch.valid


def predict_field(model: MlpModel, data: CaseFields) -> FieldReport:
    """Predict at every finest centroid whose stencil is valid."""
    coarse, finer, finest = data.meshes
    fc, ff, _ = data.fields
    pts = prediction_points(finest)
    batch = stencil_batch(pts, coarse, finer, data.trees)
    pred = model.predict(stencil_inputs(batch, fc, ff))
    cells = np.flatnonzero(batch.valid)
    baseline = ff.evaluate_in(batch.center_finer[cells], pts[cells])
    truth = np.asarray(data.states[2], dtype=float)[cells]
    return FieldReport(data.case_id, pts[cells], finest.areas[cells], pred, truth, baseline,
                       cells, int(len(pts) - len(cells)))


def centerline_profile(data: CaseFields, y0: float = 0.4, model: MlpModel | None = None,
                       n: int | None = None):
    """Ordered (x, Mach) samples along y = y0.

    Without a model the finest solution is interpolated; with one, the
    NNLCI prediction at each sample is used and samples without a valid
    stencil are dropped. The default spacing is the finest mesh's median
    local cell size.
    """
    finest = data.meshes[2]
    x0, y_lo, x1, y_hi = finest.bbox
    if not y_lo < y0 < y_hi:
        raise ValueError(f"y0={y0} lies outside the channel")
    if n is None:
        n = int(math.ceil((x1 - x0) / float(np.median(finest.local_size)))) + 1
    xs = np.linspace(x0, x1, n)
    pts = np.column_stack([xs, np.full(n, y0)])
    if model is None:
        from .spatial import locate_points
        cells = locate_points(finest, data.trees[2], pts)
        keep = cells >= 0
        states = data.fields[2].evaluate_in(cells[keep], pts[keep])
    else:
        states, keep = predict_points(model, data, pts)
    return xs[keep], mach_number(states)


# -- exports ------------------------------------------------------------------------


def write_report_csv(report: FieldReport, path) -> None:
    d = report.derived
    rows = np.column_stack([report.points, report.areas, report.truth, report.predicted,
                            report.baseline, d["pressure"], d["mach"]])
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        w.writerows([[repr(v) for v in row] for row in rows.tolist()])
    tmp.replace(path)


def read_report_csv(path, case_id: str | None = None) -> FieldReport:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r, None)
        if header != REPORT_COLUMNS:
            raise ReportError(f"{path}: unexpected columns")
        rows = np.array([[float(v) for v in row] for row in r]).reshape(-1, len(REPORT_COLUMNS))
    return FieldReport(case_id or Path(path).stem, rows[:, :2], rows[:, 2], rows[:, 7:11],
                       rows[:, 3:7], rows[:, 11:15])


def write_metrics(report: FieldReport, path) -> dict:
    m = report.metrics()
    Path(path).write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")
    return m


def write_vtk(mesh: Mesh, path, cell_data: dict, title: str = "nnlci") -> None:
    """Legacy ASCII VTK unstructured grid with per-cell scalars or vectors.

    ``cell_data`` maps names to arrays of shape (n_cells,) or (n_cells, k);
    k-column arrays are written as k scalar fields ``name_0..``. NaN marks
    cells without a value.
    """
    nc = mesh.n_cells
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {nc} {4 * nc}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    lines.append(f"CELL_TYPES {nc}")
    lines += ["5"] * nc
    lines.append(f"CELL_DATA {nc}")
    for name, values in cell_data.items():
        values = np.asarray(values, dtype=float)
        cols = values.reshape(nc, -1)
        names = [name] if values.ndim == 1 else [f"{name}_{k}" for k in range(cols.shape[1])]
        for k, nm in enumerate(names):
            lines += [f"SCALARS {nm} double 1", "LOOKUP_TABLE default"]
            lines += [repr(v) for v in cols[:, k].tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def report_cell_data(report: FieldReport, n_cells: int) -> dict:
    """Truth/prediction/baseline arrays on the finest mesh, NaN where excluded."""
    out = {}
    for name in ("truth", "predicted", "baseline"):
        arr = np.full((n_cells, 4), np.nan)
        arr[report.cells] = getattr(report, name)
        for k, v in enumerate(VARIABLES):
            out[f"{name}_{v}"] = arr[:, k]
    return out


def summary_table(reports) -> list:
    """Rows (case, relative L1, RRMSE, baseline relative L1) plus a Total row.

    The Total row pools every point of every case into one norm.
    """
    reports = list(reports)
    rows = [(r.case_id, relative_l1(r), rrmse(r), baseline_error(r)) for r in reports]
    if reports:
        pooled = FieldReport("Total", *(np.concatenate([getattr(r, f) for r in reports])
                                        for f in ("points", "areas", "predicted", "truth",
                                                  "baseline")))
        rows.append(("Total", relative_l1(pooled), rrmse(pooled), baseline_error(pooled)))
    return rows


def format_table(rows) -> str:
    head = f"{'case':<16} {'relative L1':>12} {'RRMSE':>12} {'low-fi L1':>12}"
    lines = [head, "-" * len(head)]
    for case, l1, rr, base in rows:
        lines.append(f"{case:<16} {100 * l1:>11.3f}% {100 * rr:>11.3f}% {100 * base:>11.3f}%")
    return "\n".join(lines)
