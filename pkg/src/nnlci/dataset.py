"""Input/target records pairing two coarse local patches with a fine state.

Record layout (``N_INPUTS = 202``)::

    0..99     coarse states at the 25 stencil points, point-major
    100..199  finer states at the same 25 points
    200       h_coarse
    201       h_finer

Points are ordered as in :func:`nnlci.interpolation.stencil_points` and the
four variables of each point are contiguous.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .euler import read_solution
from .geometry import CaseSpec
from .interpolation import LinearField, interpolate_state, stencil_points
from .mesh import LEVELS, Mesh, read_mesh
from .spatial import build_spatial_index, locate_points
from .workspace import Workspace

LAYOUT_VERSION = 1
N_POINTS = 25
N_VARS = 4
N_INPUTS = 2 * N_POINTS * N_VARS + 2
VARIABLES = ("rho", "rho_u", "rho_v", "rho_E")
H_INPUTS = ("h_coarse", "h_finer")
CENTER_INDEX = 12

_OFFSETS = stencil_points((0.0, 0.0), 1.0)


class NormalizerError(ValueError):
    pass


class CorpusError(RuntimeError):
    pass


@dataclass
class SampleSet:
    """A batch of records. Inputs and targets are raw (not normalised)."""

    inputs: np.ndarray
    targets: np.ndarray
    centers: np.ndarray
    area_weights: np.ndarray
    case_ids: np.ndarray

    def __post_init__(self):
        n = len(self.inputs)
        if self.inputs.shape != (n, N_INPUTS) or self.targets.shape != (n, N_VARS):
            raise ValueError(f"bad record shapes {self.inputs.shape}, {self.targets.shape}")
        self.case_ids = np.asarray(self.case_ids, dtype=object)

    def __len__(self) -> int:
        return len(self.inputs)

    @classmethod
    def empty(cls) -> "SampleSet":
        return cls(np.empty((0, N_INPUTS)), np.empty((0, N_VARS)), np.empty((0, 2)),
                   np.empty(0), np.empty(0, dtype=object))

    @classmethod
    def concatenate(cls, sets) -> "SampleSet":
        sets = list(sets)
        if not sets:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in sets])
                     for f in ("inputs", "targets", "centers", "area_weights", "case_ids")))

    def subset(self, index) -> "SampleSet":
        return SampleSet(self.inputs[index], self.targets[index], self.centers[index],
                         self.area_weights[index], self.case_ids[index])

    def select_case(self, case_id: str) -> "SampleSet":
        return self.subset(self.case_ids == case_id)


@dataclass
class StencilSample:
    inputs: np.ndarray
    target: np.ndarray
    center: np.ndarray
    area_weight: float
    case_id: str


def split_inputs(inputs: np.ndarray):
    """Inverse of the record layout: (coarse (.., 25, 4), finer (.., 25, 4), hc, hf)."""
    inputs = np.asarray(inputs)
    lead = inputs.shape[:-1]
    half = N_POINTS * N_VARS
    coarse = inputs[..., :half].reshape(*lead, N_POINTS, N_VARS)
    finer = inputs[..., half:2 * half].reshape(*lead, N_POINTS, N_VARS)
    return coarse, finer, inputs[..., 2 * half], inputs[..., 2 * half + 1]


def join_inputs(coarse, finer, h_coarse, h_finer) -> np.ndarray:
    coarse, finer = np.asarray(coarse), np.asarray(finer)
    lead = coarse.shape[:-2]
    width = N_POINTS * N_VARS
    return np.concatenate([coarse.reshape(*lead, width), finer.reshape(*lead, width),
                           np.asarray(h_coarse, dtype=float)[..., None],
                           np.asarray(h_finer, dtype=float)[..., None]], axis=-1)


# -- normalisation ---------------------------------------------------------------


@dataclass
class Normalizer:
    """Min-max scaling per state variable and per h input."""

    state_min: np.ndarray
    state_max: np.ndarray
    h_min: np.ndarray
    h_max: np.ndarray

    def __post_init__(self):
        for name in ("state_min", "state_max", "h_min", "h_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        names = VARIABLES + H_INPUTS
        lo = np.concatenate([self.state_min, self.h_min])
        hi = np.concatenate([self.state_max, self.h_max])
        bad = np.flatnonzero(~(hi > lo))
        if len(bad):
            raise NormalizerError(f"variable {names[bad[0]]!r} has max <= min "
                                  f"({hi[bad[0]]!r} vs {lo[bad[0]]!r}); cannot rescale")

    @cached_property
    def _input_scale(self):
        lo = np.concatenate([np.tile(self.state_min, 2 * N_POINTS), self.h_min])
        hi = np.concatenate([np.tile(self.state_max, 2 * N_POINTS), self.h_max])
        return lo, hi - lo

    def normalize_inputs(self, x):
        lo, span = self._input_scale
        return (np.asarray(x, dtype=float) - lo) / span

    def denormalize_inputs(self, x):
        lo, span = self._input_scale
        return np.asarray(x, dtype=float) * span + lo

    def normalize_targets(self, y):
        return (np.asarray(y, dtype=float) - self.state_min) / (self.state_max - self.state_min)

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * (self.state_max - self.state_min) + self.state_min

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("state_min", "state_max", "h_min", "h_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["state_min"], d["state_max"], d["h_min"], d["h_max"])


def fit_normalizer(samples: SampleSet) -> Normalizer:
    """Bounds over every coarse, finer and target value of each variable."""
    if len(samples) == 0:
        raise NormalizerError("cannot fit a normalizer to an empty corpus")
    coarse, finer, hc, hf = split_inputs(samples.inputs)
    states = np.concatenate([coarse.reshape(-1, N_VARS), finer.reshape(-1, N_VARS),
                             samples.targets])
    return Normalizer(states.min(axis=0), states.max(axis=0),
                      [hc.min(), hf.min()], [hc.max(), hf.max()])


# -- per-case fields -------------------------------------------------------------


@dataclass(eq=False)
class CaseFields:
    """Solutions of one case on the three levels with their search trees."""

    case_id: str
    meshes: tuple
    states: tuple
    trees: tuple = field(default=None)

    def __post_init__(self):
        if len(self.meshes) != 3 or len(self.states) != 3:
            raise ValueError("need coarse, finer and finest meshes and states")
        for m, s in zip(self.meshes, self.states):
            if np.shape(s) != (m.n_cells, N_VARS):
                raise ValueError(f"{self.case_id}: {np.shape(s)} states for {m.n_cells} cells")
        if self.trees is None:
            self.trees = tuple(build_spatial_index(m) for m in self.meshes)

    @cached_property
    def fields(self) -> tuple:
        return tuple(LinearField.build(m, t, s)
                     for m, t, s in zip(self.meshes, self.trees, self.states))


def load_case_fields(ws: Workspace, case: CaseSpec) -> CaseFields:
    meshes, states = [], []
    missing = []
    for level in LEVELS:
        mp, sp_ = ws.mesh_path(case, level), ws.solution_path(case, level)
        if not mp.exists() or not sp_.exists():
            missing.append(str(sp_ if mp.exists() else mp))
            continue
        meshes.append(read_mesh(mp))
        states.append(read_solution(sp_)[0])
    if missing:
        raise CorpusError(f"case {case.case_id}: missing {', '.join(missing)}")
    return CaseFields(case.case_id, tuple(meshes), tuple(states))


# -- stencils and samples ----------------------------------------------------------


@dataclass
class StencilBatch:
    centers: np.ndarray
    valid: np.ndarray
    h_coarse: np.ndarray
    h_finer: np.ndarray
    points: np.ndarray
    coarse_cells: np.ndarray
    finer_cells: np.ndarray
    center_coarse: np.ndarray
    center_finer: np.ndarray


def stencil_batch(centers, coarse: Mesh, finer: Mesh, trees) -> StencilBatch:
    """Vectorised stencil construction and validity for many centres.

    Returned per-point arrays cover the valid centres only: ``points`` is
    (n_valid, 25, 2) and ``coarse_cells``/``finer_cells`` hold the cells
    owning each stencil point. ``center_coarse``/``center_finer`` give the
    cells owning every centre (-1 when outside).
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    tc, tf = trees[0], trees[1]
    n = len(centers)
    cc = locate_points(coarse, tc, centers)
    cf = locate_points(finer, tf, centers)
    valid = (cc >= 0) & (cf >= 0)
    hc = np.full(n, np.nan)
    hf = np.full(n, np.nan)
    hc[valid] = coarse.local_size[cc[valid]]
    hf[valid] = finer.local_size[cf[valid]]

    idx = np.flatnonzero(valid)
    pts = centers[idx, None, :] + _OFFSETS[None] * hc[idx, None, None]
    cells_c = locate_points(coarse, tc, pts.reshape(-1, 2)).reshape(-1, N_POINTS)
    ok = (cells_c >= 0).all(axis=1)
    idx, pts, cells_c = idx[ok], pts[ok], cells_c[ok]
    cells_f = locate_points(finer, tf, pts.reshape(-1, 2)).reshape(-1, N_POINTS)
    ok = (cells_f >= 0).all(axis=1)
    idx, pts, cells_c, cells_f = idx[ok], pts[ok], cells_c[ok], cells_f[ok]
    valid = np.zeros(n, dtype=bool)
    valid[idx] = True
    return StencilBatch(centers, valid, hc, hf, pts, cells_c, cells_f, cc, cf)


def stencil_inputs(batch: StencilBatch, coarse_field: LinearField,
                   finer_field: LinearField) -> np.ndarray:
    """(n_valid, 202) raw input records for the valid centres of ``batch``."""
    pts = batch.points.reshape(-1, 2)
    vc = coarse_field.evaluate_in(batch.coarse_cells.ravel(), pts).reshape(-1, N_POINTS, N_VARS)
    vf = finer_field.evaluate_in(batch.finer_cells.ravel(), pts).reshape(-1, N_POINTS, N_VARS)
    return join_inputs(vc, vf, batch.h_coarse[batch.valid], batch.h_finer[batch.valid])


def assemble_samples(centers, data: CaseFields):
    """Records for every valid centre. Returns (SampleSet, validity mask)."""
    coarse, finer, finest = data.meshes
    fc, ff, fz = data.fields
    batch = stencil_batch(centers, coarse, finer, data.trees)
    inputs = stencil_inputs(batch, fc, ff)
    pv = batch.centers[batch.valid]
    cells = locate_points(finest, data.trees[2], pv)
    keep = cells >= 0
    if not keep.all():
        # a centre the finest mesh cannot place is discarded like any other
        batch.valid[np.flatnonzero(batch.valid)[~keep]] = False
        inputs, pv, cells = inputs[keep], pv[keep], cells[keep]
    targets = fz.evaluate_in(cells, pv)
    samples = SampleSet(inputs, targets, pv, finest.areas[cells],
                        np.full(len(pv), data.case_id, dtype=object))
    return samples, batch.valid


def assemble_sample(p, coarse_sol, finer_sol, fine_sol, meshes, trees,
                    case_id: str = "") -> StencilSample | None:
    """Point-by-point reference assembly of one record (None when discarded)."""
    coarse, finer, finest = meshes
    p = np.asarray(p, dtype=float)
    cc = locate_points(coarse, trees[0], p.reshape(1, 2))[0]
    cf = locate_points(finer, trees[1], p.reshape(1, 2))[0]
    cz = locate_points(finest, trees[2], p.reshape(1, 2))[0]
    if cc < 0 or cf < 0 or cz < 0:
        return None
    hc, hf = float(coarse.local_size[cc]), float(finer.local_size[cf])
    pts = stencil_points(p, hc)
    vals = []
    for mesh, tree, sol in ((coarse, trees[0], coarse_sol), (finer, trees[1], finer_sol)):
        if (locate_points(mesh, tree, pts) < 0).any():
            return None
        vals.append(np.array([interpolate_state(mesh, sol, tree, q) for q in pts]))
    target = interpolate_state(finest, fine_sol, trees[2], p)
    return StencilSample(join_inputs(vals[0], vals[1], hc, hf), target, p,
                         float(finest.areas[cz]), case_id)


def training_points(coarse: Mesh) -> np.ndarray:
    return coarse.centroids.copy()


def prediction_points(finest: Mesh) -> np.ndarray:
    return finest.centroids.copy()


def case_records(data: CaseFields, role: str = "training") -> SampleSet:
    """Training records sit at coarse centroids, testing records at finest ones."""
    pts = training_points(data.meshes[0]) if role == "training" else prediction_points(data.meshes[2])
    return assemble_samples(pts, data)[0]


def build_corpus(cases, ws: Workspace, role: str = "training") -> SampleSet:
    """Records for ``cases`` read from the solution files under ``ws``."""
    missing = []
    for case in cases:
        for level in LEVELS:
            for path in (ws.mesh_path(case, level), ws.solution_path(case, level)):
                if not path.exists():
                    missing.append(f"{case.case_id} ({path.name})")
    if missing:
        raise CorpusError("missing solution files for: " + ", ".join(missing))
    return SampleSet.concatenate(case_records(load_case_fields(ws, c), role) for c in cases)


# -- file format -----------------------------------------------------------------


def write_dataset(samples: SampleSet, path, normalizer: Normalizer | None = None) -> None:
    """Text table: JSON header line, then one record per line.

    Columns are case_id, x, y, area_weight, 202 inputs and 4 targets, all raw.
    """
    header = {"layout_version": LAYOUT_VERSION, "n_records": len(samples),
              "n_inputs": N_INPUTS, "n_targets": N_VARS,
              "normalizer": normalizer.to_dict() if normalizer is not None else None}
    lines = ["# " + json.dumps(header, sort_keys=True)]
    nums = np.column_stack([samples.centers, samples.area_weights, samples.inputs,
                            samples.targets])
    for cid, row in zip(samples.case_ids, nums.tolist()):
        lines.append(cid + " " + " ".join(map(repr, row)))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_dataset(path):
    """Returns (SampleSet, Normalizer or None)."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise CorpusError(f"{path}: missing dataset header")
        header = json.loads(first[2:])
        if header.get("layout_version") != LAYOUT_VERSION:
            raise CorpusError(f"{path}: layout version {header.get('layout_version')} "
                              f"is not {LAYOUT_VERSION}")
        ids, rows = [], []
        for line in fh:
            if not line.strip():
                continue
            cid, rest = line.split(" ", 1)
            ids.append(cid)
            rows.append(rest)
    width = 3 + N_INPUTS + N_VARS
    nums = np.array(" ".join(rows).split(), dtype=float) if rows else np.empty(0)
    if nums.size != len(ids) * width or len(ids) != header["n_records"]:
        raise CorpusError(f"{path}: expected {header['n_records']} records of {width} values")
    nums = nums.reshape(len(ids), width)
    samples = SampleSet(nums[:, 3:3 + N_INPUTS], nums[:, 3 + N_INPUTS:], nums[:, :2],
                        nums[:, 2], np.array(ids, dtype=object))
    norm = header.get("normalizer")
    return samples, (Normalizer.from_dict(norm) if norm else None)
