"""Second-order cell-centred finite volumes for the 2D Euler equations.

States are conserved 4-vectors ``[rho, rho*u, rho*v, rho*E]`` stored as the
last axis of an array. Free-stream values are non-dimensional with
``rho = 1`` and sound speed ``a = 1`` (so ``p = 1/gamma`` and ``u = M``).
"""
from __future__ import annotations

import json
import logging
import math
from fractions import Fraction
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .geometry import CaseSpec
from .interpolation import GradientOperator, minmod3
from .mesh import Mesh, INFLOW, OUTFLOW, WALL_LOWER, WALL_UPPER, TAGS

log = logging.getLogger(__name__)

GAMMA = 1.4
RESIDUAL_FLOOR = 1e-12  # absolute density residual treated as round-off


class StateError(ArithmeticError):
    """Non-physical state (non-positive density or pressure, or NaN)."""

    def __init__(self, msg, cell=None, step=None):
        super().__init__(msg)
        self.cell = cell
        self.step = step


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PrimitiveState:
    rho: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    a: np.ndarray
    M: np.ndarray
    H: np.ndarray


def pressure(U, gamma: float = GAMMA):
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    return (gamma - 1.0) * (U[..., 3] - 0.5 * (U[..., 1] ** 2 + U[..., 2] ** 2) / rho)


def primitive_from_conserved(U, gamma: float = GAMMA, check: bool = True) -> PrimitiveState:
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    p = pressure(U, gamma)
    if check:
        bad = ~((rho > 0) & (p > 0))
        if np.any(bad):
            cell = int(np.flatnonzero(bad.ravel())[0])
            raise StateError(f"invalid state at cell {cell}: rho={rho.ravel()[cell]:.4g}, "
                             f"p={p.ravel()[cell]:.4g}", cell=cell)
    u = U[..., 1] / rho
    v = U[..., 2] / rho
    a = np.sqrt(gamma * p / rho)
    H = U[..., 3] / rho + p / rho
    return PrimitiveState(rho, u, v, p, a, np.hypot(u, v) / a, H)


def conserved_from_primitive(rho, u, v, p, gamma: float = GAMMA) -> np.ndarray:
    rho, u, v, p = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (rho, u, v, p)))
    return np.stack([rho, rho * u, rho * v, p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v)], axis=-1)


def total_temperature_ratio(mach: float, gamma: float = GAMMA) -> float:
    """T_t / T for isentropic stagnation.

    Evaluated in rational arithmetic on the decimal values of the inputs,
    so gamma = 1.4, M = 2 gives exactly 1.8.
    """
    g, m = Fraction(repr(float(gamma))), Fraction(repr(float(mach)))
    return float(1 + (g - 1) * m * m / 2)


def total_pressure_ratio(mach: float, gamma: float = GAMMA) -> float:
    """p_t / p for isentropic stagnation."""
    return total_temperature_ratio(mach, gamma) ** (gamma / (gamma - 1.0))


def inflow_state(mach: float, gamma: float = GAMMA) -> np.ndarray:
    """Supersonic inflow state, +x aligned, from total conditions at ``mach``.

    The reference static state is rho = 1, p = 1/gamma (unit sound speed);
    total temperature and pressure follow from the Mach number and the
    static state is recovered from them.
    """
    p_ref, T_ref = 1.0 / gamma, 1.0 / gamma  # T = p / rho with unit gas constant
    Tt = T_ref * total_temperature_ratio(mach, gamma)
    pt = p_ref * total_pressure_ratio(mach, gamma)
    T = Tt / total_temperature_ratio(mach, gamma)
    p = pt / total_pressure_ratio(mach, gamma)
    rho = p / T
    a = math.sqrt(gamma * p / rho)
    return conserved_from_primitive(rho, mach * a, 0.0, p, gamma)


def normal_flux(U, n, gamma: float = GAMMA) -> np.ndarray:
    """Euler flux projected on ``n`` (shape (..., 2))."""
    U = np.asarray(U, dtype=float)
    n = np.asarray(n, dtype=float)
    rho = U[..., 0]
    u = U[..., 1] / rho
    v = U[..., 2] / rho
    p = pressure(U, gamma)
    vn = u * n[..., 0] + v * n[..., 1]
    return np.stack([
        rho * vn,
        U[..., 1] * vn + p * n[..., 0],
        U[..., 2] * vn + p * n[..., 1],
        (U[..., 3] + p) * vn,
    ], axis=-1)


def max_wave_speed(U, n, gamma: float = GAMMA) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    vn = (U[..., 1] * n[..., 0] + U[..., 2] * n[..., 1]) / rho
    a = np.sqrt(gamma * pressure(U, gamma) / rho)
    return np.abs(vn) + a


def rusanov_flux(uL, uR, n, gamma: float = GAMMA) -> np.ndarray:
    """Local Lax-Friedrichs flux through a face with unit normal ``n`` (left to right)."""
    uL = np.asarray(uL, dtype=float)
    uR = np.asarray(uR, dtype=float)
    n = np.asarray(n, dtype=float)
    s = np.maximum(max_wave_speed(uL, n, gamma), max_wave_speed(uR, n, gamma))
    return 0.5 * (normal_flux(uL, n, gamma) + normal_flux(uR, n, gamma)) - 0.5 * s[..., None] * (uR - uL)


def wall_ghost(U, n) -> np.ndarray:
    """Mirror state: normal velocity reversed, density and pressure kept."""
    U = np.array(U, dtype=float)
    mn = U[..., 1] * n[..., 0] + U[..., 2] * n[..., 1]
    U[..., 1] -= 2.0 * mn * n[..., 0]
    U[..., 2] -= 2.0 * mn * n[..., 1]
    return U


def apply_boundary(interior, tag, normal, freestream) -> np.ndarray:
    """Ghost state across a boundary face of the given tag."""
    tag = TAGS.index(tag) if isinstance(tag, str) else tag
    interior = np.asarray(interior, dtype=float)
    if tag in (WALL_LOWER, WALL_UPPER):
        return wall_ghost(interior, np.asarray(normal, dtype=float))
    if tag == INFLOW:
        return np.broadcast_to(freestream, interior.shape).copy()
    if tag == OUTFLOW:
        return interior.copy()
    raise ConfigError(f"unknown boundary tag {tag!r}")


def _primitive_array(U, gamma):
    rho = U[..., 0]
    u, v = U[..., 1] / rho, U[..., 2] / rho
    p = (gamma - 1.0) * (U[..., 3] - 0.5 * rho * (u * u + v * v))
    return np.stack([rho, u, v, p], axis=-1)


def _conserved_array(W, gamma):
    rho, u, v, p = W[..., 0], W[..., 1], W[..., 2], W[..., 3]
    return np.stack([rho, rho * u, rho * v, p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v)],
                    axis=-1)


@dataclass
class SolverConfig:
    gamma: float = GAMMA
    cfl: float = 0.3
    residual_tol: float = 1e-8
    max_steps: int = 200_000
    time_stepping: str = "local"
    backend: str = "numba"
    log_every: int = 0

    def __post_init__(self):
        if not self.cfl > 0:
            raise ConfigError(f"cfl must be positive, not {self.cfl!r}")
        if not self.residual_tol > 0:
            raise ConfigError(f"residual_tol must be positive, not {self.residual_tol!r}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1, not {self.max_steps!r}")
        if self.backend not in ("numba", "numpy"):
            raise ConfigError(f"backend must be 'numba' or 'numpy', not {self.backend!r}")
        if self.time_stepping not in ("local", "global"):
            raise ConfigError(f"time_stepping must be 'local' or 'global', not {self.time_stepping!r}")


@dataclass
class SolveResult:
    states: np.ndarray
    residual_history: list = field(default_factory=list)
    converged: bool = False
    steps: int = 0


class EulerSolver:
    """MUSCL reconstruction + Rusanov flux + two-stage TVD Runge-Kutta."""

    def __init__(self, mesh: Mesh, mach: float, config: SolverConfig | None = None):
        self.mesh = mesh
        self.config = config or SolverConfig()
        self.gamma = self.config.gamma
        self.freestream = inflow_state(mach, self.gamma)
        self.grad = GradientOperator(mesh, ghosts=True)

        normal, length, mid = mesh.face_geometry
        self.normal, self.length = normal, length
        self.left, self.right = mesh.face_left, mesh.face_right
        self.interior = self.right >= 0
        tags = mesh.face_tags
        self.wall = (tags == WALL_LOWER) | (tags == WALL_UPPER)
        self.inflow = tags == INFLOW
        self.outflow = tags == OUTFLOW

        # offsets from each cell centroid to its three face midpoints
        self.face_offsets = mid[mesh.cell_faces] - mesh.centroids[:, None, :]
        # local slot of each face in its left / right cell
        cf = mesh.cell_faces
        slot = np.empty((len(length), 2), dtype=np.int64)
        slot[:, 1] = -1
        for k in range(3):
            f = cf[:, k]
            is_left = self.left[f] == np.arange(mesh.n_cells)
            slot[f[is_left], 0] = k
            slot[f[~is_left], 1] = k
        self.slot = slot
        nc = mesh.n_cells
        self.gather_left = slot[:, 0] * nc + self.left
        self.gather_right = slot[self.interior, 1] * nc + self.right[self.interior]
        off = np.transpose(self.face_offsets, (1, 0, 2))
        self.off_x = np.ascontiguousarray(off[..., 0, None])
        self.off_y = np.ascontiguousarray(off[..., 1, None])

        nf, nc = len(length), mesh.n_cells
        rows = np.concatenate([self.left, self.right[self.interior]])
        cols = np.concatenate([np.arange(nf), np.flatnonzero(self.interior)])
        vals = np.concatenate([-1.0 / mesh.areas[self.left],
                               1.0 / mesh.areas[self.right[self.interior]]])
        self.scatter = sp.csr_matrix((vals, (rows, cols)), shape=(nc, nf))
        self.h = mesh.local_size

        kind = np.full(nf, -1, dtype=np.int64)
        kind[self.wall] = _kernels.WALL
        kind[self.inflow] = _kernels.INFLOW
        kind[self.outflow] = _kernels.OUTFLOW
        self.face_kind = kind
        gf = self.grad.ghost_faces
        self._kernel_args = (
            self.grad.nbj, self.grad.nbk, self.grad.weights,
            self.left[gf], kind[gf], np.ascontiguousarray(normal[gf]),
            np.ascontiguousarray(self.face_offsets), self.left, self.right, kind,
            np.ascontiguousarray(self.slot), np.ascontiguousarray(normal), length,
            mesh.areas, self.freestream, float(self.gamma))

    # -- spatial operator -------------------------------------------------

    def reconstruct(self, U: np.ndarray) -> np.ndarray:
        """(3, nc, 4) limited conserved values at each cell's three face midpoints.

        Gradients are limited in primitive variables (rho, u, v, p). Cells
        whose reconstruction is non-positive anywhere fall back to their
        cell average.
        """
        W = _primitive_array(U, self.gamma)
        Wg = _primitive_array(self.ghost_states(U, self.grad.ghost_faces), self.gamma)
        c = self.grad.candidates(W, Wg)
        gx, gy = minmod3(c[:, 0]), minmod3(c[:, 1])
        fw = W[None] + self.off_x * gx[None] + self.off_y * gy[None]
        bad = ~((fw[..., 0] > 0) & (fw[..., 3] > 0)).all(axis=0)
        fv = _conserved_array(fw, self.gamma)
        if bad.any():
            fv[:, bad] = U[bad]
        return fv

    def ghost_states(self, U: np.ndarray, faces: np.ndarray) -> np.ndarray:
        """Boundary ghost values built from the owning cells' states."""
        inner = U[self.left[faces]]
        out = inner.copy()
        wall = self.wall[faces]
        out[wall] = wall_ghost(inner[wall], self.normal[faces[wall]])
        out[self.inflow[faces]] = self.freestream
        return out

    def face_states(self, U: np.ndarray):
        fv = self.reconstruct(U).reshape(-1, U.shape[1])
        uL = fv[self.gather_left]
        uR = np.empty_like(uL)
        uR[self.interior] = fv[self.gather_right]
        uR[self.wall] = wall_ghost(uL[self.wall], self.normal[self.wall])
        uR[self.inflow] = self.freestream
        uR[self.outflow] = uL[self.outflow]
        return uL, uR

    def fluxes(self, U: np.ndarray) -> np.ndarray:
        """Rusanov flux times face length, (nf, 4)."""
        uL, uR = self.face_states(U)
        return rusanov_flux(uL, uR, self.normal, self.gamma) * self.length[:, None]

    def residual(self, U: np.ndarray) -> np.ndarray:
        """du/dt per cell."""
        return self.residual_and_boundary_flux(U)[0]

    def residual_and_boundary_flux(self, U: np.ndarray):
        """Residual and the net outward flux summed over boundary faces."""
        if self.config.backend == "numba":
            U = np.ascontiguousarray(U, dtype=float)
            R = np.empty_like(U)
            B = np.empty(4)
            _kernels.residual_kernel(U, *self._kernel_args, R, B)
            return R, B
        F = self.fluxes(U)
        return self.scatter @ F, F[~self.interior].sum(axis=0)

    # -- time marching ----------------------------------------------------

    def time_steps(self, U: np.ndarray) -> np.ndarray:
        rho = U[:, 0]
        speed = np.hypot(U[:, 1], U[:, 2]) / rho
        a = np.sqrt(np.maximum(self.gamma * pressure(U, self.gamma) / rho, 0.0))
        dt = self.config.cfl * self.h / (speed + a)
        if self.config.time_stepping == "global":
            dt = np.full_like(dt, dt.min())
        return dt

    def check(self, U: np.ndarray, step: int | None = None) -> None:
        rho = U[:, 0]
        p = pressure(U, self.gamma)
        bad = ~((rho > 0) & (p > 0) & np.isfinite(U).all(axis=1))
        if bad.any():
            cell = int(np.argmax(bad))
            raise StateError(f"non-physical state in cell {cell} at step {step}: "
                             f"rho={rho[cell]:.4g}, p={p[cell]:.4g}", cell=cell, step=step)

    def step(self, U: np.ndarray, dt: np.ndarray | None = None, step: int | None = None):
        """One RK2 step. Returns (new states, first-stage residual, boundary flux integral * dt).

        The last value is ``0.5 * dt * (B(U^n) + B(U^1))`` when ``dt`` is
        uniform, i.e. the net amount of each conserved quantity that left
        through the boundary during the step.
        """
        if dt is None:
            dt = self.time_steps(U)
        R0, B0 = self.residual_and_boundary_flux(U)
        U1 = U + dt[:, None] * R0
        self.check(U1, step)
        R1, B1 = self.residual_and_boundary_flux(U1)
        U2 = 0.5 * U + 0.5 * (U1 + dt[:, None] * R1)
        self.check(U2, step)
        return U2, R0, 0.5 * dt.min() * (B0 + B1)

    def initial_state(self) -> np.ndarray:
        return np.tile(self.freestream, (self.mesh.n_cells, 1))

    def solve(self, U0: np.ndarray | None = None) -> SolveResult:
        cfg = self.config
        U = self.initial_state() if U0 is None else np.array(U0, dtype=float)
        history = []
        r0 = None
        converged = False
        n = 0
        for n in range(1, cfg.max_steps + 1):
            U, R, _ = self.step(U, step=n)
            r = float(np.sqrt(np.mean(R[:, 0] ** 2)))
            history.append(r)
            if r0 is None:
                r0 = r
            # the floor catches fields that start at a discrete steady state
            if r <= cfg.residual_tol * r0 or r <= RESIDUAL_FLOOR:
                converged = True
                break
            if cfg.log_every and n % cfg.log_every == 0:
                log.info("step %d  density residual %.3e (%.3e relative)", n, r, r / r0)
        if not converged:
            log.warning("no convergence after %d steps (relative residual %.3e)",
                        n, history[-1] / r0 if r0 else float("nan"))
        return SolveResult(U, history, converged, n)


def solve_steady(mesh: Mesh, case: CaseSpec, config: SolverConfig | None = None) -> SolveResult:
    return EulerSolver(mesh, case.mach, config).solve()


SOLUTION_VERSION = 1


def write_solution(result: SolveResult, path, mesh_path: str = "", case: CaseSpec | None = None,
                   config: SolverConfig | None = None) -> None:
    """Plain text: '#'-prefixed JSON header lines, then one 'rho rhou rhov rhoE' row per cell."""
    header = {
        "version": SOLUTION_VERSION,
        "mesh": str(mesh_path),
        "n_cells": int(len(result.states)),
        "converged": bool(result.converged),
        "steps": int(result.steps),
        "final_residual": result.residual_history[-1] if result.residual_history else None,
        "case": case.to_dict() if case is not None else None,
        "solver": asdict(config) if config is not None else None,
    }
    lines = ["# " + json.dumps(header, sort_keys=True)]
    lines += [" ".join(repr(x) for x in row) for row in result.states.tolist()]
    tmp = Path(str(path) + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def read_solution(path):
    """Returns (states, header dict)."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing solution header")
        header = json.loads(first[2:])
        states = np.loadtxt(fh, ndmin=2)
    if states.shape != (header["n_cells"], 4):
        raise ValueError(f"{path}: expected {header['n_cells']} rows of 4 values, got {states.shape}")
    return states, header
