"""Minmod-limited linear reconstruction of cell data and 5x5 stencils."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .spatial import CentroidTree, locate_points

# neighbor-slot pairs giving the candidate triples (E0,E1,E2), (E0,E2,E3), (E0,E1,E3)
TRIPLES = ((0, 1), (1, 2), (0, 2))
SINGULAR_TOL = 1e-14
STENCIL_OFFSETS = np.arange(-2, 3)


class LocationError(LookupError):
    """A point required for interpolation lies outside the mesh."""


def minmod(values) -> float:
    """Smallest-magnitude value when all share a strict sign, else zero."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("minmod needs at least one value")
    if np.all(v > 0):
        return float(v.min())
    if np.all(v < 0):
        return float(v.max())
    return 0.0


def minmod_reduce(candidates: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Minmod along axis 1 over entries where ``valid`` holds.

    ``candidates`` has shape (n, k, ...) and ``valid`` shape (n, k). Rows
    without any valid entry reduce to zero.
    """
    mask = valid.reshape(valid.shape + (1,) * (candidates.ndim - 2))
    pos = np.where(mask, candidates, np.inf)
    neg = np.where(mask, candidates, -np.inf)
    any_valid = mask.any(axis=1)
    all_pos = np.all(~mask | (candidates > 0), axis=1) & any_valid
    all_neg = np.all(~mask | (candidates < 0), axis=1) & any_valid
    out = np.zeros(pos.shape[:1] + pos.shape[2:])
    out = np.where(all_pos, pos.min(axis=1), out)
    out = np.where(all_neg, neg.max(axis=1), out)
    return out


def candidate_gradients(own_c: np.ndarray, own_v: np.ndarray, nb_c: np.ndarray,
                        nb_v: np.ndarray, present: np.ndarray):
    """Candidate gradients of each cell from its three neighbor pairs.

    Shapes: ``own_c`` (n, 2), ``own_v`` (n, m), ``nb_c`` (n, 3, 2),
    ``nb_v`` (n, 3, m), ``present`` (n, 3). A pair is skipped when either
    neighbor is absent or the centroids are collinear. Returns
    ``(grads, valid)`` with shapes (n, 3, 2, m) and (n, 3).
    """
    n, m = own_v.shape
    dx = nb_c - own_c[:, None, :]
    du = nb_v - own_v[:, None, :]
    grads = np.zeros((n, 3, 2, m))
    valid = np.zeros((n, 3), dtype=bool)
    for t, (j, k) in enumerate(TRIPLES):
        d1, d2 = dx[:, j], dx[:, k]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        scale = np.hypot(d1[:, 0], d1[:, 1]) * np.hypot(d2[:, 0], d2[:, 1])
        ok = present[:, j] & present[:, k] & (np.abs(det) > SINGULAR_TOL * scale)
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u1, u2 = du[:, j], du[:, k]
        grads[:, t, 0] = (u1 * d2[:, 1, None] - u2 * d1[:, 1, None]) * inv[:, None]
        grads[:, t, 1] = (u2 * d1[:, 0, None] - u1 * d2[:, 0, None]) * inv[:, None]
        valid[:, t] = ok
    return grads, valid


class GradientOperator:
    """Precomputed candidate-gradient weights for one mesh.

    For each cell and neighbor pair ``(j, k)`` the candidate gradient is
    ``w[:, t, 0] * (u_j - u0) + w[:, t, 1] * (u_k - u0)``, so the mesh
    geometry is factored once and reused for every field.

    With ``ghosts=True`` every boundary face contributes a ghost neighbor
    whose centroid is the owning centroid mirrored across the face; callers
    then pass the ghost values (ordered as ``ghost_faces``) at evaluation.
    """

    def __init__(self, mesh: Mesh, ghosts: bool = False):
        nb = mesh.edge_neighbors.copy()
        n = mesh.n_cells
        centroids = mesh.centroids
        self.ghost_faces = np.zeros(0, dtype=np.int64)
        if ghosts:
            cell_idx, slot_idx = np.nonzero(nb < 0)
            faces = mesh.cell_faces[cell_idx, slot_idx]
            normal, _, mid = mesh.face_geometry
            c = centroids[cell_idx]
            d = np.sum((mid[faces] - c) * normal[faces], axis=1)
            mirrored = c + 2.0 * d[:, None] * normal[faces]
            nb[cell_idx, slot_idx] = n + np.arange(len(faces))
            centroids = np.vstack([centroids, mirrored])
            self.ghost_faces = faces
        safe = np.maximum(nb, 0)
        dx = centroids[safe] - centroids[:n, None, :]
        weights = np.zeros((n, 3, 2, 2))
        valid = np.zeros((n, 3), dtype=bool)
        for t, (j, k) in enumerate(TRIPLES):
            d1, d2 = dx[:, j], dx[:, k]
            det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
            scale = np.hypot(d1[:, 0], d1[:, 1]) * np.hypot(d2[:, 0], d2[:, 1])
            ok = (nb[:, j] >= 0) & (nb[:, k] >= 0) & (np.abs(det) > SINGULAR_TOL * scale)
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            # [gx, gy] = inv * [[d2y, -d1y], [-d2x, d1x]] @ [du_j, du_k]
            weights[:, t, 0, 0] = d2[:, 1] * inv
            weights[:, t, 0, 1] = -d1[:, 1] * inv
            weights[:, t, 1, 0] = -d2[:, 0] * inv
            weights[:, t, 1, 1] = d1[:, 0] * inv
            valid[:, t] = ok
        pairs = np.array(TRIPLES)
        nbj = safe[:, pairs[:, 0]]
        nbk = safe[:, pairs[:, 1]]
        # Invalid slots duplicate the first valid candidate: minmod ignores
        # repeats, so the limiter can then run on three dense candidates.
        first = np.argmax(valid, axis=1)
        rows = np.arange(n)
        for t in range(3):
            bad = ~valid[:, t] & valid.any(axis=1)
            src = first[bad]
            weights[bad, t] = weights[rows[bad], src]
            nbj[bad, t] = nbj[rows[bad], src]
            nbk[bad, t] = nbk[rows[bad], src]
        self.valid = valid
        self.weights = weights
        self.nbj, self.nbk = nbj, nbk
        # candidate gradients are linear in the values: one sparse operator
        # with rows ordered (triple, axis, cell)
        next_ = len(centroids)
        own = np.arange(n)
        rows, cols, vals = [], [], []
        for t in range(3):
            for ax in range(2):
                r = (2 * t + ax) * n + own
                wj, wk = weights[:, t, ax, 0], weights[:, t, ax, 1]
                rows += [r, r, r]
                cols += [nbj[:, t], nbk[:, t], own]
                vals += [wj, wk, -(wj + wk)]
        self.operator = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                      shape=(6 * n, next_))
        self.n = n

    def candidates(self, values: np.ndarray, ghost_values: np.ndarray | None = None) -> np.ndarray:
        """Candidate gradients shaped (3, 2, n, m): triple, axis, cell, component."""
        ext = values if ghost_values is None else np.concatenate([values, ghost_values])
        return (self.operator @ ext).reshape(3, 2, self.n, -1)

    def __call__(self, values: np.ndarray, ghost_values: np.ndarray | None = None) -> np.ndarray:
        """Minmod-limited gradient (n, 2, m)."""
        if len(self.ghost_faces) and ghost_values is None:
            raise ValueError("ghost values required")
        c = self.candidates(values, ghost_values)
        return np.stack([minmod3(c[:, 0]), minmod3(c[:, 1])], axis=1)


def minmod3(c: np.ndarray) -> np.ndarray:
    """Minmod over the leading axis of length 3."""
    a, b, d = c[0], c[1], c[2]
    s = np.sign(a)
    same = (np.sign(b) == s) & (np.sign(d) == s)
    m = np.minimum(np.minimum(np.abs(a), np.abs(b)), np.abs(d))
    return np.where(same, s * m, 0.0)


def gradient_operator(mesh: Mesh) -> GradientOperator:
    op = mesh.__dict__.get("_gradient_operator")
    if op is None:
        op = mesh.__dict__["_gradient_operator"] = GradientOperator(mesh)
    return op


def limited_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Minmod gradient (n, 2, ...) of cell values, each component limited separately."""
    vals = np.asarray(values, dtype=float)
    g = gradient_operator(mesh)(vals.reshape(mesh.n_cells, -1))
    return g.reshape((mesh.n_cells, 2) + vals.shape[1:])


@dataclass(eq=False)
class LinearField:
    """Cell values plus their limited gradients, ready for point evaluation."""

    mesh: Mesh
    tree: CentroidTree
    values: np.ndarray
    gradients: np.ndarray

    @classmethod
    def build(cls, mesh: Mesh, tree: CentroidTree, values) -> "LinearField":
        values = np.asarray(values, dtype=float)
        return cls(mesh, tree, values, limited_gradients(mesh, values))

    def evaluate_in(self, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
        d = points - self.mesh.centroids[cells]
        g = self.gradients[cells]
        return self.values[cells] + d[:, 0, None] * g[:, 0] + d[:, 1, None] * g[:, 1]

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        cells = locate_points(self.mesh, self.tree, points)
        if np.any(cells < 0):
            bad = points[np.argmax(cells < 0)]
            raise LocationError(f"point ({bad[0]:.6g}, {bad[1]:.6g}) is outside the mesh")
        return self.evaluate_in(cells, points)


def interpolate_state(mesh: Mesh, states: np.ndarray, tree: CentroidTree, p) -> np.ndarray:
    """Limited linear interpolant of cell ``states`` at a single point ``p``."""
    p = np.asarray(p, dtype=float).reshape(1, 2)
    cell = locate_points(mesh, tree, p)[0]
    if cell < 0:
        raise LocationError(f"point {p[0].tolist()} is outside the mesh")
    states = np.asarray(states, dtype=float)
    flat = states.reshape(mesh.n_cells, -1)
    nb = mesh.edge_neighbors[cell]
    safe = np.maximum(nb, 0)
    grads, valid = candidate_gradients(mesh.centroids[cell][None], flat[cell][None],
                                       mesh.centroids[safe][None], flat[safe][None],
                                       (nb >= 0)[None])
    g = minmod_reduce(grads, valid)[0]
    d = p[0] - mesh.centroids[cell]
    return (flat[cell] + d[0] * g[0] + d[1] * g[1]).reshape(states.shape[1:])


@dataclass
class Stencil:
    center: np.ndarray
    points: np.ndarray
    h_coarse: float
    h_finer: float
    valid: bool


def stencil_points(center, h) -> np.ndarray:
    """25 lattice points, row-major in (i, j) over offsets -2..2 times h."""
    cx, cy = np.asarray(center, dtype=float)
    ii, jj = np.meshgrid(STENCIL_OFFSETS, STENCIL_OFFSETS, indexing="ij")
    return np.column_stack([cx + ii.ravel() * h, cy + jj.ravel() * h])


def build_stencil(p, coarse: Mesh, finer: Mesh, trees) -> Stencil:
    """Local domain of dependence around ``p`` sized by the coarse local cell size."""
    p = np.asarray(p, dtype=float)
    tc, tf = trees
    cc = locate_points(coarse, tc, p.reshape(1, 2))[0]
    cf = locate_points(finer, tf, p.reshape(1, 2))[0]
    if cc < 0 or cf < 0:
        raise LocationError(f"stencil center {p.tolist()} is outside the mesh")
    hc = float(coarse.local_size[cc])
    hf = float(finer.local_size[cf])
    pts = stencil_points(p, hc)
    ok = (locate_points(coarse, tc, pts) >= 0).all() and (locate_points(finer, tf, pts) >= 0).all()
    return Stencil(p, pts, hc, hf, bool(ok))
