"""Binary tree over cell centroids for locating the triangle that holds a point."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .mesh import Mesh

CONTAIN_TOL = 1e-12
FALLBACK_DEFECT = 1e-8


@dataclass(eq=False)
class CentroidTree:
    """Alternating-axis median splits of the centroid set.

    Nodes are stored in flat arrays. An internal node sends a point left when
    ``p[axis] < split``. Leaf ``k`` holds ``order[start[k]:stop[k]]`` and
    also carries ``halo``: every cell whose bounding box meets the leaf's
    region, padded with -1, so that one leaf lookup answers a containment
    query without visiting other leaves.
    """

    axis: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    order: np.ndarray
    halo: np.ndarray
    capacity: int
    depth: int

    @property
    def is_leaf(self) -> np.ndarray:
        return self.left < 0

    def leaves(self):
        for k in np.flatnonzero(self.is_leaf):
            yield self.order[self.start[k]:self.stop[k]]

    def descend(self, points: np.ndarray) -> np.ndarray:
        """Leaf node index for each point (vectorized)."""
        points = np.atleast_2d(points)
        node = np.zeros(len(points), dtype=np.int64)
        for _ in range(self.depth):
            inner = self.left[node] >= 0
            if not inner.any():
                break
            n = node[inner]
            go_left = points[inner, self.axis[n]] < self.split[n]
            node[inner] = np.where(go_left, self.left[n], self.right[n])
        return node


def build_spatial_index(mesh: Mesh, capacity: int = 8) -> CentroidTree:
    if capacity < 1:
        raise ValueError("capacity must be positive")
    cen = mesh.centroids
    axis, split, left, right, start, stop = [], [], [], [], [], []
    regions = []
    order = np.arange(mesh.n_cells)
    max_depth = 0

    def new_node():
        for lst in (axis, split, left, right, start, stop):
            lst.append(-1)
        regions.append(None)
        return len(axis) - 1

    # iterative to keep recursion out of large meshes
    root = new_node()
    stack = [(root, 0, mesh.n_cells, 0, (-math.inf, -math.inf, math.inf, math.inf))]
    while stack:
        node, lo, hi, depth, region = stack.pop()
        max_depth = max(max_depth, depth)
        start[node], stop[node] = lo, hi
        regions[node] = region
        if hi - lo <= capacity:
            continue
        ax = depth % 2
        ids = order[lo:hi]
        srt = ids[np.argsort(cen[ids, ax], kind="stable")]
        order[lo:hi] = srt
        mid = lo + (hi - lo) // 2
        # points exactly on the split go right, matching descend()
        sval = 0.5 * (cen[order[mid - 1], ax] + cen[order[mid], ax])
        axis[node], split[node] = ax, sval
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        x0, y0, x1, y1 = region
        if ax == 0:
            lreg, rreg = (x0, y0, sval, y1), (sval, y0, x1, y1)
        else:
            lreg, rreg = (x0, y0, x1, sval), (x0, sval, x1, y1)
        stack.append((rnode, mid, hi, depth + 1, rreg))
        stack.append((lnode, lo, mid, depth + 1, lreg))

    tri = mesh.vertices[mesh.cells]
    cmin = tri.min(axis=1) - 1e-9
    cmax = tri.max(axis=1) + 1e-9
    halos = []
    leaf_ids = [k for k in range(len(axis)) if left[k] < 0]
    for k in leaf_ids:
        x0, y0, x1, y1 = regions[k]
        own = order[start[k]:stop[k]]
        hit = np.flatnonzero((cmax[:, 0] >= x0) & (cmin[:, 0] <= x1)
                             & (cmax[:, 1] >= y0) & (cmin[:, 1] <= y1))
        # own cells first so that ties resolve to the leaf's cells
        rest = np.setdiff1d(hit, own, assume_unique=True)
        halos.append(np.concatenate([own, rest]))
    width = max(len(h) for h in halos)
    halo = np.full((len(axis), width), -1, dtype=np.int64)
    for k, h in zip(leaf_ids, halos):
        halo[k, :len(h)] = h

    as_int = lambda v: np.array(v, dtype=np.int64)
    return CentroidTree(as_int(axis), np.array(split, dtype=float), as_int(left), as_int(right),
                        as_int(start), as_int(stop), order, halo, capacity, max_depth)


def _affine_coefficients(mesh: Mesh) -> np.ndarray:
    """(nc, 3, 3) rows (c0, cx, cy) with lambda_i = c0 + cx*x + cy*y."""
    coef = mesh.__dict__.get("_bary_coef")
    if coef is None:
        tri = mesh.vertices[mesh.cells]
        area2 = 2.0 * mesh.signed_areas
        coef = np.empty((mesh.n_cells, 3, 3))
        for i in range(3):
            q, r = tri[:, (i + 1) % 3], tri[:, (i + 2) % 3]
            # signed area of (p, q, r) is linear in p
            coef[:, i, 0] = q[:, 0] * r[:, 1] - q[:, 1] * r[:, 0]
            coef[:, i, 1] = q[:, 1] - r[:, 1]
            coef[:, i, 2] = r[:, 0] - q[:, 0]
        coef /= area2[:, None, None]
        mesh.__dict__["_bary_coef"] = coef
    return coef


def barycentric(mesh: Mesh, cells: np.ndarray, points: np.ndarray) -> np.ndarray:
    """(n, 3) barycentric coordinates of ``points[i]`` in ``cells[i]``."""
    c = _affine_coefficients(mesh)[cells]
    return c[:, :, 0] + c[:, :, 1] * points[:, 0, None] + c[:, :, 2] * points[:, 1, None]


@njit(cache=True)
def _scan_candidates(coef, halo, leaf, points, tol, result):
    """First halo cell of each point's leaf whose barycentric coordinates all exceed -tol."""
    for i in range(points.shape[0]):
        x, y = points[i, 0], points[i, 1]
        row = halo[leaf[i]]
        for k in range(row.shape[0]):
            c = row[k]
            if c < 0:
                break
            inside = True
            for j in range(3):
                if coef[c, j, 0] + coef[c, j, 1] * x + coef[c, j, 2] * y < -tol:
                    inside = False
                    break
            if inside:
                result[i] = c
                break


def locate_points(mesh: Mesh, tree: CentroidTree, points) -> np.ndarray:
    """Containing cell of every point, -1 for points outside the mesh.

    A point counts as inside when every barycentric coordinate is at least
    ``-CONTAIN_TOL``. Points inside the mesh bounding box that no cell
    contains fall back to the nearest-centroid candidate cell if its
    barycentric defect is at most ``FALLBACK_DEFECT``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(points)
    result = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return result
    leaf = tree.descend(points)
    _scan_candidates(_affine_coefficients(mesh), tree.halo, leaf, points, CONTAIN_TOL, result)
    open_ = np.flatnonzero(result < 0)
    if len(open_) == 0:
        return result

    x0, y0, x1, y1 = mesh.bbox
    p = points[open_]
    in_box = (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)
    idx = open_[in_box]
    if len(idx):
        c = tree.halo[leaf[idx]]
        d = np.sum((mesh.centroids[np.maximum(c, 0)] - points[idx, None, :]) ** 2, axis=2)
        d[c < 0] = np.inf
        best = c[np.arange(len(idx)), np.argmin(d, axis=1)]
        defect = -barycentric(mesh, best, points[idx]).min(axis=1)
        ok = defect <= FALLBACK_DEFECT
        result[idx[ok]] = best[ok]
    return result


def locate_cell(mesh: Mesh, tree: CentroidTree, p) -> int | None:
    """Cell containing point ``p``, or None when it lies outside the mesh."""
    c = int(locate_points(mesh, tree, np.asarray(p, dtype=float).reshape(1, 2))[0])
    return None if c < 0 else c
