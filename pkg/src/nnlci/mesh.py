"""Triangular channel meshes: generation, uniform refinement, connectivity."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .geometry import CaseSpec, WallProfile, wall_height, X_MIN, X_MAX

TAGS = ("inflow", "outflow", "wall_lower", "wall_upper")
INFLOW, OUTFLOW, WALL_LOWER, WALL_UPPER = range(4)
LEVELS = ("coarse", "finer", "finest")


class MeshError(ValueError):
    pass


@dataclass(eq=False)
class Mesh:
    """Counter-clockwise triangles with tagged boundary edges.

    ``boundary_edges`` holds vertex pairs and ``boundary_tags`` an index into
    :data:`TAGS` for each. Geometric and connectivity arrays are derived
    lazily and cached; the arrays themselves must not be mutated.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    level: str = "coarse"
    profiles: tuple[WallProfile, WallProfile] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        self.boundary_tags = np.ascontiguousarray(self.boundary_tags, dtype=np.int64)
        if np.any(self.signed_areas <= 0.0):
            bad = int(np.argmin(self.signed_areas))
            raise MeshError(f"cell {bad} has non-positive signed area {self.signed_areas[bad]:.3e}")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.cells[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                      - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    @cached_property
    def _faces(self):
        # Edge k of a cell joins local vertices k and k+1.
        nc = self.n_cells
        directed = np.stack([self.cells, np.roll(self.cells, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(directed, axis=1)
        uniq, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inverse = inverse.ravel()
        nf = len(uniq)
        owner = np.arange(3 * nc) // 3
        counts = np.bincount(inverse, minlength=nf)
        if np.any(counts > 2):
            raise MeshError("non-manifold edge shared by more than two cells")
        left = owner[first]
        right = np.full(nf, -1, dtype=np.int64)
        second = np.ones(3 * nc, dtype=bool)
        second[first] = False
        right[inverse[second]] = owner[second]
        fv = directed[first]
        cell_faces = inverse.reshape(nc, 3)
        return fv, left, right, cell_faces

    @property
    def face_vertices(self) -> np.ndarray:
        """(nf, 2) vertex pairs, ordered counter-clockwise around the left cell."""
        return self._faces[0]

    @property
    def face_left(self) -> np.ndarray:
        return self._faces[1]

    @property
    def face_right(self) -> np.ndarray:
        """Right cell of each face, -1 on the boundary."""
        return self._faces[2]

    @property
    def cell_faces(self) -> np.ndarray:
        return self._faces[3]

    @cached_property
    def face_geometry(self):
        """Unit normals (pointing out of the left cell), lengths, midpoints."""
        p0 = self.vertices[self.face_vertices[:, 0]]
        p1 = self.vertices[self.face_vertices[:, 1]]
        d = p1 - p0
        length = np.hypot(d[:, 0], d[:, 1])
        normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
        return normal, length, 0.5 * (p0 + p1)

    @cached_property
    def face_tags(self) -> np.ndarray:
        """Boundary tag per face, -1 for interior faces."""
        tags = np.full(len(self.face_left), -1, dtype=np.int64)
        bmask = self.face_right < 0
        lookup = {tuple(sorted(e)): t for e, t in zip(self.boundary_edges.tolist(),
                                                      self.boundary_tags.tolist())}
        for f in np.flatnonzero(bmask):
            key = tuple(sorted(self.face_vertices[f].tolist()))
            if key not in lookup:
                raise MeshError(f"boundary face {key} carries no tag")
            tags[f] = lookup[key]
        return tags

    @cached_property
    def edge_neighbors(self) -> np.ndarray:
        """(nc, 3) neighbor across each local edge, -1 where there is none."""
        cf = self.cell_faces
        left, right = self.face_left[cf], self.face_right[cf]
        own = np.arange(self.n_cells)[:, None]
        return np.where(left == own, right, left)

    @cached_property
    def vertex_neighbors(self) -> sp.csr_matrix:
        """Boolean CSR adjacency of cells sharing at least one vertex (no self loops)."""
        nc = self.n_cells
        inc = sp.csr_matrix((np.ones(3 * nc), (np.repeat(np.arange(nc), 3), self.cells.ravel())),
                            shape=(nc, self.n_vertices))
        adj = (inc @ inc.T).tocsr()
        adj.setdiag(0)
        adj.eliminate_zeros()
        adj.data[:] = 1.0
        adj.sort_indices()
        return adj

    def vertex_neighbor_list(self, cell: int) -> np.ndarray:
        a = self.vertex_neighbors
        return a.indices[a.indptr[cell]:a.indptr[cell + 1]]

    @cached_property
    def local_size(self) -> np.ndarray:
        """Mean of sqrt(area) over each cell and all cells touching it."""
        root = np.sqrt(self.areas)
        adj = self.vertex_neighbors
        n = 1.0 + np.diff(adj.indptr)
        return (root + adj @ root) / n

    def local_cell_size(self, cell: int) -> float:
        return float(self.local_size[cell])

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def generate_channel_mesh(case: CaseSpec, nx: int, ny: int, level: str = "coarse") -> Mesh:
    """Boundary-fitted lattice blended between the two walls, split into triangles.

    Each quad is cut along its lower-left to upper-right diagonal, giving
    ``2 * nx * ny`` cells.
    """
    if nx < 2 or ny < 1:
        raise MeshError(f"need nx >= 2 and ny >= 1, got nx={nx}, ny={ny}")
    xs = np.linspace(X_MIN, X_MAX, nx + 1)
    lower = wall_height(case.profile_lower, xs)
    upper = wall_height(case.profile_upper, xs)
    if np.any(upper - lower <= 0.0):
        raise MeshError("walls touch or cross; channel is degenerate")
    eta = np.linspace(0.0, 1.0, ny + 1)
    ys = lower[:, None] + eta[None, :] * (upper - lower)[:, None]
    verts = np.column_stack([np.repeat(xs, ny + 1), ys.ravel()])

    vid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    v00 = vid[:-1, :-1].ravel()
    v10 = vid[1:, :-1].ravel()
    v11 = vid[1:, 1:].ravel()
    v01 = vid[:-1, 1:].ravel()
    cells = np.empty((2 * nx * ny, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])

    edges, tags = [], []
    edges.append(np.column_stack([vid[:-1, 0], vid[1:, 0]]))
    tags.append(np.full(nx, WALL_LOWER))
    edges.append(np.column_stack([vid[1:, -1], vid[:-1, -1]]))
    tags.append(np.full(nx, WALL_UPPER))
    edges.append(np.column_stack([vid[0, 1:], vid[0, :-1]]))
    tags.append(np.full(ny, INFLOW))
    edges.append(np.column_stack([vid[-1, :-1], vid[-1, 1:]]))
    tags.append(np.full(ny, OUTFLOW))
    return Mesh(verts, cells, np.concatenate(edges), np.concatenate(tags), level,
                (case.profile_lower, case.profile_upper))


def refine_uniform(mesh: Mesh, level: str | None = None) -> Mesh:
    """Split every triangle into four through its edge midpoints.

    Midpoints of wall edges are moved onto the analytic wall curve when the
    mesh carries its wall profiles.
    """
    fv = mesh.face_vertices
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[fv[:, 0]] + mesh.vertices[fv[:, 1]])
    if mesh.profiles is not None:
        tags = mesh.face_tags
        for tag, profile in ((WALL_LOWER, mesh.profiles[0]), (WALL_UPPER, mesh.profiles[1])):
            sel = tags == tag
            mids[sel, 1] = wall_height(profile, mids[sel, 0])
    verts = np.vstack([mesh.vertices, mids])

    # midpoint of local edge k (vertices k, k+1) for every cell
    m = nv + mesh.cell_faces
    a, b, c = mesh.cells.T
    mab, mbc, mca = m[:, 0], m[:, 1], m[:, 2]
    cells = np.stack([
        np.column_stack([a, mab, mca]),
        np.column_stack([mab, b, mbc]),
        np.column_stack([mca, mbc, c]),
        np.column_stack([mab, mbc, mca]),
    ], axis=1).reshape(-1, 3)

    # each tagged boundary edge becomes two
    key = {tuple(sorted(e)): f for f, e in enumerate(fv.tolist())}
    new_edges, new_tags = [], []
    for (p, q), t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist()):
        mid = nv + key[tuple(sorted((p, q)))]
        new_edges += [(p, mid), (mid, q)]
        new_tags += [t, t]
    if level is None:
        i = LEVELS.index(mesh.level) if mesh.level in LEVELS else -1
        level = LEVELS[min(i + 1, len(LEVELS) - 1)]
    return Mesh(verts, cells, np.array(new_edges), np.array(new_tags), level, mesh.profiles)


def build_levels(case: CaseSpec, nx: int = 20, ny: int = 5,
                 finest_refinements: int = 2) -> tuple[Mesh, Mesh, Mesh]:
    """Coarse, finer and finest meshes for a case.

    The defaults give 200 / 800 / 12800 cells. ``finest_refinements=1``
    gives a 3200-cell finest level.
    """
    coarse = generate_channel_mesh(case, nx, ny, "coarse")
    finer = refine_uniform(coarse, "finer")
    finest = finer
    for _ in range(finest_refinements):
        finest = refine_uniform(finest, "finest")
    return coarse, finer, finest


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text mesh: header, vertices, cells, tagged boundary edges."""
    lines = [f"{mesh.n_vertices} {mesh.n_cells} {len(mesh.boundary_edges)} {mesh.level}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    lines += [f"{p} {q} {TAGS[t]}" for (p, q), t in zip(mesh.boundary_edges.tolist(),
                                                         mesh.boundary_tags.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        head = fh.readline().split()
        try:
            nv, nc, nb = (int(t) for t in head[:3])
            level = head[3]
        except (ValueError, IndexError) as exc:
            raise MeshError(f"{path}: malformed header {head}") from exc
        body = fh.read().split("\n")
    if len(body) < nv + nc + nb:
        raise MeshError(f"{path}: truncated mesh file")
    verts = np.array([[float(t) for t in ln.split()] for ln in body[:nv]])
    cells = np.array([[int(t) for t in ln.split()] for ln in body[nv:nv + nc]], dtype=np.int64)
    edges, tags = [], []
    for ln in body[nv + nc:nv + nc + nb]:
        p, q, t = ln.split()
        edges.append((int(p), int(q)))
        tags.append(TAGS.index(t))
    return Mesh(verts, cells, np.array(edges, dtype=np.int64).reshape(-1, 2),
                np.array(tags, dtype=np.int64), level)
