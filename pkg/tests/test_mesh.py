import math

import numpy as np
import pytest
from scipy.integrate import quad

from nnlci.geometry import flat_case, translated_case, wall_height, wedge_case
from nnlci.mesh import (INFLOW, OUTFLOW, TAGS, WALL_LOWER, WALL_UPPER, Mesh, MeshError,
                        build_levels, generate_channel_mesh, read_mesh, refine_uniform,
                        write_mesh)


@pytest.fixture(scope="module")
def levels():
    return build_levels(translated_case(0.3))


def brute_local_size(mesh, cell):
    """Average of sqrt(area) over the cell and every cell sharing a vertex."""
    verts = set(mesh.cells[cell].tolist())
    group = [k for k in range(mesh.n_cells) if verts & set(mesh.cells[k].tolist())]
    return np.mean(np.sqrt(mesh.areas[group]))


def test_default_cell_counts(levels):
    assert [m.n_cells for m in levels] == [200, 800, 12800]
    assert [m.level for m in levels] == ["coarse", "finer", "finest"]


def test_lattice_counts():
    assert generate_channel_mesh(translated_case(0.0), 40, 10).n_cells == 800


def test_tiny_flat_mesh():
    m = generate_channel_mesh(flat_case(), 2, 1)
    assert m.n_cells == 4
    np.testing.assert_allclose(m.areas, 0.6, rtol=1e-14)
    assert m.areas.sum() == pytest.approx(2.4, rel=1e-14)


def test_orientation_and_closure(levels):
    for m in levels:
        assert np.all(m.signed_areas > 0)
        n, length, _ = m.face_geometry
        # outward normals of each cell sum to zero
        sign = np.where(m.face_left[m.cell_faces] == np.arange(m.n_cells)[:, None], 1.0, -1.0)
        closure = (sign[..., None] * n[m.cell_faces] * length[m.cell_faces][..., None]).sum(axis=1)
        scale = length[m.cell_faces].sum(axis=1)
        assert np.max(np.abs(closure) / scale[:, None]) < 1e-12


def test_adjacency_symmetric(levels):
    for m in levels:
        nb = m.edge_neighbors
        for c, row in enumerate(nb):
            for k in row[row >= 0]:
                assert c in nb[k]
        adj = m.vertex_neighbors
        assert (adj != adj.T).nnz == 0


def test_boundary_tags(levels):
    coarse = levels[0]
    tags = coarse.face_tags
    assert np.sum(tags == INFLOW) == 5 and np.sum(tags == OUTFLOW) == 5
    assert np.sum(tags == WALL_LOWER) == 20 and np.sum(tags == WALL_UPPER) == 20
    _, _, mid = coarse.face_geometry
    np.testing.assert_allclose(mid[tags == INFLOW, 0], -1.5)
    np.testing.assert_allclose(mid[tags == OUTFLOW, 0], 1.5)


def test_refine_equilateral_triangle():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    m = Mesh(v, [[0, 1, 2]], [[0, 1], [1, 2], [2, 0]], [WALL_LOWER, OUTFLOW, INFLOW])
    r = refine_uniform(m)
    assert r.n_cells == 4
    np.testing.assert_allclose(r.areas, m.areas[0] / 4, rtol=1e-14)


def test_refinement_preserves_straight_area():
    m = generate_channel_mesh(flat_case(), 6, 3)
    for _ in range(3):
        r = refine_uniform(m)
        assert r.areas.sum() == pytest.approx(m.areas.sum(), rel=1e-10)
        m = r


def test_curved_area_converges():
    # Gaussian walls are integrated almost exactly by the trapezoid rule on
    # the lattice, so the wedge (kinks between nodes) is the informative case
    case = wedge_case(0.38)
    exact = quad(lambda x: wall_height(case.profile_upper, x) - wall_height(case.profile_lower, x),
                 -1.5, 1.5, points=[-0.19, 0.0, 0.19], epsabs=1e-13)[0]
    # upper Gaussian: 0.0625 * sqrt(pi / 25), the tails beyond |x| = 1.5 are ~1e-25
    assert exact == pytest.approx(2.4 - 0.1 * 0.38 / 2 - 0.0625 * math.sqrt(math.pi / 25), rel=1e-12)
    errs = [abs(m.areas.sum() - exact) for m in build_levels(case)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-4


def test_wall_midpoints_snapped(levels):
    case = translated_case(0.3)
    fine = levels[2]
    tags = fine.boundary_tags
    verts = np.unique(fine.boundary_edges[tags == WALL_LOWER])
    x, y = fine.vertices[verts].T
    np.testing.assert_allclose(y, wall_height(case.profile_lower, x), atol=1e-15)


def test_local_size_brute_force(levels):
    rng = np.random.default_rng(3)
    for m in levels:
        cells = rng.choice(m.n_cells, size=min(40, m.n_cells), replace=False)
        for c in cells:
            assert m.local_cell_size(c) == pytest.approx(brute_local_size(m, c), rel=1e-12)


def test_local_size_full_coarse(levels):
    m = levels[0]
    expect = [brute_local_size(m, c) for c in range(m.n_cells)]
    np.testing.assert_allclose(m.local_size, expect, rtol=1e-12)


def test_local_size_isolated_cell():
    m = Mesh([[0, 0], [4, 0], [0, 2]], [[0, 1, 2]], np.empty((0, 2)), [])
    assert m.local_cell_size(0) == pytest.approx(2.0)


def test_local_size_uniform_lattice():
    m = generate_channel_mesh(flat_case(), 8, 4)
    interior = np.all(m.edge_neighbors >= 0, axis=1)
    np.testing.assert_allclose(m.local_size[interior], np.sqrt(m.areas[0]), rtol=1e-14)


def test_crossing_walls_rejected():
    from nnlci.geometry import CaseSpec, WallProfile, Family, Side
    bad = CaseSpec(WallProfile(Family.GAUSSIAN_VARIANCE, Side.LOWER, amplitude=0.5, lam=1.0),
                   WallProfile(Family.GAUSSIAN_VARIANCE, Side.UPPER, amplitude=0.5, lam=1.0))
    with pytest.raises(MeshError):
        generate_channel_mesh(bad, 4, 2)


def test_mesh_file_round_trip(tmp_path, levels):
    m = levels[1]
    write_mesh(m, tmp_path / "m.mesh")
    back = read_mesh(tmp_path / "m.mesh")
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.cells, m.cells)
    np.testing.assert_array_equal(back.boundary_tags, m.boundary_tags)
    assert back.level == "finer"
    np.testing.assert_array_equal(back.local_size, m.local_size)
    first = (tmp_path / "m.mesh").read_text().splitlines()[0].split()
    assert first[1] == "800" and first[3] == "finer"


def test_truncated_mesh_file(tmp_path, levels):
    write_mesh(levels[0], tmp_path / "m.mesh")
    text = (tmp_path / "m.mesh").read_text().splitlines()
    (tmp_path / "t.mesh").write_text("\n".join(text[:50]))
    with pytest.raises(MeshError):
        read_mesh(tmp_path / "t.mesh")


def test_wedge_levels_valid():
    for m in build_levels(wedge_case(0.3), finest_refinements=1):
        assert np.all(m.areas > 0)
        assert set(np.unique(m.boundary_tags)) == set(range(len(TAGS)))
