"""Acceptance criteria 1-12, one test each, with a PASS/FAIL line per criterion.

Criteria 5, 9, 10 and 11 solve and train at desk scale and take most of the
run time (about half an hour on one core). Set NNLCI_DESK_WORKDIR to reuse a
directory of desk-scale solutions between runs.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import record
from nnlci.config import CaseSelection, MeshSettings, PipelineConfig
from nnlci.dataset import (CaseFields, build_corpus, case_records, fit_normalizer,
                           load_case_fields)
from nnlci.euler import (EulerSolver, SolverConfig, pressure, solve_steady,
                         total_pressure_ratio, total_temperature_ratio, write_solution)
from nnlci.evaluation import baseline_error, predict_field, relative_l1
from nnlci.geometry import (flat_case, shape_matrix, translated_case, translation_matrix,
                            wedge_case)
from nnlci.interpolation import GradientOperator, LinearField
from nnlci.mesh import WALL_LOWER, WALL_UPPER, build_levels, refine_uniform
from nnlci.network import (AdamState, Batch, MlpModel, TrainConfig, adam_step, backward,
                           loss, save_checkpoint)
from nnlci.pipeline import solve_cases, train_network
from nnlci.spatial import build_spatial_index, locate_points
from nnlci.workspace import Workspace

pytestmark = pytest.mark.slow

# desk-scale surrogate (see the decisions ledger for why this is smaller than the default)
DESK_SIZES = [202, 64, 64, 64, 64, 4]
DESK_TRAINING = TrainConfig(epochs=20000, lr=1e-3, seed=0)
# the shape corpus is ~1.8x larger and needs longer to fit
SHAPE_TRAINING = TrainConfig(epochs=40000, lr=1e-3, seed=0)
DESK_SOLVER = SolverConfig(max_steps=4000)


# -- shared fixtures -------------------------------------------------------------------


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """Translation and shape cases solved on 200 / 800 / 3200 cells."""
    root = os.environ.get("NNLCI_DESK_WORKDIR")
    ws = Workspace(Path(root) if root else tmp_path_factory.mktemp("desk"))
    cfg = PipelineConfig(cases=CaseSelection(training=["translation", "shape"],
                                             testing=["translation", "shape"]),
                         mesh=MeshSettings(finest_refinements=1), solver=DESK_SOLVER)
    todo = [c for c in cfg.all_cases() if not ws.solution_path(c, "finest").exists()]
    solve_cases(todo, ws, cfg)
    return ws


@pytest.fixture(scope="session")
def wedge():
    """The L = 0.6 wedge on the default 200 / 800 / 12800 cell levels, solved on each."""
    case = wedge_case(0.6)
    meshes = build_levels(case)
    t = time.perf_counter()
    states = []
    for mesh in meshes:
        steps = 6000 if mesh.n_cells == 12800 else 4000
        states.append(solve_steady(mesh, case, SolverConfig(max_steps=steps)).states)
    return CaseFields(case.case_id, meshes, tuple(states)), time.perf_counter() - t


def evaluate_ratios(model, ws, cases):
    out = {}
    for case in cases:
        rep = predict_field(model, load_case_fields(ws, case))
        out[case.case_id] = (relative_l1(rep), baseline_error(rep))
    return out


def ratio_lines(ratios):
    return "; ".join(f"{cid} {100 * a:.2f}%/{100 * b:.2f}% ({a / b:.2f})"
                     for cid, (a, b) in ratios.items())


# -- criteria -----------------------------------------------------------------------


def test_01_mesh_counts():
    counts = [m.n_cells for m in build_levels(translated_case(0.0))]
    ok = counts == [200, 800, 12800]
    record(1, ok, f"cells per level {counts}")
    assert ok


def away_from_walls(mesh, layers):
    """Cells more than `layers` neighbour hops from a wall cell."""
    touch = np.zeros(mesh.n_cells, bool)
    touch[mesh.face_left[np.isin(mesh.face_tags, [WALL_LOWER, WALL_UPPER])]] = True
    nb = mesh.edge_neighbors
    for _ in range(layers):
        touch = touch | np.any(np.where(nb >= 0, touch[nb], False), axis=1)
    return ~touch


def test_02_freestream_preservation():
    flat = build_levels(flat_case())[2]
    bump = build_levels(translated_case(0.0))[2]
    # wall ghosts disturb the bumped channel; one RK2 step plus the final residual reaches
    # at most six neighbour hops, so only cells beyond that must stay at rest
    worst = []
    for mesh, mask in ((flat, np.ones(flat.n_cells, bool)), (bump, away_from_walls(bump, 6))):
        s = EulerSolver(mesh, 2.0)
        U0 = s.initial_state()
        U1, R0, _ = s.step(U0, step=1)
        R1 = s.residual(U1)
        worst.append(max(np.abs(R0[mask]).max(), np.abs(R1[mask]).max()))
    ok = flat.n_cells == bump.n_cells == 12800 and max(worst) < 1e-11
    record(2, ok, f"max |residual| after one RK2 step: flat channel {worst[0]:.1e}, "
                  f"bump channel away from walls {worst[1]:.1e} (tol 1e-11)")
    assert ok


def test_03_conservation():
    case = translated_case(0.15, 0.05)
    mesh = build_levels(case, finest_refinements=1)[2]
    s = EulerSolver(mesh, case.mach, SolverConfig(time_stepping="global"))
    t = time.perf_counter()
    U = s.initial_state()
    start = mesh.areas @ U
    outflow = np.zeros(4)
    for n in range(100):
        U, _, b = s.step(U, step=n)
        outflow += b
    change = mesh.areas @ U - start
    rel = np.abs(change + outflow) / np.linalg.norm(start)
    ok = rel.max() < 1e-9 and time.perf_counter() - t < 60
    record(3, ok, f"100 steps on {case.case_id} ({mesh.n_cells} cells): max relative "
                  f"imbalance {rel.max():.1e} (tol 1e-9), {time.perf_counter() - t:.1f} s")
    assert ok


def test_04_inflow_constants():
    g, M = 1.4, 2.0
    tt_script = 1 + (g - 1) / 2 * M ** 2
    pt_script = tt_script ** (g / (g - 1))
    tt, pt = total_temperature_ratio(M), total_pressure_ratio(M)
    ok = tt == 1.8 and abs(pt - 1.8 ** 3.5) <= 1e-12 * 1.8 ** 3.5 and abs(pt - pt_script) <= 1e-12 * pt
    record(4, ok, f"T_t/T = {tt!r}, p_t/p = {pt!r} (1.8**3.5 = {1.8 ** 3.5!r})")
    assert ok


def weak_shock_angle(mach, theta, gamma=1.4):
    def f(beta):
        return math.tan(theta) - (2 / math.tan(beta) * (mach ** 2 * math.sin(beta) ** 2 - 1)
                                  / (mach ** 2 * (gamma + math.cos(2 * beta)) + 2))
    beta = np.linspace(math.asin(1 / mach) + 1e-6, math.pi / 2, 2000)
    vals = np.array([f(b) for b in beta])
    k = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    return brentq(f, beta[k], beta[k + 1], xtol=1e-14)


def leading_shock_angle(mesh, states):
    """Angle of the steepest pressure rise ahead of the ramp, fitted over 0.05 <= y <= 0.25."""
    field = LinearField.build(mesh, build_spatial_index(mesh), pressure(states)[:, None])
    ys = np.linspace(0.05, 0.25, 11)
    xs = []
    for y in ys:
        # stop short of the ramp surface x = -0.3 + 3y
        x = np.linspace(-0.5, min(-0.3 + 3 * y - 0.03, -0.05), 2001)
        p = field(np.column_stack([x, np.full_like(x, y)]))[:, 0]
        xs.append(x[np.argmax(np.gradient(p, x))])
    slope = np.polyfit(ys, xs, 1)[0]
    return math.degrees(math.atan2(1.0, slope))


def test_05_oblique_shock(wedge):
    data, seconds = wedge
    finest = data.meshes[2]
    beta_exact = math.degrees(weak_shock_angle(2.0, math.atan(0.1 / 0.3)))
    beta = leading_shock_angle(finest, data.states[2])
    ok = finest.n_cells == 12800 and abs(beta - beta_exact) < 2.0 and seconds < 1800
    record(5, ok, f"leading shock {beta:.2f} deg vs theta-beta-M weak root {beta_exact:.2f} deg "
                  f"(tol 2 deg); solves took {seconds:.0f} s")
    assert ok


def test_06_interpolation_exactness():
    mesh = build_levels(translated_case(-0.35), finest_refinements=1)[1]
    tree = build_spatial_index(mesh)
    rng = np.random.default_rng(0)
    coef = rng.normal(size=(3, 4))
    u = coef[0] + np.outer(mesh.centroids[:, 0], coef[1]) + np.outer(mesh.centroids[:, 1], coef[2])
    full = np.flatnonzero(GradientOperator(mesh).valid.all(axis=1))
    pts = []
    while len(pts) < 1000:
        c = rng.choice(full)
        p = rng.dirichlet(np.ones(3)) @ mesh.vertices[mesh.cells[c]]
        if locate_points(mesh, tree, p[None])[0] in full:
            pts.append(p)
    pts = np.array(pts)
    exact = coef[0] + np.outer(pts[:, 0], coef[1]) + np.outer(pts[:, 1], coef[2])
    err = np.abs(LinearField.build(mesh, tree, u)(pts) - exact).max()
    ok = err < 1e-12
    record(6, ok, f"max error over 1000 interior points {err:.1e} (tol 1e-12)")
    assert ok


def test_07_gradient_check():
    rng = np.random.default_rng(1)
    model = MlpModel.initialize((202, 8, 4), seed=2)
    batch = Batch(rng.uniform(size=(10, 202)), rng.uniform(size=(10, 4)), rng.uniform(0.5, 2, 10))
    _, grads = backward(model, batch, "cell_weighted", 1e-8)
    worst = 0.0
    for p, g in zip(model.params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + 1e-5
            up = loss(model, batch, "cell_weighted", 1e-8)
            flat[i] = keep - 1e-5
            down = loss(model, batch, "cell_weighted", 1e-8)
            flat[i] = keep
            fd = (up - down) / 2e-5
            worst = max(worst, abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8))
    ok = worst < 1e-5
    record(7, ok, f"max relative error vs central differences {worst:.1e} (tol 1e-5)")
    assert ok


def test_08_adam_oracle():
    theta, m, v = 1.0, 0.0, 0.0
    lr, b1, b2, eps = 1e-4, 0.9, 0.999, 1e-8
    for t in range(1, 6):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    p = [np.array(1.0)]
    state = AdamState(lr=lr)
    for _ in range(5):
        adam_step(p, [2 * p[0]], state)
    err = abs(float(p[0]) - theta)
    ok = err < 1e-12
    record(8, ok, f"theta after 5 steps {float(p[0])!r}, hand recurrence {theta!r}, diff {err:.1e}")
    assert ok


def test_09_translation_surrogate(desk):
    t = time.perf_counter()
    samples = build_corpus(translation_matrix("training"), desk)
    model, history = train_network(samples, DESK_SIZES, DESK_TRAINING)
    ratios = evaluate_ratios(model, desk, translation_matrix("testing"))
    seconds = time.perf_counter() - t
    ok = all(a < 0.5 * b for a, b in ratios.values()) and seconds < 7200
    record(9, ok, f"{len(samples)} records, {DESK_TRAINING.epochs} epochs, {seconds:.0f} s; "
                  f"NNLCI/low-fi L1 {ratio_lines(ratios)} (need < 0.5)")
    assert ok


def test_10_shape_generalisation(desk):
    t = time.perf_counter()
    samples = build_corpus(translation_matrix("training") + shape_matrix("training"), desk)
    model, _ = train_network(samples, DESK_SIZES, SHAPE_TRAINING)
    ratios = evaluate_ratios(model, desk, shape_matrix("testing"))
    ok = all(a < 0.6 * b for a, b in ratios.values())
    record(10, ok, f"{len(samples)} records, {SHAPE_TRAINING.epochs} epochs, "
                   f"{time.perf_counter() - t:.0f} s; "
                   f"NNLCI/low-fi L1 {ratio_lines(ratios)} (need < 0.6)")
    assert ok


def test_11_prediction_latency(wedge):
    data, _ = wedge
    model = MlpModel.initialize(seed=0)
    model.normalizer = fit_normalizer(case_records(data))
    predict_field(model, data)  # warm-up
    times = []
    for _ in range(3):
        # fresh reconstruction caches; meshes, states and search trees count as loaded input
        fresh = CaseFields(data.case_id, data.meshes, data.states, data.trees)
        t = time.perf_counter()
        rep = predict_field(model, fresh)
        times.append(time.perf_counter() - t)
    best = min(times)
    ok = best <= 1.0 and len(rep) + rep.n_excluded == 12800
    record(11, ok, f"{len(rep)} of 12800 points with the {len(model.sizes) - 2}x{model.sizes[1]} "
                   f"network in {best:.3f} s (median {sorted(times)[1]:.3f} s; limit 1 s)")
    assert ok


def test_12_determinism(tmp_path):
    case = translated_case(0.3, -0.05)
    mesh = refine_uniform(build_levels(case)[0])
    paths = []
    for k in range(2):
        res = solve_steady(mesh, case, SolverConfig(max_steps=300))
        paths.append(tmp_path / f"s{k}.sol")
        write_solution(res, paths[-1], "finer.mesh", case, SolverConfig(max_steps=300))
    same_solve = paths[0].read_bytes() == paths[1].read_bytes()

    meshes = build_levels(case, finest_refinements=1)
    states = tuple(solve_steady(m, case, SolverConfig(max_steps=300)).states for m in meshes)
    samples = case_records(CaseFields(case.case_id, meshes, states))
    ckpts = []
    for k in range(2):
        model, _ = train_network(samples, [202, 32, 32, 4], TrainConfig(epochs=200, lr=1e-3, seed=7))
        ckpts.append(tmp_path / f"m{k}.ckpt")
        save_checkpoint(model, ckpts[-1])
    same_train = ckpts[0].read_bytes() == ckpts[1].read_bytes()
    ok = same_solve and same_train
    record(12, ok, f"solution files identical: {same_solve}; checkpoints identical: {same_train}")
    assert ok
