"""Command line: ``nnlci <stage> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataset import (CorpusError, NormalizerError, SampleSet, case_records, fit_normalizer,
                      load_case_fields, read_dataset, stencil_batch, training_points,
                      prediction_points, write_dataset)
from .euler import StateError, solve_steady, write_solution
from .evaluation import format_table, predict_field, read_report_csv, summary_table
from .mesh import LEVELS, MeshError, build_levels, read_mesh, write_mesh
from .network import (CheckpointError, LossError, TrainingDiverged, load_checkpoint,
                      save_checkpoint)
from .pipeline import evaluate_case, map_cases, mesh_case, solve_case, train_network
from .workspace import MissingArtifactError, Workspace

log = logging.getLogger("nnlci")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nnlci", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-case stages")
    p.add_argument("--verbose", "-v", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh", help="generate the three mesh levels")
    s.add_argument("--config", required=True)
    s.add_argument("--case", help="case file; default is every configured case")
    s.add_argument("--level", choices=LEVELS, default="coarse")
    s.add_argument("--mesh-out", help="write one level of --case to this path")

    s = sub.add_parser("solve", help="steady Euler solutions")
    s.add_argument("--config")
    s.add_argument("--case", help="case file")
    s.add_argument("--mesh", help="mesh file (single-solve mode, needs --case and --out)")
    s.add_argument("--out")

    s = sub.add_parser("dataset", help="assemble input/target records")
    s.add_argument("action", choices=["build"])
    s.add_argument("--cases", required=True, help="pipeline config")
    s.add_argument("--role", choices=["training", "testing"], default="training")
    s.add_argument("--out")
    s.add_argument("--dump-stencils", help="write one line per stencil (centre, h, validity)")

    s = sub.add_parser("train", help="train the network")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)

    s = sub.add_parser("predict", help="predict one case on its finest centroids")
    s.add_argument("--model", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--case", required=True, help="case file or case id")
    s.add_argument("--out", help="CSV of x, y and predicted states")

    s = sub.add_parser("evaluate", help="prediction with metrics, CSV and VTK exports")
    s.add_argument("--model", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--case", help="case file or case id; default is every testing case")
    s.add_argument("--out-prefix")

    s = sub.add_parser("report", help="table of per-case metrics with a pooled Total row")
    s.add_argument("--config", required=True)
    s.add_argument("--role", choices=["training", "testing"], default="testing")
    s.add_argument("--out", help="also write the table as JSON")
    return p


def _load(args, attr="config"):
    cfg = cfgmod.load_config(getattr(args, attr))
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.training.seed = args.seed
    return cfg


def _case(cfg, text: str):
    path = Path(text)
    return cfgmod.load_case(path) if path.suffix == ".json" or path.exists() else cfg.find_case(text)


def cmd_mesh(args) -> int:
    cfg = _load(args)
    ws = Workspace(cfg.workdir)
    if args.mesh_out:
        if not args.case:
            raise UsageError("--mesh-out needs --case")
        case = _case(cfg, args.case)
        meshes = build_levels(case, cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.finest_refinements)
        write_mesh(meshes[LEVELS.index(args.level)], args.mesh_out)
        return EXIT_OK
    cases = [_case(cfg, args.case)] if args.case else cfg.all_cases()
    for case in cases:
        mesh_case(case, ws, cfg)
        print(f"{case.case_id}: meshes written")
    return EXIT_OK


def cmd_solve(args) -> int:
    if args.mesh or args.out:
        if not (args.mesh and args.out and args.case):
            raise UsageError("single-solve mode needs --case, --mesh and --out")
        cfg = _load(args) if args.config else cfgmod.PipelineConfig()
        case = _case(cfg, args.case)
        if not Path(args.mesh).exists():
            raise MissingArtifactError(args.mesh, "mesh")
        result = solve_steady(read_mesh(args.mesh), case, cfg.solver)
        write_solution(result, args.out, args.mesh, case, cfg.solver)
        print(f"{case.case_id}: {result.steps} steps, converged={result.converged}")
        return EXIT_OK
    if not args.config:
        raise UsageError("solve needs --config (or --case/--mesh/--out)")
    cfg = _load(args)
    ws = Workspace(cfg.workdir)
    cases = [_case(cfg, args.case)] if args.case else cfg.all_cases()
    for group in map_cases(solve_case, cases, args.jobs, ws, cfg):
        for s in group:
            flag = "" if s.converged else "  (not converged: warning)"
            print(f"{s.case_id:<16} {s.level:<7} {s.n_cells:>6} cells {s.steps:>7} steps "
                  f"residual {s.final_residual:.2e}{flag}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    cfg = _load(args, "cases")
    ws = Workspace(cfg.workdir)
    cases = cfg.cases.cases(args.role)
    for case in cases:
        for level in LEVELS:
            ws.require(ws.solution_path(case, level), "solve")
    fields = [load_case_fields(ws, c) for c in cases]
    samples = SampleSet.concatenate(case_records(f, args.role) for f in fields)
    norm = fit_normalizer(samples) if args.role == "training" else None
    out = Path(args.out) if args.out else ws.dataset_path(args.role)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(samples, out, norm)
    if args.dump_stencils:
        with open(args.dump_stencils, "w") as fh:
            for f in fields:
                pts = (training_points(f.meshes[0]) if args.role == "training"
                       else prediction_points(f.meshes[2]))
                b = stencil_batch(pts, f.meshes[0], f.meshes[1], f.trees)
                for (x, y), hc, hf, ok in zip(b.centers, b.h_coarse, b.h_finer, b.valid):
                    fh.write(f"{f.case_id} {x!r} {y!r} {hc!r} {hf!r} {int(ok)}\n")
    print(f"{len(samples)} records from {len(cases)} cases -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    if not Path(args.dataset).exists():
        raise MissingArtifactError(args.dataset, "dataset build")
    samples, norm = read_dataset(args.dataset)
    t = time.perf_counter()
    model, history = train_network(samples, cfg.network, cfg.training, norm)
    save_checkpoint(model, args.out)
    print(f"trained {len(history)} epochs on {len(samples)} records in "
          f"{time.perf_counter() - t:.1f} s; final loss {history[-1]:.4e} -> {args.out}")
    return EXIT_OK


def _model_and_fields(args):
    cfg = _load(args)
    if not Path(args.model).exists():
        raise MissingArtifactError(args.model, "train")
    model = load_checkpoint(args.model)
    case = _case(cfg, args.case)
    ws = Workspace(cfg.workdir)
    for level in LEVELS:
        ws.require(ws.solution_path(case, level), "solve")
    return cfg, ws, case, model, load_case_fields(ws, case)


def cmd_predict(args) -> int:
    cfg, ws, case, model, fields = _model_and_fields(args)
    fields.fields  # interpolation set-up is part of loading, not of prediction
    t = time.perf_counter()
    report = predict_field(model, fields)
    dt = time.perf_counter() - t
    if args.out:
        np.savetxt(args.out, np.column_stack([report.points, report.predicted]),
                   header="x y rho rho_u rho_v rho_E", fmt="%.17g")
    print(f"{case.case_id}: {len(report)} points predicted in {dt:.3f} s "
          f"({report.n_excluded} excluded)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    ws = Workspace(cfg.workdir)
    if not Path(args.model).exists():
        raise MissingArtifactError(args.model, "train")
    if args.case:
        cases = [_case(cfg, args.case)]
    else:
        cases = cfg.cases.cases("testing")
        if args.out_prefix:
            raise UsageError("--out-prefix needs --case")
    prefix = Path(args.out_prefix) if args.out_prefix else None
    for case, m in zip(cases, map_cases(evaluate_case, cases, args.jobs, ws, args.model, prefix)):
        print(f"{case.case_id}: relative L1 {100 * m['relative_l1']:.3f}%  RRMSE "
              f"{100 * m['rrmse']:.3f}%  low-fidelity L1 {100 * m['baseline_relative_l1']:.3f}%")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load(args)
    ws = Workspace(cfg.workdir)
    reports = []
    for case in cfg.cases.cases(args.role):
        path = ws.require(Path(f"{ws.report_prefix(case)}.csv"), "evaluate")
        reports.append(read_report_csv(path, case.case_id))
    rows = summary_table(reports)
    print(format_table(rows))
    if args.out:
        Path(args.out).write_text(json.dumps(
            [dict(zip(("case", "relative_l1", "rrmse", "baseline_relative_l1"), r)) for r in rows],
            indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"mesh": cmd_mesh, "solve": cmd_solve, "dataset": cmd_dataset, "train": cmd_train,
            "predict": cmd_predict, "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifactError, CorpusError, CheckpointError, MeshError, NormalizerError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StateError, TrainingDiverged, LossError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
