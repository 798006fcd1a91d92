"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 optimizer did not converge
or dense post-check failed (artifacts are still written), 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench, planner
from .fk_net import FkTrainConfig, train_fk
from .jps import NoPath
from .kinematics import DeltaGeometry
from .scenario import ConfigError, config_hash, load_config
from .workspace import WorkspaceModel, WorkspaceTrainConfig, train_workspace

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_INTERNAL = 0, 1, 2, 3
SCENARIO_DIR = Path(__file__).resolve().parents[2] / "scenarios"

log = logging.getLogger("deltagrasp")


def _load_raw(path) -> dict:
    cfg = load_config(path)  # validates
    return cfg.raw


def _geometry(args) -> DeltaGeometry:
    if getattr(args, "scenario", None):
        return load_config(args.scenario).geometry
    return DeltaGeometry()


def cmd_train(args) -> int:
    geom = _geometry(args)
    out = Path(args.out)
    kwargs = {"seed": args.seed}
    if args.epochs is not None:
        kwargs["epochs"] = args.epochs
    if args.samples is not None:
        kwargs["n_train"] = args.samples

    def progress(epoch, loss):
        log.info("%s epoch %d loss %.6g", args.model, epoch, loss)

    if args.model == "workspace":
        cfg = WorkspaceTrainConfig(**kwargs)
        model, metrics = train_workspace(geom, cfg, log=progress)
    else:
        cfg = FkTrainConfig(**kwargs)
        model, metrics = train_fk(geom, cfg, log=progress)
    if not args.timing:
        metrics["train_seconds"] = None
    digest = config_hash({"model": args.model, "config": metrics["config"], "geometry": geom.to_dict()})
    model.metadata.update({"config_hash": digest, "seed": args.seed})
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / bench.MODEL_FILES[args.model])
    bench.write_json(out / f"{args.model}_metrics.json", {"config_hash": digest, "seed": args.seed, **metrics})
    summary = {k: v for k, v in metrics.items() if k in ("test_error", "mean_error_m", "max_error_m", "final_loss")}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = load_config(args.scenario)
    raw = cfg.raw
    if args.seed is not None:
        raw = dict(raw, seed=args.seed)
    cfg = bench.with_solver(raw, mode="cube" if args.baseline_cube else None, attitude_approx=args.attitude_approx)
    models = bench.load_models(args.models_dir, cfg.geometry, cfg.solver.mode)
    result = bench.run(cfg, models)
    tag = "cube" if cfg.solver.mode == "cube" else "full"
    report = bench.save_plan(result, cfg, args.out, args.timing, prefix=f"{tag}_")
    print(json.dumps({k: report[k] for k in ("mode", "total", "iterations", "converged", "dense_ok")}, sort_keys=True))
    return EXIT_OK if report["converged"] and report["dense_ok"] else EXIT_NOT_CONVERGED


def _suite_models(args, geom):
    return bench.load_models(args.models_dir, geom, "full")


def cmd_bench_incline(args) -> int:
    base = _load_raw(args.scenario or SCENARIO_DIR / "incline.json")
    if args.seed is not None:
        base["seed"] = args.seed
    geom = load_config(args.scenario or SCENARIO_DIR / "incline.json").geometry
    angles = [float(a) for a in args.angles.split(",")] if args.angles else bench.INCLINE_ANGLES
    rows = bench.bench_incline(base, _suite_models(args, geom), angles, args.timing, args.attitude_approx,
                               args.out if args.save_runs else None, log=lambda r: log.info("%s", r))
    digest = bench.suite_hash(base, {"suite": "incline", "angles": list(angles), "attitude": args.attitude_approx})
    bench.write_table(Path(args.out) / "incline.csv", bench.INCLINE_COLUMNS, rows, bench.stamp(digest, base.get("seed", 0)))
    ok = all(r.get("converged_full") and r.get("converged_cube") for r in rows)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_bench_pickplace(args) -> int:
    path = args.scenario or SCENARIO_DIR / "pickplace.json"
    base = _load_raw(path)
    geom = load_config(path).geometry
    first = args.seed if args.seed is not None else 0
    seeds = list(range(first, first + args.n_seeds))
    rows = bench.bench_pickplace(base, _suite_models(args, geom), seeds, args.timing, args.attitude_approx,
                                 args.out if args.save_runs else None, log=lambda r: log.info("%s", r))
    digest = bench.suite_hash(base, {"suite": "pickplace", "seeds": seeds, "attitude": args.attitude_approx})
    summary_row = {"seed": "mean", "reduction": bench.mean_reduction(rows)}
    bench.write_table(Path(args.out) / "pickplace.csv", bench.PICKPLACE_COLUMNS, rows + [summary_row],
                      bench.stamp(digest, first))
    ok = all(r.get("converged_full") and r.get("converged_cube") for r in rows)
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_workspace_report(args) -> int:
    geom = _geometry(args)
    model_path = Path(args.models_dir) / bench.MODEL_FILES["workspace"]
    model = WorkspaceModel.load(model_path) if model_path.exists() else None
    seed = args.seed if args.seed is not None else 0
    rep = bench.workspace_report(geom, model, args.samples, seed)
    digest = config_hash({"geometry": geom.to_dict(), "samples": args.samples})
    bench.write_json(Path(args.out) / "workspace_report.json", {"config_hash": digest, "seed": seed, **rep})
    print(json.dumps({k: v for k, v in rep.items() if k.startswith(("V_", "ratio"))}, sort_keys=True))
    return EXIT_OK


def cmd_export_plot(args) -> int:
    written = []
    for prefix in args.results:
        written += bench.export_plotdata(prefix, args.out)
    for p in written:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deltagrasp", description="Aerial delta-arm grasp planning")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=False):
        sp.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        sp.add_argument("--models-dir", default="models", help="directory holding trained model files")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--timing", action="store_true", help="record wall-clock times (outputs stop being byte-reproducible)")

    sp = sub.add_parser("train", help="train the workspace classifier or the FK surrogate")
    common(sp)
    sp.add_argument("--model", choices=("workspace", "fk"), required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--samples", type=int, default=None, help="training set size")
    sp.set_defaults(func=cmd_train, seed=0)

    sp = sub.add_parser("plan", help="plan one scenario")
    common(sp, scenario_required=True)
    sp.add_argument("--baseline-cube", action="store_true", help="use the inscribed-cube workspace instead")
    sp.add_argument("--attitude-approx", choices=("full", "identity"), default=None)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("bench-incline", help="inclined-grasp sweep, full vs cube")
    common(sp)
    sp.add_argument("--angles", default=None, help="comma-separated degrees (default 0,10,...,60)")
    sp.add_argument("--attitude-approx", choices=("full", "identity"), default=None)
    sp.add_argument("--save-runs", action="store_true", help="also write per-run trajectory and report files")
    sp.set_defaults(func=cmd_bench_incline)

    sp = sub.add_parser("bench-pickplace", help="two-target pick-and-place over random seeds")
    common(sp)
    sp.add_argument("--n-seeds", type=int, default=bench.PICKPLACE_SEEDS)
    sp.add_argument("--attitude-approx", choices=("full", "identity"), default=None)
    sp.add_argument("--save-runs", action="store_true")
    sp.set_defaults(func=cmd_bench_pickplace)

    sp = sub.add_parser("workspace-report", help="Monte-Carlo, classifier and inscribed-cube volumes")
    common(sp)
    sp.add_argument("--samples", type=int, default=1_000_000)
    sp.set_defaults(func=cmd_workspace_report)

    sp = sub.add_parser("export-plot", help="figure CSVs from saved plan results")
    sp.add_argument("results", nargs="+", help="result prefix, e.g. out/full_ for out/full_trajectory.csv")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoPath as exc:
        print(f"no path: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, planner.ModelMissing) as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
