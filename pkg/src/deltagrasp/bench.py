"""Benchmark suites, model files, result writers and plot-data export.

Every file written here carries the config hash and seed, and is written to
a temporary name then renamed. Wall-clock fields are filled only when timing
is requested, so reruns without timing are byte-identical.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import minco, planner
from .fk_net import FkModel
from .kinematics import DeltaGeometry, largest_inscribed_cube, workspace_volume_monte_carlo
from .scenario import Config, config_hash, parse_config
from .workspace import WorkspaceModel, mlp_volume

SCHEMA_VERSION = 1
MODEL_FILES = {"workspace": "workspace.dgpn", "fk": "fk.dgpn"}
INCLINE_ANGLES = (0, 10, 20, 30, 40, 50, 60)
PICKPLACE_BOX = (np.array([-1.5, -1.5, 0.6]), np.array([1.5, 1.5, 1.2]))
PICKPLACE_SEEDS = 5


# ---------------------------------------------------------------- files


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    write_text(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_table(path, columns, rows, comment: str) -> None:
    lines = [f"# {comment}", ",".join(columns)]
    for row in rows:
        lines.append(",".join(_cell(row.get(c)) for c in columns))
    write_text(path, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def stamp(digest: str, seed: int) -> str:
    return f"schema={SCHEMA_VERSION} config_hash={digest} seed={seed}"


# ---------------------------------------------------------------- models


def load_models(models_dir, geom: DeltaGeometry, mode: str = "full") -> planner.Models:
    """Inscribed cube always; trained networks when ``mode`` is ``full``."""
    models = planner.Models(cube=largest_inscribed_cube(geom))
    if mode == "full":
        d = Path(models_dir)
        for key in MODEL_FILES:
            if not (d / MODEL_FILES[key]).exists():
                raise planner.ModelMissing(f"{d / MODEL_FILES[key]} not found; run `deltagrasp train` first")
        models.workspace = WorkspaceModel.load(d / MODEL_FILES["workspace"])
        models.fk = FkModel.load(d / MODEL_FILES["fk"])
        for m in (models.workspace, models.fk):
            if m.geom != geom:
                raise ValueError("model was trained for a different arm geometry")
    return models


# ---------------------------------------------------------------- planning


@dataclass
class BenchmarkResult:
    scenario_id: str
    mode: str
    total_time: float
    cost: float
    arm_range: tuple
    grasp_distance: float | None
    grasp_speed: float | None
    converged: bool
    wall_ms: float | None
    seed: int


def with_solver(raw: dict, **solver) -> Config:
    raw = copy.deepcopy(raw)
    raw.setdefault("solver", {}).update({k: v for k, v in solver.items() if v is not None})
    return parse_config(raw)


def run(config: Config, models: planner.Models) -> planner.PlanResult:
    return planner.plan(config, models)


def summarize(result: planner.PlanResult, scenario_id: str, seed: int, timing: bool) -> BenchmarkResult:
    grasp = result.grasp
    return BenchmarkResult(
        scenario_id=scenario_id,
        mode="full" if result.problem.mode == "full" else "cube-baseline",
        total_time=float(result.trajectory.total_time),
        cost=result.report.total,
        arm_range=tuple(float(v) for v in planner.arm_ranges(result.trajectory, result.problem)),
        grasp_distance=max(g["distance"] for g in grasp) if grasp else None,
        grasp_speed=max(g["speed"] for g in grasp) if grasp else None,
        converged=result.report.converged,
        wall_ms=result.report.wall_time_ms if timing else None,
        seed=seed,
    )


def report_dict(result: planner.PlanResult, config: Config, timing: bool) -> dict:
    rep = result.report
    out = {
        "schema": SCHEMA_VERSION,
        "config_hash": config.digest,
        "seed": config.seed,
        "mode": result.problem.mode,
        "attitude_approx": result.problem.solver.attitude_approx,
        **rep.parts(),
        "total": rep.total,
        "iterations": rep.iterations,
        "converged": rep.converged,
        "solver_message": rep.message,
        "max_dense_violations": rep.max_dense_violations,
        "dense_ok": planner.violations_ok(rep.max_dense_violations),
        "wall_time_ms": rep.wall_time_ms if timing else None,
        "initial_cost": result.initial_cost,
        "durations": result.trajectory.durations,
        "grasp_waypoints": result.problem.grasp_waypoints,
        "grasp": result.grasp,
        "targets": [{"position": t.position, "orientation": t.orientation} for t in result.problem.spec.targets],
        "t_BA": result.problem.spec.t_ba,
        "config": config.raw,
    }
    return out


def save_plan(result: planner.PlanResult, config: Config, out_dir, timing: bool = False, prefix: str = "") -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = report_dict(result, config, timing)
    extra = [g["time"] for g in result.grasp]
    minco.write_csv(result.trajectory, out_dir / f"{prefix}trajectory.csv", 100.0, stamp(config.digest, config.seed), extra)
    write_json(out_dir / f"{prefix}report.json", report)
    return report


# ---------------------------------------------------------------- suites


def incline_raw(base: dict, angle_deg: float) -> dict:
    raw = copy.deepcopy(base)
    a = math.radians(angle_deg)
    for t in raw["scenario"]["targets"]:
        t["orientation"] = [math.sin(a), 0.0, math.cos(a)]
    return raw


def _paired(raw: dict, models: planner.Models, scenario_id: str, timing: bool, attitude=None, out_dir=None):
    out = {}
    for mode in ("full", "cube"):
        cfg = with_solver(raw, mode=mode, attitude_approx=attitude)
        try:
            res = run(cfg, models)
        except Exception as exc:  # recorded, the suite continues
            out[mode] = (None, f"{type(exc).__name__}: {exc}")
            continue
        if out_dir is not None:
            save_plan(res, cfg, out_dir, timing, prefix=f"{scenario_id}_{mode}_")
        out[mode] = (summarize(res, scenario_id, cfg.seed, timing), None)
    return out


INCLINE_COLUMNS = (
    "angle_deg", "T_full", "T_cube", "dt",
    "range_x_full", "range_y_full", "range_z_full", "range_x_cube", "range_y_cube", "range_z_cube",
    "cost_full", "cost_cube", "grasp_distance_full", "grasp_speed_full",
    "converged_full", "converged_cube", "wall_ms_full", "wall_ms_cube", "error",
)


def _row_from_pair(pair) -> dict:
    row = {}
    errors = []
    for mode in ("full", "cube"):
        res, err = pair[mode]
        if err:
            errors.append(f"{mode}: {err}")
            row[f"converged_{mode}"] = False
            continue
        row[f"T_{mode}"] = res.total_time
        row[f"cost_{mode}"] = res.cost
        for k, axis in enumerate("xyz"):
            row[f"range_{axis}_{mode}"] = res.arm_range[k]
        row[f"converged_{mode}"] = res.converged
        row[f"wall_ms_{mode}"] = res.wall_ms
        if mode == "full":
            row["grasp_distance_full"] = res.grasp_distance
            row["grasp_speed_full"] = res.grasp_speed
    if "T_full" in row and "T_cube" in row:
        row["dt"] = row["T_cube"] - row["T_full"]
    row["error"] = "; ".join(errors).replace(",", " ") if errors else None
    return row


def bench_incline(base: dict, models: planner.Models, angles=INCLINE_ANGLES, timing: bool = False,
                  attitude=None, out_dir=None, log=None) -> list[dict]:
    rows = []
    for angle in angles:
        pair = _paired(incline_raw(base, angle), models, f"incline{int(angle):02d}", timing, attitude, out_dir)
        row = {"angle_deg": angle, **_row_from_pair(pair)}
        rows.append(row)
        if log:
            log(row)
    return rows


def pickplace_raw(base: dict, seed: int) -> dict:
    """Two level grasp targets drawn uniformly from the sampling box."""
    raw = copy.deepcopy(base)
    rng = np.random.default_rng(seed)
    lo, hi = PICKPLACE_BOX
    pts = rng.uniform(lo, hi, size=(2, 3))
    raw["scenario"]["targets"] = [{"position": [float(v) for v in p], "orientation": [0.0, 0.0, 1.0]} for p in pts]
    raw["seed"] = int(seed)
    return raw


PICKPLACE_COLUMNS = (
    "seed", "T_full", "T_cube", "cost_full", "cost_cube", "reduction",
    "range_x_full", "range_y_full", "range_z_full", "range_x_cube", "range_y_cube", "range_z_cube",
    "grasp_distance_full", "grasp_speed_full", "converged_full", "converged_cube",
    "wall_ms_full", "wall_ms_cube", "error",
)


def bench_pickplace(base: dict, models: planner.Models, seeds=range(PICKPLACE_SEEDS), timing: bool = False,
                    attitude=None, out_dir=None, log=None) -> list[dict]:
    rows = []
    for seed in seeds:
        pair = _paired(pickplace_raw(base, seed), models, f"pickplace{seed}", timing, attitude, out_dir)
        row = {"seed": seed, **_row_from_pair(pair)}
        if "cost_full" in row and "cost_cube" in row:
            row["reduction"] = 1.0 - row["cost_full"] / row["cost_cube"]
        rows.append(row)
        if log:
            log(row)
    return rows


def mean_reduction(rows) -> float | None:
    vals = [r["reduction"] for r in rows if r.get("reduction") is not None]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------- workspace


def workspace_report(geom: DeltaGeometry, model: WorkspaceModel | None, n_samples: int = 1_000_000, seed: int = 0) -> dict:
    v_mc, se_mc = workspace_volume_monte_carlo(geom, n_samples, seed=seed)
    cube = largest_inscribed_cube(geom)
    out = {
        "V_mc_cm3": v_mc,
        "V_mc_se_cm3": se_mc,
        "V_cube_cm3": cube.volume_cm3,
        "cube": cube.to_dict(),
        "ratio_mc_over_cube": v_mc / cube.volume_cm3,
        "n_samples": n_samples,
        "geometry": geom.to_dict(),
    }
    if model is not None:
        v_mlp, se_mlp = mlp_volume(model, n_samples, seed=seed)
        out.update({
            "V_mlp_cm3": v_mlp,
            "V_mlp_se_cm3": se_mlp,
            "ratio_mlp_over_cube": v_mlp / cube.volume_cm3,
            "mlp_relative_error": abs(v_mlp - v_mc) / v_mc,
        })
    return out


# ---------------------------------------------------------------- plot data


def export_plotdata(result_prefix, out_dir) -> list[Path]:
    """Figure-ready CSVs from one saved plan (``<prefix>trajectory.csv`` + ``<prefix>report.json``).

    ``grasp.csv``: time, distance from the end-effector to the active target,
    end-effector speed and grasp/idle phase. ``ee_position.csv``: world and
    arm-frame end-effector position.
    """
    prefix = str(result_prefix)
    traj_path, rep_path = Path(prefix + "trajectory.csv"), Path(prefix + "report.json")
    for p in (traj_path, rep_path):
        if not p.exists():
            raise FileNotFoundError(p)
    report = json.loads(rep_path.read_text())
    cols, data, _ = minco.read_csv(traj_path)
    chan = minco.CSV_CHANNELS
    idx = {c: i for i, c in enumerate(cols)}
    stacks = [data[:, [idx[pre + c] for c in chan]] for pre in ("", "v", "a", "j")]
    t = data[:, 0]
    t_ba = np.asarray(report["t_BA"], float)
    identity = report.get("attitude_approx") == "identity"
    pe = np.empty((len(t), 3))
    ve = np.empty((len(t), 3))
    for k in range(len(t)):
        derivs = np.stack([s[k] for s in stacks])
        pe[k], ve[k], _ = planner.end_effector(derivs, t_ba, identity)

    durations = np.asarray(report["durations"], float)
    starts = np.concatenate([[0.0], np.cumsum(durations)])
    windows = [(starts[i - 1], starts[i]) for i in report["grasp_waypoints"]]
    grasp_times = [g["time"] for g in report["grasp"]]
    targets = [np.asarray(g["position"], float) for g in report["targets"]]
    rows_g, rows_p = [], []
    for k, tk in enumerate(t):
        phase = "grasp" if any(a <= tk <= b for a, b in windows) else "idle"
        row = {"t": tk, "ee_speed": float(np.linalg.norm(ve[k])), "phase": phase}
        if targets:
            active = next((j for j, tg in enumerate(grasp_times) if tk <= tg + 1e-12), len(targets) - 1)
            row["target"] = active
            row["distance"] = float(np.linalg.norm(pe[k] - targets[active]))
        rows_g.append(row)
        rows_p.append({"t": tk, "xw": pe[k, 0], "yw": pe[k, 1], "zw": pe[k, 2],
                       "xa": stacks[0][k, 3], "ya": stacks[0][k, 4], "za": stacks[0][k, 5]})
    out_dir = Path(out_dir)
    name = Path(prefix).name
    comment = stamp(report["config_hash"], report["seed"])
    files = [out_dir / f"{name}grasp.csv", out_dir / f"{name}ee_position.csv"]
    write_table(files[0], ("t", "distance", "ee_speed", "phase", "target"), rows_g, comment)
    write_table(files[1], ("t", "xw", "yw", "zw", "xa", "ya", "za"), rows_p, comment)
    return files


def result_rows_to_dicts(results) -> list[dict]:
    return [asdict(r) for r in results]


def suite_hash(raw: dict, extra: dict) -> str:
    return config_hash({"base": raw, **extra})
