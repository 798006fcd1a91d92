"""Scenario files: JSON with ``geometry``, ``scenario``, ``solver`` and ``seed``.

Parsing is strict; every problem is reported with the dotted path of the
offending field, e.g. ``scenario.targets[1].orientation``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import DeltaGeometry

DEFAULT_WEIGHTS = {
    "position": 1e4,
    "orientation": 1e3,
    "velocity": 1e2,
    "workspace": 1e4,
    "dynamics": 1e3,
    "collision": 1e4,
    "time": 1.0,
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class Target:
    position: np.ndarray
    orientation: np.ndarray
    segment: int | None = None  # waypoint index (1-based) where the grasp happens


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray


@dataclass
class ScenarioSpec:
    start: np.ndarray
    goal: np.ndarray
    start_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    goal_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start_acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    goal_acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    arm_start: np.ndarray | None = None  # arm frame; None -> neutral arm point
    arm_goal: np.ndarray | None = None
    targets: list[Target] = field(default_factory=list)
    obstacles: list[Box] = field(default_factory=list)
    v_max: float = 3.0
    a_max: float = 6.0
    e_o: float = 0.1
    t_ba: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -0.05]))
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    M: int | None = None
    N: int = 16
    d_safe: float = 0.1
    quad_radius: float = 0.15
    map_lo: np.ndarray | None = None
    map_hi: np.ndarray | None = None
    map_resolution: float = 0.1


@dataclass
class SolverConfig:
    max_iters: int = 3000
    gtol: float = 1e-5
    ftol: float = 1e-8
    mode: str = "full"  # or "cube"
    attitude_approx: str = "full"  # or "identity"
    grasp_time: str = "fixed"  # or "dense" (reporting only)
    box_penalty_scale: float = 0.002
    restarts: int = 2


@dataclass
class Config:
    geometry: DeltaGeometry
    scenario: ScenarioSpec
    solver: SolverConfig
    seed: int
    raw: dict

    @property
    def digest(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _vec(obj, path: str, n: int = 3) -> np.ndarray:
    if not isinstance(obj, (list, tuple)) or len(obj) != n:
        raise ConfigError(path, f"expected a list of {n} numbers")
    try:
        v = np.array([float(x) for x in obj])
    except (TypeError, ValueError):
        raise ConfigError(path, "entries must be numbers") from None
    if not np.all(np.isfinite(v)):
        raise ConfigError(path, "entries must be finite")
    return v


def _num(obj, path: str, lo: float | None = None, integer: bool = False):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError(path, "expected a number")
    if integer and int(obj) != obj:
        raise ConfigError(path, "expected an integer")
    if lo is not None and obj < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return int(obj) if integer else float(obj)


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown field")


_SCENARIO_KEYS = {
    "start", "goal", "targets", "obstacles", "limits", "weights", "M", "N", "e_o", "t_BA",
    "d_safe", "quad_radius", "map",
}


def _state(d, path):
    _check_keys(d, {"position", "velocity", "acceleration", "arm"}, path)
    if "position" not in d:
        raise ConfigError(f"{path}.position", "required")
    pos = _vec(d["position"], f"{path}.position")
    vel = _vec(d.get("velocity", [0, 0, 0]), f"{path}.velocity")
    acc = _vec(d.get("acceleration", [0, 0, 0]), f"{path}.acceleration")
    arm = None if d.get("arm") is None else _vec(d["arm"], f"{path}.arm")
    return pos, vel, acc, arm


def parse_scenario(d: dict, path: str = "scenario") -> ScenarioSpec:
    _check_keys(d, _SCENARIO_KEYS, path)
    for req in ("start", "goal"):
        if req not in d:
            raise ConfigError(f"{path}.{req}", "required")
    sp, sv, sa, sarm = _state(d["start"], f"{path}.start")
    gp, gv, ga, garm = _state(d["goal"], f"{path}.goal")
    spec = ScenarioSpec(start=sp, goal=gp, start_velocity=sv, goal_velocity=gv,
                        start_acceleration=sa, goal_acceleration=ga, arm_start=sarm, arm_goal=garm)
    targets = d.get("targets", [])
    if not isinstance(targets, list):
        raise ConfigError(f"{path}.targets", "expected a list")
    for i, t in enumerate(targets):
        tp = f"{path}.targets[{i}]"
        _check_keys(t, {"position", "orientation", "segment"}, tp)
        if "position" not in t:
            raise ConfigError(f"{tp}.position", "required")
        o = _vec(t.get("orientation", [0, 0, 1]), f"{tp}.orientation")
        if abs(np.linalg.norm(o) - 1.0) > 1e-6:
            raise ConfigError(f"{tp}.orientation", "must be a unit vector")
        seg = t.get("segment")
        if seg is not None:
            seg = _num(seg, f"{tp}.segment", lo=1, integer=True)
        spec.targets.append(Target(_vec(t["position"], f"{tp}.position"), o, seg))
    segs = [t.segment for t in spec.targets if t.segment is not None]
    if segs and (len(segs) != len(spec.targets) or any(b <= a for a, b in zip(segs, segs[1:]))):
        raise ConfigError(f"{path}.targets", "segments must be given for all targets and strictly increase")
    for i, b in enumerate(d.get("obstacles", [])):
        bp = f"{path}.obstacles[{i}]"
        _check_keys(b, {"min", "max"}, bp)
        lo, hi = _vec(b.get("min"), f"{bp}.min"), _vec(b.get("max"), f"{bp}.max")
        if np.any(hi <= lo):
            raise ConfigError(bp, "max must exceed min on every axis")
        spec.obstacles.append(Box(lo, hi))
    limits = d.get("limits", {})
    _check_keys(limits, {"v_max", "a_max"}, f"{path}.limits")
    spec.v_max = _num(limits.get("v_max", 3.0), f"{path}.limits.v_max", lo=1e-6)
    spec.a_max = _num(limits.get("a_max", 6.0), f"{path}.limits.a_max", lo=1e-6)
    weights = d.get("weights", {})
    _check_keys(weights, set(DEFAULT_WEIGHTS), f"{path}.weights")
    for k, v in weights.items():
        spec.weights[k] = _num(v, f"{path}.weights.{k}", lo=0.0)
    if d.get("M") is not None:
        spec.M = _num(d["M"], f"{path}.M", lo=1, integer=True)
    spec.N = _num(d.get("N", 16), f"{path}.N", lo=1, integer=True)
    spec.e_o = _num(d.get("e_o", 0.1), f"{path}.e_o", lo=0.0)
    spec.t_ba = _vec(d.get("t_BA", [0.0, 0.0, -0.05]), f"{path}.t_BA")
    spec.d_safe = _num(d.get("d_safe", 0.1), f"{path}.d_safe", lo=0.0)
    spec.quad_radius = _num(d.get("quad_radius", 0.15), f"{path}.quad_radius", lo=0.0)
    if "map" in d:
        m = d["map"]
        _check_keys(m, {"min", "max", "resolution"}, f"{path}.map")
        spec.map_lo = _vec(m.get("min"), f"{path}.map.min")
        spec.map_hi = _vec(m.get("max"), f"{path}.map.max")
        spec.map_resolution = _num(m.get("resolution", 0.1), f"{path}.map.resolution", lo=1e-3)
    if spec.M is not None:
        for i, t in enumerate(spec.targets):
            if t.segment is not None and t.segment > spec.M - 1:
                raise ConfigError(f"{path}.targets[{i}].segment", f"must be <= M-1 = {spec.M - 1}")
    return spec


def parse_solver(d: dict, path: str = "solver") -> SolverConfig:
    _check_keys(d, {"max_iters", "gtol", "ftol", "mode", "attitude_approx", "grasp_time", "box_penalty_scale", "restarts"}, path)
    s = SolverConfig()
    s.max_iters = _num(d.get("max_iters", s.max_iters), f"{path}.max_iters", lo=1, integer=True)
    s.gtol = _num(d.get("gtol", s.gtol), f"{path}.gtol", lo=0.0)
    s.ftol = _num(d.get("ftol", s.ftol), f"{path}.ftol", lo=0.0)
    s.box_penalty_scale = _num(d.get("box_penalty_scale", s.box_penalty_scale), f"{path}.box_penalty_scale", lo=1e-6)
    s.restarts = _num(d.get("restarts", s.restarts), f"{path}.restarts", lo=0, integer=True)
    for key, options in (("mode", ("full", "cube")), ("attitude_approx", ("full", "identity")), ("grasp_time", ("fixed", "dense"))):
        val = d.get(key, getattr(s, key))
        if val not in options:
            raise ConfigError(f"{path}.{key}", f"must be one of {options}")
        setattr(s, key, val)
    return s


def parse_config(raw: dict) -> Config:
    _check_keys(raw, {"geometry", "scenario", "solver", "seed"}, "")
    if "scenario" not in raw:
        raise ConfigError("scenario", "required")
    geom_raw = raw.get("geometry", {})
    _check_keys(geom_raw, set(DeltaGeometry().to_dict()), "geometry")
    try:
        geom = DeltaGeometry.from_dict(geom_raw) if geom_raw else DeltaGeometry()
    except (TypeError, ValueError) as exc:
        raise ConfigError("geometry", str(exc)) from None
    seed = _num(raw.get("seed", 0), "seed", lo=0, integer=True)
    return Config(geom, parse_scenario(raw["scenario"]), parse_solver(raw.get("solver", {})), seed, copy.deepcopy(raw))


def load_config(path) -> Config:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<json line {exc.lineno} col {exc.colno}>", exc.msg) from None
    return parse_config(raw)
