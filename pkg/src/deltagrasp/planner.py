"""Whole-body trajectory optimization for the quadrotor plus delta arm.

The trajectory has six channels: world position of the quadrotor body
(channels 0-2) and the arm-frame end-effector position (channels 3-5). The
world end-effector is ``p_b + R (t_BA + p_a)`` with ``R`` the zero-yaw
attitude implied by the thrust vector.

Decision variables are unconstrained: interior body waypoints, arm waypoint
variables (six reals per waypoint decoded through the FK surrogate, or plain
3-vectors in the inscribed-cube baseline) and log-durations.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import flatness, minco
from .fk_net import FkModel, theta_to_xi
from .jps import VoxelGrid, jps_path
from .kinematics import Cube, DeltaGeometry, forward_kinematics, is_reachable, near_reachable
from .scenario import Config, ScenarioSpec, SolverConfig
from .workspace import THRESHOLD, WorkspaceModel

NEUTRAL_THETA = (45.0, 45.0, 45.0)
SEGMENT_LENGTH = 0.75
M_RANGE = (3, 12)
MAP_MARGIN = 1.0

PENALTY_CLASSES = (
    "control_effort", "time", "position_task", "orientation_task", "velocity_task",
    "workspace", "dynamics", "collision",
)


class ModelMissing(RuntimeError):
    pass


class NonFiniteCost(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite value in cost term '{term}'")
        self.term = term


def smooth(x):
    """Cubic hinge ``max(x, 0)^3``: zero for x <= 0 and C2 at the origin."""
    return np.maximum(x, 0.0) ** 3


def smooth_grad(x):
    return 3.0 * np.maximum(x, 0.0) ** 2


@dataclass
class Models:
    workspace: WorkspaceModel | None = None
    fk: FkModel | None = None
    cube: Cube | None = None


@dataclass
class Problem:
    """A scenario resolved into everything the cost function needs."""

    spec: ScenarioSpec
    solver: SolverConfig
    geom: DeltaGeometry
    models: Models
    M: int
    head: minco.BoundaryState
    tail: minco.BoundaryState
    grasp_waypoints: list[int]  # 1-based waypoint index per target

    @property
    def N(self) -> int:
        return self.spec.N

    @property
    def mode(self) -> str:
        return self.solver.mode

    @property
    def arm_width(self) -> int:
        return 6 if self.mode == "full" else 3


@dataclass
class DecisionVars:
    q_b: np.ndarray  # (M-1, 3)
    arm: np.ndarray  # (M-1, 6) joint variables, or (M-1, 3) points in cube mode
    tau: np.ndarray  # (M,)

    @property
    def durations(self) -> np.ndarray:
        return np.exp(self.tau)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.q_b.ravel(), self.arm.ravel(), self.tau.ravel()])

    @classmethod
    def unpack(cls, problem: Problem, x) -> "DecisionVars":
        x = np.asarray(x, dtype=float)
        m = problem.M
        nq, na = 3 * (m - 1), problem.arm_width * (m - 1)
        if x.shape != (nq + na + m,):
            raise ValueError(f"expected {nq + na + m} variables, got {x.shape}")
        return cls(x[:nq].reshape(m - 1, 3), x[nq:nq + na].reshape(m - 1, problem.arm_width), x[nq + na:].copy())


@dataclass
class PenaltyReport:
    control_effort: float = 0.0
    time: float = 0.0
    position_task: float = 0.0
    orientation_task: float = 0.0
    velocity_task: float = 0.0
    workspace: float = 0.0
    dynamics: float = 0.0
    collision: float = 0.0
    total: float = 0.0
    iterations: int = 0
    converged: bool = False
    message: str = ""
    max_dense_violations: dict = field(default_factory=dict)
    wall_time_ms: float = 0.0

    def parts(self) -> dict:
        return {k: getattr(self, k) for k in PENALTY_CLASSES}

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- problem setup


def neutral_arm_point(geom: DeltaGeometry) -> np.ndarray:
    return forward_kinematics(geom, np.array(NEUTRAL_THETA))


def default_segment_count(length: float) -> int:
    return int(min(max(math.ceil(length / SEGMENT_LENGTH), M_RANGE[0]), M_RANGE[1]))


def body_targets(spec: ScenarioSpec, arm_point) -> list[np.ndarray]:
    """Body positions that would put a level end-effector on each target."""
    return [t.position - (spec.t_ba + arm_point) for t in spec.targets]


def build_grid(spec: ScenarioSpec, points) -> VoxelGrid:
    pts = np.asarray(points, dtype=float)
    if spec.map_lo is not None:
        lo, hi = spec.map_lo, spec.map_hi
    else:
        lo, hi = pts.min(axis=0) - MAP_MARGIN, pts.max(axis=0) + MAP_MARGIN
    boxes = [(b.lo, b.hi) for b in spec.obstacles]
    return VoxelGrid.from_boxes(lo, hi, spec.map_resolution, boxes, inflate=spec.quad_radius)


def reference_path(spec: ScenarioSpec, arm_point) -> np.ndarray:
    points = [spec.start, *body_targets(spec, arm_point), spec.goal]
    return jps_path(build_grid(spec, points), points)


def _arc_lengths(path: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])


def _point_at(path: np.ndarray, s_cum: np.ndarray, s: float) -> np.ndarray:
    return np.array([np.interp(s, s_cum, path[:, k]) for k in range(3)])


def make_problem(config: Config, models: Models, path: np.ndarray | None = None) -> tuple[Problem, np.ndarray]:
    """Resolve segment count, boundary states and grasp waypoints.

    Returns the problem and the reference polyline (JPS unless ``path`` is given).
    """
    spec, solver, geom = config.scenario, config.solver, config.geometry
    if solver.mode == "full" and (models.fk is None or models.workspace is None):
        raise ModelMissing("full mode needs both the workspace and the FK model")
    if solver.mode == "cube" and models.cube is None:
        raise ModelMissing("cube mode needs an inscribed cube")
    neutral = neutral_arm_point(geom)
    if path is None:
        path = reference_path(spec, neutral)
    length = float(_arc_lengths(path)[-1])
    m = spec.M if spec.M is not None else default_segment_count(length)
    m = max(m, len(spec.targets) + 1)
    grasp = _grasp_indices(spec, path, neutral, m)
    arm_start = neutral if spec.arm_start is None else spec.arm_start
    arm_goal = neutral if spec.arm_goal is None else spec.arm_goal
    zero = np.zeros(3)
    head = minco.BoundaryState(
        np.concatenate([spec.start, arm_start]),
        np.concatenate([spec.start_velocity, zero]),
        np.concatenate([spec.start_acceleration, zero]),
    )
    tail = minco.BoundaryState(
        np.concatenate([spec.goal, arm_goal]),
        np.concatenate([spec.goal_velocity, zero]),
        np.concatenate([spec.goal_acceleration, zero]),
    )
    return Problem(spec, solver, geom, models, m, head, tail, grasp), path


def _grasp_indices(spec: ScenarioSpec, path, arm_point, m: int) -> list[int]:
    if not spec.targets:
        return []
    if spec.targets[0].segment is not None:
        idx = [t.segment for t in spec.targets]
        if idx[-1] > m - 1:
            raise ValueError(f"grasp waypoint {idx[-1]} exceeds M-1 = {m - 1}")
        return idx
    s_cum = _arc_lengths(path)
    length = s_cum[-1]
    out, prev = [], 0
    for k, p in enumerate(body_targets(spec, arm_point)):
        s = s_cum[int(np.argmin(np.linalg.norm(path - p, axis=1)))]
        i = int(round(s / length * m)) if length > 0 else 1
        i = min(max(i, prev + 1), m - 1 - (len(spec.targets) - 1 - k))
        out.append(i)
        prev = i
    return out


def init_decision_vars(problem: Problem, path: np.ndarray) -> DecisionVars:
    """Arc-length waypoints with each grasp waypoint pinned to its target's path point.

    Waypoints between pinned anchors are spread uniformly in arc length.
    Durations follow the segment lengths at half the speed limit.
    """
    spec, m = problem.spec, problem.M
    path = np.asarray(path, dtype=float)
    s_cum = _arc_lengths(path)
    anchors_i, anchors_s = [0], [0.0]
    for i, p in zip(problem.grasp_waypoints, body_targets(spec, neutral_arm_point(problem.geom))):
        anchors_i.append(i)
        anchors_s.append(max(float(s_cum[int(np.argmin(np.linalg.norm(path - p, axis=1)))]), anchors_s[-1]))
    anchors_i.append(m)
    anchors_s.append(float(s_cum[-1]))
    s_way = np.interp(np.arange(m + 1), anchors_i, anchors_s)
    pts = np.array([_point_at(path, s_cum, s) for s in s_way])
    v_init = 0.5 * spec.v_max
    seg_len = np.maximum(np.linalg.norm(np.diff(pts, axis=0), axis=1), 0.05)
    tau = np.log(seg_len / v_init)
    if problem.mode == "full":
        arm = np.tile(theta_to_xi(np.array(NEUTRAL_THETA)), (m - 1, 1))
    else:
        arm = np.tile(neutral_arm_point(problem.geom), (m - 1, 1))
    return DecisionVars(pts[1:-1].copy(), arm, tau)


# ---------------------------------------------------------------- cost


@dataclass
class _Decoded:
    traj: minco.Trajectory
    T: np.ndarray
    arm_points: np.ndarray
    arm_jac: np.ndarray | None


def decode(problem: Problem, dv: DecisionVars) -> _Decoded:
    T = dv.durations
    jac = None
    if problem.mode == "full":
        if problem.models.fk is None:
            raise ModelMissing("FK model required in full mode")
        if problem.M > 1:
            arm, jac = problem.models.fk.map_xi_to_point(dv.arm)
        else:
            arm = np.zeros((0, 3))
    else:
        arm = dv.arm
    q = np.concatenate([dv.q_b, arm], axis=1)
    return _Decoded(minco.construct(q, T, problem.head, problem.tail), T, arm, jac)


def end_effector(derivs: np.ndarray, t_ba, identity: bool = False):
    """World end-effector position and velocity from the (4, 6) derivative stack.

    Also returns intermediates needed for the gradient.
    """
    pb, vb, ab, jb = derivs[0, :3], derivs[1, :3], derivs[2, :3], derivs[3, :3]
    pa, va = derivs[0, 3:], derivs[1, 3:]
    f = flatness.thrust(ab)
    z, n, pz = flatness.normalize(f)
    if identity:
        r, dr, d2r = np.eye(3), np.zeros((3, 3, 3)), np.zeros((3, 3, 3, 3))
    else:
        r, dr, d2r = flatness.rotation(z)
    w = t_ba + pa
    zdot = pz @ jb
    a_w = np.einsum("ijk,j->ik", dr, w)  # column k: dR_k w
    pe = pb + r @ w
    ve = vb + a_w @ zdot + r @ va
    ctx = dict(f=f, z=z, n=n, pz=pz, r=r, dr=dr, d2r=d2r, w=w, zdot=zdot, a_w=a_w, jb=jb, va=va)
    return pe, ve, ctx


def _task_terms(derivs, target, spec: ScenarioSpec, identity: bool):
    """Position, orientation and velocity task costs with d/d(derivs) of shape (4, 6)."""
    wts = spec.weights
    pe, ve, c = end_effector(derivs, spec.t_ba, identity)
    g = np.zeros((4, 6))
    g_z = np.zeros(3)
    g_f = np.zeros(3)

    e = pe - target.position
    j_pos = wts["position"] * float(e @ e)
    g_pe = 2.0 * wts["position"] * e
    g[0, :3] += g_pe
    g[0, 3:] += c["r"].T @ g_pe
    g_z += c["a_w"].T @ g_pe

    o = target.orientation
    u = c["f"] - c["n"] * o
    x_o = float(u @ u) - spec.e_o**2
    j_ori = wts["orientation"] * float(smooth(x_o))
    g_f += wts["orientation"] * float(smooth_grad(x_o)) * 2.0 * (u - c["z"] * float(o @ u))

    s2 = float(ve @ ve)
    j_vel = wts["velocity"] * float(smooth(s2))
    g_ve = wts["velocity"] * float(smooth_grad(s2)) * 2.0 * ve
    dr, d2r, zdot = c["dr"], c["d2r"], c["zdot"]
    b_z = np.einsum("ijk,k->ij", dr, zdot)  # sum_k zdot_k dR_k
    g[1, :3] += g_ve
    g[1, 3:] += c["r"].T @ g_ve
    g[0, 3:] += b_z.T @ g_ve
    g_zdot = c["a_w"].T @ g_ve
    g_z += np.einsum("i,ijk,j->k", g_ve, dr, c["va"])
    g_z += np.einsum("i,ijab,j,b->a", g_ve, d2r, c["w"], zdot)

    # zdot = Pz jb with Pz = (I - z z^T)/n, z = f/n
    z, n, pz, jb = c["z"], c["n"], c["pz"], c["jb"]
    dzdot_df = -np.outer(zdot, z) / n - (float(z @ jb) * pz + np.outer(z, pz @ jb)) / n
    g_f += pz @ g_z + dzdot_df.T @ g_zdot
    g[2, :3] += g_f
    g[3, :3] += pz @ g_zdot
    return (j_pos, j_ori, j_vel), g, (pe, ve)


def _sample_grid(traj: minco.Trajectory, n: int):
    m = traj.n_pieces
    seg = np.repeat(np.arange(m), n)
    frac = np.tile(np.arange(n) / n, m)
    return seg, frac * traj.durations[seg], frac


def evaluate_cost(dv: DecisionVars, problem: Problem, need_grad: bool = True):
    """Total cost, its gradient as ``DecisionVars`` (or None) and a ``PenaltyReport``."""
    spec, wts = problem.spec, problem.spec.weights
    dec = decode(problem, dv)
    traj, T = dec.traj, dec.T
    rep = PenaltyReport()

    energy, g_c, g_t = minco.jerk_energy_grad(traj)
    rep.control_effort = energy
    rep.time = wts["time"] * float(T.sum())
    g_t = g_t + wts["time"]

    seg, tloc, frac = _sample_grid(traj, problem.N)
    p0, p1, p2 = (traj.piece_eval(seg, tloc, k) for k in range(3))
    g0, g1, g2 = np.zeros_like(p0), np.zeros_like(p0), np.zeros_like(p0)

    # dynamic limits
    v, a = p1[:, :3], p2[:, :3]
    xv = np.einsum("ij,ij->i", v, v) - spec.v_max**2
    xa = np.einsum("ij,ij->i", a, a) - spec.a_max**2
    rep.dynamics = wts["dynamics"] * float(smooth(xv).sum() + smooth(xa).sum())
    g1[:, :3] += wts["dynamics"] * (smooth_grad(xv) * 2.0)[:, None] * v
    g2[:, :3] += wts["dynamics"] * (smooth_grad(xa) * 2.0)[:, None] * a

    # clearance to inflated boxes
    pb = p0[:, :3]
    col = 0.0
    for box in spec.obstacles:
        d = pb - np.clip(pb, box.lo - spec.quad_radius, box.hi + spec.quad_radius)
        x = spec.d_safe**2 - np.einsum("ij,ij->i", d, d)
        col += float(smooth(x).sum())
        g0[:, :3] += wts["collision"] * (smooth_grad(x) * -2.0)[:, None] * d
    rep.collision = wts["collision"] * col

    # arm workspace
    pa = p0[:, 3:]
    if problem.mode == "full":
        if problem.models.workspace is None:
            raise ModelMissing("workspace model required in full mode")
        prob, dprob = problem.models.workspace.feasibility_grad(pa)
        x = THRESHOLD - prob
        rep.workspace = wts["workspace"] * float(smooth(x).sum())
        g0[:, 3:] -= wts["workspace"] * smooth_grad(x)[:, None] * dprob
    else:
        cube, ell = problem.models.cube, problem.solver.box_penalty_scale
        d = pa - np.clip(pa, cube.lo, cube.hi)
        x = np.einsum("ij,ij->i", d, d) / ell**2
        rep.workspace = wts["workspace"] * float(smooth(x).sum())
        g0[:, 3:] += wts["workspace"] * (smooth_grad(x) * 2.0 / ell**2)[:, None] * d

    gc_s, gt_s = traj.accumulate(seg, tloc, frac, [g0, g1, g2])
    g_c = g_c + gc_s
    g_t = g_t + gt_s

    identity = problem.solver.attitude_approx == "identity"
    for i, target in zip(problem.grasp_waypoints, spec.targets):
        s = np.array([i - 1])
        te = T[s]
        derivs = np.stack([traj.piece_eval(s, te, k)[0] for k in range(4)])
        (jp, jo, jv), gd, _ = _task_terms(derivs, target, spec, identity)
        rep.position_task += jp
        rep.orientation_task += jo
        rep.velocity_task += jv
        gc_k, gt_k = traj.accumulate(s, te, np.ones(1), [gd[k][None, :] for k in range(4)])
        g_c = g_c + gc_k
        g_t = g_t + gt_k

    parts = rep.parts()
    for name, val in parts.items():
        if not np.isfinite(val):
            raise NonFiniteCost(name)
    rep.total = float(sum(parts.values()))
    if not need_grad:
        return rep.total, None, rep

    g_q, g_T = traj.propagate_gradient(g_c, g_t)
    if not (np.all(np.isfinite(g_q)) and np.all(np.isfinite(g_T))):
        raise NonFiniteCost("gradient")
    if problem.mode == "full" and problem.M > 1:
        g_arm = np.einsum("nk,nkj->nj", g_q[:, 3:], dec.arm_jac)
    else:
        g_arm = g_q[:, 3:].copy()
    grad = DecisionVars(g_q[:, :3].copy(), g_arm, g_T * T)
    return rep.total, grad, rep


# ---------------------------------------------------------------- optimization


@dataclass
class PlanResult:
    trajectory: minco.Trajectory
    variables: DecisionVars
    report: PenaltyReport
    problem: Problem
    path: np.ndarray
    initial_cost: float
    grasp: list = field(default_factory=list)


def optimize(dv0: DecisionVars, problem: Problem, path: np.ndarray | None = None) -> PlanResult:
    """L-BFGS-B (strong-Wolfe line search) from ``dv0``; returns the best iterate.

    A run that stops on the gradient or relative-decrease test counts as
    converged. It is then restarted from its best point with fresh curvature
    memory while the remaining iteration budget lasts and a restart still
    lowers the cost by more than ``ftol`` (relative). Abnormal line-search exits also restart from the best point,
    at most ``solver.restarts`` times in a row. Overflowing trial points are
    reported to the line search as a huge cost.
    """
    t0 = time.perf_counter()
    solver = problem.solver
    best = {"f": np.inf, "x": dv0.pack()}

    def fun(x):
        try:
            with np.errstate(over="raise", invalid="raise"):
                f, g, _ = evaluate_cost(DecisionVars.unpack(problem, x), problem)
        except (NonFiniteCost, minco.SingularSystem, FloatingPointError):
            return 1e300, np.zeros_like(x)
        if f < best["f"]:
            best["f"], best["x"] = f, x.copy()
        return f, g.pack()

    f0 = fun(best["x"])[0]
    if f0 >= 1e300:
        raise NonFiniteCost("initialization")
    iterations, converged, message, failures = 0, False, "", 0
    while iterations < solver.max_iters:
        start_f = best["f"]
        res = minimize(
            fun, best["x"], jac=True, method="L-BFGS-B",
            options={"maxiter": solver.max_iters - iterations, "ftol": solver.ftol, "gtol": solver.gtol, "maxcor": 20},
        )
        iterations += int(res.nit)
        message = str(res.message)
        gain = (start_f - best["f"]) / max(abs(start_f), abs(best["f"]), 1.0)
        if res.success:
            converged, failures = True, 0
            if gain <= solver.ftol:
                break
        elif "ABNORMAL" in message.upper():
            failures += 1
            if failures > solver.restarts:
                break
        else:
            break
    dv = DecisionVars.unpack(problem, best["x"])
    _, _, rep = evaluate_cost(dv, problem, need_grad=False)
    traj = decode(problem, dv).traj
    rep.iterations = iterations
    rep.converged = converged
    rep.message = message
    grasp = grasp_residuals(traj, problem)
    rep.max_dense_violations = dense_check(traj, problem, dv)
    rep.wall_time_ms = (time.perf_counter() - t0) * 1e3
    return PlanResult(traj, dv, rep, problem, path if path is not None else np.zeros((0, 3)), f0, grasp)


def baseline_cube_mode(dv0: DecisionVars, problem: Problem, path: np.ndarray | None = None) -> PlanResult:
    if problem.mode != "cube":
        raise ValueError("problem was not built in cube mode")
    return optimize(dv0, problem, path)


def plan(config: Config, models: Models) -> PlanResult:
    problem, path = make_problem(config, models)
    return optimize(init_decision_vars(problem, path), problem, path)


# ---------------------------------------------------------------- post-analysis


def grasp_time(traj: minco.Trajectory, segment: int, target=None, spec: ScenarioSpec | None = None,
               mode: str = "fixed", n: int = 16, identity: bool = False) -> float:
    """Within-piece grasp time for the piece ending at waypoint ``segment`` (1-based).

    ``fixed`` returns the piece end. ``dense`` searches ``n + 1`` evenly spaced
    times (ends included) for the smallest end-effector distance to the target.
    """
    i = segment - 1
    big_t = float(traj.durations[i])
    if mode == "fixed":
        return big_t
    if target is None or spec is None:
        raise ValueError("dense mode needs the target and the scenario")
    ts = np.linspace(0.0, big_t, n + 1)
    dist = [np.linalg.norm(_ee_at(traj, i, t, spec.t_ba, identity)[0] - target.position) for t in ts]
    return float(ts[int(np.argmin(dist))])


def _ee_at(traj, i, t, t_ba, identity=False):
    s, tt = np.array([i]), np.array([t])
    derivs = np.stack([traj.piece_eval(s, tt, k)[0] for k in range(4)])
    return end_effector(derivs, t_ba, identity)


def end_effector_track(traj: minco.Trajectory, times, t_ba, identity: bool = False):
    """World end-effector position and velocity at each of ``times``."""
    seg, tloc = traj.locate(np.asarray(times, dtype=float))
    pe = np.empty((len(seg), 3))
    ve = np.empty((len(seg), 3))
    for k, (i, t) in enumerate(zip(seg, tloc)):
        pe[k], ve[k], _ = _ee_at(traj, int(i), float(t), t_ba, identity)
    return pe, ve


def grasp_residuals(traj: minco.Trajectory, problem: Problem) -> list[dict]:
    spec = problem.spec
    identity = problem.solver.attitude_approx == "identity"
    out = []
    for i, target in zip(problem.grasp_waypoints, spec.targets):
        t_loc = grasp_time(traj, i, target, spec, problem.solver.grasp_time, problem.N, identity)
        pe, ve, c = _ee_at(traj, i - 1, t_loc, spec.t_ba, identity)
        cosang = float(np.clip(c["z"] @ target.orientation, -1.0, 1.0))
        u = c["f"] - c["n"] * target.orientation
        out.append({
            "waypoint": int(i),
            "time": float(traj.starts[i - 1] + t_loc),
            "distance": float(np.linalg.norm(pe - target.position)),
            "speed": float(np.linalg.norm(ve)),
            "orientation_error_deg": float(np.degrees(np.arccos(cosang))),
            "orientation_excess": float(u @ u - spec.e_o**2),
        })
    return out


def dense_check(traj: minco.Trajectory, problem: Problem, dv: DecisionVars | None = None, factor: int = 10) -> dict:
    """Constraint violations at ``factor`` times the optimization sampling."""
    spec = problem.spec
    seg, tloc, _ = _sample_grid(traj, problem.N * factor)
    p0, p1, p2 = (traj.piece_eval(seg, tloc, k) for k in range(3))
    speed = np.linalg.norm(p1[:, :3], axis=1)
    acc = np.linalg.norm(p2[:, :3], axis=1)
    out = {
        "speed_excess": float(max(speed.max() - spec.v_max, 0.0)),
        "accel_excess": float(max(acc.max() - spec.a_max, 0.0)),
        "max_speed": float(speed.max()),
        "max_accel": float(acc.max()),
    }
    clearance = np.inf
    for box in spec.obstacles:
        d = p0[:, :3] - np.clip(p0[:, :3], box.lo - spec.quad_radius, box.hi + spec.quad_radius)
        clearance = min(clearance, float(np.linalg.norm(d, axis=1).min()))
    out["min_clearance"] = None if not np.isfinite(clearance) else clearance
    out["clearance_shortfall"] = 0.0 if not np.isfinite(clearance) else max(spec.d_safe - clearance, 0.0)
    pa = p0[:, 3:]
    if problem.mode == "full":
        out["feasible_fraction"] = float(np.mean(problem.models.workspace.inside(pa)))
        out["ik_fraction_5mm"] = float(np.mean(near_reachable(problem.geom, pa, 0.005)))
        if dv is not None and problem.M > 1:
            out["waypoints_reachable"] = bool(np.all(is_reachable(problem.geom, decode(problem, dv).arm_points)))
    else:
        cube = problem.models.cube
        excess = np.linalg.norm(pa - np.clip(pa, cube.lo, cube.hi), axis=1)
        out["cube_excess"] = float(excess.max())
    return out


DENSE_LIMITS = {
    "speed_excess": 0.1,  # m/s
    "accel_excess": 1.0,  # m/s^2
    "clearance_shortfall": 0.05,  # m
    "cube_excess": 0.001,  # m
}
FEASIBLE_MIN = 0.99


def violations_ok(dense: dict) -> bool:
    for key, limit in DENSE_LIMITS.items():
        if key in dense and dense[key] > limit:
            return False
    for key in ("feasible_fraction", "ik_fraction_5mm"):
        if key in dense and dense[key] < FEASIBLE_MIN:
            return False
    return dense.get("waypoints_reachable", True)


def arm_ranges(traj: minco.Trajectory, problem: Problem, factor: int = 10) -> np.ndarray:
    seg, tloc, _ = _sample_grid(traj, problem.N * factor)
    pa = traj.piece_eval(seg, tloc, 0)[:, 3:]
    return pa.max(axis=0) - pa.min(axis=0)
