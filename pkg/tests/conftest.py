from __future__ import annotations

import time

import numpy as np
import pytest

from deltagrasp import nn
from deltagrasp.fk_net import FkModel, FkTrainConfig, build_revnet, train_fk
from deltagrasp.kinematics import DeltaGeometry, largest_inscribed_cube
from deltagrasp.planner import Models, neutral_arm_point
from deltagrasp.workspace import WorkspaceModel, WorkspaceTrainConfig, build_workspace_mlp, train_workspace


def central_fd(f, x, h=1e-6):
    """Central differences of scalar ``f`` at every entry of ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    flat = out.ravel()
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        e = e.reshape(x.shape)
        flat[k] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out


def rel_err(analytic, numeric, floor_frac=1e-3):
    """Per-entry relative error; entries below ``floor_frac`` of the largest
    numeric magnitude are judged against that scale instead of themselves."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    floor = max(floor_frac * np.abs(n).max(), 1e-12)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


@pytest.fixture(scope="session")
def geom():
    return DeltaGeometry()


@pytest.fixture(scope="session")
def cube(geom):
    return largest_inscribed_cube(geom)


@pytest.fixture(scope="session")
def random_models(geom, cube):
    """Untrained networks, with the classifier shifted so its 0.5 level set
    passes near the neutral arm pose; enough for gradient checks."""
    rng = np.random.default_rng(3)
    fk = FkModel(build_revnet(rng, 16, np.array([0.0, 0.0, -0.17]), np.array([0.03, 0.03, 0.02])), geom)
    ws = WorkspaceModel(build_workspace_mlp(geom, rng), geom)
    last = [layer for layer in nn.iter_layers(ws.net) if isinstance(layer, nn.Dense)][-1]
    p = ws.feasibility(neutral_arm_point(geom))[0]
    last.bias -= np.log(p / (1.0 - p)) + 1.0
    return Models(ws, fk, cube)


@pytest.fixture(scope="session")
def trained(geom, cube, tmp_path_factory):
    """Full-size training of both networks, once per session."""
    out = tmp_path_factory.mktemp("models")
    t0 = time.perf_counter()
    ws, ws_metrics = train_workspace(geom, WorkspaceTrainConfig())
    ws_metrics["wall_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    fk, fk_metrics = train_fk(geom, FkTrainConfig())
    fk_metrics["wall_s"] = time.perf_counter() - t0
    ws.save(out / "workspace.dgpn")
    fk.save(out / "fk.dgpn")
    return {
        "models": Models(ws, fk, cube),
        "workspace_metrics": ws_metrics,
        "fk_metrics": fk_metrics,
        "dir": out,
    }


def cost_case(models, seed: int, M: int, N: int, mode: str = "full", attitude: str = "full"):
    """Random scenario plus a perturbed initial point at which every penalty
    class of the cost is active. Returns ``(problem, x)``."""
    from deltagrasp.planner import DecisionVars, init_decision_vars, make_problem
    from deltagrasp.scenario import parse_config

    rng = np.random.default_rng(seed)
    start = np.array([-2.0, 0.0, 1.0]) + rng.uniform(-0.3, 0.3, 3)
    goal = np.array([2.0, 0.3, 1.2]) + rng.uniform(-0.3, 0.3, 3)
    tilt = rng.uniform(0.06, 0.15)
    target = 0.5 * (start + goal) + rng.uniform(-0.2, 0.2, 3)
    obs_c = start + 0.75 * (goal - start)
    raw = {
        "seed": seed,
        "scenario": {
            "start": {"position": start.tolist()},
            "goal": {"position": goal.tolist()},
            "targets": [{"position": target.tolist(), "orientation": [np.sin(tilt), 0.0, np.cos(tilt)],
                         "segment": max(1, M // 2)}],
            "obstacles": [{"min": (obs_c - [0.2, 0.5, 0.5]).tolist(), "max": (obs_c + [0.2, 0.5, -0.1]).tolist()}],
            "M": M, "N": N,
            "limits": {"v_max": 0.6, "a_max": 0.3},
            "e_o": 0.1, "d_safe": 0.6,
        },
        "solver": {"mode": mode, "attitude_approx": attitude},
    }
    problem, path = make_problem(parse_config(raw), models)
    dv = init_decision_vars(problem, path)
    dv.q_b += rng.normal(scale=0.1, size=dv.q_b.shape)
    dv.tau += rng.normal(scale=0.1, size=dv.tau.shape) - 1.0  # fast enough to hit the limits
    if mode == "full":
        # arm waypoints spread over the joint range so the spline between them
        # leaves the (non-convex) workspace
        dv.arm = rng.uniform(-3.0, 3.0, size=dv.arm.shape)
    else:
        dv.arm += rng.normal(scale=0.005, size=dv.arm.shape)
        dv.arm[0] = models.cube.hi + 0.003  # just outside the cube
    return problem, DecisionVars.pack(dv)


def cost_gradient_error(problem, x, h: float = 1e-6) -> float:
    """Largest relative error between the analytic cost gradient and central differences."""
    from deltagrasp.planner import DecisionVars, evaluate_cost

    _, g, _ = evaluate_cost(DecisionVars.unpack(problem, x), problem)

    def f(v):
        return evaluate_cost(DecisionVars.unpack(problem, v), problem, need_grad=False)[0]

    return float(rel_err(g.pack(), central_fd(f, x, h)).max())


ACCEPTANCE_LINES: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    """Log one acceptance verdict for the end-of-run summary, then assert it."""
    ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
