from __future__ import annotations

import numpy as np
import pytest

from deltagrasp import minco, planner
from deltagrasp.kinematics import Cube
from deltagrasp.planner import DecisionVars, Models, evaluate_cost, smooth, smooth_grad
from deltagrasp.scenario import parse_config

from .conftest import central_fd, cost_case, cost_gradient_error


def _straight(mode="cube", M=3, **solver):
    return parse_config({
        "scenario": {"start": {"position": [0, 0, 1]}, "goal": {"position": [3, 0, 1]}, "M": M},
        "solver": {"mode": mode, **solver},
    })


def test_smooth_hinge_properties():
    x = np.linspace(-1, 1, 41)
    assert np.all(smooth(x[x <= 0]) == 0.0)
    assert np.all(np.diff(smooth(x)) >= 0.0)
    assert smooth(np.array(0.0)) == 0.0 and smooth_grad(np.array(0.0)) == 0.0
    pts = np.array([-0.5, 0.3, 1.2])
    np.testing.assert_allclose(smooth_grad(pts), central_fd(lambda v: smooth(v).sum(), pts), rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("seed, M, N", [(0, 3, 8), (1, 6, 16), (2, 6, 8)])
def test_cost_gradient_full_mode(random_models, seed, M, N):
    problem, x = cost_case(random_models, seed, M, N)
    _, _, rep = evaluate_cost(DecisionVars.unpack(problem, x), problem, need_grad=False)
    assert all(v > 0 for v in rep.parts().values()), rep.parts()
    assert cost_gradient_error(problem, x) <= 1e-5


@pytest.mark.parametrize("mode, attitude", [("cube", "full"), ("cube", "identity"), ("full", "identity")])
def test_cost_gradient_other_modes(random_models, mode, attitude):
    problem, x = cost_case(random_models, 3, 4, 8, mode, attitude)
    _, _, rep = evaluate_cost(DecisionVars.unpack(problem, x), problem, need_grad=False)
    assert rep.workspace > 0
    assert cost_gradient_error(problem, x) <= 1e-5


def test_workspace_descent_step(random_models):
    problem, x = cost_case(random_models, 4, 3, 8)
    j0, g, rep = evaluate_cost(DecisionVars.unpack(problem, x), problem)
    assert rep.workspace > 0
    step = np.zeros_like(x)
    arm = g.pack().copy()
    arm[: g.q_b.size] = 0.0
    arm[g.q_b.size + g.arm.size:] = 0.0
    step = -1e-4 * arm / np.abs(arm).max()
    j1, _, rep1 = evaluate_cost(DecisionVars.unpack(problem, x + step), problem, need_grad=False)
    assert j1 < j0


def test_single_piece_energy_law(cube):
    cfg = parse_config({"scenario": {"start": {"position": [0, 0, 1]}, "goal": {"position": [1, 0, 1]}, "M": 1},
                        "solver": {"mode": "cube"}})
    problem, path = planner.make_problem(cfg, Models(cube=cube))
    vals = []
    for big_t in (1.0, 2.0, 3.5):
        dv = DecisionVars(np.zeros((0, 3)), np.zeros((0, 3)), np.array([np.log(big_t)]))
        _, _, rep = evaluate_cost(dv, problem, need_grad=False)
        vals.append(rep.control_effort * big_t**5)
    assert np.max(np.abs(np.array(vals) / 720.0 - 1.0)) <= 1e-9


def test_straight_line_minimum_jerk(cube):
    res = planner.plan(_straight(), Models(cube=cube))
    assert res.report.converged
    assert np.max(np.abs(res.variables.q_b[:, 1:] - [0.0, 1.0])) <= 1e-3
    assert np.all(np.diff(res.variables.q_b[:, 0]) > 0)
    assert res.report.total <= res.initial_cost


def test_plan_is_deterministic(cube):
    a = planner.plan(_straight(M=4), Models(cube=cube))
    b = planner.plan(_straight(M=4), Models(cube=cube))
    assert np.array_equal(a.variables.pack(), b.variables.pack())
    assert a.report.to_dict() == {**b.report.to_dict(), "wall_time_ms": a.report.wall_time_ms}


def test_inflated_cube_matches_unconstrained_arm(geom, cube):
    big = Cube(center=tuple((np.asarray(geom.bounds_lo) + geom.bounds_hi) / 2), side=1.0)
    raw = {
        "scenario": {"start": {"position": [0, 0, 1]}, "goal": {"position": [3, 0, 1]}, "M": 3,
                     "targets": [{"position": [1.5, 0.05, 0.8], "orientation": [0, 0, 1]}]},
        "solver": {"mode": "cube"},
    }
    a = planner.plan(parse_config(raw), Models(cube=big))
    raw["scenario"]["weights"] = {"workspace": 0.0}
    b = planner.plan(parse_config(raw), Models(cube=cube))
    assert a.report.workspace == 0.0
    # same objective wherever the arm stays inside the big cube; the two runs
    # differ only by where the relative-decrease test stops them
    assert abs(a.report.total - b.report.total) <= 1e-4 * b.report.total


def test_grasp_time_modes(cube):
    cfg = parse_config({
        "scenario": {"start": {"position": [0, 0, 1]}, "goal": {"position": [3, 0, 1]}, "M": 3,
                     "targets": [{"position": [1.0, 0.0, 0.8], "orientation": [0, 0, 1], "segment": 1}]},
        "solver": {"mode": "cube"},
    })
    problem, path = planner.make_problem(cfg, Models(cube=cube))
    dv = planner.init_decision_vars(problem, path)
    traj = planner.decode(problem, dv).traj
    target = problem.spec.targets[0]
    fixed = planner.grasp_time(traj, 1)
    assert fixed == traj.durations[0]
    dense = planner.grasp_time(traj, 1, target, problem.spec, "dense", 32)
    assert 0.0 <= dense <= fixed
    d_fixed = np.linalg.norm(planner._ee_at(traj, 0, fixed, problem.spec.t_ba)[0] - target.position)
    d_dense = np.linalg.norm(planner._ee_at(traj, 0, dense, problem.spec.t_ba)[0] - target.position)
    assert d_dense <= d_fixed
    with pytest.raises(ValueError):
        planner.grasp_time(traj, 1, mode="dense")


def test_end_effector_velocity_is_time_derivative(random_models):
    problem, x = cost_case(random_models, 5, 3, 8)
    traj = planner.decode(problem, DecisionVars.unpack(problem, x)).traj
    t0, h = 0.37 * traj.total_time, 1e-6
    pe_a, _ = planner.end_effector_track(traj, [t0 - h], problem.spec.t_ba)
    pe_b, _ = planner.end_effector_track(traj, [t0 + h], problem.spec.t_ba)
    _, ve = planner.end_effector_track(traj, [t0], problem.spec.t_ba)
    np.testing.assert_allclose(ve[0], (pe_b[0] - pe_a[0]) / (2 * h), rtol=1e-5, atol=1e-8)


def test_missing_models_raise(cube):
    with pytest.raises(planner.ModelMissing):
        planner.make_problem(_straight(mode="full"), Models(cube=cube))
    with pytest.raises(planner.ModelMissing):
        planner.make_problem(_straight(mode="cube"), Models())


def test_non_finite_cost_is_reported(cube):
    problem, path = planner.make_problem(_straight(), Models(cube=cube))
    dv = planner.init_decision_vars(problem, path)
    dv.q_b[0, 0] = np.nan
    with pytest.raises((planner.NonFiniteCost, minco.SingularSystem, ValueError)):
        evaluate_cost(dv, problem)


def test_segment_count_default():
    assert planner.default_segment_count(0.1) == 3
    assert planner.default_segment_count(4.0) == 6
    assert planner.default_segment_count(100.0) == 12
