import numpy as np
import pytest
from sklearn.base import clone

from gridmpc import (DelayConfig, DeviceBounds, Line, LimitProfile, MPCController, SystemState,
                     Zone, build_model)
from gridmpc.mpc import CostConfig, condense, solve_mpc
from gridmpc.limits import build_constraints, trigger_incident
from oracles import explicit_mpc, random_mpc_case


def test_condensation_matches_rollout():
    rng = np.random.default_rng(0)
    for _ in range(30):
        model, cost, cs, state, w, p_c, p_b = random_mpc_case(rng)
        problem = condense(model, cost, cs, state, w, p_c, p_b)
        z = rng.normal(0, 3, problem.qp.n)
        obj, vals, traj = explicit_mpc(model, cost, cs, state, w, p_c, p_b, z, problem)
        assert problem.objective(z) == pytest.approx(obj, rel=1e-8, abs=1e-8)
        np.testing.assert_allclose(problem.trajectory(z)[1:], traj, rtol=1e-9, atol=1e-9)
        lhs = problem.qp.G @ z - problem.qp.h
        for key, value in zip(map(tuple, problem.row_keys), lhs):
            assert value == pytest.approx(vals[key], rel=1e-8, abs=1e-8)


def test_grid_oracle_single_step():
    # no delays, one step: brute force over the two orders, slack set to its
    # smallest feasible value, which is optimal because slack is penalised
    zone = Zone(("a", "b"), (Line("a", "b", 50.0, name="L"),), ("a",), ("a",), "s",
                np.array([[0.6, 0.2]]))
    delays = DelayConfig(2.0, 2.0, 1.0)
    bounds = DeviceBounds([0.0], [100.0], [-10.0], [10.0], [8.0])
    model = build_model(zone, delays)
    cost = CostConfig.from_weights(model, battery=1.0, curtailment=3.0, energy_ref=0.0,
                                   slack=50.0, slack_linear=10.0)
    cs = build_constraints(zone, [LimitProfile(50.0, margin=0.0)], bounds, 0, 1, 2.0)
    state = SystemState([58.0], [50.0], [0.0], [0.0])
    problem = condense(model, cost, cs, state, np.zeros(2), np.zeros((0, 1)), np.zeros((0, 1)))
    sol = solve_mpc(problem)
    grid_c = np.linspace(0.0, 8.0, 801)
    grid_b = np.linspace(-10.0, 10.0, 2001)
    C, B = np.meshgrid(grid_c, grid_b)
    flow = 58.0 - 0.6 * (C + B)
    eps = np.maximum(np.abs(flow) - 50.0, 0.0)
    J = 3.0 * C ** 2 + B ** 2 + 50.0 * eps ** 2 + 10.0 * eps
    # the tiny regularisation term keeps the solver value a hair above the grid
    assert sol.objective <= J.min() + 1e-6
    assert sol.objective >= J.min() - 0.02   # grid step 0.01 MW
    i, j = np.unravel_index(J.argmin(), J.shape)
    assert abs(sol.first_move[0][0] - C[i, j]) <= 0.02
    assert abs(sol.first_move[1][0] - B[i, j]) <= 0.02


def test_slack_zero_when_hard_feasible_and_gap_when_not():
    zone = Zone(("a",), (Line("a", "x", 100.0, name="L"),), ("a",), ("a",), "s", np.array([[1.0]]))
    delays = DelayConfig(2.0, 2.0, 1.0)
    bounds = DeviceBounds([0.0], [100.0], [-10.0], [10.0], [5.0])
    model = build_model(zone, delays)
    cost = CostConfig.from_weights(model, energy_target=[50.0])
    cs = build_constraints(zone, [LimitProfile(60.0, margin=0.0)], bounds, 0, 3, 2.0)
    for f0, gap in ((70.0, 0.0), (74.0, 0.0), (80.0, 5.0), (90.0, 15.0)):
        state = SystemState([f0], [50.0], [0.0], [0.0])
        problem = condense(model, cost, cs, state, np.zeros(1), np.zeros((0, 1)), np.zeros((0, 1)))
        sol = solve_mpc(problem)
        np.testing.assert_allclose(sol.slacks[:, 0], gap, atol=1e-3)


def test_weight_scaling_leaves_plan_unchanged():
    rng = np.random.default_rng(1)
    model, cost, cs, state, w, p_c, p_b = random_mpc_case(rng)
    base = solve_mpc(condense(model, cost, cs, state, w, p_c, p_b))
    scaled_cost = CostConfig(cost.q1 * 7.0, cost.q2 * 7.0, cost.x_ref, cost.slack_weight * 7.0,
                             cost.slack_linear_weight * 7.0, cost.regularization * 7.0,
                             cost.n_curtailable)
    scaled = solve_mpc(condense(model, scaled_cost, cs, state, w, p_c, p_b))
    np.testing.assert_allclose(scaled.plan_curt, base.plan_curt, atol=1e-5)
    np.testing.assert_allclose(scaled.plan_batt, base.plan_batt, atol=1e-5)


def test_prediction_matches_plant_first_step(zone, delays, bounds):
    ctrl = MPCController(horizon=24).fit(zone, delays, bounds, energy_target=[15.0])
    profiles = [trigger_incident(LimitProfile(76.0), 0.0, [(72.0, 15.0)]), LimitProfile(60.0)]
    state = SystemState.initial([82.0, 30.0], [15.0], 2)
    pend_c, pend_b = np.zeros((delays.d_curt, 2)), np.zeros((0, 1))
    sol = ctrl.solve(state, np.zeros(6), pend_c, pend_b, ctrl.build_constraints(profiles, 0))
    from gridmpc import step
    nxt = step(ctrl.model_, state, pend_c[0], sol.first_move[1], np.zeros(6))
    np.testing.assert_allclose(sol.trajectory[1], nxt.to_vector(), atol=1e-9)


def test_controller_estimator_api(zone, delays, bounds):
    ctrl = MPCController(horizon=25, curtailment_weight=50.0)
    params = ctrl.get_params()
    assert params["horizon"] == 25 and params["curtailment_weight"] == 50.0
    twin = clone(ctrl)
    assert twin.get_params() == params and not hasattr(twin, "model_")
    with pytest.raises(ValueError, match="horizon"):
        MPCController(horizon=10).fit(zone, delays, bounds)
    with pytest.raises(ValueError, match="curtailment orders"):
        MPCController(curtailment_weight=0.5).fit(zone, delays, bounds)
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        MPCController().build_constraints([], 0)


def test_horizon_must_cover_delay(zone, delays, bounds):
    model = build_model(zone, delays)
    cost = CostConfig.from_weights(model)
    cs = build_constraints(zone, [LimitProfile(76.0), LimitProfile(60.0)], bounds, 0, 5, 2.0)
    with pytest.raises(ValueError, match="horizon"):
        condense(model, cost, cs, SystemState.initial([0.0, 0.0], [15.0], 2), np.zeros(6),
                 np.zeros((22, 2)), np.zeros((0, 1)))
