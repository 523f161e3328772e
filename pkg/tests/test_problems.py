import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnpmp.dynamics import AnalyticModel
from nnpmp.errors import ValidationError
from nnpmp.pmp import Free, OcpDefinition, TerminalTarget, rollout
from nnpmp.problems import (BatteryParams, MartianParams, baseline_direct_solve, brute_force_oracle,
                            build_battery_ocp, build_martian_ocp, martian_closed_form, penalty,
                            penalty_derivative, price_at, terminal_error_percent)

MARTIAN = AnalyticModel("martian")
BATTERY = AnalyticModel("battery")


def martian_objective_by_hand(T, x0, k, controls):
    x, total = x0, 0.0
    for u in controls:
        total += k * (1 - u) * x
        x = x + x * u
    return total


# parameters ------------------------------------------------------------------

@pytest.mark.parametrize("t,p", [(0, 5), (7, 5), (8, 7), (12, 7), (15, 10), (17, 10), (18, 6), (23, 6)])
def test_price_schedule(t, p):
    assert price_at(BatteryParams(), t) == p


def test_price_out_of_range():
    with pytest.raises(ValidationError):
        price_at(BatteryParams(), 24)
    with pytest.raises(ValidationError):
        price_at(BatteryParams(), -1)


@pytest.mark.parametrize("kwargs", [
    {"x0": 11.0}, {"x0": -0.1}, {"u_min": 5.0, "u_max": 5.0}, {"T": 0},
    {"price_schedule": (((0, 7), 5.0), ((9, 23), 6.0))},
    {"price_schedule": (((0, 12), 5.0), ((8, 23), 6.0))},
    {"price_schedule": (((0, 23), -1.0),)}])
def test_battery_params_validation(kwargs):
    with pytest.raises(ValidationError):
        BatteryParams(**kwargs)


@pytest.mark.parametrize("kwargs", [{"T": 0}, {"x0": 0.0}, {"k": -1.0}])
def test_martian_params_validation(kwargs):
    with pytest.raises(ValidationError):
        MartianParams(**kwargs)


@pytest.mark.parametrize("x,value,slope", [(5.0, 0.0, 0.0), (-1.0, 100.0, -200.0), (12.0, 400.0, 400.0),
                                           (0.0, 0.0, 0.0), (10.0, 0.0, 0.0)])
def test_penalty_branches(x, value, slope):
    p = BatteryParams()
    assert penalty(p, x) == value
    assert penalty_derivative(p, x) == slope


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 30).filter(lambda v: abs(v) > 1e-3 and abs(v - 10) > 1e-3))
def test_penalty_derivative_matches_finite_differences(x):
    p = BatteryParams()
    h = 1e-6
    fd = (penalty(p, x + h) - penalty(p, x - h)) / (2 * h)
    assert penalty_derivative(p, x) == pytest.approx(fd, abs=1e-6, rel=1e-6)


def test_stage_cost_examples():
    m = build_martian_ocp(MartianParams())
    assert m.stage_cost(np.array([3.0]), np.array([0.0]), 0) == 3.0
    b = build_battery_ocp(BatteryParams())
    assert b.stage_cost(np.array([2.0]), np.array([1.0]), 0) == pytest.approx(5.1)
    assert b.stage_cost(np.array([12.0]), np.array([0.0]), 0) == 400.0
    assert b.sense == "minimize" and m.sense == "maximize"
    assert isinstance(b.terminal, TerminalTarget) and isinstance(m.terminal, Free)


def test_terminal_error_percent():
    assert terminal_error_percent(3.0408, 3.0) == pytest.approx(1.36)
    assert terminal_error_percent(3.0, 3.0) == 0.0


# closed form and oracle ------------------------------------------------------

@pytest.mark.parametrize("T,expected", [(1, 3.0), (2, 6.0), (5, 48.0)])
def test_martian_closed_form(T, expected):
    controls, obj = martian_closed_form(MartianParams(T=T))
    assert obj == expected
    assert controls.tolist() == [1.0] * (T - 1) + [0.0]
    assert obj == martian_objective_by_hand(T, 3.0, 1.0, controls)


def test_martian_oracle_matches_independent_enumeration():
    # plain itertools enumeration over {0, 0.25, ..., 1}^4 as a second oracle
    params = MartianParams(T=4, x0=2.0)
    levels = np.linspace(0, 1, 5)
    best = max(martian_objective_by_hand(4, 2.0, 1.0, c) for c in itertools.product(levels, repeat=4))
    _, obj = brute_force_oracle(build_martian_ocp(params), MARTIAN, u_grid_size=5)
    assert obj == pytest.approx(best, rel=1e-12)


@pytest.mark.parametrize("T", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("x0", [1.0, 3.0, 10.0])
def test_closed_form_equals_oracle(T, x0):
    params = MartianParams(T=T, x0=x0)
    _, cf = martian_closed_form(params)
    _, oracle = brute_force_oracle(build_martian_ocp(params), MARTIAN, 21)
    assert abs(cf - oracle) <= 0.005 * abs(cf)


def test_oracle_t5_value_and_non_unique_argmax():
    controls, obj = brute_force_oracle(build_martian_ocp(MartianParams()), MARTIAN, 21)
    assert obj == 48.0
    # u_3 does not matter once lam_4 = 1: the lexicographically smallest optimum is returned
    assert controls.tolist() == [1, 1, 1, 0, 0]
    assert rollout(build_martian_ocp(MartianParams()), MARTIAN, [1, 1, 1, 1, 0]).objective == 48.0


def test_oracle_dp_agrees_with_exhaustive_on_martian():
    ocp = build_martian_ocp(MartianParams(T=3))
    _, ex = brute_force_oracle(ocp, MARTIAN, 21, method="exhaustive")
    _, dp = brute_force_oracle(ocp, MARTIAN, 21, x_grid_size=4001, method="dp")
    assert dp == pytest.approx(ex, rel=1e-3)


def test_oracle_flat_prices_target_at_start():
    params = BatteryParams(xT_target=2.0, price_schedule=(((0, 23), 6.0),))
    ocp = build_battery_ocp(params)
    controls, obj = brute_force_oracle(ocp, BATTERY, 41, 2001)
    x_T = rollout(ocp, BATTERY, controls).states[-1, 0]
    assert obj <= 1e-12
    assert abs(x_T - 2.0) <= 14.0 / 2000


def test_oracle_battery_default_hits_target():
    ocp = build_battery_ocp(BatteryParams())
    controls, obj = brute_force_oracle(ocp, BATTERY, 201, 2001)
    assert rollout(ocp, BATTERY, controls).states[-1, 0] == pytest.approx(3.0, abs=1e-9)
    assert obj < 0


def test_oracle_rejects_vector_problems():
    ocp = OcpDefinition(1, [0.0, 0.0], lambda x, u, t: 0 * u[..., 0], lambda x, u, t: 0 * x, [[0, 1]])
    with pytest.raises(ValidationError):
        brute_force_oracle(ocp, MARTIAN)


# baseline --------------------------------------------------------------------

def test_baseline_reports_piecewise_trajectory():
    params = BatteryParams()
    traj = baseline_direct_solve(params, restarts=4, seed=1)
    pw = rollout(build_battery_ocp(params), AnalyticModel("battery_piecewise"), traj.controls)
    assert np.array_equal(pw.states, traj.states)
    assert abs(traj.states[-1, 0] - 3.0) < 0.1


def test_baseline_heavy_control_cost_gives_zero_controls():
    traj = baseline_direct_solve(BatteryParams(alpha=1e6, xT_target=2.0), restarts=2, seed=0)
    assert np.max(np.abs(traj.controls)) < 1e-3


def test_baseline_zero_prices():
    params = BatteryParams(xT_target=2.0, price_schedule=(((0, 23), 0.0),))
    traj = baseline_direct_solve(params, restarts=2, seed=0)
    assert abs(traj.objective) < 1e-6
    assert np.max(np.abs(traj.controls)) < 1e-3


def test_baseline_is_deterministic():
    a = baseline_direct_solve(BatteryParams(), restarts=3, seed=7)
    b = baseline_direct_solve(BatteryParams(), restarts=3, seed=7)
    assert np.array_equal(a.controls, b.controls)


def test_baseline_without_terminal_penalty_ignores_target():
    params = BatteryParams()
    traj = baseline_direct_solve(params, restarts=4, seed=0, terminal_penalty=False)
    truth = rollout(build_battery_ocp(params), BATTERY, traj.controls)
    assert terminal_error_percent(truth.states[-1, 0], 3.0) > 20.0
