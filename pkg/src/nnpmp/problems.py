"""Benchmark problems: Martian robot replication and lossy battery arbitrage.

Also holds the independent checks used against the PMP solvers: the
closed-form Martian optimum, an exhaustive / gridded-DP oracle, and the
piecewise-efficiency direct-transcription baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dynamics import AnalyticModel, eta_piecewise, eta_true  # noqa: F401  (re-exported)
from .errors import ValidationError
from .pmp import Free, OcpDefinition, TerminalCost, TerminalTarget, Trajectory, rollout

DEFAULT_PRICES = (((0, 7), 5.0), ((8, 12), 7.0), ((13, 17), 10.0), ((18, 23), 6.0))


@dataclass(frozen=True)
class MartianParams:
    T: int = 5
    x0: float = 3.0
    k: float = 1.0

    def __post_init__(self):
        if int(self.T) < 1 or not self.x0 > 0 or not self.k > 0:
            raise ValidationError("Martian parameters need T >= 1, x0 > 0 and k > 0")


@dataclass(frozen=True)
class BatteryParams:
    T: int = 24
    x0: float = 2.0
    xT_target: float = 3.0
    alpha: float = 0.1
    beta: float = 100.0
    x_max: float = 10.0
    u_min: float = -5.0
    u_max: float = 5.0
    price_schedule: tuple = field(default=DEFAULT_PRICES)

    def __post_init__(self):
        sched = tuple(((int(a), int(b)), float(p)) for (a, b), p in self.price_schedule)
        object.__setattr__(self, "price_schedule", sched)
        if int(self.T) < 1:
            raise ValidationError("T must be at least 1")
        if not 0.0 <= self.x0 <= self.x_max:
            raise ValidationError(f"x0={self.x0} must lie in [0, x_max={self.x_max}]")
        if not self.u_min < self.u_max:
            raise ValidationError("u_min must be smaller than u_max")
        if any(p < 0 for _, p in sched):
            raise ValidationError("prices must be non-negative")
        covered = sorted(t for (a, b), _ in sched for t in range(a, b + 1))
        if covered != list(range(int(self.T))):
            raise ValidationError("price intervals must partition [0, T-1] exactly once")

    def prices(self):
        return np.array([price_at(self, t) for t in range(self.T)])


def price_at(params: BatteryParams, t) -> float:
    if not 0 <= t < params.T:
        raise ValidationError(f"t={t} outside [0, {params.T - 1}]")
    for (a, b), p in params.price_schedule:
        if a <= t <= b:
            return p
    raise ValidationError(f"no price interval covers t={t}")


def penalty(params: BatteryParams, x):
    """Soft state-of-charge bound: beta*x^2 below 0, beta*(x - x_max)^2 above x_max."""
    x = np.asarray(x, dtype=np.float64)
    below = np.minimum(x, 0.0)
    above = np.maximum(x - params.x_max, 0.0)
    return params.beta * (below * below + above * above)


def penalty_derivative(params: BatteryParams, x):
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * params.beta * (np.minimum(x, 0.0) + np.maximum(x - params.x_max, 0.0))


def build_martian_ocp(params: MartianParams) -> OcpDefinition:
    k = float(params.k)

    def stage(x, u, t):
        return k * (1.0 - u[..., 0]) * x[..., 0]

    def stage_dx(x, u, t):
        return k * (1.0 - u) * np.ones_like(x)

    return OcpDefinition(params.T, [params.x0], stage, stage_dx, [[0.0, 1.0]], Free(),
                         "maximize", state_bounds=[[0.0, np.inf]], name="martian")


def build_battery_ocp(params: BatteryParams, terminal=None) -> OcpDefinition:
    """Battery arbitrage; ``terminal`` defaults to the fixed target state."""
    prices = params.prices()
    a = params.alpha

    def stage(x, u, t):
        uu = u[..., 0]
        return prices[t] * uu + a * uu * uu + penalty(params, x[..., 0])

    def stage_dx(x, u, t):
        return penalty_derivative(params, x) * np.ones(np.broadcast_shapes(x.shape, u.shape[:-1] + (1,)))

    if terminal is None:
        terminal = TerminalTarget([params.xT_target])
    return OcpDefinition(params.T, [params.x0], stage, stage_dx, [[params.u_min, params.u_max]],
                         terminal, "minimize", state_bounds=[[0.0, params.x_max]], name="battery")


def martian_closed_form(params: MartianParams):
    """Bang-bang optimum: replicate until the last step, then work.

    The objective comes from rolling the controls out on the true dynamics.
    """
    controls = np.ones(params.T)
    controls[-1] = 0.0
    traj = rollout(build_martian_ocp(params), AnalyticModel("martian"), controls)
    return controls, traj.objective


def terminal_error_percent(x_T, target) -> float:
    return float(abs(x_T - target) / abs(target) * 100.0)


# oracle ------------------------------------------------------------------------

def _pick(values, sense):
    # first index attaining the optimum within a relative 1e-12; enumeration order is
    # lexicographic in the control sequence
    v = values if sense == "minimize" else -values
    best = np.min(v)
    tol = 1e-12 * max(1.0, abs(best))
    return int(np.argmax(v <= best + tol))


def _exhaustive(ocp, model, levels, target_tol):
    T = ocp.horizon
    k = levels.size
    xs = ocp.x0[None, :]
    acc = np.zeros(1)
    for t in range(T - 1):
        x_rep = np.repeat(xs, k, axis=0)
        u_rep = np.tile(levels, xs.shape[0])[:, None]
        acc = np.repeat(acc, k) + ocp.stage_cost(x_rep, u_rep, t)
        xs = model.step(x_rep, u_rep, t)
    best_val, best_idx = None, None
    worst = np.inf if ocp.sense == "minimize" else -np.inf
    for j, u_last in enumerate(levels):
        u_col = np.full((xs.shape[0], 1), u_last)
        total = acc + ocp.stage_cost(xs, u_col, T - 1)
        x_T = model.step(xs, u_col, T - 1)
        if isinstance(ocp.terminal, TerminalCost):
            total = total + np.array([ocp.terminal.value(x) for x in x_T])
        elif isinstance(ocp.terminal, TerminalTarget):
            miss = np.max(np.abs(x_T - ocp.terminal.value), axis=1) > target_tol
            total = np.where(miss, worst, total)
        i = _pick(total, ocp.sense)
        val, idx = float(total[i]), i * k + j
        if best_val is None or not np.isfinite(best_val):
            best_val, best_idx = val, idx
            continue
        tie = 1e-12 * max(1.0, abs(best_val))
        gain = (best_val - val) if ocp.sense == "minimize" else (val - best_val)
        # ties go to the lexicographically smaller sequence
        if gain > tie or (abs(gain) <= tie and idx < best_idx):
            best_val, best_idx = val, idx
    if not np.isfinite(best_val):
        raise ValidationError("no enumerated control sequence reaches the terminal target")
    digits = []
    idx = best_idx
    for _ in range(T):
        digits.append(idx % k)
        idx //= k
    return levels[np.array(digits[::-1])]


def _reachable_range(ocp, model, levels):
    lo = hi = float(ocp.x0[0])
    for t in range(ocp.horizon):
        nxt = model.step(np.array([[lo], [hi]]).repeat(levels.size, 0),
                         np.tile(levels, 2)[:, None], t)
        lo, hi = min(lo, float(nxt.min())), max(hi, float(nxt.max()))
    return lo, hi


def _dp(ocp, model, levels, x_grid_size, x_range):
    T = ocp.horizon
    if x_range is None:
        if ocp.state_bounds is not None and np.all(np.isfinite(ocp.state_bounds)):
            x_range = (ocp.state_bounds[0, 0] - 2.0, ocp.state_bounds[0, 1] + 2.0)
        else:
            x_range = _reachable_range(ocp, model, levels)
    grid = np.linspace(x_range[0], x_range[1], x_grid_size)
    spacing = grid[1] - grid[0] if x_grid_size > 1 else 1.0
    s = ocp.sign
    value = np.zeros(x_grid_size)
    if isinstance(ocp.terminal, TerminalCost):
        value = s * np.array([ocp.terminal.value(np.array([g])) for g in grid])
    elif isinstance(ocp.terminal, TerminalTarget):
        value = np.where(np.abs(grid - ocp.terminal.value[0]) <= 0.5 * spacing, 0.0, np.inf)
    xg = grid[:, None, None]
    ug = levels[None, :, None]
    policy = np.empty((T, x_grid_size))
    for t in range(T - 1, -1, -1):
        nxt = model.step(xg, ug, t)[..., 0]
        j = np.clip(np.rint((nxt - grid[0]) / spacing), 0, x_grid_size - 1).astype(int)
        q = s * ocp.stage_cost(xg, ug, t) + value[j]
        best = np.argmin(q, axis=1)
        policy[t] = levels[best]
        value = q[np.arange(x_grid_size), best]

    # simulate the policy on the actual (unsnapped) dynamics
    x = ocp.x0.copy()
    controls = np.empty(T)
    for t in range(T):
        j = int(np.clip(np.rint((x[0] - grid[0]) / spacing), 0, x_grid_size - 1))
        u = policy[t, j]
        if t == T - 1 and isinstance(ocp.terminal, TerminalTarget):
            u = _hit_target(ocp, model, x, t, u)
        controls[t] = u
        x = model.step(x, [u], t)
    return controls


def _hit_target(ocp, model, x, t, fallback):
    # the last control of a fixed-target problem is pinned by the target itself
    lo, hi = ocp.control_bounds[0]
    target = ocp.terminal.value[0]

    def miss(u):
        return float(model.step(x, [u], t)[0]) - target

    if miss(lo) * miss(hi) > 0:
        return fallback
    return brentq(miss, lo, hi, xtol=1e-14)


def brute_force_oracle(ocp: OcpDefinition, model, u_grid_size=21, x_grid_size=2001,
                       x_range=None, method="auto", target_tol=None):
    """Best control sequence over a discretised control set.

    ``method="exhaustive"`` enumerates all ``u_grid_size**T`` sequences (used
    automatically for T <= 6 with at most 21 levels); ``"dp"`` runs backward
    dynamic programming on a state grid of ``x_grid_size`` points with
    nearest-neighbour snapping.  Returns ``(controls, objective)`` with the
    objective recomputed by an exact rollout of the controls.
    """
    if ocp.state_dim != 1 or ocp.control_dim != 1:
        raise ValidationError("brute_force_oracle supports scalar state and control only")
    levels = np.linspace(*ocp.control_bounds[0], u_grid_size)
    if method == "auto":
        method = "exhaustive" if ocp.horizon <= 6 and u_grid_size <= 21 else "dp"
    if method == "exhaustive":
        tol = 1e-6 if target_tol is None else target_tol
        controls = _exhaustive(ocp, model, levels, tol)
    elif method == "dp":
        controls = _dp(ocp, model, levels, x_grid_size, x_range)
    else:
        raise ValidationError(f"unknown oracle method {method!r}")
    traj = rollout(ocp, model, controls)
    return controls, traj.objective


# baseline ----------------------------------------------------------------------

def _baseline_cost(params, prices, U, terminal_penalty):
    """Objective for a batch of control sequences ``U`` (rows) on the piecewise model."""
    steps = eta_piecewise(U) * U
    x = params.x0 + np.concatenate([np.zeros((U.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
    cost = U @ prices + params.alpha * np.sum(U * U, axis=1) + np.sum(penalty(params, x[:, :-1]), axis=1)
    if terminal_penalty:
        cost = cost + params.beta * (x[:, -1] - params.xT_target) ** 2
    return cost


def baseline_direct_solve(params: BatteryParams, restarts=20, seed=0, terminal_penalty=True,
                          max_iter=500, fd_step=1e-6, tol=1e-9) -> Trajectory:
    """Direct transcription on the piecewise-efficiency model.

    Projected gradient descent with central finite-difference gradients and
    Armijo backtracking, started from ``restarts`` random points (the first
    one is all zeros); the best run is returned as a rollout on the piecewise
    model.  With ``terminal_penalty`` the target enters as ``beta*(x_T - target)^2``.
    """
    prices = params.prices()
    T = params.T
    lo, hi = params.u_min, params.u_max
    rng = np.random.default_rng(seed)
    eye = np.eye(T) * fd_step

    def f(U):
        return _baseline_cost(params, prices, np.atleast_2d(U), terminal_penalty)

    def grad(u):
        both = f(np.vstack([u + eye, u - eye]))
        return (both[:T] - both[T:]) / (2.0 * fd_step)

    best_u, best_f = None, np.inf
    for r in range(max(1, restarts)):
        u = np.zeros(T) if r == 0 else rng.uniform(lo, hi, T)
        fu = f(u)[0]
        if not np.isfinite(fu):
            raise ValidationError(f"non-finite baseline objective at restart {r}")
        step = 1.0
        for _ in range(max_iter):
            g = grad(u)
            accepted = False
            while step > 1e-12:
                cand = np.clip(u - step * g, lo, hi)
                fc = f(cand)[0]
                if fc <= fu - 1e-4 * np.dot(g, u - cand):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            moved = np.max(np.abs(cand - u))
            gain = fu - fc
            u, fu = cand, fc
            step = min(step * 2.0, 1e3)
            if moved < tol or gain < tol * max(1.0, abs(fu)):
                break
        if fu < best_f:
            best_u, best_f = u, fu
    return rollout(build_battery_ocp(params), AnalyticModel("battery_piecewise"), best_u)
