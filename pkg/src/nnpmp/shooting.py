"""Costate random shooting for problems with a fixed terminal state.

Initial costates are sampled, each is propagated forward with the PMP
conditions, and the resulting map from initial costate to terminal state is
used to seed secant updates until the terminal target is hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DegenerateSecantError, SingularCostateError, ValidationError
from .pmp import TerminalTarget, Trajectory, _dims, argopt_batch


@dataclass(frozen=True)
class ShootingConfig:
    num_samples: int = 100
    lambda0_range: tuple = (-20.0, 20.0)
    precision: float = 0.05
    max_iters: int = 50
    seed: int = 0
    n_grid: int = 201

    def __post_init__(self):
        lo, hi = (float(v) for v in self.lambda0_range)
        object.__setattr__(self, "lambda0_range", (lo, hi))
        if int(self.num_samples) < 1 or int(self.max_iters) < 1:
            raise ValidationError("num_samples and max_iters must be positive")
        if not lo <= hi:
            raise ValidationError(f"lambda0_range must satisfy lo <= hi, got {self.lambda0_range}")
        if not self.precision > 0:
            raise ValidationError("precision must be positive")


@dataclass
class MapEntry:
    lambda0: float
    trajectory: Trajectory
    x_T: float
    feasible: bool


@dataclass
class CostateMap:
    entries: list

    def __len__(self):
        return len(self.entries)

    def lambdas(self):
        return np.array([e.lambda0 for e in self.entries])

    def terminal_states(self):
        return np.array([e.x_T for e in self.entries])


@dataclass
class ShootingResult:
    trajectory: Trajectory
    lambda0: float
    terminal_error: float
    iterations: int
    converged: bool
    costate_map: CostateMap = field(repr=False, default=None)
    # (lambda0, x_T) of every refinement rollout, in order
    history: list = field(default_factory=list)


def _is_feasible(ocp, states, tol=1e-6):
    if ocp.state_bounds is None:
        return np.ones(states.shape[0], dtype=bool)
    lo, hi = ocp.state_bounds[0]
    x = states[..., 0]
    return np.all((x >= lo - tol) & (x <= hi + tol), axis=-1)


def _rollout_batch(ocp, model, lambda0s, n_grid, fixed_point_iters=10):
    """Forward PMP propagation for many initial costates at once (scalar state).

    Returns states ``(B, T+1, 1)``, controls ``(B, T, 1)``, costates ``(B, T+1, 1)``,
    stage costs ``(B, T)`` and a per-lane boolean of singular lanes together with
    the first singular step (or -1).
    """
    T = ocp.horizon
    lam0 = np.asarray(lambda0s, dtype=np.float64).reshape(-1)
    B = lam0.size
    xs = np.empty((B, T + 1, 1))
    us = np.empty((B, T, 1))
    lams = np.empty((B, T + 1, 1))
    costs = np.empty((B, T))
    xs[:, 0] = ocp.x0
    lams[:, 0, 0] = lam0
    u = np.full((B, 1), ocp.control_bounds[0, 0])
    singular_at = np.full(B, -1)
    for t in range(T):
        x, lam = xs[:, t], lams[:, t]
        # dl/dx and dF/dx may depend on the (unknown) control: fixed-point on u
        for _ in range(fixed_point_iters):
            jac = model.jacobian_x(x, u, t)[..., 0, 0]
            dl = np.broadcast_to(ocp.stage_cost_dx(x, u, t), x.shape)[:, 0]
            bad = np.abs(jac) < 1e-12
            singular_at = np.where(bad & (singular_at < 0), t, singular_at)
            lam_next = ((lam[:, 0] - dl) / np.where(bad, 1.0, jac))[:, None]
            u_new = argopt_batch(ocp, model, x, lam_next, t, n_grid=n_grid)
            same = np.array_equal(u_new, u)
            u = u_new
            if same:
                break
        us[:, t] = u
        lams[:, t + 1] = lam_next
        costs[:, t] = ocp.stage_cost(x, u, t)
        xs[:, t + 1] = model.step(x, u, t)
    return xs, us, lams, costs, singular_at


def _trajectory(xs, us, lams, costs):
    return Trajectory(xs.copy(), us.copy(), lams.copy(), costs.copy(), float(np.sum(costs)))


def _check_problem(ocp, model):
    _dims(ocp, model)
    if ocp.state_dim != 1 or ocp.control_dim != 1:
        raise ValidationError("costate shooting supports scalar state and control only")


def forward_costate_rollout(ocp, model, lambda0, n_grid=201) -> Trajectory:
    """Roll the PMP conditions forward from ``x0`` and the initial costate ``lambda0``.

    ``lam_{t+1} = (lam_t - dl/dx) / (dF/dx)`` gives the costate needed for the
    Hamiltonian-optimal control at step ``t``, which then advances the state.
    """
    _check_problem(ocp, model)
    xs, us, lams, costs, sing = _rollout_batch(ocp, model, [float(lambda0)], n_grid)
    if sing[0] >= 0:
        raise SingularCostateError(int(sing[0]))
    return _trajectory(xs[0], us[0], lams[0], costs[0])


def map_generate(ocp, model, cfg: ShootingConfig) -> CostateMap:
    """Sample initial costates uniformly and map each to its PMP trajectory."""
    _check_problem(ocp, model)
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.lambda0_range
    lam0 = np.sort(rng.uniform(lo, hi, int(cfg.num_samples)))
    xs, us, lams, costs, sing = _rollout_batch(ocp, model, lam0, cfg.n_grid)
    feasible = _is_feasible(ocp, xs)
    entries = [MapEntry(float(lam0[i]), _trajectory(xs[i], us[i], lams[i], costs[i]),
                        float(xs[i, -1, 0]), bool(feasible[i]))
               for i in range(lam0.size) if sing[i] < 0]
    if not entries:
        raise SingularCostateError(int(sing.min()))
    return CostateMap(entries)


def secant_update(lambda_b, lambda_sb, xT_b, xT_sb, xT_target) -> float:
    """Linear interpolation through the two latest (costate, terminal state) pairs."""
    if abs(xT_b - xT_sb) < 1e-12:
        raise DegenerateSecantError(
            f"terminal states {xT_b!r} and {xT_sb!r} coincide; secant slope undefined")
    return lambda_b + (xT_target - xT_b) * (lambda_b - lambda_sb) / (xT_b - xT_sb)


def _bracket(points, target):
    """Tightest pair of evaluated points whose terminal states straddle the target."""
    pts = sorted(points)
    best = None
    for (l1, x1), (l2, x2) in zip(pts[:-1], pts[1:]):
        if (x1 - target) * (x2 - target) <= 0.0:
            if best is None or l2 - l1 < best[1][0] - best[0][0]:
                best = ((l1, x1), (l2, x2))
    return best


def shoot(ocp, model, cfg: ShootingConfig = ShootingConfig()) -> ShootingResult:
    """Hit ``ocp.terminal`` (a :class:`TerminalTarget`) by refining the initial costate.

    The two map entries closest to the target seed secant iterations; when the
    secant is degenerate (equal terminal states) a bisection step between the
    tightest bracketing pair seen so far is taken instead.  Raises
    :class:`ConvergenceError` carrying the best trajectory when ``max_iters``
    refinements do not reach ``cfg.precision``.
    """
    _check_problem(ocp, model)
    if not isinstance(ocp.terminal, TerminalTarget):
        raise ValidationError("shoot needs a TerminalTarget problem")
    target = float(ocp.terminal.value[0])
    cmap = map_generate(ocp, model, cfg)

    def dist(x):
        return abs(x - target)

    ranked = sorted(cmap.entries, key=lambda e: (dist(e.x_T), e.lambda0))
    b = (ranked[0].lambda0, ranked[0].x_T, ranked[0].trajectory)
    if dist(b[1]) <= cfg.precision or len(ranked) == 1:
        ok = dist(b[1]) <= cfg.precision
        b[2].converged, b[2].iterations = ok, 0
        if not ok:
            raise ConvergenceError("single-entry map misses the target", b[2], 0)
        return ShootingResult(b[2], b[0], dist(b[1]), 0, True, cmap)
    sb = (ranked[1].lambda0, ranked[1].x_T, ranked[1].trajectory)
    seen = [(e.lambda0, e.x_T) for e in cmap.entries]
    best = b
    history = []
    for it in range(1, int(cfg.max_iters) + 1):
        try:
            lam_new = secant_update(b[0], sb[0], b[1], sb[1], target)
        except DegenerateSecantError:
            br = _bracket(seen, target)
            if br is None:
                raise
            lam_new = 0.5 * (br[0][0] + br[1][0])
        if not np.isfinite(lam_new):
            raise ConvergenceError(f"secant produced a non-finite costate at iteration {it}",
                                   best[2], it)
        traj = forward_costate_rollout(ocp, model, lam_new, cfg.n_grid)
        x_new = float(traj.states[-1, 0])
        seen.append((lam_new, x_new))
        history.append((lam_new, x_new))
        sb, b = b, (lam_new, x_new, traj)
        if dist(x_new) < dist(best[1]):
            best = b
        if dist(x_new) <= cfg.precision:
            traj.converged, traj.iterations = True, it
            return ShootingResult(traj, lam_new, dist(x_new), it, True, cmap, history)
    best[2].converged, best[2].iterations = False, int(cfg.max_iters)
    raise ConvergenceError(
        f"terminal error {dist(best[1]):.3g} still above precision {cfg.precision} after "
        f"{cfg.max_iters} secant iterations", best[2], int(cfg.max_iters))
