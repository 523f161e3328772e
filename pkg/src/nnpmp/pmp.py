"""Discrete-time Pontryagin machinery.

The Hamiltonian uses the full next state, ``H = l(x, u, t) + lam' . F(x, u, t)``,
so the costate recursion reads ``lam_t = dl/dx + lam_{t+1} . dF/dx``.  With
``F = x + g`` this carries the ``(1 + dg/dx)`` factor of the worked examples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import DynamicsModel
from .errors import ConvergenceError, ValidationError

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class Free:
    """Free terminal state, no terminal cost."""


@dataclass(frozen=True)
class TerminalCost:
    value: Callable
    grad: Callable


@dataclass(frozen=True)
class TerminalTarget:
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=np.float64)))


@dataclass
class OcpDefinition:
    """Finite-horizon problem ``sum_t l(x_t, u_t, t) [+ phi(x_T)]``.

    ``stage_cost`` and ``stage_cost_dx`` must broadcast over leading axes of
    ``x`` (``(..., n)``) and ``u`` (``(..., m)``).  ``state_bounds`` are soft
    bounds used only to flag feasibility in reports.
    """

    horizon: int
    x0: np.ndarray
    stage_cost: Callable
    stage_cost_dx: Callable
    control_bounds: np.ndarray
    terminal: object = field(default_factory=Free)
    sense: str = "minimize"
    state_bounds: Optional[np.ndarray] = None
    name: str = "ocp"

    def __post_init__(self):
        self.horizon = int(self.horizon)
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=np.float64))
        self.control_bounds = np.atleast_2d(np.asarray(self.control_bounds, dtype=np.float64))
        if self.horizon < 1:
            raise ValidationError("horizon must be at least 1")
        if self.control_bounds.shape[1] != 2:
            raise ValidationError("control_bounds must be a list of [lo, hi] pairs")
        if not np.all(np.isfinite(self.control_bounds)):
            raise ValidationError("control bounds must be finite (box bounds are required)")
        if np.any(self.control_bounds[:, 0] > self.control_bounds[:, 1]):
            raise ValidationError("control bounds need lo <= hi in every dimension")
        if self.sense not in ("minimize", "maximize"):
            raise ValidationError(f"sense must be 'minimize' or 'maximize', got {self.sense!r}")
        if not isinstance(self.terminal, (Free, TerminalCost, TerminalTarget)):
            raise ValidationError("terminal must be Free, TerminalCost or TerminalTarget")
        if self.state_bounds is not None:
            self.state_bounds = np.atleast_2d(np.asarray(self.state_bounds, dtype=np.float64))

    @property
    def sign(self):
        return 1.0 if self.sense == "minimize" else -1.0

    @property
    def state_dim(self):
        return self.x0.shape[0]

    @property
    def control_dim(self):
        return self.control_bounds.shape[0]

    def terminal_value(self, x_T):
        if isinstance(self.terminal, TerminalCost):
            return float(self.terminal.value(x_T))
        return 0.0

    def better(self, a, b):
        """True if objective ``a`` is at least as good as ``b``."""
        return a <= b if self.sense == "minimize" else a >= b


@dataclass
class Trajectory:
    states: np.ndarray
    controls: np.ndarray
    costates: Optional[np.ndarray]
    stage_costs: np.ndarray
    objective: float
    converged: Optional[bool] = None
    iterations: int = 0

    @property
    def horizon(self):
        return self.controls.shape[0]

    @property
    def terminal_state(self):
        return self.states[-1]


def _dims(ocp, model):
    if model.state_dim != ocp.state_dim or model.control_dim != ocp.control_dim:
        raise ValidationError(
            f"model is {model.state_dim}x{model.control_dim} (state x control) but problem is "
            f"{ocp.state_dim}x{ocp.control_dim}")


def hamiltonian(ocp: OcpDefinition, model: DynamicsModel, x, u, lambda_next, t):
    """``l(x, u, t) + lambda_next . F(x, u, t)``; broadcasts over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    lam = np.asarray(lambda_next, dtype=np.float64)
    x, u, lam = (np.atleast_1d(v) for v in (x, u, lam))
    if x.shape[-1] != ocp.state_dim or lam.shape[-1] != ocp.state_dim:
        raise ValidationError("state/costate dimension mismatch")
    if u.shape[-1] != ocp.control_dim:
        raise ValidationError("control dimension mismatch")
    nxt = model.step(x, u, t)
    return ocp.stage_cost(x, u, t) + np.sum(lam * nxt, axis=-1)


def golden_section(fun, a, b, tol=1e-8):
    """Vectorised golden-section minimisation on the intervals ``[a, b]``.

    ``fun`` maps an array of points (same shape as ``a``) to values.  Returns
    the best evaluated point per lane and its value.
    """
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    width = float(np.max(b - a)) if a.size else 0.0
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fun(c), fun(d)
    n_iter = 0 if width <= tol else int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))
    for _ in range(n_iter):
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + INV_PHI * (b - a))
        c_new = np.where(left, b - INV_PHI * (b - a), d)
        fd_keep = np.where(left, fc, fd)
        fc_keep = np.where(left, fc, fd)
        # only the freshly placed point needs an evaluation
        fresh = np.where(left, c_new, d_new)
        f_fresh = fun(fresh)
        fc = np.where(left, f_fresh, fc_keep)
        fd = np.where(left, fd_keep, f_fresh)
        c, d = c_new, d_new
    take_c = fc <= fd
    return np.where(take_c, c, d), np.where(take_c, fc, fd)


def _argmin_scalar(fun, lo, hi, batch, n_grid, tol):
    """Grid search then golden refinement for a scalar control, ``batch`` lanes.

    ``fun(u)`` takes ``u`` of shape ``(batch, k)`` and returns ``(batch, k)``.
    Ties (within a relative 1e-9) go to the smallest control.
    """
    if hi <= lo or n_grid < 2:
        u = np.full(batch, lo)
        return u, fun(u[:, None])[:, 0]
    grid = np.linspace(lo, hi, n_grid)
    vals = fun(np.broadcast_to(grid, (batch, n_grid)))
    tie = TIE_RTOL * np.maximum(1.0, np.max(np.abs(vals), axis=1))
    best = vals.min(axis=1)
    idx = np.argmax(vals <= (best + tie)[:, None], axis=1)
    lanes = np.arange(batch)
    u_best, v_best = grid[idx], vals[lanes, idx]
    a = grid[np.maximum(idx - 1, 0)]
    b = grid[np.minimum(idx + 1, n_grid - 1)]
    u_ref, v_ref = golden_section(lambda z: fun(z[:, None])[:, 0], a, b, tol)
    improve = v_ref < v_best - tie
    return np.where(improve, u_ref, u_best), np.where(improve, v_ref, v_best)


def argopt_batch(ocp, model, x, lambda_next, t, n_grid=201, tol=1e-8, incumbent=None,
                 indifference=None):
    """Hamiltonian-optimal scalar controls for a batch of ``(x, lambda_next)`` pairs.

    ``x`` and ``lambda_next`` have shape ``(B, n)``; returns ``(B, 1)``.  See
    :func:`argopt_hamiltonian` for the meaning of ``incumbent``.
    """
    if ocp.control_dim != 1:
        raise ValidationError("batched Hamiltonian optimisation supports scalar controls only")
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lambda_next, dtype=np.float64)
    batch = x.shape[0]
    lo, hi = ocp.control_bounds[0]
    s = ocp.sign

    def fun(u):
        return s * hamiltonian(ocp, model, x[:, None, :], u[..., None], lam[:, None, :], t)

    u, v = _argmin_scalar(fun, lo, hi, batch, n_grid, tol)
    if incumbent is not None:
        inc = np.clip(np.asarray(incumbent, dtype=np.float64).reshape(batch), lo, hi)
        v_inc = fun(inc[:, None])[:, 0]
        if indifference is None:
            res = np.array([model.resolution(x[i], np.array([inc[i], u[i]])) for i in range(batch)])
            band = 2.0 * np.sum(np.abs(lam), axis=1) * res
        else:
            band = np.broadcast_to(np.asarray(indifference, dtype=np.float64), (batch,))
        tie = TIE_RTOL * np.maximum(1.0, np.abs(v))
        keep = v_inc <= v + band + tie
        u = np.where(keep, inc, u)
    return u[:, None]


def argopt_hamiltonian(ocp: OcpDefinition, model: DynamicsModel, x, lambda_next, t,
                       n_grid=201, tol=1e-8, incumbent=None, indifference=None):
    """Control minimising (or maximising, per ``ocp.sense``) the Hamiltonian over the box.

    A dense grid of ``n_grid`` points per control dimension is searched first and
    the best cell is refined by golden section to ``tol``; ties go to the
    smallest control.  When ``incumbent`` is given it is returned whenever its
    Hamiltonian is within ``indifference`` of the optimum.  Without an explicit
    ``indifference`` the band is ``2 |lambda_next| * model.resolution``, i.e. the
    largest Hamiltonian difference the model's own error could produce.
    """
    _dims(ocp, model)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    lam = np.atleast_1d(np.asarray(lambda_next, dtype=np.float64))
    if ocp.control_dim == 1:
        inc = None if incumbent is None else np.atleast_1d(incumbent)[:1]
        return argopt_batch(ocp, model, x[None], lam[None], t, n_grid, tol, inc, indifference)[0]
    return _argopt_multi(ocp, model, x, lam, t, n_grid, tol, incumbent, indifference)


def _argopt_multi(ocp, model, x, lam, t, n_grid, tol, incumbent, indifference):
    # tensor grid over all dimensions, then coordinate-wise golden refinement
    s = ocp.sign
    axes = [np.linspace(lo, hi, n_grid) for lo, hi in ocp.control_bounds]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, ocp.control_dim)
    vals = s * hamiltonian(ocp, model, x, mesh, lam, t)
    tie = TIE_RTOL * max(1.0, float(np.max(np.abs(vals))))
    # meshgrid(ij) order is lexicographic, so the first tied entry is the smallest control
    i = int(np.argmax(vals <= vals.min() + tie))
    u = mesh[i].copy()
    v = float(vals[i])
    for j, (lo, hi) in enumerate(ocp.control_bounds):
        step = (hi - lo) / (n_grid - 1) if n_grid > 1 else 0.0

        def fun(z, j=j):
            cand = np.repeat(u[None], z.size, axis=0)
            cand[:, j] = z.ravel()
            return (s * hamiltonian(ocp, model, x, cand, lam, t)).reshape(z.shape)

        z, fz = golden_section(fun, np.array([max(lo, u[j] - step)]),
                               np.array([min(hi, u[j] + step)]), tol)
        if fz[0] < v - tie:
            u[j], v = z[0], float(fz[0])
    if incumbent is not None:
        inc = np.clip(np.asarray(incumbent, dtype=np.float64), ocp.control_bounds[:, 0],
                      ocp.control_bounds[:, 1])
        v_inc = float(s * hamiltonian(ocp, model, x, inc, lam, t))
        if indifference is None:
            band = 2.0 * float(np.sum(np.abs(lam))) * model.resolution(x, np.stack([inc, u]))
        else:
            band = float(indifference)
        if v_inc <= v + band + tie:
            return inc
    return u


def costate_step_backward(ocp, model, x_t, u_t, lambda_next, t):
    """``lam_t = dl/dx(x_t, u_t, t) + lambda_next . dF/dx(x_t, u_t, t)``."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=np.float64))
    u_t = np.atleast_1d(np.asarray(u_t, dtype=np.float64))
    lam = np.atleast_1d(np.asarray(lambda_next, dtype=np.float64))
    jac = model.jacobian_x(x_t, u_t, t)
    dl = np.broadcast_to(np.asarray(ocp.stage_cost_dx(x_t, u_t, t), dtype=np.float64), x_t.shape)
    return dl + np.einsum("...j,...ji->...i", lam, jac)


def terminal_costate(ocp, x_T):
    x_T = np.atleast_1d(np.asarray(x_T, dtype=np.float64))
    if isinstance(ocp.terminal, TerminalTarget):
        raise ValidationError(
            "the terminal costate is unknown for a fixed terminal state; "
            "use the shooting module (shooting.shoot) for TerminalTarget problems")
    if isinstance(ocp.terminal, TerminalCost):
        return np.atleast_1d(np.asarray(ocp.terminal.grad(x_T), dtype=np.float64))
    return np.zeros_like(x_T)


def rollout(ocp: OcpDefinition, model: DynamicsModel, controls) -> Trajectory:
    """Simulate ``controls`` from ``ocp.x0``; costates are left as ``None``."""
    _dims(ocp, model)
    u = np.asarray(controls, dtype=np.float64).reshape(ocp.horizon, ocp.control_dim)
    lo, hi = ocp.control_bounds[:, 0], ocp.control_bounds[:, 1]
    slack = 1e-12 * np.maximum(1.0, np.abs(ocp.control_bounds).max(axis=1))
    bad = np.nonzero(np.any((u < lo - slack) | (u > hi + slack), axis=1))[0]
    if bad.size:
        raise ValidationError(f"control at step {bad[0]} is outside the bounds {ocp.control_bounds.tolist()}")
    xs = np.empty((ocp.horizon + 1, ocp.state_dim))
    xs[0] = ocp.x0
    costs = np.empty(ocp.horizon)
    for t in range(ocp.horizon):
        costs[t] = float(ocp.stage_cost(xs[t], u[t], t))
        xs[t + 1] = model.step(xs[t], u[t], t)
    objective = float(np.sum(costs)) + ocp.terminal_value(xs[-1])
    return Trajectory(xs, u, None, costs, objective)


def backward_costates(ocp, model, traj: Trajectory) -> np.ndarray:
    """Costates of a free/terminal-cost trajectory from the transversality condition."""
    lam = np.empty_like(traj.states)
    lam[-1] = terminal_costate(ocp, traj.states[-1])
    for t in range(traj.horizon - 1, -1, -1):
        lam[t] = costate_step_backward(ocp, model, traj.states[t], traj.controls[t], lam[t + 1], t)
    return lam


def fbs_solve(ocp: OcpDefinition, model: DynamicsModel, init_controls, max_iter=500, tol=1e-6,
              relaxation=0.5, n_grid=201, indifference=None, min_relaxation=1e-6) -> Trajectory:
    """Forward-backward sweep for free-terminal or terminal-cost problems.

    Each sweep walks backward from the transversality condition along the
    current trajectory: at every step the Hamiltonian-optimal control for the
    already known ``lam_{t+1}`` is computed (keeping the current control when it
    is within the model's resolution, see :func:`argopt_hamiltonian`) and
    ``lam_t`` is evaluated at that control.  Controls are blended with weight
    ``relaxation``; when the blend would worsen the objective the weight is
    halved for that sweep, down to ``min_relaxation``, after which the sweep
    stalls and the iteration stops.  Convergence means ``max |u_new - u| < tol``.
    The best trajectory seen is returned with costates, ``converged`` and
    ``iterations`` filled in.
    """
    _dims(ocp, model)
    if isinstance(ocp.terminal, TerminalTarget):
        terminal_costate(ocp, ocp.x0)  # raises with guidance
    if not 0.0 < relaxation <= 1.0:
        raise ValidationError("relaxation must lie in (0, 1]")
    u = np.asarray(init_controls, dtype=np.float64).reshape(ocp.horizon, ocp.control_dim).copy()
    u = np.clip(u, ocp.control_bounds[:, 0], ocp.control_bounds[:, 1])

    def simulate(controls, it):
        traj = rollout(ocp, model, controls)
        if not np.isfinite(traj.objective):
            raise ConvergenceError(f"non-finite objective at sweep {it}", None, it)
        return traj

    traj = simulate(u, 1)
    converged = False
    it = 0
    u_new = u
    for it in range(1, max_iter + 1):
        lam = terminal_costate(ocp, traj.states[-1])
        u_new = np.empty_like(u)
        for t in range(ocp.horizon - 1, -1, -1):
            u_new[t] = argopt_hamiltonian(ocp, model, traj.states[t], lam, t, n_grid=n_grid,
                                          incumbent=u[t], indifference=indifference)
            lam = costate_step_backward(ocp, model, traj.states[t], u_new[t], lam, t)
        if float(np.max(np.abs(u_new - u))) < tol:
            converged = True
            break
        w = relaxation
        while True:
            cand = (1.0 - w) * u + w * u_new
            cand_traj = simulate(cand, it)
            if ocp.better(cand_traj.objective, traj.objective) or w <= min_relaxation:
                break
            w *= 0.5
        if not ocp.better(cand_traj.objective, traj.objective):
            break  # no improving step along the PMP direction
        u, traj = cand, cand_traj
    best = traj
    # the unrelaxed PMP controls of the last sweep are the fixed point itself
    final = simulate(u_new, it)
    if ocp.better(final.objective, best.objective) and final.objective != best.objective:
        best = final
    best.costates = backward_costates(ocp, model, best)
    best.converged = converged
    best.iterations = it
    return best


@dataclass
class Landscape:
    x_values: np.ndarray
    u_grid: np.ndarray
    values: np.ndarray  # (len(x_values), len(u_grid))
    lambda_next: float
    t: int

    def grid_argopt(self, sense="minimize"):
        """Grid control extremising H for each x; ties go to the smallest control."""
        v = self.values if sense == "minimize" else -self.values
        tie = TIE_RTOL * np.maximum(1.0, np.max(np.abs(v), axis=1))
        idx = np.argmax(v <= (v.min(axis=1) + tie)[:, None], axis=1)
        return self.u_grid[idx]


def hamiltonian_landscape(ocp, model, x_values, lambda_next, t, n_grid=201) -> Landscape:
    """Hamiltonian sampled over the control grid for several scalar states."""
    if ocp.control_dim != 1:
        raise ValidationError("hamiltonian_landscape needs a scalar control")
    xs = np.asarray(x_values, dtype=np.float64).reshape(-1, ocp.state_dim)
    lam = np.broadcast_to(np.atleast_1d(np.asarray(lambda_next, dtype=np.float64)), (ocp.state_dim,))
    grid = np.linspace(*ocp.control_bounds[0], n_grid)
    vals = hamiltonian(ocp, model, xs[:, None, :], grid[None, :, None], lam, t)
    return Landscape(xs[:, 0].copy(), grid, vals, float(lam[0]), t)


def _invert_step(model, x_next, u, t, tol):
    # a surrogate's F(x, u) may dip below x by up to its error bound, so
    # the upper end of [0, x_{t+1}] is widened by that much
    lo = 0.0
    hi = float(x_next) + float(model.resolution(np.array([x_next]), np.asarray(u)))
    g_lo = float(model.step([lo], u, t)[0]) - x_next
    g_hi = float(model.step([hi], u, t)[0]) - x_next
    if g_lo > 0.0 or g_hi < 0.0:
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(model.step([mid], u, t)[0]) - x_next < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def costate_trace_backward(ocp, model, terminal_state, candidate_controls, tol=1e-10):
    """Recover states and costates backward from a terminal state.

    Every ``x_t`` solves ``F(x_t, u_t) = x_{t+1}`` by bisection on ``[0, x_{t+1}]``,
    the upper end widened by ``model.resolution`` (the map must be increasing in ``x``); costates then follow from the
    transversality condition.  A diagnostic for hypothesised control sequences.
    """
    if ocp.state_dim != 1:
        raise ValidationError("costate_trace_backward needs a scalar state")
    u = np.asarray(candidate_controls, dtype=np.float64).reshape(ocp.horizon, ocp.control_dim)
    xs = np.empty(ocp.horizon + 1)
    xs[-1] = float(np.atleast_1d(terminal_state)[0])
    for t in range(ocp.horizon - 1, -1, -1):
        x = _invert_step(model, xs[t + 1], u[t], t, tol)
        if x is None:
            raise ValidationError(f"bisection bracket [0, x_{t + 1}] does not contain a "
                                  f"preimage at step {t}")
        xs[t] = x
    lam = np.empty(ocp.horizon + 1)
    lam[-1] = terminal_costate(ocp, xs[-1:])[0]
    for t in range(ocp.horizon - 1, -1, -1):
        lam[t] = costate_step_backward(ocp, model, xs[t:t + 1], u[t], lam[t + 1:t + 2], t)[0]
    return xs, lam
