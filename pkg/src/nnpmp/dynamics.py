"""Discrete-time next-state maps ``F(x, u, t)``.

All models broadcast over leading batch axes: ``x`` has shape ``(..., n)``,
``u`` has shape ``(..., m)``; ``step`` returns ``(..., n)``, ``jacobian_x``
returns ``(..., n, n)`` and ``jacobian_u`` returns ``(..., n, m)``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ValidationError
from .neural import Dataset, MlpNetwork, forward, input_jacobian

ANALYTIC_TAGS = ("martian", "battery", "battery_piecewise")


def eta_true(u):
    """Battery charging efficiency, 1/(1+e^u) + 0.5."""
    u = np.asarray(u, dtype=np.float64)
    return 0.5 * (1.0 - np.tanh(0.5 * u)) + 0.5


def _eta_true_grad(u):
    s = 0.5 * (1.0 - np.tanh(0.5 * u))
    return -s * (1.0 - s)


def eta_piecewise(u):
    u = np.asarray(u, dtype=np.float64)
    return np.where(u < 0.0, 1.1, 0.9)


def _check(x, u, n, m):
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if x.ndim == 0:
        x = x[None]
    if u.ndim == 0:
        u = u[None]
    if x.shape[-1] != n or u.shape[-1] != m:
        raise ValidationError(f"expected state dim {n} and control dim {m}, "
                              f"got shapes {x.shape} and {u.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValidationError("state and control must be finite")
    return x, u


class DynamicsModel:
    """Base class: subclasses implement ``_step`` and ``_jac_x``.

    ``resolution(x, u)`` is a bound on how far the model's next state may be
    from the true one; it is zero for exact models and is used by the PMP
    solver to ignore Hamiltonian differences the model cannot resolve.
    """

    state_dim = 1
    control_dim = 1
    name = "model"

    def step(self, x, u, t=0):
        x, u = _check(x, u, self.state_dim, self.control_dim)
        return self._step(x, u, t)

    def jacobian_x(self, x, u, t=0):
        x, u = _check(x, u, self.state_dim, self.control_dim)
        return self._jac_x(x, u, t)

    def jacobian_u(self, x, u, t=0):
        x, u = _check(x, u, self.state_dim, self.control_dim)
        return self._jac_u(x, u, t)

    def resolution(self, x, u):
        return 0.0

    def _jac_u(self, x, u, t, h=1e-6):
        # central differences; exact subclasses override
        cols = []
        for j in range(self.control_dim):
            du = np.zeros(self.control_dim)
            du[j] = h
            cols.append((self._step(x, u + du, t) - self._step(x, u - du, t)) / (2 * h))
        return np.stack(cols, axis=-1)


class AnalyticModel(DynamicsModel):
    """Known ground-truth dynamics for the two benchmarks and the baseline."""

    def __init__(self, tag):
        if tag not in ANALYTIC_TAGS:
            raise ValidationError(f"unknown analytic model {tag!r}; choose from {ANALYTIC_TAGS}")
        self.tag = tag
        self.name = tag

    def _step(self, x, u, t):
        if self.tag == "martian":
            return x + x * u
        if self.tag == "battery":
            return x + eta_true(u) * u
        return x + eta_piecewise(u) * u

    def _jac_x(self, x, u, t):
        if self.tag == "martian":
            return (1.0 + u)[..., None]
        return np.ones(x.shape + (1,))

    def _jac_u(self, x, u, t):
        if self.tag == "martian":
            return x[..., None]
        if self.tag == "battery":
            return (eta_true(u) + _eta_true_grad(u) * u)[..., None]
        # right derivative at the kink u = 0
        return eta_piecewise(u)[..., None]


class SurrogateAdditive(DynamicsModel):
    """``F(x, u) = x + f_NN(x, u)`` with the net taking ``[x, u]`` as input."""

    def __init__(self, net: MlpNetwork, state_dim=1, error_bound=0.0):
        if net.spec.output_dim != state_dim or net.spec.input_dim <= state_dim:
            raise ValidationError(
                f"additive surrogate needs a net (n+m)->n with n={state_dim}, "
                f"got {net.spec.input_dim}->{net.spec.output_dim}")
        self.net = net
        self.state_dim = state_dim
        self.control_dim = net.spec.input_dim - state_dim
        self.error_bound = float(error_bound)
        self.name = "surrogate_additive"

    def _inputs(self, x, u):
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        xb = np.broadcast_to(x, lead + (self.state_dim,))
        ub = np.broadcast_to(u, lead + (self.control_dim,))
        return np.concatenate([xb, ub], axis=-1).reshape(-1, self.net.spec.input_dim), lead

    def _step(self, x, u, t):
        z, lead = self._inputs(x, u)
        return x + forward(self.net, z).reshape(lead + (self.state_dim,))

    def _jac(self, x, u):
        z, lead = self._inputs(x, u)
        return input_jacobian(self.net, z).reshape(lead + (self.state_dim, -1))

    def _jac_x(self, x, u, t):
        return np.eye(self.state_dim) + self._jac(x, u)[..., :self.state_dim]

    def _jac_u(self, x, u, t):
        return self._jac(x, u)[..., self.state_dim:]

    def resolution(self, x, u):
        return self.error_bound


class SurrogateControlAffine(DynamicsModel):
    """``F(x, u) = x + f_NN(u) * u`` for scalar state and control."""

    def __init__(self, net: MlpNetwork, error_bound=0.0):
        if net.spec.input_dim != 1 or net.spec.output_dim != 1:
            raise ValidationError("control-affine surrogate needs a 1->1 network")
        self.net = net
        self.error_bound = float(error_bound)
        self.name = "surrogate_control_affine"

    def _eta(self, u):
        return forward(self.net, u.reshape(-1, 1)).reshape(u.shape)

    def _step(self, x, u, t):
        return x + self._eta(u) * u

    def _jac_x(self, x, u, t):
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
        return np.ones(lead + (1, 1))

    def _jac_u(self, x, u, t):
        d = input_jacobian(self.net, u.reshape(-1, 1)).reshape(u.shape)
        return (self._eta(u) + d * u)[..., None]

    def resolution(self, x, u):
        return self.error_bound * float(np.max(np.abs(u)))


# data generation ----------------------------------------------------------

SOURCES = {
    # tag: (input dim, state dim, target function on an (n, d) input array)
    "martian": (2, 1, lambda z: z[:, 0] * z[:, 1]),
    "battery": (1, 0, lambda z: eta_true(z[:, 0])),
}


def sample_dataset(source, ranges, n, noise_sigma=0.0, seed=0) -> Dataset:
    """Uniform i.i.d. inputs in ``ranges`` with (optionally noisy) ground-truth targets.

    The martian target is the increment ``x*u`` rather than the next state;
    the battery target is the efficiency ``eta(u)``.
    """
    if source not in SOURCES:
        raise ValidationError(f"unknown data source {source!r}; choose from {sorted(SOURCES)}")
    dim, state_dim, fn = SOURCES[source]
    ranges = [tuple(float(v) for v in r) for r in ranges]
    if len(ranges) != dim:
        raise ValidationError(f"source {source!r} needs {dim} ranges, got {len(ranges)}")
    for lo, hi in ranges:
        if not lo <= hi:
            raise ValidationError(f"empty sampling range [{lo}, {hi}]")
    if int(n) < 1:
        raise ValidationError("n must be at least 1")
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    inputs = lo + (hi - lo) * rng.random((int(n), dim))
    targets = fn(inputs)
    if noise_sigma > 0:
        targets = targets + rng.normal(0.0, noise_sigma, size=targets.shape)
    return Dataset(inputs, targets[:, None], ranges, float(noise_sigma), int(seed), state_dim)


def _fmt(v):
    return format(float(v), ".17g")


def save_dataset(data: Dataset, path) -> None:
    nx = data.state_dim
    nu = data.inputs.shape[1] - nx
    header = ([f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
              + [f"target{i}" for i in range(data.targets.shape[1])])
    lines = [",".join(header)]
    for row in np.hstack([data.inputs, data.targets]):
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> Dataset:
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    arr = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line])
    n_in = sum(1 for h in header if not h.startswith("target"))
    nx = sum(1 for h in header if h.startswith("x"))
    return Dataset(arr[:, :n_in], arr[:, n_in:], state_dim=nx)
