"""Delimited-text and JSON writers for trajectories, costate maps and run records."""

from __future__ import annotations

import json
import platform
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .pmp import Trajectory

TRAJECTORY_HEADER = "t,x,u,lambda,stage_cost,price"


def fmt(v) -> str:
    return format(float(v), ".17g")


def _cell(arr, i):
    return "" if arr is None else fmt(arr[i])


def emit_trajectory(traj: Trajectory, path, prices=None) -> Path:
    """One row per t = 0..T; the last row has only ``t``, ``x`` and ``lambda``."""
    if traj.states.shape[-1] != 1 or traj.controls.shape[-1] != 1:
        raise ValidationError("emit_trajectory writes scalar-state, scalar-control trajectories")
    T = traj.horizon
    x = traj.states[:, 0]
    u = traj.controls[:, 0]
    lam = None if traj.costates is None else np.asarray(traj.costates).reshape(T + 1)
    lines = [TRAJECTORY_HEADER]
    for t in range(T + 1):
        last = t == T
        lines.append(",".join([
            str(t), fmt(x[t]),
            "" if last else fmt(u[t]),
            _cell(lam, t),
            "" if last else fmt(traj.stage_costs[t]),
            "" if last or prices is None else fmt(prices[t]),
        ]))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_trajectory(path):
    """Inverse of :func:`emit_trajectory`; returns ``(trajectory, prices or None)``."""
    rows = [line.split(",") for line in Path(path).read_text().splitlines()[1:] if line]
    x = np.array([[float(r[1])] for r in rows])
    u = np.array([[float(r[2])] for r in rows[:-1]])
    lam = None if rows[0][3] == "" else np.array([[float(r[3])] for r in rows])
    costs = np.array([float(r[4]) for r in rows[:-1]])
    prices = None if rows[0][5] == "" else np.array([float(r[5]) for r in rows[:-1]])
    return Trajectory(x, u, lam, costs, float(costs.sum())), prices


def emit_costate_map(cmap, path) -> Path:
    """``lambda0,feasible,x_T`` followed by the full state row, sorted by lambda0."""
    if not len(cmap):
        raise ValidationError("costate map is empty")
    T = cmap.entries[0].trajectory.horizon
    lines = ["lambda0,feasible,x_T," + ",".join(f"x_{t}" for t in range(T + 1))]
    for e in sorted(cmap.entries, key=lambda e: e.lambda0):
        states = ",".join(fmt(v) for v in e.trajectory.states[:, 0])
        lines.append(f"{fmt(e.lambda0)},{'true' if e.feasible else 'false'},{fmt(e.x_T)},{states}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_landscape(land, path) -> Path:
    lines = ["x,u,H"]
    for i, x in enumerate(land.x_values):
        for j, u in enumerate(land.u_grid):
            lines.append(f"{fmt(x)},{fmt(u)},{fmt(land.values[i, j])}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_loss_curve(curve, path) -> Path:
    path = Path(path)
    path.write_text("epoch,train_mse\n" + "".join(f"{i + 1},{fmt(v)}\n" for i, v in enumerate(curve)))
    return path


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(doc, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path


def manifest(config, seed, command) -> dict:
    import scipy

    from . import __version__
    return {
        "command": command,
        "seed": seed,
        "config": config,
        "versions": {
            "nnpmp": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
