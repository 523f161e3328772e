"""Command-line front end.

    nnpmp <command> [--config FILE] [--problem NAME] [--set key.path=value ...]
                    [--seed N] [--out DIR] [--model-in FILE]

Commands: train, solve, shoot, landscape, oracle, compare.  Every run writes a
``summary.json`` and a ``run_manifest.json`` to the output directory, plus the
data files of the command.  Exit codes: 0 ok, 1 internal error, 2 invalid
input, 3 solver did not converge (artifacts are still written).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import export
from .dynamics import AnalyticModel, SurrogateAdditive, SurrogateControlAffine, sample_dataset, save_dataset
from .errors import ConvergenceError, ValidationError
from .neural import MlpSpec, TrainConfig, load_network, mlp_init, network_to_dict, train
from .pmp import fbs_solve, hamiltonian_landscape, costate_trace_backward, rollout
from .problems import (BatteryParams, MartianParams, baseline_direct_solve, brute_force_oracle,
                       build_battery_ocp, build_martian_ocp, martian_closed_form,
                       terminal_error_percent)
from .shooting import ShootingConfig, shoot

log = logging.getLogger("nnpmp")

COMMANDS = ("train", "solve", "shoot", "landscape", "oracle", "compare")

DEFAULTS = {
    "martian": {
        "problem": {"name": "martian", "T": 5, "x0": 3.0, "k": 1.0},
        "data": {"n": 40000, "ranges": [[0.0, 100.0], [0.0, 1.0]], "noise_sigma": 0.0,
                 "seed": None},
        "neural": {"layer_sizes": [2, 30, 30, 30, 1], "activations": ["tanh", "tanh", "tanh"],
                   "seed": None},
        "train": {"epochs": 400, "batch_size": 128, "learning_rate": 3e-3, "lr_decay": 0.99,
                  "optimizer": "adam", "train_fraction": 0.8, "seed": None},
        "pmp": {"n_grid": 201, "tol": 1e-6, "max_iter": 500, "relaxation": 0.5, "init": "upper",
                "indifference": None},
        "oracle": {"u_grid_size": 21, "x_grid_size": 2001},
        "landscape": {"x_values": [3.0, 6.0, 12.0, 24.0, 48.0], "lambda_next": 2.0, "t": 0,
                      "trace_terminal_states": [24.0, 48.0, 96.0]},
        "paths": {"model_in": None, "model_out": "model.json"},
    },
    "battery": {
        "problem": {"name": "battery", "T": 24, "x0": 2.0, "xT_target": 3.0, "alpha": 0.1,
                    "beta": 100.0, "x_max": 10.0, "u_min": -5.0, "u_max": 5.0,
                    "price_schedule": [[[0, 7], 5.0], [[8, 12], 7.0], [[13, 17], 10.0],
                                       [[18, 23], 6.0]]},
        "data": {"n": 5000, "ranges": [[-5.0, 5.0]], "noise_sigma": 0.01, "seed": None},
        "neural": {"layer_sizes": [1, 10, 1], "activations": ["sigmoid"], "seed": None},
        "train": {"epochs": 200, "batch_size": 64, "learning_rate": 1e-2, "lr_decay": 0.98,
                  "optimizer": "adam", "train_fraction": 0.8, "seed": None},
        "pmp": {"n_grid": 201},
        "shooting": {"num_samples": 100, "lambda0_range": [-20.0, 20.0], "precision": 0.05,
                     "max_iters": 50, "seed": None},
        "baseline": {"restarts": 20, "terminal_penalty": True, "seed": None},
        "oracle": {"u_grid_size": 201, "x_grid_size": 2001},
        "landscape": {"x_values": [2.0], "lambda_next": -7.0, "t": 0},
        "paths": {"model_in": None, "model_out": "model.json"},
    },
}

# offsets added to the global seed for sections that leave their seed unset
SEED_OFFSETS = {"data": 0, "neural": 1, "train": 2, "shooting": 3, "baseline": 4}


@dataclass
class RunConfig:
    command: str
    problem: str
    config: dict
    seed: int
    out: Path

    def section(self, name):
        return self.config.get(name, {})

    def seed_for(self, name):
        s = self.section(name).get("seed")
        return int(s) if s is not None else (self.seed + SEED_OFFSETS[name]) % 2**64


@dataclass
class SolveReport:
    problem: str
    method: str
    objective: float
    terminal_state: float
    terminal_error_percent: float | None
    wall_time_seconds: float
    iterations: int
    converged: bool
    seed: int
    model_objective: float | None = None
    model_terminal_state: float | None = None

    def as_dict(self, with_time=False):
        d = dict(self.__dict__)
        if not with_time:
            d.pop("wall_time_seconds")
        if d["terminal_error_percent"] is None:
            del d["terminal_error_percent"]
        return d


def _deep_update(base, extra):
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config, assignment):
    """Apply one ``a.b.c=value`` override; the value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ValidationError(f"override {assignment!r} must look like section.key=value")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = config
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValidationError(f"override {key!r}: {p!r} is not a section")
    node[parts[-1]] = _parse_value(value)


def build_run_config(args) -> RunConfig:
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"config: cannot read {args.config}: {exc}") from None
    overrides = {}
    for item in args.set or []:
        apply_override(overrides, item)
    problem = (args.problem or overrides.get("problem", {}).get("name")
               or file_cfg.get("problem", {}).get("name") or "battery")
    if problem not in DEFAULTS:
        raise ValidationError(f"problem.name must be one of {sorted(DEFAULTS)}, got {problem!r}")
    config = copy.deepcopy(DEFAULTS[problem])
    _deep_update(config, file_cfg)
    _deep_update(config, overrides)
    config["problem"]["name"] = problem
    if args.model_in:
        config["paths"]["model_in"] = args.model_in
    seed = int(args.seed if args.seed is not None else config.get("seed", 0) or 0)
    if not 0 <= seed < 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer")
    config["seed"] = seed
    return RunConfig(args.command, problem, config, seed, Path(args.out))


# building blocks -------------------------------------------------------------

def _params(rc):
    p = dict(rc.section("problem"))
    p.pop("name", None)
    try:
        if rc.problem == "martian":
            return MartianParams(**p)
        p["price_schedule"] = tuple((tuple(iv), pr) for iv, pr in p.get("price_schedule", []))
        return BatteryParams(**p)
    except TypeError as exc:
        raise ValidationError(f"problem: {exc}") from None


def _ocp(rc, params):
    return build_martian_ocp(params) if rc.problem == "martian" else build_battery_ocp(params)


def _truth(rc):
    return AnalyticModel(rc.problem)


def _train_surrogate(rc):
    d = rc.section("data")
    data = sample_dataset(rc.problem, d["ranges"], d["n"], d["noise_sigma"], rc.seed_for("data"))
    nn = rc.section("neural")
    spec = MlpSpec(tuple(nn["layer_sizes"]), tuple(nn["activations"]), rc.seed_for("neural"))
    tr = {k: v for k, v in rc.section("train").items() if k != "seed"}
    try:
        cfg = TrainConfig(seed=rc.seed_for("train"), **tr)
    except TypeError as exc:
        raise ValidationError(f"train: {exc}") from None
    net, report = train(mlp_init(spec), data, cfg)
    return net, report, data


def _wrap(rc, net, error_bound):
    if rc.problem == "martian":
        return SurrogateAdditive(net, 1, error_bound)
    return SurrogateControlAffine(net, error_bound)


def _surrogate(rc, outputs):
    """Load the configured model or train one; returns (model, fit info)."""
    path = rc.section("paths").get("model_in")
    if path:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"paths.model_in: cannot read {path}: {exc}") from None
        net = load_network(path)
        fit = doc.get("fit", {})
        return _wrap(rc, net, fit.get("test_max_abs_error") or 0.0), fit
    t0 = time.perf_counter()
    net, report, _ = _train_surrogate(rc)
    fit = report.as_dict()
    outputs["timings"]["train"] = time.perf_counter() - t0
    return _wrap(rc, net, report.test_max_abs_error), fit


def _report(rc, method, ocp, model_traj, controls, seconds, iterations, converged):
    truth = rollout(ocp, _truth(rc), controls)
    target = getattr(ocp.terminal, "value", None)
    x_T = float(truth.states[-1, 0])
    err = None if target is None else terminal_error_percent(x_T, float(target[0]))
    return SolveReport(rc.problem, method, truth.objective, x_T, err, seconds, int(iterations),
                       bool(converged), rc.seed,
                       None if model_traj is None else model_traj.objective,
                       None if model_traj is None else float(model_traj.states[-1, 0]))


def _prices(rc, params):
    return params.prices() if rc.problem == "battery" else None


def _init_controls(rc, ocp):
    init = rc.section("pmp").get("init", "upper")
    lo, hi = ocp.control_bounds[0]
    if isinstance(init, list):
        return np.asarray(init, dtype=float)
    table = {"upper": hi, "lower": lo, "mid": 0.5 * (lo + hi)}
    if init not in table:
        raise ValidationError(f"pmp.init must be upper, lower, mid or a list, got {init!r}")
    return np.full(ocp.horizon, table[init])


def _run_fbs(rc, ocp, model):
    p = rc.section("pmp")
    t0 = time.perf_counter()
    traj = fbs_solve(ocp, model, _init_controls(rc, ocp), max_iter=p.get("max_iter", 500),
                     tol=p.get("tol", 1e-6), relaxation=p.get("relaxation", 0.5),
                     n_grid=p.get("n_grid", 201), indifference=p.get("indifference"))
    return traj, time.perf_counter() - t0


def _shooting_cfg(rc):
    s = {k: v for k, v in rc.section("shooting").items() if k != "seed"}
    s["n_grid"] = rc.section("pmp").get("n_grid", 201)
    try:
        return ShootingConfig(seed=rc.seed_for("shooting"), **s)
    except TypeError as exc:
        raise ValidationError(f"shooting: {exc}") from None


def _run_shoot(rc, ocp, model, outputs, tag="nn-pmp-shoot"):
    t0 = time.perf_counter()
    try:
        res = shoot(ocp, model, _shooting_cfg(rc))
    except ConvergenceError as exc:
        seconds = time.perf_counter() - t0
        if exc.trajectory is not None:
            outputs["files"].append(export.emit_trajectory(
                exc.trajectory, rc.out / f"trajectory_{tag}.csv", _prices(rc, _params(rc))))
        raise
    seconds = time.perf_counter() - t0
    return res, seconds


# commands --------------------------------------------------------------------

def cmd_train(rc, outputs):
    t0 = time.perf_counter()
    net, report, data = _train_surrogate(rc)
    outputs["timings"]["train"] = time.perf_counter() - t0
    save_dataset(data, rc.out / "dataset.csv")
    doc = network_to_dict(net)
    doc["fit"] = report.as_dict()
    model_out = Path(rc.section("paths").get("model_out") or "model.json")
    if not model_out.is_absolute():
        model_out = rc.out / model_out
    export.write_json(doc, model_out)
    export.emit_loss_curve(report.loss_curve, rc.out / "loss_curve.csv")
    outputs["summary"]["train"] = report.as_dict()
    outputs["summary"]["model_file"] = model_out.name
    log.info("trained %s surrogate: test APE %.3f%%", rc.problem, report.test_ape_percent)


def cmd_solve(rc, outputs):
    if rc.problem == "battery":
        return cmd_shoot(rc, outputs)
    params = _params(rc)
    ocp = _ocp(rc, params)
    model, fit = _surrogate(rc, outputs)
    outputs["summary"]["surrogate_fit"] = fit
    traj, seconds = _run_fbs(rc, ocp, model)
    export.emit_trajectory(traj, rc.out / "trajectory_nn-pmp-fbs.csv")
    rep = _report(rc, "nn-pmp-fbs", ocp, traj, traj.controls, seconds, traj.iterations,
                  traj.converged)
    outputs["reports"].append(rep)
    if not traj.converged:
        raise ConvergenceError(f"forward-backward sweep did not converge in {traj.iterations} sweeps",
                               traj, traj.iterations)


def cmd_shoot(rc, outputs):
    if rc.problem != "battery":
        raise ValidationError("shoot requires a terminal target (problem.xT_target); "
                              f"problem {rc.problem!r} has a free terminal state")
    params = _params(rc)
    ocp = _ocp(rc, params)
    model, fit = _surrogate(rc, outputs)
    outputs["summary"]["surrogate_fit"] = fit
    res, seconds = _run_shoot(rc, ocp, model, outputs)
    export.emit_trajectory(res.trajectory, rc.out / "trajectory_nn-pmp-shoot.csv", params.prices())
    export.emit_costate_map(res.costate_map, rc.out / "costate_map.csv")
    outputs["summary"]["shooting"] = {"lambda0": res.lambda0, "secant_iterations": res.iterations,
                                      "model_terminal_error": res.terminal_error,
                                      "feasible_map_entries": sum(e.feasible for e in res.costate_map.entries)}
    outputs["reports"].append(_report(rc, "nn-pmp-shoot", ocp, res.trajectory,
                                      res.trajectory.controls, seconds, res.iterations, True))


def cmd_landscape(rc, outputs):
    params = _params(rc)
    ocp = _ocp(rc, params)
    model, fit = _surrogate(rc, outputs)
    outputs["summary"]["surrogate_fit"] = fit
    cfg = rc.section("landscape")
    land = hamiltonian_landscape(ocp, model, cfg["x_values"], cfg["lambda_next"], cfg.get("t", 0),
                                 rc.section("pmp").get("n_grid", 201))
    export.emit_landscape(land, rc.out / "landscape.csv")
    outputs["summary"]["landscape_argopt"] = {
        export.fmt(x): float(u) for x, u in zip(land.x_values, land.grid_argopt(ocp.sense))}
    if rc.problem == "martian":
        controls = np.ones(ocp.horizon)
        controls[-1] = 0.0
        lines = ["x_T,t,x,lambda"]
        failures = {}
        for xT in cfg.get("trace_terminal_states", []):
            try:
                xs, lam = costate_trace_backward(ocp, model, xT, controls)
            except ValidationError as exc:
                # a rough surrogate may have no preimage in [0, x_{t+1}]; keep the other traces
                log.warning("costate trace from x_T=%s skipped: %s", xT, exc)
                failures[export.fmt(xT)] = str(exc)
                continue
            lines += [f"{export.fmt(xT)},{t},{export.fmt(xs[t])},{export.fmt(lam[t])}"
                      for t in range(ocp.horizon + 1)]
        if failures:
            outputs["summary"]["costate_trace_failures"] = failures
        (rc.out / "costate_trace.csv").write_text("\n".join(lines) + "\n")


def _oracle(rc, ocp, outputs):
    o = rc.section("oracle")
    t0 = time.perf_counter()
    controls, _ = brute_force_oracle(ocp, _truth(rc), o.get("u_grid_size", 21),
                                     o.get("x_grid_size", 2001))
    seconds = time.perf_counter() - t0
    traj = rollout(ocp, _truth(rc), controls)
    export.emit_trajectory(traj, rc.out / "trajectory_oracle.csv", _prices(rc, _params(rc)))
    outputs["reports"].append(_report(rc, "oracle", ocp, traj, controls, seconds, 0, True))


def cmd_oracle(rc, outputs):
    _oracle(rc, _ocp(rc, _params(rc)), outputs)


def cmd_compare(rc, outputs):
    params = _params(rc)
    ocp = _ocp(rc, params)
    model, fit = _surrogate(rc, outputs)
    outputs["summary"]["surrogate_fit"] = fit
    if rc.problem == "martian":
        t0 = time.perf_counter()
        controls, _ = martian_closed_form(params)
        seconds = time.perf_counter() - t0
        cf = rollout(ocp, _truth(rc), controls)
        export.emit_trajectory(cf, rc.out / "trajectory_closed-form.csv")
        outputs["reports"].append(_report(rc, "closed-form", ocp, cf, controls, seconds, 0, True))
        traj, seconds = _run_fbs(rc, ocp, model)
        export.emit_trajectory(traj, rc.out / "trajectory_nn-pmp-fbs.csv")
        outputs["reports"].append(_report(rc, "nn-pmp-fbs", ocp, traj, traj.controls, seconds,
                                          traj.iterations, traj.converged))
    else:
        res, seconds = _run_shoot(rc, ocp, model, outputs)
        export.emit_trajectory(res.trajectory, rc.out / "trajectory_nn-pmp-shoot.csv",
                               params.prices())
        export.emit_costate_map(res.costate_map, rc.out / "costate_map.csv")
        outputs["reports"].append(_report(rc, "nn-pmp-shoot", ocp, res.trajectory,
                                          res.trajectory.controls, seconds, res.iterations, True))
        b = rc.section("baseline")
        t0 = time.perf_counter()
        base = baseline_direct_solve(params, b.get("restarts", 20), rc.seed_for("baseline"),
                                     b.get("terminal_penalty", True))
        seconds = time.perf_counter() - t0
        export.emit_trajectory(base, rc.out / "trajectory_baseline.csv", params.prices())
        outputs["reports"].append(_report(rc, "baseline", ocp, base, base.controls, seconds, 0, True))
    _oracle(rc, ocp, outputs)


HANDLERS = {"train": cmd_train, "solve": cmd_solve, "shoot": cmd_shoot,
            "landscape": cmd_landscape, "oracle": cmd_oracle, "compare": cmd_compare}


def _finish(rc, outputs):
    summary = dict(outputs["summary"])
    summary["problem"] = rc.problem
    summary["command"] = rc.command
    summary["reports"] = [r.as_dict() for r in outputs["reports"]]
    export.write_json(summary, rc.out / "summary.json")
    timings = dict(outputs["timings"])
    timings.update({r.method: r.wall_time_seconds for r in outputs["reports"]})
    # wall-clock numbers live in their own file so that every other output is reproducible
    export.write_json(timings, rc.out / "timings.json")
    export.write_json(export.manifest(rc.config, rc.seed, rc.command), rc.out / "run_manifest.json")


def run(rc: RunConfig) -> int:
    """Execute one command; returns the process exit code."""
    try:
        rc.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("output: cannot create %s: %s", rc.out, exc)
        return 2
    outputs = {"summary": {}, "reports": [], "timings": {}, "files": []}
    code = 0
    try:
        HANDLERS[rc.command](rc, outputs)
    except ValidationError as exc:
        log.error("invalid input: %s", exc)
        code = 2
    except ConvergenceError as exc:
        log.error("did not converge: %s", exc)
        outputs["summary"]["error"] = str(exc)
        code = 3
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        code = 1
    if code in (0, 3):
        _finish(rc, outputs)
        for r in outputs["reports"]:
            line = (f"{r.method:14s} objective={r.objective:.6g} x_T={r.terminal_state:.6g} "
                    f"time={r.wall_time_seconds:.3f}s")
            if r.terminal_error_percent is not None:
                line += f" terminal_error={r.terminal_error_percent:.3f}%"
            print(line)
    return code


def make_parser():
    parser = argparse.ArgumentParser(prog="nnpmp", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--problem", choices=sorted(DEFAULTS))
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key override, e.g. pmp.tol=1e-7 (repeatable)")
        p.add_argument("--seed", type=int, help="global seed (unsigned 64-bit)")
        p.add_argument("--out", default="nnpmp_out", help="output directory")
        p.add_argument("--model-in", help="trained surrogate (JSON) to use instead of training")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        rc = build_run_config(args)
    except ValidationError as exc:
        log.error("invalid input: %s", exc)
        return 2
    return run(rc)


if __name__ == "__main__":
    sys.exit(main())
