"""Acceptance criteria, each run at its stated tolerance with the shipped defaults.

Every test prints one PASS/FAIL line; the full list is repeated in the
terminal summary.  The martian surrogate is trained once per module (about a
minute on a laptop CPU).
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from nnpmp.cli import main
from nnpmp.dynamics import AnalyticModel, SurrogateAdditive
from nnpmp.neural import ape, load_network
from nnpmp.pmp import fbs_solve, rollout
from nnpmp.problems import (BatteryParams, MartianParams, baseline_direct_solve, brute_force_oracle,
                            build_battery_ocp, build_martian_ocp, martian_closed_form,
                            terminal_error_percent)

TESTS = Path(__file__).parent
MARTIAN_STATES = np.array([3.0, 6.0, 12.0, 24.0, 48.0, 48.0])


def load(path):
    return json.loads(Path(path).read_text())


def run_cli(args):
    t0 = time.perf_counter()
    code = main(args)
    return code, time.perf_counter() - t0


@pytest.fixture(scope="module")
def martian_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("martian")
    code, seconds = run_cli(["train", "--problem", "martian", "--out", str(out)])
    assert code == 0
    return out, seconds


@pytest.fixture(scope="module")
def battery_runs(tmp_path_factory):
    outs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(f"battery_{name}")
        code, _ = run_cli(["compare", "--problem", "battery", "--out", str(out)])
        assert code == 0
        outs.append(out)
    return outs


def battery_report(out, method):
    return next(r for r in load(out / "summary.json")["reports"] if r["method"] == method)


def run_suite(selection):
    t0 = time.perf_counter()
    done = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider"]
                          + selection, capture_output=True, text=True, cwd=TESTS.parent)
    return done, time.perf_counter() - t0


def test_criterion_1_martian_surrogate_fit(martian_run, verdict):
    out, seconds = martian_run
    fit = load(out / "summary.json")["train"]
    ok = fit["test_ape_percent"] <= 5.0 and seconds <= 300
    assert verdict(1, "martian surrogate fit", ok,
                   f"test APE {fit['test_ape_percent']:.3f}% <= 5%, {seconds:.1f} s <= 300 s")


def test_criterion_2_martian_bang_bang_recovery(martian_run, verdict):
    out, _ = martian_run
    doc = load(out / "model.json")
    model = SurrogateAdditive(load_network(out / "model.json"), 1, doc["fit"]["test_max_abs_error"])
    ocp = build_martian_ocp(MartianParams())
    t0 = time.perf_counter()
    traj = fbs_solve(ocp, model, np.ones(5))
    seconds = time.perf_counter() - t0
    dev = float(np.max(np.abs(traj.controls[:, 0] - [1, 1, 1, 1, 0])))
    traj_ape = ape(traj.states[:, 0], MARTIAN_STATES)
    ok = traj.converged and dev <= 0.02 and traj_ape <= 2.0 and seconds <= 30
    assert verdict(2, "martian bang-bang recovery", ok,
                   f"max control deviation {dev:.4f} <= 0.02, trajectory APE {traj_ape:.3f}% <= 2%, "
                   f"{seconds:.2f} s <= 30 s")


def test_criterion_3_martian_oracle_equivalence(verdict):
    params = MartianParams()
    ocp = build_martian_ocp(params)
    truth = AnalyticModel("martian")
    t0 = time.perf_counter()
    _, oracle = brute_force_oracle(ocp, truth, u_grid_size=21)
    _, closed = martian_closed_form(params)
    fbs = fbs_solve(ocp, truth, np.ones(5)).objective
    seconds = time.perf_counter() - t0
    rel = abs(fbs - closed) / abs(closed)
    ok = oracle == 48.0 and closed == 48.0 and rel <= 0.005 and seconds <= 60
    assert verdict(3, "martian oracle equivalence", ok,
                   f"oracle {oracle:g} = closed form {closed:g} = 48, fbs rel. error {rel:.2e} <= 0.5%, "
                   f"{seconds:.2f} s <= 60 s")


def test_criterion_4_battery_surrogate_fit(battery_runs, verdict):
    out = battery_runs[0]
    fit = load(out / "summary.json")["surrogate_fit"]
    seconds = load(out / "timings.json")["train"]
    ok = fit["test_ape_percent"] <= 1.0 and seconds <= 60
    assert verdict(4, "battery surrogate fit", ok,
                   f"test APE {fit['test_ape_percent']:.3f}% <= 1%, {seconds:.1f} s <= 60 s")


def test_criterion_5_battery_shooting(battery_runs, verdict):
    out = battery_runs[0]
    shot, base = battery_report(out, "nn-pmp-shoot"), battery_report(out, "baseline")
    seconds = load(out / "timings.json")["nn-pmp-shoot"]
    ok = (shot["terminal_error_percent"] <= 3.0 and -10.0 <= shot["objective"] < 0.0
          and shot["objective"] < base["objective"] and seconds <= 60)
    assert verdict(5, "battery shooting", ok,
                   f"terminal error {shot['terminal_error_percent']:.3f}% <= 3%, objective "
                   f"{shot['objective']:.4f} in [-10, 0) and below baseline {base['objective']:.4f}, "
                   f"{seconds:.2f} s <= 60 s")


def test_criterion_6_shooting_wall_time(battery_runs, verdict):
    seconds = load(battery_runs[0] / "timings.json")["nn-pmp-shoot"]
    assert verdict(6, "shooting wall time", seconds <= 2.0, f"{seconds:.3f} s <= 2 s")


def test_criterion_7_gradient_suite(verdict):
    done, seconds = run_suite([str(TESTS / "test_neural.py"), "-k", "finite_differences"])
    ok = done.returncode == 0 and seconds <= 30
    assert verdict(7, "gradient suite", ok,
                   f"{done.stdout.strip().splitlines()[-1]}, {seconds:.1f} s <= 30 s")


def test_criterion_8_pmp_property_suite(verdict):
    selection = [str(TESTS / "test_pmp.py"), str(TESTS / "test_shooting.py"), "-k",
                 "hamiltonian_optimal or rollout_exactness or costate_constant or sense_symmetry "
                 "or secant_exact"]
    done, seconds = run_suite(selection)
    ok = done.returncode == 0 and seconds <= 60
    assert verdict(8, "pmp property suite", ok,
                   f"{done.stdout.strip().splitlines()[-1]}, {seconds:.1f} s <= 60 s")


def test_criterion_9_determinism(battery_runs, tmp_path, verdict):
    # wall times are the only run-to-run difference and live in timings.json alone
    pairs = [tuple(battery_runs)]
    fast = ["--set", "data.n=2000", "--set", "train.epochs=3"]
    martian = []
    for name in ("a", "b"):
        assert main(["compare", "--problem", "martian", "--out", str(tmp_path / name)] + fast) == 0
        martian.append(tmp_path / name)
    pairs.append(tuple(martian))
    compared, differing = 0, []
    for a, b in pairs:
        names = sorted(p.name for p in a.iterdir() if p.name != "timings.json")
        assert names == sorted(p.name for p in b.iterdir() if p.name != "timings.json")
        for name in names:
            compared += 1
            if (a / name).read_bytes() != (b / name).read_bytes():
                differing.append(name)
    assert verdict(9, "determinism", not differing,
                   f"{compared} files compared byte-for-byte, differing: {differing or 'none'}")


def test_excluded_item_baseline_is_worse(battery_runs, verdict):
    # qualitative stand-in for the solver-specific baseline numbers
    out = battery_runs[0]
    shot, base = battery_report(out, "nn-pmp-shoot"), battery_report(out, "baseline")
    params = BatteryParams()
    traj = baseline_direct_solve(params, restarts=20, seed=4, terminal_penalty=False)
    x_T = rollout(build_battery_ocp(params), AnalyticModel("battery"), traj.controls).states[-1, 0]
    err = terminal_error_percent(x_T, params.xT_target)
    ok = (base["objective"] > shot["objective"]
          and base["terminal_error_percent"] > shot["terminal_error_percent"] and err > 20.0)
    assert verdict("X", "baseline worse than shooting", ok,
                   f"cost {base['objective']:.4f} > {shot['objective']:.4f}, terminal error "
                   f"{base['terminal_error_percent']:.3f}% > {shot['terminal_error_percent']:.3f}%, "
                   f"{err:.1f}% > 20% without terminal penalty")
