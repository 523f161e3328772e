import json
import subprocess
import sys

import pytest

from nnpmp.cli import apply_override, main
from nnpmp.errors import ValidationError

# small settings so the CLI paths run in about a second
FAST_MARTIAN = ["--set", "data.n=2000", "--set", "train.epochs=3"]


def load(path):
    return json.loads(path.read_text())


def test_override_parsing():
    cfg = {}
    apply_override(cfg, "pmp.tol=1e-7")
    apply_override(cfg, "shooting.lambda0_range=[-5, 5]")
    apply_override(cfg, "pmp.init=upper")
    apply_override(cfg, "baseline.terminal_penalty=false")
    assert cfg == {"pmp": {"tol": 1e-7, "init": "upper"}, "shooting": {"lambda0_range": [-5, 5]},
                   "baseline": {"terminal_penalty": False}}
    with pytest.raises(ValidationError):
        apply_override(cfg, "pmp.tol")


def test_train_writes_model_and_report(tmp_path):
    assert main(["train", "--problem", "battery", "--out", str(tmp_path)]) == 0
    model = load(tmp_path / "model.json")
    assert {"version", "layer_sizes", "activations", "weights", "biases"} <= set(model)
    assert model["layer_sizes"] == [1, 10, 1]
    summary = load(tmp_path / "summary.json")
    assert summary["train"]["test_ape_percent"] <= 1.0
    assert (tmp_path / "loss_curve.csv").exists() and (tmp_path / "dataset.csv").exists()
    assert (tmp_path / "run_manifest.json").exists()


def test_shoot_default_target(tmp_path):
    assert main(["shoot", "--problem", "battery", "--out", str(tmp_path)]) == 0
    report = load(tmp_path / "summary.json")["reports"][0]
    assert report["method"] == "nn-pmp-shoot"
    assert report["terminal_error_percent"] <= 0.05 / 3.0 * 100
    assert report["objective"] < 0
    assert (tmp_path / "costate_map.csv").exists()
    assert (tmp_path / "trajectory_nn-pmp-shoot.csv").exists()


def test_shoot_reuses_a_trained_model(tmp_path):
    assert main(["train", "--problem", "battery", "--out", str(tmp_path / "t")]) == 0
    model = tmp_path / "t" / "model.json"
    assert main(["shoot", "--problem", "battery", "--model-in", str(model), "--out",
                 str(tmp_path / "a")]) == 0
    assert main(["shoot", "--problem", "battery", "--out", str(tmp_path / "b")]) == 0
    # same seed, same trained network: loading it must reproduce the in-process run
    assert (tmp_path / "a" / "trajectory_nn-pmp-shoot.csv").read_bytes() == \
        (tmp_path / "b" / "trajectory_nn-pmp-shoot.csv").read_bytes()


def test_shoot_on_free_terminal_problem_is_rejected(tmp_path, caplog):
    assert main(["shoot", "--problem", "martian", "--out", str(tmp_path)]) == 2
    assert "xT_target" in caplog.text


def test_convergence_failure_still_writes_artifacts(tmp_path):
    code = main(["shoot", "--problem", "battery", "--out", str(tmp_path), "--set",
                 "shooting.precision=1e-14", "--set", "shooting.max_iters=1"])
    assert code == 3
    summary = load(tmp_path / "summary.json")
    assert "error" in summary
    assert (tmp_path / "trajectory_nn-pmp-shoot.csv").exists()


@pytest.mark.parametrize("args,field", [
    (["--set", "train.epochs=0"], "epochs"),
    (["--set", "train.momentum=0.9"], "momentum"),
    (["--set", "problem.x0=50"], "x0"),
    (["--set", "shooting.precision=-1"], "precision"),
])
def test_validation_errors_name_the_field(tmp_path, caplog, args, field):
    assert main(["shoot", "--problem", "battery", "--out", str(tmp_path)] + args) == 2
    assert field in caplog.text


def test_unreadable_config_is_a_validation_error(tmp_path, caplog):
    assert main(["solve", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert "config" in caplog.text


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"problem": {"name": "martian", "T": 3},
                               "oracle": {"u_grid_size": 11}}))
    assert main(["oracle", "--config", str(cfg), "--set", "problem.T=2", "--out",
                 str(tmp_path / "o")]) == 0
    report = load(tmp_path / "o" / "summary.json")["reports"][0]
    assert report["objective"] == 6.0
    manifest = load(tmp_path / "o" / "run_manifest.json")
    assert manifest["config"]["problem"]["T"] == 2
    assert manifest["config"]["oracle"]["u_grid_size"] == 11
    assert "terminal_error_percent" not in report


def test_martian_solve_and_landscape(tmp_path):
    assert main(["train", "--problem", "martian", "--out", str(tmp_path / "t")] + FAST_MARTIAN) == 0
    model = str(tmp_path / "t" / "model.json")
    assert main(["solve", "--problem", "martian", "--model-in", model, "--out",
                 str(tmp_path / "s")]) in (0, 3)
    rows = (tmp_path / "s" / "trajectory_nn-pmp-fbs.csv").read_text().splitlines()
    assert rows[0] == "t,x,u,lambda,stage_cost,price" and len(rows) == 7
    assert main(["landscape", "--problem", "martian", "--model-in", model, "--out",
                 str(tmp_path / "l")]) == 0
    assert len((tmp_path / "l" / "landscape.csv").read_text().splitlines()) == 1 + 5 * 201
    trace = (tmp_path / "l" / "costate_trace.csv").read_text().splitlines()
    skipped = load(tmp_path / "l" / "summary.json").get("costate_trace_failures", {})
    assert trace[0] == "x_T,t,x,lambda" and len(trace) == 1 + (3 - len(skipped)) * 6


def test_compare_battery_rows_and_timings(tmp_path):
    assert main(["compare", "--problem", "battery", "--out", str(tmp_path),
                 "--set", "baseline.restarts=3"]) == 0
    reports = load(tmp_path / "summary.json")["reports"]
    assert [r["method"] for r in reports] == ["nn-pmp-shoot", "baseline", "oracle"]
    timings = load(tmp_path / "timings.json")
    assert all(timings[m] >= 0 for m in ("nn-pmp-shoot", "baseline", "oracle", "train"))
    for name in ("trajectory_baseline.csv", "trajectory_oracle.csv", "costate_map.csv"):
        assert (tmp_path / name).exists()


def test_compare_martian_rows(tmp_path):
    assert main(["compare", "--problem", "martian", "--out", str(tmp_path)] + FAST_MARTIAN) == 0
    reports = load(tmp_path / "summary.json")["reports"]
    assert [r["method"] for r in reports] == ["closed-form", "nn-pmp-fbs", "oracle"]
    assert reports[0]["objective"] == reports[2]["objective"] == 48.0


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "nnpmp", "oracle", "--problem", "martian",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert done.returncode == 0
    assert "oracle" in done.stdout


def test_bad_command_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["fly"])
    assert info.value.code == 2
