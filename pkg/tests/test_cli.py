import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from ilmrisk import io
from ilmrisk.cli import main
from ilmrisk.risk import infection_labels

SMALL = [
    "--set", "simulation.population_size=400",
    "--set", "simulation.days=30",
    "--set", "inference.starts=2",
    "--set", "inference.iterations=2",
    "--set", "inference.particle_count=100",
    "--set", "evaluation.resamples=50",
]


def run(*argv):
    return main([*argv, *SMALL])


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--seed", "3", "--out", str(out)) == 0
    return out


@pytest.fixture(scope="module")
def fit_dir(tmp_path_factory, sim_dir):
    out = tmp_path_factory.mktemp("fit")
    argv = ["fit", "--series", str(sim_dir / "series.csv"), "--contacts", str(sim_dir / "contacts.csv")]
    assert run(*argv, "--seed", "3", "--out", str(out)) == 0
    return out


def run_inputs(sim_dir):
    return ["--series", str(sim_dir / "series.csv"), "--contacts", str(sim_dir / "contacts.csv")]


def test_simulate_writes_run_and_manifest(sim_dir):
    assert set(files(sim_dir)) == {"population.csv", "contacts.csv", "series.csv", "states.csv", "manifest.json"}
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["subcommand"] == "simulate" and manifest["seed"] == 3
    assert len(manifest["config_sha256"]) == 64
    rows = io.read_series(sim_dir / "series.csv")
    assert np.all(rows[:, 1:5].sum(axis=1) == 400)
    assert b"\r\n" not in (sim_dir / "series.csv").read_bytes()


def test_simulate_is_byte_identical(tmp_path, sim_dir):
    assert run("simulate", "--seed", "3", "--out", str(tmp_path)) == 0
    assert files(tmp_path) == files(sim_dir)


def test_zero_days_gives_header_only_series(tmp_path):
    assert main(["simulate", "--seed", "1", "--out", str(tmp_path), "--set", "simulation.days=0",
                 "--set", "simulation.population_size=20"]) == 0
    assert (tmp_path / "series.csv").read_text() == ",".join(io.SERIES_HEADER) + "\n"


def test_manifest_hash_follows_config(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("simulate", "--seed", "3", "--out", str(a))
    run("simulate", "--seed", "3", "--out", str(b), "--set", "simulation.rho=0.5")
    digest = lambda d: json.loads((d / "manifest.json").read_text())["config_sha256"]
    assert digest(a) != digest(b)


def test_fit_smoke(tmp_path, sim_dir):
    argv = ["fit", *run_inputs(sim_dir), "--seed", "1", "--out", str(tmp_path),
            "--set", "simulation.population_size=400", "--set", "inference.starts=1",
            "--set", "inference.iterations=1", "--set", "inference.particle_count=50"]
    assert main(argv) == 0
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert len(fit["starts"]) == 1
    assert set(fit["ratio_estimates"]) == {"a0/a1", "b0/b1"}


def test_fit_is_independent_of_threads(tmp_path, sim_dir, fit_dir):
    argv = ["fit", *run_inputs(sim_dir), "--seed", "3", "--out", str(tmp_path), "--threads", "3"]
    assert run(*argv) == 0
    assert (tmp_path / "fit.json").read_bytes() == (fit_dir / "fit.json").read_bytes()


def test_score_and_evaluate(tmp_path, sim_dir, fit_dir):
    score_dirs = [tmp_path / "s1", tmp_path / "s2"]
    for d in score_dirs:
        argv = ["score", *run_inputs(sim_dir), "--fit", str(fit_dir / "fit.json"), "--seed", "3", "--out", str(d)]
        assert run(*argv) == 0
    assert files(score_dirs[0]) == files(score_dirs[1])
    risk = io.read_risk(score_dirs[0] / "risk.csv")
    # one row per (agent, day) not yet infected before the window
    labels = infection_labels(io.read_states(sim_dir / "states.csv", 30), 14)[:30]
    assert len(risk["id"]) == np.count_nonzero(labels >= 0)
    # no contacts in the window means no risk
    assert np.all(risk["score"][risk["window_prob"] == 0] == 0)

    eval_dirs = [tmp_path / "e1", tmp_path / "e2"]
    for d in eval_dirs:
        argv = ["evaluate", "--risk", str(score_dirs[0] / "risk.csv"), "--labels", str(sim_dir / "states.csv"),
                "--seed", "3", "--out", str(d)]
        assert run(*argv) == 0
    assert files(eval_dirs[0]) == files(eval_dirs[1])
    report = json.loads((eval_dirs[0] / "eval.json").read_text())
    assert 0 <= report["auc"] <= 1
    lo, hi = report["auc_ci_95"]
    assert lo <= report["auc"] <= hi


def write_synthetic(tmp_path, labels, scores):
    n = len(labels)
    io.write_risk(tmp_path / "risk.csv", range(n), [0] * n, [1.0] * n, scores, scores, [s > 0.5 for s in scores])
    io.write_csv(tmp_path / "labels.csv", io.LABELS_HEADER, [(i, 0, lab) for i, lab in enumerate(labels)])


def test_evaluate_perfect_labels(tmp_path):
    labels = [0, 1] * 50
    write_synthetic(tmp_path, labels, [0.2 + 0.6 * lab for lab in labels])
    argv = ["evaluate", "--risk", str(tmp_path / "risk.csv"), "--labels", str(tmp_path / "labels.csv"),
            "--seed", "0", "--out", str(tmp_path / "eval")]
    assert run(*argv) == 0
    report = json.loads((tmp_path / "eval" / "eval.json").read_text())
    assert report["auc"] == 1.0
    assert report["sensitivity"] == 1.0 and report["specificity"] == 1.0
    with open(tmp_path / "eval" / "roc.csv", newline="") as fh:
        assert next(csv.reader(fh)) == ["fpr", "tpr"]


def test_evaluate_shuffled_labels(tmp_path):
    rng = np.random.default_rng(0)
    labels = rng.permutation(np.repeat([0, 1], 2000)).tolist()
    write_synthetic(tmp_path, labels, rng.random(4000).tolist())
    argv = ["evaluate", "--risk", str(tmp_path / "risk.csv"), "--labels", str(tmp_path / "labels.csv"),
            "--seed", "0", "--out", str(tmp_path / "eval")]
    assert run(*argv) == 0
    assert json.loads((tmp_path / "eval" / "eval.json").read_text())["auc"] == pytest.approx(0.5, abs=0.03)


def test_intervene_none_matches_simulate(tmp_path, sim_dir):
    assert run("intervene", "--scenarios", "none", "--seed", "3", "--out", str(tmp_path)) == 0
    assert (tmp_path / "series_none.csv").read_bytes() == (sim_dir / "series.csv").read_bytes()
    peaks = json.loads((tmp_path / "peaks.json").read_text())
    assert peaks["ordering"] == ["none"]


def test_intervene_all_scenarios_deterministic(tmp_path, sim_dir, fit_dir):
    outs = [tmp_path / "a", tmp_path / "b"]
    for d in outs:
        argv = ["intervene", "--fit", str(fit_dir / "fit.json"), "--seed", "3", "--out", str(d)]
        assert run(*argv) == 0
    assert files(outs[0]) == files(outs[1])
    assert {"series_none.csv", "series_delayed-4.csv", "series_instant.csv", "peaks.json"} <= set(files(outs[0]))
    peaks = json.loads((outs[0] / "peaks.json").read_text())
    assert peaks["threshold"] > 0
    assert (outs[0] / "series_none.csv").read_bytes() == (sim_dir / "series.csv").read_bytes()


def test_unknown_scenario_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("intervene", "--scenarios", "none,sometimes", "--seed", "3", "--out", str(tmp_path))
    assert exc.value.code == 2
    assert "unknown scenario" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    assert main(["simulate", "--seed", "1", "--out", str(tmp_path), "--set", "simulation.p_imm=2"]) == 1
    assert "p_imm" in capsys.readouterr().err


def test_missing_input_exit_code(tmp_path, capsys):
    argv = ["fit", "--series", str(tmp_path / "none.csv"), "--contacts", str(tmp_path / "none.csv"),
            "--seed", "1", "--out", str(tmp_path / "o")]
    assert main(argv) == 1
    assert "not found" in capsys.readouterr().err


def test_malformed_csv_exit_code(tmp_path, sim_dir, capsys):
    bad = tmp_path / "series.csv"
    bad.write_text("day,S\n1,2\n")
    for name in ("population.csv", "states.csv"):
        (tmp_path / name).write_bytes((sim_dir / name).read_bytes())
    argv = ["fit", "--series", str(bad), "--contacts", str(sim_dir / "contacts.csv"), "--seed", "1",
            "--out", str(tmp_path / "o")]
    assert main(argv) == 1
    assert "header" in capsys.readouterr().err


def test_collapsed_fit_exit_code(tmp_path, sim_dir, capsys):
    # reporting probability 1 cannot explain a series with unreported cases
    series = io.read_series(sim_dir / "series.csv")
    series[:, 6] = series[:, 5] + 1
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    io.write_csv(run_dir / "series.csv", io.SERIES_HEADER, series.tolist())
    for name in ("population.csv", "states.csv", "contacts.csv"):
        (run_dir / name).write_bytes((sim_dir / name).read_bytes())
    argv = ["fit", "--series", str(run_dir / "series.csv"), "--contacts", str(run_dir / "contacts.csv"),
            "--seed", "1", "--out", str(tmp_path / "o")]
    assert run(*argv) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_console_script(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "ilmrisk.cli", "simulate", "--seed", "2", "--out", str(tmp_path),
         "--set", "simulation.population_size=50", "--set", "simulation.days=5"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    assert (tmp_path / "manifest.json").exists()
