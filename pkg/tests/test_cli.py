import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from artifact.cli import CONFIG_DIR, ExperimentConfig, emit_plots, main
from artifact.core_model import ConfigurationError


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_maximal_dirac_level_curve(tmp_path):
    assert main(["maximal", "--measure", "dirac", "--k", "1", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "level_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    vals = np.array([float(r["value"]) for r in rows])
    np.testing.assert_allclose(vals, 1.0, atol=0.02)


def test_flow_rotation_returns(tmp_path):
    assert main(["flow", "--field", "rotation", "--T", "6.2832", "--out", str(tmp_path)]) == 0
    m = _manifest(tmp_path)
    assert m["summary"]["return_error"] <= 1e-8
    # T is not exactly 2 pi, so the closure error reflects the missing 7e-6 of angle
    assert m["summary"]["closure_error"] <= 1e-4
    assert (tmp_path / "trajectories.csv").read_text().startswith("particle_id,t,x1,x2\n")


def test_empty_lambda_grid_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"lambdas": []}))
    code = main(["maximal", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code != 0
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigurationError"


def test_bad_config_values():
    with pytest.raises(ConfigurationError):
        ExperimentConfig("flow", {"dt": -1.0})
    with pytest.raises(ConfigurationError):
        ExperimentConfig("maximal", {"subcommand": "flow"})
    with pytest.raises(ConfigurationError):
        ExperimentConfig("maximal", {"criterion": 99})


def test_manifest_fields(tmp_path):
    assert main(["maximal", "--measure", "dirac", "--k", "1", "--out", str(tmp_path), "--seed", "3"]) == 0
    m = _manifest(tmp_path)
    for key in ("config_hash", "seed", "versions", "runtimes", "outputs", "warnings", "skipped_figures"):
        assert key in m
    assert m["seed"] == 3
    assert set(m["versions"]) >= {"numpy", "scipy", "python"}
    assert "level_curve.csv" in m["outputs"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"measure": "random_atoms", "k": 1, "n_atoms": 5, "h": 1e-3}))
    hashes = []
    for name in ("a", "b"):
        assert main(["maximal", "--config", str(cfg), "--seed", "11", "--out", str(tmp_path / name)]) == 0
        hashes.append(_manifest(tmp_path / name)["outputs"])
    assert hashes[0] == hashes[1]
    assert (tmp_path / "a" / "level_curve.csv").read_bytes() == (tmp_path / "b" / "level_curve.csv").read_bytes()


def test_seed_changes_random_measure(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"measure": "random_atoms", "k": 1, "n_atoms": 5, "h": 1e-3}))
    outs = []
    for seed in ("1", "2"):
        main(["maximal", "--config", str(cfg), "--seed", seed, "--out", str(tmp_path / seed)])
        outs.append(_manifest(tmp_path / seed)["outputs"]["level_curve.csv"])
    assert outs[0] != outs[1]


def test_criterion_config_writes_result(tmp_path):
    path = CONFIG_DIR / "criterion_07.json"
    assert main(["singular", "--config", str(path), "--out", str(tmp_path)]) == 0
    rec = json.loads((tmp_path / "criterion_07.json").read_text())
    assert rec["passed"] is True
    assert "runtime" not in rec


def test_acceptance_configs_cover_all_criteria():
    nums = sorted(json.loads(p.read_text())["criterion"] for p in CONFIG_DIR.glob("criterion_*.json"))
    assert nums == list(range(1, 14))


def test_emit_plots_level_curve(tmp_path):
    (tmp_path / "level_curve.csv").write_text("lambda,value\n1,1\n2,1\n")
    skipped = emit_plots(tmp_path)
    assert sorted(p.name for p in tmp_path.glob("plot_*.py")) == ["plot_level_curves.py"]
    assert "level_curves" not in skipped
    compile((tmp_path / "plot_level_curves.py").read_text(), "plot", "exec")


def test_emit_plots_empty_dir(tmp_path):
    skipped = emit_plots(tmp_path)
    assert not list(tmp_path.glob("plot_*.py"))
    report = json.loads((tmp_path / "skipped_figures.json").read_text())
    assert report["skipped"] == skipped and len(skipped) == 4


def test_emit_plots_overlays_eps_sweeps(tmp_path):
    (tmp_path / "eps_sweep_a.csv").write_text("eps,statistic\n0.1,1\n")
    (tmp_path / "eps_sweep_b.csv").write_text("eps,statistic\n0.1,2\n")
    emit_plots(tmp_path)
    scripts = list(tmp_path.glob("plot_*.py"))
    assert [p.name for p in scripts] == ["plot_eps_scaling.py"]
    text = scripts[0].read_text()
    assert "eps_sweep_a.csv" in text and "eps_sweep_b.csv" in text


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "artifact", "flow", "--T", "0"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip())["error"] == "ConfigurationError"
