import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from slice_attrib.cli import main
from slice_attrib.core import InputError
from slice_attrib.harness import (
    ExperimentConfig,
    case_study_config,
    pmap,
    run,
    seeds,
    trial_seed,
    wilson,
)
from slice_attrib.simulator import AttackHop, ScenarioConfig

ROOT = Path(__file__).resolve().parents[1]
SMALL_TYPE1 = {"horizons": [100], "confounder_trials": 20, "prds_trials": 50}


def _square(x):
    return x * x


def test_config_validation():
    with pytest.raises(InputError):
        ExperimentConfig("nope")
    with pytest.raises(InputError):
        ExperimentConfig("type1", trials=0)
    a = ExperimentConfig("type1", trials=10, seed=3, out="x")
    b = ExperimentConfig("type1", trials=10, seed=3, out="y")
    assert a.digest() == b.digest()
    assert a.digest() != ExperimentConfig("type1", trials=10, seed=4).digest()


def test_trial_seeds_are_stable_and_distinct():
    assert trial_seed(7, "a", 3) == trial_seed(7, "a", 3)
    s = seeds(7, "a", 100)
    assert len(set(s)) == 100
    assert set(s).isdisjoint(seeds(7, "b", 100))
    assert seeds(7, "a", 5) == s[:5]


def test_pool_order_is_independent_of_workers():
    items = list(range(25))
    assert pmap(_square, items, 1) == pmap(_square, items, 3) == [i * i for i in items]


def test_wilson_interval():
    lo, hi = wilson(50, 1000)
    assert lo < 0.05 < hi
    assert 0.0 == wilson(0, 100)[0]


def test_report_is_independent_of_jobs(tmp_path):
    cfg = ExperimentConfig("type1", trials=30, seed=5, overrides=SMALL_TYPE1)
    run(cfg, jobs=1, out_dir=tmp_path / "a")
    run(cfg, jobs=2, out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "results.json").read_bytes()
    assert a == (tmp_path / "b" / "results.json").read_bytes()
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    rep = json.loads(a)
    for key in ("config_hash", "versions", "constant_provenance", "checks", "passed"):
        assert key in rep
    assert rep["config_hash"] == cfg.digest()


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_cli_experiment_twice_is_byte_identical(tmp_path, capsys):
    conf = _write(tmp_path / "c.json", {"overrides": SMALL_TYPE1})
    codes = [main(["experiment", "type1", "--trials", "100", "--seed", "7", "--config", conf,
                   "--out", str(tmp_path / d)]) for d in ("r1", "r2")]
    assert codes[0] == codes[1] and codes[0] in (0, 1)
    assert (tmp_path / "r1" / "results.json").read_bytes() == (tmp_path / "r2" / "results.json").read_bytes()
    rep = json.loads((tmp_path / "r1" / "results.json").read_text())
    assert codes[0] == (0 if rep["passed"] else 1)
    out = capsys.readouterr().out
    assert "results.json" in out and ("PASS" in out or "FAIL" in out)


def test_cli_exit_code_tracks_acceptance(tmp_path):
    code = main(["bounds", "--out", str(tmp_path / "b")])
    rep = json.loads((tmp_path / "b" / "results.json").read_text())
    assert code == (0 if rep["passed"] else 1)
    names = {c["name"] for c in rep["checks"]}
    assert {"t_eff_300", "convergence_radius", "segment_length_formula", "sigma_dp"} <= names


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["attribute", "--in", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 2
    assert "missing" in capsys.readouterr().err
    assert main(["experiment", "nope"]) == 2
    assert main(["experiment", "type1", "--trials", "0"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["simulate", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "s")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "s")]) == 2


def test_bad_log_level_is_a_usage_error():
    env = dict(os.environ, SLICE_ATTRIB_LOG="loud")
    p = subprocess.run([sys.executable, "-m", "slice_attrib.cli", "bounds", "--out", "/tmp/unused"],
                       env=env, capture_output=True, text=True)
    assert p.returncode == 2
    assert "SLICE_ATTRIB_LOG" in p.stderr


def test_simulate_attribute_fit_roundtrip(tmp_path, capsys):
    small = ScenarioConfig(n_slices=5, horizon=500, hop_scale="effect",
                           attack_path=(AttackHop(1, 0), AttackHop(3, 1, 1, 0.5), AttackHop(4, 2, 1, 0.5)))
    conf = _write(tmp_path / "s.json", {"scenario": small.to_dict()})
    for seed in (1, 2):
        assert main(["simulate", "--config", conf, "--seed", str(seed), "--out", str(tmp_path / f"s{seed}")]) == 0
    assert main(["attribute", "--in", str(tmp_path / "s1"), "--out", str(tmp_path / "r1"), "--format", "csv"]) == 0
    rep = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert [h["slice"] for h in rep["path"]["hops"]] == [1, 3, 4]
    assert rep["ground_truth"]["path_matches"] is True
    assert (tmp_path / "r1" / "report.csv").read_text().startswith("source,")
    assert "1 -> 3 -> 4" in capsys.readouterr().out
    assert main(["fit", "--in", str(tmp_path / "s1"), str(tmp_path / "s2"), "--out", str(tmp_path / "f")]) == 0
    fitted = json.loads((tmp_path / "f" / "fit.json").read_text())
    assert abs(fitted["theta"]["omega1"] + fitted["theta"]["omega2"] - 1.0) < 1e-12


def test_shipped_case_study_config_matches_builder():
    data = json.loads((ROOT / "configs" / "case_study.json").read_text())
    assert ScenarioConfig.from_dict(data["scenario"]) == case_study_config(1)


def test_shipped_experiment_templates_parse():
    for path in sorted((ROOT / "configs").glob("*.json")):
        data = json.loads(path.read_text())
        if "experiment" in data:
            ExperimentConfig(data["experiment"], data.get("trials"), data.get("seed", 0),
                             data.get("overrides", {}))


@pytest.mark.slow
def test_case_study_through_cli(tmp_path):
    conf = str(ROOT / "configs" / "case_study.json")
    assert main(["simulate", "--config", conf, "--out", str(tmp_path / "s1")]) == 0
    assert main(["attribute", "--in", str(tmp_path / "s1"), "--out", str(tmp_path / "r1")]) == 0
    rep = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert len(rep["path"]["hops"]) == 6
    assert rep["ground_truth"]["path_matches"] is True
    assert rep["ground_truth"]["false_edges"] == 0
