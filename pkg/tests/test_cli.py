"""End-to-end command line behavior: run, verify, plan, exit codes."""

import json

import numpy as np
import pytest

from slreach.cli import main
from slreach.results import load_result, save_result

CONFIG = """
[system]
kind = "vanderpol"
dim = 2
params = [1.0]

[initial_set]
center = [2.0, 0.0]
radius = 0.05

[time_grid]
t0 = 0.0
times = [0.4, 0.8]

[slr]
gamma = 0.1
mu = 1.1
lipschitz = "sampled"
seed = 3

[output]
dir = "out"
"""


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("SLR_OUT_DIR", raising=False)
    (tmp_path / "run.toml").write_text(CONFIG)
    return tmp_path


class TestRunCommand:
    def test_produces_result_log_and_projections(self, workdir, capsys):
        code = main(["run", "run.toml"])
        assert code == 0
        out = capsys.readouterr().out
        assert "status=converged" in out
        assert "delta_guaranteed=" in out
        doc = load_result(workdir / "out" / "reachtube.json")
        assert doc["kind"] == "reachtube"
        assert len(doc["timesteps"]) == 2
        assert (workdir / "out" / "run.log").exists()
        assert (workdir / "out" / "projection_000.csv").exists()
        assert (workdir / "out" / "projection_001.csv").exists()

    def test_wall_times_only_in_log(self, workdir):
        main(["run", "run.toml"])
        log = (workdir / "out" / "run.log").read_text()
        assert "wall=" in log
        raw = (workdir / "out" / "reachtube.json").read_text()
        assert "wall" not in raw

    def test_out_flag_beats_env_beats_config(self, workdir, monkeypatch):
        monkeypatch.setenv("SLR_OUT_DIR", "envdir")
        main(["run", "run.toml"])
        assert (workdir / "envdir" / "reachtube.json").exists()
        assert not (workdir / "out").exists()
        main(["run", "run.toml", "--out", "flagdir"])
        assert (workdir / "flagdir" / "reachtube.json").exists()

    def test_seed_override_changes_document(self, workdir):
        main(["run", "run.toml"])
        base = (workdir / "out" / "reachtube.json").read_text()
        main(["run", "run.toml", "--seed", "99", "--out", "out2"])
        other = (workdir / "out2" / "reachtube.json").read_text()
        assert json.loads(other)["seed"] == 99
        assert base != other

    def test_parallel_output_is_identical(self, workdir):
        main(["run", "run.toml", "--out", "a"])
        main(["run", "run.toml", "--out", "b", "--parallel", "4"])
        assert (workdir / "a" / "reachtube.json").read_bytes() == \
            (workdir / "b" / "reachtube.json").read_bytes()

    def test_unconverged_run_exits_two(self, workdir):
        text = CONFIG.replace("seed = 3", "seed = 3\nmax_samples = 2")
        (workdir / "tiny.toml").write_text(
            text.replace("gamma = 0.1", "gamma = 1e-12"))
        code = main(["run", "tiny.toml", "--out", "t"])
        assert code == 2
        doc = load_result(workdir / "t" / "reachtube.json")
        assert doc["timesteps"][0]["status"] == "max-samples"

    def test_bad_config_exits_one(self, workdir, capsys):
        (workdir / "bad.toml").write_text(
            CONFIG.replace("radius = 0.05", "radius = -1.0"))
        code = main(["run", "bad.toml"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_missing_config_exits_one(self, workdir, capsys):
        assert main(["run", "nope.toml"]) == 1
        assert "error" in capsys.readouterr().err


class TestVerifyCommand:
    def test_certified_tube_verifies(self, workdir, capsys):
        main(["run", "run.toml"])
        capsys.readouterr()
        code = main(["verify", "run.toml", "out/reachtube.json",
                     "--mc-samples", "500"])
        out = capsys.readouterr().out
        assert code == 0
        assert out.count("CONTAINED") == 2
        assert "all contained" in out

    def test_doctored_result_is_caught(self, workdir, capsys):
        main(["run", "run.toml"])
        doc = load_result(workdir / "out" / "reachtube.json")
        for entry in doc["timesteps"]:
            entry["delta_guaranteed"] *= 0.5
        save_result(workdir / "out" / "reachtube.json", doc)
        capsys.readouterr()
        code = main(["verify", "run.toml", "out/reachtube.json",
                     "--mc-samples", "500"])
        out = capsys.readouterr().out
        assert code == 2
        assert "EXCEEDED" in out

    def test_nonpositive_samples_rejected(self, workdir, capsys):
        main(["run", "run.toml"])
        capsys.readouterr()
        code = main(["verify", "run.toml", "out/reachtube.json",
                     "--mc-samples", "0"])
        assert code == 1
        assert "positive" in capsys.readouterr().err


class TestPlanCommand:
    def test_prints_budget_table(self, workdir, capsys):
        code = main(["plan", "run.toml"])
        out = capsys.readouterr().out
        assert code == 0
        lines = [ln for ln in out.splitlines() if ln.strip()]
        assert "max_samples" in lines[0]
        assert len(lines) == 3
        for ln in lines[1:]:
            assert len(ln.split()) == 5
