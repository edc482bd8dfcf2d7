import os
import subprocess
import sys

import pytest

from spcawsr import cli

SWEEP = "EXPERIMENT = sweep\nM = 1\nK = 1\nN = 2\nNTX = 1\nPMAX_SWEEP_DBW = 0, 10\nTRIALS = 2\n"


@pytest.fixture
def sweep_cfg(tmp_path):
    path = tmp_path / "sweep.cfg"
    path.write_text(SWEEP)
    return path


def test_sweep_writes_tables(sweep_cfg, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["sweep", "--config", str(sweep_cfg), "--out", str(out)]) == 0
    assert (out / "sweep.csv").read_text().startswith("# spcawsr sweep v1\npmax_dbw,trial,")
    assert (out / "sweep_summary.csv").exists()


def test_reruns_are_byte_identical(sweep_cfg, tmp_path):
    texts = []
    for name in ("a", "b"):
        assert cli.main(["sweep", "--config", str(sweep_cfg), "--out", str(tmp_path / name), "--seed", "5"]) == 0
        texts.append((tmp_path / name / "sweep.csv").read_bytes())
    assert texts[0] == texts[1]


@pytest.mark.parametrize("argv", [
    ["sweep"],
    ["sweep", "--config", "/nonexistent/x.cfg"],
    ["frobnicate"],
    ["sweep", "--config", "x", "--trials", "many"],
])
def test_usage_errors(argv):
    assert cli.main(argv) == 2


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("EXPERIMENT = sweep\nFOO = 1\n")
    assert cli.main(["sweep", "--config", str(bad)]) == 2
    bad.write_text("EXPERIMENT = ber\n")
    assert cli.main(["sweep", "--config", str(bad)]) == 2
    bad.write_text(SWEEP)
    assert cli.main(["sweep", "--config", str(bad), "--trials", "0"]) == 2


def test_runtime_failure_exit_code(sweep_cfg, tmp_path, monkeypatch):
    def boom(cfg, out_dir=None):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["sweep", "--config", str(sweep_cfg), "--out", str(tmp_path)]) == 1


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8 and all(line.startswith("PASS") for line in lines)


def test_numpy_backend_switch():
    env = dict(os.environ, SPCAWSR_DISABLE_NUMBA="1")
    code = "from spcawsr._accel import backend_name; print(backend_name())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
