import csv
import json
import math
import subprocess
import sys

import pytest

from peerfx.cli import main, parse_k_grid
from peerfx.errors import EXIT_CODES

CFG = """
dgp:
  n: 100
  beta1: 0.2
  target_mean_degree: 24.0
  seed: 5
reps: 4
estimators:
  - none
  - {kind: sieve_x2_deg, k: 3}
  - {kind: sieve_a_hat, k: 4}
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(CFG)
    return p


@pytest.fixture
def data_dir(tmp_path, cfg_path):
    out = tmp_path / "data"
    assert main(["simulate", "-c", str(cfg_path), "-o", str(out)]) == 0
    return out


def read_row(path):
    with open(path) as fh:
        return next(csv.DictReader(fh))


def test_pipeline(data_dir, cfg_path, tmp_path):
    assert (data_dir / "sample.csv").exists() and (data_dir / "sample_edges.txt").exists()
    assert main(["fit-network", "-i", str(data_dir), "-o", str(data_dir)]) == 0
    meta = json.loads((data_dir / "fit.json").read_text())
    assert meta["converged"] and set(meta) >= {"lambda_hat", "iterations", "max_grad"}
    for control in ("none", "linear-a", "sieve-a", "sieve-xdeg", "oracle"):
        out = tmp_path / control
        code = main(["estimate", "-i", str(data_dir), "-o", str(out), "--control", control,
                     "--k", "3", "-c", str(cfg_path)])
        assert code == 0, control
        row = read_row(out / "estimate.csv")
        assert math.isfinite(float(row["beta1"]))
        assert row["reject_beta1"] in ("0", "1")


def test_overlap_exit_code(data_dir, tmp_path, capsys):
    code = main(["estimate", "-i", str(data_dir), "-o", str(tmp_path / "e"),
                 "--control", "sieve-xdeg", "--x1-cols", "x1,x2"])
    assert code == EXIT_CODES["IdentificationError"]
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "IdentificationError" and err["code"] == code


def test_missing_fit_is_precondition(data_dir, tmp_path):
    code = main(["estimate", "-i", str(data_dir), "-o", str(tmp_path / "e"),
                 "--control", "sieve-a"])
    assert code == EXIT_CODES["PreconditionError"]


def test_missing_input(tmp_path):
    code = main(["fit-network", "-i", str(tmp_path / "nowhere"), "-o", str(tmp_path)])
    assert code == EXIT_CODES["InputFileError"]


def test_invalid_config_runs_nothing(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dgp:\n  n: 100\n  betaa1: 0.3\n")
    out = tmp_path / "out"
    assert main(["montecarlo", "-c", str(bad), "-o", str(out)]) == EXIT_CODES["ConfigError"]
    assert not out.exists()


def test_boundary_without_exclusion(tmp_path):
    cfg = tmp_path / "sparse.yaml"
    cfg.write_text("dgp:\n  n: 100\n  target_mean_degree: 1.9\n")
    data = tmp_path / "d"
    assert main(["simulate", "-c", str(cfg), "-o", str(data)]) == 0
    code = main(["fit-network", "-i", str(data), "-o", str(data), "--keep-boundary"])
    assert code == EXIT_CODES["NonexistenceError"]


def test_montecarlo_byte_identical(cfg_path, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["montecarlo", "-c", str(cfg_path), "-o", str(a)]) == 0
    assert main(["montecarlo", "-c", str(cfg_path), "-o", str(b), "--parallel", "2"]) == 0
    for name in ("summary.csv", "raw_reps.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    meta = json.loads((a / "run_meta.json").read_text())
    assert meta["seed"] == 5 and len(meta["config_hash"]) == 64


def test_simulate_byte_identical(cfg_path, tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "-c", str(cfg_path), "-o", str(tmp_path / d)]) == 0
    for name in ("sample.csv", "sample_edges.txt", "run_meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_data(cfg_path, tmp_path):
    main(["simulate", "-c", str(cfg_path), "-o", str(tmp_path / "a")])
    main(["simulate", "-c", str(cfg_path), "-o", str(tmp_path / "b"), "--seed", "6"])
    assert (tmp_path / "a" / "sample.csv").read_bytes() != (tmp_path / "b" / "sample.csv").read_bytes()


def test_cv(data_dir, tmp_path):
    out = tmp_path / "cv"
    assert main(["cv", "-i", str(data_dir), "-o", str(out), "--control", "sieve-xdeg",
                 "--k-grid", "2..8"]) == 0
    with open(out / "cv.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["k"]) for r in rows] == list(range(2, 9))
    assert sum(int(r["selected"]) for r in rows) == 1


def test_cv_on_a_hat(data_dir, tmp_path):
    main(["fit-network", "-i", str(data_dir), "-o", str(data_dir)])
    assert main(["cv", "-i", str(data_dir), "-o", str(tmp_path), "--control", "sieve-a",
                 "--k-grid", "2,4,6", "--family", "polynomial"]) == 0


def test_k_grid_parsing():
    assert parse_k_grid("2..5") == [2, 3, 4, 5]
    assert parse_k_grid("3,1") == [3, 1]


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "peerfx.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("peerfx")
