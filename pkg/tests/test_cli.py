import csv
import subprocess
import sys

import numpy as np
import pytest

from dwl.cli import EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, main
from dwl.gait import QuinticConstraints

TINY = ["--set", "train.num_envs=4", "--set", "train.horizon=8",
        "--set", "train.num_minibatches=2", "--set", "env.episode_length=30"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--out", str(out), "--updates", "2", "--quiet", *TINY]) == EXIT_OK
    return out


def test_train_outputs(trained):
    assert (trained / "checkpoint.npz").exists()
    assert len(rows(trained / "metrics.csv")) == 2
    manifest = (trained / "manifest.txt").read_text()
    assert "config_hash:" in manifest and "seed: 0" in manifest


def test_eval_writes_report(trained, tmp_path):
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.npz"), "--terrain", "flat",
                 "--terrain", "stairs", "--episodes", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    report = rows(tmp_path / "report.csv")
    assert [r["terrain"] for r in report] == ["flat", "stairs"]
    assert all(0.0 <= float(r["success_rate"]) <= 1.0 for r in report)
    assert (tmp_path / "replay_flat_0.csv").exists()


def test_eval_zero_episodes(trained, tmp_path):
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.npz"), "--episodes", "0",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert rows(tmp_path / "report.csv")[0]["episodes"] == "0"


def test_estimate_writes_series(trained, tmp_path):
    code = main(["estimate", "--checkpoint", str(trained / "checkpoint.npz"), "--episodes", "1",
                 "--command-vx", "0.3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    channels = [r["channel"] for r in rows(tmp_path / "estimate.csv")]
    assert "forward_velocity" in channels
    series = rows(tmp_path / "velocity_series.csv")
    assert len(series) == 30 and all(float(r["command_vx"]) == 0.3 for r in series)


def test_checkpoint_architecture_mismatch(trained, tmp_path):
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.npz"), "--episodes", "1",
                 "--set", "net.gru_hidden=8", "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_missing_checkpoint(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.npz"),
                 "--out", str(tmp_path)]) == EXIT_USAGE


def test_traj_csv(tmp_path):
    out = tmp_path / "traj.csv"
    assert main(["traj", "--out", str(out)]) == EXIT_OK
    table = rows(out)
    assert float(table[0]["height"]) == pytest.approx(0.0)
    assert float(table[-1]["t"]) == pytest.approx(QuinticConstraints().T)
    assert float(table[-1]["height"]) == pytest.approx(0.0, abs=1e-9)


def test_traj_singular(tmp_path):
    assert main(["traj", "--T", "0", "--out", str(tmp_path / "x.csv")]) == EXIT_USAGE


def test_randomize_check_ranges(tmp_path):
    out = tmp_path / "dyn.csv"
    assert main(["randomize-check", "-n", "50", "--out", str(out)]) == EXIT_OK
    table = rows(out)
    assert len(table) == 50
    friction = np.array([float(r["friction"]) for r in table])
    assert np.all((friction >= 0.2) & (friction <= 2.0))


def test_randomize_check_zero_is_header_only(tmp_path):
    out = tmp_path / "dyn.csv"
    assert main(["randomize-check", "-n", "0", "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("friction,")


def test_bad_override_exits_one(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--set", "train.nope=1"]) == EXIT_USAGE
    assert main(["train", "--out", str(tmp_path), "--set", "train.gamma=2"]) == EXIT_USAGE


def test_usage_error_exits_one():
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_two(tmp_path):
    code = main(["train", "--out", str(tmp_path), "--updates", "3", "--quiet", *TINY,
                 "--set", "train.learning_rate=1e300", "--set", "train.max_grad_norm=0"])
    assert code == EXIT_DIVERGED


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dwl", "--version"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and proc.stdout.strip()
