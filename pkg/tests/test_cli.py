import json
import subprocess
import sys

import pytest

from v2blab import cli
from v2blab.rl.ddpg import DdpgTrainer, NumericError

SCENARIO = {"scenario": {"n_days": 3, "n_bidirectional": 1, "n_unidirectional": 2,
                         "arrival_rate": 2.0, "history_days": 2}, "n": 2}


@pytest.fixture(scope="module")
def sampled(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scenario.json").write_text(json.dumps(SCENARIO))
    for name in ("a", "b"):
        rc = cli.main(["sample", "--config", str(root / "scenario.json"), "--seed", "7",
                       "--out", str(root / name)])
        assert rc == 0
    return root


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*"))
            if p.is_file()}


def test_sample_is_byte_identical(sampled):
    a, b = _tree(sampled / "a"), _tree(sampled / "b")
    assert a == b
    manifest = json.loads(a["manifest.json"])
    assert len(manifest["month_seeds"]) == 2
    assert sum(name.startswith("monthly/") for name in manifest["files"]) == 2
    assert all(name in a for name in manifest["files"])


def test_solve_and_infeasible_exit(sampled, tmp_path):
    episode = str(sampled / "a" / "daily" / "m000-d00.json")
    assert cli.main(["solve", episode, "--out", str(tmp_path / "ok")]) == 0
    sol = json.loads((tmp_path / "ok" / "solution.json").read_text())
    assert sol["status"] == "optimal" and sol["bill"]["total_usd"] > 0
    assert cli.main(["solve", episode, "--peak-cap", "0", "--out", str(tmp_path / "bad")]) == 3


def _train_config(sampled, tmp_path):
    cfg = {"episodes": str(sampled / "a" / "daily"),
           "training": {"max_steps": 120, "batch_size": 8, "hidden": [8, 8]}}
    path = tmp_path / "train.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_train_and_eval_are_deterministic(sampled, tmp_path):
    cfg = _train_config(sampled, tmp_path)
    for run in ("t1", "t2"):
        assert cli.main(["train", "--config", cfg, "--seed", "3", "--out", str(tmp_path / run)]) == 0
    log1 = (tmp_path / "t1" / "train_log.csv").read_bytes()
    assert log1 == (tmp_path / "t2" / "train_log.csv").read_bytes()
    assert log1.startswith(b"step,episode,reward,eval_bill\n")
    ckpt = str(tmp_path / "t1" / "checkpoint.json")
    for run, jobs in (("e1", "1"), ("e2", "2")):
        assert cli.main(["eval", str(sampled / "a" / "daily"), "--checkpoint", ckpt,
                         "--jobs", jobs, "--out", str(tmp_path / run)]) == 0
    for name in ("table.csv", "table.json"):
        assert (tmp_path / "e1" / name).read_bytes() == (tmp_path / "e2" / name).read_bytes()
    header = (tmp_path / "e1" / "table.csv").read_text().splitlines()[0]
    assert header == "policy,bill_mean,bill_std,shave_mean,shave_std,missing_soc"


def test_eval_single_policy(sampled, tmp_path):
    assert cli.main(["eval", str(sampled / "a" / "daily"), "--policies", "fc",
                     "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "table.csv").read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("fc,")


def test_config_errors(sampled, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"episodes": "x", "surprise": 1}))
    assert cli.main(["train", "--config", str(bad)]) == 2
    assert cli.main(["eval", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 2
    assert cli.main(["eval", str(sampled / "a" / "daily"), "--policies", "nope",
                     "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as err:
        cli.main(["solve", "x.json", "--weights", "1,2"])
    assert err.value.code == 2


def test_numeric_failure_exit(sampled, tmp_path, monkeypatch):
    def boom(self, delta):
        raise NumericError("nan", {"step": self.steps})

    monkeypatch.setattr(DdpgTrainer, "update", boom)
    out = tmp_path / "nan"
    assert cli.main(["train", "--config", _train_config(sampled, tmp_path), "--out", str(out)]) == 4
    assert json.loads((out / "diagnostics.json").read_text())["step"] > 0


def test_output_root_from_environment(sampled, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path))
    assert cli.main(["solve", str(sampled / "a" / "daily" / "m000-d00.json")]) == 0
    assert (tmp_path / "solve" / "solution.json").exists()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "v2blab", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.strip() == "0.1.0"
