import json
import math
import os
import subprocess

import numpy as np
import pytest

import muvfs


def test_config_round_trip():
    cfg = muvfs.RunConfig.parse("run.seed = 4\nmeta.alpha = 0.5\n")
    assert cfg["meta.alpha"] == "0.5"
    cfg["meta.order"] = "second"
    again = muvfs.RunConfig.parse(cfg.canonical())
    assert again.digest() == cfg.digest()
    assert len(cfg.digest()) == 16
    assert "eval.ablation" in muvfs.known_keys()


def test_config_errors_are_value_errors():
    with pytest.raises(ValueError, match="unknown key"):
        muvfs.RunConfig.parse("bogus.key = 1\n")


def test_nt_xent_examples():
    z = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
    assert muvfs.nt_xent(z, 1.0) == pytest.approx(-math.log(math.e / (math.e + 2)), abs=1e-12)
    rng = np.random.default_rng(0)
    assert muvfs.nt_xent(rng.normal(size=(2, 5)), 0.3) == pytest.approx(0.0, abs=1e-12)


def test_symmetric_kl_example():
    p = np.array([[0.75, 0.25]])
    q = np.array([[0.5, 0.5]])
    assert muvfs.symmetric_kl(p, q) == pytest.approx(0.25 * math.log(3.0), abs=1e-12)


def test_attention_example():
    K = np.zeros((2, 4))
    K[1, 0] = 2 * math.log(2)
    Q = np.zeros((2, 4))
    Q[0, 0] = 1
    a, h = muvfs.attend(np.eye(2), np.array([1.0, 0.0]), K, np.eye(2), Q)
    np.testing.assert_allclose(a, [1 / 3, 2 / 3], atol=1e-12)
    np.testing.assert_allclose(h, [1 / 3, 2 / 3], atol=1e-12)


def test_mining_example():
    s = [0.9, 0.2, 0.8, 0.1, 0.95]
    pool = muvfs.mine_hard(list(range(5)), s, s, n=2)
    base = {vid for vid, why in pool if why != "exploration"}
    assert base == {1, 3}
    assert len(pool) == 3


def test_accuracy_ci_example():
    mean, half = muvfs.accuracy_ci([1, 0, 1, 1])
    assert mean == pytest.approx(75.0)
    assert half == pytest.approx(49.0)


def test_gradcheck_subset():
    report = json.loads(muvfs.gradcheck(seeds=3, only=["matmul", "softmax"]))
    assert report["passed"]
    assert [c["name"] for c in report["checks"]] == ["matmul", "softmax"]


def test_run_command_pipeline(tmp_path):
    cfg = muvfs.RunConfig.parse(
        "data.appearance_classes = 6\ndata.motion_classes = 6\ndata.videos_per_class = 2\n"
        "streams.hidden = 16\nstreams.embed_dim = 8\npretrain.epochs = 1\npretrain.batch_size = 8\n"
        "pretrain.warmup_epochs = 0\nmining.n = 5\nmining.mining_batch = 12\nmeta.iterations = 1\n"
        "meta.episodes_per_iter = 2\neval.episodes = 10\neval.finetune_epochs = 2\n"
    )
    cfg["paths.out"] = str(tmp_path / "run")
    for name in ["generate", "pretrain", "metatrain", "evaluate"]:
        r = muvfs.run_command(name, cfg)
        assert r["exit_code"] == 0, r["stderr"]
    report = json.loads((tmp_path / "run" / "eval" / "eval.json").read_text())
    assert report["config_digest"] == cfg.digest()
    assert muvfs.run_command("nonsense", cfg)["exit_code"] == 2


CLI = os.environ.get("MUVFS_CLI")


@pytest.mark.skipif(not CLI, reason="CLI path not provided")
def test_cli_exit_codes(tmp_path):
    def run(*args):
        return subprocess.run([CLI, *args], capture_output=True, text=True)

    ok = run("config", "--set", "meta.alpha=0.5")
    assert ok.returncode == 0
    assert "meta.alpha = 0.5" in ok.stdout
    assert "# digest" in ok.stdout

    assert run("config", "--set", "bogus.key=1").returncode == 2
    assert run("config", "--config", str(tmp_path / "missing.conf")).returncode == 2
    assert run("no-such-command").returncode == 2

    io = run("generate", "--set", "paths.dataset=/no/such/parent/data")
    assert io.returncode == 3
    assert "/no/such/parent" in io.stderr

    good = run("gradcheck", "--set", "gradcheck.seeds=2", "--set", "gradcheck.only=exp")
    assert good.returncode == 0
    bad = run("gradcheck", "--set", "gradcheck.seeds=2", "--set", "gradcheck.only=exp,log",
              "--set", "gradcheck.inject_fault=log")
    assert bad.returncode == 1
    assert "log" in bad.stderr

    src = os.environ.get("MUVFS_SOURCE_DIR")
    if src:
        desk = run("config", "--config", os.path.join(src, "configs", "desk.conf"))
        assert desk.returncode == 0
        assert "meta.order = second" in desk.stdout
