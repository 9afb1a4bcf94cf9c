import json
import os
import subprocess

import pytest

CLI = os.environ.get("ROADPROMPT_CLI")
pytestmark = pytest.mark.skipif(not CLI, reason="ROADPROMPT_CLI not set")


def run(*args):
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)


def test_end_to_end(tmp_path):
    data = tmp_path / "data"
    r = run("gen-data", "--out", data, "--count", 10, "--size", 32)
    assert r.returncode == 0, r.stderr
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"patch_h": 16, "patch_w": 16, "batch_size": 2}))
    r = run("train", "--config", cfg, "--data", data, "--out", tmp_path / "run", "--epochs", 1, "--lr-decoders",
            1e-3, "--max-train", 4)
    assert r.returncode == 0, r.stderr
    assert "epoch 0" in r.stdout
    ckpt = tmp_path / "run" / "best.ckpt"

    r = run("eval", "--checkpoint", ckpt, "--data", data)
    assert r.returncode == 0, r.stderr
    report = json.loads(r.stdout)
    assert set(report) >= {"automatic", "highrecall", "final"}

    r = run("simulate", "--checkpoint", ckpt, "--data", data, "--format", "json", "--out", tmp_path / "reports")
    assert r.returncode == 0, r.stderr
    rows = json.loads((tmp_path / "reports" / "simulate.json").read_text())
    assert rows[0]["fnm_kernel"] == 3 and rows[0]["fpm_kernel"] == 7

    r = run("sweep", "--checkpoint", ckpt, "--data", data, "--format", "csv")
    assert r.returncode == 0, r.stderr
    assert len(r.stdout.strip().splitlines()) == 13

    # Usage errors exit 1, runtime failures 2.
    assert run("simulate", "--checkpoint", ckpt, "--data", data, "--fnm-kernel", 4).returncode == 1
    assert run("train", "--data", data).returncode == 1
    assert run("frobnicate").returncode == 1
    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"nope")
    r = run("eval", "--checkpoint", junk, "--data", data)
    assert r.returncode == 2
    assert r.stderr.startswith("error:")
