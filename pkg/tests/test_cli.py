import json
import subprocess
import sys

import numpy as np
import pytest

from farkasnet import fileformats as ff
from farkasnet.cli import OUT_ENV, main
from farkasnet.netbuild import NetworkSpec, activation, build, dense, mlp_spec


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_toy2d_happy_path(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "toy2d", "--seed", "7", "--epochs", "200"]) == 0
    assert "farkas accuracy 1.000" in capsys.readouterr().out
    lines = (tmp_path / "toy2d_farkas.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_err,test_err" and len(lines) == 201
    summary = json.loads((tmp_path / "toy2d_summary.json").read_text())
    assert summary["farkas"]["margins"] and summary["seed"] == 7
    assert {"born_dead_at_init", "final_test_err", "seed"} <= set(summary["plain"])


def test_echoed_config_reproduces_reports(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(first), "toy2d", "--seed", "3", "--epochs", "15", "--swap-labels"]) == 0
    assert main(["--out", str(second), "toy2d", "--config", str(first / "toy2d.config")]) == 0
    assert files(first) == files(second)


@pytest.mark.parametrize("argv", [
    ["born-dead", "--depths", "1,3", "--trials", "10"],
    ["norm-check", "--trials", "50"],
    ["compare", "--seeds", "0", "--epochs", "2", "--depth", "2", "--width", "4"],
])
def test_experiment_commands_reproducible(tmp_path, argv):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["--out", str(first)] + argv) == 0
    cfg = first / f"{argv[0]}.config"
    assert main(["--out", str(second), argv[0], "--config", str(cfg)]) == 0
    assert files(first) == files(second)


def test_compare_jobs_match_sequential(tmp_path):
    common = ["compare", "--seeds", "0,1", "--epochs", "2", "--depth", "2", "--width", "4"]
    assert main(["--out", str(tmp_path / "seq")] + common) == 0
    assert main(["--out", str(tmp_path / "par")] + common + ["--jobs", "2"]) == 0
    seq, par = files(tmp_path / "seq"), files(tmp_path / "par")
    seq.pop("compare.config"), par.pop("compare.config")
    assert seq == par


def test_train_and_verify(tmp_path, capsys):
    cfg = tmp_path / "run.config"
    cfg.write_text('epochs = 5\ndataset = "clusters"\nn_per_class = 30\n'
                   "network.hidden = [4, 3]\nnetwork.agg = \"mean\"\n")
    out1, out2 = tmp_path / "o1", tmp_path / "o2"
    assert main(["--out", str(out1), "train", str(cfg)]) == 0
    assert (out1 / "model.w").exists() and (out1 / "train.config").exists()
    assert main(["--out", str(out2), "train", str(out1 / "train.config")]) == 0
    assert files(out1) == files(out2)
    capsys.readouterr()
    assert main(["--out", str(tmp_path / "v"), "verify", str(out1 / "model.w")]) == 0
    recs = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    farkas = [r for r in recs if r["kind"] == "farkas_dense"]
    assert len(farkas) == 2 and all(r["certified"] and r["certificate_valid"] for r in farkas)


def test_train_explicit_layers(tmp_path):
    spec = mlp_spec(2, [4], 2, farkas=True).to_dict()
    spec.pop("seed")
    cfg = tmp_path / "layers.config"
    ff.save_config({"epochs": 2, "dataset": "rings", "n_per_class": 20, "network": spec}, cfg)
    assert main(["--out", str(tmp_path / "o"), "train", str(cfg)]) == 0


def test_verify_dead_plain_layer_exit_1(tmp_path, capsys):
    net = build(NetworkSpec([dense(1, 2), activation()]))
    net.modules[0].W.data = np.array([[1.0], [1.0]])
    net.modules[0].b.data = np.array([-1.0, -1.0])
    path = tmp_path / "dead.w"
    ff.save_weights(net, path)
    assert main(["--out", str(tmp_path), "verify", str(path)]) == 1
    rec = json.loads(capsys.readouterr().out.splitlines()[0])
    assert rec["layer"] == 0 and rec["certified"] is False
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert report["layers"][0]["certified"] is False


def test_verify_truncated_file_exit_2(tmp_path):
    net = build(mlp_spec(2, [3], 2, farkas=True))
    path = tmp_path / "m.w"
    ff.save_weights(net, path)
    path.write_bytes(path.read_bytes()[:-1])
    assert main(["--out", str(tmp_path), "verify", str(path)]) == 2


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["toy2d", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2
    assert main(["--out", str(tmp_path), "verify", str(tmp_path / "missing.w")]) == 2
    bad = tmp_path / "bad.config"
    bad.write_text("nonsense = 1\n")
    assert main(["--out", str(tmp_path), "toy2d", "--config", str(bad)]) == 2
    assert main(["--out", str(tmp_path), "compare", "--variants", "resnet", "--epochs", "1"]) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["norm-check", "--trials", "5"]) == 0
    assert (tmp_path / "env" / "norm_check.json").exists()
    assert main(["--out", str(tmp_path / "flag"), "norm-check", "--trials", "5"]) == 0
    assert (tmp_path / "flag" / "norm_check.json").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "farkasnet.cli", "--out", str(tmp_path),
                           "norm-check", "--trials", "5"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
