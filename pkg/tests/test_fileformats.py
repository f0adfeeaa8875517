import json

import numpy as np
import pytest

from farkasnet import fileformats as ff
from farkasnet.exceptions import FormatError
from farkasnet.netbuild import (InitScheme, NetworkSpec, activation, batchnorm, build, dense,
                                farkas_dense, farkas_residual)
from farkasnet.rng import make_rng
from farkasnet.train import RunReport
from farkasnet.verify import all_certified, audit_network, stored_lambda_ok


def random_spec(rng, seed):
    width = int(rng.integers(2, 7))
    layers, n_in = [], width
    for _ in range(int(rng.integers(1, 6))):
        kind = rng.choice(["dense", "farkas", "residual", "bn"])
        if kind == "dense":
            out = int(rng.integers(2, 7))
            layers += [dense(width, out, bias=bool(rng.integers(2))),
                       activation(str(rng.choice(["relu", "leaky", "elu", "identity"])),
                                  float(rng.uniform(0.01, 1)) if rng.integers(2) else None)]
            width = out
        elif kind == "farkas":
            out = int(rng.integers(2, 7))
            layers.append(farkas_dense(width, out, agg=str(rng.choice(["sum", "mean"])),
                                       cutoff=float(rng.choice([0.0, rng.uniform(-1, 1)])),
                                       epsilon=float(rng.choice([1e-6, 1e-3]))))
            width = out
        elif kind == "residual":
            layers.append(farkas_residual(width + 1, int(rng.integers(2, 5)),
                                          agg=str(rng.choice(["sum", "mean"])),
                                          shortcut=bool(rng.integers(2))))
            width += 1
        else:
            layers.append(batchnorm(width))
    kinds = ["default_uniform", "symmetric_normal", "asymmetric_positive_bias",
             "zero_last_in_block"]
    return NetworkSpec(layers, InitScheme(str(rng.choice(kinds))), seed), n_in


def random_network(seed):
    rng = make_rng(seed, "random-net")
    spec, n_in = random_spec(rng, seed)
    net = build(spec)
    for mod in net.modules:
        if mod.kind == "batchnorm":
            mod.running_mean = rng.standard_normal(mod.m)
            mod.running_var = rng.uniform(0.1, 2, mod.m)
            mod.gamma.data = rng.standard_normal(mod.m)
    return net, n_in


def all_buffers(net):
    return [buf for mod in net.modules for buf in ff._buffers(mod)]


def test_round_trip_100_mixed_networks():
    kinds = set()
    for seed in range(100):
        net, n_in = random_network(seed)
        kinds |= {m.kind for m in net.modules}
        raw = ff.dumps_weights(net)
        back = ff.loads_weights(raw)
        assert [m.kind for m in back.modules] == [m.kind for m in net.modules]
        for a, b in zip(all_buffers(net), all_buffers(back)):
            a, b = ff._as_array(a), ff._as_array(b)
            assert a.tobytes() == b.tobytes()
        assert ff.dumps_weights(back) == raw
        x = make_rng(seed, "probe").standard_normal((4, n_in))
        assert np.array_equal(net.predict_logits(x), back.predict_logits(x))
        assert stored_lambda_ok(back)
    assert kinds == {"dense", "activation", "farkas_dense", "farkas_residual", "batchnorm"}


def test_every_truncation_is_a_format_error():
    net, _ = random_network(7)
    raw = ff.dumps_weights(net)
    for cut in range(len(raw)):
        with pytest.raises(FormatError):
            ff.loads_weights(raw[:cut])


def test_trailing_bytes_rejected():
    raw = ff.dumps_weights(random_network(1)[0])
    with pytest.raises(FormatError):
        ff.loads_weights(raw + b"\x00")


def test_bad_magic_and_version():
    raw = bytearray(ff.dumps_weights(random_network(2)[0]))
    with pytest.raises(FormatError) as exc:
        ff.loads_weights(b"XXXX" + bytes(raw[4:]))
    assert exc.value.offset == 0
    raw[4] = 99
    with pytest.raises(FormatError, match="version"):
        ff.loads_weights(bytes(raw))


def test_loaded_farkas_layers_certified():
    for seed in range(30):
        net, _ = random_network(seed)
        back = ff.loads_weights(ff.dumps_weights(net))
        recs = audit_network(back)
        for rec in recs:
            if rec["kind"].startswith("farkas") and rec.get("static_guarantee", True):
                assert rec["certified"] and rec["certificate_valid"], rec
        if not any(r["kind"] == "dense" and not r.get("skipped") for r in recs):
            assert all_certified(recs)


def test_plain_file_verify_reports_p_star_only():
    net = build(NetworkSpec([dense(2, 3), activation(), dense(3, 2)]))
    back = ff.loads_weights(ff.dumps_weights(net))
    recs = audit_network(back)
    assert "certificate_valid" not in recs[0] and recs[0]["status"] in ("finite", "unbounded_below")
    assert recs[1]["skipped"]


def test_dead_plain_layer_flagged():
    net = build(NetworkSpec([dense(1, 2), activation()]))
    net.modules[0].W.data = np.array([[1.0], [1.0]])
    net.modules[0].b.data = np.array([-1.0, -1.0])
    recs = audit_network(net)
    assert recs[0]["layer"] == 0 and not recs[0]["certified"]
    assert not all_certified(recs)


# ---- config -------------------------------------------------------------------


def test_config_round_trip():
    cfg = {"seed": 3, "lr": 0.01, "name": "x y", "flag": True, "none": None,
           "network": {"layers": [{"kind": "dense", "n_in": 2}, {"kind": "batchnorm"}],
                       "init": {"kind": "default_uniform"}},
           "hidden": [4, 4]}
    text = ff.dumps_config(cfg)
    assert ff.loads_config(text) == cfg
    assert "network.layers.1.kind = \"batchnorm\"" in text


def test_config_comments_and_errors():
    assert ff.loads_config("# c\n\na = 1\n") == {"a": 1}
    with pytest.raises(FormatError):
        ff.loads_config("just a line\n")
    with pytest.raises(FormatError):
        ff.loads_config("a = 1\na.b = 2\n")


def test_spec_survives_config():
    spec, _ = random_spec(make_rng(0, "cfg-spec"), 5)
    back = NetworkSpec.from_dict(ff.loads_config(ff.dumps_config(spec.to_dict())))
    assert back == spec


# ---- reports ------------------------------------------------------------------


def test_report_csv_header_and_rows():
    rep = RunReport("r", 0, train_loss=[0.5, 0.25], train_err=[0.1, 0.0], test_err=[0.2, 0.1])
    lines = ff.report_csv(rep).splitlines()
    assert lines[0] == "epoch,train_loss,train_err,test_err"
    assert len(lines) == 3
    assert lines[1] == "1,0.5,0.1,0.2"


def test_write_json_handles_non_finite(tmp_path):
    p = tmp_path / "s.json"
    ff.write_json({"a": float("nan"), "b": np.float64(1.5), "c": np.arange(2)}, p)
    assert json.loads(p.read_text()) == {"a": "nan", "b": 1.5, "c": [0, 1]}
