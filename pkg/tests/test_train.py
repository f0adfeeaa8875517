import gzip
import struct

import numpy as np
import pytest
from scipy.optimize import linprog

from farkasnet import lp
from farkasnet.data import (Dataset, gen_rings, gen_two_clusters, load_csv, load_idx, read_idx)
from farkasnet.exceptions import DatasetError, FormatError, InputError, UsageError
from farkasnet.netbuild import InitScheme, build, mlp_spec
from farkasnet.train import (CompareConfig, RunReport, SgdConfig, Toy2dConfig, adversarial_rows,
                             error_rate, fit, run_born_dead, run_norm_stability,
                             run_small_compare, run_toy2d, sgd_step)


# ---- sgd ----------------------------------------------------------------------


def test_sgd_plain_step():
    cfg = SgdConfig(learning_rate=1.0, momentum=0.0, weight_decay=0.0, epochs=1, lr_schedule=[])
    p, v = [np.array([1.0])], [np.zeros(1)]
    sgd_step(p, [np.array([0.5])], v, cfg, 0)
    assert p[0][0] == 0.5


def test_sgd_zero_gradient_fixed_point():
    cfg = SgdConfig(learning_rate=0.3, momentum=0.9, weight_decay=0.0, epochs=10)
    p, v = [np.array([1.0, -2.0])], [np.zeros(2)]
    for epoch in range(10):
        sgd_step(p, [np.zeros(2)], v, cfg, epoch)
    assert np.array_equal(p[0], [1.0, -2.0])


def test_sgd_momentum_hand_unrolled():
    mu, wd, lr = 0.9, 5e-4, 0.1
    cfg = SgdConfig(learning_rate=lr, momentum=mu, weight_decay=wd, epochs=1, lr_schedule=[])
    p0, g1, g2 = 2.0, 0.3, -0.7
    p, v = [np.array([p0])], [np.zeros(1)]
    sgd_step(p, [np.array([g1])], v, cfg, 0)
    sgd_step(p, [np.array([g2])], v, cfg, 0)
    v1 = g1 + wd * p0
    p1 = p0 - lr * v1
    v2 = mu * v1 + g2 + wd * p1
    p2 = p1 - lr * v2
    assert abs(p[0][0] - p2) <= 1e-12


def test_sgd_shape_mismatch():
    with pytest.raises(UsageError):
        sgd_step([np.zeros(2)], [np.zeros(3)], [np.zeros(2)], SgdConfig(), 0)


def test_lr_schedule_default():
    cfg = SgdConfig(learning_rate=0.1, epochs=200)
    assert cfg.lr_at(0) == 0.1
    assert cfg.lr_at(100) == pytest.approx(0.01)
    assert cfg.lr_at(150) == pytest.approx(0.001)


def test_sgd_config_validation():
    with pytest.raises(InputError):
        SgdConfig(learning_rate=0.0)


def test_error_rate_counts_ties():
    assert error_rate([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]], [0, 0, 1]) == pytest.approx(1 / 3)


# ---- datasets ---------------------------------------------------------------


def separable(ds):
    x, y = ds.inputs, np.where(ds.labels == 1, 1.0, -1.0)
    # find (w, c) with y (w.x + c) >= 1
    A = -y[:, None] * np.hstack([x, np.ones((len(x), 1))])
    res = linprog(np.zeros(3), A_ub=A, b_ub=-np.ones(len(x)), bounds=[(None, None)] * 3,
                  method="highs")
    return res.status == 0


def test_two_clusters_separable():
    ok = sum(separable(gen_two_clusters(seed)) for seed in range(1000))
    assert ok >= 999


def test_two_clusters_shape_and_determinism():
    a, b = gen_two_clusters(3), gen_two_clusters(3)
    assert a.inputs.shape == (200, 2)
    assert np.array_equal(a.inputs, b.inputs) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.inputs, gen_two_clusters(4).inputs)


def test_two_clusters_zero_std():
    ds = gen_two_clusters(0, 5, std=0.0)
    assert np.array_equal(ds.inputs[:5], [[2, 2]] * 5)
    assert np.array_equal(ds.inputs[5:], [[-2, -2]] * 5)


def test_two_clusters_rejects_equal_centers():
    with pytest.raises(DatasetError):
        gen_two_clusters(0, centers=((1, 1), (1, 1)))


def test_rings():
    ds = gen_rings(0, 50)
    r = np.linalg.norm(ds.inputs, axis=1)
    assert abs(r[ds.labels == 0].mean() - 1) < 0.1
    assert abs(r[ds.labels == 1].mean() - 2) < 0.1


def _write_idx(path, code, dims, payload, compress=False):
    raw = bytes([0, 0, code, len(dims)]) + struct.pack(f">{len(dims)}I", *dims) + payload
    if compress:
        raw = gzip.compress(raw)
    path.write_bytes(raw)
    return path


@pytest.fixture
def idx_pair(tmp_path):
    pixels = bytes((i * 7) % 256 for i in range(4 * 28 * 28))
    images = _write_idx(tmp_path / "img.idx", 0x08, (4, 28, 28), pixels)
    labels = _write_idx(tmp_path / "lab.idx.gz", 0x08, (4,), bytes([0, 1, 2, 3]), compress=True)
    return images, labels, pixels


def test_idx_fixture(idx_pair):
    images, labels, pixels = idx_pair
    ds = load_idx(images, labels)
    assert ds.inputs.shape == (4, 784)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1
    assert ds.inputs[0, 1] == pytest.approx(7 / 255)
    assert ds.inputs[3, 783] == pytest.approx(pixels[-1] / 255)
    assert np.array_equal(ds.labels, [0, 1, 2, 3])


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x01\x00\x08\x01\x00\x00\x00\x01\x05")
    with pytest.raises(FormatError) as exc:
        read_idx(p)
    assert exc.value.offset == 0


def test_idx_truncated(tmp_path):
    p = _write_idx(tmp_path / "t.idx", 0x08, (3, 2), bytes(5))
    with pytest.raises(FormatError) as exc:
        read_idx(p)
    assert exc.value.offset == 4 + 4 * 2 + 5  # header then the 5 bytes present
    assert "offset" in str(exc.value)


def test_idx_shape_mismatch(idx_pair, tmp_path):
    images, _, _ = idx_pair
    labels = _write_idx(tmp_path / "l3.idx", 0x08, (3,), bytes(3))
    with pytest.raises(FormatError):
        load_idx(images, labels)


def test_csv_single_row(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("1,0.5,0.5\n")
    ds = load_csv(p)
    assert len(ds) == 1 and ds.n_features == 2 and ds.labels[0] == 1


def test_csv_empty(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(DatasetError):
        load_csv(p)


def test_csv_header_and_standardize(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("label,a,b\n0,1,10\n1,3,30\n")
    ds = load_csv(p, standardize=True)
    assert np.allclose(ds.inputs.mean(axis=0), 0)
    assert np.allclose(ds.mean, [2, 20])


def test_dataset_validation():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), [0])


def test_standardize_does_not_change_construction():
    ds = gen_two_clusters(0)
    raw = mlp_spec(ds.n_features, [4, 4], 2, farkas=True, agg="mean")
    std = mlp_spec(ds.standardized().n_features, [4, 4], 2, farkas=True, agg="mean")
    assert raw.to_dict() == std.to_dict()
    a, b = build(raw), build(std)
    for la, lb in zip(a.farkas_layers(), b.farkas_layers()):
        assert np.array_equal(la.lambda_, lb.lambda_)
        assert (la.epsilon, la.agg) == (lb.epsilon, lb.agg)


# ---- fit / experiments --------------------------------------------------------


def test_fit_determinism_and_report_shape():
    ds = gen_two_clusters(1, 30)
    cfg = SgdConfig(epochs=5, batch_size=8)
    spec = mlp_spec(2, [4], 2, farkas=True, seed=2)
    r1 = fit(build(spec), ds, cfg, seed=2)
    r2 = fit(build(spec), ds, cfg, seed=2)
    assert r1.train_loss == r2.train_loss and r1.test_err == r2.test_err
    assert len(r1.train_loss) == len(r1.train_err) == len(r1.test_err) == 5
    assert not r1.born_dead_at_init


def test_fit_zero_epochs_only_init_diagnostics():
    ds = gen_two_clusters(1, 10)
    rep = fit(build(mlp_spec(2, [3], 2, farkas=True)), ds, SgdConfig(epochs=0), seed=0)
    assert rep.train_loss == [] and np.isfinite(rep.init_loss)
    assert rep.final_train_err == rep.init_train_err


def test_small_compare_zero_epochs():
    out = run_small_compare(CompareConfig(seeds=(0,), epochs=0, depth=2, width=4))
    for reports in out.values():
        assert reports[0].rows() == []


def test_adversarial_rows_kill_second_cluster():
    w, b = adversarial_rows(((2, 2), (-2, -2)))
    ds = gen_two_clusters(0)
    pre = ds.inputs[ds.labels == 1] @ w.T + b
    assert np.all(pre < 0)


def test_toy2d_single_seed():
    plain, farkas = run_toy2d(Toy2dConfig(seed=0))
    assert plain.final_accuracy <= 0.6
    assert farkas.final_accuracy == 1.0
    assert farkas.train_loss[9] < farkas.init_loss
    for _, guaranteed, p_star in farkas.margins:
        assert p_star > 0 and p_star >= guaranteed - 1e-6


def test_toy2d_swapped_labels_symmetric():
    plain, farkas = run_toy2d(Toy2dConfig(seed=0, swap_labels=True))
    assert plain.final_accuracy <= 0.6
    assert farkas.final_accuracy == 1.0


def test_born_dead_wide_shallow():
    rows = run_born_dead([1], width=64, trials=100)
    assert rows[0]["plain_fraction"] < 0.05
    assert rows[0]["farkas_fraction"] == 0
    assert 0 < rows[0]["premise_p"] < 1


def test_norm_stability_report():
    res = run_norm_stability(200, seed=1)
    assert res["mean_satisfied"] == 200
    assert res["bias_mean_satisfied"] == 200
    assert res["sum_satisfied"] < 200


def test_sum_counterexample_and_identical_rows():
    eye = np.eye(2)
    assert lp.inf_norm(np.vstack([eye, -eye.sum(axis=0)])) == 2 > lp.inf_norm(eye)
    r = np.array([[0.5, -1.5, 2.0]] * 4)
    assert lp.inf_norm(np.vstack([r, -r.mean(axis=0)])) == lp.inf_norm(r)


def test_unknown_dataset():
    with pytest.raises(InputError):
        run_small_compare(CompareConfig(seeds=(0,), dataset="nope", epochs=1))


def test_unknown_variant():
    with pytest.raises(InputError):
        run_small_compare(CompareConfig(seeds=(0,), variants=("resnet",), epochs=1))


def test_compare_csv_dataset(tmp_path):
    rng = np.random.default_rng(0)
    rows = ["label,a,b"] + [f"{i % 2},{rng.normal(i % 2 * 3)},{rng.normal()}" for i in range(40)]
    p = tmp_path / "d.csv"
    p.write_text("\n".join(rows))
    out = run_small_compare(CompareConfig(seeds=(0,), dataset=f"csv:{p}", epochs=2, depth=2,
                                          width=4, variants=("farkas", "farkas_bn")))
    assert len(out["farkas_bn"][0].train_loss) == 2


def test_symmetric_init_large_lr_reported_not_asserted():
    cfg = CompareConfig(seeds=(0,), epochs=3, learning_rate=0.1, init="symmetric_normal",
                        variants=("plain", "farkas"))
    out = run_small_compare(cfg)
    assert set(out) == {"plain", "farkas"}
    assert isinstance(InitScheme(cfg.init), InitScheme)


def test_no_progress_flag_on_toy_problem():
    plain, farkas = run_toy2d(Toy2dConfig(seed=0, epochs=5))
    assert plain.no_progress_5_epochs and not farkas.no_progress_5_epochs
    assert plain.summary()["no_progress_5_epochs"] is True
    assert not RunReport("r", 0).no_progress_5_epochs
