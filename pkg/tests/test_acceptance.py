"""Acceptance suite: one test per criterion, each at its stated tolerance.

The terminal summary prints one PASS/FAIL line per criterion along with
the measured quantities.
"""

import csv
import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from voxbag import baselines as B
from voxbag import cli
from voxbag.bundle import from_bytes, load_bundle, to_bytes
from voxbag.cnn import layers as L
from voxbag.cnn.cost import CostParams, conv_cost, ensemble_cost
from voxbag.cnn.network import init_params, network_preset
from voxbag.cnn.train import TrainConfig, evaluate, train
from voxbag.ensemble import (
    BaggingConfig, BaggingModel, TreeConfig, bag_streams, bootstrap_sample, fit_bagging, fit_tree,
    predict, predict_proba, tree_predict_proba,
)
from voxbag.metrics import ConfusionMatrix, f1_score, gmean, metrics, roc_curve
from voxbag.synth import SynthConfig, generate
from voxbag.volume import Volume, intensity_normalize, read_nifti, write_nifti


def measured(record_property, text):
    record_property("measured", text)
    print(text)


# -- 1 --------------------------------------------------------------------------------------


@pytest.mark.criterion(1, "metric arithmetic reproduces the reference figures")
def test_metric_arithmetic(record_property):
    t0 = time.perf_counter()
    r = metrics(ConfusionMatrix(tp=85, fp=9, fn=5, tn=81))
    got = [100 * v for v in (r.accuracy, r.sensitivity, r.specificity, r.precision, r.f1, r.gmean)]
    reference = [92.22, 94.44, 90.00, 90.43, 92.39, 92.19]
    ensemble_gap = max(abs(a - b) for a, b in zip(got, reference))
    svm_gmean = 100 * gmean(0.90, 0.9333)
    svm_f1 = 100 * f1_score(0.9310, 0.90)
    elapsed = time.perf_counter() - t0
    measured(record_property, f"ensemble max gap {ensemble_gap:.4f} pp; SVM G-mean {svm_gmean:.3f}, "
                              f"F1 {svm_f1:.3f}; {elapsed * 1e3:.2f} ms")
    assert ensemble_gap <= 0.02
    assert abs(svm_gmean - 91.64) <= 0.02
    assert abs(svm_f1 - 91.53) <= 0.02
    assert elapsed < 0.1


# -- 2 ---------------------------------------------------------------------------------------

H = 1e-3


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-6)


def _numeric(f, x):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + H
        up = f()
        x[idx] = old - H
        g[idx] = (up - f()) / (2 * H)
        x[idx] = old
    return g


def _check_layer(kind, seed):
    r = np.random.default_rng(seed)
    if kind == "softmax-ce":
        z = r.standard_normal((6, 2)) * 2
        y = r.integers(0, 2, 6)
        return [_rel(L.softmax_ce_backward(L.softmax(z), y), _numeric(lambda: L.cross_entropy(z, y), z))]
    if kind in ("conv3d", "conv-depth1"):
        k = (3, 3, 3) if kind == "conv3d" else (1, 3, 3)
        layer = L.Conv(2, 3, k, pad=(k[0] // 2, 1, 1))
        arrays = {"x": r.standard_normal((2, 2, 3 if k[0] == 3 else 1, 4, 3)),
                  "w": r.standard_normal((3, 2, *k)), "b": r.standard_normal(3)}

        def fwd():
            return L.conv_forward(arrays["x"], layer, arrays["w"], arrays["b"])

        def bwd(d):
            _, cache = L.conv_forward(arrays["x"], layer, arrays["w"], arrays["b"], return_cache=True)
            return dict(zip("xwb", L.conv_backward(d, cache, layer, arrays["w"])))
    elif kind == "batchnorm":
        layer = L.BatchNorm(3)
        arrays = {"x": r.standard_normal((4, 3, 2, 2, 2)) * 2 + 1, "g": r.standard_normal(3),
                  "b": r.standard_normal(3)}
        stats = (np.zeros(3), np.ones(3))

        def fwd():
            return L.batchnorm_forward(arrays["x"], layer, arrays["g"], arrays["b"], *stats)[0]

        def bwd(d):
            cache = L.batchnorm_forward(arrays["x"], layer, arrays["g"], arrays["b"], *stats, return_cache=True)[3]
            return dict(zip("xgb", L.batchnorm_backward(d, cache, arrays["g"])))
    elif kind == "maxpool":
        layer = L.MaxPool()
        # distinct, well-spaced values keep each window's winner fixed under +-h
        arrays = {"x": r.permutation(2 * 2 * 64).reshape(2, 2, 4, 4, 4) * 0.1}

        def fwd():
            return L.maxpool_forward(arrays["x"], layer)[0]

        def bwd(d):
            _, arg = L.maxpool_forward(arrays["x"], layer)
            return {"x": L.maxpool_backward(d, arg, arrays["x"].shape)}
    elif kind == "fc":
        arrays = {"x": r.standard_normal((4, 5)), "w": r.standard_normal((5, 3)), "b": r.standard_normal(3)}

        def fwd():
            return L.fc_forward(arrays["x"], arrays["w"], arrays["b"])

        def bwd(d):
            return dict(zip("xwb", L.fc_backward(d, arrays["x"], arrays["w"])))
    out = fwd()
    proj = r.standard_normal(out.shape)
    analytic = bwd(proj)
    return [_rel(analytic[k], _numeric(lambda: float(np.sum(fwd() * proj)), v)) for k, v in arrays.items()]


@pytest.mark.criterion(2, "analytic gradients match 64-bit central differences for every layer type")
def test_gradient_checks(record_property):
    t0 = time.perf_counter()
    worst = {}
    for kind in ("conv3d", "conv-depth1", "batchnorm", "maxpool", "fc", "softmax-ce"):
        worst[kind] = max(max(_check_layer(kind, seed)) for seed in range(5))
    elapsed = time.perf_counter() - t0
    measured(record_property, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f} s")
    assert all(v <= 1e-4 for v in worst.values())
    assert elapsed < 60


# -- 3 -----------------------------------------------------------------------------------------


@pytest.mark.criterion(3, "preset-1 3D network overfits 20 synthetic 16^3 volumes within 50 epochs")
def test_overfit_sanity(record_property):
    t0 = time.perf_counter()
    xs, ys = [], []
    for _, label, vol in generate(SynthConfig(per_class=10, extent=16, seed=0)):
        xs.append(intensity_normalize(vol)[0].data[None])
        ys.append(label)
    X, y = np.stack(xs), np.array(ys)
    net = network_preset(1, "3d", X.shape[1:])
    params, trace = train(net, init_params(net, seed=0), X, y, TrainConfig(epochs=50))
    _, acc = evaluate(net, params, X, y)
    elapsed = time.perf_counter() - t0
    measured(record_property, f"training accuracy {acc:.3f} after {len(trace)} epochs; {elapsed:.0f} s")
    assert acc >= 0.99
    assert elapsed < 300


# -- 4 -------------------------------------------------------------------------------------------


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _full_chain(root, synth_args, config):
    data, out = root / "data", root / "run"
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.json"
    cfg.write_text(json.dumps(config))
    steps = [
        ("synth", *synth_args, "--out", data),
        ("train-cnn", "--config", cfg, "--manifest", data / "manifest.csv", "--out", out),
        ("extract", "--bundle", out / "model.vxb", "--manifest", data / "manifest.csv", "--out", out),
        ("train-ensemble", "--bundle", out / "model.vxb", "--features", out / "features.csv", "--out", out),
        ("evaluate", "--bundle", out / "model.vxb", "--manifest", data / "manifest.csv", "--out", out),
    ]
    for step in steps:
        assert _run(*step) == 0, step[0]
    return data, out


@pytest.mark.criterion(4, "end-to-end synthetic benchmark reaches held-out accuracy >= 0.90")
def test_end_to_end_benchmark(tmp_path, record_property):
    t0 = time.perf_counter()
    _, out = _full_chain(
        tmp_path,
        ("--per-class", 100, "--extent", 16, "--amplitude", 2.0, "--noise-sigma", 1.0, "--seed", 7),
        {"version": 1, "input_size": 16, "seed": 7},
    )
    rows = {r["classifier"]: r for r in csv.DictReader(open(out / "report.csv"))}
    acc = float(rows["Ensemble Bagging"]["accuracy"])
    conf = json.loads((out / "confusion.json").read_text())["Ensemble Bagging"]
    elapsed = time.perf_counter() - t0
    measured(record_property, f"held-out accuracy {acc:.4f} on {sum(conf.values())} subjects; {elapsed:.0f} s")
    assert sum(conf.values()) == 60
    assert acc >= 0.90
    assert elapsed < 900


# -- 5 -------------------------------------------------------------------------------------------


@pytest.mark.criterion(5, "bootstrap unique-sample fraction matches its closed form")
def test_bootstrap_statistics(record_property):
    n = 200
    fracs = [len(np.unique(bootstrap_sample(n, r))) / n for r in bag_streams(2024, 10_000)]
    mean = float(np.mean(fracs))
    expected = 1 - (1 - 1 / n) ** n
    measured(record_property, f"mean {mean:.4f} vs closed form {expected:.4f}")
    assert abs(mean - expected) <= 0.005
    assert abs(mean - 0.6340) <= 0.005


# -- 6 ----------------------------------------------------------------------------------------------


def _frac_gini(labels):
    n = len(labels)
    return 1 - sum(Fraction(int(np.sum(labels == c)), n) ** 2 for c in (0, 1))


def _exhaustive(X, y):
    n, parent, best = len(y), _frac_gini(y), None
    for f in range(X.shape[1]):
        vals = np.unique(X[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) * 0.5
            left = X[:, f] <= thr
            dec = parent - Fraction(int(left.sum()), n) * _frac_gini(y[left]) \
                - Fraction(int((~left).sum()), n) * _frac_gini(y[~left])
            if best is None or dec > best[0]:
                best = (dec, f, thr)
    return best[1], best[2]


@pytest.mark.criterion(6, "fit_tree's splits equal exhaustive enumeration of midpoint candidates")
def test_split_oracle(record_property):
    r = np.random.default_rng(6)
    checked = 0
    for _ in range(50):
        n, d = int(r.integers(4, 31)), int(r.integers(1, 7))
        X = r.integers(0, 5, (n, d)).astype(float) if r.random() < 0.5 else np.round(r.standard_normal((n, d)), 2)
        y = r.integers(0, 2, n)
        y[0], y[1] = 0, 1
        tree = fit_tree(X, y, config=TreeConfig(max_depth=None))
        # every internal node, on the samples that reach it
        reach = {0: np.arange(n)}
        for i in range(tree.n_nodes):
            if tree.left[i] < 0:
                continue
            idx = reach[i]
            assert (tree.feature[i], tree.threshold[i]) == _exhaustive(X[idx], y[idx])
            go = X[idx, tree.feature[i]] <= tree.threshold[i]
            reach[tree.left[i]], reach[tree.right[i]] = idx[go], idx[~go]
            checked += 1
    measured(record_property, f"{checked} splits over 50 datasets agree")


# -- 7 ---------------------------------------------------------------------------------------------


@pytest.mark.criterion(7, "soft voting is the exact mean of tree posteriors and order-invariant")
def test_soft_voting(record_property):
    r = np.random.default_rng(7)
    X = r.standard_normal((80, 6))
    y = (X[:, 0] + r.standard_normal(80) * 0.5 > 0).astype(int)
    model = fit_bagging(X, y, BaggingConfig(n_bags=25, seed=7))
    probes = r.standard_normal((100, 6)) * 1.5
    mean = np.mean([tree_predict_proba(t, probes) for t in model.trees], axis=0)
    gap = float(np.max(np.abs(predict_proba(model, probes) - mean)))
    invariant = True
    for _ in range(5):
        p = r.permutation(len(model.trees))
        other = BaggingModel(tuple(model.trees[i] for i in p), tuple(model.bag_indices[i] for i in p))
        invariant &= predict_proba(other, probes).tobytes() == predict_proba(model, probes).tobytes()
        invariant &= np.array_equal(predict(other, probes), predict(model, probes))
    measured(record_property, f"max gap {gap:.1e}; permutation-invariant {invariant}")
    assert gap <= 1e-9 and invariant


# -- 8 -------------------------------------------------------------------------------------------


def _mann_whitney(s, y):
    pos, neg = s[y == 1], s[y == 0]
    return (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (len(pos) * len(neg))


@pytest.mark.criterion(8, "trapezoidal AUC equals the Mann-Whitney statistic")
def test_roc_auc_oracle(record_property):
    r = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        n = int(r.integers(2, 51))
        y = r.integers(0, 2, n)
        y[0], y[-1] = 0, 1
        s = r.integers(0, 10, n) / 10 if r.random() < 0.5 else r.random(n)
        worst = max(worst, abs(roc_curve(s, y).auc - _mann_whitney(s, y)))
    sep = roc_curve([0.9, 0.8, 0.7, 0.2, 0.1], [1, 1, 1, 0, 0]).auc
    const = roc_curve([0.4] * 6, [0, 1, 0, 1, 1, 0]).auc
    measured(record_property, f"max |AUC - U| {worst:.1e}; separable {sep}; constant {const}")
    assert worst <= 1e-12 and sep == 1.0 and const == 0.5


# -- 9 --------------------------------------------------------------------------------------------


@pytest.mark.criterion(9, "cost model values and exact linear scaling")
def test_cost_model(record_property):
    base = dict(M=8, N=8, K=8, n=3, t=3, c=1, W=4)
    conv = conv_cost(CostParams(**base))
    ens = ensemble_cost(CostParams(B=50, D=50))
    linear = all(
        conv_cost(CostParams(**{**base, k: base[k] * m})) == m * conv
        for k in ("W", "c", "t") for m in (2, 3, 7)
    )
    measured(record_property, f"conv {conv}, ensemble {ens}, linear in W/c/t {linear}")
    assert conv == 55296 and ens == 2500 and linear


# -- 10 -----------------------------------------------------------------------------------------------


@pytest.mark.criterion(10, "bundle and NIfTI round trips are bit-exact; reruns give identical reports")
def test_persistence_and_determinism(tmp_path, record_property):
    synth = ("--per-class", 15, "--extent", 16, "--seed", 10)
    config = {"version": 1, "input_size": 16, "epochs": 5, "n_bags": 10, "seed": 10}
    data_a, out_a = _full_chain(tmp_path / "a", synth, config)
    data_b, out_b = _full_chain(tmp_path / "b", synth, config)
    names = ["manifest.csv", *sorted(p.name for p in (data_a / "volumes").iterdir())]
    same_data = all((data_a / n if n == "manifest.csv" else data_a / "volumes" / n).read_bytes() ==
                    (data_b / n if n == "manifest.csv" else data_b / "volumes" / n).read_bytes() for n in names)
    written = sorted(p.name for p in out_a.iterdir())
    same_runs = all((out_a / n).read_bytes() == (out_b / n).read_bytes() for n in written)

    raw = (out_a / "model.vxb").read_bytes()
    bundle_exact = to_bytes(from_bytes(raw)) == raw and load_bundle(out_a / "model.vxb") == from_bytes(raw)

    vol = Volume(np.random.default_rng(10).standard_normal((8, 9, 7)).astype(np.float32) * 100, (4.0, 1.0, 1.0))
    write_nifti(vol, tmp_path / "v.nii")
    nifti_exact = read_nifti(tmp_path / "v.nii")[1] == vol
    measured(record_property, f"{len(written)} run files identical {same_runs}; data identical {same_data}; "
                              f"bundle exact {bundle_exact}; NIfTI exact {nifti_exact}")
    assert same_data and same_runs and bundle_exact and nifti_exact


# -- 11 ------------------------------------------------------------------------------------------------


@pytest.mark.criterion(11, "baseline contracts: RVFL residual, forest reduction, kNN oracle")
def test_baseline_contracts(record_property):
    r = np.random.default_rng(11)
    worst = 0.0
    for seed in range(10):
        X = r.standard_normal((60, 12)) + (np.arange(60) % 2)[:, None]
        y = np.arange(60) % 2
        m = B.rvfl_fit(X, y, hidden=int(r.integers(0, 129)), ridge=float(r.uniform(0.01, 1)), seed=seed)
        resid, scale = B.rvfl_residual(m, X, y)
        worst = max(worst, resid / scale)

    X = r.standard_normal((50, 7))
    y = (X[:, 0] > 0).astype(int)
    rf = B.rf_fit(X, y, n_bags=12, seed=3, m_try=7)
    plain = fit_bagging(X, y, BaggingConfig(n_bags=12, seed=3))
    forest_equal = rf.bagging == plain and _same_probabilities(rf, plain, r)

    knn = B.knn_fit(X, y, k=5)
    queries = r.standard_normal((50, 7))
    agree = 0
    for q in queries:
        order = sorted(range(len(X)), key=lambda i: (math.dist(q, X[i]), i))[:5]
        votes = [int(y[i]) for i in order]
        agree += knn.predict(q[None])[0] == int(votes.count(1) > votes.count(0))
    measured(record_property, f"RVFL residual/scale {worst:.1e}; forest == bagging {forest_equal}; "
                              f"kNN {agree}/50 agree")
    assert worst <= 1e-6 and forest_equal and agree == 50


def _same_probabilities(rf, plain, r):
    probes = r.standard_normal((20, rf.bagging.trees[0].n_features))
    return rf.predict_proba(probes).tobytes() == predict_proba(plain, probes).tobytes()
