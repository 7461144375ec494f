import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxbag.cnn import layers as L
from voxbag.cnn.cost import CostParams, conv_cost, ensemble_cost, network_cost
from voxbag.cnn.network import (
    FEATURE_WIDTH, NetworkSpec, backward, extract_features, forward, init_params,
    learnable_keys, loss_and_grads, network_preset,
)
from voxbag.cnn.train import TrainConfig, _batches, train
from voxbag.errors import ConfigError, NumericalError, ShapeError
from voxbag.synth import SynthConfig, generate
from voxbag.volume import intensity_normalize


def tiny_net():
    return NetworkSpec((1, 4, 4, 4), (
        L.Conv(1, 2), L.BatchNorm(2), L.ReLU(), L.MaxPool(),
        L.Flatten(), L.FullyConnected(16, 4), L.ReLU(), L.FullyConnected(4, 2), L.SoftmaxOutput(),
    ))


def synth_batch(n_per_class, extent=8, seed=0):
    cfg = SynthConfig(per_class=n_per_class, extent=extent, radius=min(3.0, extent / 2), seed=seed)
    xs, ys = [], []
    for _, label, vol in generate(cfg):
        xs.append(intensity_normalize(vol)[0].data[None])
        ys.append(label)
    return np.stack(xs), np.array(ys)


def test_preset_block_counts():
    net = network_preset(1, "3d", (1, 32, 32, 32))
    convs = [l for l in net.layers if isinstance(l, L.Conv)]
    assert len(convs) == 5
    assert net.feature_width == FEATURE_WIDTH == 128
    assert sum(isinstance(l, L.Conv) for l in network_preset(5).layers) == 2


def test_preset_2d_depth_extents():
    net = network_preset(1, "2d", (1, 1, 32, 32))
    for layer in net.layers:
        if isinstance(layer, L.Conv):
            assert layer.kernel[0] == 1 and layer.pad[0] == 0
        if isinstance(layer, L.MaxPool):
            assert layer.size[0] == 1 and layer.stride[0] == 1
    with pytest.raises(ShapeError):
        network_preset(1, "2d", (1, 4, 32, 32))


def test_unclipped_preset_rejects_small_input():
    with pytest.raises(ShapeError):
        network_preset(1, "3d", (1, 16, 16, 16), clip_pool=False)
    assert network_preset(1, "3d", (1, 16, 16, 16)).feature_width == 128


@pytest.mark.parametrize("preset", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("mode,shape", [("3d", (1, 32, 32, 32)), ("2d", (1, 1, 32, 32)), ("3d", (1, 16, 16, 16))])
def test_shape_chain_closed_form(preset, mode, shape):
    net = network_preset(preset, mode, shape)
    shapes = net.shapes()
    for i, layer in enumerate(net.layers):
        if isinstance(layer, L.Conv):
            exp = [(n + 2 * p - k) // s + 1 for n, k, s, p in zip(shapes[i][1:], layer.kernel, layer.stride, layer.pad)]
            assert shapes[i + 1] == (layer.out_ch, *exp)
        elif isinstance(layer, L.MaxPool):
            exp = [(n - k) // s + 1 for n, k, s in zip(shapes[i][1:], layer.size, layer.stride)]
            assert shapes[i + 1] == (shapes[i][0], *exp)
    x = np.zeros((2, *shape), np.float32)
    logits, probs, _ = forward(net, init_params(net), x)
    assert logits.shape == (2, 2)


def test_spec_dict_roundtrip():
    net = network_preset(3, "2d", (1, 1, 16, 16))
    assert NetworkSpec.from_dict(net.to_dict()) == net


def test_zero_output_weights_give_even_odds(rng):
    net = network_preset(5, "3d", (1, 8, 8, 8))
    params = init_params(net)
    last_fc = max(i for i, l in enumerate(net.layers) if isinstance(l, L.FullyConnected))
    params[f"{last_fc}.weight"][:] = 0
    _, probs, _ = forward(net, params, rng.standard_normal((3, 1, 8, 8, 8)).astype(np.float32))
    np.testing.assert_array_equal(probs, 0.5)


def test_full_network_gradient_check(rng):
    net = tiny_net()
    params = init_params(net, seed=3, dtype=np.float64)
    x = rng.standard_normal((3, 1, 4, 4, 4))
    y = np.array([0, 1, 1])
    _, grads, _ = loss_and_grads(net, params, x, y)

    def loss():
        logits = forward(net, params, x, mode="train")[0]
        return L.cross_entropy(logits, y)

    h = 1e-3
    for key in learnable_keys(params):
        p = params[key]
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            num[idx] = (up - down) / (2 * h)
        # conv biases feeding batch norm have an exactly zero gradient; the
        # floor keeps round-off on both sides from counting as relative error
        err = np.linalg.norm(grads[key] - num) / max(np.linalg.norm(grads[key]) + np.linalg.norm(num), 1e-6)
        assert err <= 1e-4, key


def test_duplicated_batch_same_gradients(rng):
    net = tiny_net()
    params = init_params(net, seed=1, dtype=np.float64)
    x = rng.standard_normal((3, 1, 4, 4, 4))
    y = np.array([0, 1, 0])
    _, g1, _ = loss_and_grads(net, params, x, y)
    _, g2, _ = loss_and_grads(net, params, np.repeat(x, 2, axis=0), np.repeat(y, 2))
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-6)


def test_backward_needs_train_cache(rng):
    net = tiny_net()
    params = init_params(net)
    x = rng.standard_normal((2, 1, 4, 4, 4)).astype(np.float32)
    with pytest.raises(ShapeError):
        backward(net, params, forward(net, params, x, keep_activations=True)[2], [0, 1])
    with pytest.raises(ShapeError):
        backward(net, params, forward(net, params, x, mode="train")[2], [0, 1, 0])


def test_features_match_activation_cache(rng):
    net = network_preset(5, "3d", (1, 8, 8, 8))
    params = init_params(net, seed=2)
    x = rng.standard_normal((5, 1, 8, 8, 8)).astype(np.float32)
    feats = extract_features(net, params, x, chunk=2)
    _, _, cache = forward(net, params, x, keep_activations=True)
    np.testing.assert_array_equal(feats, cache.activations[net.feature_layer])
    assert feats.shape == (5, 128)
    np.testing.assert_array_equal(extract_features(net, params, x[:1]), extract_features(net, params, x[:1]))


def test_batches_merge_trailing_singleton():
    sizes = [len(b) for b in _batches(np.arange(17), 8)]
    assert sizes == [8, 9]
    assert [len(b) for b in _batches(np.arange(16), 8)] == [8, 8]


def test_zero_learning_rate_freezes_parameters():
    X, y = synth_batch(4)
    net = network_preset(5, "3d", X.shape[1:])
    p0 = init_params(net, seed=0)
    p1, _ = train(net, p0, X, y, TrainConfig(learning_rate=0.0, epochs=3, batch_size=4))
    for k in learnable_keys(p0):
        assert p1[k].tobytes() == p0[k].tobytes()


def test_training_is_deterministic():
    X, y = synth_batch(4)
    net = network_preset(5, "3d", X.shape[1:])
    cfg = TrainConfig(epochs=3, batch_size=4, seed=5)
    a, ta = train(net, init_params(net, 1), X, y, cfg)
    b, tb = train(net, init_params(net, 1), X, y, cfg)
    assert ta == tb
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_training_does_not_mutate_input():
    X, y = synth_batch(3)
    net = network_preset(5, "3d", X.shape[1:])
    p0 = init_params(net)
    snap = {k: v.copy() for k, v in p0.items()}
    train(net, p0, X, y, TrainConfig(epochs=1, batch_size=3, keep_best=False))
    assert all(np.array_equal(snap[k], p0[k]) for k in p0)


def test_nan_loss_raises():
    X, y = synth_batch(3)
    X[0, 0, 0, 0, 0] = np.nan
    net = network_preset(5, "3d", X.shape[1:])
    with pytest.raises(NumericalError, match="epoch 1"):
        train(net, init_params(net), X, y, TrainConfig(epochs=1, batch_size=6))


def test_bad_train_config():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0)


def test_cost_examples():
    assert conv_cost(CostParams()) == 1 and ensemble_cost(CostParams()) == 1
    assert conv_cost(CostParams(M=8, N=8, K=8, n=3, t=3, c=1, W=4)) == 8 * 8 * 8 * 9 * 3 * 1 * 4 == 55296
    assert ensemble_cost(CostParams(B=50, D=50)) == 2500
    with pytest.raises(ConfigError):
        CostParams(W=0)


@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 9), st.integers(1, 5), st.integers(1, 32))
def test_cost_multiplicative(m, n, k, t, w):
    base = CostParams(M=m, N=n, K=k, n=3, t=t, c=2, W=w)
    assert conv_cost(CostParams(M=m, N=n, K=k, n=3, t=t, c=2, W=2 * w)) == 2 * conv_cost(base)
    assert conv_cost(CostParams(M=m, N=n, K=k, n=3, t=t, c=4, W=w)) == 2 * conv_cost(base)
    assert conv_cost(CostParams(M=m, N=n, K=k, n=3, t=3 * t, c=2, W=w)) == 3 * conv_cost(base)


def test_network_cost_sums_layers():
    net = network_preset(2, "3d", (1, 16, 16, 16))
    cost = network_cost(net, n_bags=50)
    assert cost["conv_total"] == sum(r["macs"] for r in cost["conv_layers"])
    first = cost["conv_layers"][0]
    assert first["macs"] == 16 ** 3 * 9 * 3 * 1 * 8
    assert cost["total"] == cost["conv_total"] + cost["ensemble"]


def test_rows_independent_of_batch_composition(rng):
    net = network_preset(5, "3d", (1, 8, 8, 8))
    params = init_params(net, seed=4)
    x = rng.standard_normal((7, 1, 8, 8, 8)).astype(np.float32)
    full = extract_features(net, params, x)
    parts = np.concatenate([extract_features(net, params, x[i:i + 1]) for i in range(7)])
    assert full.tobytes() == parts.tobytes()
