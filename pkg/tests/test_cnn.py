import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from gradcheck import numerical_gradient, relative_error
from mmwsel import cnn
from mmwsel.channel import substream

RNG = np.random.default_rng(20240811)


# ---------------------------------------------------------------------------
# conv2d


def test_conv_1x1_scalar_case():
    x = np.array([[[[3.0]]]])
    w = np.array([[[[2.0]]]])
    b = np.array([0.5])
    assert cnn.conv2d_forward(x, w, b)[0, 0, 0, 0] == pytest.approx(6.5)


def test_conv_ones_kernel_tap_counts():
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    y = cnn.conv2d_forward(x, w, np.zeros(1))[0, 0]
    assert y[1, 1] == 9.0
    for i, j in ((0, 0), (0, 2), (2, 0), (2, 2)):
        assert y[i, j] == 4.0


def conv_reference(x, w, b):
    """Direct quadruple-loop convolution, same padding, stride 1."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    y = np.zeros((n, o, h, wd))
    for bb in range(n):
        for oo in range(o):
            for i in range(h):
                for j in range(wd):
                    acc = b[oo]
                    for cc in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += w[oo, cc, u, v] * xp[bb, cc, i + u, j + v]
                    y[bb, oo, i, j] = acc
    return y


def test_conv_matches_naive_loops():
    x = RNG.standard_normal((2, 3, 4, 5))
    w = RNG.standard_normal((4, 3, 3, 3))
    b = RNG.standard_normal(4)
    assert np.max(np.abs(cnn.conv2d_forward(x, w, b) - conv_reference(x, w, b))) < 1e-12


def test_conv_backward_zero_gradient():
    x = RNG.standard_normal((1, 2, 3, 3))
    w = RNG.standard_normal((2, 2, 3, 3))
    gx, gw, gb = cnn.conv2d_backward(np.zeros((1, 2, 3, 3)), x, w)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_scalar_chain_rule():
    x = np.array([[[[3.0]]]])
    w = np.array([[[[2.0]]]])
    g = np.array([[[[1.5]]]])
    gx, gw, gb = cnn.conv2d_backward(g, x, w)
    assert gx[0, 0, 0, 0] == pytest.approx(3.0)   # g * w
    assert gw[0, 0, 0, 0] == pytest.approx(4.5)   # g * x
    assert gb[0] == pytest.approx(1.5)


def test_conv_backward_finite_differences():
    x = RNG.standard_normal((2, 2, 4, 3))
    w = RNG.standard_normal((3, 2, 3, 3)) * 0.6
    b = RNG.standard_normal(3)
    proj = RNG.standard_normal((2, 3, 4, 3))
    loss = lambda: float(np.sum(cnn.conv2d_forward(x, w, b) * proj))
    gx, gw, gb = cnn.conv2d_backward(proj, x, w)
    assert relative_error(numerical_gradient(loss, x), gx) < 1e-6
    assert relative_error(numerical_gradient(loss, w), gw) < 1e-6
    assert relative_error(numerical_gradient(loss, b), gb) < 1e-6


def test_conv_shape_mismatch():
    with pytest.raises(ValueError):
        cnn.conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros((2, 2, 3, 3)), np.zeros(2))


# ---------------------------------------------------------------------------
# maxpool


def test_pool_single_window():
    y, _ = cnn.maxpool2x2_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert y[0, 0, 0, 0] == 4.0


def test_pool_ceil_mode_shape():
    y, _ = cnn.maxpool2x2_forward(RNG.standard_normal((1, 1, 5, 5)))
    assert y.shape == (1, 1, 3, 3)


def test_pool_backward_finite_differences():
    # distinct values keep the argmax stable under the probe epsilon
    x = RNG.permutation(np.arange(2 * 3 * 5 * 4, dtype=float)).reshape(2, 3, 5, 4)
    proj = RNG.standard_normal((2, 3, 3, 2))
    loss = lambda: float(np.sum(cnn.maxpool2x2_forward(x)[0] * proj))
    _, cache = cnn.maxpool2x2_forward(x)
    analytic = cnn.maxpool2x2_backward(proj, cache)
    assert relative_error(numerical_gradient(loss, x), analytic) < 1e-6


def test_pool_tie_routes_to_first_index():
    x = np.zeros((1, 1, 2, 2))
    _, cache = cnn.maxpool2x2_forward(x)
    g = cnn.maxpool2x2_backward(np.ones((1, 1, 1, 1)), cache)
    assert g[0, 0, 0, 0] == 1.0
    assert g.sum() == 1.0


# ---------------------------------------------------------------------------
# relu / dense / dropout


def test_relu_cases():
    assert_array_equal(cnn.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    x = np.abs(RNG.standard_normal(10)) + 0.1
    assert_array_equal(cnn.relu(x), x)


def test_relu_backward_finite_differences():
    x = RNG.standard_normal(40)
    x[np.abs(x) < 1e-3] = 0.5  # stay away from the kink
    proj = RNG.standard_normal(40)
    loss = lambda: float(np.sum(cnn.relu(x) * proj))
    assert relative_error(numerical_gradient(loss, x),
                          cnn.relu_backward(proj, x)) < 1e-6


def test_dense_identity_and_zero():
    x = RNG.standard_normal((3, 4))
    assert_allclose(cnn.dense_forward(x, np.eye(4), np.zeros(4)), x)
    b = RNG.standard_normal(4)
    assert_allclose(cnn.dense_forward(x, np.zeros((4, 4)), b),
                    np.broadcast_to(b, (3, 4)))


def test_dense_backward_finite_differences():
    x = RNG.standard_normal((3, 5))
    w = RNG.standard_normal((4, 5))
    b = RNG.standard_normal(4)
    proj = RNG.standard_normal((3, 4))
    loss = lambda: float(np.sum(cnn.dense_forward(x, w, b) * proj))
    gx, gw, gb = cnn.dense_backward(proj, x, w)
    assert relative_error(numerical_gradient(loss, x), gx) < 1e-6
    assert relative_error(numerical_gradient(loss, w), gw) < 1e-6
    assert relative_error(numerical_gradient(loss, b), gb) < 1e-6


def test_dropout_identity_modes():
    x = RNG.standard_normal((4, 6))
    y, mask = cnn.dropout(x, 1.0, substream(0), train=True)
    assert_array_equal(y, x)
    assert mask is None
    y, mask = cnn.dropout(x, 0.3, substream(0), train=False)
    assert_array_equal(y, x)
    assert mask is None


def test_dropout_monte_carlo():
    x = np.ones(100_000)
    y, mask = cnn.dropout(x, 0.5, substream(77), train=True)
    assert np.mean(mask) == pytest.approx(0.5, abs=0.01)
    assert np.mean(y) == pytest.approx(1.0, abs=0.02)  # inverted scaling


# ---------------------------------------------------------------------------
# softmax cross entropy


def test_softmax_uniform_loss():
    for w in (5, 20, 210):
        loss, _ = cnn.softmax_cross_entropy(np.zeros(w), 0)
        assert loss == pytest.approx(np.log(w))


def test_softmax_confident_loss_vanishes():
    logits = np.zeros(20)
    logits[7] = 40.0
    loss, _ = cnn.softmax_cross_entropy(logits, 7)
    assert loss < 1e-6


def test_softmax_gradient_sums_to_zero():
    logits = RNG.standard_normal((6, 10))
    labels = RNG.integers(0, 10, size=6)
    _, grad = cnn.softmax_cross_entropy(logits, labels)
    assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_softmax_gradient_finite_differences():
    logits = RNG.standard_normal((4, 7))
    labels = np.array([0, 3, 6, 2])
    loss = lambda: cnn.softmax_cross_entropy(logits, labels)[0]
    _, grad = cnn.softmax_cross_entropy(logits, labels)
    assert relative_error(numerical_gradient(loss, logits), grad) < 1e-6


def test_softmax_label_out_of_range():
    with pytest.raises(ValueError):
        cnn.softmax_cross_entropy(np.zeros(5), 5)


# ---------------------------------------------------------------------------
# sgd


def tiny_state():
    return cnn.NetworkState(*[np.array([1.0]) for _ in range(8)])


def test_sgd_single_update():
    state = tiny_state()
    grads = {name: np.array([0.5]) for name in cnn.NetworkState.PARAM_NAMES}
    cnn.sgd_step(state, grads, 0.1)
    assert state.w1[0] == pytest.approx(0.95)
    assert state.step == 1


def test_sgd_zero_gradient_is_identity():
    state = tiny_state()
    grads = {name: np.zeros(1) for name in cnn.NetworkState.PARAM_NAMES}
    cnn.sgd_step(state, grads, 0.1)
    assert state.w1[0] == 1.0


def test_sgd_quadratic_two_steps():
    # minimizing w^2/2: gradient is w itself; 1 -> 0.9 -> 0.81
    state = tiny_state()
    for _ in range(2):
        grads = {name: getattr(state, name).copy()
                 for name in cnn.NetworkState.PARAM_NAMES}
        cnn.sgd_step(state, grads, 0.1)
    assert state.w1[0] == pytest.approx(0.81)


# ---------------------------------------------------------------------------
# full-network gradient check and training


def test_full_network_gradient_check():
    cfg = cnn.NetworkConfig(in_height=5, in_width=6, n_classes=4,
                            conv1_filters=3, conv2_filters=4, dense_units=8,
                            keep_prob=1.0)
    state = cnn.init_network(cfg, seed=3, dtype=np.float64)
    x = RNG.standard_normal((2, 2, 5, 6))
    labels = np.array([1, 3])

    def loss():
        logits, _ = cnn._forward(state, x, cfg)
        return cnn.softmax_cross_entropy(logits, labels)[0]

    logits, cache = cnn._forward(state, x, cfg)
    _, grad_logits = cnn.softmax_cross_entropy(logits, labels)
    grads = cnn._backward(state, cfg, grad_logits, cache)
    for name, param in state.param_items():
        numeric = numerical_gradient(loss, param)
        assert relative_error(numeric, grads[name]) < 1e-6, name


def toy_dataset(n=500, seed=1):
    rng = substream(seed)
    x = rng.standard_normal((n, 2, 4, 4))
    # bimodal offset on plane 0 keeps the means far from the boundary
    x[:, 0] += rng.choice([-1.0, 1.0], size=n)[:, None, None]
    y = (x[:, 0].mean(axis=(1, 2)) > 0).astype(np.int64)
    cut = int(0.9 * n)
    return x[:cut], y[:cut], x[cut:], y[cut:]


def test_train_learns_separable_toy_task():
    xtr, ytr, xte, yte = toy_dataset()
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=2)
    tc = cnn.TrainConfig(epochs=20, batch_size=25, learning_rate=0.01, seed=5)
    state, metrics = cnn.train(xtr, ytr, xte, yte, cfg, tc)
    assert metrics[-1]["test_acc"] > 0.95
    labels, _ = cnn.predict(state, xte.astype(np.float32), cfg)
    rule = (xte[:, 0].mean(axis=(1, 2)) > 0).astype(int)
    assert np.mean(labels == rule) > 0.95


def test_train_zero_learning_rate_is_identity():
    xtr, ytr, xte, yte = toy_dataset(100)
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=2)
    tc = cnn.TrainConfig(epochs=2, batch_size=20, learning_rate=0.0, seed=4)
    state, _ = cnn.train(xtr, ytr, xte, yte, cfg, tc)
    init = cnn.init_network(cfg, seed=4, dtype=np.float32)
    for name, param in state.param_items():
        assert_array_equal(param, getattr(init, name))


def test_train_bit_deterministic():
    xtr, ytr, xte, yte = toy_dataset(120)
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=2)
    tc = cnn.TrainConfig(epochs=3, batch_size=30, learning_rate=0.01, seed=8)
    s1, m1 = cnn.train(xtr, ytr, xte, yte, cfg, tc)
    s2, m2 = cnn.train(xtr, ytr, xte, yte, cfg, tc)
    for (name, p1), (_, p2) in zip(s1.param_items(), s2.param_items()):
        assert np.array_equal(p1, p2), name
    assert m1 == m2


def test_train_metrics_row_count_and_csv(tmp_path):
    xtr, ytr, xte, yte = toy_dataset(100)
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=2)
    tc = cnn.TrainConfig(epochs=4, batch_size=25, learning_rate=0.01, seed=2)
    path = tmp_path / "metrics.csv"
    _, metrics = cnn.train(xtr, ytr, xte, yte, cfg, tc, metrics_path=path)
    assert len(metrics) == 4
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,test_acc"
    assert len(lines) == 5


def test_train_rejects_mismatched_labels():
    xtr, ytr, xte, yte = toy_dataset(100)
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=2)
    with pytest.raises(ValueError):
        cnn.train(xtr, ytr + 5, xte, yte, cfg, cnn.TrainConfig(epochs=1))


# ---------------------------------------------------------------------------
# predict and checkpoints


def test_predict_probabilities_sum_to_one():
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=7)
    state = cnn.init_network(cfg, seed=0)
    _, probs = cnn.predict(state, RNG.standard_normal((2, 4, 4)), cfg)
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)


def test_predict_batch_independence():
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=7)
    state = cnn.init_network(cfg, seed=0)
    x = RNG.standard_normal((1, 2, 4, 4))
    batch = np.concatenate([x, x, x])
    labels, probs = cnn.predict(state, batch, cfg)
    assert labels[0] == labels[1] == labels[2]
    assert_array_equal(probs[0], probs[1])


def test_checkpoint_round_trip(tmp_path):
    cfg = cnn.NetworkConfig(in_height=6, in_width=16, n_classes=20)
    state = cnn.init_network(cfg, seed=9)
    state.step = 42
    path = tmp_path / "net.ckpt"
    cnn.save_checkpoint(path, state, cfg)
    loaded, loaded_cfg = cnn.load_checkpoint(path)
    assert loaded_cfg == cfg
    assert loaded.step == 42
    for (name, p1), (_, p2) in zip(state.param_items(), loaded.param_items()):
        assert np.array_equal(p1, p2), name


def test_checkpoint_epochs_zero_equals_init(tmp_path):
    xtr, ytr, xte, yte = toy_dataset(50)
    cfg = cnn.NetworkConfig(in_height=4, in_width=4, n_classes=2)
    tc = cnn.TrainConfig(epochs=0, batch_size=10, seed=6)
    path = tmp_path / "init.ckpt"
    state, metrics = cnn.train(xtr, ytr, xte, yte, cfg, tc, checkpoint_path=path)
    assert metrics == []
    loaded, _ = cnn.load_checkpoint(path)
    init = cnn.init_network(cfg, seed=6, dtype=np.float32)
    for (name, p1), (_, p2) in zip(loaded.param_items(), init.param_items()):
        assert np.array_equal(p1, p2), name


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        cnn.load_checkpoint(path)


# ---------------------------------------------------------------------------
# multiply count


def test_multiply_count_full_scale_architecture():
    cfg = cnn.NetworkConfig(in_height=10, in_width=144, n_classes=210)
    assert cnn.multiply_count(cfg) == 5_827_584
