import math

import numpy as np
import pytest

from dxpipe.nnet import (
    FusionNet,
    ModelConfig,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    sgd_step,
    softmax,
    weighted_ce,
)

STEP = 1e-3
RTOL = 1e-3


def rel_err(a: float, b: float) -> float:
    if abs(a) < 1e-12 and abs(b) < 1e-12:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def fd_check(forward, param, grad, samples, rng, step=STEP):
    """Central finite differences on sampled coordinates of `param` against
    the analytic `grad`; forward() returns the scalar loss."""
    flat = param.ravel()
    idx = rng.choice(param.size, size=min(samples, param.size), replace=False)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        lp = forward()
        flat[i] = orig - step
        lm = forward()
        flat[i] = orig
        fd = (lp - lm) / (2 * step)
        assert rel_err(grad.ravel()[i], fd) < RTOL, (i, grad.ravel()[i], fd)


def test_conv2d_gradients():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 2, 8, 8))
    w = rng.standard_normal((4, 2, 3, 3))
    b = rng.standard_normal(4)
    r = rng.standard_normal((3, 4, 6, 6))

    def loss():
        out, _ = conv2d_forward(x, w, b)
        return float((out * r).sum())

    out, cols = conv2d_forward(x, w, b)
    dx, dw, db = conv2d_backward(r, cols, x.shape, w)
    fd_check(loss, w, dw, 40, rng)
    fd_check(loss, b, db, 4, rng)
    fd_check(loss, x, dx, 40, rng)


def test_dense_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((5, 7))
    w = rng.standard_normal((4, 7))
    b = rng.standard_normal(4)
    r = rng.standard_normal((5, 4))

    def loss():
        return float((dense_forward(x, w, b) * r).sum())

    dx, dw, db = dense_backward(r, x, w)
    fd_check(loss, w, dw, 28, rng)
    fd_check(loss, b, db, 4, rng)
    fd_check(loss, x, dx, 35, rng)


def test_maxpool_gradients():
    # window gaps held above the FD step so the argmax never flips
    rng = np.random.default_rng(2)
    x = rng.permutation(np.arange(2 * 3 * 8 * 8, dtype=np.float64)).reshape(2, 3, 8, 8)
    x *= 0.05  # gaps of 0.05 >> 2 * step
    r = rng.standard_normal((2, 3, 4, 4))

    def loss():
        out, _ = maxpool2_forward(x)
        return float((out * r).sum())

    out, cache = maxpool2_forward(x)
    dx = maxpool2_backward(r, cache)
    fd_check(loss, x, dx, 60, rng)


def test_maxpool_odd_edges_get_zero_gradient():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 1, 5, 5))
    out, cache = maxpool2_forward(x)
    assert out.shape == (1, 1, 2, 2)
    dx = maxpool2_backward(np.ones_like(out), cache)
    assert (dx[:, :, 4, :] == 0).all() and (dx[:, :, :, 4] == 0).all()


def test_relu_gradients_away_from_kink():
    rng = np.random.default_rng(4)
    mag = rng.uniform(2 * STEP + 1e-3, 2.0, size=(6, 10))
    x = mag * rng.choice([-1.0, 1.0], size=(6, 10))
    r = rng.standard_normal((6, 10))

    def loss():
        return float((relu_forward(x) * r).sum())

    dx = relu_backward(r, x)
    fd_check(loss, x, dx, 60, rng)


def test_dropout_gradient_is_scaled_mask():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 9))
    out, mask = dropout_forward(x, 0.5, np.random.default_rng(0))
    np.testing.assert_allclose(out, x * mask / 0.5)
    dout = rng.standard_normal((4, 9))
    np.testing.assert_allclose(dropout_backward(dout, mask, 0.5), dout * mask / 0.5)


def test_dropout_keeps_expected_fraction():
    rng = np.random.default_rng(6)
    _, mask = dropout_forward(np.ones((100, 100)), 0.5, rng)
    assert 0.45 < mask.mean() < 0.55


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    s = softmax(rng.standard_normal((50, 6)) * 10)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


def test_weighted_ce_symmetric_logits():
    loss, _ = weighted_ce(np.zeros((1, 2)), np.array([0]), np.ones(2))
    assert abs(loss - math.log(2)) < 1e-9


def test_weighted_ce_weighted_fixture():
    # 3 * (-2 + ln(e^2 + 1))
    logits = np.array([[2.0, 0.0]])
    loss, _ = weighted_ce(logits, np.array([0]), np.array([3.0, 1.0]))
    expected = 3.0 * (-2.0 + math.log(math.exp(2.0) + 1.0))
    assert abs(loss - expected) < 1e-9
    assert abs(loss - 0.380784) < 1e-6


def test_weighted_ce_linear_in_weights():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, size=6)
    w = rng.uniform(0.5, 2.0, size=4)
    l1, g1 = weighted_ce(logits, labels, w)
    l2, g2 = weighted_ce(logits, labels, 2 * w)
    assert abs(l2 - 2 * l1) < 1e-9
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-6)


def test_weighted_ce_uniform_equals_standard():
    rng = np.random.default_rng(9)
    logits = rng.standard_normal((5, 6))
    labels = rng.integers(0, 6, size=5)
    loss, _ = weighted_ce(logits, labels, np.ones(6))
    p = softmax(logits)
    standard = -np.log(p[np.arange(5), labels]).mean()
    assert abs(loss - standard) < 1e-6


def test_weighted_ce_gradient():
    rng = np.random.default_rng(10)
    logits = rng.standard_normal((4, 6))
    labels = np.array([0, 2, 5, 1])
    w = np.array([1.0, 2.0, 0.5, 1.0, 3.0, 1.0])
    _, grad = weighted_ce(logits, labels, w)

    def loss():
        return weighted_ce(logits, labels, w)[0]

    fd_check(loss, logits, grad, 24, rng, step=1e-5)


def test_weighted_ce_validation():
    logits = np.zeros((2, 3))
    with pytest.raises(ValueError, match="label"):
        weighted_ce(logits, np.array([0, 3]), np.ones(3))
    with pytest.raises(ValueError, match="weights"):
        weighted_ce(logits, np.array([0, 1]), np.zeros(3))
    with pytest.raises(FloatingPointError, match="non-finite"):
        weighted_ce(np.array([[np.nan, 0.0]]), np.array([0]), np.ones(2))


def test_weighted_ce_stable_for_large_logits():
    loss, grad = weighted_ce(np.array([[1000.0, 0.0]]), np.array([0]), np.ones(2))
    assert math.isfinite(loss) and loss < 1e-6
    assert np.isfinite(grad).all()


def test_sgd_plain_step():
    params = {"w": np.array([1.0, 2.0], dtype=np.float32)}
    grads = {"w": np.array([0.5, -1.0], dtype=np.float32)}
    vel = {}
    sgd_step(params, grads, vel, lr=0.1, momentum=0.0)
    np.testing.assert_allclose(params["w"], [0.95, 2.1])


def test_sgd_zero_grad_keeps_params():
    params = {"w": np.array([3.0], dtype=np.float32)}
    sgd_step(params, {"w": np.zeros(1, dtype=np.float32)}, {}, lr=1.0, momentum=0.9)
    assert params["w"][0] == 3.0


def test_sgd_momentum_matches_hand_unrolled():
    p = np.array([1.0], dtype=np.float64)
    g1, g2 = 0.2, -0.1
    lr, mu = 0.1, 0.9
    params = {"w": p.copy()}
    vel = {}
    sgd_step(params, {"w": np.array([g1])}, vel, lr, mu)
    sgd_step(params, {"w": np.array([g2])}, vel, lr, mu)
    v1 = -lr * g1
    p1 = 1.0 + v1
    v2 = mu * v1 - lr * g2
    p2 = p1 + v2
    np.testing.assert_allclose(params["w"], [p2], rtol=1e-12)


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, 0.1)


def test_forward_output_shape_and_concat_width():
    cfg = ModelConfig()
    model = FusionNet(cfg, seed=0)
    x = np.random.default_rng(0).random((3, 1, 32, 32)).astype(np.float32)
    logits, cache = model.forward(x)
    assert logits.shape == (3, 6)
    assert cache["fused_in"].shape == (3, 66 + 96)


def test_eval_forward_deterministic():
    model = FusionNet(ModelConfig(), seed=1)
    x = np.random.default_rng(1).random((2, 1, 32, 32)).astype(np.float32)
    a, _ = model.forward(x, train_mode=False)
    b, _ = model.forward(x, train_mode=False)
    np.testing.assert_array_equal(a, b)


def test_train_forward_requires_rng():
    model = FusionNet(ModelConfig(), seed=1)
    x = np.zeros((1, 1, 32, 32), dtype=np.float32)
    with pytest.raises(ValueError, match="rng"):
        model.forward(x, train_mode=True)


def test_forward_shape_validation():
    model = FusionNet(ModelConfig(), seed=0)
    with pytest.raises(ValueError, match="expected"):
        model.forward(np.zeros((2, 1, 16, 16), dtype=np.float32))
    with pytest.raises(ValueError, match="expected"):
        model.forward(np.zeros((2, 3, 32, 32), dtype=np.float32))


def test_zero_dlogits_give_zero_gradients():
    model = FusionNet(ModelConfig(), seed=2)
    x = np.random.default_rng(2).random((2, 1, 32, 32)).astype(np.float32)
    logits, cache = model.forward(x, train_mode=True, rng=np.random.default_rng(0))
    grads = model.backward(cache, np.zeros_like(logits))
    assert all((g == 0).all() for g in grads.values())


def test_identical_samples_identical_contributions():
    model = FusionNet(ModelConfig(dropout_rate=0.0), seed=3)
    rng = np.random.default_rng(3)
    x1 = rng.random((1, 1, 32, 32)).astype(np.float32)
    pair = np.concatenate([x1, x1])
    labels = np.array([2, 2])
    logits, cache = model.forward(pair, train_mode=True)
    loss, dl = weighted_ce(logits, labels, np.ones(6))
    np.testing.assert_array_equal(logits[0], logits[1])
    np.testing.assert_array_equal(dl[0], dl[1])
    grads_pair = model.backward(cache, dl)

    logits1, cache1 = model.forward(x1, train_mode=True)
    loss1, dl1 = weighted_ce(logits1, labels[:1], np.ones(6))
    grads_single = model.backward(cache1, dl1)
    assert abs(loss - loss1) < 1e-6
    # batched vs single-row BLAS kernels round differently; float32-level match
    for name in grads_pair:
        np.testing.assert_allclose(grads_pair[name], grads_single[name], rtol=1e-3, atol=1e-6)


def test_argmax_invariant_under_constant_shift():
    model = FusionNet(ModelConfig(), seed=4)
    x = np.random.default_rng(4).random((4, 1, 32, 32)).astype(np.float32)
    logits, _ = model.forward(x)
    shifted = logits + 3.7
    assert (logits.argmax(axis=1) == shifted.argmax(axis=1)).all()
    np.testing.assert_allclose(softmax(logits), softmax(shifted), atol=1e-6)


def test_full_scale_dims():
    cfg = ModelConfig(full_scale=True)
    assert (cfg.branch_a_dim, cfg.branch_b_dim, cfg.fusion_dim) == (1056, 1536, 2048)
    assert cfg.branch_a_dim * 16 == cfg.branch_b_dim * 11  # 11:16 branch ratio
    model = FusionNet(cfg, seed=0)
    assert model.params["fusion.w"].shape == (2048, 1056 + 1536)
    assert model.params["head.w"].shape == (6, 2048)


def test_default_dims_keep_branch_ratio():
    cfg = ModelConfig()
    assert cfg.branch_a_dim * 16 == cfg.branch_b_dim * 11
