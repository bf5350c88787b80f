"""Dense network forward/backward checks against finite differences."""

import numpy as np
import pytest

from satgate.mlp import Adam, Mlp


def _loss_and_grads(net, x, d_out):
    out, cache = net.forward(x)
    loss = float((out * d_out).sum())
    return loss, net.backward(cache, d_out)


def test_zero_init_output_layer():
    net = Mlp([4, 8, 8, 5], np.random.default_rng(3))
    assert np.all(net.weights[-1] == 0) and np.all(net.biases[-1] == 0)
    out, _ = net.forward(np.ones(4))
    assert np.allclose(out, 0.0)
    # hidden layers are not degenerate
    assert np.linalg.norm(net.weights[0]) > 0


def test_batch_matches_single_rows():
    rng = np.random.default_rng(5)
    net = Mlp([3, 6, 2], rng)
    net.weights[-1] = rng.standard_normal((6, 2))
    X = rng.standard_normal((4, 3))
    batch, _ = net.forward(X)
    for i in range(4):
        single, _ = net.forward(X[i])
        assert np.allclose(batch[i], single[0])


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    net = Mlp([3, 5, 4, 2], rng)
    net.set_flat(net.flat() + 0.3 * rng.standard_normal(net.n_params))
    x = rng.standard_normal((6, 3))
    d_out = rng.standard_normal((6, 2))

    _, (gw, gb) = _loss_and_grads(net, x, d_out)
    analytic = np.concatenate([g.ravel() for g in gw + gb])

    theta = net.flat()
    eps = 1e-6
    numeric = np.empty_like(theta)
    for i in range(theta.size):
        bump = theta.copy()
        bump[i] += eps
        net.set_flat(bump)
        up, _ = _loss_and_grads(net, x, d_out)
        bump[i] -= 2 * eps
        net.set_flat(bump)
        down, _ = _loss_and_grads(net, x, d_out)
        numeric[i] = (up - down) / (2 * eps)
    net.set_flat(theta)
    assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_flat_roundtrip():
    rng = np.random.default_rng(7)
    net = Mlp([4, 6, 3], rng)
    theta = rng.standard_normal(net.n_params)
    net.set_flat(theta)
    assert np.array_equal(net.flat(), theta)
    with pytest.raises(ValueError):
        net.set_flat(theta[:-1])


def test_copy_is_deep():
    net = Mlp([3, 4, 2], np.random.default_rng(0))
    other = net.copy()
    other.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != other.weights[0][0, 0]


def test_adam_first_step_size_is_lr():
    # With bias correction, the first Adam step moves each coordinate by
    # almost exactly lr against the gradient sign.
    net = Mlp([2, 3, 1], np.random.default_rng(2))
    opt = Adam(net)
    before = net.flat()
    grads_w = [np.ones_like(w) for w in net.weights]
    grads_b = [np.ones_like(b) for b in net.biases]
    opt.step(net, grads_w, grads_b, lr=0.01)
    assert np.allclose(before - net.flat(), 0.01, atol=1e-6)
    assert opt.t == 1


def test_adam_copy_independent():
    net = Mlp([2, 3, 1], np.random.default_rng(2))
    opt = Adam(net)
    clone = opt.copy()
    grads_w = [np.ones_like(w) for w in net.weights]
    grads_b = [np.ones_like(b) for b in net.biases]
    opt.step(net, grads_w, grads_b, lr=0.01)
    assert opt.t == 1 and clone.t == 0
    assert all(np.all(m == 0) for m in clone.m)


def test_backward_shapes():
    rng = np.random.default_rng(9)
    net = Mlp([3, 5, 2], rng)
    out, cache = net.forward(rng.standard_normal((4, 3)))
    gw, gb = net.backward(cache, np.ones_like(out))
    assert [g.shape for g in gw] == [w.shape for w in net.weights]
    assert [g.shape for g in gb] == [b.shape for b in net.biases]
