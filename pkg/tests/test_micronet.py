import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import finite_difference
from roifusion.exceptions import EmptyGroup, IncompatibleCheckpoint, MalformedFile, ShapeMismatch
from roifusion.micronet import (MLP, Adam, Dense, SetMaxPool, SharedMLP, StepSchedule, cross_entropy,
                                cross_entropy_grad, grad_check, load_checkpoint, read_checkpoint,
                                save_checkpoint, scatter_add, set_maxpool, smooth_l1, smooth_l1_grad,
                                squared_error)


def test_dense_identity():
    d = Dense(3, 3, None)
    d.W[...] = np.eye(3)
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(d.forward(x)[0], x)


def test_dense_relu_negative_is_zero():
    d = Dense(2, 4, "relu")
    d.W[...] = -np.abs(d.W) - 0.1
    assert np.array_equal(d.forward(np.ones((3, 2)))[0], np.zeros((3, 4)))


def test_dense_hand_product():
    d = Dense(3, 2, None)
    d.W[...] = [[1, 0], [2, -1], [0, 3]]
    d.b[...] = [0.5, -0.5]
    x = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]])
    # row 0: [1 + 4 + 0, 0 - 2 + 9] + b ; row 1: [-1 + 0 + 0, 0 + 0 + 3] + b
    assert np.array_equal(d.forward(x)[0], [[5.5, 6.5], [-0.5, 2.5]])


def test_dense_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Dense(3, 2).forward(np.ones((1, 4)))


def test_maxpool_cases():
    g = np.array([[[1.0, 2.0, 3.0]]])
    assert np.array_equal(set_maxpool(g)[0], [[1.0, 2.0, 3.0]])
    g = np.array([[0.0, 0.0], [5.0, 1.0], [1.0, 7.0]])
    assert np.array_equal(set_maxpool(g)[0], [5.0, 7.0])
    rng = np.random.default_rng(0)
    g = rng.normal(size=(8, 4))
    brute = [max(g[i, c] for i in range(8)) for c in range(4)]
    assert np.array_equal(set_maxpool(g)[0], brute)
    with pytest.raises(EmptyGroup):
        set_maxpool(np.zeros((0, 3)))


def test_maxpool_ties_route_to_first():
    pool = SetMaxPool()
    y, cache = pool.forward(np.array([[1.0], [1.0]]))
    assert np.array_equal(pool.backward(np.array([1.0]), cache), [[1.0], [0.0]])


def test_maxpool_gradient_fd():
    rng = np.random.default_rng(1)
    g = rng.normal(size=(8, 4))
    pool = SetMaxPool()
    w = rng.normal(size=4)
    y, cache = pool.forward(g)
    analytic = pool.backward(w, cache)
    numeric = finite_difference(lambda x: float(set_maxpool(x)[0] @ w), g)
    assert np.allclose(analytic, numeric, atol=1e-8)


@given(st.integers(0, 1000))
def test_maxpool_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(3, 6, 5))
    perm = rng.permutation(6)
    assert np.array_equal(set_maxpool(g)[0], set_maxpool(g[:, perm])[0])


def test_scatter_add_matches_add_at():
    rng = np.random.default_rng(0)
    idx = rng.integers(0, 7, size=(5, 3))
    vals = rng.normal(size=(5, 3, 2))
    ref = np.zeros((7, 2))
    np.add.at(ref, idx.reshape(-1), vals.reshape(-1, 2))
    assert np.allclose(scatter_add(idx, vals, 7), ref)


def test_losses_hand_values():
    assert smooth_l1(3.0, 3.0) == 0.0
    assert smooth_l1(2.0, 0.0) == 1.5
    assert smooth_l1(0.5, 0.0) == 0.125
    assert cross_entropy([[60.0, -60.0]], [0]) < 1e-40
    assert cross_entropy([[0.0, 0.0]], [1]) == pytest.approx(np.log(2))


def test_loss_gradients_fd():
    rng = np.random.default_rng(2)
    p, t = rng.normal(size=(4, 3)) * 2, rng.normal(size=(4, 3))
    assert np.allclose(smooth_l1_grad(p, t), finite_difference(lambda x: smooth_l1(x, t), p), atol=1e-6)
    logits, labels = rng.normal(size=(5, 4)), rng.integers(0, 4, 5)
    assert np.allclose(cross_entropy_grad(logits, labels),
                       finite_difference(lambda x: cross_entropy(x, labels), logits), atol=1e-6)


def test_grad_check_single_dense():
    rng = np.random.default_rng(0)
    d = Dense(4, 3, None, rng)
    x, t = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
    assert grad_check(d, x, lambda y: squared_error(y, t)) <= 1e-6


def test_grad_check_two_layer_relu():
    rng = np.random.default_rng(1)
    net = MLP(4, (6, 3), rng, final_activation=None)
    # keep pre-activations away from the ReLU kink
    net.layers()[0].b[...] = 0.5
    x, t = rng.normal(size=(5, 4)), rng.normal(size=(5, 3))
    assert grad_check(net, x, lambda y: squared_error(y, t)) <= 1e-5


def test_zero_input_zero_target_gives_zero_gradients():
    d = Dense(3, 2, None)
    y, cache = d.forward(np.zeros((2, 3)))
    _, dy = squared_error(y, np.zeros_like(y))
    d.backward(dy, cache)
    assert not d.dW.any() and not d.db.any()


def test_shared_mlp_rows_independent():
    rng = np.random.default_rng(3)
    m = SharedMLP(4, (5, 2), rng)
    x = rng.normal(size=(3, 6, 4))
    y = m.forward(x)[0]
    assert y.shape == (3, 6, 2)
    assert np.allclose(y[1, 2], m.forward(x[1, 2][None])[0][0])


def test_forward_bit_identical():
    rng = np.random.default_rng(3)
    m = MLP(4, (8, 3), rng)
    x = rng.normal(size=(10, 4))
    assert np.array_equal(m.forward(x)[0], m.forward(x.copy())[0])


def test_adam_and_schedule():
    sched = StepSchedule(0.002, 40, 10)
    assert sched(0) == 0.002 and sched(39) == 0.002 and sched(40) == pytest.approx(0.0002)
    p = np.array([1.0, -1.0])
    opt = Adam([p], lr=0.1)
    opt.step([np.array([2.0, -3.0])])
    # first bias-corrected Adam step moves each coordinate by ~lr against the gradient sign
    assert np.allclose(p, [0.9, -0.9], atol=1e-6)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    net = MLP(3, (4, 2), rng)
    path = tmp_path / "m.rfn"
    save_checkpoint(path, net.layers())
    other = MLP(3, (4, 2), np.random.default_rng(9))
    load_checkpoint(path, other.layers())
    for a, b in zip(net.parameters(), other.parameters()):
        assert np.array_equal(a, b)
    with pytest.raises(IncompatibleCheckpoint):
        load_checkpoint(path, MLP(3, (5, 2)).layers())
    with pytest.raises(IncompatibleCheckpoint):
        load_checkpoint(path, MLP(3, (4,)).layers())
    (tmp_path / "bad").write_bytes(b"XXXX")
    with pytest.raises(MalformedFile):
        read_checkpoint(tmp_path / "bad")
