"""Gradient and semantics checks for the reverse-mode engine."""

import numpy as np
import pytest

from cascadevq import autodiff as ad
from cascadevq.autodiff import Var
from cascadevq.errors import ContractError, NumericsError

from helpers import away_from, directional_fd

RNG = np.random.default_rng(7)


def test_finite_guard():
    with pytest.raises(NumericsError):
        Var(np.array([1.0, np.nan]))


def test_backward_requires_scalar():
    v = ad.parameter(np.ones(3))
    with pytest.raises(ContractError):
        (v * v).backward()


def test_elementwise_grads():
    x = RNG.normal(size=(3, 4))
    y = RNG.normal(size=(3, 4))
    assert directional_fd(lambda a, b: ad.sum_(a * b + a - b), [x, y]) < 1e-7
    assert directional_fd(lambda a: ad.sum_(ad.exp(a)), [x]) < 1e-7
    assert directional_fd(lambda a: ad.sum_(ad.tanh(a)), [x]) < 1e-7
    assert directional_fd(lambda a: ad.sum_(ad.log(a)), [np.abs(x) + 0.5]) < 1e-7
    assert directional_fd(lambda a: ad.sum_(a ** 3.0), [x]) < 1e-7


def test_relu_kink_subgradient_zero():
    v = ad.parameter(np.array([0.0, -1.0, 2.0]))
    out = ad.sum_(ad.relu(v))
    out.backward()
    assert np.array_equal(v.grad, [0.0, 0.0, 1.0])


def test_minimum_ties_take_first():
    a = ad.parameter(np.array([1.0, 3.0]))
    b = ad.parameter(np.array([1.0, 2.0]))
    out = ad.sum_(ad.minimum(a, b))
    out.backward()
    assert np.array_equal(a.grad, [1.0, 0.0])
    assert np.array_equal(b.grad, [0.0, 1.0])


def test_broadcast_grads():
    x = RNG.normal(size=(3, 4))
    y = RNG.normal(size=(4,))
    assert directional_fd(lambda a, b: ad.sum_(a * b), [x, y]) < 1e-7


def test_matmul_variants():
    A = RNG.normal(size=(3, 4))
    B = RNG.normal(size=(4, 2))
    v = RNG.normal(size=4)
    assert directional_fd(lambda a, b: ad.sum_(ad.matmul(a, b)), [A, B]) < 1e-7
    assert directional_fd(lambda a, b: ad.sum_(ad.matmul(a, b)), [A, v]) < 1e-7
    assert directional_fd(lambda a, b: ad.sum_(ad.matmul(a, b)), [v, B]) < 1e-7
    assert directional_fd(lambda a, b: ad.matmul(a, b), [v, v]) < 1e-7


def test_take_concat_reshape_transpose():
    x = RNG.normal(size=(5, 3))
    assert directional_fd(lambda a: ad.sum_(a[1:4] * a[0:3]), [x]) < 1e-7
    assert directional_fd(
        lambda a: ad.sum_(ad.concat([a, a * 2.0], axis=0) ** 2.0), [x]) < 1e-7
    assert directional_fd(
        lambda a: ad.sum_(ad.reshape(a, (3, 5)) ** 2.0), [x]) < 1e-7
    assert directional_fd(
        lambda a: ad.sum_(ad.transpose(a) ** 2.0), [x]) < 1e-7


def test_softmax_identities():
    x = RNG.normal(size=(4, 6))
    assert directional_fd(
        lambda a: ad.sum_(ad.softmax(a, axis=-1) ** 2.0), [x]) < 1e-7
    assert directional_fd(
        lambda a: ad.sum_(ad.log_softmax(a, axis=-1) * ad.log_softmax(a, axis=-1)),
        [x]) < 1e-7
    s = ad.softmax(Var(x), axis=-1)
    assert np.allclose(s.data.sum(axis=-1), 1.0)
    assert np.allclose(np.exp(ad.log_softmax(Var(x), axis=-1).data), s.data)


def test_masked_softmax_zeroes_masked():
    x = RNG.normal(size=(3, 3))
    mask = np.tril(np.ones((3, 3), dtype=bool))
    s = ad.masked_softmax(Var(x), mask)
    assert np.all(s.data[~mask] == 0.0)
    assert np.allclose(s.data.sum(axis=-1), 1.0)
    assert directional_fd(
        lambda a: ad.sum_(ad.masked_softmax(a, mask) ** 2.0), [x]) < 1e-7


def test_conv1d_oracle_and_grads():
    out = ad.conv1d(Var(np.array([[1.0], [2.0], [3.0]])),
                    Var(np.ones((3, 1, 1))))
    assert np.allclose(out.data.ravel(), [3.0, 6.0, 5.0])
    x = RNG.normal(size=(6, 3))
    k = RNG.normal(size=(3, 3, 2))
    b = RNG.normal(size=2)
    assert directional_fd(
        lambda a, w, c: ad.sum_(ad.conv1d(a, w, c) ** 2.0), [x, k, b]) < 1e-7


def test_interp_resize_oracle_and_grads():
    out = ad.interp_resize(Var(np.array([[0.0], [3.0]])), 4)
    assert np.allclose(out.data.ravel(), [0.0, 1.0, 2.0, 3.0])
    x = RNG.normal(size=(5, 3))
    assert directional_fd(
        lambda a: ad.sum_(ad.interp_resize(a, 9) ** 2.0), [x]) < 1e-7
    assert directional_fd(
        lambda a: ad.sum_(ad.interp_resize(a, 2) ** 2.0), [x]) < 1e-7
    same = ad.interp_resize(Var(x), 5)
    assert np.array_equal(same.data, x)


def test_layer_norm_and_attention_grads():
    x = RNG.normal(size=(4, 8))
    g = np.ones(8) + 0.1 * RNG.normal(size=8)
    b = 0.1 * RNG.normal(size=8)
    assert directional_fd(
        lambda a, gg, bb: ad.sum_(ad.layer_norm(a, gg, bb) ** 2.0),
        [x, g, b]) < 1e-6
    mask = np.tril(np.ones((4, 4), dtype=bool))
    ws = [RNG.normal(size=(8, 8)) / np.sqrt(8) for _ in range(4)]
    assert directional_fd(
        lambda t, wq, wk, wv, wo: ad.sum_(
            ad.attention(t, mask, wq, wk, wv, wo, 2) ** 2.0),
        [x] + ws) < 1e-6


def test_gradients_returns_zeros_for_unused():
    a = ad.parameter(np.ones(3))
    b = ad.parameter(np.ones(3))
    out = ad.sum_(a * a)
    grads = ad.gradients(out, [a, b])
    assert np.allclose(grads[a], 2.0)
    assert np.array_equal(grads[b], np.zeros(3))


def test_relu_minimum_away_from_kinks_fd():
    x = away_from(RNG.normal(size=(4, 4)), [0.0])
    y = away_from(RNG.normal(size=(4, 4)), [0.0])
    assert directional_fd(lambda a: ad.sum_(ad.relu(a) ** 2.0), [x]) < 1e-7
    gap = np.abs(x - y) < 0.05
    y[gap] += 0.1
    assert directional_fd(
        lambda a, c: ad.sum_(ad.minimum(a, c) ** 2.0), [x, y]) < 1e-7
