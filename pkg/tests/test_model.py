import numpy as np
import pytest
from hypothesis import given, strategies as st

from chinet import linalg
from chinet.errors import DimensionError, SizeGuardError
from chinet.model import (ChiNet, DenseCore, FactoredCore, augment, forward, hidden_states,
                          init_chinet, materialise_poly, net_frobenius, symmetrise, to_dense)

import oracles
from conftest import random_net, random_widths_net


def delta_net():
    # 1 layer: identity embedding on (1, x), delta core, identity unembedding
    return ChiNet(np.eye(2), [DenseCore(linalg.khatri_rao_t(np.eye(2), np.eye(2)))], np.eye(2))


def test_augment_examples():
    assert np.array_equal(augment([]), [1.0])
    assert np.array_equal(augment([0, 0]), [1, 0, 0])
    assert np.array_equal(augment([2, -3]), [1, 2, -3])


def test_forward_delta_by_hand():
    assert np.array_equal(forward(delta_net(), np.array([3.0])), [1.0, 9.0])


def test_forward_matches_loop_oracle(rng):
    net = random_net(rng, d_in=3, hidden=4, depth=2)
    for _ in range(5):
        x = rng.normal(size=3)
        ref = oracles.forward_loop(net, x)
        assert np.allclose(forward(net, x), ref, rtol=1e-12, atol=1e-14)


def test_forward_shape_mismatch(rng):
    with pytest.raises(DimensionError):
        forward(random_net(rng, d_in=3), np.zeros(4))


def test_dimension_chain_checked(rng):
    with pytest.raises(DimensionError):
        ChiNet(np.ones((3, 2)), [FactoredCore(np.ones((2, 4)), np.ones((2, 4)))], np.ones((1, 2)))


def test_symmetric_flag_enforced():
    f = np.zeros((1, 2, 2))
    f[0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        DenseCore(f, symmetric=True)


def test_zero_input_is_bias_path(rng):
    net = random_net(rng, d_in=3, hidden=3, depth=2, dense=True)
    c = oracles.poly(net)
    assert np.allclose(forward(net, np.zeros(3)), c[(slice(None),) + (0,) * 4], atol=1e-13)


def test_bias_isolation(rng):
    # bumping a coefficient with all input indices >= 1 (zero embedding bias column unaffected)
    net = random_net(rng, d_in=3, hidden=3, depth=1, dense=True)
    base = forward(net, np.zeros(3))
    e = net.embedding.copy()
    e[:, 1:] += rng.normal(size=e[:, 1:].shape)
    bumped = ChiNet(e, net.cores, net.unembedding)
    assert np.array_equal(forward(bumped, np.zeros(3)), base)
    # the same statement on the coefficient tensor itself
    from chinet.model import PolyTensor
    c = materialise_poly(net).coefficients.copy()
    c[:, 1:, 1:] += rng.normal(size=c[:, 1:, 1:].shape)
    assert np.allclose(PolyTensor(c).evaluate(np.zeros(3)), base, atol=1e-13)


def test_symmetrise_examples(rng):
    f = np.zeros((1, 2, 2))
    f[0, 0, 1] = 1.0
    net = ChiNet(np.eye(2), [DenseCore(f)], np.eye(1))
    s = symmetrise(net).cores[0].f
    assert s[0, 0, 1] == 0.5 and s[0, 1, 0] == 0.5
    once = symmetrise(net)
    assert symmetrise(once).cores[0] is once.cores[0]


@given(seed=st.integers(0, 2**31), depth=st.integers(1, 3))
def test_symmetrise_preserves_forward(seed, depth):
    r = np.random.default_rng(seed)
    net = random_net(r, d_in=4, hidden=5, depth=depth)
    X = r.normal(size=(100, 4))
    a, b = forward(net, X), forward(symmetrise(net), X)
    assert np.max(np.abs(a - b)) <= 1e-12 * np.max(np.abs(a))
    assert np.array_equal(np.argmax(a, 1), np.argmax(b, 1))


def test_to_dense_matches_khatri_rao(rng):
    A, B = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    assert np.array_equal(to_dense(FactoredCore(A, B)).f, linalg.khatri_rao_t(A, B))


def test_materialise_one_layer_triple_loop(rng):
    net = random_net(rng, d_in=2, hidden=3, depth=1, n_classes=2, dense=True)
    coeffs = materialise_poly(net).coefficients
    e, f, u = net.embedding, net.cores[0].f, net.unembedding
    ref = np.zeros((2, 3, 3))
    for c in range(2):
        for p in range(3):
            for q in range(3):
                ref[c, p, q] = sum(u[c, l] * f[l, j, k] * e[j, p] * e[k, q]
                                   for l in range(3) for j in range(3) for k in range(3))
    assert np.allclose(coeffs, ref, atol=1e-13)


def test_materialise_linear_net():
    # only bias-row interactions: f[l, 0, m] = f[l, m, 0] = W[l, m] / 2 for m >= 1, f[0, 0, 0] = 1
    W = np.array([[0.0, 0.0, 0.0], [0.0, 2.0, -1.0], [0.0, 0.5, 3.0]])
    f = np.zeros((3, 3, 3))
    f[0, 0, 0] = 1.0
    f[1:, 0, 1:] = f[1:, 1:, 0] = W[1:, 1:] / 2
    e = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    net = ChiNet(e, [DenseCore(f)], np.eye(3))
    P = materialise_poly(net)
    for x in ([0.3, -1.2], [2.0, 1.0]):
        assert np.allclose(P.evaluate(np.array(x)), np.concatenate([[1.0], W[1:, 1:] @ x]))


@given(seed=st.integers(0, 2**31), depth=st.integers(1, 2))
def test_cloning_unrolling_equivalence(seed, depth):
    r = np.random.default_rng(seed)
    net = random_net(r, d_in=2, hidden=3, depth=depth)
    P = materialise_poly(net)
    X = r.normal(size=(100, 2))
    f = forward(net, X)
    ev = np.array([P.evaluate(x) for x in X])
    assert np.max(np.abs(f - ev)) <= 1e-9 * np.max(np.abs(f))


def test_materialise_matches_independent_oracle(rng):
    net = random_net(rng, d_in=2, hidden=3, depth=2)
    assert np.allclose(materialise_poly(symmetrise(net)).coefficients, oracles.poly(net), atol=1e-13)


def test_materialise_random_two_layer_vs_forward(rng):
    net = random_net(rng, d_in=2, hidden=3, depth=2)
    P = materialise_poly(net)
    X = rng.normal(size=(200, 2))
    f = forward(net, X)
    rel = np.max(np.abs(np.array([P.evaluate(x) for x in X]) - f)) / np.max(np.abs(f))
    assert rel <= 1e-9
    assert P.degree == 4


def test_size_guard(rng):
    net = init_chinet(30, 2, 3, 10, rng)
    with pytest.raises(SizeGuardError):
        materialise_poly(net)


def test_degree_bound_two_layer(rng):
    net = random_net(rng, d_in=3, hidden=4, depth=2)
    x = rng.normal(size=3)
    ts = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    ys = np.array([forward(net, t * x) for t in ts])
    coeffs = np.polyfit(ts, ys, 4)
    t6 = 1.7
    pred = np.array([np.polyval(coeffs[:, c], t6) for c in range(ys.shape[1])])
    actual = forward(net, t6 * x)
    assert np.max(np.abs(pred - actual)) <= 1e-8 * np.max(np.abs(actual))


def test_net_frobenius(rng):
    net = random_net(rng, d_in=2, hidden=3, depth=2)
    assert net_frobenius(net) == pytest.approx(np.linalg.norm(materialise_poly(net).coefficients), rel=1e-12)
    zero = ChiNet(net.embedding, net.cores, np.zeros_like(net.unembedding))
    assert net_frobenius(zero) == 0.0


@given(st.integers(0, 2**32 - 1))
def test_net_frobenius_contraction_matches_materialised(seed):
    rng = np.random.default_rng(seed)
    net = random_widths_net(rng, d_max=3, h_max=4, depth_max=3)
    ref = np.linalg.norm(materialise_poly(net).coefficients)
    assert net_frobenius(net) == pytest.approx(ref, rel=1e-10, abs=1e-300)


def test_hidden_states_norm_scales(rng):
    net = random_net(rng, d_in=3, hidden=4, depth=2)
    X = rng.normal(size=(5, 3))
    plain = hidden_states(net, X)
    scaled = hidden_states(net, X, [2.0, 1.0])
    assert np.allclose(scaled[1], plain[1] / 2)
    assert np.allclose(scaled[2], plain[2] / 4)
