import numpy as np
import pytest
from hypothesis import given, strategies as st

from chinet import linalg
from chinet.errors import DimensionError, NumericalError

import oracles


# -- rq ------------------------------------------------------------------------


def test_rq_identity():
    R, Q = linalg.rq_reduced(np.eye(3))
    assert np.allclose(R, np.eye(3), atol=1e-15)
    assert np.allclose(Q, np.eye(3), atol=1e-15)


def test_rq_random_wide(rng):
    M = rng.normal(size=(2, 4))
    R, Q = linalg.rq_reduced(M)
    assert R.shape == (2, 2) and Q.shape == (2, 4)
    assert np.max(np.abs(R @ Q - M)) <= 1e-10
    assert np.max(np.abs(Q @ Q.T - np.eye(2))) <= 1e-10
    assert R[1, 0] == 0.0  # upper triangular
    assert np.all(np.diag(R) >= 0)


def test_rq_zero_matrix():
    R, Q = linalg.rq_reduced(np.zeros((2, 4)))
    assert np.all(R == 0)
    assert np.all(R @ Q == 0)


def test_rq_tall_rejected():
    with pytest.raises(DimensionError):
        linalg.rq_reduced(np.ones((3, 2)))


def test_rq_non_finite_rejected():
    M = np.ones((2, 3))
    M[0, 1] = np.nan
    with pytest.raises(NumericalError):
        linalg.rq_reduced(M)


def test_rq_thin_tall(rng):
    M = rng.normal(size=(5, 3))
    R, Q = linalg.rq_thin(M)
    assert R.shape == (5, 3) and Q.shape == (3, 3)
    assert np.allclose(R @ Q, M, atol=1e-12)
    assert np.allclose(Q @ Q.T, np.eye(3), atol=1e-12)
    # trapezoidal: R[n - k + i, j] == 0 for j < i
    assert np.allclose(np.tril(R[2:], -1), 0)


@given(n=st.integers(1, 64), extra=st.integers(0, 20), seed=st.integers(0, 2**31))
def test_rq_roundtrip_property(n, extra, seed):
    m = min(64, n + extra)
    n = min(n, m)
    M = np.random.default_rng(seed).normal(size=(n, m))
    R, Q = linalg.rq_reduced(M)
    assert np.linalg.norm(M - R @ Q) <= 1e-10 * max(1.0, np.linalg.norm(M))
    assert np.max(np.abs(Q @ Q.T - np.eye(n))) <= 1e-10
    assert np.allclose(np.tril(R, -1), 0)


# -- evd -----------------------------------------------------------------------


def test_evd_diagonal():
    s = linalg.sym_evd(np.diag([3.0, 1.0]))
    assert np.allclose(s.values, [3, 1])
    assert np.allclose(np.abs(s.vectors), np.eye(2))


def test_evd_two_by_two_char_poly():
    G = np.array([[2.0, 1.0], [1.0, 2.0]])
    # roots of t^2 - tr t + det
    tr, det = np.trace(G), np.linalg.det(G)
    disc = np.sqrt(tr**2 - 4 * det)
    expected = [(tr + disc) / 2, (tr - disc) / 2]
    assert np.allclose(linalg.sym_evd(G).values, expected, atol=1e-14)
    assert np.allclose(expected, [3, 1])


def test_evd_psd(rng):
    A = rng.normal(size=(5, 5))
    G = A.T @ A
    s = linalg.sym_evd(G)
    V, lam = s.vectors, s.values
    assert np.linalg.norm(G - V @ np.diag(lam) @ V.T) <= 1e-9 * np.linalg.norm(G)
    assert np.all(lam >= -1e-10)


def test_evd_non_square():
    with pytest.raises(DimensionError):
        linalg.sym_evd(np.ones((2, 3)))


@given(n=st.integers(1, 30), seed=st.integers(0, 2**31))
def test_evd_reconstruction_property(n, seed):
    A = np.random.default_rng(seed).normal(size=(n, n))
    G = A + A.T
    s = linalg.sym_evd(G)
    V, lam = s.vectors, s.values
    assert np.linalg.norm(G - V @ np.diag(lam) @ V.T) <= 1e-9 * max(np.linalg.norm(G), 1e-300)
    assert np.all(np.diff(lam) <= 0)
    assert np.max(np.abs(V.T @ V - np.eye(n))) <= 1e-10


# -- khatri-rao, frobenius ---------------------------------------------------------


def test_khatri_rao_delta():
    f = linalg.khatri_rao_t(np.eye(2), np.eye(2))
    for l in range(2):
        for j in range(2):
            for k in range(2):
                assert f[l, j, k] == (1.0 if j == k == l else 0.0)


def test_khatri_rao_by_hand():
    f = linalg.khatri_rao_t([[1.0, 2.0]], [[3.0, 4.0]])
    assert np.array_equal(f[0], [[3, 4], [6, 8]])


def test_khatri_rao_shape_mismatch():
    with pytest.raises(DimensionError):
        linalg.khatri_rao_t(np.ones((2, 3)), np.ones((3, 2)))


@given(h_out=st.integers(1, 8), h_in=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_khatri_rao_forward_equivalence(h_out, h_in, seed):
    r = np.random.default_rng(seed)
    A, B, x = r.normal(size=(h_out, h_in)), r.normal(size=(h_out, h_in)), r.normal(size=h_in)
    f = linalg.khatri_rao_t(A, B)
    loop = np.array([sum(f[l, j, k] * x[j] * x[k] for j in range(h_in) for k in range(h_in)) for l in range(h_out)])
    assert np.allclose(loop, (A @ x) * (B @ x), rtol=0, atol=1e-12 * max(1, np.max(np.abs(loop))))


def test_frobenius_examples():
    assert linalg.frobenius(np.eye(3)) == pytest.approx(np.sqrt(3))
    assert linalg.frobenius(np.zeros((2, 2, 2))) == 0.0
    assert linalg.frobenius([[3.0, 4.0]]) == 5.0


# -- gram step -------------------------------------------------------------------


def test_gram_step_delta_identity():
    f = linalg.khatri_rao_t(np.eye(3), np.eye(3))
    assert np.allclose(linalg.gram_step(f, np.eye(3)), np.eye(3))


def test_gram_step_zero(rng):
    f = linalg.symmetrise_core(rng.normal(size=(3, 2, 2)))
    assert np.all(linalg.gram_step(f, np.zeros((3, 3))) == 0)


def test_gram_step_explicit_sum(rng):
    f = linalg.symmetrise_core(rng.normal(size=(3, 2, 2)))
    A = rng.normal(size=(3, 3))
    G_next = A @ A.T
    G = linalg.gram_step(f, G_next)
    ref = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            ref[a, b] = sum(f[l, c, a] * G_next[l, m] * f[m, c, b]
                            for l in range(3) for m in range(3) for c in range(2))
    assert np.allclose(G, ref, atol=1e-13)


def test_gram_step_two_layer_unfolded(rng):
    # isometric bottom map T (3 -> 2 bond), symmetric isometric core onto bond 3
    T = np.linalg.qr(rng.normal(size=(3, 2)))[0].T  # 2 x 3, orthonormal rows
    P = np.linalg.qr(rng.normal(size=(3, 3)))[0][:3]  # packed rows of a symmetric 2x2 slice space
    f = linalg.sym_unpack(P, 2)
    A = rng.normal(size=(3, 3))
    G_next = A @ A.T
    # unfolded two-leg map W[l, p, q] = sum f[l, a, b] T[a, p] T[b, q]
    W = np.einsum("lab,ap,bq->lpq", f, T, T).reshape(3, -1)
    X = W.T @ np.linalg.cholesky(G_next)  # (9, 3): network with root Gram G_next
    Xm = X.reshape(3, 3, 3).reshape(3, 9)  # first leg against (second leg, root)
    brute = T @ Xm @ Xm.T @ T.T
    assert np.allclose(linalg.gram_step(f, G_next), brute, atol=1e-12)


@given(h_out=st.integers(1, 6), h_in=st.integers(1, 6), seed=st.integers(0, 2**31))
def test_gram_step_symmetric(h_out, h_in, seed):
    r = np.random.default_rng(seed)
    f = linalg.symmetrise_core(r.normal(size=(h_out, h_in, h_in)))
    A = r.normal(size=(h_out, h_out))
    G = linalg.gram_step(f, A + A.T)
    assert np.max(np.abs(G - G.T)) <= 1e-10


@given(h=st.integers(1, 6), out=st.integers(1, 5), seed=st.integers(0, 2**31))
def test_sym_pack_is_isometry(h, out, seed):
    f = linalg.symmetrise_core(np.random.default_rng(seed).normal(size=(out, h, h)))
    P = linalg.sym_pack(f)
    assert P.shape == (out, h * (h + 1) // 2)
    assert np.allclose(P @ P.T, f.reshape(out, -1) @ f.reshape(out, -1).T, atol=1e-12)
    assert np.array_equal(linalg.sym_unpack(P, h), f) or np.allclose(linalg.sym_unpack(P, h), f, atol=1e-15)
