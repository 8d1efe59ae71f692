import numpy as np
import pytest

from fixedrank.linalg import (
    RankDeficient,
    SvdTriple,
    as_matrix,
    qr_thin,
    skeleton_svd,
    svd_trunc,
)


def sigma_oracle(M):
    """Singular values from the eigendecomposition of M^T M (independent of
    the SVD code path under test)."""
    evals = np.linalg.eigvalsh(M.T @ M)
    return np.sqrt(np.clip(evals, 0.0, None))[::-1]


# ---------------------------------------------------------------- qr_thin


def test_qr_identity_slice():
    M = np.eye(3)[:, :2]
    Q, R = qr_thin(M)
    np.testing.assert_allclose(Q, M, atol=1e-15)
    np.testing.assert_allclose(R, np.eye(2), atol=1e-15)


def test_qr_single_column_normalization():
    Q, R = qr_thin(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(Q, [[0.6], [0.8]], atol=1e-15)
    np.testing.assert_allclose(R, [[5.0]], atol=1e-15)


def test_qr_reconstruction_and_orthogonality():
    rng = np.random.default_rng(0)
    for _ in range(100):
        m = int(rng.integers(3, 40))
        k = int(rng.integers(1, min(m, 8) + 1))
        M = rng.standard_normal((m, k))
        Q, R = qr_thin(M)
        assert np.linalg.norm(Q @ R - M) <= 1e-12 * np.linalg.norm(M)
        assert np.linalg.norm(Q.T @ Q - np.eye(k)) <= 1e-12
        assert np.all(np.diagonal(R) >= 0.0)
        assert np.allclose(R, np.triu(R))


def test_qr_rank_deficient_raises():
    M = np.ones((5, 2))  # second column repeats the first
    with pytest.raises(RankDeficient):
        qr_thin(M)
    with pytest.raises(RankDeficient):
        qr_thin(np.zeros((4, 2)))
    Q, _ = qr_thin(M, check_rank=False)
    assert Q.shape == (5, 2)


def test_qr_rejects_wide_input():
    with pytest.raises(ValueError):
        qr_thin(np.ones((2, 3)))


# -------------------------------------------------------------- svd_trunc


def test_svd_diagonal_example():
    tri = svd_trunc(np.diag([4.0, 3.0, 2.0, 1.0]), 2)
    np.testing.assert_allclose(tri.sigma, [4.0, 3.0], atol=1e-15)
    np.testing.assert_allclose(tri.U, np.eye(4)[:, :2], atol=1e-14)
    np.testing.assert_allclose(tri.V, np.eye(4)[:, :2], atol=1e-14)


def test_svd_rank_one():
    rng = np.random.default_rng(1)
    u = rng.standard_normal(5)
    v = rng.standard_normal(4)
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    tri = svd_trunc(np.outer(u, v), 1)
    np.testing.assert_allclose(tri.sigma, [1.0], atol=1e-12)


def test_svd_matches_gram_eigen_oracle():
    rng = np.random.default_rng(2)
    M = rng.standard_normal((6, 4))
    tri = svd_trunc(M, 3)
    want = sigma_oracle(M)[:3]
    assert np.max(np.abs(tri.sigma - want)) <= 1e-10 * want[0]


def test_svd_eckart_young_residual():
    rng = np.random.default_rng(3)
    for _ in range(20):
        M = rng.standard_normal((9, 7))
        k = int(rng.integers(1, 6))
        tri = svd_trunc(M, k)
        tail = float(np.sum(sigma_oracle(M)[k:] ** 2))
        err = np.linalg.norm(M - tri.dense()) ** 2
        assert abs(err - tail) <= 1e-9 * tail


def test_svd_sign_convention_and_determinism():
    rng = np.random.default_rng(4)
    M = rng.standard_normal((8, 6))
    a = svd_trunc(M, 4)
    b = svd_trunc(M.copy(), 4)
    assert np.array_equal(a.U, b.U)
    assert np.array_equal(a.sigma, b.sigma)
    assert np.array_equal(a.V, b.V)
    # largest-magnitude entry of every U column is positive
    peaks = a.U[np.argmax(np.abs(a.U), axis=0), np.arange(4)]
    assert np.all(peaks > 0)


def test_svd_k_out_of_range():
    with pytest.raises(ValueError):
        svd_trunc(np.eye(3), 4)
    with pytest.raises(ValueError):
        svd_trunc(np.eye(3), 0)


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        as_matrix(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        as_matrix(np.ones(3))


def test_svdtriple_validates_orthonormality():
    with pytest.raises(ValueError):
        SvdTriple(np.ones((3, 2)), np.array([1.0, 0.5]), np.eye(3)[:, :2])
    with pytest.raises(ValueError):
        SvdTriple(np.eye(3)[:, :2], np.array([0.5, 1.0]), np.eye(3)[:, :2])


# ------------------------------------------------------------ skeleton_svd


def test_skeleton_diagonal_example():
    P = np.eye(3)[:, :2]
    Q = np.zeros((4, 2))
    Q[0, 0] = 4.0
    Q[1, 1] = 3.0
    tri = skeleton_svd(P, Q, 2)
    np.testing.assert_allclose(tri.sigma, [4.0, 3.0], atol=1e-14)


def test_skeleton_zero_factor():
    P = np.random.default_rng(5).standard_normal((5, 3))
    tri = skeleton_svd(P, np.zeros((4, 3)), 2)
    np.testing.assert_allclose(tri.sigma, [0.0, 0.0], atol=1e-15)
    assert np.linalg.norm(tri.U.T @ tri.U - np.eye(2)) <= 1e-12
    assert np.linalg.norm(tri.V.T @ tri.V - np.eye(2)) <= 1e-12


def test_skeleton_strict_zero_raises():
    with pytest.raises(RankDeficient):
        skeleton_svd(np.zeros((4, 2)), np.zeros((3, 2)), 1, strict=True)
    tri = skeleton_svd(np.zeros((4, 2)), np.zeros((3, 2)), 1)
    np.testing.assert_allclose(tri.sigma, [0.0])


def test_skeleton_matches_dense_product():
    rng = np.random.default_rng(6)
    P = rng.standard_normal((8, 4))
    Q = rng.standard_normal((6, 4))
    skel = skeleton_svd(P, Q, 3)
    dense = svd_trunc(P @ Q.T, 3)
    assert np.max(np.abs(skel.sigma - dense.sigma)) <= 1e-10 * dense.sigma[0]
    assert np.linalg.norm(skel.dense() - dense.dense()) <= 1e-10 * np.linalg.norm(dense.dense())


def test_skeleton_equals_dense_svd_property():
    rng = np.random.default_rng(7)
    for _ in range(25):
        m = int(rng.integers(4, 20))
        n = int(rng.integers(4, 20))
        k = int(rng.integers(1, 6))
        r = int(rng.integers(1, min(k, m, n) + 1))
        P = rng.standard_normal((m, k))
        Q = rng.standard_normal((n, k))
        skel = skeleton_svd(P, Q, r)
        dense = svd_trunc(P @ Q.T, r)
        assert np.max(np.abs(skel.sigma - dense.sigma)) <= 1e-10 * max(dense.sigma[0], 1.0)
        assert np.linalg.norm(skel.dense() - dense.dense()) <= 1e-10 * max(
            np.linalg.norm(dense.dense()), 1.0
        )


def test_skeleton_width_mismatch():
    with pytest.raises(ValueError):
        skeleton_svd(np.ones((4, 2)), np.ones((3, 3)), 1)
