"""Small dense linear-algebra kernels: thin QR, truncated SVD, skeleton SVD.

All routines are deterministic: the QR normalizes the R diagonal to be
nonnegative, and the SVD fixes column signs so that the largest-magnitude
entry of each left singular vector is positive. Two calls on identical
input produce bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Rank-deficiency threshold, relative to the Frobenius norm of the input.
# Chosen at the double-precision unit-roundoff margin.
RANK_TOL = 1e-14

ORTHO_TOL = 1e-10


class RankDeficient(Exception):
    """A factorization hit a numerically rank-deficient column."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return a 2-D float64 array with finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SvdTriple:
    """Truncated SVD factors.

    ``U`` (m, k) and ``V`` (n, k) have orthonormal columns; ``sigma`` holds
    the k singular values, nonnegative and non-increasing.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        k = self.sigma.shape[0]
        if self.U.shape[1] != k or self.V.shape[1] != k:
            raise ValueError("U, sigma, V column counts disagree")
        tol = ORTHO_TOL * max(np.sqrt(k), 1.0)
        eye = np.eye(k)
        for mat, label in ((self.U, "U"), (self.V, "V")):
            err = np.linalg.norm(mat.T @ mat - eye)
            if err > tol:
                raise ValueError(f"{label} columns are not orthonormal (residual {err:.3e})")
        if np.any(self.sigma < 0.0):
            raise ValueError("sigma has negative entries")
        if np.any(np.diff(self.sigma) > 0.0):
            raise ValueError("sigma is not sorted non-increasing")

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    def dense(self) -> np.ndarray:
        """Reassemble U diag(sigma) V^T (test/oracle support)."""
        return (self.U * self.sigma) @ self.V.T


def _signed_qr(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with the R diagonal flipped nonnegative."""
    Q, R = np.linalg.qr(M, mode="reduced")
    signs = np.where(np.diagonal(R) < 0.0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def _fix_svd_signs(U: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip paired columns so each U column's largest-|.| entry is positive.

    Ties resolve to the lowest row index (argmax takes the first maximum).
    """
    cols = np.arange(U.shape[1])
    anchor = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[anchor, cols] < 0.0, -1.0, 1.0)
    return U * signs, V * signs


def qr_thin(M, *, check_rank: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of a tall matrix: M = Q R with Q (m, k) orthonormal, R upper triangular.

    The R diagonal is normalized nonnegative, which makes the factorization
    deterministic and reproduces M exactly up to roundoff.

    Raises
    ------
    RankDeficient
        If ``check_rank`` and some |R_jj| falls to or below
        ``RANK_TOL * ||M||_F``. The caller decides whether to jitter or abort.
    """
    M = as_matrix(M, "M")
    m, k = M.shape
    if m < k:
        raise ValueError(f"qr_thin needs rows >= cols, got {M.shape}")
    Q, R = _signed_qr(M)
    if check_rank:
        thresh = RANK_TOL * np.linalg.norm(M)
        if np.any(np.abs(np.diagonal(R)) <= thresh):
            raise RankDeficient(
                f"column rank below {k}: min |R_jj| = {np.min(np.abs(np.diagonal(R))):.3e}"
            )
    return Q, R


def svd_trunc(M, k: int) -> SvdTriple:
    """Best Frobenius rank-k approximation factors of M, with fixed signs."""
    M = as_matrix(M, "M")
    if not 1 <= k <= min(M.shape):
        raise ValueError(f"k={k} out of range for shape {M.shape}")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    U, V = _fix_svd_signs(np.ascontiguousarray(U[:, :k]), np.ascontiguousarray(Vt[:k].T))
    return SvdTriple(U, s[:k].copy(), V)


def skeleton_svd(P, Q, r: int, *, strict: bool = False) -> SvdTriple:
    """Rank-r truncated SVD of P @ Q.T without forming the dense product.

    QR-factors both skeleton sides and runs a dense SVD on the small core,
    so the cost is O((m+n)k^2 + k^3) for width-k factors. Zero factors are
    legal and yield zero singular values with an arbitrary (but
    deterministic) orthonormal basis; with ``strict`` they raise instead.
    """
    P = as_matrix(P, "P")
    Q = as_matrix(Q, "Q")
    if P.shape[1] != Q.shape[1]:
        raise ValueError(f"skeleton widths disagree: {P.shape} vs {Q.shape}")
    k = P.shape[1]
    if not 1 <= r <= min(P.shape[0], Q.shape[0], k):
        raise ValueError(f"r={r} out of range for skeleton {P.shape} x {Q.shape}")
    if strict and not (P.any() or Q.any()):
        raise RankDeficient("both skeleton factors are zero")
    Qp, Rp = _signed_qr(P)
    Qq, Rq = _signed_qr(Q)
    Us, s, Vts = np.linalg.svd(Rp @ Rq.T, full_matrices=False)
    U = Qp @ Us[:, :r]
    V = Qq @ Vts[:r].T
    U, V = _fix_svd_signs(U, V)
    return SvdTriple(U, s[:r].copy(), V)
