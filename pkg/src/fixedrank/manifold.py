"""The fixed-rank matrix manifold: points, tangent vectors, projection,
retraction, vector transport, canonicalization.

A rank-r point is stored as ``A_L @ B.T`` with orthonormal ``A_L``; a
tangent vector at that point is ``(Adot, Bdot)`` with ``A_L.T @ Adot = 0``
relative to a second orthonormal frame ``B_R`` spanning range(B). All
operations work on the factors; nothing here builds an m-by-n array except
the explicit ``to_dense`` conversions used by tests and oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alloc import note_dense_alloc
from .linalg import ORTHO_TOL, as_matrix, qr_thin, skeleton_svd

# A point is considered off-manifold when sigma_r drops to this fraction of sigma_1.
COLLAPSE_TOL = 1e-12


class RankCollapse(Exception):
    """An iterate's trailing singular value vanished relative to its largest."""


class BaseMismatch(Exception):
    """Tangent vectors bound to different base frames were combined."""


def _check_orthonormal(M: np.ndarray, label: str) -> None:
    r = M.shape[1]
    err = np.linalg.norm(M.T @ M - np.eye(r))
    if err > ORTHO_TOL * max(np.sqrt(r), 1.0):
        raise ValueError(f"{label} columns are not orthonormal (residual {err:.3e})")


def _horizontal(A_L: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Project columns of X against range(A_L), applied twice for fp hygiene."""
    X = X - A_L @ (A_L.T @ X)
    return X - A_L @ (A_L.T @ X)


@dataclass(frozen=True)
class FixedRankPoint:
    """A rank-r matrix ``A_L @ B.T`` with orthonormal ``A_L`` and full-rank ``B``."""

    A_L: np.ndarray  # (m, r)
    B: np.ndarray  # (n, r)

    def __post_init__(self):
        object.__setattr__(self, "A_L", as_matrix(self.A_L, "A_L"))
        object.__setattr__(self, "B", as_matrix(self.B, "B"))
        m, r = self.A_L.shape
        n, rb = self.B.shape
        if r != rb:
            raise ValueError(f"factor ranks disagree: A_L {self.A_L.shape}, B {self.B.shape}")
        if r < 1 or m < r or n < r:
            raise ValueError(f"invalid point shape ({m}, {n}) at rank {r}")
        _check_orthonormal(self.A_L, "A_L")
        s = np.linalg.svd(self.B, compute_uv=False)
        if s[-1] <= COLLAPSE_TOL * s[0]:
            raise RankCollapse(
                f"B is numerically rank-deficient: sigma_r/sigma_1 = "
                f"{s[-1] / s[0] if s[0] else 0.0:.3e}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.A_L.shape[0], self.B.shape[0]

    @property
    def rank(self) -> int:
        return self.A_L.shape[1]

    def matmat(self, M: np.ndarray) -> np.ndarray:
        """(A_L B^T) @ M without densifying."""
        return self.A_L @ (self.B.T @ M)

    def rmatmat(self, N: np.ndarray) -> np.ndarray:
        """(A_L B^T)^T @ N without densifying."""
        return self.B @ (self.A_L.T @ N)

    def dense(self) -> np.ndarray:
        note_dense_alloc(self.shape, "point.dense")
        return self.A_L @ self.B.T


@dataclass(frozen=True)
class TangentVector:
    """A tangent direction ``Adot @ B_R.T + A_L @ Bdot.T`` at a base point.

    Carries its base frames (``A_L``, ``B_R``) by value; operations on
    vectors from different bases raise :class:`BaseMismatch` instead of
    silently reprojecting.
    """

    Adot: np.ndarray  # (m, r), horizontal: A_L^T Adot = 0
    Bdot: np.ndarray  # (n, r)
    A_L: np.ndarray
    B_R: np.ndarray

    def __post_init__(self):
        for name in ("Adot", "Bdot", "A_L", "B_R"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        if self.Adot.shape != self.A_L.shape or self.Bdot.shape != self.B_R.shape:
            raise ValueError("tangent components do not match their frames")
        a_norm = np.linalg.norm(self.Adot)
        h_err = np.linalg.norm(self.A_L.T @ self.Adot)
        if h_err > ORTHO_TOL * a_norm:
            raise ValueError(
                f"Adot is not horizontal: |A_L^T Adot| = {h_err:.3e} > 1e-10 * {a_norm:.3e}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.Adot.shape[0], self.Bdot.shape[0]

    def scaled(self, c: float) -> "TangentVector":
        return TangentVector(c * self.Adot, c * self.Bdot, self.A_L, self.B_R)

    def norm(self) -> float:
        return float(np.sqrt(max(tangent_inner(self, self), 0.0)))

    def dense(self) -> np.ndarray:
        note_dense_alloc(self.shape, "tangent.dense")
        return self.Adot @ self.B_R.T + self.A_L @ self.Bdot.T


@dataclass(frozen=True)
class SkeletonPair:
    """A rank-bounded matrix stored as ``P @ Q.T`` (width 2r for momentum)."""

    P: np.ndarray  # (m, k)
    Q: np.ndarray  # (n, k)

    def __post_init__(self):
        object.__setattr__(self, "P", as_matrix(self.P, "P"))
        object.__setattr__(self, "Q", as_matrix(self.Q, "Q"))
        if self.P.shape[1] != self.Q.shape[1]:
            raise ValueError(f"skeleton widths disagree: {self.P.shape} vs {self.Q.shape}")

    @classmethod
    def from_tangent(cls, xi: TangentVector) -> "SkeletonPair":
        return cls(np.hstack([xi.Adot, xi.A_L]), np.hstack([xi.B_R, xi.Bdot]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.P.shape[0], self.Q.shape[0]

    @property
    def width(self) -> int:
        return self.P.shape[1]

    def matmat(self, M: np.ndarray) -> np.ndarray:
        return self.P @ (self.Q.T @ M)

    def rmatmat(self, N: np.ndarray) -> np.ndarray:
        return self.Q @ (self.P.T @ N)

    def dense(self) -> np.ndarray:
        note_dense_alloc(self.shape, "skeleton.dense")
        return self.P @ self.Q.T


def to_dense(obj: FixedRankPoint | TangentVector | SkeletonPair) -> np.ndarray:
    """Embed a factored object into the ambient space (test/oracle support)."""
    if isinstance(obj, (FixedRankPoint, TangentVector, SkeletonPair)):
        return obj.dense()
    raise TypeError(f"cannot densify {type(obj).__name__}")


def canonicalize(A, B) -> tuple[FixedRankPoint, np.ndarray]:
    """Turn an arbitrary full-rank factorization A @ B.T into a manifold point.

    Returns the point (orthonormal left factor, R absorbed into B) together
    with ``B_R``, an orthonormal basis of range(B). Any reparameterization
    ``(A S, B S^-T)`` with invertible S canonicalizes to the same dense
    matrix, which is exactly the gauge freedom this removes.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    A_L, R = qr_thin(A)
    B_new = B @ R.T
    B_R, _ = qr_thin(B_new)
    return FixedRankPoint(A_L, B_new), B_R


def project_to_tangent(Z, point: FixedRankPoint, B_R: np.ndarray) -> TangentVector:
    """Orthogonal projection of an ambient matrix Z onto the tangent space."""
    Z = as_matrix(Z, "Z")
    if Z.shape != point.shape:
        raise ValueError(f"Z shape {Z.shape} does not match point shape {point.shape}")
    Adot = _horizontal(point.A_L, Z @ B_R)
    Bdot = Z.T @ point.A_L
    return TangentVector(Adot, Bdot, point.A_L, B_R)


def _same_frame(x: np.ndarray, y: np.ndarray) -> bool:
    return x is y or (x.shape == y.shape and np.array_equal(x, y))


def tangent_inner(x: TangentVector, y: TangentVector) -> float:
    """Frobenius inner product of two embedded tangent vectors.

    Computed from r-by-r Gram traces in O((m+n) r^2), never forming the
    ambient matrices. The cross terms vanish for exactly horizontal inputs
    but are kept so the identity holds to roundoff.
    """
    if not (_same_frame(x.A_L, y.A_L) and _same_frame(x.B_R, y.B_R)):
        raise BaseMismatch("tangent vectors are bound to different base frames")
    A_L, B_R = x.A_L, x.B_R
    val = float(np.trace((x.Adot.T @ y.Adot) @ (B_R.T @ B_R)))
    val += float(np.trace((A_L.T @ A_L) @ (y.Bdot.T @ x.Bdot)))
    val += float(np.trace((x.Adot.T @ A_L) @ (y.Bdot.T @ B_R)))
    val += float(np.trace((y.Adot.T @ A_L) @ (x.Bdot.T @ B_R)))
    return val


def retract(
    point: FixedRankPoint,
    B_R: np.ndarray,
    xi: TangentVector,
    eta: float,
    *,
    jitter: bool = False,
    rng: np.random.Generator | None = None,
) -> FixedRankPoint:
    """Take a descent step of size eta along xi and return to the manifold.

    Computes the rank-r truncated SVD of ``X - eta * xi`` from the width-2r
    skeleton ``[-eta Adot, A_L] [B_R, B - eta Bdot]^T``, so the cost is
    O((m+n) r^2 + r^3). The descent sign is built in: positive eta moves
    against xi.

    Raises
    ------
    RankCollapse
        If the step's trailing singular value falls to or below
        ``COLLAPSE_TOL * sigma_1``; with ``jitter`` the new right factor is
        perturbed by Gaussian noise of size 1e-10 sigma_1 and
        re-canonicalized instead.
    """
    if not (_same_frame(xi.A_L, point.A_L) and _same_frame(xi.B_R, B_R)):
        raise BaseMismatch("tangent vector is not bound to this point's frames")
    P = np.hstack([-eta * xi.Adot, point.A_L])
    Q = np.hstack([B_R, point.B - eta * xi.Bdot])
    triple = skeleton_svd(P, Q, point.rank)
    s = triple.sigma
    if s[-1] <= COLLAPSE_TOL * s[0]:
        if not jitter or s[0] == 0.0:
            raise RankCollapse(
                f"retraction left the rank-{point.rank} neighborhood: "
                f"sigma_r/sigma_1 = {s[-1] / s[0] if s[0] else 0.0:.3e}"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        B_jit = triple.V * s + 1e-10 * s[0] * rng.standard_normal(triple.V.shape)
        new_point, _ = canonicalize(triple.U, B_jit)
        return new_point
    return FixedRankPoint(triple.U, triple.V * s)


def vector_transport(prev: SkeletonPair, A_L: np.ndarray, B_R: np.ndarray) -> TangentVector:
    """Project a skeleton-form vector onto the tangent space at a new point.

    Equivalent to projecting the dense ``P @ Q.T`` but computed entirely on
    the factors, in O((m+n) r^2).
    """
    A_L = as_matrix(A_L, "A_L")
    B_R = as_matrix(B_R, "B_R")
    if prev.P.shape[0] != A_L.shape[0] or prev.Q.shape[0] != B_R.shape[0]:
        raise ValueError("skeleton shape does not match the new point's frames")
    PtA = prev.P.T @ A_L  # (k, r)
    QtB = prev.Q.T @ B_R  # (k, r)
    Adot = _horizontal(A_L, prev.P @ QtB)
    Bdot = prev.Q @ PtA
    return TangentVector(Adot, Bdot, A_L, B_R)
