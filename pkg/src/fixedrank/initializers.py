"""Adapter initialization: randomized SVD of the loss gradient driven by
oracle products, the locally optimal base-weight splitting built from it,
and the baseline initializations used for comparison runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alloc import note_dense_alloc
from .linalg import RANK_TOL, SvdTriple, _fix_svd_signs, _signed_qr, as_matrix
from .manifold import FixedRankPoint
from .oracles import EffectiveWeights, GradientOracle

ZERO_TAIL_TOL = 1e-12


class DegenerateSpectrum(Exception):
    """The gradient's singular spectrum has no usable gap at the split index."""


@dataclass(frozen=True)
class RsvdConfig:
    """Randomized-SVD knobs: oversampling p, power steps q, sketch seed.

    The sketch width is ``rank + p`` (the split doubles the rank first).
    ``gap_tol`` is the relative spectral-gap threshold below which the
    optimal splitting is reported as degenerate.
    """

    p: int = 4
    q: int = 3
    seed: int = 0
    gap_tol: float = 1e-10

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("oversampling and power-step counts must be >= 0")
        if self.gap_tol < 0:
            raise ValueError("gap_tol must be >= 0")

    def sketch_width(self, rank: int) -> int:
        return rank + self.p


@dataclass(frozen=True)
class LoiResult:
    """A splitting W = W_prime + alpha * (adapter) that leaves the loss unchanged."""

    W_prime: np.ndarray
    point: FixedRankPoint
    alpha: float


def _range_basis(Y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal basis whose span contains range(Y), padded with fresh
    random directions when Y is numerically rank-deficient."""
    m, k = Y.shape
    Q, R = _signed_qr(Y)
    scale = np.linalg.norm(Y)
    if scale > 0.0 and np.all(np.abs(np.diagonal(R)) > RANK_TOL * scale):
        return Q
    if scale > 0.0:
        U, s, _ = np.linalg.svd(Y, full_matrices=False)
        j = int(np.sum(s > RANK_TOL * scale))
        base = U[:, :j]
    else:
        base = np.zeros((m, 0))
        j = 0
    extra = rng.standard_normal((m, k - j))
    for _ in range(2):  # twice-is-enough reorthogonalization
        extra -= base @ (base.T @ extra)
    Qe, _ = _signed_qr(extra)
    return np.hstack([base, Qe])


def _rsvd_core(
    oracle: GradientOracle,
    weights: EffectiveWeights,
    k: int,
    q: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Width-k randomized SVD of the gradient via 2(q+1) oracle products.

    Sketch with a Gaussian test matrix, then run q QR-stabilized power
    rounds; the final small SVD factors the k-by-n projected gradient.
    Returns (U, sigma, V) at full sketch width with fixed signs.
    """
    m, n = oracle.shape
    Omega = rng.standard_normal((n, k))
    Y = oracle.gvp_right(weights, Omega)
    Q = _range_basis(Y, rng)
    for _ in range(q):
        Z = oracle.gvp_left(weights, Q)
        Qz = _range_basis(Z, rng)
        Y = oracle.gvp_right(weights, Qz)
        Q = _range_basis(Y, rng)
    small = oracle.gvp_left(weights, Q).T  # Q^T grad, (k, n)
    Us, s, Vt = np.linalg.svd(small, full_matrices=False)
    U, V = _fix_svd_signs(Q @ Us, Vt.T)
    return U, s, V


def backprop_rsvd(
    oracle: GradientOracle,
    weights: EffectiveWeights,
    r: int,
    cfg: RsvdConfig,
) -> SvdTriple:
    """Randomized r-truncated SVD of the loss gradient at the given weights.

    Never forms the gradient: all access goes through the oracle's two
    product calls, exactly 2(q+1) of them. A gradient of rank below the
    sketch width is handled by padding the basis with fresh random
    directions, so a zero gradient yields zero singular values with an
    arbitrary (seed-deterministic) orthonormal basis.
    """
    m, n = oracle.shape
    k = cfg.sketch_width(r)
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for shape {(m, n)}")
    if k > min(m, n):
        raise ValueError(f"sketch width {k} exceeds min(m, n) = {min(m, n)}")
    rng = np.random.default_rng(cfg.seed)
    U, s, V = _rsvd_core(oracle, weights, k, cfg.q, rng)
    return SvdTriple(U[:, :r].copy(), s[:r].copy(), V[:, :r].copy())


def _check_gap(s: np.ndarray, split: int, gap_tol: float) -> None:
    """Reject splits at an ambiguous positive spectral gap.

    A numerically zero tail (rank <= split) is allowed: the construction
    then captures the whole spectrum and stays exactly optimal even though
    the optimizer of the alignment objective is not unique.
    """
    if s.size <= split or s[0] == 0.0:
        return
    if s[split] <= ZERO_TAIL_TOL * s[0]:
        return
    if s[split - 1] - s[split] <= gap_tol * s[0]:
        raise DegenerateSpectrum(
            f"sigma_{split} - sigma_{split + 1} = {s[split - 1] - s[split]:.3e} "
            f"<= {gap_tol:.1e} * sigma_1"
        )


def loi_split(
    W,
    oracle: GradientOracle,
    r: int,
    alpha: float = 1.0,
    cfg: RsvdConfig | None = None,
    *,
    method: str = "rsvd",
) -> LoiResult:
    """Split W into shifted base weights plus a rank-r adapter that
    maximizes the tangent-space alignment with the loss gradient at W.

    Takes the top-2r singular triplets of the gradient (randomized by
    default, dense SVD with ``method='dense'`` for verification), keeps the
    first r left vectors and the second r right vectors scaled by alpha,
    and shifts the base so the starting loss is unchanged. The squared
    projected-gradient norm at the returned point is the sum of the top 2r
    squared singular values, which no rank-r point can exceed.
    """
    W = as_matrix(W, "W")
    m, n = W.shape
    if not 1 <= 2 * r <= min(m, n):
        raise ValueError(f"need 2r <= min(m, n); got r={r}, shape {(m, n)}")
    if alpha == 0.0:
        raise ValueError("alpha must be nonzero")
    cfg = cfg if cfg is not None else RsvdConfig()
    weights0 = EffectiveWeights(W, None)
    if method == "dense":
        G = oracle.dense_grad(weights0)
        Ud, s, Vdt = np.linalg.svd(G, full_matrices=False)
        U, V = _fix_svd_signs(Ud, Vdt.T)
    elif method == "rsvd":
        k = 2 * r + cfg.p
        if k > min(m, n):
            raise ValueError(f"sketch width {k} exceeds min(m, n) = {min(m, n)}")
        rng = np.random.default_rng(cfg.seed)
        U, s, V = _rsvd_core(oracle, weights0, k, cfg.q, rng)
    else:
        raise ValueError(f"unknown method {method!r}")
    _check_gap(s, 2 * r, cfg.gap_tol)
    A_L = U[:, :r].copy()
    B = alpha * V[:, r : 2 * r]
    point = FixedRankPoint(A_L, B)
    note_dense_alloc((m, n), "init.base_shift")
    W_prime = W - A_L @ B.T
    return LoiResult(W_prime, point, alpha)


def baseline_init(
    kind: str,
    W,
    r: int,
    seed: int,
    *,
    eps: float = 1e-4,
    oracle: GradientOracle | None = None,
    alpha: float = 1.0,
    cfg: RsvdConfig | None = None,
):
    """Build a starting adapter.

    ``ortho_a``
        Random orthonormal A, B = 0: the classical starting pair for
        Euclidean factor descent. Returns ``(W, (A, B))`` as plain arrays.
    ``zero_b_eps``
        Same A but B filled with N(0, eps^2) noise so the start is a valid
        manifold point. Returns ``(W, FixedRankPoint)``.
    ``loi``
        Delegates to :func:`loi_split` (needs ``oracle``; ``cfg`` defaults
        to p=r, q=3 with this seed). Returns ``(W_prime, FixedRankPoint)``.
    """
    W = as_matrix(W, "W")
    m, n = W.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for shape {(m, n)}")
    if kind == "loi":
        if oracle is None:
            raise ValueError("loi initialization needs a gradient oracle")
        cfg = cfg if cfg is not None else RsvdConfig(p=r, q=3, seed=seed)
        res = loi_split(W, oracle, r, alpha=alpha, cfg=cfg)
        return res.W_prime, res.point
    rng = np.random.default_rng(seed)
    A_L, _ = _signed_qr(rng.standard_normal((m, r)))
    if kind == "ortho_a":
        return W, (A_L, np.zeros((n, r)))
    if kind == "zero_b_eps":
        B = eps * rng.standard_normal((n, r))
        return W, FixedRankPoint(A_L, B)
    raise ValueError(f"unknown init kind {kind!r}")
