"""Matrix-free Euclidean gradient access for concrete losses.

An oracle exposes the loss and two gradient-times-matrix products,
``gvp_right(M) = G @ M`` and ``gvp_left(N) = G.T @ N`` where G is the
Euclidean gradient of the loss at the current effective weights
``Y = W_base + adapter``. Those two products are everything the manifold
machinery needs; ``dense_grad`` exists only so tests can cross-check
against the full matrix.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np

from .alloc import note_dense_alloc
from .linalg import as_matrix
from .manifold import FixedRankPoint, SkeletonPair, TangentVector, _horizontal

Adapter = FixedRankPoint | SkeletonPair


def _adapter_factors(ad: Adapter) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(ad, SkeletonPair):
        return ad.P, ad.Q
    return ad.A_L, ad.B


@dataclass(frozen=True)
class EffectiveWeights:
    """Frozen base weights plus an optional low-rank adapter.

    The evaluation target is always ``Y = W_base + adapter``; the sum is
    never materialized outside of test/oracle paths.
    """

    W_base: np.ndarray
    point: Adapter | None = None

    def __post_init__(self):
        object.__setattr__(self, "W_base", as_matrix(self.W_base, "W_base"))
        if self.point is not None and self.point.shape != self.W_base.shape:
            raise ValueError(
                f"adapter shape {self.point.shape} does not match base {self.W_base.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.W_base.shape

    def matmat(self, M: np.ndarray) -> np.ndarray:
        """Y @ M in factored form."""
        out = self.W_base @ M
        if self.point is not None:
            out += self.point.matmat(M)
        return out

    def rmatmat(self, N: np.ndarray) -> np.ndarray:
        """Y.T @ N in factored form."""
        out = self.W_base.T @ N
        if self.point is not None:
            out += self.point.rmatmat(N)
        return out

    def dense(self) -> np.ndarray:
        note_dense_alloc(self.shape, "weights.dense")
        out = self.W_base.copy()
        if self.point is not None:
            A, B = _adapter_factors(self.point)
            out += A @ B.T
        return out


class GradientOracle(abc.ABC):
    """Loss plus matrix-free products with its Euclidean gradient."""

    shape: tuple[int, int]

    @abc.abstractmethod
    def loss(self, weights: EffectiveWeights) -> float:
        ...

    @abc.abstractmethod
    def gvp_right(self, weights: EffectiveWeights, M: np.ndarray) -> np.ndarray:
        """grad(Y) @ M, shape (m, k)."""

    @abc.abstractmethod
    def gvp_left(self, weights: EffectiveWeights, N: np.ndarray) -> np.ndarray:
        """grad(Y).T @ N, shape (n, k)."""

    @abc.abstractmethod
    def dense_grad(self, weights: EffectiveWeights) -> np.ndarray:
        """The full m-by-n gradient. Test/oracle path only."""

    def _check_right(self, weights: EffectiveWeights, M: np.ndarray) -> np.ndarray:
        M = as_matrix(M, "M")
        if weights.shape != self.shape or M.shape[0] != self.shape[1]:
            raise ValueError(f"gvp_right shape mismatch: {weights.shape}, {M.shape}")
        return M

    def _check_left(self, weights: EffectiveWeights, N: np.ndarray) -> np.ndarray:
        N = as_matrix(N, "N")
        if weights.shape != self.shape or N.shape[0] != self.shape[0]:
            raise ValueError(f"gvp_left shape mismatch: {weights.shape}, {N.shape}")
        return N


def _adapter_sqnorm(ad: Adapter) -> float:
    A, B = _adapter_factors(ad)
    return float(np.trace((A.T @ A) @ (B.T @ B)))


def _lowrank_inner(A1, B1, A2, B2) -> float:
    """<A1 B1^T, A2 B2^T>_F from small Gram products."""
    return float(np.trace((A2.T @ A1) @ (B1.T @ B2)))


class QuadraticOracle(GradientOracle):
    """loss = 1/2 ||Y - T||_F^2 with T = T_dense + T_left @ T_right.T.

    The gradient is exactly ``Y - T``. The constant residual
    ``C = W_base - T_dense`` is cached once per base-weight matrix (skipped
    entirely when ``T_dense`` *is* the base), after which every loss and
    gradient-product call runs on factors only.
    """

    def __init__(self, T_dense=None, T_factors: tuple | None = None):
        if T_dense is None and T_factors is None:
            raise ValueError("quadratic target is empty")
        self.T_dense = as_matrix(T_dense, "T") if T_dense is not None else None
        if T_factors is not None:
            L, R = T_factors
            self.T_left = as_matrix(L, "T_left")
            self.T_right = as_matrix(R, "T_right")
            if self.T_left.shape[1] != self.T_right.shape[1]:
                raise ValueError("low-rank target factors disagree in width")
        else:
            self.T_left = self.T_right = None
        shapes = set()
        if self.T_dense is not None:
            shapes.add(self.T_dense.shape)
        if self.T_left is not None:
            shapes.add((self.T_left.shape[0], self.T_right.shape[0]))
        if len(shapes) != 1:
            raise ValueError(f"inconsistent target shapes: {shapes}")
        (self.shape,) = shapes
        self._lr_sqnorm = (
            float(np.trace((self.T_left.T @ self.T_left) @ (self.T_right.T @ self.T_right)))
            if self.T_left is not None
            else 0.0
        )
        self._cache: tuple[int, np.ndarray | None, float, float] | None = None

    def _const_residual(self, weights: EffectiveWeights):
        """C = W_base - T_dense with its invariants, cached per base matrix."""
        key = id(weights.W_base)
        if self._cache is not None and self._cache[0] == key:
            return self._cache[1:]
        if self.T_dense is None:
            C = weights.W_base
        elif self.T_dense is weights.W_base:
            C = None  # residual is exactly zero, never materialize it
        else:
            note_dense_alloc(self.shape, "oracle.residual_cache")
            C = weights.W_base - self.T_dense
        if C is None:
            c_sq, c_dot_lr = 0.0, 0.0
        else:
            c_sq = float(np.sum(C * C))
            c_dot_lr = (
                float(np.sum(self.T_left * (C @ self.T_right)))
                if self.T_left is not None
                else 0.0
            )
        self._cache = (key, C, c_sq, c_dot_lr)
        return C, c_sq, c_dot_lr

    def loss(self, weights: EffectiveWeights) -> float:
        C, c_sq, c_dot_lr = self._const_residual(weights)
        total = c_sq + self._lr_sqnorm - 2.0 * c_dot_lr
        ad = weights.point
        if ad is not None:
            A, B = _adapter_factors(ad)
            total += _adapter_sqnorm(ad)
            if C is not None:
                total += 2.0 * float(np.sum(A * (C @ B)))
            if self.T_left is not None:
                total -= 2.0 * _lowrank_inner(A, B, self.T_left, self.T_right)
        return 0.5 * total

    def gvp_right(self, weights: EffectiveWeights, M: np.ndarray) -> np.ndarray:
        M = self._check_right(weights, M)
        C, _, _ = self._const_residual(weights)
        out = C @ M if C is not None else np.zeros((self.shape[0], M.shape[1]))
        if weights.point is not None:
            out += weights.point.matmat(M)
        if self.T_left is not None:
            out -= self.T_left @ (self.T_right.T @ M)
        return out

    def gvp_left(self, weights: EffectiveWeights, N: np.ndarray) -> np.ndarray:
        N = self._check_left(weights, N)
        C, _, _ = self._const_residual(weights)
        out = C.T @ N if C is not None else np.zeros((self.shape[1], N.shape[1]))
        if weights.point is not None:
            out += weights.point.rmatmat(N)
        if self.T_left is not None:
            out -= self.T_right @ (self.T_left.T @ N)
        return out

    def dense_grad(self, weights: EffectiveWeights) -> np.ndarray:
        note_dense_alloc(self.shape, "oracle.dense_grad")
        C, _, _ = self._const_residual(weights)
        out = C.copy() if C is not None else np.zeros(self.shape)
        if weights.point is not None:
            A, B = _adapter_factors(weights.point)
            out += A @ B.T
        if self.T_left is not None:
            out -= self.T_left @ self.T_right.T
        return out


class _BatchCursor:
    """Seeded epoch-permutation mini-batching over n_rows samples.

    Batches are contiguous slices of the current permutation; the final
    short batch is kept. ``advance_batch`` is called once per optimizer
    step by the owning run; a fresh permutation is drawn at each epoch end.
    """

    def __init__(self, n_rows: int, batch_size: int | None, seed: int):
        if batch_size is not None and not 1 <= batch_size:
            raise ValueError("empty batch")
        self.n_rows = n_rows
        self.batch_size = min(batch_size, n_rows) if batch_size else None
        self._rng = np.random.default_rng(seed)
        self._perm = self._rng.permutation(n_rows) if self.batch_size else None
        self._pos = 0

    @property
    def batch_indices(self) -> np.ndarray | None:
        if self.batch_size is None:
            return None
        return self._perm[self._pos : self._pos + self.batch_size]

    def advance_batch(self) -> None:
        if self.batch_size is None:
            return
        self._pos += self.batch_size
        if self._pos >= self.n_rows:
            self._perm = self._rng.permutation(self.n_rows)
            self._pos = 0


class LinregOracle(GradientOracle, _BatchCursor):
    """loss = ||D Y - O||_F^2 / (2 b) on the current mini-batch.

    The gradient is ``D_b^T (D_b Y - O_b) / b``, kept factored so each
    product costs O(b (m+n) k) after the one-time ``D @ W_base`` cache.
    """

    def __init__(self, D, O, batch_size: int | None = None, seed: int = 0):
        self.D = as_matrix(D, "D")
        self.O = as_matrix(O, "O")
        if self.D.shape[0] != self.O.shape[0]:
            raise ValueError(f"sample counts disagree: {self.D.shape} vs {self.O.shape}")
        if self.D.shape[0] < 1:
            raise ValueError("empty batch")
        self.shape = (self.D.shape[1], self.O.shape[1])
        _BatchCursor.__init__(self, self.D.shape[0], batch_size, seed)
        self._dw_cache: tuple[int, np.ndarray] | None = None

    def _base_product(self, weights: EffectiveWeights) -> np.ndarray:
        key = id(weights.W_base)
        if self._dw_cache is None or self._dw_cache[0] != key:
            self._dw_cache = (key, self.D @ weights.W_base)
        return self._dw_cache[1]

    def _residual(self, weights: EffectiveWeights) -> tuple[np.ndarray, np.ndarray, int]:
        """(D_b, D_b Y - O_b, b) on the current batch."""
        DW = self._base_product(weights)
        idx = self.batch_indices
        if idx is None:
            Db, resid = self.D, DW - self.O
        else:
            Db, resid = self.D[idx], DW[idx] - self.O[idx]
        if weights.point is not None:
            A, B = _adapter_factors(weights.point)
            resid = resid + (Db @ A) @ B.T
        return Db, resid, Db.shape[0]

    def loss(self, weights: EffectiveWeights) -> float:
        _, resid, b = self._residual(weights)
        return float(np.sum(resid * resid)) / (2.0 * b)

    def gvp_right(self, weights: EffectiveWeights, M: np.ndarray) -> np.ndarray:
        M = self._check_right(weights, M)
        Db, resid, b = self._residual(weights)
        return Db.T @ (resid @ M) / b

    def gvp_left(self, weights: EffectiveWeights, N: np.ndarray) -> np.ndarray:
        N = self._check_left(weights, N)
        Db, resid, b = self._residual(weights)
        return resid.T @ (Db @ N) / b

    def dense_grad(self, weights: EffectiveWeights) -> np.ndarray:
        note_dense_alloc(self.shape, "oracle.dense_grad")
        Db, resid, b = self._residual(weights)
        return Db.T @ resid / b


class MlpOracle(GradientOracle, _BatchCursor):
    """Softmax cross-entropy of a small tanh classifier whose first linear
    layer is the adapted matrix.

    Forward: ``X @ Y -> tanh -> @W1 -> tanh -> @W2 -> softmax CE``. Only Y
    is adapted; the head weights W1 (n, h) and W2 (h, c) are fixed, sampled
    from the seed unless given. Because the adapted layer is linear, the
    gradient factors as ``X_b^T @ delta`` and the gvp products never build
    an m-by-n matrix. Backprop is hand-derived reverse mode.
    """

    def __init__(
        self,
        hidden: int,
        classes: int,
        X,
        labels,
        seed: int = 0,
        *,
        out_dim: int | None = None,
        W1=None,
        W2=None,
        batch_size: int | None = None,
    ):
        self.X = as_matrix(X, "X")
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.X.shape[0]:
            raise ValueError("labels must be one int per sample")
        if classes < 2 or hidden < 1:
            raise ValueError("need at least 2 classes and hidden width 1")
        if np.any((self.labels < 0) | (self.labels >= classes)):
            raise ValueError(f"labels out of range [0, {classes})")
        self.hidden = hidden
        self.classes = classes
        rng = np.random.default_rng(seed)
        if W1 is not None:
            self.W1 = as_matrix(W1, "W1")
        else:
            n = out_dim if out_dim is not None else self.X.shape[1]
            self.W1 = rng.standard_normal((n, hidden)) / np.sqrt(n)
        if W2 is not None:
            self.W2 = as_matrix(W2, "W2")
        else:
            self.W2 = rng.standard_normal((hidden, classes)) / np.sqrt(hidden)
        if self.W1.shape[1] != hidden or self.W2.shape != (hidden, classes):
            raise ValueError("head weight shapes disagree with hidden/classes")
        self.shape = (self.X.shape[1], self.W1.shape[0])
        _BatchCursor.__init__(self, self.X.shape[0], batch_size, seed + 1)

    def _batch(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.batch_indices
        if idx is None:
            return self.X, self.labels
        return self.X[idx], self.labels[idx]

    def _forward(self, weights: EffectiveWeights, Xb: np.ndarray):
        Z = Xb @ weights.W_base
        if weights.point is not None:
            A, B = _adapter_factors(weights.point)
            Z = Z + (Xb @ A) @ B.T
        H = np.tanh(Z)
        G = np.tanh(H @ self.W1)
        logits = G @ self.W2
        return H, G, logits

    @staticmethod
    def _log_softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))

    def loss(self, weights: EffectiveWeights) -> float:
        Xb, yb = self._batch()
        _, _, logits = self._forward(weights, Xb)
        logp = self._log_softmax(logits)
        return -float(np.mean(logp[np.arange(Xb.shape[0]), yb]))

    def _delta(self, weights: EffectiveWeights) -> tuple[np.ndarray, np.ndarray]:
        """(X_b, dLoss/dZ) so that grad(Y) = X_b^T @ delta."""
        Xb, yb = self._batch()
        H, G, logits = self._forward(weights, Xb)
        b = Xb.shape[0]
        p = np.exp(self._log_softmax(logits))
        p[np.arange(b), yb] -= 1.0
        p /= b
        dG = p @ self.W2.T
        dH = (dG * (1.0 - G * G)) @ self.W1.T
        delta = dH * (1.0 - H * H)
        return Xb, delta

    def gvp_right(self, weights: EffectiveWeights, M: np.ndarray) -> np.ndarray:
        M = self._check_right(weights, M)
        Xb, delta = self._delta(weights)
        return Xb.T @ (delta @ M)

    def gvp_left(self, weights: EffectiveWeights, N: np.ndarray) -> np.ndarray:
        N = self._check_left(weights, N)
        Xb, delta = self._delta(weights)
        return delta.T @ (Xb @ N)

    def dense_grad(self, weights: EffectiveWeights) -> np.ndarray:
        note_dense_alloc(self.shape, "oracle.dense_grad")
        Xb, delta = self._delta(weights)
        return Xb.T @ delta


@dataclass
class CountingOracle(GradientOracle):
    """Delegating wrapper that counts oracle calls (instrumentation)."""

    inner: GradientOracle
    n_right: int = 0
    n_left: int = 0
    n_loss: int = 0
    n_dense: int = 0
    shape: tuple[int, int] = field(init=False)

    def __post_init__(self):
        self.shape = self.inner.shape

    def loss(self, weights):
        self.n_loss += 1
        return self.inner.loss(weights)

    def gvp_right(self, weights, M):
        self.n_right += 1
        return self.inner.gvp_right(weights, M)

    def gvp_left(self, weights, N):
        self.n_left += 1
        return self.inner.gvp_left(weights, N)

    def dense_grad(self, weights):
        self.n_dense += 1
        return self.inner.dense_grad(weights)

    def advance_batch(self):
        adv = getattr(self.inner, "advance_batch", None)
        if adv is not None:
            adv()


def make_quadratic_oracle(T) -> QuadraticOracle:
    """Quadratic matching loss 1/2 ||Y - T||_F^2 for a dense target."""
    return QuadraticOracle(T_dense=T)


def make_linreg_oracle(D, O, batch_size: int | None = None, seed: int = 0) -> LinregOracle:
    """Least-squares loss ||D Y - O||_F^2 / (2b) with optional mini-batching."""
    return LinregOracle(D, O, batch_size=batch_size, seed=seed)


def make_mlp_oracle(hidden: int, classes: int, data, seed: int = 0, **kw) -> MlpOracle:
    """Tanh-MLP cross-entropy oracle; ``data`` is an (inputs, labels) pair."""
    X, labels = data
    return MlpOracle(hidden, classes, X, labels, seed=seed, **kw)


def riemannian_grad(
    oracle: GradientOracle, weights: EffectiveWeights, B_R: np.ndarray
) -> TangentVector:
    """Project the Euclidean loss gradient onto the current tangent space.

    Costs exactly one ``gvp_right`` and one ``gvp_left`` call — the two
    derivative products of the doubled-rank parameterization — plus
    O((m+n) r^2) flops.
    """
    point = weights.point
    if not isinstance(point, FixedRankPoint):
        raise ValueError("riemannian_grad needs weights carrying a manifold point")
    Adot = _horizontal(point.A_L, oracle.gvp_right(weights, B_R))
    Bdot = oracle.gvp_left(weights, point.A_L)
    return TangentVector(Adot, Bdot, point.A_L, B_R)
