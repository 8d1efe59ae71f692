"""Optimization loops: manifold heavy-ball descent with vector transport
and optional norm-smoothed (Adam-like) scaling, plus Euclidean factor
baselines and the linear warmup/decay step-size schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .linalg import qr_thin
from .manifold import (
    FixedRankPoint,
    SkeletonPair,
    TangentVector,
    _horizontal,
    retract,
    tangent_inner,
    vector_transport,
)
from .oracles import EffectiveWeights, GradientOracle, riemannian_grad

EMA_CONVENTIONS = ("paper", "standard")


@dataclass(frozen=True)
class RiemannHyper:
    """Hyperparameters of the manifold optimizer.

    ``ema_convention`` selects how the smoothed norms blend: ``paper``
    weights the incoming norm by gamma (as the method was stated),
    ``standard`` by 1 - gamma (conventional exponential smoothing).
    """

    eta: float
    beta: float = 0.0
    gamma: float = 0.9
    simulate_adam: bool = False
    max_iters: int = 100
    eps_denominator: float = 1e-8
    ema_convention: str = "paper"

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must be in [0, 1)")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.ema_convention not in EMA_CONVENTIONS:
            raise ValueError(f"ema_convention must be one of {EMA_CONVENTIONS}")


@dataclass(frozen=True)
class OptimizerState:
    """Cross-step state: momentum in width-2r skeleton form, smoothed norms,
    step counter. ``rgrad_norm`` is a diagnostic (the norm of the projected
    gradient used in the latest step), written for the metrics log."""

    momentum: SkeletonPair | None = None
    S_A: float = 0.0
    S_B: float = 0.0
    step_index: int = 0
    rgrad_norm: float = 0.0

    def __post_init__(self):
        if self.S_A < 0 or self.S_B < 0:
            raise ValueError("smoothed norms must be >= 0")


def riemann_step(
    weights: EffectiveWeights,
    state: OptimizerState,
    oracle: GradientOracle,
    hyper: RiemannHyper,
    *,
    eta: float | None = None,
) -> tuple[EffectiveWeights, OptimizerState]:
    """One manifold descent step; returns the updated weights and state.

    Re-orthogonalizes the right factor, projects the gradient (one
    gvp_right plus one gvp_left), transports the stored momentum to the
    current tangent space, blends ``beta * momentum + (1-beta) * gradient``,
    optionally rescales both components by smoothed norms, retracts along
    the negative direction via the skeleton SVD, and stores the blended
    direction as new momentum. O((m+n) r^2 + r^3) per step plus one oracle
    round trip.
    """
    point = weights.point
    if not isinstance(point, FixedRankPoint):
        raise ValueError("riemann_step needs weights carrying a manifold point")
    step = hyper.eta if eta is None else eta
    B_R, _ = qr_thin(point.B)
    grad = riemannian_grad(oracle, weights, B_R)
    gnorm = grad.norm()
    if state.momentum is not None:
        prev = vector_transport(state.momentum, point.A_L, B_R)
        dA = hyper.beta * prev.Adot + (1.0 - hyper.beta) * grad.Adot
        dB = hyper.beta * prev.Bdot + (1.0 - hyper.beta) * grad.Bdot
        dA = _horizontal(point.A_L, dA)
    else:
        dA = (1.0 - hyper.beta) * grad.Adot
        dB = (1.0 - hyper.beta) * grad.Bdot
    S_A, S_B = state.S_A, state.S_B
    if hyper.simulate_adam:
        nA = float(np.linalg.norm(dA))
        nB = float(np.linalg.norm(dB))
        if hyper.ema_convention == "paper":
            S_A = hyper.gamma * nA + (1.0 - hyper.gamma) * S_A
            S_B = hyper.gamma * nB + (1.0 - hyper.gamma) * S_B
        else:
            S_A = (1.0 - hyper.gamma) * nA + hyper.gamma * S_A
            S_B = (1.0 - hyper.gamma) * nB + hyper.gamma * S_B
        dA = dA / (S_A + hyper.eps_denominator)
        dB = dB / (S_B + hyper.eps_denominator)
    direction = TangentVector(dA, dB, point.A_L, B_R)
    new_point = retract(point, B_R, direction, step)
    momentum = SkeletonPair(np.hstack([dA, point.A_L]), np.hstack([B_R, dB]))
    new_state = OptimizerState(
        momentum=momentum,
        S_A=S_A,
        S_B=S_B,
        step_index=state.step_index + 1,
        rgrad_norm=gnorm,
    )
    return EffectiveWeights(weights.W_base, new_point), new_state


def euclid_lora_sgd_step(
    A: np.ndarray,
    B: np.ndarray,
    oracle: GradientOracle,
    W_base: np.ndarray,
    eta: float,
    beta: float = 0.0,
    vA: np.ndarray | None = None,
    vB: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
    """Classical heavy-ball SGD on the raw factors (no manifold machinery).

    Factor gradients come from the chain rule, dL/dA = G @ B and
    dL/dB = G.T @ A, one oracle product each. Returns the updated factors,
    velocity buffers, and the factor-gradient norm (for logging).
    """
    weights = EffectiveWeights(W_base, SkeletonPair(A, B))
    gA = oracle.gvp_right(weights, B)
    gB = oracle.gvp_left(weights, A)
    vA = gA if vA is None else beta * vA + gA
    vB = gB if vB is None else beta * vB + gB
    gnorm = float(np.sqrt(np.sum(gA * gA) + np.sum(gB * gB)))
    return A - eta * vA, B - eta * vB, vA, vB, gnorm


@dataclass(frozen=True)
class AdamMoments:
    """Elementwise Adam buffers for the stacked factor gradients."""

    mA: np.ndarray
    vA: np.ndarray
    mB: np.ndarray
    vB: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, m: int, n: int, r: int) -> "AdamMoments":
        return cls(np.zeros((m, r)), np.zeros((m, r)), np.zeros((n, r)), np.zeros((n, r)))


def euclid_lora_adam_step(
    A: np.ndarray,
    B: np.ndarray,
    moments: AdamMoments,
    oracle: GradientOracle,
    W_base: np.ndarray,
    eta: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray, AdamMoments, float]:
    """Textbook elementwise Adam with bias correction on both factors."""
    weights = EffectiveWeights(W_base, SkeletonPair(A, B))
    gA = oracle.gvp_right(weights, B)
    gB = oracle.gvp_left(weights, A)
    t = moments.t + 1
    mA = beta1 * moments.mA + (1.0 - beta1) * gA
    vA = beta2 * moments.vA + (1.0 - beta2) * gA * gA
    mB = beta1 * moments.mB + (1.0 - beta1) * gB
    vB = beta2 * moments.vB + (1.0 - beta2) * gB * gB
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    A_new = A - eta * (mA / c1) / (np.sqrt(vA / c2) + eps)
    B_new = B - eta * (mB / c1) / (np.sqrt(vB / c2) + eps)
    gnorm = float(np.sqrt(np.sum(gA * gA) + np.sum(gB * gB)))
    return A_new, B_new, AdamMoments(mA, vA, mB, vB, t), gnorm


def lr_schedule(base_eta: float, step: int, total_steps: int, warmup_ratio: float) -> float:
    """Linear warmup from zero over ``warmup_ratio * total_steps``, then
    linear decay to zero at ``total_steps``."""
    if not 0.0 <= warmup_ratio < 1.0:
        raise ValueError("warmup_ratio must be in [0, 1)")
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    warm = warmup_ratio * total_steps
    if warm > 0 and step < warm:
        return base_eta * step / warm
    return base_eta * max(total_steps - step, 0) / (total_steps - warm)
