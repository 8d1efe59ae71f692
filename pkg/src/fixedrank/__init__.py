"""Riemannian optimization of low-rank adapters on the fixed-rank matrix
manifold: factored manifold primitives, matrix-free gradient oracles,
randomized-SVD locally optimal initialization, the manifold optimizer
loop, Euclidean baselines, and a deterministic experiment harness.
"""

from .initializers import (
    DegenerateSpectrum,
    LoiResult,
    RsvdConfig,
    backprop_rsvd,
    baseline_init,
    loi_split,
)
from .linalg import RankDeficient, SvdTriple, qr_thin, skeleton_svd, svd_trunc
from .manifold import (
    BaseMismatch,
    FixedRankPoint,
    RankCollapse,
    SkeletonPair,
    TangentVector,
    canonicalize,
    project_to_tangent,
    retract,
    tangent_inner,
    to_dense,
    vector_transport,
)
from .optimizers import (
    AdamMoments,
    OptimizerState,
    RiemannHyper,
    euclid_lora_adam_step,
    euclid_lora_sgd_step,
    lr_schedule,
    riemann_step,
)
from .oracles import (
    CountingOracle,
    EffectiveWeights,
    GradientOracle,
    LinregOracle,
    MlpOracle,
    QuadraticOracle,
    make_linreg_oracle,
    make_mlp_oracle,
    make_quadratic_oracle,
    riemannian_grad,
)

__version__ = "0.1.0"

__all__ = [
    "AdamMoments",
    "BaseMismatch",
    "CountingOracle",
    "DegenerateSpectrum",
    "EffectiveWeights",
    "FixedRankPoint",
    "GradientOracle",
    "LinregOracle",
    "LoiResult",
    "MlpOracle",
    "OptimizerState",
    "QuadraticOracle",
    "RankCollapse",
    "RankDeficient",
    "RiemannHyper",
    "RsvdConfig",
    "SkeletonPair",
    "SvdTriple",
    "TangentVector",
    "backprop_rsvd",
    "baseline_init",
    "canonicalize",
    "euclid_lora_adam_step",
    "euclid_lora_sgd_step",
    "loi_split",
    "lr_schedule",
    "make_linreg_oracle",
    "make_mlp_oracle",
    "make_quadratic_oracle",
    "project_to_tangent",
    "qr_thin",
    "retract",
    "riemann_step",
    "riemannian_grad",
    "skeleton_svd",
    "svd_trunc",
    "tangent_inner",
    "to_dense",
    "vector_transport",
]
