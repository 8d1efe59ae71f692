"""Executable invariant suite: every structural property of the library,
measured with its residual and tolerance, reported machine-readably.

The comparators here are deliberately independent of the code paths they
check (dense projector formula, dense SVD, finite differences), so a
regression in the factored implementations cannot hide itself.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import harness
from .alloc import count_dense_allocs
from .initializers import RsvdConfig, baseline_init, loi_split
from .linalg import qr_thin, skeleton_svd, svd_trunc
from .manifold import (
    FixedRankPoint,
    SkeletonPair,
    canonicalize,
    project_to_tangent,
    retract,
    tangent_inner,
    to_dense,
    vector_transport,
)
from .optimizers import OptimizerState, RiemannHyper, riemann_step
from .oracles import (
    CountingOracle,
    EffectiveWeights,
    QuadraticOracle,
    make_linreg_oracle,
    make_mlp_oracle,
    make_quadratic_oracle,
    riemannian_grad,
)


@dataclass(frozen=True)
class InvariantResult:
    name: str
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


@dataclass(frozen=True)
class Profile:
    samples: int
    mc_samples: int
    max_dim: int
    max_rank: int
    steps: int


PROFILES = {
    "quick": Profile(samples=20, mc_samples=200, max_dim=24, max_rank=4, steps=10),
    "full": Profile(samples=100, mc_samples=1000, max_dim=64, max_rank=8, steps=20),
}


def _dense_projection(Z, A_L, B_R):
    """The alternative dense projector formula (independent comparator)."""
    m, n = Z.shape
    left = np.eye(m) - A_L @ A_L.T
    right = np.eye(n) - B_R @ B_R.T
    return Z - left @ Z @ right


def _random_point(rng, m, n, r):
    return canonicalize(rng.standard_normal((m, r)), rng.standard_normal((n, r)))


def _random_tangent(rng, point, B_R, scale=1.0):
    Z = scale * rng.standard_normal(point.shape)
    return project_to_tangent(Z, point, B_R)


def _dims(rng, prof):
    m = int(rng.integers(6, prof.max_dim + 1))
    n = int(rng.integers(5, prof.max_dim + 1))
    r = int(rng.integers(1, min(prof.max_rank, m - 1, n - 1) + 1))
    return m, n, r


def _check_linalg(rng, prof):
    qr_res, qr_orth, ey_res, skel_res, det_res = 0.0, 0.0, 0.0, 0.0, 0.0
    for _ in range(prof.samples):
        m, n, r = _dims(rng, prof)
        M = rng.standard_normal((m, r))
        Q, R = qr_thin(M)
        qr_res = max(qr_res, np.linalg.norm(Q @ R - M) / np.linalg.norm(M))
        qr_orth = max(qr_orth, np.linalg.norm(Q.T @ Q - np.eye(r)))

        A = rng.standard_normal((m, n))
        k = min(r + 1, min(m, n) - 1)  # keep a nonzero spectral tail
        tri = svd_trunc(A, k)
        s_all = np.linalg.svd(A, compute_uv=False)
        tail = float(np.sum(s_all[k:] ** 2))
        err = np.linalg.norm(A - tri.dense()) ** 2
        ey_res = max(ey_res, abs(err - tail) / tail)

        P = rng.standard_normal((m, 2 * r))
        Qf = rng.standard_normal((n, 2 * r))
        skel = skeleton_svd(P, Qf, r)
        dense = svd_trunc(P @ Qf.T, r)
        skel_res = max(
            skel_res,
            np.linalg.norm(skel.sigma - dense.sigma) / max(dense.sigma[0], 1e-30),
            np.linalg.norm(skel.dense() - dense.dense()) / max(np.linalg.norm(dense.dense()), 1e-30),
        )

        again = svd_trunc(A, k)
        same = (
            np.array_equal(tri.U, again.U)
            and np.array_equal(tri.sigma, again.sigma)
            and np.array_equal(tri.V, again.V)
        )
        det_res = max(det_res, 0.0 if same else 1.0)
    return [
        InvariantResult("linalg.qr_reconstruction", qr_res, 1e-12),
        InvariantResult("linalg.qr_orthonormal", qr_orth, 1e-12),
        InvariantResult("linalg.svd_eckart_young_residual", ey_res, 1e-9),
        InvariantResult("linalg.skeleton_matches_dense_svd", skel_res, 1e-10),
        InvariantResult("linalg.svd_deterministic", det_res, 0.0),
    ]


def _check_manifold(rng, prof, corrupt):
    idem, orth_resid, pyth, transp, eyb, point_orth = 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    for _ in range(prof.samples):
        m, n, r = _dims(rng, prof)
        point, B_R = _random_point(rng, m, n, r)

        A_L = point.A_L
        if corrupt == "orthonormality":
            A_L = A_L + 1e-3 * rng.standard_normal(A_L.shape)
        point_orth = max(
            point_orth,
            np.linalg.norm(A_L.T @ A_L - np.eye(r)) / np.sqrt(r),
        )

        Z = rng.standard_normal((m, n))
        xi = project_to_tangent(Z, point, B_R)
        PZ = to_dense(xi)
        PPZ = to_dense(project_to_tangent(PZ, point, B_R))
        idem = max(idem, np.linalg.norm(PPZ - PZ) / max(np.linalg.norm(PZ), 1e-30))

        eta = _random_tangent(rng, point, B_R)
        de = to_dense(eta)
        orth_resid = max(
            orth_resid,
            abs(np.sum((Z - PZ) * de)) / (np.linalg.norm(Z) * max(np.linalg.norm(de), 1e-30)),
        )

        zn2 = np.linalg.norm(Z) ** 2
        pyth = max(pyth, abs(zn2 - np.linalg.norm(Z - PZ) ** 2 - np.linalg.norm(PZ) ** 2) / zn2)

        skel = SkeletonPair(rng.standard_normal((m, 2 * r)), rng.standard_normal((n, 2 * r)))
        tv = vector_transport(skel, point.A_L, B_R)
        ref = _dense_projection(skel.P @ skel.Q.T, point.A_L, B_R)
        transp = max(
            transp, np.linalg.norm(to_dense(tv) - ref) / max(np.linalg.norm(ref), 1e-30)
        )

        if 2 * r <= min(m, n):
            G = rng.standard_normal((m, n))
            PG = _dense_projection(G, point.A_L, B_R)
            lhs = np.linalg.norm(G - PG)
            rhs = np.linalg.norm(G - svd_trunc(G, 2 * r).dense())
            eyb = max(eyb, (rhs - lhs) / np.linalg.norm(G))
    return [
        InvariantResult("manifold.point_orthonormality", point_orth, 1e-10),
        InvariantResult("manifold.projection_idempotent", idem, 1e-10),
        InvariantResult("manifold.residual_orthogonal_to_tangent", orth_resid, 1e-9),
        InvariantResult("manifold.pythagorean_identity", pyth, 1e-9),
        InvariantResult("manifold.transport_equals_projection", transp, 1e-10),
        InvariantResult("manifold.eckart_young_lower_bound", eyb, 1e-9),
    ]


def _check_retraction_order(rng, prof):
    slope_err = 0.0
    for _ in range(3):
        m, n, r = _dims(rng, prof)
        point, B_R = _random_point(rng, m, n, r)
        xi = _random_tangent(rng, point, B_R)
        xi = xi.scaled(1.0 / max(xi.norm(), 1e-30))
        ts = np.array([1e-2, 5e-3, 2.5e-3])
        errs = []
        X = to_dense(point)
        dxi = to_dense(xi)
        for t in ts:
            moved = to_dense(retract(point, B_R, xi, -t))
            errs.append(np.linalg.norm(moved - (X + t * dxi)))
        slope = np.polyfit(np.log(ts), np.log(errs), 1)[0]
        slope_err = max(slope_err, abs(slope - 2.0))
    return [InvariantResult("manifold.retraction_second_order", slope_err, 0.1)]


def _sample_oracles(rng, m, n):
    T = rng.standard_normal((m, n))
    quad = make_quadratic_oracle(T)
    b = 3 * m
    D = rng.standard_normal((b, m))
    O = rng.standard_normal((b, n))
    lin = make_linreg_oracle(D, O)
    X = rng.standard_normal((24, m))
    labels = rng.integers(0, 3, size=24)
    mlp = make_mlp_oracle(4, 3, (X, labels), seed=7, out_dim=n)
    return {"quadratic": quad, "linreg": lin, "mlp": mlp}


def _check_oracles(rng, prof):
    gvp, nonexp, aug = 0.0, 0.0, 0.0
    m, n, r = 10, 8, 2
    for _ in range(max(prof.samples // 10, 3)):
        W = rng.standard_normal((m, n))
        point, B_R = _random_point(rng, m, n, r)
        weights = EffectiveWeights(W, point)
        for oracle in _sample_oracles(rng, m, n).values():
            G = oracle.dense_grad(weights)
            gn = max(np.linalg.norm(G), 1e-30)
            for _ in range(5):
                M = rng.standard_normal((n, r + 1))
                N = rng.standard_normal((m, r + 1))
                gvp = max(
                    gvp,
                    np.linalg.norm(oracle.gvp_right(weights, M) - G @ M) / (gn * np.linalg.norm(M)),
                    np.linalg.norm(oracle.gvp_left(weights, N) - G.T @ N) / (gn * np.linalg.norm(N)),
                )
            rg = riemannian_grad(oracle, weights, B_R)
            nonexp = max(nonexp, rg.norm() - np.linalg.norm(G) - 1e-9)

    # hand-derived reverse mode vs finite differences on the doubled
    # parameterization W + Z1 B_R^T + A_L Z2^T at (Z1, Z2) = (0, B)
    W = rng.standard_normal((m, n))
    point, B_R = _random_point(rng, m, n, r)
    oracle = _sample_oracles(rng, m, n)["mlp"]
    weights = EffectiveWeights(W, point)
    want_A = oracle.gvp_right(weights, B_R)
    want_B = oracle.gvp_left(weights, point.A_L)
    h = 1e-5

    def aug_loss(Z1, Z2):
        pair = SkeletonPair(np.hstack([Z1, point.A_L]), np.hstack([B_R, Z2]))
        return oracle.loss(EffectiveWeights(W, pair))

    got_A = np.zeros_like(want_A)
    for i in range(m):
        for j in range(r):
            E = np.zeros((m, r))
            E[i, j] = h
            got_A[i, j] = (aug_loss(E, point.B) - aug_loss(-E, point.B)) / (2 * h)
    got_B = np.zeros_like(want_B)
    for i in range(n):
        for j in range(r):
            E = np.zeros((n, r))
            E[i, j] = h
            got_B[i, j] = (aug_loss(np.zeros((m, r)), point.B + E)
                           - aug_loss(np.zeros((m, r)), point.B - E)) / (2 * h)
    aug = max(
        np.linalg.norm(got_A - want_A) / max(np.linalg.norm(want_A), 1e-30),
        np.linalg.norm(got_B - want_B) / max(np.linalg.norm(want_B), 1e-30),
    )
    return [
        InvariantResult("oracles.gvp_matches_dense_grad", gvp, 1e-10),
        InvariantResult("oracles.projection_nonexpansive", nonexp, 0.0),
        InvariantResult("oracles.doubled_params_match_fd", aug, 1e-6),
    ]


def _loi_objective(G, A_L, B_R):
    return float(np.linalg.norm(_dense_projection(G, A_L, B_R)) ** 2)


def _check_init(rng, prof):
    m, n, r = 20, 16, 2
    W = rng.standard_normal((m, n))
    T = rng.standard_normal((m, n))
    oracle = make_quadratic_oracle(T)
    weights0 = EffectiveWeights(W, None)
    G = oracle.dense_grad(weights0)
    s = np.linalg.svd(G, compute_uv=False)
    top = float(np.sum(s[: 2 * r] ** 2))

    res = loi_split(W, oracle, r, cfg=RsvdConfig(seed=3), method="dense")
    B_R, _ = qr_thin(res.point.B)
    obj = _loi_objective(G, res.point.A_L, B_R)
    obj_res = abs(obj - top) / top

    mc = 0.0
    for _ in range(prof.mc_samples):
        cand, cand_BR = _random_point(rng, m, n, r)
        mc = max(mc, (_loi_objective(G, cand.A_L, cand_BR) - obj) / s[0] ** 2)

    objs = []
    for alpha in (0.1, 1.0, 10.0):
        ra = loi_split(W, oracle, r, alpha=alpha, cfg=RsvdConfig(seed=3), method="dense")
        BRa, _ = qr_thin(ra.point.B)
        objs.append(_loi_objective(G, ra.point.A_L, BRa))
    alpha_res = (max(objs) - min(objs)) / top

    counting = CountingOracle(oracle)
    q = 2
    loi_split(W, counting, r, cfg=RsvdConfig(p=r, q=q, seed=3))
    calls = counting.n_right + counting.n_left
    call_res = float(abs(calls - 2 * (q + 1)))

    loss0 = oracle.loss(weights0)
    loss_split = oracle.loss(EffectiveWeights(res.W_prime, res.point))
    keep_res = abs(loss_split - loss0) / max(abs(loss0), 1e-30)

    return [
        InvariantResult("init.loi_objective_equals_top_spectrum", obj_res, 1e-8),
        InvariantResult("init.loi_dominates_sampled_points", mc, 1e-9),
        InvariantResult("init.loi_alpha_invariance", alpha_res, 1e-8),
        InvariantResult("init.rsvd_call_count", call_res, 0.0),
        InvariantResult("init.loss_preserved_at_split", keep_res, 1e-10),
    ]


def _check_optimizers(rng, prof):
    m, n, r = 16, 12, 2
    T = rng.standard_normal((m, n))
    oracle = make_quadratic_oracle(T)
    W = rng.standard_normal((m, n))
    hyper = RiemannHyper(eta=0.05, beta=0.7, max_iters=prof.steps)

    # paired runs from gauge-equivalent factorizations
    A = rng.standard_normal((m, r))
    B = rng.standard_normal((n, r))
    S = rng.standard_normal((r, r)) + 2.0 * np.eye(r)
    point1, _ = canonicalize(A, B)
    point2, _ = canonicalize(A @ S, B @ np.linalg.inv(S).T)
    w1 = EffectiveWeights(W, point1)
    w2 = EffectiveWeights(W, point2)
    s1, s2 = OptimizerState(), OptimizerState()
    reparam, horiz = 0.0, 0.0
    for _ in range(prof.steps):
        w1, s1 = riemann_step(w1, s1, oracle, hyper)
        w2, s2 = riemann_step(w2, s2, oracle, hyper)
        d1 = to_dense(w1.point)
        reparam = max(reparam, np.linalg.norm(d1 - to_dense(w2.point)) / np.linalg.norm(d1))
        B_R, _ = qr_thin(w1.point.B)
        mom = vector_transport(s1.momentum, w1.point.A_L, B_R)
        an = np.linalg.norm(mom.Adot)
        if an > 0:
            horiz = max(horiz, np.linalg.norm(w1.point.A_L.T @ mom.Adot) / an)

    # beta = 0: the stored direction equals the projected gradient
    point, B_R = _random_point(rng, m, n, r)
    w = EffectiveWeights(W, point)
    grad = riemannian_grad(oracle, w, B_R)
    _, st = riemann_step(w, OptimizerState(), oracle, RiemannHyper(eta=0.05))
    steep = np.linalg.norm(to_dense(st.momentum) - to_dense(grad)) / max(grad.norm(), 1e-30)

    # call-count contract over a short harness run
    cfg = harness.ExperimentConfig(
        task="lowrank_recovery", m=m, n=n, r=r, true_rank=r,
        optimizer="riemann_hb", init="zero_b_eps", eta=0.1, beta=0.5,
        max_iters=prof.steps, seed=11,
    )
    task = harness.gen_task(cfg)
    counting = CountingOracle(task.oracle)
    harness.run_experiment(cfg, task=harness.Task(task.W_base, counting, task.info, task.matrices))
    call_res = float(abs(counting.n_right - prof.steps) + abs(counting.n_left - prof.steps))

    # the projected gradient at the optimal split tops random starts
    W2 = rng.standard_normal((m, n))
    oracle2 = make_quadratic_oracle(rng.standard_normal((m, n)))
    res = loi_split(W2, oracle2, r, cfg=RsvdConfig(seed=5), method="dense")
    G2 = oracle2.dense_grad(EffectiveWeights(W2, None))
    s2_ = np.linalg.svd(G2, compute_uv=False)
    B_R2, _ = qr_thin(res.point.B)
    gr = riemannian_grad(oracle2, EffectiveWeights(res.W_prime, res.point), B_R2)
    loi_norm2 = gr.norm() ** 2
    top = float(np.sum(s2_[: 2 * r] ** 2))
    first_res = abs(loi_norm2 - top) / top
    for i in range(200):
        cand, cand_BR = _random_point(rng, m, n, r)
        # competing starts get the same splitting treatment so the loss
        # gradient at their effective weights is the same G2
        shift = W2 - cand.A_L @ cand.B.T
        cg = riemannian_grad(oracle2, EffectiveWeights(shift, cand), cand_BR)
        first_res = max(first_res, (cg.norm() ** 2 - loi_norm2) / s2_[0] ** 2)

    return [
        InvariantResult("optim.reparametrization_invariance", reparam, 1e-8),
        InvariantResult("optim.momentum_horizontal", horiz, 1e-9),
        InvariantResult("optim.beta0_is_steepest_descent", steep, 1e-12),
        InvariantResult("optim.oracle_call_count", call_res, 0.0),
        InvariantResult("optim.loi_first_gradient_is_max", first_res, 1e-8),
    ]


def _check_harness(rng, prof, tmpdir):
    cfg = harness.ExperimentConfig(
        task="lowrank_recovery", m=12, n=10, r=2, true_rank=2,
        optimizer="riemann_hb", init="zero_b_eps", eta=0.3, beta=0.5,
        max_iters=5, seed=17,
    )
    recs1 = harness.run_experiment(cfg)
    recs2 = harness.run_experiment(cfg)

    def strip_wall(recs):
        lines = harness.render_csv(recs).splitlines()
        return [line.rsplit(",", 1)[0] for line in lines]

    det_res = 0.0 if strip_wall(recs1) == strip_wall(recs2) else 1.0

    # task bytes are reproducible
    b1 = harness.serialize_task(harness.gen_task(cfg))
    b2 = harness.serialize_task(harness.gen_task(cfg))
    det_res = max(det_res, 0.0 if b1 == b2 else 1.0)

    # config errors are reported as exit code 2 through the CLI
    import contextlib
    import io

    from .cli import main as cli_main

    with tempfile.TemporaryDirectory() as scratch:
        bad = os.path.join(tmpdir or scratch, "bad.cfg")
        with open(bad, "w", encoding="utf-8") as fh:
            fh.write("task = nonsense\n")
        with contextlib.redirect_stderr(io.StringIO()):
            exit_res = 0.0 if cli_main(["run", "--config", bad]) == 2 else 1.0

    # the optimizer loop allocates no ambient matrices (oracle caches warm)
    task = harness.gen_task(cfg)
    weights = EffectiveWeights(task.W_base, baseline_init("zero_b_eps", task.W_base, 2, 17)[1])
    hyper = RiemannHyper(eta=0.3, beta=0.5, max_iters=5)
    state = OptimizerState()
    task.oracle.loss(weights)  # warm the residual cache outside the loop
    with count_dense_allocs() as allocs:
        for _ in range(5):
            weights, state = riemann_step(weights, state, task.oracle, hyper)
            task.oracle.loss(weights)
    alloc_res = float(len(allocs))

    return [
        InvariantResult("harness.csv_determinism", det_res, 0.0),
        InvariantResult("harness.config_error_exit_code", exit_res, 0.0),
        InvariantResult("harness.loop_allocates_no_dense", alloc_res, 0.0),
    ]


def check_invariants(
    profile: str = "quick",
    seed: int = 0,
    *,
    corrupt: str | None = None,
    tmpdir: str | None = None,
) -> list[InvariantResult]:
    """Measure every library invariant; returns one result per named check.

    ``corrupt`` deliberately breaks the named property (currently
    ``"orthonormality"``) so the reporting path itself can be validated.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    prof = PROFILES[profile]
    rng = np.random.default_rng(seed)
    results = []
    results += _check_linalg(rng, prof)
    results += _check_manifold(rng, prof, corrupt)
    results += _check_retraction_order(rng, prof)
    results += _check_oracles(rng, prof)
    results += _check_init(rng, prof)
    results += _check_optimizers(rng, prof)
    results += _check_harness(rng, prof, tmpdir)
    return results


def render_report(results: list[InvariantResult]) -> str:
    lines = ["invariant,residual,tolerance,status"]
    for r in results:
        lines.append(
            f"{r.name},{float(r.residual)!r},{float(r.tolerance)!r},"
            f"{'pass' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines) + "\n"
