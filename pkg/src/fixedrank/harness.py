"""Experiment harness: flat key=value configs, seeded synthetic tasks,
deterministic runs with CSV metrics, and cross-config comparison tables.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from statistics import mean, median, pstdev

import numpy as np

from .fixtures import format_double
from .initializers import DegenerateSpectrum, RsvdConfig, baseline_init
from .linalg import RankDeficient
from .manifold import FixedRankPoint, RankCollapse
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
    EffectiveWeights,
    GradientOracle,
    LinregOracle,
    MlpOracle,
    QuadraticOracle,
)

TASKS = ("lowrank_recovery", "linreg", "toy_mlp")
OPTIMIZERS = ("riemann_sgd", "riemann_hb", "riemann_adam_sim", "euclid_sgd", "euclid_adam")
INITS = ("ortho_a", "zero_b_eps", "loi")

CSV_HEADER = "step,loss,riem_grad_norm,wall_nanos"

NUMERICAL_ERRORS = (RankCollapse, DegenerateSpectrum, RankDeficient)

# toy_mlp architecture constants (not config keys; the task is fixed up to dims)
TOYMLP_HIDDEN = 16
TOYMLP_CLASSES = 4
TOYMLP_SAMPLES = 256


class ConfigError(Exception):
    """A config file or field failed validation."""


@dataclass
class ExperimentConfig:
    """One experiment: task, dimensions, optimizer, init, hyperparameters.

    ``rsvd_p = -1`` means "default to r". ``batch_size = 0`` means full
    batch. ``warmup_ratio < 0`` disables the step-size schedule (constant
    eta); values in [0, 1) enable linear warmup + decay.
    """

    task: str = "lowrank_recovery"
    m: int = 32
    n: int = 32
    r: int = 4
    true_rank: int = 4
    optimizer: str = "riemann_hb"
    init: str = "zero_b_eps"
    eta: float = 0.1
    beta: float = 0.0
    gamma: float = 0.9
    alpha: float = 1.0
    rsvd_p: int = -1
    rsvd_q: int = 3
    max_iters: int = 100
    batch_size: int = 0
    warmup_ratio: float = -1.0
    seed: int = 0
    output_path: str = ""
    ema_convention: str = "paper"

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; choose from {OPTIMIZERS}")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; choose from {INITS}")
        if min(self.m, self.n) < 1 or not 1 <= self.r <= min(self.m, self.n):
            raise ConfigError(f"invalid dims m={self.m}, n={self.n}, r={self.r}")
        if not 1 <= self.true_rank <= min(self.m, self.n):
            raise ConfigError(f"true_rank={self.true_rank} out of range")
        if self.init == "loi" and 2 * self.r > min(self.m, self.n):
            raise ConfigError("loi needs 2r <= min(m, n)")
        if self.optimizer.startswith("riemann") and self.init == "ortho_a":
            raise ConfigError(
                "ortho_a starts with B = 0, which is not a manifold point; "
                "use zero_b_eps for the Riemannian optimizers"
            )
        if self.eta <= 0:
            raise ConfigError("eta must be > 0")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta must be in [0, 1)")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must be in (0, 1)")
        if self.alpha == 0.0:
            raise ConfigError("alpha must be nonzero")
        if self.rsvd_p < -1 or self.rsvd_q < 0:
            raise ConfigError("rsvd_p must be >= -1 and rsvd_q >= 0")
        if self.max_iters < 0 or self.batch_size < 0:
            raise ConfigError("max_iters and batch_size must be >= 0")
        if self.warmup_ratio >= 1.0:
            raise ConfigError("warmup_ratio must be < 1 (negative disables the schedule)")
        if self.ema_convention not in ("paper", "standard"):
            raise ConfigError("ema_convention must be 'paper' or 'standard'")

    @property
    def rsvd_p_effective(self) -> int:
        return self.r if self.rsvd_p < 0 else self.rsvd_p


_CONVERTERS = {int: int, float: float, str: str}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text. Blank lines and '#' comments are
    skipped; unknown or repeated keys are errors."""
    spec = {f.name: f for f in fields(ExperimentConfig)}
    defaults = ExperimentConfig()
    seen: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in spec:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: repeated key {key!r}")
        caster = _CONVERTERS[type(getattr(defaults, key))]
        try:
            seen[key] = caster(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    cfg = ExperimentConfig(**seen)
    cfg.validate()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    riem_grad_norm: float
    wall_nanos: int


@dataclass
class Task:
    """A generated problem: frozen base weights plus a loss oracle."""

    W_base: np.ndarray
    oracle: GradientOracle
    info: dict = field(default_factory=dict)
    matrices: list = field(default_factory=list)  # (name, array) pairs for serialization


def _planted_factors(rng, m, n, t, scale=1.0):
    L = scale * rng.standard_normal((m, t))
    R = scale * rng.standard_normal((n, t))
    return L, R


def _lowrank_spectrum(L, R) -> np.ndarray:
    """Singular values of L @ R.T from the small core."""
    Rl = np.linalg.qr(L, mode="reduced")[1]
    Rr = np.linalg.qr(R, mode="reduced")[1]
    return np.linalg.svd(Rl @ Rr.T, compute_uv=False)


def gen_task(cfg: ExperimentConfig) -> Task:
    """Build the seeded synthetic task for a config. Identical seeds give
    byte-identical tasks (see :func:`serialize_task`)."""
    rng = np.random.default_rng(cfg.seed)
    m, n, t = cfg.m, cfg.n, cfg.true_rank
    if cfg.task == "lowrank_recovery":
        W = rng.standard_normal((m, n))
        L, R = _planted_factors(rng, m, n, t)
        oracle = QuadraticOracle(T_dense=W, T_factors=(L, R))
        s = _lowrank_spectrum(L, R)
        optimal = 0.0 if t <= cfg.r else 0.5 * float(np.sum(s[cfg.r :] ** 2))
        info = {"optimal_loss": optimal, "planted": (L, R), "initial_loss": 0.5 * float(np.sum(s**2))}
        return Task(W, oracle, info, [("W", W), ("planted_L", L), ("planted_R", R)])
    if cfg.task == "linreg":
        n_samples = max(4 * m, 16, cfg.batch_size)
        W = rng.standard_normal((m, n))
        L, R = _planted_factors(rng, m, n, t)
        D = rng.standard_normal((n_samples, m))
        O = D @ W + (D @ L) @ R.T
        oracle = LinregOracle(D, O, batch_size=cfg.batch_size or None, seed=cfg.seed + 1)
        info = {"optimal_loss": 0.0 if t <= cfg.r else None, "planted": (L, R)}
        return Task(W, oracle, info, [("W", W), ("D", D), ("O", O)])
    if cfg.task == "toy_mlp":
        W = rng.standard_normal((m, n)) / np.sqrt(m)
        L, R = _planted_factors(rng, m, n, t, scale=(m * t) ** -0.25)
        X = rng.standard_normal((TOYMLP_SAMPLES, m))
        W1 = rng.standard_normal((n, TOYMLP_HIDDEN)) / np.sqrt(n)
        W2 = rng.standard_normal((TOYMLP_HIDDEN, TOYMLP_CLASSES)) / np.sqrt(TOYMLP_HIDDEN)
        teacher = np.tanh(np.tanh(X @ W + (X @ L) @ R.T) @ W1) @ W2
        labels = np.argmax(teacher, axis=1)
        oracle = MlpOracle(
            TOYMLP_HIDDEN,
            TOYMLP_CLASSES,
            X,
            labels,
            seed=cfg.seed + 2,
            W1=W1,
            W2=W2,
            batch_size=cfg.batch_size or None,
        )
        info = {"optimal_loss": None, "planted": (L, R)}
        mats = [("W", W), ("X", X), ("labels", labels[None, :].astype(np.float64)),
                ("W1", W1), ("W2", W2)]
        return Task(W, oracle, info, mats)
    raise ConfigError(f"unknown task {cfg.task!r}")


def serialize_task(task: Task) -> bytes:
    """Concatenated fixture-format dump of every task matrix (determinism probe)."""
    chunks = []
    for name, M in task.matrices:
        rows, cols = M.shape
        body = "\n".join(" ".join(format_double(v) for v in row) for row in M)
        chunks.append(f"# {name}\n{rows} {cols}\n{body}\n")
    return "".join(chunks).encode("utf-8")


def render_csv(records: list[StepRecord], trailing_comment: str | None = None) -> str:
    lines = [CSV_HEADER]
    for rec in records:
        lines.append(
            f"{rec.step},{format_double(rec.loss)},"
            f"{format_double(rec.riem_grad_norm)},{rec.wall_nanos}"
        )
    if trailing_comment is not None:
        lines.append(f"# {trailing_comment}")
    return "\n".join(lines) + "\n"


def _write_csv(path, records, trailing_comment=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_csv(records, trailing_comment))


def run_experiment(
    cfg: ExperimentConfig,
    csv_path: str | None = None,
    *,
    task: Task | None = None,
) -> list[StepRecord]:
    """Initialize, run ``max_iters`` optimizer steps, and emit step records.

    Row 0 holds the initial loss (its gradient-norm cell is nan: measuring
    it would cost an extra oracle round trip). Row i >= 1 holds the loss
    after step i and the norm of the gradient used by that step. On a
    numerical failure the partial CSV is written with a trailing comment
    line before the error propagates.
    """
    cfg.validate()
    if task is None:
        task = gen_task(cfg)
    oracle = task.oracle
    path = csv_path if csv_path is not None else (cfg.output_path or None)
    riemann = cfg.optimizer.startswith("riemann")
    records: list[StepRecord] = []

    def record(step: int, loss: float, gnorm: float, t0: int) -> None:
        records.append(StepRecord(step, loss, gnorm, time.perf_counter_ns() - t0))

    try:
        t0 = time.perf_counter_ns()
        rsvd_cfg = RsvdConfig(p=cfg.rsvd_p_effective, q=cfg.rsvd_q, seed=cfg.seed)
        W_start, start = baseline_init(
            cfg.init, task.W_base, cfg.r, cfg.seed,
            oracle=oracle, alpha=cfg.alpha, cfg=rsvd_cfg,
        )
        if riemann:
            hyper = RiemannHyper(
                eta=cfg.eta,
                beta=0.0 if cfg.optimizer == "riemann_sgd" else cfg.beta,
                gamma=cfg.gamma,
                simulate_adam=cfg.optimizer == "riemann_adam_sim",
                max_iters=max(cfg.max_iters, 1),
                ema_convention=cfg.ema_convention,
            )
            weights = EffectiveWeights(W_start, start)
            state = OptimizerState()
            record(0, oracle.loss(weights), float("nan"), t0)
            for i in range(1, cfg.max_iters + 1):
                t0 = time.perf_counter_ns()
                eta_i = (
                    lr_schedule(cfg.eta, i - 1, cfg.max_iters, cfg.warmup_ratio)
                    if cfg.warmup_ratio >= 0.0
                    else cfg.eta
                )
                weights, state = riemann_step(weights, state, oracle, hyper, eta=eta_i)
                record(i, oracle.loss(weights), state.rgrad_norm, t0)
                _advance(oracle)
        else:
            A, B = (start.A_L, start.B) if isinstance(start, FixedRankPoint) else start
            A, B = A.copy(), B.copy()
            vA = vB = None
            moments = AdamMoments.zeros(cfg.m, cfg.n, cfg.r)
            record(0, oracle.loss(EffectiveWeights(W_start, _pair(A, B))), float("nan"), t0)
            for i in range(1, cfg.max_iters + 1):
                t0 = time.perf_counter_ns()
                eta_i = (
                    lr_schedule(cfg.eta, i - 1, cfg.max_iters, cfg.warmup_ratio)
                    if cfg.warmup_ratio >= 0.0
                    else cfg.eta
                )
                if cfg.optimizer == "euclid_sgd":
                    A, B, vA, vB, gnorm = euclid_lora_sgd_step(
                        A, B, oracle, W_start, eta_i, cfg.beta, vA, vB
                    )
                else:
                    A, B, moments, gnorm = euclid_lora_adam_step(
                        A, B, moments, oracle, W_start, eta_i,
                        beta1=cfg.beta, beta2=cfg.gamma,
                    )
                record(i, oracle.loss(EffectiveWeights(W_start, _pair(A, B))), gnorm, t0)
                _advance(oracle)
    except NUMERICAL_ERRORS as exc:
        if path:
            _write_csv(path, records, f"error: {type(exc).__name__}: {exc}")
        raise
    if path:
        _write_csv(path, records)
    return records


def _pair(A, B):
    from .manifold import SkeletonPair

    return SkeletonPair(A, B)


def _advance(oracle) -> None:
    adv = getattr(oracle, "advance_batch", None)
    if adv is not None:
        adv()


@dataclass(frozen=True)
class CompareRow:
    config: str
    runs: int
    failures: int
    final_loss_mean: float
    final_loss_std: float
    final_loss_median: float
    loss_step10_median: float
    steps_to_threshold_median: float


def compare(
    named_configs: list[tuple[str, ExperimentConfig]],
    seeds: list[int],
    threshold: float = 1e-6,
) -> list[CompareRow]:
    """Run the config x seed cross product and aggregate final losses.

    Rows come back sorted by config name. Failed runs are counted per cell
    rather than aborting the table; statistics are over the successful
    runs (nan when none succeeded). A given seed produces the identical
    task for every config, so per-seed columns are paired.
    """
    if not named_configs or not seeds:
        raise ConfigError("compare needs at least one config and one seed")
    rows = []
    for name, cfg in sorted(named_configs, key=lambda item: item[0]):
        finals, step10s, to_thresh = [], [], []
        failures = 0
        for seed in seeds:
            run_cfg = replace(cfg, seed=seed, output_path="")
            try:
                recs = run_experiment(run_cfg)
            except NUMERICAL_ERRORS:
                failures += 1
                continue
            finals.append(recs[-1].loss)
            if len(recs) > 10:
                step10s.append(recs[10].loss)
            hit = next((r.step for r in recs if r.loss <= threshold), None)
            if hit is not None:
                to_thresh.append(hit)
        nan = float("nan")
        rows.append(
            CompareRow(
                config=name,
                runs=len(seeds),
                failures=failures,
                final_loss_mean=mean(finals) if finals else nan,
                final_loss_std=pstdev(finals) if len(finals) > 1 else (0.0 if finals else nan),
                final_loss_median=median(finals) if finals else nan,
                loss_step10_median=median(step10s) if step10s else nan,
                steps_to_threshold_median=float(median(to_thresh)) if to_thresh else nan,
            )
        )
    return rows


def render_summary(rows: list[CompareRow]) -> str:
    header = (
        "config,runs,failures,final_loss_mean,final_loss_std,"
        "final_loss_median,loss_step10_median,steps_to_threshold_median"
    )
    lines = [header]
    for r in rows:
        lines.append(
            f"{r.config},{r.runs},{r.failures},{format_double(r.final_loss_mean)},"
            f"{format_double(r.final_loss_std)},{format_double(r.final_loss_median)},"
            f"{format_double(r.loss_step10_median)},{format_double(r.steps_to_threshold_median)}"
        )
    return "\n".join(lines) + "\n"
