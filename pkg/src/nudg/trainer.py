"""Full-batch gradient descent for every objective, the support-constrained
ERM-rank search, and the symmetry-reduced (alpha, beta) solver for ERM-l2.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import linalg
from .losses import logistic, logistic_prime, logistic_second
from .models import (
    IncompatibleObjectiveError,
    LinearModel,
    Model,
    Objective,
    ObjectiveKind,
    TheoryModel,
    forward,
    gradient,
    risk,
    risk_and_gradient,
)
from .rng import derive_seed, uniforms
from .sampler import SampleBatch, TheorySpec, iter_theory_chunks

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "TrajectoryRow",
    "train",
    "train_rank_constrained",
    "AlphaBetaSolution",
    "solve_alpha_beta",
    "reduced_sums",
    "sandwich_cov",
    "init_linear_model",
    "write_trajectory_csv",
    "DIVERGENCE_RISK",
    "EXHAUSTIVE_MAX_DIM",
]

DIVERGENCE_RISK = 1e6
EXHAUSTIVE_MAX_DIM = 20
ARMIJO_SHRINK = 0.5
ARMIJO_C = 1e-4
MIN_STEP = 1e-14


class TrainingDivergedError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch: SampleBatch
    learning_rate: float = 0.5
    max_steps: int = 50_000
    grad_tol: float = 1e-7
    seed: int = 0
    backtracking: bool = True
    nu_batch_size: Optional[int] = None
    log_every: int = 100

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be at least 1")

    def replace(self, **changes) -> "TrainConfig":
        fields = dict(self.__dict__)
        fields.update(changes)
        return TrainConfig(**fields)


class TrajectoryRow(NamedTuple):
    step: int
    risk: float
    grad_norm: float
    nuclear_norm: float
    stable_rank: float


@dataclass
class TrainResult:
    model: Model
    steps: int
    risk: float
    grad_norm: float
    converged: bool
    risks: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)


def init_linear_model(d_in: int, d_out: int, seed: int, scale: float = 0.1) -> LinearModel:
    """Entries i.i.d. uniform on [-scale, scale] from the seed's "init" stream."""
    u = uniforms(derive_seed(seed, "init"), 0, 1, d_out * d_in + d_out)[0]
    vals = scale * (2.0 * u - 1.0)
    return LinearModel(vals[: d_out * d_in].reshape(d_out, d_in), vals[d_out * d_in :])


def _feature_stats(model: Model, batch: SampleBatch) -> tuple[float, float]:
    if not isinstance(model, LinearModel):
        # SVD of an (n x d) feature matrix per logged step is not worth it for the
        # wide theory model
        return math.nan, math.nan
    features, _ = forward(model, batch)
    sigma = linalg.svd(features).sigma
    nuc = float(sigma.sum())
    sr = float((sigma**2).sum() / sigma[0] ** 2) if sigma[0] > 0 else math.nan
    return nuc, sr


def _descend(
    x0: np.ndarray,
    value: Callable[[np.ndarray], float],
    value_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    config: TrainConfig,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    on_log: Optional[Callable[[int, np.ndarray, float, float], None]] = None,
):
    """Gradient descent with optional Armijo backtracking on a flat parameter vector.

    Returns ``(x, steps, risk, grad_norm, converged, risks)``.
    """
    x = x0.copy()
    f, g = value_grad(x)
    gnorm = float(np.max(np.abs(g)))
    risks = [f]
    steps = 0
    if on_log is not None:
        on_log(0, x, f, gnorm)
    while steps < config.max_steps and gnorm >= config.grad_tol:
        lr = config.learning_rate
        while True:
            x_new = x - lr * g
            if project is not None:
                x_new = project(x_new)
            if not config.backtracking:
                f_new, g_new = value_grad(x_new)
                break
            f_new = value(x_new)
            if f_new <= f - ARMIJO_C * lr * float(g @ g):
                break
            lr *= ARMIJO_SHRINK
            if lr < MIN_STEP:
                break
        if not config.backtracking and (not math.isfinite(f_new) or f_new > DIVERGENCE_RISK):
            raise TrainingDivergedError(
                f"risk reached {f_new} at step {steps + 1}; reduce the learning rate"
            )
        if lr < MIN_STEP:
            # no descent along -g at machine precision
            break
        x, f = x_new, f_new
        steps += 1
        risks.append(f)
        g = g_new if not config.backtracking else value_grad(x)[1]
        gnorm = float(np.max(np.abs(g)))
        if on_log is not None and steps % config.log_every == 0:
            on_log(steps, x, f, gnorm)
    if on_log is not None:
        on_log(steps, x, f, gnorm)
    return x, steps, f, gnorm, gnorm < config.grad_tol, risks


def train(model_init: Model, objective: Objective, config: TrainConfig) -> TrainResult:
    """Minimize ``risk(model, config.batch, objective)`` from ``model_init``.

    For ERM_RANK with a TheoryModel carrying a support, the iterate is kept on
    that support; use ``train_rank_constrained`` to search supports.
    """
    batch = config.batch
    if objective.kind == ObjectiveKind.ERM_RANK:
        if not isinstance(model_init, TheoryModel):
            raise IncompatibleObjectiveError("ERM_RANK requires a TheoryModel")
    risk(model_init, batch, objective, config.nu_batch_size)  # validates the pairing

    project = None
    if isinstance(model_init, TheoryModel) and model_init.support is not None:
        mask = np.zeros(model_init.input_dim, dtype=bool)
        mask[list(model_init.support)] = True

        def project(v):
            v = v.copy()
            v[~mask] = 0.0
            return v

    def value(v):
        return risk(model_init.with_params(v), batch, objective, config.nu_batch_size)

    def value_grad(v):
        f, g = risk_and_gradient(model_init.with_params(v), batch, objective, config.nu_batch_size)
        g = g.params()
        return f, (g if project is None else project(g))

    trajectory: list[TrajectoryRow] = []

    def on_log(step, v, f, gnorm):
        if trajectory and trajectory[-1].step == step:
            return
        nuc, sr = _feature_stats(model_init.with_params(v), batch)
        trajectory.append(TrajectoryRow(step, f, gnorm, nuc, sr))

    x, steps, f, gnorm, converged, risks = _descend(
        model_init.params(), value, value_grad, config, project, on_log
    )
    return TrainResult(model_init.with_params(x), steps, f, gnorm, converged, risks, trajectory)


def _fit_support(support: Sequence[int], objective: Objective, config: TrainConfig) -> TrainResult:
    """Train from zeros on the columns in ``support`` and embed back into ``d`` coordinates."""
    batch = config.batch
    d = batch.dim
    support = tuple(sorted(support))
    sub = SampleBatch(np.ascontiguousarray(batch.inputs[:, list(support)]), batch.labels, batch.domain)
    sub_objective = Objective(ObjectiveKind.ERM_RANK, 0.0, len(support))
    res = train(TheoryModel(np.zeros(len(support))), sub_objective, config.replace(batch=sub))
    w = np.zeros(d)
    w[list(support)] = res.model.w
    res.model = TheoryModel(w, support)
    return res


def _greedy_supports(objective: Objective, config: TrainConfig) -> list[tuple]:
    """Forward selection: add the coordinate with the steepest first-order risk decrease."""
    batch = config.batch
    support: list[int] = []
    res = None
    for _ in range(objective.b_rank):
        if res is None:
            margins = np.zeros(batch.n)
        else:
            margins = batch.labels * (batch.inputs @ res.model.w)
        g = (logistic_prime(margins) * batch.labels) @ batch.inputs / batch.n
        g[support] = 0.0
        support.append(int(np.argmax(np.abs(g))))
        res = _fit_support(support, objective, config)
    return [tuple(sorted(support))]


def _iht_support(objective: Objective, config: TrainConfig) -> list[tuple]:
    """Iterative hard thresholding: gradient step, then keep the top-B magnitudes."""
    batch = config.batch
    w = np.zeros(batch.dim)
    plain = Objective(ObjectiveKind.ERM)
    lr = config.learning_rate
    b = objective.b_rank
    for _ in range(config.max_steps):
        g = gradient(TheoryModel(w), batch, plain).w
        w_new = w - lr * g
        keep = np.argsort(-np.abs(w_new), kind="stable")[:b]
        mask = np.zeros_like(w, dtype=bool)
        mask[keep] = True
        w_new[~mask] = 0.0
        if np.max(np.abs(w_new - w)) < config.grad_tol:
            w = w_new
            break
        w = w_new
    return [tuple(sorted(int(j) for j in np.argsort(-np.abs(w), kind="stable")[:b]))]


def train_rank_constrained(
    objective: Objective,
    support_strategy: str,
    config: TrainConfig,
    support: Optional[Sequence[int]] = None,
) -> TrainResult:
    """Minimize the plain risk subject to ``||w||_0 <= b_rank``.

    Strategies: ``oracle`` (fit ``support``), ``exhaustive`` (every support of
    size ``b_rank``, d <= 20), ``greedy``, ``iht``, or ``auto`` (exhaustive when
    feasible, else greedy). Every candidate support is refit from zeros with
    ``config`` and the lowest-risk fit is returned; ``result.candidates`` lists
    ``(support, risk)`` for each fit.
    """
    if objective.kind != ObjectiveKind.ERM_RANK:
        raise IncompatibleObjectiveError("train_rank_constrained needs an ERM_RANK objective")
    d = config.batch.dim
    b = objective.b_rank
    if b > d:
        raise IncompatibleObjectiveError("b_rank exceeds the number of coordinates")
    if support_strategy == "auto":
        support_strategy = "exhaustive" if d <= EXHAUSTIVE_MAX_DIM else "greedy"

    if support_strategy == "oracle":
        if support is None or not 1 <= len(set(support)) <= b:
            raise ValueError("oracle strategy needs a support of size 1..b_rank")
        candidates = [tuple(sorted(set(int(j) for j in support)))]
    elif support_strategy == "exhaustive":
        if d > EXHAUSTIVE_MAX_DIM:
            raise ValueError(f"exhaustive search refused for d={d} > {EXHAUSTIVE_MAX_DIM}")
        candidates = list(itertools.combinations(range(d), b))
    elif support_strategy == "greedy":
        candidates = _greedy_supports(objective, config)
    elif support_strategy == "iht":
        candidates = _iht_support(objective, config)
    else:
        raise ValueError(f"unknown support strategy {support_strategy!r}")

    best = None
    scored = []
    for cand in candidates:
        res = _fit_support(cand, objective, config)
        scored.append((cand, res.risk))
        if best is None or res.risk < best.risk:
            best = res
    best.candidates = scored
    return best


def reduced_sums(spec: TheorySpec) -> np.ndarray:
    """Per-sample ``(sum_R z_j, sum_U z_j)`` for the recovered latents of ``spec``."""
    out = np.empty((spec.n, 2))
    row = 0
    for chunk in iter_theory_chunks(spec):
        z = chunk.inputs * chunk.labels[:, None]
        out[row : row + chunk.n, 0] = z[:, : spec.r].sum(axis=1)
        out[row : row + chunk.n, 1] = z[:, spec.r :].sum(axis=1)
        row += chunk.n
    return out


class AlphaBetaSolution(NamedTuple):
    alpha: float
    beta: float
    alpha_se: float
    beta_se: float
    diff_se: float
    ratio_se: float
    risk: float
    grad_norm: float
    steps: int
    converged: bool
    n: int


def sandwich_cov(s: np.ndarray, margins: np.ndarray, hess_penalty: np.ndarray) -> np.ndarray:
    """Sampling covariance of an M-estimator: ``H^{-1} Cov(score) H^{-1} / n``."""
    n = s.shape[0]
    h = (s * logistic_second(margins)[:, None]).T @ s / n + hess_penalty
    score = s * logistic_prime(margins)[:, None]
    sigma = np.cov(score, rowvar=False)
    h_inv = np.linalg.inv(h)
    return h_inv @ np.atleast_2d(sigma) @ h_inv / n


def solve_alpha_beta(
    spec: TheorySpec,
    lam: float,
    config: Optional[TrainConfig] = None,
    sums: Optional[np.ndarray] = None,
) -> AlphaBetaSolution:
    """ERM-l2 restricted to ``w = alpha`` on R and ``w = beta`` on U.

    The risk is the sample average over ``spec``'s batch (common random numbers
    across iterations), so the reduced problem is a deterministic, strictly
    convex function of two variables.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    s = reduced_sums(spec) if sums is None else sums
    n = s.shape[0]
    counts = np.array([spec.r, spec.d - spec.r], dtype=np.float64)
    if config is None:
        config = TrainConfig(batch=SampleBatch(np.zeros((1, 2)), np.ones(1), spec.domain))

    def value(v):
        return float(np.mean(logistic(s @ v))) + 0.5 * lam * float(counts @ (v * v))

    def value_grad(v):
        m = s @ v
        f = float(np.mean(logistic(m))) + 0.5 * lam * float(counts @ (v * v))
        return f, logistic_prime(m) @ s / n + lam * counts * v

    v, steps, f, gnorm, converged, _ = _descend(np.zeros(2), value, value_grad, config)
    cov = sandwich_cov(s, s @ v, lam * np.diag(counts))
    alpha, beta = float(v[0]), float(v[1])
    # delta method for alpha / beta
    jac = np.array([1.0 / beta, -alpha / beta**2]) if beta != 0 else np.array([math.inf, math.inf])
    ratio_se = float(math.sqrt(max(jac @ cov @ jac, 0.0))) if beta != 0 else math.inf
    return AlphaBetaSolution(
        alpha,
        beta,
        float(math.sqrt(cov[0, 0])),
        float(math.sqrt(cov[1, 1])),
        float(math.sqrt(max(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1], 0.0))),
        ratio_se,
        f,
        gnorm,
        steps,
        converged,
        n,
    )


def write_trajectory_csv(result: TrainResult, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("step,risk,grad_norm,nuclear_norm,stable_rank\n")
        for row in result.trajectory:
            fh.write(",".join([str(row.step)] + [_fmt(v) for v in row[1:]]) + "\n")


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else f"{v:.17g}"
