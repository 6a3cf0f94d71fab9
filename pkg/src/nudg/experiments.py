"""End-to-end recipes on the two-dimensional task: the ERM versus ERM-NU
comparison, the lambda sweep of stable rank against OOD accuracy, and
decision-boundary grids, with their CSV and SVG exports.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .models import LinearModel, Model, Objective, accuracy, forward, predict
from .rng import evaluation_seed
from .sampler import DomainTag, Synthetic2dSpec, sample_synthetic2d
from .trainer import TrainConfig, TrainingDivergedError, init_linear_model, train

__all__ = [
    "Synth2dSettings",
    "ComparisonRow",
    "ComparisonResult",
    "SweepRecord",
    "SweepResult",
    "BoundaryGrid",
    "DEFAULT_LAMBDAS",
    "run_synthetic2d_comparison",
    "run_lambda_sweep",
    "export_boundary_grid",
    "oracle_model",
    "boundary_angle_deg",
    "write_comparison_csv",
    "write_sweep_csv",
    "write_boundary_csv",
    "plot_sweep_svg",
]

DEFAULT_LAMBDAS = (0.0, 1e-3, 10**-2.5, 1e-2, 10**-1.5, 1e-1)


@dataclass(frozen=True)
class Synth2dSettings:
    """Training and evaluation sizes for the two-dimensional task.

    The nuclear norm is averaged over row blocks of ``nu_batch_size``; a single
    block over the whole training set makes the penalty grow with ``n_train``
    and drives the features to zero at the default lambda.
    """

    n_train: int = 10_000
    eval_n: int = 100_000
    learning_rate: float = 0.1
    max_steps: int = 2_000
    grad_tol: float = 1e-7
    backtracking: bool = False
    nu_batch_size: Optional[int] = 32
    flip_prob: float = 0.7
    log_every: int = 100

    def __post_init__(self):
        if self.n_train < 2 or self.eval_n < 1:
            raise ValueError("n_train must be at least 2 and eval_n positive")
        if self.nu_batch_size is not None and self.nu_batch_size < 1:
            raise ValueError("nu_batch_size must be positive")

    def train_config(self, batch, seed: int) -> TrainConfig:
        return TrainConfig(
            batch=batch,
            learning_rate=self.learning_rate,
            max_steps=self.max_steps,
            grad_tol=self.grad_tol,
            seed=seed,
            backtracking=self.backtracking,
            nu_batch_size=self.nu_batch_size,
            log_every=self.log_every,
        )


def _data(settings: Synth2dSettings, seed: int):
    train_batch = sample_synthetic2d(Synthetic2dSpec(settings.n_train, seed, DomainTag.ID, settings.flip_prob))
    ev = evaluation_seed(seed)
    id_batch = sample_synthetic2d(Synthetic2dSpec(settings.eval_n, ev, DomainTag.ID, settings.flip_prob))
    ood_batch = sample_synthetic2d(Synthetic2dSpec(settings.eval_n, ev, DomainTag.OOD, settings.flip_prob))
    return train_batch, id_batch, ood_batch


def _se(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


@dataclass(frozen=True)
class ComparisonRow:
    objective: str
    lam: float
    id_acc: float
    ood_acc: float
    id_se: float
    ood_se: float
    steps: int
    converged: bool


@dataclass
class ComparisonResult:
    seed: int
    rows: list
    models: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)

    def row(self, objective: str) -> ComparisonRow:
        return next(r for r in self.rows if r.objective == objective)


def oracle_model() -> LinearModel:
    """Classifier on ``x1`` alone; exact on both domains by construction."""
    return LinearModel(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([1.0, 0.0]))


def run_synthetic2d_comparison(
    seed: int,
    lam: float = 0.01,
    settings: Synth2dSettings = Synth2dSettings(),
) -> ComparisonResult:
    """Train ERM and ERM-NU from the same initialization; score both and the oracle."""
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    train_batch, id_batch, ood_batch = _data(settings, seed)
    init = init_linear_model(2, 2, seed)
    config = settings.train_config(train_batch, seed)
    n = settings.eval_n
    out = ComparisonResult(seed, [])
    for name, objective in (("ERM", Objective.erm()), ("ERM_NU", Objective.nu(lam))):
        res = train(init, objective, config)
        ia, oa = accuracy(res.model, id_batch), accuracy(res.model, ood_batch)
        out.rows.append(ComparisonRow(name, objective.lam, ia, oa, _se(ia, n), _se(oa, n), res.steps, res.converged))
        out.models[name] = res.model
        out.results[name] = res
    oracle = oracle_model()
    ia, oa = accuracy(oracle, id_batch), accuracy(oracle, ood_batch)
    out.rows.append(ComparisonRow("ORACLE_X1", 0.0, ia, oa, _se(ia, n), _se(oa, n), 0, True))
    out.models["ORACLE_X1"] = oracle
    return out


@dataclass(frozen=True)
class SweepRecord:
    lam: float
    id_accuracy: float
    ood_accuracy: float
    stable_rank: float
    nuclear_norm: float
    steps: int
    converged: bool


@dataclass
class SweepResult:
    seed: int
    settings: Synth2dSettings
    records: list
    # set when a point diverged; records then hold the points before it
    aborted: Optional[str] = None
    models: dict = field(default_factory=dict)

    @property
    def lambdas(self) -> list:
        return [r.lam for r in self.records]


def _sweep_point(lam, init, config, id_batch, ood_batch):
    try:
        res = train(init, Objective.nu(lam), config)
    except TrainingDivergedError as exc:
        return lam, None, str(exc)
    features, _ = forward(res.model, ood_batch)
    record = SweepRecord(
        lam,
        accuracy(res.model, id_batch),
        accuracy(res.model, ood_batch),
        float(linalg.stable_rank(features)),
        float(linalg.nuclear_norm(features)),
        res.steps,
        res.converged,
    )
    return lam, (record, res.model), None


def run_lambda_sweep(
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    settings: Synth2dSettings = Synth2dSettings(),
    seed: int = 0,
    threads: int = 1,
) -> SweepResult:
    """One ERM-NU model per lambda from a shared initialization.

    Stable rank and nuclear norm are measured on the OOD evaluation features.
    """
    lambdas = [float(v) for v in lambdas]
    if not lambdas:
        raise ValueError("need at least one lambda")
    if any(not v >= 0 for v in lambdas):
        raise ValueError("lambdas must be non-negative")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be strictly increasing")
    train_batch, id_batch, ood_batch = _data(settings, seed)
    init = init_linear_model(2, 2, seed)
    config = settings.train_config(train_batch, seed)

    def point(lam):
        return _sweep_point(lam, init, config, id_batch, ood_batch)

    if threads <= 1:
        outcomes = [point(lam) for lam in lambdas]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(point, lambdas))

    result = SweepResult(seed, settings, [])
    for lam, done, error in outcomes:
        if error is not None:
            result.aborted = f"lambda={lam!r}: {error}"
            break
        record, model = done
        result.records.append(record)
        result.models[lam] = model
    return result


@dataclass(frozen=True)
class BoundaryGrid:
    resolution: int
    box: tuple
    labels: np.ndarray  # labels[i, j] is the prediction at (xs[j], ys[i])

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.box[0], self.box[1], self.resolution)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.box[2], self.box[3], self.resolution)


def export_boundary_grid(model: Model, resolution: int = 200) -> BoundaryGrid:
    """Predicted labels at ``resolution`` x ``resolution`` points spanning [-1, 1]^2."""
    if model.input_dim != 2:
        raise ValueError(f"boundary grids need a 2-D input model, got input dim {model.input_dim}")
    if resolution < 50:
        raise ValueError("resolution must be at least 50")
    box = (-1.0, 1.0, -1.0, 1.0)
    axis = np.linspace(-1.0, 1.0, resolution)
    gx, gy = np.meshgrid(axis, axis)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    labels = predict(model, pts).reshape(resolution, resolution).astype(np.int8)
    return BoundaryGrid(resolution, box, labels)


def boundary_angle_deg(model: Model) -> float:
    """Angle between the decision line and the vertical axis ``x1 = 0``."""
    if isinstance(model, LinearModel):
        v = model.feature_map.T @ model.head
    else:
        v = model.w
    if v.shape[0] != 2:
        raise ValueError("boundary angle needs a 2-D input model")
    return math.degrees(math.atan2(abs(v[1]), abs(v[0])))


def _g(v: float) -> str:
    return f"{v:.17g}"


def write_comparison_csv(result: ComparisonResult, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("objective,lambda,id_acc,ood_acc,id_se,ood_se,steps,converged,seed\n")
        for r in result.rows:
            fh.write(
                ",".join(
                    [r.objective, _g(r.lam), _g(r.id_acc), _g(r.ood_acc), _g(r.id_se), _g(r.ood_se),
                     str(r.steps), str(r.converged).lower(), str(result.seed)]
                )
                + "\n"
            )


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("lambda,id_accuracy,ood_accuracy,stable_rank,nuclear_norm,steps,converged,seed\n")
        for r in result.records:
            fh.write(
                ",".join(
                    [_g(r.lam), _g(r.id_accuracy), _g(r.ood_accuracy), _g(r.stable_rank), _g(r.nuclear_norm),
                     str(r.steps), str(r.converged).lower(), str(result.seed)]
                )
                + "\n"
            )
        if result.aborted:
            fh.write(f"# aborted: {result.aborted}\n")


def write_boundary_csv(grid: BoundaryGrid, path) -> None:
    xs, ys = grid.xs, grid.ys
    with open(path, "w", newline="\n") as fh:
        fh.write("x1,x2,label\n")
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                fh.write(f"{_g(x)},{_g(y)},{int(grid.labels[i, j])}\n")


def plot_sweep_svg(result: SweepResult, path) -> None:
    """Lambda on x; stable rank on the left axis, OOD accuracy on the right."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    lams = np.array(result.lambdas)
    # lambda = 0 has no place on a log axis; draw it one decade below the smallest positive value
    positive = lams[lams > 0]
    floor = positive.min() / 10.0 if positive.size else 1e-4
    xs = np.where(lams > 0, lams, floor)
    with plt.rc_context({"svg.hashsalt": "nudg-sweep", "svg.fonttype": "none"}):
        fig, left = plt.subplots(figsize=(6.0, 4.0))
        left.plot(xs, [r.stable_rank for r in result.records], "o-", color="tab:blue")
        left.set_xscale("log")
        left.set_xlabel("lambda (0 drawn at the left edge)")
        left.set_ylabel("stable rank of OOD features", color="tab:blue")
        right = left.twinx()
        right.plot(xs, [r.ood_accuracy for r in result.records], "s--", color="tab:red")
        right.set_ylabel("OOD accuracy", color="tab:red")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
