"""Linear models, the four training objectives, risks and analytic gradients."""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import linalg
from .losses import logistic, logistic_prime
from .sampler import SampleBatch

__all__ = [
    "LinearModel",
    "TheoryModel",
    "Model",
    "ObjectiveKind",
    "Objective",
    "IncompatibleObjectiveError",
    "forward",
    "scores",
    "predict",
    "accuracy",
    "risk",
    "gradient",
    "risk_and_gradient",
    "nuclear_penalty",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class LinearModel:
    """``Phi(x) = A x`` followed by a linear head; score ``head . A x``."""

    feature_map: np.ndarray
    head: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.feature_map, dtype=np.float64)
        h = np.asarray(self.head, dtype=np.float64).reshape(-1)
        if a.ndim != 2 or a.shape[0] != h.shape[0] or a.shape[0] < 1:
            raise ValueError(f"feature map {a.shape} does not match head {h.shape}")
        if not (np.isfinite(a).all() and np.isfinite(h).all()):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "feature_map", a)
        object.__setattr__(self, "head", h)

    @property
    def input_dim(self) -> int:
        return self.feature_map.shape[1]

    def params(self) -> np.ndarray:
        return np.concatenate([self.feature_map.ravel(), self.head])

    def with_params(self, vec: np.ndarray) -> "LinearModel":
        k = self.feature_map.size
        return LinearModel(vec[:k].reshape(self.feature_map.shape), vec[k:])


@dataclass(frozen=True)
class TheoryModel:
    """``f_w(x) = sum_j w_j x_j`` with the head fixed to ones."""

    w: np.ndarray
    support: Optional[tuple] = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.isfinite(w).all():
            raise ValueError("model parameters must be finite")
        if self.support is not None:
            support = tuple(sorted(int(j) for j in self.support))
            off = np.ones(w.shape[0], dtype=bool)
            off[list(support)] = False
            if np.any(w[off] != 0):
                raise ValueError("weights outside the support must be zero")
            object.__setattr__(self, "support", support)
        object.__setattr__(self, "w", w)

    @property
    def input_dim(self) -> int:
        return self.w.shape[0]

    def params(self) -> np.ndarray:
        return self.w.copy()

    def with_params(self, vec: np.ndarray) -> "TheoryModel":
        return TheoryModel(np.asarray(vec, dtype=np.float64).copy(), self.support)


Model = Union[LinearModel, TheoryModel]


class ObjectiveKind(str, enum.Enum):
    ERM = "ERM"
    ERM_NU = "ERM_NU"
    ERM_L2 = "ERM_L2"
    ERM_RANK = "ERM_RANK"


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    lam: float = 0.0
    b_rank: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.kind == ObjectiveKind.ERM_RANK:
            if self.b_rank is None or self.b_rank < 1:
                raise ValueError("ERM_RANK needs b_rank >= 1")

    @classmethod
    def erm(cls):
        return cls(ObjectiveKind.ERM)

    @classmethod
    def nu(cls, lam: float):
        return cls(ObjectiveKind.ERM_NU, lam)

    @classmethod
    def l2(cls, lam: float):
        return cls(ObjectiveKind.ERM_L2, lam)

    @classmethod
    def rank(cls, b_rank: int):
        return cls(ObjectiveKind.ERM_RANK, 0.0, b_rank)


class IncompatibleObjectiveError(ValueError):
    pass


def _check(model: Model, batch: SampleBatch, objective: Optional[Objective] = None) -> None:
    if batch.dim != model.input_dim:
        raise ValueError(f"batch width {batch.dim} does not match model input {model.input_dim}")
    if objective is None:
        return
    if objective.kind in (ObjectiveKind.ERM_L2, ObjectiveKind.ERM_RANK) and not isinstance(
        model, TheoryModel
    ):
        raise IncompatibleObjectiveError(f"{objective.kind.value} requires a TheoryModel")
    if objective.kind == ObjectiveKind.ERM_RANK and objective.b_rank > model.input_dim:
        raise IncompatibleObjectiveError("b_rank exceeds the number of coordinates")


def _features(model: Model, x: np.ndarray) -> np.ndarray:
    if isinstance(model, LinearModel):
        return x @ model.feature_map.T
    return x * model.w


def scores(model: Model, x: np.ndarray) -> np.ndarray:
    if isinstance(model, LinearModel):
        return x @ (model.feature_map.T @ model.head)
    return x @ model.w


def forward(model: Model, batch: SampleBatch) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix ``Phi(X)`` (one row per sample) and margins ``y * score``."""
    _check(model, batch)
    return _features(model, batch.inputs), batch.labels * scores(model, batch.inputs)


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    """Sign of the score; a score of exactly zero predicts +1."""
    return np.where(scores(model, np.asarray(x, dtype=np.float64)) >= 0, 1.0, -1.0)


def accuracy(model: Model, batch: SampleBatch) -> float:
    _check(model, batch)
    return float(np.mean(predict(model, batch.inputs) == batch.labels))


def _blocks(features: np.ndarray, block_size: Optional[int]) -> list[np.ndarray]:
    """Full-size row blocks stacked in one array, plus a shorter tail if any."""
    n = features.shape[0]
    if block_size is None or block_size >= n:
        return [features[None]]
    full = (n // block_size) * block_size
    out = [features[:full].reshape(n // block_size, block_size, -1)]
    if full < n:
        out.append(features[full:][None])
    return out


def nuclear_penalty(features: np.ndarray, block_size: Optional[int] = None) -> float:
    """Mean nuclear norm over row blocks of ``block_size`` (whole matrix when None)."""
    norms = np.concatenate([np.atleast_1d(linalg.nuclear_norm(b)) for b in _blocks(features, block_size)])
    return float(norms.mean())


def _warn_small_batch(features: np.ndarray, block_size: Optional[int]) -> None:
    rows = features.shape[0] if block_size is None else min(block_size, features.shape[0])
    if rows <= features.shape[1]:
        warnings.warn(
            f"nuclear-norm batch of {rows} rows does not exceed the feature dimension "
            f"{features.shape[1]}; the penalty cannot reduce rank",
            stacklevel=3,
        )


def risk_and_gradient(
    model: Model,
    batch: SampleBatch,
    objective: Objective,
    nu_batch_size: Optional[int] = None,
    *,
    with_gradient: bool = True,
) -> tuple[float, Optional[Model]]:
    """Objective value and its gradient (as a same-shaped model) from one forward pass."""
    _check(model, batch, objective)
    x, y = batch.inputs, batch.labels
    features, margins = forward(model, batch)
    value = float(np.mean(logistic(margins)))

    g_features = None
    if objective.kind == ObjectiveKind.ERM_NU and objective.lam > 0:
        _warn_small_batch(features, nu_batch_size)
        blocks = _blocks(features, nu_batch_size)
        count = sum(b.shape[0] for b in blocks)
        parts = [linalg.svd(b) for b in blocks]
        value += objective.lam * float(sum(p.sigma.sum() for p in parts)) / count
        if with_gradient:
            keep = [(p.sigma > linalg.EPS_RANK * p.sigma[..., :1]).astype(np.float64) for p in parts]
            g_features = np.concatenate(
                [
                    ((p.u * k[..., None, :]) @ p.vt).reshape(-1, features.shape[1])
                    for p, k in zip(parts, keep)
                ]
            ) / count
    elif objective.kind == ObjectiveKind.ERM_L2:
        value += 0.5 * objective.lam * float(model.w @ model.w)
    if not with_gradient:
        return value, None

    # d(mean loss)/d(score_i)
    ds = logistic_prime(margins) * y / batch.n
    if isinstance(model, LinearModel):
        grad_a = np.outer(model.head, ds @ x)
        grad_h = ds @ features
        if g_features is not None:
            grad_a = grad_a + objective.lam * (g_features.T @ x)
        return value, LinearModel(grad_a, grad_h)

    grad_w = ds @ x
    if g_features is not None:
        grad_w = grad_w + objective.lam * np.einsum("ij,ij->j", g_features, x)
    elif objective.kind == ObjectiveKind.ERM_L2:
        grad_w = grad_w + objective.lam * model.w
    return value, TheoryModel(grad_w)


def risk(
    model: Model,
    batch: SampleBatch,
    objective: Objective,
    nu_batch_size: Optional[int] = None,
) -> float:
    """Mean logistic loss plus the objective's penalty.

    ``nu_batch_size`` splits the batch into contiguous row blocks and averages
    the nuclear norm of each block's features (per-batch regularization as in
    minibatch training); ``None`` uses the whole batch as one block.
    """
    return risk_and_gradient(model, batch, objective, nu_batch_size, with_gradient=False)[0]


def gradient(
    model: Model,
    batch: SampleBatch,
    objective: Objective,
    nu_batch_size: Optional[int] = None,
) -> Model:
    """Gradient of ``risk``, returned as a model of the same shape.

    The nuclear-norm term contributes ``lam * G^T X`` to the feature map, where
    ``G = U V^T`` is the subgradient of each block's feature matrix.
    """
    return risk_and_gradient(model, batch, objective, nu_batch_size)[1]


def save_model(model: Model, path) -> None:
    """JSON checkpoint: shapes plus row-major entries at full precision."""
    if isinstance(model, LinearModel):
        doc = {
            "type": "LinearModel",
            "feature_map": {"shape": list(model.feature_map.shape), "entries": model.feature_map.ravel().tolist()},
            "head": {"shape": [model.head.shape[0]], "entries": model.head.tolist()},
        }
    else:
        doc = {
            "type": "TheoryModel",
            "w": {"shape": [model.w.shape[0]], "entries": model.w.tolist()},
            "support": None if model.support is None else list(model.support),
        }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path) -> Model:
    doc = json.loads(Path(path).read_text())

    def arr(block):
        return np.array(block["entries"], dtype=np.float64).reshape(block["shape"])

    if doc["type"] == "LinearModel":
        return LinearModel(arr(doc["feature_map"]), arr(doc["head"]))
    support = doc.get("support")
    return TheoryModel(arr(doc["w"]), None if support is None else tuple(support))
