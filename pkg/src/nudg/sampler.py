"""Seeded samplers for the two synthetic data-generating processes.

Both processes draw a label ``y`` uniformly from {-1, +1} and latent
coordinates ``z_j`` whose sign agrees with the label; the emitted input is
``x_j = z_j * y``. Coordinates are one of two kinds:

* invariant: ``z ~ U[0, 1]``, identical in every domain;
* environmental: ``z ~ D_gamma`` (uniform on [0, 1] w.p. 1/2 + gamma, on
  [-1, 0] w.p. 1/2 - gamma), with ``gamma`` negated out of distribution.

Every row consumes ``1 + d`` uniforms (label, then one per coordinate, drawn by
inverse CDF), so batches are generated in independent row blocks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .rng import derive_seed, uniforms

__all__ = [
    "DomainTag",
    "OutOfRegimeError",
    "SampleBatch",
    "Synthetic2dSpec",
    "TheorySpec",
    "d_gamma_from_uniform",
    "sample_d_gamma",
    "sample_synthetic2d",
    "sample_theory",
    "iter_theory_chunks",
    "recovered_latents",
    "write_batch_csv",
]

CHUNK_ROWS = 8192


class DomainTag(str, enum.Enum):
    ID = "ID"
    OOD = "OOD"


class OutOfRegimeError(ValueError):
    """Parameters fall outside the regime the theory assumes."""


@dataclass(frozen=True)
class SampleBatch:
    inputs: np.ndarray
    labels: np.ndarray
    domain: DomainTag

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs must be (n, d) with one label per row")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def rows(self, start: int, stop: int) -> "SampleBatch":
        return SampleBatch(self.inputs[start:stop], self.labels[start:stop], self.domain)


@dataclass(frozen=True)
class Synthetic2dSpec:
    n: int
    seed: int
    domain: DomainTag = DomainTag.ID
    flip_prob: float = 0.7

    def __post_init__(self):
        if not 0.5 < self.flip_prob < 1.0:
            raise ValueError(f"flip_prob must lie in (0.5, 1), got {self.flip_prob}")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def env_gamma(self) -> float:
        """Signed bias of the environmental coordinate in this domain."""
        g = self.flip_prob - 0.5
        return g if self.domain == DomainTag.ID else -g


@dataclass(frozen=True)
class TheorySpec:
    r: int
    d: int
    gamma: float
    n: int
    seed: int
    domain: DomainTag = DomainTag.ID
    allow_out_of_regime: bool = False

    def __post_init__(self):
        if not 1 <= self.r < self.d:
            raise ValueError(f"need 1 <= r < d, got r={self.r}, d={self.d}")
        if not -0.5 < self.gamma < 0.5:
            raise ValueError(f"gamma must lie in (-1/2, 1/2), got {self.gamma}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not self.in_regime and not self.allow_out_of_regime:
            raise OutOfRegimeError(
                f"gamma={self.gamma} outside (3/sqrt(r), 1/2) = ({3 / math.sqrt(self.r):.4f}, 0.5); "
                "pass allow_out_of_regime=True (CLI: --allow-out-of-regime) for exploratory runs"
            )

    @property
    def in_regime(self) -> bool:
        return 3.0 / math.sqrt(self.r) < self.gamma < 0.5

    @property
    def env_gamma(self) -> float:
        return self.gamma if self.domain == DomainTag.ID else -self.gamma

    def replace(self, **changes) -> "TheorySpec":
        fields = dict(self.__dict__)
        fields.update(changes)
        return TheorySpec(**fields)


def d_gamma_from_uniform(u: np.ndarray, gamma) -> np.ndarray:
    """Inverse CDF of ``D_gamma``: the mass below zero is ``1/2 - gamma``."""
    q = 0.5 - np.asarray(gamma, dtype=np.float64)
    return np.where(u < q, u / q - 1.0, (u - q) / (1.0 - q))


def sample_d_gamma(gamma: float, n: int, seed: int) -> np.ndarray:
    if not -0.5 < gamma < 0.5:
        raise ValueError(f"gamma must lie in (-1/2, 1/2), got {gamma}")
    key = derive_seed(seed, "d_gamma")
    out = np.empty(n)
    for start in range(0, n, CHUNK_ROWS * 64):
        stop = min(n, start + CHUNK_ROWS * 64)
        out[start:stop] = d_gamma_from_uniform(uniforms(key, start, stop - start, 1)[:, 0], gamma)
    return out


def _latent_block(key: int, start: int, rows: int, r: int, d: int, env_gamma: float):
    u = uniforms(key, start, rows, d + 1)
    y = np.where(u[:, 0] < 0.5, 1.0, -1.0)
    z = u[:, 1:]
    z[:, r:] = d_gamma_from_uniform(z[:, r:], env_gamma)
    return z, y


def _blocks(key, n, r, d, env_gamma, chunk_rows) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    for start in range(0, n, chunk_rows):
        yield _latent_block(key, start, min(chunk_rows, n - start), r, d, env_gamma)


def iter_theory_chunks(spec: TheorySpec, chunk_rows: int = CHUNK_ROWS) -> Iterator[SampleBatch]:
    """Stream ``sample_theory(spec)`` in row blocks without materializing it."""
    key = derive_seed(spec.seed, f"theory/{spec.domain.value}")
    for z, y in _blocks(key, spec.n, spec.r, spec.d, spec.env_gamma, chunk_rows):
        yield SampleBatch(z * y[:, None], y, spec.domain)


def sample_theory(spec: TheorySpec) -> SampleBatch:
    """Inputs ``z~ = z * y``; columns ``0..r-1`` invariant, ``r..d-1`` environmental."""
    parts = list(iter_theory_chunks(spec))
    return SampleBatch(
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.labels for p in parts]),
        spec.domain,
    )


def sample_synthetic2d(spec: Synthetic2dSpec) -> SampleBatch:
    """``x1`` invariant, ``x2`` environmental with sign matching ``y`` w.p. flip_prob on ID."""
    key = derive_seed(spec.seed, f"synth2d/{spec.domain.value}")
    zs, ys = zip(*_blocks(key, spec.n, 1, 2, spec.env_gamma, CHUNK_ROWS))
    z, y = np.concatenate(zs), np.concatenate(ys)
    return SampleBatch(z * y[:, None], y, spec.domain)


def recovered_latents(batch: SampleBatch) -> np.ndarray:
    return batch.inputs * batch.labels[:, None]


def write_batch_csv(batch: SampleBatch, path) -> None:
    """Header ``x0,...,x{d-1},y,domain``; 17 significant digits."""
    path = Path(path)
    d = batch.dim
    header = ",".join([f"x{j}" for j in range(d)] + ["y", "domain"])
    with path.open("w", newline="\n") as fh:
        fh.write(header + "\n")
        for row, y in zip(batch.inputs, batch.labels):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{int(y)},{batch.domain.value}\n")
