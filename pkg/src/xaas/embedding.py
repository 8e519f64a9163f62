"""Deterministic projection encoder used as the semantic cache key.

A fixed Gaussian projection (seeded per encoder config) maps inputs to
``dim`` coordinates which are then L2-normalized, so distances live in
[0, 2] and depend on input direction rather than magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Added along the first axis when the projection vanishes, so the zero input
# still gets a well-defined unit embedding.
DEGENERATE_EPS = 1e-12


@dataclass(frozen=True)
class EncoderConfig:
    seed: int = 0
    input_dim: int = 8
    dim: int = 32

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("embedding dim must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")


@dataclass(frozen=True, eq=False)
class Encoder:
    cfg: EncoderConfig
    projection: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng([self.cfg.seed, 0xE3BED])
        P = rng.standard_normal((self.cfg.dim, self.cfg.input_dim)) / np.sqrt(self.cfg.dim)
        P.setflags(write=False)
        object.__setattr__(self, "projection", P)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    def __call__(self, x) -> np.ndarray:
        return embed(x, self)

    def batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        V = X @ self.projection.T
        norms = np.sqrt(np.einsum("ij,ij->i", V, V))
        small = norms < DEGENERATE_EPS
        if np.any(small):
            V[small, 0] += DEGENERATE_EPS
            norms[small] = np.sqrt(np.einsum("ij,ij->i", V[small], V[small]))
        return V / norms[:, None]


def embed(x, encoder: Encoder) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != encoder.cfg.input_dim:
        raise ValueError(f"expected input of length {encoder.cfg.input_dim}, got {x.shape}")
    v = encoder.projection @ x
    n = float(np.sqrt(v @ v))
    if n < DEGENERATE_EPS:
        v = v.copy()
        v[0] += DEGENERATE_EPS
        n = float(np.sqrt(v @ v))
    return v / n


def distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"embedding length mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt(diff @ diff))
