"""Random-projection subspace linking the optimized vector to the prompt.

The search runs over z in R^d; the prompt fed to the model is p = A z for a
frozen Gaussian matrix A in R^{D x d}. Only (D, d, seed, gamma) travel over
the wire: every party regenerates A locally from the pinned PCG64 generator,
which makes the matrix bit-identical everywhere.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .seeding import rng_from


@dataclass(frozen=True)
class ProjectionSpec:
    """Everything needed to regenerate the projection matrix."""

    full_dim: int
    sub_dim: int
    seed: int
    gamma: float = 1.0

    def __post_init__(self):
        if self.full_dim < 1 or self.sub_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.sub_dim > self.full_dim:
            raise ValueError(
                f"subspace dimension {self.sub_dim} exceeds prompt dimension {self.full_dim}"
            )
        if self.gamma < 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")


def generate_projection(spec: ProjectionSpec) -> np.ndarray:
    """D x d matrix with i.i.d. N(0, gamma^2) entries, frozen per seed."""
    if spec.gamma == 0.0:
        warnings.warn("gamma = 0 yields a zero projection matrix", stacklevel=2)
    rng = rng_from(spec.seed)
    return spec.gamma * rng.standard_normal((spec.full_dim, spec.sub_dim))


def project(matrix: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Exact matrix-vector product A z."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or matrix.ndim != 2 or matrix.shape[1] != z.shape[0]:
        raise ValueError(
            f"shape mismatch: matrix {matrix.shape} vs vector {z.shape}"
        )
    return matrix @ z
