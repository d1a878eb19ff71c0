"""
ensemble.py

Weighted point cloud µ = Σ w_i δ_{x_i}, the value every SVGD round maps to
another ensemble.
"""

from dataclasses import dataclass, field

import numpy as np

from src.utils.errors import ContractViolationError
from src.utils.helpers import as_points

WEIGHT_SUM_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Immutable weighted particle ensemble with a round counter."""
    positions: np.ndarray
    weights: np.ndarray = field(default=None)
    generation: int = 0

    def __post_init__(self):
        positions = np.array(as_points(self.positions), dtype=float)
        n = positions.shape[0]
        if n < 1:
            raise ContractViolationError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(positions)):
            raise ContractViolationError("ensemble positions must be finite")
        if self.weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.array(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != n:
            raise ContractViolationError(f"{weights.shape[0]} weights for {n} particles")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ContractViolationError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
            raise ContractViolationError(f"weights sum to {weights.sum()!r}, not 1")
        positions.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def normalized(cls, positions, weights, generation: int = 0) -> "ParticleEnsemble":
        """Build an ensemble after rescaling ``weights`` to unit mass."""
        weights = np.asarray(weights, dtype=float)
        return cls(positions, weights / weights.sum(), generation)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def equal_weights(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def moved_to(self, positions) -> "ParticleEnsemble":
        """Same weights, new positions, next generation."""
        return ParticleEnsemble(positions, self.weights, self.generation + 1)

    def same_as(self, other: "ParticleEnsemble") -> bool:
        return (self.positions.shape == other.positions.shape
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.weights, other.weights))
