"""
transport.py

The SVGD transport map x ↦ x + ε E_{X∼µ}[s_p(X) k(X, x) + ∇_X k(X, x)],
the one-step pushforward of a weighted ensemble and the multi-round loop.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from src.core.ensemble import ParticleEnsemble
from src.core.kernels import KernelSpec, gram, grad_x_gram
from src.core.targets import TargetSpec, scores
from src.utils.errors import ContractViolationError, DomainError, NumericOverflowError
from src.utils.helpers import as_points, kahan_sum, map_row_blocks, same_dimension

logger = logging.getLogger(__name__)

__all__ = [
    "ParticleEnsemble", "Trajectory", "svgd_direction", "svgd_directions", "svgd_step",
    "run_svgd", "check_contraction", "reflect", "write_checkpoint_csv",
]

Observer = Callable[[int, ParticleEnsemble, Optional[float]], Optional[Mapping[str, Any]]]


@dataclass
class Trajectory:
    """Ensembles µ_0..µ_r produced by ``run_svgd`` plus observer output per round."""
    ensembles: List[ParticleEnsemble]
    steps: List[float]
    diagnostics: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.ensembles) - 1

    @property
    def final(self) -> ParticleEnsemble:
        return self.ensembles[-1]

    def prefix_sums(self) -> np.ndarray:
        """b_r = Σ_{s≤r} ε_s for r = 0..len(steps)-1."""
        return np.cumsum(np.asarray(self.steps, dtype=float))


def _direction_block(ensemble: ParticleEnsemble, particle_scores: np.ndarray,
                     queries: np.ndarray, kernel: KernelSpec,
                     round_index: Optional[int]) -> np.ndarray:
    k = gram(kernel, ensemble.positions, queries)                     # (n, m)
    grad = grad_x_gram(kernel, ensemble.positions, queries)           # (n, m, d)
    terms = ensemble.weights[:, None, None] * (particle_scores[:, None, :] * k[:, :, None] + grad)
    if not np.all(np.isfinite(terms)):
        bad = int(np.argwhere(~np.isfinite(terms))[0][0])
        raise NumericOverflowError("non-finite term in the SVGD direction", round_index, bad)
    return kahan_sum(terms, axis=0)


def svgd_directions(ensemble: ParticleEnsemble, xs, target: TargetSpec, kernel: KernelSpec,
                    workers: Optional[int] = None, round_index: Optional[int] = None) -> np.ndarray:
    """
    Evaluate the SVGD direction at every row of ``xs``.

    Each row is reduced over the particles in index order with compensated
    summation; rows are split into blocks that may run on several threads.

    Args:
        ensemble: Weighted ensemble µ defining the expectation.
        xs: Query points, shape (m, d).
        target: Target distribution supplying the score.
        kernel: Base kernel.
        workers: Thread count (defaults to SVGD_WORKERS).
        round_index: Round reported in overflow errors.

    Returns:
        np.ndarray: Directions of shape (m, d).
    """
    queries = as_points(xs, ensemble.dim)
    same_dimension(ensemble.positions, queries)
    if not np.all(np.isfinite(queries)):
        raise DomainError("non-finite SVGD query point")
    particle_scores = scores(target, ensemble.positions)
    if not np.all(np.isfinite(particle_scores)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(particle_scores), axis=1))[0])
        raise NumericOverflowError("non-finite score", round_index, bad)
    return map_row_blocks(
        lambda start, stop: _direction_block(ensemble, particle_scores, queries[start:stop],
                                             kernel, round_index),
        queries.shape[0], workers=workers,
    )


def svgd_direction(ensemble: ParticleEnsemble, x, target: TargetSpec, kernel: KernelSpec) -> np.ndarray:
    """Σ_i w_i [s_p(x_i) k(x_i, x) + ∇_{x_i} k(x_i, x)] at a single point."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return svgd_directions(ensemble, x, target, kernel, workers=1)[0]


def svgd_step(ensemble: ParticleEnsemble, target: TargetSpec, kernel: KernelSpec, eps: float,
              workers: Optional[int] = None, round_index: Optional[int] = None) -> ParticleEnsemble:
    """Move every particle by ε times the direction computed from a frozen snapshot."""
    if not eps >= 0:
        raise ContractViolationError(f"step size must be nonnegative, got {eps}")
    if eps == 0:
        return ensemble.moved_to(ensemble.positions)
    directions = svgd_directions(ensemble, ensemble.positions, target, kernel,
                                 workers=workers, round_index=round_index)
    moved = ensemble.positions + eps * directions
    if not np.all(np.isfinite(moved)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(moved), axis=1))[0])
        raise NumericOverflowError("non-finite particle position", round_index, bad)
    return ensemble.moved_to(moved)


def run_svgd(init: ParticleEnsemble, target: TargetSpec, kernel: KernelSpec,
             steps: Sequence[float], observers: Sequence[Observer] = (),
             workers: Optional[int] = None) -> Trajectory:
    """
    Run SVGD rounds µ_{s+1} = T_{µ_s, ε_s}# µ_s for every step in ``steps``.

    Observers are called as ``observer(round_index, ensemble, eps)`` on the
    initial state (eps=None) and after every round with the step just taken;
    mappings they return are merged into that round's diagnostics.
    """
    steps = [float(e) for e in steps]
    bad = [e for e in steps if not e >= 0]
    if bad:
        raise ContractViolationError(f"step sizes must be nonnegative, got {bad[:3]}")

    def observe(r: int, ensemble: ParticleEnsemble, eps: Optional[float]) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for observer in observers:
            result = observer(r, ensemble, eps)
            if result:
                out.update(result)
        return out

    ensembles = [init]
    diagnostics = [observe(0, init, None)]
    logger.info("running %d SVGD rounds on %d particles (d=%d)", len(steps), init.n, init.dim)
    current = init
    for r, eps in enumerate(steps, start=1):
        current = svgd_step(current, target, kernel, eps, workers=workers, round_index=r)
        ensembles.append(current)
        diagnostics.append(observe(r, current, eps))
    return Trajectory(ensembles=ensembles, steps=steps, diagnostics=diagnostics)


def reflect(ensemble: ParticleEnsemble) -> ParticleEnsemble:
    """The ensemble mirrored through the origin (same weights and round)."""
    return ParticleEnsemble(-ensemble.positions, ensemble.weights, ensemble.generation)


def check_contraction(mu: ParticleEnsemble, nu: ParticleEnsemble, target: TargetSpec,
                      kernel: KernelSpec, eps: float, c1: float, c2: float,
                      tolerance: float = 1e-9) -> Dict[str, Any]:
    """
    One-step pseudo-Lipschitz check W1(µ', ν') ≤ (1 + ε c_{µ,ν}) W1(µ, ν).

    c_{µ,ν} = c1 (1 + m_µ) + c2 (1 + m_ν) with m the mean particle norm.
    """
    from src.analysis.discrepancy import wasserstein1
    from src.analysis.theory import pseudo_lipschitz_step_bound

    before = wasserstein1(mu, nu)
    after = wasserstein1(svgd_step(mu, target, kernel, eps), svgd_step(nu, target, kernel, eps))
    m_mu = float(mu.weights @ np.linalg.norm(mu.positions, axis=1))
    m_nu = float(nu.weights @ np.linalg.norm(nu.positions, axis=1))
    bound = pseudo_lipschitz_step_bound(c1, c2, m_mu, m_nu, eps, before)
    slack = bound - after
    return {"w1_before": before, "w1_after": after, "bound": bound,
            "slack": slack, "passed": slack >= -tolerance}


def write_checkpoint_csv(trajectory: Trajectory, path: str,
                         rounds: Optional[Sequence[int]] = None) -> str:
    """Write particle checkpoints with columns round, particle_index, x_0.., weight."""
    selected = range(len(trajectory.ensembles)) if rounds is None else rounds
    frames = []
    for r in selected:
        ensemble = trajectory.ensembles[r]
        frame = pd.DataFrame(ensemble.positions,
                             columns=[f"x_{j}" for j in range(ensemble.dim)])
        frame.insert(0, "particle_index", np.arange(ensemble.n))
        frame.insert(0, "round", r)
        frame["weight"] = ensemble.weights
        frames.append(frame)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    logger.info("wrote %d checkpoints to %s", len(frames), path)
    return path
