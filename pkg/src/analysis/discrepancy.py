"""
discrepancy.py

Distances between discrete measures: the Langevin kernel Stein discrepancy
(to the target and between two ensembles), the exact 1-Wasserstein distance,
and the moment functionals m_µ, m_{µ,P}, M_{µ,P} used by the bounds.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import optimize, sparse
from scipy.spatial.distance import cdist

from src.core.ensemble import ParticleEnsemble
from src.core.kernels import KernelSpec, cross_hess_trace_gram, gram, grad_x_gram
from src.core.targets import TargetSpec, abs_moments_about, scores, second_moments_about
from src.utils.errors import ContractViolationError, NumericalInconsistencyError, SolverError
from src.utils.helpers import as_point, as_points, kahan_sum, map_row_blocks, weighted_kahan_sum

logger = logging.getLogger(__name__)

CLAMP_TOLERANCE = 1e-10
INCONSISTENCY_TOLERANCE = 1e-8
MASS_TOLERANCE = 1e-12
MOMENT_MC_SAMPLES = 200_000


@dataclass(frozen=True)
class SteinKernelContext:
    target: TargetSpec
    kernel: KernelSpec


def stein_gram(ctx: SteinKernelContext, xs, ys) -> np.ndarray:
    """
    Matrix [k_p(x_i, y_j)] with

        k_p(x, y) = ⟨s(x), s(y)⟩ k + ⟨s(x), ∇_y k⟩ + ⟨s(y), ∇_x k⟩ + Σ_j ∂x_j ∂y_j k.
    """
    d = ctx.target.dimension
    xs, ys = as_points(xs, d), as_points(ys, d)
    sx, sy = scores(ctx.target, xs), scores(ctx.target, ys)
    k = gram(ctx.kernel, xs, ys)
    gx = grad_x_gram(ctx.kernel, xs, ys)
    # radial kernels: ∇_y k(x, y) = −∇_x k(x, y)
    return ((sx @ sy.T) * k
            - np.einsum("id,ijd->ij", sx, gx)
            + np.einsum("jd,ijd->ij", sy, gx)
            + cross_hess_trace_gram(ctx.kernel, xs, ys))


def stein_kernel(ctx: SteinKernelContext, x, y) -> float:
    d = ctx.target.dimension
    return float(stein_gram(ctx, as_point(x, d)[None, :], as_point(y, d)[None, :])[0, 0])


def quadratic_form(ctx: SteinKernelContext, mu: ParticleEnsemble, nu: ParticleEnsemble,
                   workers: Optional[int] = None) -> float:
    """Q(µ, ν) = Σ_i Σ_j w_i v_j k_p(x_i, y_j), row by row in fixed order."""
    if mu.dim != nu.dim:
        raise ContractViolationError(f"dimension mismatch: {mu.dim} vs {nu.dim}")

    def rows(start: int, stop: int) -> np.ndarray:
        block = stein_gram(ctx, mu.positions[start:stop], nu.positions)
        return kahan_sum(block * nu.weights[None, :], axis=1)

    row_sums = map_row_blocks(rows, mu.n, workers=workers)
    return weighted_kahan_sum(mu.weights, row_sums)


def _checked_sqrt(value: float, scale: float, what: str) -> float:
    scale = max(1.0, abs(scale))
    if value < -INCONSISTENCY_TOLERANCE * scale:
        raise NumericalInconsistencyError(f"{what} quadratic form is negative: {value!r}")
    if value < 0:
        if value < -CLAMP_TOLERANCE * scale:
            logger.warning("%s quadratic form %.3g clamped to 0", what, value)
        return 0.0
    return float(np.sqrt(value))


def ksd_to_target(ctx: SteinKernelContext, ensemble: ParticleEnsemble,
                  workers: Optional[int] = None) -> float:
    """V-statistic KSD(µ ‖ P) = √Q(µ, µ)."""
    value = quadratic_form(ctx, ensemble, ensemble, workers)
    return _checked_sqrt(value, value, "KSD-to-target")


def ksd_between(ctx: SteinKernelContext, mu: ParticleEnsemble, nu: ParticleEnsemble,
                workers: Optional[int] = None) -> float:
    """KSD(µ, ν) = √(Q(µ,µ) − 2Q(µ,ν) + Q(ν,ν))."""
    q_mm = quadratic_form(ctx, mu, mu, workers)
    q_mn = quadratic_form(ctx, mu, nu, workers)
    q_nn = quadratic_form(ctx, nu, nu, workers)
    value = q_mm - 2.0 * q_mn + q_nn
    return _checked_sqrt(value, max(abs(q_mm), abs(q_mn), abs(q_nn)), "KSD-between")


# --- optimal transport ---------------------------------------------------------

def quantile_coupling(a: ParticleEnsemble, b: ParticleEnsemble) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Monotone (optimal) coupling of two 1-D weighted ensembles.

    Returns:
        Tuple of (x_a, x_b, mass): paired atom positions and the mass moved
        between them.
    """
    order_a, order_b = np.argsort(a.positions[:, 0], kind="stable"), np.argsort(b.positions[:, 0], kind="stable")
    xa, wa = a.positions[order_a, 0], a.weights[order_a]
    xb, wb = b.positions[order_b, 0], b.weights[order_b]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    upper = np.unique(np.concatenate([ca, cb]))
    lower = np.concatenate([[0.0], upper[:-1]])
    mass = upper - lower
    keep = mass > 0
    mid = 0.5 * (lower + upper)[keep]
    ia = np.minimum(np.searchsorted(ca, mid), a.n - 1)
    ib = np.minimum(np.searchsorted(cb, mid), b.n - 1)
    return xa[ia], xb[ib], mass[keep]


def _check_transport_inputs(a: ParticleEnsemble, b: ParticleEnsemble) -> None:
    if a.dim != b.dim:
        raise ContractViolationError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if abs(a.weights.sum() - b.weights.sum()) > MASS_TOLERANCE:
        raise ContractViolationError("ensembles carry different total mass")


def _w1_assignment(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    cost = cdist(a.positions, b.positions)
    try:
        rows, cols = optimize.linear_sum_assignment(cost)
    except ValueError as e:
        raise SolverError(f"assignment solver failed: {e}") from e
    return float(kahan_sum(cost[rows, cols], axis=0)) / a.n


def _w1_transshipment(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    n, m = a.n, b.n
    cost = cdist(a.positions, b.positions).ravel()
    row_constraints = sparse.kron(sparse.eye(n), np.ones((1, m)))
    col_constraints = sparse.kron(np.ones((1, n)), sparse.eye(m))
    a_eq = sparse.vstack([row_constraints, col_constraints]).tocsr()
    b_eq = np.concatenate([a.weights, b.weights * (a.weights.sum() / b.weights.sum())])
    result = optimize.linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not result.success:
        raise SolverError(f"transport LP failed: {result.message}")
    return float(result.fun)


def wasserstein1(a: ParticleEnsemble, b: ParticleEnsemble) -> float:
    """
    Exact W1 with Euclidean cost.

    d = 1 uses the quantile coupling; equal-size equal-weight ensembles in
    d ≥ 2 use an assignment solver; anything else is solved as a
    transportation LP with the HiGHS simplex.
    """
    _check_transport_inputs(a, b)
    if a.dim == 1:
        if a.n == b.n and a.equal_weights and b.equal_weights:
            gaps = np.abs(np.sort(a.positions[:, 0]) - np.sort(b.positions[:, 0]))
            return float(kahan_sum(gaps, axis=0)) / a.n
        xa, xb, mass = quantile_coupling(a, b)
        return weighted_kahan_sum(mass, np.abs(xa - xb))
    if a.n == b.n and a.equal_weights and b.equal_weights:
        return _w1_assignment(a, b)
    return _w1_transshipment(a, b)


# --- moments -------------------------------------------------------------------

@dataclass(frozen=True)
class MomentResult:
    m_mu: float
    m_mu_p: float
    M_mu_p: float
    stderr: float = 0.0
    precision_warning: bool = False


def moments(ensemble: ParticleEnsemble, target: TargetSpec, mc_samples: int = MOMENT_MC_SAMPLES,
            seed: int = 0, tolerance: Optional[float] = None) -> MomentResult:
    """
    m_µ = E‖X‖ and the independent-coupling moments m_{µ,P} = E‖X − Z‖,
    M_{µ,P} = E‖X − Z‖² with X ∼ µ, Z ∼ P.

    m_{µ,P} is exact in 1-D and estimated by seeded Monte Carlo otherwise;
    the standard error is summed over atoms, so it is conservative.
    """
    m_mu = weighted_kahan_sum(ensemble.weights, np.linalg.norm(ensemble.positions, axis=1))
    estimates = abs_moments_about(target, ensemble.positions, mc_samples=mc_samples, seed=seed)
    m_mu_p = weighted_kahan_sum(ensemble.weights, np.array([e.value for e in estimates]))
    stderr = float(ensemble.weights @ np.array([e.stderr for e in estimates]))
    M_mu_p = weighted_kahan_sum(ensemble.weights, second_moments_about(target, ensemble.positions))
    warn = tolerance is not None and stderr > tolerance
    if warn:
        logger.warning("Monte Carlo standard error %.3g exceeds tolerance %.3g", stderr, tolerance)
    return MomentResult(m_mu=m_mu, m_mu_p=m_mu_p, M_mu_p=M_mu_p, stderr=stderr, precision_warning=warn)


def ksd_wasserstein_bound(kappa: float, L: float, d: int, w1: float, M_nu_p: float) -> float:
    """κ(d + L) W1 + d^{1/4} κ L √(2 M_{ν,P} W1)."""
    return kappa * (d + L) * w1 + d ** 0.25 * kappa * L * np.sqrt(2.0 * M_nu_p * w1)


def ksd_coupled_bound_1d(mu: ParticleEnsemble, nu: ParticleEnsemble, target: TargetSpec,
                            kappa: float, L: float) -> float:
    """
    The sharper coupled form κ(1 + L) W1 + L E[|Y − Z| min(2κ, κ|X − Y|)]
    with (X, Y) the optimal 1-D coupling and Z ∼ P independent.
    """
    if mu.dim != 1 or target.dimension != 1:
        raise ContractViolationError("the coupled bound is evaluated in one dimension")
    xa, xb, mass = quantile_coupling(mu, nu)
    w1 = weighted_kahan_sum(mass, np.abs(xa - xb))
    spread = np.array([e.value for e in abs_moments_about(target, xb[:, None])])
    coupled = weighted_kahan_sum(mass, spread * np.minimum(2.0 * kappa, kappa * np.abs(xa - xb)))
    return kappa * (1.0 + L) * w1 + L * coupled
