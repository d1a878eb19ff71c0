"""
density1d.py

One-dimensional continuous-SVGD surrogate: a weighted node set that is moved
exactly by the transport map while its log density is carried along by the
change of variables log q'(T x) = log q(x) − log T'(x). This gives KL to the
target at every round and lets the KL descent inequality be checked to a
stated quadrature tolerance.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.analysis.discrepancy import SteinKernelContext, ksd_to_target
from src.analysis.theory import descent_factor
from src.core.ensemble import ParticleEnsemble
from src.core.kernels import KernelSpec, cross_hess_trace_gram, grad_x_gram
from src.core.targets import TargetSpec, log_densities, scores, second_moment_about
from src.core.transport import svgd_directions
from src.utils.errors import (ContractViolationError, DescentViolationError, DiscretizationError,
                              PreconditionError, StepTooLargeError)
from src.utils.helpers import kahan_sum, map_row_blocks, weighted_kahan_sum

logger = logging.getLogger(__name__)

DEFAULT_NODES = 2001
DEFAULT_SPAN_SD = 12.0
DISCRETIZATION_TOLERANCE = 1e-4
NORMALIZATION_TOLERANCE = 1e-3


@dataclass(frozen=True, eq=False)
class QuadratureMeasure:
    """Weighted nodes with the log density of the measure at each node."""
    nodes: np.ndarray
    weights: np.ndarray
    log_density_values: np.ndarray
    generation: int = 0

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        log_q = np.asarray(self.log_density_values, dtype=float).reshape(-1)
        if not (nodes.shape == weights.shape == log_q.shape):
            raise ContractViolationError("nodes, weights and log densities must have equal length")
        if nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ContractViolationError("quadrature nodes must be strictly increasing")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ContractViolationError("quadrature weights must be nonnegative and sum to 1")
        if not np.all(np.isfinite(log_q)):
            raise ContractViolationError("log densities must be finite at every node")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "log_density_values", log_q)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def as_ensemble(self) -> ParticleEnsemble:
        return ParticleEnsemble(self.nodes[:, None], self.weights, self.generation)


def trapezoid_coefficients(nodes: np.ndarray) -> np.ndarray:
    gaps = np.diff(nodes)
    coef = np.zeros_like(nodes)
    coef[:-1] += 0.5 * gaps
    coef[1:] += 0.5 * gaps
    return coef


def initial_measure(init: TargetSpec, reference: Optional[TargetSpec] = None,
                    nodes: int = DEFAULT_NODES, span_sd: float = DEFAULT_SPAN_SD) -> QuadratureMeasure:
    """
    Trapezoid quadrature of the 1-D measure ``init`` on a uniform grid.

    The grid is centred between the means of ``init`` and ``reference`` and
    spans ``span_sd`` standard deviations of the wider of the two.
    """
    if init.dimension != 1 or (reference is not None and reference.dimension != 1):
        raise ContractViolationError("the quadrature surrogate is one-dimensional")
    members = [init] if reference is None else [init, reference]
    means = [float(m.expected_value()[0]) for m in members]
    sds = [np.sqrt(second_moment_about(m, [mu])) for m, mu in zip(members, means)]
    centre = 0.5 * (min(means) + max(means))
    half = span_sd * max(sds) + 0.5 * (max(means) - min(means))
    grid = np.linspace(centre - half, centre + half, int(nodes))
    log_q = log_densities(init, grid[:, None])
    raw = np.exp(log_q) * trapezoid_coefficients(grid)
    return QuadratureMeasure(grid, raw / raw.sum(), log_q)


def _jacobian_block(measure: QuadratureMeasure, node_scores: np.ndarray, xs: np.ndarray,
                    kernel: KernelSpec) -> np.ndarray:
    particles = measure.nodes[:, None]
    grad = grad_x_gram(kernel, particles, xs)[:, :, 0]       # ∂_{x_i} k(x_i, x)
    cross = cross_hess_trace_gram(kernel, particles, xs)    # ∂_{x_i} ∂_x k(x_i, x)
    # ∂_x k(x_i, x) = −∂_{x_i} k(x_i, x) for radial kernels
    terms = measure.weights[:, None] * (-node_scores[:, None] * grad + cross)
    return kahan_sum(terms, axis=0)


def transport_jacobians(measure: QuadratureMeasure, xs, eps: float, target: TargetSpec,
                        kernel: KernelSpec, workers: Optional[int] = None) -> np.ndarray:
    """T'(x) = 1 + ε d/dx E_µ[s_p(X) k(X, x) + ∂_X k(X, x)] at every x in ``xs``."""
    xs = np.asarray(xs, dtype=float).reshape(-1, 1)
    if eps == 0:
        return np.ones(xs.shape[0])
    node_scores = scores(target, measure.nodes[:, None])[:, 0]
    derivative = map_row_blocks(
        lambda start, stop: _jacobian_block(measure, node_scores, xs[start:stop], kernel),
        xs.shape[0], workers=workers,
    )
    return 1.0 + eps * derivative


def transport_jacobian_1d(measure: QuadratureMeasure, x: float, eps: float,
                          target: TargetSpec, kernel: KernelSpec) -> float:
    """
    Derivative of the transport map at a single point.

    Raises:
        StepTooLargeError: the derivative is not positive.
    """
    value = float(transport_jacobians(measure, [x], eps, target, kernel, workers=1)[0])
    if value <= 0:
        raise StepTooLargeError("transport map is not increasing", eps, None)
    return value


def push_density(measure: QuadratureMeasure, eps: float, target: TargetSpec, kernel: KernelSpec,
                 workers: Optional[int] = None) -> QuadratureMeasure:
    """
    One continuous SVGD round on the surrogate.

    Raises:
        StepTooLargeError: the map is not invertible (non-positive Jacobian or
            node order broken).
    """
    if not eps >= 0:
        raise ContractViolationError(f"step size must be nonnegative, got {eps}")
    if eps == 0:
        return QuadratureMeasure(measure.nodes, measure.weights, measure.log_density_values,
                                 measure.generation + 1)
    jac = transport_jacobians(measure, measure.nodes, eps, target, kernel, workers)
    bad = np.flatnonzero(jac <= 0)
    if bad.size:
        raise StepTooLargeError("transport Jacobian is not positive", eps, int(bad[0]))
    directions = svgd_directions(measure.as_ensemble(), measure.nodes[:, None], target, kernel,
                                 workers=workers)[:, 0]
    moved = measure.nodes + eps * directions
    broken = np.flatnonzero(np.diff(moved) <= 0)
    if broken.size:
        raise StepTooLargeError("transport map broke node ordering", eps, int(broken[0]))
    return QuadratureMeasure(moved, measure.weights, measure.log_density_values - np.log(jac),
                             measure.generation + 1)


def evolve(measure: QuadratureMeasure, eps: Sequence[float], target: TargetSpec,
           kernel: KernelSpec, workers: Optional[int] = None) -> List[QuadratureMeasure]:
    """Measures for rounds 0..t under the step list ``eps``."""
    measures = [measure]
    for step in eps:
        measures.append(push_density(measures[-1], float(step), target, kernel, workers))
    return measures


def normalization_error(measure: QuadratureMeasure) -> float:
    """|∫ q − 1| by the trapezoid rule over the (moved) nodes."""
    density = np.exp(measure.log_density_values)
    return abs(float(np.sum(density * trapezoid_coefficients(measure.nodes))) - 1.0)


def kl_to_target(measure: QuadratureMeasure, target: TargetSpec,
                 tolerance: float = DISCRETIZATION_TOLERANCE) -> float:
    """
    Σ_i w_i (log q(x_i) − log p(x_i)).

    Raises:
        DiscretizationError: the estimate is below −tolerance.
    """
    log_p = log_densities(target, measure.nodes[:, None])
    value = weighted_kahan_sum(measure.weights, measure.log_density_values - log_p)
    if value < -tolerance:
        raise DiscretizationError(f"KL estimate {value:.3g} is below -{tolerance:g}; refine the grid")
    if value < 0:
        logger.debug("KL estimate %.3g is slightly negative", value)
    return value


@dataclass
class DescentReport:
    kl: List[float]
    ksd: List[float]
    slack: List[float]
    tolerance: float
    normalization: List[float] = field(default_factory=list)
    summed_lhs: float = float("nan")
    summed_rhs: float = float("nan")

    @property
    def worst_slack(self) -> float:
        return min(self.slack) if self.slack else 0.0

    @property
    def passed(self) -> bool:
        return self.worst_slack >= -self.tolerance and self.summed_passed

    @property
    def summed_passed(self) -> bool:
        if np.isnan(self.summed_lhs):
            return True
        return self.summed_lhs <= self.summed_rhs + self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {"worst_slack": self.worst_slack, "tolerance": self.tolerance,
                "summed_lhs": self.summed_lhs, "summed_rhs": self.summed_rhs,
                "max_normalization_error": max(self.normalization, default=0.0),
                "passed": self.passed}


def verify_descent(measures: Sequence[QuadratureMeasure], eps: Sequence[float], target: TargetSpec,
                   kernel: KernelSpec, kappa: float, L: float, alpha: float,
                   cap: Optional[float] = None, tolerance: float = DISCRETIZATION_TOLERANCE,
                   raise_on_failure: bool = False, workers: Optional[int] = None) -> DescentReport:
    """
    Per-round slack of KL_{r+1} − KL_r ≤ −c(ε_r) KSD_r², and the summed form
    Σ π_r KSD_r² ≤ 2 KL_0 / Σ ε_r.

    Args:
        measures: Surrogate measures for rounds 0..t.
        eps: Steps ε_0..ε_{t-1}.
        target, kernel: Problem definition.
        kappa, L, alpha: Constants entering c(ε).
        cap: R_{α,2}; steps above it are a precondition failure.
        tolerance: Quadrature tolerance applied to every slack.
        raise_on_failure: Raise DescentViolationError instead of returning a
            failing report.

    Returns:
        DescentReport: KL, KSD and slack per round.
    """
    eps = [float(e) for e in eps]
    if len(measures) != len(eps) + 1:
        raise ContractViolationError(f"{len(measures)} measures for {len(eps)} steps")
    if not alpha > 1:
        raise PreconditionError(f"the descent inequality needs alpha > 1, got {alpha}")
    if cap is not None and any(e > cap * (1.0 + 1e-12) for e in eps):
        raise PreconditionError(f"a step exceeds R_alpha,2 = {cap:.6g}")

    ctx = SteinKernelContext(target, kernel)
    kl = [kl_to_target(m, target, tolerance) for m in measures]
    ksd = [ksd_to_target(ctx, m.as_ensemble(), workers) for m in measures[:-1]]
    c = descent_factor(eps, kappa, L, alpha)
    slack = [float(-c[r] * ksd[r] ** 2 - (kl[r + 1] - kl[r])) for r in range(len(eps))]
    report = DescentReport(kl=kl, ksd=ksd, slack=slack, tolerance=tolerance,
                           normalization=[normalization_error(m) for m in measures])
    if eps and c.sum() > 0:
        pi = c / c.sum()
        report.summed_lhs = float(np.dot(pi, np.square(ksd)))
        report.summed_rhs = 2.0 * kl[0] / float(np.sum(eps))

    if not report.passed:
        worst = int(np.argmin(slack)) if slack else None
        diagnostics = {"round": worst, **report.to_dict()}
        logger.error("KL descent check failed: %s", diagnostics)
        if raise_on_failure:
            raise DescentViolationError("KL descent inequality violated beyond tolerance", diagnostics)
    return report


def write_density_csv(measures: Sequence[QuadratureMeasure], path: str) -> str:
    """Write columns round, node, weight, log_density for every round."""
    frames = [pd.DataFrame({"round": r, "node": m.nodes, "weight": m.weights,
                            "log_density": m.log_density_values})
              for r, m in enumerate(measures)]
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    return path
