"""
kernels.py

Reproducing kernels used by SVGD and the kernel Stein discrepancy.

Both supported families are radial, k(x, y) = f(‖x − y‖²), so every
derivative needed downstream is written in terms of the profile f and its
first two derivatives:

    ∇_x k(x, y)            = 2 f'(t) (x − y)
    Σ_j ∂x_j ∂y_j k(x, y)  = −2 d f'(t) − 4 t f''(t)
    D^I_x D^I_y k |_{y=x}  = f(0), −2 f'(0), 12 f''(0) or 4 f''(0)

with t = ‖x − y‖².
"""

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterator, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import ConfigError, ConstantViolationError, ContractViolationError, DomainError
from src.utils.helpers import as_point, as_points, require_finite, same_dimension

logger = logging.getLogger(__name__)

GRID_TOLERANCE = 1e-9
DECAY_RADII = (0.1, 1.0, 10.0)
MAX_GRID_POINTS = 10_000


class KernelFamily(str, Enum):
    GAUSSIAN_RBF = "GaussianRBF"
    IMQ = "IMQ"


@dataclass(frozen=True)
class KernelSpec:
    """
    Base kernel family and bandwidth.

    GaussianRBF: k(x, y) = exp(−‖x − y‖² / (2h²)).
    IMQ:         k(x, y) = (1 + ‖x − y‖² / h²)^(−β), 0 < β < 1.
    """
    family: KernelFamily = KernelFamily.GAUSSIAN_RBF
    bandwidth: float = 1.0
    imq_exponent: float = 0.5

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", KernelFamily(self.family))
        except ValueError as e:
            raise DomainError(f"unknown kernel family {self.family!r}") from e
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise DomainError(f"kernel bandwidth must be positive, got {self.bandwidth}")
        if self.family is KernelFamily.IMQ and not 0.0 < self.imq_exponent < 1.0:
            raise DomainError(f"IMQ exponent must lie in (0, 1), got {self.imq_exponent}")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "KernelSpec":
        """Build from the ``kernel`` config section (family, bandwidth, imq_exponent)."""
        try:
            return cls(
                family=config.get("family", KernelFamily.GAUSSIAN_RBF.value),
                bandwidth=float(config.get("bandwidth", 1.0)),
                imq_exponent=float(config.get("imq_exponent", 0.5)),
            )
        except (DomainError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid kernel config: {e}") from e

    # radial profile f(t) and derivatives, t = squared distance

    def profile(self, t: np.ndarray) -> np.ndarray:
        h2 = self.bandwidth ** 2
        if self.family is KernelFamily.GAUSSIAN_RBF:
            return np.exp(-t / (2.0 * h2))
        return (1.0 + t / h2) ** (-self.imq_exponent)

    def profile_d1(self, t: np.ndarray) -> np.ndarray:
        h2 = self.bandwidth ** 2
        if self.family is KernelFamily.GAUSSIAN_RBF:
            return -np.exp(-t / (2.0 * h2)) / (2.0 * h2)
        b = self.imq_exponent
        return -b / h2 * (1.0 + t / h2) ** (-b - 1.0)

    def profile_d2(self, t: np.ndarray) -> np.ndarray:
        h2 = self.bandwidth ** 2
        if self.family is KernelFamily.GAUSSIAN_RBF:
            return np.exp(-t / (2.0 * h2)) / (4.0 * h2 * h2)
        b = self.imq_exponent
        return b * (b + 1.0) / (h2 * h2) * (1.0 + t / h2) ** (-b - 2.0)


class KernelConstants(NamedTuple):
    kappa: float
    gamma: float

    @property
    def kappa_sq(self) -> float:
        return self.kappa ** 2


def _pair(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = require_finite(as_point(x), "kernel argument")
    y = require_finite(as_point(y), "kernel argument")
    same_dimension(x, y)
    return x, y


def _pairwise(xs, ys) -> Tuple[np.ndarray, np.ndarray]:
    xs = require_finite(as_points(xs), "kernel argument")
    ys = require_finite(as_points(ys), "kernel argument")
    same_dimension(xs, ys)
    diff = xs[:, None, :] - ys[None, :, :]
    return diff, np.einsum("ijk,ijk->ij", diff, diff)


def k_eval(spec: KernelSpec, x, y) -> float:
    x, y = _pair(x, y)
    diff = x - y
    return float(spec.profile(diff @ diff))


def k_grad_x(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient of k(x, y) with respect to its first argument."""
    x, y = _pair(x, y)
    diff = x - y
    return 2.0 * spec.profile_d1(diff @ diff) * diff


def k_grad_y(spec: KernelSpec, x, y) -> np.ndarray:
    """Gradient with respect to the second argument, via k(x, y) = k(y, x)."""
    return k_grad_x(spec, y, x)


def k_cross_hess_trace(spec: KernelSpec, x, y) -> float:
    """Σ_j ∂²k / ∂x_j ∂y_j evaluated at (x, y)."""
    x, y = _pair(x, y)
    diff = x - y
    t = diff @ diff
    return float(-2.0 * x.shape[0] * spec.profile_d1(t) - 4.0 * t * spec.profile_d2(t))


def gram(spec: KernelSpec, xs, ys) -> np.ndarray:
    """Matrix [k(x_i, y_j)] of shape (n, m)."""
    _, t = _pairwise(xs, ys)
    return spec.profile(t)


def grad_x_gram(spec: KernelSpec, xs, ys) -> np.ndarray:
    """Array [∇_x k(x_i, y_j)] of shape (n, m, d)."""
    diff, t = _pairwise(xs, ys)
    return 2.0 * spec.profile_d1(t)[:, :, None] * diff


def cross_hess_trace_gram(spec: KernelSpec, xs, ys) -> np.ndarray:
    """Matrix [Σ_j ∂x_j ∂y_j k(x_i, y_j)] of shape (n, m)."""
    diff, t = _pairwise(xs, ys)
    d = diff.shape[2]
    return -2.0 * d * spec.profile_d1(t) - 4.0 * t * spec.profile_d2(t)


def multi_indices(dim: int, max_order: int = 2) -> Iterator[Tuple[int, ...]]:
    for order in range(max_order + 1):
        for combo in itertools.combinations_with_replacement(range(dim), order):
            index = [0] * dim
            for axis in combo:
                index[axis] += 1
            yield tuple(index)


def diag_mixed_derivative(spec: KernelSpec, x, index: Sequence[int]) -> float:
    """
    D^I_x D^I_y k(x, y) at y = x for a multi-index I with |I| ≤ 2.

    Radial kernels make this independent of x; x only fixes the dimension.
    """
    x = require_finite(as_point(x), "kernel argument")
    index = tuple(int(i) for i in index)
    if len(index) != x.shape[0] or any(i < 0 for i in index):
        raise ContractViolationError(f"multi-index {index} does not match dimension {x.shape[0]}")
    order = sum(index)
    zero = np.zeros(())
    if order == 0:
        return float(spec.profile(zero))
    if order == 1:
        return float(-2.0 * spec.profile_d1(zero))
    if order == 2:
        factor = 12.0 if max(index) == 2 else 4.0
        return float(factor * spec.profile_d2(zero))
    raise ContractViolationError(f"multi-index order {order} exceeds 2")


def analytic_constants(spec: KernelSpec) -> KernelConstants:
    """Closed-form (κ, γ) for both families; ``kernel_constants`` can grid-check them."""
    h2 = spec.bandwidth ** 2
    if spec.family is KernelFamily.GAUSSIAN_RBF:
        kappa_sq = max(1.0, 1.0 / h2, 3.0 / (h2 * h2))
        # sup_s s·(s/h²)·exp(−s²/2h²) is attained at s² = 2h²
        gamma = 2.0 / np.e
    else:
        b = spec.imq_exponent
        kappa_sq = max(1.0, 2.0 * b / h2, 12.0 * b * (b + 1.0) / (h2 * h2))
        # sup_v 2β v (1 + v)^(−β−1) is attained at v = s²/h² = 1/β
        gamma = 2.0 * (b / (1.0 + b)) ** (b + 1.0)
    return KernelConstants(kappa=float(np.sqrt(kappa_sq)), gamma=float(gamma))


def _corner(value, dim: int) -> np.ndarray:
    if np.ndim(value) == 0:
        return np.full(dim, float(value))
    return as_point(value)


def _grid(low: np.ndarray, high: np.ndarray, per_axis: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(low, high)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def kernel_constants(spec: KernelSpec, check_box: Optional[Tuple[Any, Any]] = None,
                     dim: int = 1, points_per_axis: Optional[int] = None) -> KernelConstants:
    """
    Return (κ, γ) for the kernel and optionally grid-verify them.

    Args:
        spec: Kernel specification.
        check_box: Optional (low, high) corners of a compact box; scalars are
            broadcast to ``dim`` coordinates.
        dim: Dimension of the box when corners are scalars.
        points_per_axis: Grid resolution; defaults to at most 10⁴ points total.

    Returns:
        KernelConstants: (kappa, gamma).

    Raises:
        ConstantViolationError: a sampled derivative exceeds κ², or a sampled
            ‖∇_x k‖·‖x − y‖ exceeds γ.
    """
    constants = analytic_constants(spec)
    if check_box is None:
        return constants

    low, high = _corner(check_box[0], dim), _corner(check_box[1], dim)
    same_dimension(low, high)
    if np.any(high <= low):
        raise ContractViolationError(f"empty check box {low} .. {high}")
    d = low.shape[0]
    if points_per_axis is None:
        points_per_axis = max(2, int(np.floor(MAX_GRID_POINTS ** (1.0 / d) + 1e-9)))
    points = _grid(low, high, points_per_axis)
    kappa_sq = constants.kappa_sq

    # diagonal derivatives of a radial kernel are the same at every grid point
    for index in multi_indices(d):
        value = diag_mixed_derivative(spec, points[0], index)
        if value > kappa_sq + GRID_TOLERANCE:
            raise ConstantViolationError(f"D^{index} derivative exceeds kappa^2", points[0], value, kappa_sq)

    anchors = np.stack([(low + high) / 2.0, low])
    for anchor in anchors:
        k_vals = gram(spec, points, anchor[None, :])[:, 0]
        worst = int(np.argmax(np.abs(k_vals)))
        if abs(k_vals[worst]) > kappa_sq + GRID_TOLERANCE:
            raise ConstantViolationError("|k| exceeds kappa^2", points[worst], float(k_vals[worst]), kappa_sq)

        grads = grad_x_gram(spec, points, anchor[None, :])[:, 0, :]
        grad_norm = np.linalg.norm(grads, axis=1)
        dist = np.linalg.norm(points - anchor, axis=1)
        scaled = grad_norm * dist
        worst = int(np.argmax(scaled))
        if scaled[worst] > constants.gamma + GRID_TOLERANCE:
            raise ConstantViolationError("||grad k||·||x-y|| exceeds gamma", points[worst],
                                         float(scaled[worst]), constants.gamma)
        for r in DECAY_RADII:
            mask = dist >= r
            if np.any(mask) and np.max(grad_norm[mask]) > constants.gamma / r + GRID_TOLERANCE:
                worst = int(np.flatnonzero(mask)[np.argmax(grad_norm[mask])])
                raise ConstantViolationError(f"decay bound fails at r={r}", points[worst],
                                             float(grad_norm[worst]), constants.gamma / r)

    logger.debug("kernel constants verified on %d grid points: kappa^2=%.6g gamma=%.6g",
                 len(points), kappa_sq, constants.gamma)
    return constants
