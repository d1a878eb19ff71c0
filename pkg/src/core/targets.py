"""
targets.py

Target distributions P with normalized log densities, score functions and
the constants the convergence bounds need: the score Lipschitz constant L, a
score root x*, the T1 constant λ and the absolute moments of P.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np
from scipy import integrate, optimize, special, stats
from scipy.spatial import distance

from src.core.ensemble import ParticleEnsemble
from src.utils.errors import ConfigError, ContractViolationError, ConvergenceError, DomainError
from src.utils.helpers import as_point, as_points, require_finite

logger = logging.getLogger(__name__)

ROOT_TOLERANCE = 1e-10
MONTE_CARLO_SAMPLES = 1_000_000
MONTE_CARLO_SEED = 20230601
# distance entries held at once when many points share one sample
MONTE_CARLO_BLOCK = 4_000_000
ROOT_GRID_POINTS = 20_001


class TargetFamily(str, Enum):
    GAUSSIAN = "Gaussian"
    GAUSSIAN_MIXTURE = "GaussianMixture"


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """
    Gaussian N(mean, covariance) or isotropic mixture Σ_k w_k N(µ_k, σ²I).

    The same type describes the continuous initial measure Q_0^∞.
    """
    family: TargetFamily
    dimension: int
    mean: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    means: Optional[np.ndarray] = None
    sigma2: Optional[float] = None
    lambda_override: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "family", TargetFamily(self.family))
        d = int(self.dimension)
        if d < 1:
            raise DomainError(f"dimension must be positive, got {d}")
        object.__setattr__(self, "dimension", d)
        if self.family is TargetFamily.GAUSSIAN:
            mean = require_finite(as_point(self.mean, d), "target mean")
            cov = np.array(self.covariance, dtype=float).reshape(d, d)
            if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
                raise DomainError("covariance must be symmetric")
            eigvals = np.linalg.eigvalsh(cov)
            if eigvals[0] <= 0:
                raise DomainError(f"covariance must be positive definite, eigenvalues {eigvals}")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "covariance", cov)
            object.__setattr__(self, "_precision", np.linalg.inv(cov))
            object.__setattr__(self, "_chol", np.linalg.cholesky(cov))
            object.__setattr__(self, "_cov_eigvals", eigvals)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
            means = as_points(self.means, d) if d > 1 else np.asarray(self.means, float).reshape(-1, 1)
            if weights.shape[0] != means.shape[0]:
                raise DomainError(f"{weights.shape[0]} weights for {means.shape[0]} components")
            if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise DomainError("mixture weights must be positive and sum to 1")
            if self.sigma2 is None or not self.sigma2 > 0:
                raise DomainError(f"mixture variance must be positive, got {self.sigma2}")
            object.__setattr__(self, "weights", weights)
            object.__setattr__(self, "means", require_finite(means, "mixture means"))
            object.__setattr__(self, "sigma2", float(self.sigma2))
        if self.lambda_override is not None and not self.lambda_override > 0:
            raise DomainError(f"lambda_override must be positive, got {self.lambda_override}")

    @classmethod
    def gaussian(cls, mean, covariance, lambda_override: Optional[float] = None) -> "TargetSpec":
        mean = as_point(mean)
        d = mean.shape[0]
        cov = np.asarray(covariance, dtype=float)
        if cov.ndim == 0:
            cov = float(cov) * np.eye(d)
        elif cov.ndim == 1:
            cov = np.diag(cov)
        return cls(TargetFamily.GAUSSIAN, d, mean=mean, covariance=cov,
                   lambda_override=lambda_override)

    @classmethod
    def mixture(cls, weights, means, sigma2: float,
                lambda_override: Optional[float] = None) -> "TargetSpec":
        means = np.asarray(means, dtype=float)
        d = 1 if means.ndim == 1 else means.shape[1]
        return cls(TargetFamily.GAUSSIAN_MIXTURE, d, weights=weights, means=means,
                   sigma2=sigma2, lambda_override=lambda_override)

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "TargetSpec":
        """
        Build from a ``target`` (or ``init``) config section.

        Keys: family, mean, covariance (scalar, diagonal list or matrix),
        weights, means, sigma2, lambda_override, dimension (broadcasts a
        scalar mean).
        """
        try:
            family = TargetFamily(config.get("family", TargetFamily.GAUSSIAN.value))
            lam = config.get("lambda_override")
            lam = None if lam is None else float(lam)
            if family is TargetFamily.GAUSSIAN:
                mean = np.asarray(config.get("mean", 0.0), dtype=float)
                if mean.ndim == 0:
                    mean = np.full(int(config.get("dimension", 1)), float(mean))
                return cls.gaussian(mean, config.get("covariance", 1.0), lambda_override=lam)
            return cls.mixture(config["weights"], config["means"], float(config["sigma2"]),
                               lambda_override=lam)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"invalid target config: {e}") from e

    @property
    def is_gaussian(self) -> bool:
        return self.family is TargetFamily.GAUSSIAN

    def expected_value(self) -> np.ndarray:
        if self.is_gaussian:
            return self.mean.copy()
        return self.weights @ self.means

    def describe(self) -> str:
        if self.is_gaussian:
            return f"Gaussian(d={self.dimension}, mean={self.mean.tolist()}, cov={self.covariance.tolist()})"
        return (f"GaussianMixture(d={self.dimension}, weights={self.weights.tolist()}, "
                f"means={self.means.tolist()}, sigma2={self.sigma2})")


class TargetConstants(NamedTuple):
    L: float
    x_star: np.ndarray
    lam: float
    m_P: float
    M_P: float


class MomentEstimate(NamedTuple):
    value: float
    stderr: float = 0.0


# --- density and score -----------------------------------------------------

def _mixture_terms(target: TargetSpec, xs: np.ndarray) -> np.ndarray:
    """Per-component log(w_k N(x; µ_k, σ²I)), shape (n, K)."""
    d = target.dimension
    sq = np.sum((xs[:, None, :] - target.means[None, :, :]) ** 2, axis=2)
    return (np.log(target.weights)[None, :] - 0.5 * d * np.log(2 * np.pi * target.sigma2)
            - sq / (2.0 * target.sigma2))


def log_densities(target: TargetSpec, xs) -> np.ndarray:
    xs = require_finite(as_points(xs, target.dimension), "target argument")
    if target.is_gaussian:
        centered = xs - target.mean
        quad = np.einsum("ni,ij,nj->n", centered, target._precision, centered)
        logdet = np.sum(np.log(target._cov_eigvals))
        return -0.5 * (target.dimension * np.log(2 * np.pi) + logdet + quad)
    return special.logsumexp(_mixture_terms(target, xs), axis=1)


def scores(target: TargetSpec, xs) -> np.ndarray:
    """Rows s_p(x_i) = ∇ log p(x_i), shape (n, d)."""
    xs = require_finite(as_points(xs, target.dimension), "target argument")
    if target.is_gaussian:
        return -(xs - target.mean) @ target._precision.T
    resp = special.softmax(_mixture_terms(target, xs), axis=1)
    return (resp @ target.means - xs) / target.sigma2


def score_hessians(target: TargetSpec, xs) -> np.ndarray:
    """Jacobians ∇s_p(x_i) = ∇² log p(x_i), shape (n, d, d)."""
    xs = require_finite(as_points(xs, target.dimension), "target argument")
    d = target.dimension
    if target.is_gaussian:
        return np.broadcast_to(-target._precision, (xs.shape[0], d, d)).copy()
    resp = special.softmax(_mixture_terms(target, xs), axis=1)
    mean_mu = resp @ target.means
    second = np.einsum("nk,ki,kj->nij", resp, target.means, target.means)
    cov_mu = second - np.einsum("ni,nj->nij", mean_mu, mean_mu)
    return -np.eye(d)[None] / target.sigma2 + cov_mu / target.sigma2 ** 2


def log_density(target: TargetSpec, x) -> float:
    return float(log_densities(target, as_point(x, target.dimension)[None, :])[0])


def score(target: TargetSpec, x) -> np.ndarray:
    return scores(target, as_point(x, target.dimension)[None, :])[0]


# --- moments -----------------------------------------------------------------

def _folded_normal_mean(shift: np.ndarray, sd: float) -> np.ndarray:
    """E|shift + sd·Z| for standard normal Z."""
    z = shift / sd
    return sd * np.sqrt(2.0 / np.pi) * np.exp(-0.5 * z * z) + shift * (1.0 - 2.0 * stats.norm.cdf(-z))


def _chi_mean(d: int) -> float:
    return float(np.sqrt(2.0) * np.exp(special.gammaln((d + 1) / 2.0) - special.gammaln(d / 2.0)))


def draw(target: TargetSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws from the target as an (n, d) array."""
    d = target.dimension
    z = rng.standard_normal((n, d))
    if target.is_gaussian:
        return target.mean + z @ target._chol.T
    component = rng.choice(target.weights.shape[0], size=n, p=target.weights)
    return target.means[component] + np.sqrt(target.sigma2) * z


def abs_moments_about(target: TargetSpec, points, mc_samples: int = MONTE_CARLO_SAMPLES,
                      seed: int = MONTE_CARLO_SEED) -> List[MomentEstimate]:
    """
    E_{Z∼P} ‖Z − c‖ for every row c of ``points``.

    Exact in 1-D (folded normals) and for centered isotropic Gaussians (chi
    mean); seeded Monte Carlo with a standard error otherwise.
    """
    points = as_points(points, target.dimension)
    d = target.dimension
    if d == 1:
        if target.is_gaussian:
            values = _folded_normal_mean(target.mean[0] - points[:, 0], np.sqrt(target.covariance[0, 0]))
        else:
            shifts = target.means[:, 0][None, :] - points[:, 0][:, None]
            values = _folded_normal_mean(shifts, np.sqrt(target.sigma2)) @ target.weights
        return [MomentEstimate(float(v)) for v in values]

    if target.is_gaussian:
        var = target.covariance[0, 0]
        if np.allclose(target.covariance, var * np.eye(d), rtol=0.0, atol=1e-15):
            centered = np.all(points == target.mean, axis=1)
            if np.all(centered):
                value = np.sqrt(var) * _chi_mean(d)
                return [MomentEstimate(value) for _ in range(points.shape[0])]

    rng = np.random.default_rng(seed)
    samples = draw(target, mc_samples, rng)
    chunk = max(1, MONTE_CARLO_BLOCK // mc_samples)
    means, stderrs = [], []
    for start in range(0, points.shape[0], chunk):
        dist = distance.cdist(points[start:start + chunk], samples)
        means.append(dist.mean(axis=1))
        stderrs.append(dist.std(axis=1, ddof=1) / np.sqrt(mc_samples))
    means, stderrs = np.concatenate(means), np.concatenate(stderrs)
    logger.debug("Monte Carlo moments for %d points from %d samples, max stderr %.3g",
                 points.shape[0], mc_samples, float(stderrs.max()))
    return [MomentEstimate(float(m), float(s)) for m, s in zip(means, stderrs)]


def abs_moment_about(target: TargetSpec, point, **kwargs) -> MomentEstimate:
    return abs_moments_about(target, as_point(point, target.dimension)[None, :], **kwargs)[0]


def second_moments_about(target: TargetSpec, points) -> np.ndarray:
    """E_{Z∼P} ‖Z − c‖² for every row c (always closed form)."""
    points = as_points(points, target.dimension)
    if target.is_gaussian:
        return np.sum((points - target.mean) ** 2, axis=1) + np.trace(target.covariance)
    sq = np.sum((points[:, None, :] - target.means[None, :, :]) ** 2, axis=2)
    return sq @ target.weights + target.dimension * target.sigma2


def second_moment_about(target: TargetSpec, point) -> float:
    return float(second_moments_about(target, as_point(point, target.dimension)[None, :])[0])


def coupling_moments(q: TargetSpec, p: TargetSpec, mc_samples: int = MONTE_CARLO_SAMPLES,
                     seed: int = MONTE_CARLO_SEED) -> Tuple[MomentEstimate, float]:
    """
    (m_{Q,P}, M_{Q,P}) for X ∼ q and Z ∼ p independent.

    The second moment is closed form; the first is exact when X − Z is
    Gaussian and seeded Monte Carlo otherwise.
    """
    if q.dimension != p.dimension:
        raise ContractViolationError("dimension mismatch")
    origin = np.zeros(q.dimension)
    M = (second_moment_about(q, origin) + second_moment_about(p, origin)
         - 2.0 * float(q.expected_value() @ p.expected_value()))
    if q.is_gaussian and p.is_gaussian:
        difference = TargetSpec.gaussian(q.mean - p.mean, q.covariance + p.covariance)
        return abs_moment_about(difference, origin, mc_samples=mc_samples, seed=seed), M
    rng = np.random.default_rng(seed)
    dist = np.linalg.norm(draw(q, mc_samples, rng) - draw(p, mc_samples, rng), axis=1)
    return MomentEstimate(float(dist.mean()), float(dist.std(ddof=1) / np.sqrt(mc_samples))), M


def gaussian_kl(q: TargetSpec, p: TargetSpec) -> float:
    """Closed-form KL(q ‖ p) between Gaussians."""
    if not (q.is_gaussian and p.is_gaussian):
        raise DomainError("closed-form KL needs two Gaussians")
    if q.dimension != p.dimension:
        raise ContractViolationError("dimension mismatch")
    diff = p.mean - q.mean
    d = q.dimension
    return float(0.5 * (np.trace(p._precision @ q.covariance) + diff @ p._precision @ diff - d
                        + np.sum(np.log(p._cov_eigvals)) - np.sum(np.log(q._cov_eigvals))))


# --- constants ---------------------------------------------------------------

def mixture_lipschitz(target: TargetSpec) -> Dict[str, float]:
    """
    Certified score Lipschitz bound for a mixture plus its 1-D grid estimate.

    ∇s_p = −I/σ² + Cov_r(µ)/σ⁴ with responsibilities r, and the covariance of
    means is bounded by Δµ², Δµ the largest mean gap.
    """
    means = target.means
    gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    delta = float(gaps.max())
    certified = 1.0 / target.sigma2 + (delta / target.sigma2) ** 2
    result = {"certified": certified, "max_mean_gap": delta}
    if target.dimension == 1:
        grid = _root_grid(target)
        grid_max = float(np.max(np.abs(score_hessians(target, grid[:, None])[:, 0, 0])))
        result["grid"] = grid_max
        if grid_max > certified + 1e-12:
            raise ConvergenceError("grid Lipschitz estimate exceeds certified bound", result)
    return result


def _root_grid(target: TargetSpec) -> np.ndarray:
    sd = np.sqrt(target.sigma2)
    low = target.means[:, 0].min() - 10.0 * sd
    high = target.means[:, 0].max() + 10.0 * sd
    return np.linspace(low, high, ROOT_GRID_POINTS)


def find_score_root(target: TargetSpec) -> np.ndarray:
    """
    A point x* with s_p(x*) = 0.

    Gaussians: the mean. 1-D mixtures: bisection on every sign change of
    the score over a dense grid, keeping the smallest root. Higher-dimensional
    mixtures: Newton-type root finding from the mixture mean.
    """
    if target.is_gaussian:
        return target.mean.copy()

    def score_1d(x: float) -> float:
        return float(scores(target, [[x]])[0, 0])

    if target.dimension == 1:
        grid = _root_grid(target)
        values = scores(target, grid[:, None])[:, 0]
        exact = np.flatnonzero(values == 0.0)
        brackets = np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0)
        candidates = [float(grid[i]) for i in exact]
        for i in brackets:
            candidates.append(optimize.bisect(score_1d, grid[i], grid[i + 1], xtol=1e-15, rtol=4e-16))
        if not candidates:
            raise ConvergenceError("no sign change of the score on the search grid",
                                   {"low": float(grid[0]), "high": float(grid[-1])})
        root = np.array([min(candidates)])
    else:
        start = target.expected_value()
        solution = optimize.root(lambda x: scores(target, x[None, :])[0], start,
                                 jac=lambda x: score_hessians(target, x[None, :])[0])
        if not solution.success:
            raise ConvergenceError("score root finding failed",
                                   {"message": solution.message, "start": start.tolist(),
                                    "last": solution.x.tolist()})
        root = solution.x
    residual = float(np.linalg.norm(score(target, root)))
    if residual > ROOT_TOLERANCE:
        raise ConvergenceError("score root not accurate enough",
                               {"x_star": root.tolist(), "residual": residual})
    return root


def target_constants(target: TargetSpec) -> TargetConstants:
    """
    (L, x*, λ, m_P, M_P) for the target.

    λ is exact for Gaussians (smallest eigenvalue of the precision) unless a
    ``lambda_override`` is set; mixtures take λ only from ``lambda_override``
    and report NaN otherwise.
    """
    if target.is_gaussian:
        L = float(1.0 / target._cov_eigvals[0])
        lam = float(1.0 / target._cov_eigvals[-1])
    else:
        L = mixture_lipschitz(target)["certified"]
        lam = float("nan")
    if target.lambda_override is not None:
        lam = float(target.lambda_override)
    elif not target.is_gaussian:
        logger.warning("mixture target has no lambda_override; T1 constant left undefined")

    x_star = find_score_root(target)
    origin = np.zeros(target.dimension)
    m_P = abs_moment_about(target, origin)
    if m_P.stderr > 0:
        logger.info("m_P by Monte Carlo: %.6f ± %.2g", m_P.value, m_P.stderr)
    M_P = second_moment_about(target, origin)
    return TargetConstants(L=L, x_star=x_star, lam=lam, m_P=m_P.value, M_P=M_P)


def sample(target: TargetSpec, n: int, seed: int) -> ParticleEnsemble:
    """n equal-weight i.i.d. draws; identical seeds give identical ensembles."""
    if int(n) < 1:
        raise ContractViolationError(f"sample size must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    return ParticleEnsemble(draw(target, int(n), rng))


def t1_sanity_check(target: TargetSpec, lam: float, probes: int = 32, seed: int = 0,
                    grid_points: int = 20_001) -> Dict[str, Any]:
    """
    Spot-check W1(µ, P) ≤ √(2 KL(µ‖P)/λ) over random Gaussian probes µ (1-D).

    W1 uses ∫|F_µ − F_P| and KL uses the trapezoid rule on a shared grid.
    """
    if target.dimension != 1:
        raise DomainError("the T1 sanity check is implemented for 1-D targets")
    rng = np.random.default_rng(seed)
    centre = float(target.expected_value()[0])
    spread = float(np.sqrt(second_moment_about(target, [centre])))
    grid = np.linspace(centre - 15 * spread, centre + 15 * spread, grid_points)
    log_p = log_densities(target, grid[:, None])
    p = np.exp(log_p)
    cdf_p = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(grid))])
    rows = []
    for _ in range(probes):
        m = centre + spread * rng.uniform(-2.0, 2.0)
        s = spread * rng.uniform(0.3, 1.5)
        log_q = stats.norm.logpdf(grid, m, s)
        q = np.exp(log_q)
        w1 = float(integrate.trapezoid(np.abs(stats.norm.cdf(grid, m, s) - cdf_p), grid))
        kl = float(integrate.trapezoid(q * (log_q - log_p), grid))
        bound = float(np.sqrt(2.0 * max(kl, 0.0) / lam))
        rows.append({"mean": m, "sd": s, "w1": w1, "kl": kl, "bound": bound, "ok": w1 <= bound + 1e-8})
    passed = all(row["ok"] for row in rows)
    if not passed:
        logger.warning("T1 sanity check failed for lambda=%g", lam)
    return {"passed": passed, "lambda": lam, "probes": rows}
