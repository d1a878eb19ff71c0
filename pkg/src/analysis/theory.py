"""
theory.py

The constant ledger and every explicit bound on SVGD error: Wasserstein and
KSD discretization error, moment growth, the continuous-SVGD step cap and
step weights, the finite-particle KSD bound and the step-budget schedule
with its convergence rate.

Exponential bounds are evaluated in log space and saturate to +inf with a
flag instead of overflowing to NaN.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from src.core.kernels import KernelConstants
from src.core.targets import TargetConstants, TargetSpec, gaussian_kl
from src.utils.errors import DomainError, PreconditionError

logger = logging.getLogger(__name__)

LOG_MAX = math.log(np.finfo(float).max)
LEDGER_TOLERANCE = 1e-12
STEP_TOLERANCE = 1e-12


class BoundValues(NamedTuple):
    values: np.ndarray
    saturated: np.ndarray

    @property
    def any_saturated(self) -> bool:
        return bool(np.any(self.saturated))


class StepCap(NamedTuple):
    value: float
    curvature_branch: float
    growth_branch: float


class StepBudget(NamedTuple):
    b: float
    beta1: float
    beta2: float
    b1: float
    b2: float


def _exp_saturating(log_values) -> Tuple[np.ndarray, np.ndarray]:
    log_values = np.asarray(log_values, dtype=float)
    saturated = ~(log_values < LOG_MAX)
    with np.errstate(over="ignore"):
        values = np.where(saturated, np.inf, np.exp(np.minimum(log_values, LOG_MAX)))
    return values, saturated


def _growth_exponent(A: float, B: float, C: float, b_outer, b_inner) -> np.ndarray:
    """b_outer (A + B exp(C b_inner)), +inf once the inner exponential overflows."""
    b_outer = np.asarray(b_outer, dtype=float)
    b_inner = np.asarray(b_inner, dtype=float)
    inner = C * b_inner
    with np.errstate(over="ignore", invalid="ignore"):
        growth = np.where(inner < LOG_MAX, A + B * np.exp(np.minimum(inner, LOG_MAX)), np.inf)
        exponent = np.where(b_outer == 0, 0.0, b_outer * growth)
    return exponent


def prefix_before(eps: Sequence[float]) -> np.ndarray:
    """[b_{-1}, b_0, ..., b_{t-1}] with b_{-1} = 0, one entry per round 0..t."""
    return np.concatenate([[0.0], np.cumsum(np.asarray(eps, dtype=float))])


# --- constant ledger -------------------------------------------------------------

def pseudo_lipschitz_constants(kernel_consts: KernelConstants,
                               target_consts: TargetConstants) -> Tuple[float, float]:
    """
    c1 = max(√d κ² L, √d κ² L ‖x*‖ + d κ²),
    c2 = κ² L + d κ² + L (γ + √d κ²)(1 + ‖x*‖).
    """
    k2, gamma = kernel_consts.kappa_sq, kernel_consts.gamma
    L = target_consts.L
    d = len(np.atleast_1d(target_consts.x_star))
    xs = float(np.linalg.norm(target_consts.x_star))
    rd = math.sqrt(d)
    c1 = max(rd * k2 * L, rd * k2 * L * xs + d * k2)
    c2 = k2 * L + d * k2 + L * (gamma + rd * k2) * (1.0 + xs)
    return c1, c2


def abc_constants(c1: float, c2: float, m_P: float, m0P_n: float, m0P_inf: float,
                  kappa: float, L: float, d: int) -> Tuple[float, float, float]:
    A = (c1 + c2) * (1.0 + m_P)
    B = c1 * m0P_n + c2 * m0P_inf
    C = kappa ** 2 * (3.0 * L + d)
    return A, B, C


@dataclass
class BoundConstants:
    """Every constant the bounds read, plus the initial coupling moments."""
    kappa: float
    gamma: float
    L: float
    d: int
    x_star_norm: float
    lam: float
    m_P: float
    M_P: float
    c1: float
    c2: float
    A: float
    B: float
    C: float
    m0P_n: float
    m0P_inf: float
    M0P_n: float
    M0P_inf: float
    KL0: float
    alpha: float
    R1: float = float("nan")
    R2: float = float("nan")
    extras: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def build(cls, kernel_consts: KernelConstants, target_consts: TargetConstants,
              m0P_n: float, m0P_inf: float, M0P_n: float, M0P_inf: float,
              KL0: float, alpha: float, init_mean_dist: Optional[float] = None) -> "BoundConstants":
        """
        Assemble the ledger.

        Args:
            kernel_consts: (κ, γ) of the base kernel.
            target_consts: (L, x*, λ, m_P, M_P) of the target.
            m0P_n, m0P_inf: m_{Q_0^n,P} and m_{Q_0^∞,P}.
            M0P_n, M0P_inf: M_{Q_0^n,P} and M_{Q_0^∞,P}.
            KL0: KL(Q_0^∞ ‖ P).
            alpha: Descent parameter α > 1.
            init_mean_dist: E_{Q_0^∞}‖X − x*‖; when given the step caps
                R_{α,1} and R_{α,2} are filled in.
        """
        d = len(np.atleast_1d(target_consts.x_star))
        c1, c2 = pseudo_lipschitz_constants(kernel_consts, target_consts)
        A, B, C = abc_constants(c1, c2, target_consts.m_P, m0P_n, m0P_inf,
                                kernel_consts.kappa, target_consts.L, d)
        ledger = cls(kappa=kernel_consts.kappa, gamma=kernel_consts.gamma, L=target_consts.L, d=d,
                     x_star_norm=float(np.linalg.norm(target_consts.x_star)), lam=target_consts.lam,
                     m_P=target_consts.m_P, M_P=target_consts.M_P, c1=c1, c2=c2, A=A, B=B, C=C,
                     m0P_n=m0P_n, m0P_inf=m0P_inf, M0P_n=M0P_n, M0P_inf=M0P_inf,
                     KL0=KL0, alpha=alpha)
        if init_mean_dist is not None and np.isfinite(target_consts.lam):
            ledger.R1 = max_step(alpha, ledger.kappa, ledger.L, ledger.lam, init_mean_dist, KL0, 1).value
            ledger.R2 = max_step(alpha, ledger.kappa, ledger.L, ledger.lam, init_mean_dist, KL0, 2).value
            ledger.extras["init_mean_dist"] = init_mean_dist
        return ledger

    @property
    def kappa_sq(self) -> float:
        return self.kappa ** 2

    def check_consistency(self) -> float:
        """Largest disagreement between stored (A, B, C) and a recomputation."""
        A, B, C = abc_constants(self.c1, self.c2, self.m_P, self.m0P_n, self.m0P_inf,
                                self.kappa, self.L, self.d)
        worst = max(abs(A - self.A), abs(B - self.B), abs(C - self.C))
        if worst > LEDGER_TOLERANCE * max(1.0, abs(self.A), abs(self.B), abs(self.C)):
            raise PreconditionError(f"constant ledger out of sync by {worst:.3g}")
        return worst

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        out.update(out.pop("extras"))
        return out

    def format_text(self) -> str:
        rows = self.to_dict()
        width = max(len(k) for k in rows)
        return "\n".join(f"{k.ljust(width)} : {v:.12g}" if isinstance(v, (int, float))
                         else f"{k.ljust(width)} : {v}" for k, v in rows.items())


@dataclass
class StepSchedule:
    eps: List[float]

    def __post_init__(self):
        self.eps = [float(e) for e in self.eps]
        if any(not e >= 0 for e in self.eps):
            raise DomainError("step sizes must be nonnegative")

    @classmethod
    def constant(cls, eps: float, rounds: int) -> "StepSchedule":
        return cls([eps] * int(rounds))

    @property
    def rounds(self) -> int:
        return len(self.eps)

    @property
    def b(self) -> np.ndarray:
        """Running sums b_s = Σ_{u≤s} ε_u."""
        return np.cumsum(np.asarray(self.eps, dtype=float))

    @property
    def total(self) -> float:
        return float(self.b[-1]) if self.eps else 0.0

    def before(self) -> np.ndarray:
        return prefix_before(self.eps)

    def with_final_step(self, cap: float) -> List[float]:
        """ε_0..ε_{t-1} followed by ε_t = cap for the step weights."""
        return self.eps + [float(cap)]

    def check_cap(self, cap: float) -> None:
        over = [(i, e) for i, e in enumerate(self.eps) if e > cap * (1.0 + STEP_TOLERANCE)]
        if over:
            i, e = over[0]
            raise PreconditionError(f"step {i} = {e:.6g} exceeds the cap {cap:.6g}")


def schedule_from_budget(b: float, cap: float, min_rounds: int = 1) -> StepSchedule:
    """Equal steps summing to ``b`` with every step at most ``cap``."""
    if b < 0 or not cap > 0:
        raise DomainError(f"need b >= 0 and cap > 0, got b={b}, cap={cap}")
    rounds = max(int(min_rounds), math.ceil(b / cap - 1e-12) if b > 0 else 0)
    if rounds == 0:
        return StepSchedule([])
    return StepSchedule([b / rounds] * rounds)


# --- moment growth -----------------------------------------------------------------

class MomentBounds(NamedTuple):
    product: np.ndarray
    exponential: np.ndarray


def moment_bound(m0: float, C: float, eps: Sequence[float], m_P: float = 0.0,
                 second: bool = False) -> MomentBounds:
    """
    Moment growth per round r = 0..t.

    First moments: m0 Π_{s<r}(1 + ε_s C) + m_P and m0 exp(C b_{r-1}) + m_P.
    Second moments (``second=True``): M0 Π(1 + ε_s C)² and M0 exp(2 C b_{r-1});
    ``m_P`` is ignored.
    """
    eps = np.asarray(eps, dtype=float)
    factors = np.concatenate([[1.0], np.cumprod(1.0 + eps * C)])
    b_prev = prefix_before(eps)
    if second:
        with np.errstate(over="ignore"):
            return MomentBounds(m0 * factors ** 2, m0 * np.exp(2.0 * C * b_prev))
    with np.errstate(over="ignore"):
        return MomentBounds(m0 * factors + m_P, m0 * np.exp(C * b_prev) + m_P)


def displacement_bound(eps: float, C: float, m_mu_p: float) -> float:
    """max_i ‖x_i' − x_i‖ ≤ ε C m_{µ,P}."""
    return eps * C * m_mu_p


def pseudo_lipschitz_step_bound(c1: float, c2: float, m_mu: float, m_nu: float,
                                eps: float, w: float) -> float:
    """(1 + ε (c1 (1 + m_µ) + c2 (1 + m_ν))) W1(µ, ν)."""
    return (1.0 + eps * (c1 * (1.0 + m_mu) + c2 * (1.0 + m_nu))) * w


# --- discretization error -------------------------------------------------------------

def wass_discretization_bound(w0n: float, A: float, B: float, C: float, b) -> BoundValues:
    """w0n exp(b (A + B exp(C b))) with b = b_{r-1} for each round."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if w0n < 0:
        raise DomainError(f"initial distance must be nonnegative, got {w0n}")
    if w0n == 0:
        return BoundValues(np.zeros_like(b), np.zeros(b.shape, dtype=bool))
    values, saturated = _exp_saturating(math.log(w0n) + _growth_exponent(A, B, C, b, b))
    return BoundValues(values, saturated)


def wass_discretization_bound_proof(w0n: float, A: float, B: float, C: float, b_r) -> BoundValues:
    """The same bound indexed by b_r, as it appears at the end of the Gronwall argument."""
    return wass_discretization_bound(w0n, A, B, C, b_r)


def _ksd_terms(w0n, A, B, C, kappa, L, d, M0P_inf, b_outer, b_inner_first) -> BoundValues:
    b_outer = np.atleast_1d(np.asarray(b_outer, dtype=float))
    if w0n < 0:
        raise DomainError(f"initial distance must be nonnegative, got {w0n}")
    if w0n == 0:
        return BoundValues(np.zeros_like(b_outer), np.zeros(b_outer.shape, dtype=bool))
    first_scale = kappa * (d + L) * w0n
    if first_scale > 0:
        first, sat1 = _exp_saturating(math.log(first_scale)
                                      + _growth_exponent(A, B, C, b_outer, b_inner_first))
    else:
        first, sat1 = np.zeros_like(b_outer), np.zeros(b_outer.shape, dtype=bool)
    scale = d ** 0.25 * kappa * L * math.sqrt(2.0 * M0P_inf * w0n)
    if scale > 0:
        half = 0.5 * (2.0 * C * b_outer + _growth_exponent(A, B, C, b_outer, b_outer))
        second, sat2 = _exp_saturating(math.log(scale) + half)
    else:
        second, sat2 = np.zeros_like(b_outer), np.zeros(b_outer.shape, dtype=bool)
    return BoundValues(first + second, sat1 | sat2)


def ksd_discretization_bound(w0n: float, A: float, B: float, C: float, kappa: float, L: float,
                             d: int, M0P_inf: float, b) -> BoundValues:
    """
    κ(d + L) w0n exp(b(A + B e^{Cb})) + d^{1/4} κ L √(2 M w0n) exp(b(2C + A + B e^{Cb})/2)
    with b = b_{r-1} for each round.
    """
    return _ksd_terms(w0n, A, B, C, kappa, L, d, M0P_inf, b, b)


def a_sequence(w0n: float, A: float, B: float, C: float, kappa: float, L: float, d: int,
               M0P_inf: float, eps_with_final: Sequence[float]) -> BoundValues:
    """
    a_{r-1} for r = 0..t given ε_0..ε_t.

    The first term's inner exponential reads b_r, the rest b_{r-1}.
    """
    eps = np.asarray(eps_with_final, dtype=float)
    b_prev = prefix_before(eps[:-1])
    b_curr = np.cumsum(eps)
    return _ksd_terms(w0n, A, B, C, kappa, L, d, M0P_inf, b_prev, b_curr)


# --- continuous descent --------------------------------------------------------------

def max_step(alpha: float, kappa: float, L: float, lam: float, init_mean_dist: float,
             KL0: float, p: int = 1) -> StepCap:
    """
    R_{α,p} = min(p / (κ²(L + α²)), (α − 1)(1 + L E‖X − x*‖ + 2L √(2 KL0 / λ))).

    Args:
        alpha: α > 1.
        kappa: Kernel constant κ.
        L: Score Lipschitz constant.
        lam: T1 constant λ > 0.
        init_mean_dist: E_{X∼Q_0^∞}‖X − x*‖.
        KL0: KL(Q_0^∞ ‖ P), finite.
        p: 1 or 2.

    Raises:
        DomainError: α ≤ 1 or p not in {1, 2}.
        PreconditionError: λ undefined or KL0 infinite.
    """
    if not alpha > 1:
        raise DomainError(f"alpha must exceed 1, got {alpha}")
    if p not in (1, 2):
        raise DomainError(f"p must be 1 or 2, got {p}")
    if not np.isfinite(KL0):
        raise PreconditionError("KL(Q_0 || P) is infinite; the initialization is not absolutely continuous")
    if not (np.isfinite(lam) and lam > 0):
        raise PreconditionError(f"T1 constant lambda is undefined ({lam}); set target.lambda_override")
    curvature = p / (kappa ** 2 * (L + alpha ** 2))
    growth = (alpha - 1.0) * (1.0 + L * init_mean_dist + 2.0 * L * math.sqrt(2.0 * KL0 / lam))
    return StepCap(min(curvature, growth), curvature, growth)


def descent_factor(eps, kappa: float, L: float, alpha: float) -> np.ndarray:
    """
    c(ε) = ε (1 − κ²(L + α²) ε / 2).

    Raises:
        PreconditionError: α ≤ 1.
    """
    if not alpha > 1:
        raise PreconditionError(f"the descent factor needs alpha > 1, got {alpha}")
    eps = np.asarray(eps, dtype=float)
    return eps * (1.0 - kappa ** 2 * (L + alpha ** 2) * eps / 2.0)


def step_weights(eps: Sequence[float], kappa: float, L: float, alpha: float,
                 cap: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    (c(ε_r), π_r = c(ε_r) / Σ c(ε_s)).

    Raises:
        PreconditionError: a step exceeds R_{α,1}, or ε/2 ≤ c(ε) < ε fails.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.size == 0:
        raise PreconditionError("step weights need at least one step")
    limit = 1.0 / (kappa ** 2 * (L + alpha ** 2)) if cap is None else cap
    if np.any(eps > limit * (1.0 + STEP_TOLERANCE)):
        worst = int(np.argmax(eps))
        raise PreconditionError(f"step {worst} = {eps[worst]:.6g} exceeds R_alpha,1 = {limit:.6g}")
    c = descent_factor(eps, kappa, L, alpha)
    positive = eps > 0
    slack = STEP_TOLERANCE * eps
    if np.any(c[positive] < eps[positive] / 2.0 - slack[positive]) or np.any(c[positive] >= eps[positive]):
        raise PreconditionError("descent factor outside [eps/2, eps)")
    total = c.sum()
    if not total > 0:
        raise PreconditionError("all steps are zero; step weights are undefined")
    return c, c / total


def kl0_value(init: TargetSpec, target: TargetSpec, nodes: int = 2001) -> float:
    """KL(Q_0^∞ ‖ P): closed form for two Gaussians, 1-D quadrature otherwise."""
    if init.is_gaussian and target.is_gaussian:
        return gaussian_kl(init, target)
    if init.dimension != 1:
        raise PreconditionError("KL of a non-Gaussian pair is only available in one dimension")
    from src.analysis.density1d import initial_measure, kl_to_target
    return kl_to_target(initial_measure(init, target, nodes=nodes), target)


def finite_particle_bound(a_last: float, KL0: float, R1: float, b_last: float) -> float:
    """a_{t-1} + √(2 KL0 / (R_{α,1} + b_{t-1}))."""
    return a_last + math.sqrt(2.0 * KL0 / (R1 + b_last))


# --- step budget and rate ------------------------------------------------------------

def growth_phi(w: float) -> float:
    """φ(w) = log log(e^e + 1/w)."""
    if not w > 0:
        raise DomainError(f"phi needs w > 0, got {w}")
    if w < 1e-200:
        # log(e^e + 1/w) = −log w + log1p(e^e w)
        return math.log(-math.log(w) + math.log1p(math.exp(math.e) * w))
    return math.log(math.log(math.exp(math.e) + 1.0 / w))


def _psi_log(B: float, C: float, log_inv_x: float, y: float, beta: float) -> float:
    if not (B > 0 and C > 0 and beta > 0):
        raise DomainError(f"psi needs positive B, C and beta, got {B}, {C}, {beta}")
    return math.log(max(B, log_inv_x / beta - y) / B) / C


def growth_psi(B: float, C: float, x: float, y: float, beta: float) -> float:
    """ψ_{B,C}(x, y, β) = (1/C) log((1/B) max(B, (1/β) log(1/x) − y))."""
    if not x > 0:
        raise DomainError(f"psi needs x > 0, got {x}")
    return _psi_log(B, C, -math.log(x), y, beta)


def _budget_logs(w_bar: float) -> Tuple[float, float]:
    """log(1/(w̄√φ(w̄))) and log(1/(w̄φ(w̄)))."""
    log_phi = math.log(growth_phi(w_bar))
    return -math.log(w_bar) - 0.5 * log_phi, -math.log(w_bar) - log_phi


def step_budget(w_bar: float, A_bar: float, B_bar: float, C_bar: float) -> StepBudget:
    """
    b = min(ψ(w̄√φ, Ā, β1), ψ(w̄φ, Ā + 2C̄, β2)) with
    β1 = max(1, ψ(w̄√φ, Ā, 1)) and β2 = max(1, ψ(w̄φ, Ā + 2C̄, 1)).
    """
    if not w_bar > 0:
        raise DomainError(f"w_bar must be positive, got {w_bar}")
    log1, log2 = _budget_logs(w_bar)
    beta1 = max(1.0, _psi_log(B_bar, C_bar, log1, A_bar, 1.0))
    beta2 = max(1.0, _psi_log(B_bar, C_bar, log2, A_bar + 2.0 * C_bar, 1.0))
    b1 = _psi_log(B_bar, C_bar, log1, A_bar, beta1)
    b2 = _psi_log(B_bar, C_bar, log2, A_bar + 2.0 * C_bar, beta2)
    return StepBudget(b=min(b1, b2), beta1=beta1, beta2=beta2, b1=b1, b2=b2)


def budget_fixed_point_gap(budget: StepBudget, w_bar: float, A_bar: float, B_bar: float,
                           C_bar: float) -> float:
    """min over both branches of ψ(·, ·, b) − b; nonnegative whenever b > 0."""
    if budget.b <= 0:
        return 0.0
    log1, log2 = _budget_logs(w_bar)
    gap1 = _psi_log(B_bar, C_bar, log1, A_bar, budget.b) - budget.b
    gap2 = _psi_log(B_bar, C_bar, log2, A_bar + 2.0 * C_bar, budget.b) - budget.b
    return min(gap1, gap2)


def budget_lower_bound(w_bar: float, A_bar: float, B_bar: float, C_bar: float) -> float:
    """
    Lower bound on the scheduled budget,
    (1/C̄) log((1/B̄)(log(1/(w̄φ)) / max(1, ψ(w̄, 0, 1)) − Ā − 2C̄)),
    or -inf when the logarithm's argument is not positive.
    """
    _, log2 = _budget_logs(w_bar)
    denom = max(1.0, _psi_log(B_bar, C_bar, -math.log(w_bar), 0.0, 1.0))
    inner = (log2 / denom - A_bar - 2.0 * C_bar) / B_bar
    if inner <= 0:
        return float("-inf")
    return math.log(inner) / C_bar


def budget_positive_condition(w_bar: float, A_bar: float, B_bar: float, C_bar: float) -> bool:
    """Sufficient condition for a strictly positive budget."""
    if not 0 < w_bar < 1:
        return False
    power = B_bar * math.e + A_bar + 2.0 * C_bar
    log_wphi = math.log(w_bar) + math.log(growth_phi(w_bar))
    log_loginv = math.log(-math.log(w_bar))
    first = -power > log_wphi
    second = (power / C_bar) * math.log(B_bar) > log_wphi + (power / C_bar) * log_loginv
    return first and second


def rate_rhs(kappa: float, L: float, d: int, M0P_inf: float, KL0: float, R1: float,
             w_bar: float, A_bar: float, B_bar: float, C_bar: float, b: float) -> float:
    """
    Right-hand side of the finite-particle rate.

    b = 0: κ(d + L)w̄ + d^{1/4}κL√(2Mw̄) + √(2 KL0 / R).
    b > 0: (κ(d + L) + d^{1/4}κL√(2M)) / √φ(w̄) + √(2 KL0 / (R + lb)) with lb
    from ``budget_lower_bound``, floored at 0.
    """
    quarter = d ** 0.25 * kappa * L
    if b == 0:
        return (kappa * (d + L) * w_bar + quarter * math.sqrt(2.0 * M0P_inf * w_bar)
                + math.sqrt(2.0 * KL0 / R1))
    lower = max(0.0, budget_lower_bound(w_bar, A_bar, B_bar, C_bar))
    return ((kappa * (d + L) + quarter * math.sqrt(2.0 * M0P_inf)) / math.sqrt(growth_phi(w_bar))
            + math.sqrt(2.0 * KL0 / (R1 + lower)))


def iid_init_bound(M_init: float, n: float, d: int, delta: float) -> float:
    """w̄_{0,n} = M log(n)^{1{d=2}} / (δ n^{1/max(2, d)})."""
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    log_factor = math.log(n) if d == 2 else 1.0
    return M_init * log_factor / (delta * n ** (1.0 / max(2, d)))
