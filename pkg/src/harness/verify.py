"""
verify.py

Verification suite: kernel, Stein kernel, transport distance and bound
property checks plus the trajectory inequalities of a full experiment run,
collected into one pass/fail report.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from scipy import integrate, stats

from src.analysis.discrepancy import (SteinKernelContext, ksd_between, ksd_to_target, ksd_wasserstein_bound,
                                      stein_gram, wasserstein1)
from src.analysis.theory import budget_fixed_point_gap, pseudo_lipschitz_constants, step_budget
from src.core.ensemble import ParticleEnsemble
from src.core.kernels import kernel_constants
from src.core.targets import log_densities, second_moment_about, second_moments_about, t1_sanity_check, target_constants
from src.core.transport import check_contraction
from src.harness.config import ExperimentConfig
from src.harness.experiment import (TRAJECTORY_COLUMNS, CheckResult, ExperimentResult, check_from_slacks,
                                    failed_check, json_safe, recompute_bounds, run_experiment,
                                    skipped_check)
from src.parsers.csv_parser import parse_table
from src.utils.errors import SVGDError
from src.utils.pdf_exporter import export_verify_report_to_pdf

logger = logging.getLogger(__name__)

HARD_TOLERANCE = 1e-9
ZERO_MEAN_NODES = 100_001
ZERO_MEAN_POINTS = 101
ZERO_MEAN_BOX = (-5.0, 5.0)
ZERO_MEAN_TOLERANCE = 1e-6


@dataclass
class VerifyReport:
    """Named checks with worst slack, tolerance and verdict."""
    name: str
    checks: List[CheckResult] = field(default_factory=list)
    ledger: Dict[str, Any] = field(default_factory=dict)

    @property
    def hard_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.kind == "hard")

    @property
    def soft_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.kind == "soft")

    def passed(self, strict_soft: bool = False) -> bool:
        return self.hard_passed and (self.soft_passed or not strict_soft)

    def exit_code(self, strict_soft: bool = False) -> int:
        return 0 if self.passed(strict_soft) else 1

    def failures(self) -> List[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self, strict_soft: bool = False) -> Dict[str, Any]:
        return json_safe({"name": self.name, "verdict": "PASS" if self.passed(strict_soft) else "FAIL",
                          "hard_passed": self.hard_passed, "soft_passed": self.soft_passed,
                          "checks": [c.to_dict() for c in self.checks], "ledger": self.ledger})

    def to_json(self, path: str, strict_soft: bool = False) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(strict_soft), f, indent=2)
        return path

    def to_pdf(self, output_dir: str, strict_soft: bool = False) -> str:
        return export_verify_report_to_pdf(self.to_dict(strict_soft), f"{self.name}_verify.pdf", output_dir)


def _guarded(name: str, kind: str, tolerance: float, func: Callable[[], CheckResult]) -> CheckResult:
    try:
        return func()
    except SVGDError as e:
        return failed_check(name, kind, tolerance, e)


def _random_ensemble(rng: np.random.Generator, d: int, max_n: int = 32, scale: float = 2.0,
                     weighted: bool = True) -> ParticleEnsemble:
    n = int(rng.integers(1, max_n + 1))
    positions = rng.normal(0.0, scale, size=(n, d))
    if weighted and rng.random() < 0.5:
        return ParticleEnsemble.normalized(positions, rng.uniform(0.1, 1.0, size=n))
    return ParticleEnsemble(positions)


# --- kernel and Stein kernel -------------------------------------------------------

def check_kernel_grid(config: ExperimentConfig) -> CheckResult:
    low, high = config.verify.get("kernel_box", [-5.0, 5.0])
    constants = kernel_constants(config.kernel, check_box=(low, high), dim=config.dimension)
    return CheckResult("kernel_constants_grid", "hard", 0.0, HARD_TOLERANCE, True,
                       detail=f"kappa^2={constants.kappa_sq:.6g} gamma={constants.gamma:.6g}")


def check_stein_psd(config: ExperimentConfig, rng: np.random.Generator) -> CheckResult:
    """Stein Gram matrices on random point sets are symmetric and positive semidefinite."""
    ctx = SteinKernelContext(config.target, config.kernel)
    slacks = []
    for _ in range(int(config.verify.get("psd_sets", 20))):
        points = rng.normal(0.0, 2.0, size=(int(rng.integers(2, 25)), config.dimension))
        G = stein_gram(ctx, points, points)
        scale = max(1.0, float(np.max(np.abs(G))))
        asym = float(np.max(np.abs(G - G.T)))
        lowest = float(np.linalg.eigvalsh((G + G.T) / 2.0)[0])
        slacks.append(min(-asym, lowest) / scale)
    return check_from_slacks("stein_kernel_psd", "hard", slacks, HARD_TOLERANCE)


def check_stein_zero_mean(config: ExperimentConfig) -> CheckResult:
    """|E_P k_p(x, ·)| by trapezoid quadrature, for x on a grid over [-5, 5]."""
    if config.dimension != 1:
        return skipped_check("stein_zero_mean", "soft", ZERO_MEAN_TOLERANCE,
                             "quadrature check is one-dimensional")
    target = config.target
    low, high = ZERO_MEAN_BOX
    centre = float(target.expected_value()[0])
    sd = float(np.sqrt(second_moment_about(target, [centre])))
    nodes = np.linspace(min(centre - 12 * sd, low), max(centre + 12 * sd, high), ZERO_MEAN_NODES)
    density = np.exp(log_densities(target, nodes[:, None]))
    xs = np.linspace(low, high, ZERO_MEAN_POINTS)
    ctx = SteinKernelContext(target, config.kernel)
    means = []
    for start in range(0, xs.size, 10):
        block = stein_gram(ctx, xs[start:start + 10, None], nodes[:, None])
        means.extend(integrate.trapezoid(block * density[None, :], nodes, axis=1))
    worst = float(np.max(np.abs(means)))
    return CheckResult("stein_zero_mean", "soft", ZERO_MEAN_TOLERANCE - worst, ZERO_MEAN_TOLERANCE,
                       worst < ZERO_MEAN_TOLERANCE, detail=f"max |E_P k_p(x, .)| = {worst:.3g}")


# --- distances ----------------------------------------------------------------------

def check_w1_axioms(config: ExperimentConfig, rng: np.random.Generator) -> CheckResult:
    """Metric axioms on random triples in d = 1..3, plus agreement with scipy in one dimension."""
    slacks = []
    for _ in range(int(config.verify.get("w1_triples", 1000))):
        d = int(rng.integers(1, 4))
        a, b, c = (_random_ensemble(rng, d) for _ in range(3))
        ab, ba, bc, ac = wasserstein1(a, b), wasserstein1(b, a), wasserstein1(b, c), wasserstein1(a, c)
        scale = max(1.0, ab, bc, ac)
        slacks.append(min(ab, -abs(ab - ba) / scale, (ab + bc - ac) / scale, -wasserstein1(a, a)))
        if d == 1:
            reference = stats.wasserstein_distance(a.positions[:, 0], b.positions[:, 0],
                                                   a.weights, b.weights)
            slacks.append(-abs(ab - reference) / scale)
    return check_from_slacks("w1_metric_axioms", "hard", slacks, HARD_TOLERANCE)


def check_ksd_wasserstein(config: ExperimentConfig, rng: np.random.Generator) -> CheckResult:
    """KSD(µ, ν) ≤ κ(d + L)W1 + d^{1/4}κL√(2M_{ν,P}W1) on random pairs."""
    ctx = SteinKernelContext(config.target, config.kernel)
    kc = kernel_constants(config.kernel)
    L = target_constants(config.target).L
    d = config.dimension
    slacks = []
    for _ in range(int(config.verify.get("ksd_w1_pairs", 1000))):
        mu, nu = _random_ensemble(rng, d, max_n=16), _random_ensemble(rng, d, max_n=16)
        M_nu = float(nu.weights @ second_moments_about(config.target, nu.positions))
        bound = ksd_wasserstein_bound(kc.kappa, L, d, wasserstein1(mu, nu), M_nu)
        slacks.append(bound - ksd_between(ctx, mu, nu))
    return check_from_slacks("ksd_wasserstein_random", "hard", slacks, HARD_TOLERANCE)


def check_ksd_triangle(config: ExperimentConfig, rng: np.random.Generator) -> CheckResult:
    """KSD(µ‖P) ≤ KSD(µ, ν) + KSD(ν‖P), the triangle inequality in the Stein RKHS."""
    ctx = SteinKernelContext(config.target, config.kernel)
    slacks = []
    for _ in range(50):
        mu = _random_ensemble(rng, config.dimension, max_n=16)
        nu = _random_ensemble(rng, config.dimension, max_n=16)
        slacks.append(ksd_between(ctx, mu, nu) + ksd_to_target(ctx, nu) - ksd_to_target(ctx, mu))
    return check_from_slacks("ksd_triangle", "hard", slacks, 1e-8)


def check_contraction_pairs(config: ExperimentConfig, rng: np.random.Generator) -> CheckResult:
    """One-step W1 growth stays below the pseudo-Lipschitz factor."""
    c1, c2 = pseudo_lipschitz_constants(kernel_constants(config.kernel), target_constants(config.target))
    eps = config.eps if config.eps > 0 else 1.0 / 30.0
    slacks = []
    for _ in range(int(config.verify.get("contraction_pairs", 20))):
        mu = _random_ensemble(rng, config.dimension, max_n=16, weighted=False)
        nu = _random_ensemble(rng, config.dimension, max_n=16, weighted=False)
        slacks.append(check_contraction(mu, nu, config.target, config.kernel, eps, c1, c2)["slack"])
    return check_from_slacks("pseudo_lipschitz_contraction", "hard", slacks, HARD_TOLERANCE)


def check_t1(config: ExperimentConfig) -> CheckResult:
    lam = target_constants(config.target).lam
    if config.dimension != 1 or not np.isfinite(lam):
        return skipped_check("t1_sanity", "soft", 1e-8, "needs a 1-D target with a finite lambda")
    result = t1_sanity_check(config.target, lam)
    slacks = [row["bound"] - row["w1"] for row in result["probes"]]
    return check_from_slacks("t1_sanity", "soft", slacks, 1e-8, detail=f"lambda={lam:.6g}")


def check_budget_fixed_point(ledger: Dict[str, Any]) -> CheckResult:
    """b ≤ ψ(·, ·, b) whenever b > 0, and b nonincreasing in w̄, on a log grid of w̄."""
    A, B, C = ledger["A"], ledger["B"], ledger["C"]
    gaps, budgets = [], []
    for k in range(1, 401, 3):
        w_bar = float(np.exp(-k))
        budget = step_budget(w_bar, A, B, C)
        budgets.append(budget.b)
        gaps.append(budget_fixed_point_gap(budget, w_bar, A, B, C))
    monotone = np.diff(budgets)
    slacks = gaps + list(np.minimum(monotone, 0.0))
    positive = sum(b > 0 for b in budgets)
    return check_from_slacks("budget_fixed_point", "hard", slacks, HARD_TOLERANCE,
                             detail=f"{positive} of {len(budgets)} grid points with b > 0")


# --- trajectory-derived ---------------------------------------------------------------

def check_csv_schema(result: ExperimentResult) -> CheckResult:
    with tempfile.TemporaryDirectory() as tmp:
        path = result.record.write_csv(os.path.join(tmp, "trajectory.csv"))
        frame = parse_table(path, TRAJECTORY_COLUMNS)
    ok = len(frame) == len(result.record)
    return CheckResult("csv_schema", "hard", 0.0 if ok else -1.0, 0.0, ok,
                       detail=f"{len(TRAJECTORY_COLUMNS)} columns, {len(frame)} rows")


def check_ledger_reproduction(result: ExperimentResult) -> CheckResult:
    gaps = recompute_bounds(result.record)
    worst = max(gaps.values())
    return CheckResult("bounds_from_ledger", "hard", -worst, HARD_TOLERANCE, worst <= HARD_TOLERANCE,
                       detail=", ".join(f"{k}: {v:.2g}" for k, v in gaps.items()))


def verify_suite(config: ExperimentConfig) -> VerifyReport:
    """
    Run every property suite and the trajectory checks of ``config``.

    Failures (including raised errors) become report entries; the suite
    itself never raises for a failed check.
    """
    verify = config.verify
    rng = np.random.default_rng(int(verify.get("seed", 7)))
    report = VerifyReport(config.name)
    soft_tol = float(verify.get("soft_tolerance", 1e-4))

    suites = []
    if verify.get("kernel_grid", True):
        suites.append(("kernel_constants_grid", "hard", lambda: check_kernel_grid(config)))
    suites.append(("stein_kernel_psd", "hard", lambda: check_stein_psd(config, rng)))
    if verify.get("stein_zero_mean", True):
        suites.append(("stein_zero_mean", "soft", lambda: check_stein_zero_mean(config)))
    suites += [
        ("w1_metric_axioms", "hard", lambda: check_w1_axioms(config, rng)),
        ("ksd_wasserstein_random", "hard", lambda: check_ksd_wasserstein(config, rng)),
        ("ksd_triangle", "hard", lambda: check_ksd_triangle(config, rng)),
        ("pseudo_lipschitz_contraction", "hard", lambda: check_contraction_pairs(config, rng)),
        ("t1_sanity", "soft", lambda: check_t1(config)),
    ]
    for name, kind, func in suites:
        logger.info("verify: %s", name)
        report.checks.append(_guarded(name, kind, HARD_TOLERANCE if kind == "hard" else soft_tol, func))

    if verify.get("trajectory", True):
        try:
            result = run_experiment(config)
        except SVGDError as e:
            report.checks.append(failed_check("trajectory", "hard", HARD_TOLERANCE, e))
        else:
            report.ledger = result.record.header["ledger"]
            report.checks.extend(result.checks)
            report.checks.append(_guarded("csv_schema", "hard", 0.0, lambda: check_csv_schema(result)))
            report.checks.append(_guarded("bounds_from_ledger", "hard", HARD_TOLERANCE,
                                          lambda: check_ledger_reproduction(result)))
            report.checks.append(_guarded("budget_fixed_point", "hard", HARD_TOLERANCE,
                                          lambda: check_budget_fixed_point(report.ledger)))

    failed = report.failures()
    logger.info("verify %r: %d checks, %d failed", config.name, len(report.checks), len(failed))
    return report
