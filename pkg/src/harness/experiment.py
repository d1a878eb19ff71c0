"""
experiment.py

Seeded experiment runs: the finite-particle and reference SVGD runs on a
shared step schedule, every bound evaluated per round, the slack of each
inequality, and the n-sweep behind the finite-particle rate.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy

from src import __version__
from src.analysis.density1d import QuadratureMeasure, evolve, initial_measure, verify_descent
from src.analysis.discrepancy import (SteinKernelContext, ksd_between, ksd_to_target, ksd_wasserstein_bound,
                                      moments, wasserstein1)
from src.analysis.theory import (BoundConstants, StepSchedule, a_sequence, abc_constants,
                                 budget_fixed_point_gap, displacement_bound, finite_particle_bound,
                                 iid_init_bound, kl0_value, ksd_discretization_bound, moment_bound,
                                 prefix_before, rate_rhs, schedule_from_budget, step_budget,
                                 step_weights, wass_discretization_bound)
from src.core.ensemble import ParticleEnsemble
from src.core.kernels import KernelConstants, kernel_constants
from src.core.targets import (TargetConstants, abs_moment_about, coupling_moments, sample,
                              second_moment_about, target_constants)
from src.core.transport import Trajectory, run_svgd
from src.harness.config import ExperimentConfig
from src.utils.errors import PreconditionError, SVGDError

logger = logging.getLogger(__name__)

RECORD_VERSION = 1

TRAJECTORY_COLUMNS = [
    "round", "eps", "b_prev",
    "ksd_to_target", "ksd_between", "w1",
    "m_mu", "m_mu_p", "M_mu_p", "m_ref_p", "M_ref_p", "kl",
    "max_displacement", "displacement_bound",
    "moment_bound_product", "moment_bound_exp", "coupled_moment_bound",
    "second_moment_bound_product", "second_moment_bound_exp",
    "wass_bound", "wass_saturated", "ksd_bound", "ksd_saturated", "ksd_w1_bound", "a_prev",
    "slack_displacement", "slack_moment_product", "slack_moment_exp", "slack_coupled_moment",
    "slack_second_moment_product", "slack_second_moment_exp",
    "slack_wass", "slack_ksd", "slack_ksd_w1", "slack_descent",
]


@dataclass
class CheckResult:
    """Outcome of one named inequality or property check."""
    name: str
    kind: str
    worst_slack: Optional[float]
    tolerance: float
    passed: bool
    detail: str = ""
    error: Optional[str] = None
    skipped: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "kind": self.kind, "worst_slack": _json_number(self.worst_slack),
                "tolerance": self.tolerance, "verdict": "PASS" if self.passed else "FAIL",
                "detail": self.detail, "error": self.error, "skipped": self.skipped}


def _json_number(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def check_from_slacks(name: str, kind: str, slacks: Sequence[float], tolerance: float,
                      detail: str = "") -> CheckResult:
    arr = np.asarray(list(slacks), dtype=float)
    arr = arr[~np.isnan(arr)]
    worst = float(arr.min()) if arr.size else None
    passed = worst is None or worst >= -tolerance
    return CheckResult(name, kind, worst, tolerance, passed, detail)


def failed_check(name: str, kind: str, tolerance: float, error: Exception) -> CheckResult:
    logger.error("check %s failed: %s", name, error)
    return CheckResult(name, kind, None, tolerance, False, error=f"{type(error).__name__}: {error}")


def skipped_check(name: str, kind: str, tolerance: float, reason: str) -> CheckResult:
    return CheckResult(name, kind, None, tolerance, True, detail=reason, skipped=True)


@dataclass
class TrajectoryRecord:
    """Per-round measurements, bounds and slacks plus the run header."""
    header: Dict[str, Any]
    rows: List[Dict[str, Any]]

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TRAJECTORY_COLUMNS)

    def write_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


@dataclass
class Setup:
    """Constants and initial ensembles shared by a run, a sweep cell and the ledger printout."""
    kernel_consts: KernelConstants
    target_consts: TargetConstants
    finite0: ParticleEnsemble
    reference0: ParticleEnsemble
    ledger: BoundConstants
    w0n: float
    steps: List[float]
    budget: Dict[str, float] = field(default_factory=dict)


def reference_ensemble(config: ExperimentConfig) -> ParticleEnsemble:
    if config.reference_mode == "quadrature":
        return initial_measure(config.init, config.target, config.nodes, config.span_sd).as_ensemble()
    return sample(config.init, config.n_ref, config.ref_seed)


def _moments(config: ExperimentConfig, ensemble: ParticleEnsemble):
    return moments(ensemble, config.target, mc_samples=config.mc_samples, seed=config.mc_seed,
                   tolerance=config.mc_tolerance)


def _budget_steps(config: ExperimentConfig, ledger: BoundConstants, n: int) -> Dict[str, Any]:
    if not np.isfinite(ledger.R1):
        raise PreconditionError("a budget schedule needs R_alpha,1, which needs a finite lambda")
    M_init = second_moment_about(config.init, np.zeros(config.dimension))
    w_bar = iid_init_bound(M_init, n, config.dimension, config.delta)
    budget = step_budget(w_bar, ledger.A, ledger.B, ledger.C)
    schedule = schedule_from_budget(budget.b, ledger.R1, config.min_rounds)
    return {"w_bar": w_bar, "b": budget.b, "beta1": budget.beta1, "beta2": budget.beta2,
            "fixed_point_gap": budget_fixed_point_gap(budget, w_bar, ledger.A, ledger.B, ledger.C),
            "steps": schedule.eps}


def _density_terms(config: ExperimentConfig, ledger: BoundConstants, finite0: ParticleEnsemble,
                   reference0: ParticleEnsemble, mom_ref) -> Dict[str, float]:
    """
    W1, B and M_{Q_0,P} taken against the quadrature density of the
    initialization, the measure whose KL0 enters the finite-particle bound.
    """
    if config.reference_mode == "quadrature":
        density0, mom = reference0, mom_ref
    else:
        density0 = initial_measure(config.init, config.target, config.nodes, config.span_sd).as_ensemble()
        mom = _moments(config, density0)
    _, B, _ = abc_constants(ledger.c1, ledger.c2, ledger.m_P, ledger.m0P_n, mom.m_mu_p,
                            ledger.kappa, ledger.L, ledger.d)
    return {"w0n_density": wasserstein1(finite0, density0), "B_density": B,
            "M0P_density": mom.M_mu_p}


def prepare(config: ExperimentConfig, finite0: Optional[ParticleEnsemble] = None,
            reference0: Optional[ParticleEnsemble] = None) -> Setup:
    """
    Compute the constant ledger and the step schedule for an experiment.

    The ledger uses the realized initial ensembles for m_{Q_0,P} and M_{Q_0,P}
    and the continuous initialization for KL0 and the step caps.
    """
    kc = kernel_constants(config.kernel)
    tc = target_constants(config.target)
    finite0 = finite0 if finite0 is not None else sample(config.init, config.n, config.seed)
    reference0 = reference0 if reference0 is not None else reference_ensemble(config)
    mom_n, mom_ref = _moments(config, finite0), _moments(config, reference0)
    KL0 = kl0_value(config.init, config.target)
    init_mean_dist = abs_moment_about(config.init, tc.x_star).value
    ledger = BoundConstants.build(kc, tc, m0P_n=mom_n.m_mu_p, m0P_inf=mom_ref.m_mu_p,
                                  M0P_n=mom_n.M_mu_p, M0P_inf=mom_ref.M_mu_p, KL0=KL0,
                                  alpha=config.alpha, init_mean_dist=init_mean_dist)
    w0n = wasserstein1(finite0, reference0)
    ledger.extras["w0n"] = w0n
    if config.dimension == 1:
        ledger.extras.update(_density_terms(config, ledger, finite0, reference0, mom_ref))
    budget: Dict[str, Any] = {}
    steps = config.fixed_steps()
    if steps is None:
        budget = _budget_steps(config, ledger, config.n)
        steps = budget.pop("steps")
    logger.info("constants: kappa^2=%.4g gamma=%.4g L=%.4g A=%.4g B=%.4g C=%.4g w0n=%.4g",
                ledger.kappa_sq, ledger.gamma, ledger.L, ledger.A, ledger.B, ledger.C, w0n)
    return Setup(kc, tc, finite0, reference0, ledger, w0n, list(steps), budget)


def _moment_observer(config: ExperimentConfig, ctx: Optional[SteinKernelContext]):
    def observe(round_index: int, ensemble: ParticleEnsemble, eps: Optional[float]) -> Dict[str, Any]:
        m = _moments(config, ensemble)
        out = {"m_mu": m.m_mu, "m_mu_p": m.m_mu_p, "M_mu_p": m.M_mu_p, "moment_stderr": m.stderr}
        if ctx is not None:
            out["ksd_to_target"] = ksd_to_target(ctx, ensemble, config.workers)
        return out
    return observe


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    setup: Setup
    record: TrajectoryRecord
    checks: List[CheckResult]
    finite: Trajectory
    reference: Trajectory
    measures: Optional[List[QuadratureMeasure]] = None

    @property
    def hard_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.kind == "hard")

    @property
    def soft_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.kind == "soft")

    @property
    def exit_code(self) -> int:
        return 0 if self.hard_passed else 1


def _row_value(values, r: int) -> float:
    return float(values[r]) if r < len(values) else float("nan")


def density_a_sequence(setup: Setup, steps: List[float]) -> np.ndarray:
    """a_{r-1} against the initialization density; NaN without one or without R_alpha,1."""
    ledger = setup.ledger
    extras = ledger.extras
    if "w0n_density" not in extras or not np.isfinite(ledger.R1):
        return np.full(len(steps) + 1, np.nan)
    return a_sequence(extras["w0n_density"], ledger.A, extras["B_density"], ledger.C, ledger.kappa,
                      ledger.L, ledger.d, extras["M0P_density"], steps + [ledger.R1]).values


def run_experiment(config: ExperimentConfig, setup: Optional[Setup] = None) -> ExperimentResult:
    """
    Run the finite-particle and reference SVGD on the shared schedule and
    evaluate every bound per round.

    Args:
        config: Validated experiment.
        setup: Precomputed constants (recomputed when None).

    Returns:
        ExperimentResult: Record, checks and trajectories; ``exit_code`` is 1
        iff a hard inequality is violated beyond tolerance.
    """
    setup = setup or prepare(config)
    ledger, steps = setup.ledger, setup.steps
    target, kernel, d = config.target, config.kernel, config.dimension
    hard_tol = float(config.verify.get("hard_tolerance", 1e-9))
    soft_tol = float(config.verify.get("soft_tolerance", 1e-4))
    ctx = SteinKernelContext(target, kernel)

    logger.info("experiment %r: %d rounds, n=%d, reference=%s(%d)", config.name, len(steps),
                setup.finite0.n, config.reference_mode, setup.reference0.n)
    finite = run_svgd(setup.finite0, target, kernel, steps, [_moment_observer(config, ctx)], config.workers)
    reference = run_svgd(setup.reference0, target, kernel, steps, [_moment_observer(config, None)],
                         config.workers)

    checks: List[CheckResult] = []
    measures, descent = None, None
    if d == 1 and config.verify.get("descent", True):
        try:
            measures = evolve(initial_measure(config.init, target, config.nodes, config.span_sd),
                              steps, target, kernel, config.workers)
            cap = ledger.R2 if np.isfinite(ledger.R2) else None
            descent = verify_descent(measures, steps, target, kernel, ledger.kappa, ledger.L,
                                     config.alpha, cap=cap, tolerance=soft_tol, workers=config.workers)
        except SVGDError as e:
            checks.append(failed_check("kl_descent", "soft", soft_tol, e))

    t = len(steps)
    C = ledger.C
    b_prev = prefix_before(steps)
    mb = moment_bound(ledger.m0P_n, C, steps, m_P=ledger.m_P)
    mb_coupled = moment_bound(ledger.m0P_n, C, steps)
    mb2 = moment_bound(ledger.M0P_n, C, steps, second=True)
    wass = wass_discretization_bound(setup.w0n, ledger.A, ledger.B, C, b_prev)
    ksdb = ksd_discretization_bound(setup.w0n, ledger.A, ledger.B, C, ledger.kappa, ledger.L, d,
                                    ledger.M0P_inf, b_prev)
    a_prev = density_a_sequence(setup, steps)

    rows = []
    for r in range(t + 1):
        fin, ref = finite.diagnostics[r], reference.diagnostics[r]
        w1 = wasserstein1(finite.ensembles[r], reference.ensembles[r])
        between = ksd_between(ctx, finite.ensembles[r], reference.ensembles[r], config.workers)
        l3 = ksd_wasserstein_bound(ledger.kappa, ledger.L, d, w1, ref["M_mu_p"])
        eps_r = _row_value(steps, r)
        if r < t:
            shift = finite.ensembles[r + 1].positions - finite.ensembles[r].positions
            moved = float(np.max(np.linalg.norm(shift, axis=1)))
            disp = displacement_bound(eps_r, C, fin["m_mu_p"])
        else:
            moved, disp = float("nan"), float("nan")
        row = {
            "round": r, "eps": eps_r, "b_prev": float(b_prev[r]),
            "ksd_to_target": fin["ksd_to_target"], "ksd_between": between, "w1": w1,
            "m_mu": fin["m_mu"], "m_mu_p": fin["m_mu_p"], "M_mu_p": fin["M_mu_p"],
            "m_ref_p": ref["m_mu_p"], "M_ref_p": ref["M_mu_p"],
            "kl": descent.kl[r] if descent is not None else float("nan"),
            "max_displacement": moved, "displacement_bound": disp,
            "moment_bound_product": float(mb.product[r]), "moment_bound_exp": float(mb.exponential[r]),
            "coupled_moment_bound": float(mb_coupled.product[r]),
            "second_moment_bound_product": float(mb2.product[r]),
            "second_moment_bound_exp": float(mb2.exponential[r]),
            "wass_bound": float(wass.values[r]), "wass_saturated": bool(wass.saturated[r]),
            "ksd_bound": float(ksdb.values[r]), "ksd_saturated": bool(ksdb.saturated[r]),
            "ksd_w1_bound": l3, "a_prev": float(a_prev[r]),
            "slack_descent": descent.slack[r] if descent is not None and r < t else float("nan"),
        }
        row["slack_displacement"] = disp - moved
        row["slack_moment_product"] = row["moment_bound_product"] - row["m_mu"]
        row["slack_moment_exp"] = row["moment_bound_exp"] - row["m_mu"]
        row["slack_coupled_moment"] = row["coupled_moment_bound"] - row["m_mu_p"]
        row["slack_second_moment_product"] = row["second_moment_bound_product"] - row["M_mu_p"]
        row["slack_second_moment_exp"] = row["second_moment_bound_exp"] - row["M_mu_p"]
        row["slack_wass"] = row["wass_bound"] - w1
        row["slack_ksd"] = row["ksd_bound"] - between
        row["slack_ksd_w1"] = l3 - between
        rows.append(row)

    header = {
        "record_version": RECORD_VERSION, "name": config.name,
        "seeds": {"init": config.seed, "reference": config.ref_seed, "moments": config.mc_seed},
        "versions": {"package": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "pandas": pd.__version__},
        "target": target.describe(), "init": config.init.describe(),
        "kernel": {"family": kernel.family.value, "bandwidth": kernel.bandwidth,
                   "imq_exponent": kernel.imq_exponent},
        "n": setup.finite0.n, "n_ref": setup.reference0.n, "reference_mode": config.reference_mode,
        "steps": steps, "budget": setup.budget, "ledger": ledger.to_dict(),
    }
    record = TrajectoryRecord(header, rows)
    checks.extend(trajectory_checks(config, setup, record, finite, hard_tol, soft_tol))
    if descent is not None:
        checks.append(CheckResult("kl_descent", "soft", descent.worst_slack, soft_tol,
                                  descent.worst_slack >= -soft_tol,
                                  detail=f"max normalization error {max(descent.normalization):.2g}"))
        checks.append(CheckResult("kl_descent_summed", "soft", descent.summed_rhs - descent.summed_lhs,
                                  soft_tol, descent.summed_passed))
    result = ExperimentResult(config, setup, record, checks, finite, reference, measures)
    logger.info("experiment %r finished: hard=%s soft=%s", config.name,
                "PASS" if result.hard_passed else "FAIL", "PASS" if result.soft_passed else "FAIL")
    return result


def trajectory_checks(config: ExperimentConfig, setup: Setup, record: TrajectoryRecord,
                      finite: Trajectory, hard_tol: float, soft_tol: float) -> List[CheckResult]:
    """Checks derived from the per-round slacks plus the step-weight and finite-particle checks."""
    frame = record.to_frame()
    ledger = setup.ledger
    # Monte Carlo moments make the moment-based checks soft outside one dimension
    moment_kind = "hard" if config.dimension == 1 else "soft"
    saturated = int(frame["wass_saturated"].sum())
    checks = [
        check_from_slacks("displacement", moment_kind, frame["slack_displacement"], hard_tol),
        check_from_slacks("moment_growth_product", moment_kind, frame["slack_moment_product"], hard_tol),
        check_from_slacks("moment_growth_exp", moment_kind, frame["slack_moment_exp"], hard_tol),
        check_from_slacks("coupled_moment_growth", moment_kind, frame["slack_coupled_moment"], hard_tol),
        check_from_slacks("second_moment_growth_product", "hard", frame["slack_second_moment_product"], hard_tol),
        check_from_slacks("second_moment_growth_exp", "hard", frame["slack_second_moment_exp"], hard_tol),
        check_from_slacks("wasserstein_discretization", "hard", frame["slack_wass"], hard_tol,
                          detail=f"{saturated} saturated rounds"),
        check_from_slacks("ksd_discretization", "hard", frame["slack_ksd"], hard_tol,
                          detail=f"{int(frame['ksd_saturated'].sum())} saturated rounds"),
        check_from_slacks("ksd_wasserstein", "hard", frame["slack_ksd_w1"], hard_tol),
    ]
    try:
        worst = ledger.check_consistency()
        checks.append(CheckResult("ledger_consistency", "hard", -worst, 1e-12, True))
    except SVGDError as e:
        checks.append(failed_check("ledger_consistency", "hard", 1e-12, e))

    if not np.isfinite(ledger.R1):
        reason = "lambda undefined; set target.lambda_override"
        checks.append(skipped_check("step_weights", "hard", 0.0, reason))
        checks.append(skipped_check("finite_particle_ksd", "soft", soft_tol, reason))
        return checks
    try:
        _, pi = step_weights(setup.steps + [ledger.R1], ledger.kappa, ledger.L, config.alpha,
                             cap=ledger.R1)
        checks.append(CheckResult("step_weights", "hard", ledger.R1 - max(setup.steps, default=0.0),
                                  0.0, True))
    except PreconditionError as e:
        checks.append(failed_check("step_weights", "hard", 0.0, e))
        checks.append(skipped_check("finite_particle_ksd", "soft", soft_tol, "step weights undefined"))
        return checks
    if "w0n_density" not in ledger.extras:
        checks.append(skipped_check("finite_particle_ksd", "soft", soft_tol,
                                    "KL0 and W1 need a common initial density, available in one dimension"))
        return checks
    weighted = float(np.dot(pi, frame["ksd_to_target"].to_numpy()))
    b_last = float(np.sum(setup.steps))
    bound = finite_particle_bound(float(frame["a_prev"].iloc[-1]), ledger.KL0, ledger.R1, b_last)
    checks.append(CheckResult("finite_particle_ksd", "soft", bound - weighted, soft_tol,
                              bound - weighted >= -soft_tol,
                              detail=f"weighted KSD {weighted:.6g} vs bound {bound:.6g}, "
                                     f"W1 to the initial density {ledger.extras['w0n_density']:.6g}"))
    return checks


def recompute_bounds(record: TrajectoryRecord) -> Dict[str, float]:
    """Largest relative gap between emitted bounds and a recomputation from the header ledger."""
    ledger = record.header["ledger"]
    frame = record.to_frame()
    b_prev = frame["b_prev"].to_numpy()
    wass = wass_discretization_bound(ledger["w0n"], ledger["A"], ledger["B"], ledger["C"], b_prev)
    ksdb = ksd_discretization_bound(ledger["w0n"], ledger["A"], ledger["B"], ledger["C"],
                                    ledger["kappa"], ledger["L"], ledger["d"], ledger["M0P_inf"], b_prev)

    def gap(emitted, recomputed) -> float:
        emitted, recomputed = np.asarray(emitted, float), np.asarray(recomputed, float)
        finite = np.isfinite(emitted) & np.isfinite(recomputed)
        mismatch_inf = np.any(np.isinf(emitted) != np.isinf(recomputed))
        if mismatch_inf:
            return float("inf")
        if not np.any(finite):
            return 0.0
        scale = np.maximum(1.0, np.abs(recomputed[finite]))
        return float(np.max(np.abs(emitted[finite] - recomputed[finite]) / scale))

    return {"wass_bound": gap(frame["wass_bound"], wass.values),
            "ksd_bound": gap(frame["ksd_bound"], ksdb.values)}


def write_outputs(result: ExperimentResult, out_dir: Optional[str] = None) -> Dict[str, str]:
    """Write the trajectory CSV, the JSON report and the optional extras."""
    from src.analysis.density1d import write_density_csv
    from src.core.transport import write_checkpoint_csv

    config = result.config
    out_dir = out_dir or config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    paths = {"trajectory": result.record.write_csv(os.path.join(out_dir, f"{config.name}_trajectory.csv"))}
    report = {"header": result.record.header, "checks": [c.to_dict() for c in result.checks],
              "exit_code": result.exit_code}
    paths["report"] = os.path.join(out_dir, f"{config.name}_report.json")
    with open(paths["report"], "w", encoding="utf-8") as f:
        json.dump(json_safe(report), f, indent=2, default=_json_default)
    if config.outputs.get("checkpoints"):
        paths["checkpoints"] = write_checkpoint_csv(result.finite, os.path.join(out_dir, f"{config.name}_particles.csv"))
    if config.outputs.get("densities") and result.measures is not None:
        paths["densities"] = write_density_csv(result.measures, os.path.join(out_dir, f"{config.name}_densities.csv"))
    if config.outputs.get("plot"):
        paths["plot"] = plot_trajectory(result.record, os.path.join(out_dir, f"{config.name}_bounds.png"))
    logger.info("outputs written to %s", out_dir)
    return paths


def json_safe(value: Any) -> Any:
    """Replace non-finite floats by None so reports stay strict JSON."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)) and not np.isfinite(value):
        return None
    return value


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return str(value)


def plot_trajectory(record: TrajectoryRecord, path: str) -> str:
    """Measured distances against their bounds, one panel each."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    frame = record.to_frame()
    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
    panels = [("w1", "wass_bound", "W1(finite, reference)"),
              ("ksd_between", "ksd_bound", "KSD(finite, reference)"),
              ("ksd_to_target", None, "KSD(finite || P)")]
    for ax, (measured, bound, title) in zip(axes, panels):
        ax.plot(frame["round"], frame[measured], label="measured")
        if bound is not None:
            finite = np.isfinite(frame[bound])
            ax.plot(frame["round"][finite], frame[bound][finite], "--", label="bound")
        ax.set_xlabel("round")
        ax.set_yscale("log")
        ax.set_title(title)
        ax.legend()
    fig.tight_layout()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


# --- n sweep --------------------------------------------------------------------

SWEEP_COLUMNS = ["n", "repeat", "seed", "w_bar", "b", "beta1", "beta2", "fixed_point_gap", "rounds",
                 "min_ksd", "rate_rhs", "slack", "passed"]


@dataclass
class SweepTable:
    frame: pd.DataFrame
    failures: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and bool(self.frame["passed"].all()) and self.rate_nonincreasing

    @property
    def rate_nonincreasing(self) -> bool:
        by_n = self.frame.groupby("n")["rate_rhs"].max().sort_index().to_numpy()
        return bool(np.all(np.diff(by_n) <= 1e-12))

    def write_csv(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.frame.to_csv(path, index=False, float_format="%.17g")
        return path


def sweep_cell(config: ExperimentConfig, n: int, seed: int, delta: float,
               kc: KernelConstants, tc: TargetConstants) -> Dict[str, Any]:
    """One n-sweep cell: budget schedule, finite run, min KSD and the rate bound."""
    d = config.dimension
    finite0 = sample(config.init, n, seed)
    m0P_n = _moments(config, finite0)
    m_inf, M_inf = coupling_moments(config.init, config.target, mc_samples=config.mc_samples,
                                    seed=config.mc_seed)
    KL0 = kl0_value(config.init, config.target)
    ledger = BoundConstants.build(kc, tc, m0P_n=m0P_n.m_mu_p, m0P_inf=m_inf.value, M0P_n=m0P_n.M_mu_p,
                                  M0P_inf=M_inf, KL0=KL0, alpha=config.alpha,
                                  init_mean_dist=abs_moment_about(config.init, tc.x_star).value)
    if not np.isfinite(ledger.R1):
        raise PreconditionError("the rate needs R_alpha,1, which needs a finite lambda")
    M_init = second_moment_about(config.init, np.zeros(d))
    w_bar = iid_init_bound(M_init, n, d, delta)
    budget = step_budget(w_bar, ledger.A, ledger.B, ledger.C)
    schedule: StepSchedule = schedule_from_budget(budget.b, ledger.R1, int(config.sweep.get("min_rounds", 1)))
    ctx = SteinKernelContext(config.target, config.kernel)
    trajectory = run_svgd(finite0, config.target, config.kernel, schedule.eps,
                          [lambda r, ens, eps: {"ksd": ksd_to_target(ctx, ens, config.workers)}],
                          config.workers)
    min_ksd = min(diag["ksd"] for diag in trajectory.diagnostics)
    rhs = rate_rhs(ledger.kappa, ledger.L, d, ledger.M0P_inf, KL0, ledger.R1, w_bar,
                   ledger.A, ledger.B, ledger.C, budget.b)
    return {"n": n, "seed": seed, "w_bar": w_bar, "b": budget.b, "beta1": budget.beta1,
            "beta2": budget.beta2,
            "fixed_point_gap": budget_fixed_point_gap(budget, w_bar, ledger.A, ledger.B, ledger.C),
            "rounds": schedule.rounds, "min_ksd": min_ksd, "rate_rhs": rhs, "slack": rhs - min_ksd,
            "passed": min_ksd <= rhs}


def sweep_n(config: ExperimentConfig, n_list: Optional[Sequence[int]] = None,
            repeats: Optional[int] = None) -> SweepTable:
    """
    Rate table over particle counts.

    Failing cells are collected in ``failures`` instead of aborting the sweep.
    """
    n_list = list(n_list or config.sweep.get("n_list", [16, 64, 256, 1024]))
    repeats = int(repeats or config.sweep.get("repeats", 1))
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise PreconditionError(f"n_list must be increasing, got {n_list}")
    delta = float(config.sweep.get("delta", config.delta))
    kc = kernel_constants(config.kernel)
    tc = target_constants(config.target)
    rows, failures = [], []
    for n in n_list:
        for repeat in range(repeats):
            seed = config.seed + repeat
            try:
                row = sweep_cell(config, int(n), seed, delta, kc, tc)
                row["repeat"] = repeat
                rows.append(row)
                logger.info("sweep n=%d repeat=%d: min KSD %.4g <= %.4g: %s", n, repeat,
                            row["min_ksd"], row["rate_rhs"], row["passed"])
                if not row["passed"]:
                    failures.append({"n": n, "repeat": repeat, "error": "min KSD exceeds rate bound"})
            except SVGDError as e:
                logger.warning("sweep cell n=%d repeat=%d failed: %s", n, repeat, e)
                failures.append({"n": n, "repeat": repeat, "error": f"{type(e).__name__}: {e}"})
    return SweepTable(pd.DataFrame(rows, columns=SWEEP_COLUMNS), failures)
