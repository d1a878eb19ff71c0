"""
Test suite for the constant ledger and the explicit bounds
"""
import math

import numpy as np
import pytest

from src.analysis.theory import (BoundConstants, StepSchedule, a_sequence, abc_constants,
                                 budget_fixed_point_gap, budget_positive_condition, descent_factor,
                                 displacement_bound, finite_particle_bound, growth_phi, growth_psi,
                                 iid_init_bound, kl0_value, ksd_discretization_bound, max_step,
                                 moment_bound, prefix_before, pseudo_lipschitz_constants,
                                 pseudo_lipschitz_step_bound, rate_rhs, schedule_from_budget,
                                 step_budget, step_weights, wass_discretization_bound,
                                 wass_discretization_bound_proof)
from src.core.kernels import KernelSpec, kernel_constants
from src.core.targets import TargetSpec, target_constants
from src.utils.errors import DomainError, PreconditionError

STANDARD = TargetSpec.gaussian([0.0], 1.0)
WIDE = TargetSpec.gaussian([0.0], 4.0)
KL0 = 0.5 * (4.0 - 1.0 - math.log(4.0))
M_P = math.sqrt(2.0 / math.pi)


@pytest.fixture(scope="module")
def constants():
    return kernel_constants(KernelSpec()), target_constants(STANDARD)


def test_pseudo_lipschitz_constants(constants):
    c1, c2 = pseudo_lipschitz_constants(*constants)
    assert c1 == pytest.approx(3.0)
    assert c2 == pytest.approx(9.0 + 2.0 / math.e)


def test_abc_constants():
    c1, c2 = 3.0, 9.0 + 2.0 / math.e
    A, B, C = abc_constants(c1, c2, M_P, 1.0, 1.0, math.sqrt(3.0), 1.0, 1)
    assert A == pytest.approx(22.896, abs=1e-3)
    assert B == pytest.approx(12.736, abs=1e-3)
    assert C == pytest.approx(12.0)
    assert abc_constants(0.0, 0.0, M_P, 1.0, 1.0, math.sqrt(3.0), 1.0, 1)[:2] == (0.0, 0.0)


def test_ledger_build_and_step_caps(constants):
    ledger = BoundConstants.build(*constants, m0P_n=1.0, m0P_inf=1.0, M0P_n=5.0, M0P_inf=5.0,
                                  KL0=KL0, alpha=2.0, init_mean_dist=2.0 * M_P)
    assert ledger.kappa_sq == pytest.approx(3.0)
    assert ledger.R1 == pytest.approx(1.0 / 15.0)
    assert ledger.R2 == pytest.approx(2.0 / 15.0)
    assert ledger.check_consistency() <= 1e-12
    flat = ledger.to_dict()
    assert flat["init_mean_dist"] == pytest.approx(2.0 * M_P)
    assert "A" in ledger.format_text()


def test_ledger_detects_tampering(constants):
    ledger = BoundConstants.build(*constants, m0P_n=1.0, m0P_inf=1.0, M0P_n=5.0, M0P_inf=5.0,
                                  KL0=KL0, alpha=2.0)
    ledger.A += 1e-6
    with pytest.raises(PreconditionError):
        ledger.check_consistency()


def test_max_step_branches():
    cap = max_step(2.0, math.sqrt(3.0), 1.0, 1.0, 2.0 * M_P, KL0, p=1)
    assert cap.curvature_branch == pytest.approx(1.0 / 15.0)
    assert cap.growth_branch == pytest.approx(1.0 + 2.0 * M_P + 2.0 * math.sqrt(2.0 * KL0), abs=1e-12)
    assert cap.growth_branch == pytest.approx(5.136, abs=1e-3)
    assert cap.value == pytest.approx(1.0 / 15.0)
    doubled = max_step(2.0, math.sqrt(3.0), 1.0, 1.0, 2.0 * M_P, KL0, p=2)
    assert doubled.curvature_branch == pytest.approx(2.0 / 15.0)
    assert doubled.growth_branch == cap.growth_branch


def test_max_step_errors():
    with pytest.raises(DomainError):
        max_step(1.0, 1.0, 1.0, 1.0, 0.0, 0.1)
    with pytest.raises(PreconditionError):
        max_step(2.0, 1.0, 1.0, float("nan"), 0.0, 0.1)
    with pytest.raises(PreconditionError):
        max_step(2.0, 1.0, 1.0, 1.0, 0.0, float("inf"))


def test_prefix_before():
    np.testing.assert_allclose(prefix_before([0.1, 0.2, 0.3]), [0.0, 0.1, 0.3, 0.6])
    np.testing.assert_allclose(prefix_before([]), [0.0])


def test_moment_bound_one_step():
    bounds = moment_bound(1.0, 12.0, [0.01], m_P=M_P)
    assert bounds.product[1] == pytest.approx(1.12 + M_P)
    assert bounds.exponential[1] == pytest.approx(math.exp(0.12) + M_P)
    assert bounds.product[1] <= bounds.exponential[1]
    flat = moment_bound(2.0, 12.0, [0.0, 0.0], m_P=M_P)
    np.testing.assert_allclose(flat.product, 2.0 + M_P)
    second = moment_bound(2.0, 12.0, [0.01], second=True)
    assert second.product[1] == pytest.approx(2.0 * 1.12 ** 2)
    assert second.exponential[1] == pytest.approx(2.0 * math.exp(0.24))


def test_displacement_bound():
    assert displacement_bound(0.1, 12.0, 0.5) == pytest.approx(0.6)


def test_wass_discretization_bound():
    values = wass_discretization_bound(0.1, 1.0, 1.0, 1.0, [0.0, 0.5]).values
    assert values[0] == pytest.approx(0.1)
    assert values[1] == pytest.approx(0.1 * math.exp(0.5 * (1.0 + math.exp(0.5))))
    assert values[1] == pytest.approx(0.3760, abs=1e-4)
    zero = wass_discretization_bound(0.0, 1.0, 1.0, 1.0, [0.0, 5.0])
    np.testing.assert_array_equal(zero.values, [0.0, 0.0])


def test_proof_form_is_indexed_by_current_budget():
    eps = [0.1, 0.2, 0.3]
    prefix = wass_discretization_bound(0.1, 1.0, 1.0, 1.0, prefix_before(eps)).values
    current = wass_discretization_bound_proof(0.1, 1.0, 1.0, 1.0, np.cumsum(eps)).values
    np.testing.assert_allclose(current, prefix[1:], rtol=1e-14)


def test_pseudo_lipschitz_step_bound():
    assert pseudo_lipschitz_step_bound(3.0, 9.0, 1.0, 0.0, 0.1, 2.0) == pytest.approx(2.0 * (1.0 + 0.1 * 15.0))
    assert pseudo_lipschitz_step_bound(3.0, 9.0, 1.0, 0.0, 0.0, 2.0) == 2.0


def test_wass_bound_saturates_instead_of_nan():
    result = wass_discretization_bound(0.1, 22.9, 12.7, 12.0, [0.0, 1.0, 1.6])
    assert np.isinf(result.values[-1])
    assert result.saturated[-1] and not result.saturated[0]
    assert not np.any(np.isnan(result.values))
    assert result.any_saturated


def test_ksd_discretization_bound_at_zero_budget():
    value = ksd_discretization_bound(0.1, 1.0, 1.0, 1.0, math.sqrt(3.0), 1.0, 1, 1.0, [0.0]).values[0]
    assert value == pytest.approx(math.sqrt(3.0) * 2.0 * 0.1 + math.sqrt(3.0) * math.sqrt(0.2))
    assert value == pytest.approx(1.1210, abs=1e-4)
    assert ksd_discretization_bound(0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1, 1.0, [0.3]).values[0] == 0.0


def test_ksd_bound_second_term_scales_with_root_w0n():
    one = ksd_discretization_bound(0.1, 1.0, 1.0, 1.0, 1.0, 0.0, 1, 1.0, [0.0]).values[0]
    assert one == pytest.approx(0.1)  # L = 0 leaves κ d w0n
    first = ksd_discretization_bound(0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1, 1.0, [0.0]).values[0] - 0.2
    quad = ksd_discretization_bound(0.4, 1.0, 1.0, 1.0, 1.0, 1.0, 1, 1.0, [0.0]).values[0] - 0.8
    assert quad == pytest.approx(2.0 * first)


def test_a_sequence_uses_current_budget_in_first_term():
    seq = a_sequence(0.1, 1.0, 1.0, 1.0, 1.0, 0.0, 1, 1.0, [0.5, 0.5]).values
    # L = 0: only κ(d + L) w0n exp(b_{r-1}(A + B e^{C b_r})) survives
    assert len(seq) == 2
    assert seq[0] == pytest.approx(0.1)
    assert seq[1] == pytest.approx(0.1 * math.exp(0.5 * (1.0 + math.exp(1.0))))


def test_step_weights():
    c, pi = step_weights([1.0 / 15.0], math.sqrt(3.0), 1.0, 2.0)
    assert c[0] == pytest.approx(1.0 / 30.0)
    np.testing.assert_allclose(pi, [1.0])
    _, uniform = step_weights([0.02] * 5, math.sqrt(3.0), 1.0, 2.0)
    np.testing.assert_allclose(uniform, 0.2)
    with pytest.raises(PreconditionError):
        step_weights([0.1], math.sqrt(3.0), 1.0, 2.0)
    with pytest.raises(PreconditionError):
        step_weights([0.0, 0.0], math.sqrt(3.0), 1.0, 2.0)


def test_descent_factor_bracket():
    eps = np.linspace(0.001, 1.0 / 15.0, 20)
    c = descent_factor(eps, math.sqrt(3.0), 1.0, 2.0)
    assert np.all(c >= eps / 2.0 - 1e-15) and np.all(c < eps)


@pytest.mark.parametrize("alpha", [1.0, 0.5])
def test_descent_factor_needs_alpha_above_one(alpha):
    with pytest.raises(PreconditionError):
        descent_factor([0.01], math.sqrt(3.0), 1.0, alpha)
    with pytest.raises(PreconditionError):
        step_weights([0.01], math.sqrt(3.0), 1.0, alpha)


def test_finite_particle_bound():
    assert finite_particle_bound(0.0, KL0, 1.0 / 15.0, 0.0) == pytest.approx(math.sqrt(2.0 * KL0 * 15.0))
    assert finite_particle_bound(0.0, KL0, 1.0 / 15.0, 0.0) == pytest.approx(4.921, abs=1e-3)
    assert finite_particle_bound(0.3, 0.0, 1.0 / 15.0, 1.0) == pytest.approx(0.3)


def test_kl0_value():
    assert kl0_value(WIDE, STANDARD) == pytest.approx(0.80685, abs=1e-5)
    mixture = TargetSpec.mixture([0.5, 0.5], [-1.0, 1.0], 1.0)
    assert kl0_value(mixture, mixture) == pytest.approx(0.0, abs=1e-6)


def test_growth_functions():
    assert growth_phi(1.0) == pytest.approx(math.log(math.log(math.exp(math.e) + 1.0)))
    assert growth_phi(1.0) == pytest.approx(1.0233, abs=1e-4)
    assert growth_phi(1e300) == pytest.approx(1.0, abs=1e-12)
    assert growth_phi(math.exp(-100)) == pytest.approx(math.log(100.0), abs=1e-6)
    assert growth_psi(1.0, 1.0, math.exp(-10), 2.0, 1.0) == pytest.approx(math.log(8.0))
    assert growth_psi(1.0, 1.0, math.exp(-2), 2.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        growth_phi(0.0)


def test_step_budget_clamps_for_large_w():
    budget = step_budget(1.0, 22.9, 12.7, 12.0)
    assert budget.b == 0.0
    assert budget_fixed_point_gap(budget, 1.0, 22.9, 12.7, 12.0) == 0.0
    assert not budget_positive_condition(1.0, 22.9, 12.7, 12.0)


def test_step_budget_positive_for_tiny_w():
    w = math.exp(-100)
    budget = step_budget(w, 0.0, 1.0, 1.0)
    assert 0.0 < budget.b <= math.log(100.0)
    assert budget.beta1 >= 1.0 and budget.beta2 >= 1.0
    assert budget_fixed_point_gap(budget, w, 0.0, 1.0, 1.0) >= -1e-12


def test_step_budget_nonincreasing_in_w():
    budgets = [step_budget(math.exp(-k), 0.0, 1.0, 1.0).b for k in range(1, 200, 7)]
    assert all(b2 >= b1 - 1e-12 for b1, b2 in zip(budgets, budgets[1:]))


def test_schedule_from_budget():
    schedule = schedule_from_budget(0.25, 1.0 / 15.0)
    assert schedule.rounds == 4
    assert schedule.total == pytest.approx(0.25)
    assert max(schedule.eps) <= 1.0 / 15.0
    assert schedule_from_budget(0.0, 0.1, min_rounds=1).eps == [0.0]
    assert schedule_from_budget(0.0, 0.1, min_rounds=0).rounds == 0
    assert StepSchedule.constant(0.1, 3).with_final_step(0.2) == [0.1, 0.1, 0.1, 0.2]
    with pytest.raises(PreconditionError):
        StepSchedule([0.1, 0.5]).check_cap(0.2)


def test_rate_rhs_branches():
    r = rate_rhs(math.sqrt(3.0), 1.0, 1, 5.0, KL0, 1.0 / 15.0, 0.0, 22.9, 12.7, 12.0, 0.0)
    assert r == pytest.approx(math.sqrt(2.0 * KL0 * 15.0))
    w = math.exp(-100)
    kappa, L, M = math.sqrt(3.0), 1.0, 5.0
    nonzero = rate_rhs(kappa, L, 1, M, KL0, 1.0 / 15.0, w, 0.0, 1.0, 1.0, 1.0)
    first = (kappa * 2.0 + kappa * math.sqrt(2.0 * M)) / math.sqrt(growth_phi(w))
    assert nonzero > first
    assert math.sqrt(growth_phi(w)) == pytest.approx(2.146, abs=1e-3)
    halved = rate_rhs(kappa, L, 1, M, KL0, 1.0 / 15.0, w / 2.0, 0.0, 1.0, 1.0, 1.0)
    assert halved <= nonzero


def test_iid_init_bound():
    assert iid_init_bound(4.0, 100, 1, 0.1) == pytest.approx(4.0)
    assert iid_init_bound(1.0, math.e, 2, 1.0) == pytest.approx(math.exp(-0.5))
    assert iid_init_bound(1.0, 8, 3, 1.0) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        iid_init_bound(1.0, 0.5, 1, 0.1)
    with pytest.raises(DomainError):
        iid_init_bound(1.0, 10, 1, 0.0)
