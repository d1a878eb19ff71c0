"""
Test suite for base kernels and their constants
"""
import numpy as np
import pytest

from src.core.kernels import (KernelFamily, KernelSpec, analytic_constants, cross_hess_trace_gram,
                              diag_mixed_derivative, gram, grad_x_gram, k_cross_hess_trace, k_eval,
                              k_grad_x, k_grad_y, kernel_constants, multi_indices)
from src.utils.errors import ConfigError, ContractViolationError, DomainError

RBF = KernelSpec()
IMQ = KernelSpec(KernelFamily.IMQ, 1.0, 0.5)


def test_rbf_values():
    assert k_eval(RBF, 0.0, 0.0) == 1.0
    assert k_eval(RBF, 0.0, 1.0) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert k_eval(KernelSpec(bandwidth=2.0), [1.0, 1.0], [1.0, 3.0]) == pytest.approx(np.exp(-0.5))


def test_imq_values():
    assert k_eval(IMQ, 0.0, 1.0) == pytest.approx(2.0 ** -0.5)


@pytest.mark.parametrize("spec", [RBF, IMQ])
def test_gradients_are_antisymmetric(spec):
    x, y = np.array([0.3, -1.2]), np.array([1.0, 0.5])
    np.testing.assert_allclose(k_grad_y(spec, x, y), -k_grad_x(spec, x, y), atol=1e-15)


@pytest.mark.parametrize("spec", [RBF, IMQ])
def test_gradient_matches_finite_difference(spec):
    x, y, h = np.array([0.4]), np.array([-0.7]), 1e-6
    fd = (k_eval(spec, x + h, y) - k_eval(spec, x - h, y)) / (2 * h)
    assert k_grad_x(spec, x, y)[0] == pytest.approx(fd, abs=1e-8)


def test_cross_hessian_trace_on_diagonal():
    # Σ_j ∂x_j ∂y_j exp(-|x-y|²/2) at x = y is d
    assert k_cross_hess_trace(RBF, [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]) == pytest.approx(3.0)
    assert k_cross_hess_trace(RBF, 0.0, 1.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("spec", [RBF, IMQ])
def test_cross_hessian_trace_matches_nested_finite_difference(spec):
    rng = np.random.default_rng(8)
    h = 1e-4
    for _ in range(100):
        x, y = rng.normal(0.0, 1.5, size=2), rng.normal(0.0, 1.5, size=2)
        fd = 0.0
        for e in np.eye(2) * h:
            fd += (k_eval(spec, x + e, y + e) - k_eval(spec, x + e, y - e)
                   - k_eval(spec, x - e, y + e) + k_eval(spec, x - e, y - e)) / (4 * h * h)
        exact = k_cross_hess_trace(spec, x, y)
        assert exact == pytest.approx(fd, rel=1e-4, abs=1e-6)
        assert k_cross_hess_trace(spec, y, x) == pytest.approx(exact, abs=1e-15)


@pytest.mark.parametrize("spec", [RBF, IMQ])
def test_pairwise_forms_match_scalar_forms(spec):
    rng = np.random.default_rng(3)
    xs, ys = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    G, D, H = gram(spec, xs, ys), grad_x_gram(spec, xs, ys), cross_hess_trace_gram(spec, xs, ys)
    assert G.shape == (4, 3) and D.shape == (4, 3, 2) and H.shape == (4, 3)
    for i in range(4):
        for j in range(3):
            assert G[i, j] == pytest.approx(k_eval(spec, xs[i], ys[j]), abs=1e-15)
            np.testing.assert_allclose(D[i, j], k_grad_x(spec, xs[i], ys[j]), atol=1e-15)
            assert H[i, j] == pytest.approx(k_cross_hess_trace(spec, xs[i], ys[j]), abs=1e-14)


def test_rbf_constants():
    constants = analytic_constants(RBF)
    assert constants.kappa_sq == pytest.approx(3.0)
    assert constants.gamma == pytest.approx(2.0 / np.e)


def test_imq_constants():
    constants = analytic_constants(IMQ)
    assert constants.kappa_sq == pytest.approx(9.0)
    assert constants.gamma == pytest.approx(2.0 * (1.0 / 3.0) ** 1.5)


@pytest.mark.parametrize("spec", [RBF, IMQ, KernelSpec(bandwidth=0.5)])
def test_grid_check_passes(spec):
    constants = kernel_constants(spec, check_box=(-5.0, 5.0), dim=1)
    assert constants == analytic_constants(spec)


def test_grid_check_in_two_dimensions():
    kernel_constants(RBF, check_box=(-3.0, 3.0), dim=2, points_per_axis=41)


def test_diag_mixed_derivatives_bounded_by_kappa_sq():
    for spec in (RBF, IMQ):
        bound = analytic_constants(spec).kappa_sq
        for index in multi_indices(2):
            assert diag_mixed_derivative(spec, [0.0, 0.0], index) <= bound + 1e-12


def test_multi_indices_count():
    # orders 0, 1, 2 in two dimensions: 1 + 2 + 3
    assert len(list(multi_indices(2))) == 6


def test_invalid_specs():
    with pytest.raises(DomainError):
        KernelSpec(bandwidth=0.0)
    with pytest.raises(DomainError):
        KernelSpec(KernelFamily.IMQ, 1.0, 1.5)
    with pytest.raises(ConfigError):
        KernelSpec.from_config({"family": "Laplace"})


def test_dimension_mismatch():
    with pytest.raises(ContractViolationError):
        k_eval(RBF, [0.0, 1.0], [0.0])
