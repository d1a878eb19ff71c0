"""
Test suite for particle ensembles and the SVGD transport map
"""
import numpy as np
import pandas as pd
import pytest

from src.analysis.discrepancy import SteinKernelContext, ksd_to_target, moments
from src.analysis.theory import displacement_bound
from src.core.ensemble import ParticleEnsemble
from src.core.kernels import KernelSpec, k_eval, k_grad_x
from src.core.targets import TargetSpec, sample, score
from src.core.transport import (check_contraction, reflect, run_svgd, svgd_direction,
                                svgd_directions, svgd_step, write_checkpoint_csv)
from src.utils.errors import ContractViolationError

TARGET = TargetSpec.gaussian([0.0], 1.0)
KERNEL = KernelSpec()


def test_ensemble_validation():
    with pytest.raises(ContractViolationError):
        ParticleEnsemble(np.zeros((2, 1)), [0.5, 0.6])
    with pytest.raises(ContractViolationError):
        ParticleEnsemble(np.array([[np.nan]]))
    with pytest.raises(ContractViolationError):
        ParticleEnsemble(np.zeros((3, 1)), [0.5, 0.5])
    ens = ParticleEnsemble([1.0, 2.0])
    np.testing.assert_allclose(ens.weights, [0.5, 0.5])
    assert ens.equal_weights
    with pytest.raises(ValueError):
        ens.positions[0, 0] = 3.0


def test_normalized_weights():
    ens = ParticleEnsemble.normalized([[0.0], [1.0]], [1.0, 3.0])
    np.testing.assert_allclose(ens.weights, [0.25, 0.75])
    assert not ens.equal_weights


def test_direction_of_point_mass():
    delta_one = ParticleEnsemble([[1.0]])
    assert svgd_direction(delta_one, [1.0], TARGET, KERNEL)[0] == pytest.approx(-1.0)
    assert svgd_direction(delta_one, [0.0], TARGET, KERNEL)[0] == pytest.approx(-2.0 * np.exp(-0.5))
    delta_zero = ParticleEnsemble([[0.0]])
    assert svgd_direction(delta_zero, [0.0], TARGET, KERNEL)[0] == pytest.approx(0.0, abs=1e-15)


def test_directions_match_double_loop():
    rng = np.random.default_rng(9)
    target = TargetSpec.mixture([0.4, 0.6], [[-1.0, 0.5], [1.5, -0.5]], 0.7)
    ens = ParticleEnsemble.normalized(rng.normal(size=(7, 2)), rng.uniform(0.1, 1.0, 7))
    xs = rng.normal(size=(5, 2))
    expected = np.zeros_like(xs)
    for q, x in enumerate(xs):
        for w, xi in zip(ens.weights, ens.positions):
            expected[q] += w * (k_eval(KERNEL, xi, x) * score(target, xi) + k_grad_x(KERNEL, xi, x))
    np.testing.assert_allclose(svgd_directions(ens, xs, target, KERNEL), expected, rtol=0.0, atol=1e-12)


def test_direction_is_deterministic_across_workers():
    ens = sample(TargetSpec.gaussian([0.0, 0.0], 4.0), 600, seed=2)
    one = svgd_directions(ens, ens.positions, TargetSpec.gaussian([0.0, 0.0], 1.0), KERNEL, workers=1)
    four = svgd_directions(ens, ens.positions, TargetSpec.gaussian([0.0, 0.0], 1.0), KERNEL, workers=4)
    assert np.array_equal(one, four)


def test_zero_step_keeps_positions():
    ens = sample(TargetSpec.gaussian([0.0], 4.0), 8, seed=0)
    moved = svgd_step(ens, TARGET, KERNEL, 0.0)
    assert np.array_equal(moved.positions, ens.positions)
    assert moved.generation == ens.generation + 1


def test_negative_step_rejected():
    with pytest.raises(ContractViolationError):
        svgd_step(ParticleEnsemble([[0.0]]), TARGET, KERNEL, -0.1)


def test_symmetric_ensemble_stays_symmetric():
    ens = ParticleEnsemble([[-1.5], [-0.5], [0.5], [1.5]])
    moved = svgd_step(ens, TARGET, KERNEL, 0.1)
    np.testing.assert_allclose(np.sort(moved.positions[:, 0]), np.sort(-moved.positions[:, 0]), atol=1e-14)
    assert reflect(moved).positions[0, 0] == -moved.positions[0, 0]


def test_run_svgd_observers_and_rounds():
    seen = []

    def observer(r, ens, eps):
        seen.append((r, eps))
        return {"mean": float(ens.positions.mean())}

    init = sample(TargetSpec.gaussian([0.0], 4.0), 16, seed=1)
    trajectory = run_svgd(init, TARGET, KERNEL, [0.05, 0.05, 0.1], [observer], workers=1)
    assert trajectory.rounds == 3
    assert seen == [(0, None), (1, 0.05), (2, 0.05), (3, 0.1)]
    assert [d["mean"] for d in trajectory.diagnostics][0] == pytest.approx(float(init.positions.mean()))
    np.testing.assert_allclose(trajectory.prefix_sums(), [0.05, 0.1, 0.2])
    assert trajectory.final.generation == 3


def test_run_svgd_moves_toward_target():
    init = sample(TargetSpec.gaussian([0.0], 4.0), 32, seed=0)
    trajectory = run_svgd(init, TARGET, KERNEL, [0.1] * 20, workers=1)
    assert np.var(trajectory.final.positions) < np.var(init.positions)


def test_run_svgd_lowers_ksd_on_reference_setting():
    ctx = SteinKernelContext(TARGET, KERNEL)
    init = sample(TargetSpec.gaussian([0.0], 4.0), 64, seed=0)
    trajectory = run_svgd(init, TARGET, KERNEL, [1.0 / 30.0] * 50, workers=1)
    assert ksd_to_target(ctx, trajectory.final) < ksd_to_target(ctx, init)


def test_one_step_displacement_bound():
    init = sample(TargetSpec.gaussian([0.0], 4.0), 32, seed=1)
    trajectory = run_svgd(init, TARGET, KERNEL, [1.0 / 30.0] * 10, workers=1)
    # C = κ²(3L + d) = 12 for N(0, 1) with the unit RBF kernel
    for before, after in zip(trajectory.ensembles, trajectory.ensembles[1:]):
        moved = np.max(np.linalg.norm(after.positions - before.positions, axis=1))
        assert moved <= displacement_bound(1.0 / 30.0, 12.0, moments(before, TARGET).m_mu_p)


def test_check_contraction_holds():
    rng = np.random.default_rng(0)
    mu = ParticleEnsemble(rng.normal(size=(8, 1)))
    nu = ParticleEnsemble(rng.normal(1.0, 1.0, size=(8, 1)))
    # c1 = 3, c2 = 9 + 2/e for N(0,1) with the unit RBF kernel
    result = check_contraction(mu, nu, TARGET, KERNEL, 1.0 / 30.0, 3.0, 9.0 + 2.0 / np.e)
    assert result["passed"]
    assert result["w1_after"] <= result["bound"]


def test_write_checkpoint_csv(tmp_path):
    init = sample(TargetSpec.gaussian([0.0, 0.0], 4.0), 5, seed=0)
    trajectory = run_svgd(init, TargetSpec.gaussian([0.0, 0.0], 1.0), KERNEL, [0.05, 0.05], workers=1)
    path = write_checkpoint_csv(trajectory, str(tmp_path / "particles.csv"), rounds=[0, 2])
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["round", "particle_index", "x_0", "x_1", "weight"]
    assert len(frame) == 10
    assert sorted(frame["round"].unique()) == [0, 2]
