"""
Test suite for experiment configuration, runs, sweeps, verification and the CLI
"""
import json
import os

import numpy as np
import pandas as pd
import pytest

from src.analysis.density1d import initial_measure
from src.analysis.discrepancy import wasserstein1
from src.analysis.theory import a_sequence
from src.harness.cli import main
from src.harness.config import load_config
from src.harness.experiment import (TRAJECTORY_COLUMNS, json_safe, prepare, recompute_bounds,
                                    run_experiment, sweep_n, write_outputs)
from src.harness.verify import ZERO_MEAN_TOLERANCE, check_stein_zero_mean, verify_suite
from src.utils.errors import ConfigError, PreconditionError

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")

SMALL = ["init.n=8", "reference.n_ref=16", "steps.rounds=3", "reference.nodes=201",
         "moments.mc_samples=1000"]


def small_config(*extra, tmp_path=None):
    overrides = SMALL + list(extra)
    if tmp_path is not None:
        overrides.append(f"output.dir={json.dumps(str(tmp_path))}")
    return load_config(None, overrides)


def test_defaults():
    config = load_config()
    assert config.n == 64 and config.n_ref == 640
    assert config.fixed_steps() == [1.0 / 30.0] * 50
    assert config.dimension == 1


def test_overrides_and_seed(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"name": "file", "steps": {"rounds": 4}}))
    config = load_config(str(path), ["steps.eps=0.01"], seed=9)
    assert config.name == "file"
    assert config.fixed_steps() == [0.01] * 4
    assert config.seed == 9


@pytest.mark.parametrize("override", [
    "alpha=1.0",
    "steps.policy=adaptive",
    "steps.eps=-0.1",
    "reference.mode=grid",
    "init.n=0",
    "steps.delta=2.0",
    "kernel.family=Laplace",
    "init.dimension=2",
])
def test_invalid_configs(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_quadrature_reference_needs_one_dimension():
    with pytest.raises(ConfigError):
        load_config(None, ["reference.mode=quadrature", "target.dimension=2", "init.dimension=2"])


def test_prepare_ledger():
    setup = prepare(small_config())
    ledger = setup.ledger
    assert ledger.kappa_sq == pytest.approx(3.0)
    assert ledger.KL0 == pytest.approx(0.5 * (3.0 - 1.3862943611198906), abs=1e-12)
    assert ledger.R1 > 0 and ledger.R2 > ledger.R1
    assert setup.w0n > 0
    assert len(setup.steps) == 3


def test_run_experiment_record():
    result = run_experiment(small_config())
    frame = result.record.to_frame()
    assert list(frame.columns) == TRAJECTORY_COLUMNS
    assert len(result.record) == 4
    assert result.hard_passed
    assert result.exit_code == 0
    names = {c.name for c in result.checks}
    assert {"wasserstein_discretization", "ksd_discretization", "step_weights", "kl_descent"} <= names
    assert frame["kl"].iloc[-1] < frame["kl"].iloc[0]
    assert recompute_bounds(result.record) == {"wass_bound": 0.0, "ksd_bound": 0.0}


def test_finite_particle_check_measures_against_initial_density():
    config = small_config("verify.descent=false")
    result = run_experiment(config)
    setup, ledger = result.setup, result.setup.ledger
    density0 = initial_measure(config.init, config.target, config.nodes, config.span_sd).as_ensemble()
    w0 = ledger.extras["w0n_density"]
    assert w0 == pytest.approx(wasserstein1(setup.finite0, density0), abs=1e-12)
    assert w0 != pytest.approx(setup.w0n, abs=1e-9)
    expected = a_sequence(w0, ledger.A, ledger.extras["B_density"], ledger.C, ledger.kappa, ledger.L, 1,
                          ledger.extras["M0P_density"], setup.steps + [ledger.R1]).values
    np.testing.assert_allclose(result.record.to_frame()["a_prev"], expected, rtol=1e-12)
    check = next(c for c in result.checks if c.name == "finite_particle_ksd")
    assert not check.skipped


def test_finite_particle_check_skipped_in_two_dimensions():
    config = small_config("target.dimension=2", "init.dimension=2", "steps.rounds=2")
    result = run_experiment(config)
    check = next(c for c in result.checks if c.name == "finite_particle_ksd")
    assert check.skipped and check.passed
    assert "w0n_density" not in result.setup.ledger.extras
    assert result.record.to_frame()["a_prev"].isna().all()


def test_stein_zero_mean_covers_box_for_narrow_target():
    config = load_config(None, ["target.mean=0.5", "target.covariance=0.01"])
    check = check_stein_zero_mean(config)
    assert check.passed and not check.skipped
    assert 0.0 < check.worst_slack <= ZERO_MEAN_TOLERANCE


def test_run_experiment_is_deterministic():
    config = small_config("verify.descent=false")
    first = run_experiment(config).record.to_frame()
    second = run_experiment(config).record.to_frame()
    pd.testing.assert_frame_equal(first, second)


def test_zero_rounds():
    result = run_experiment(small_config("steps.rounds=0"))
    assert len(result.record) == 1
    assert result.record.rows[0]["b_prev"] == 0.0


def test_step_above_cap_fails_step_weights():
    result = run_experiment(small_config("steps.eps=0.5", "verify.descent=false"))
    check = next(c for c in result.checks if c.name == "step_weights")
    assert not check.passed
    assert result.exit_code == 1


def test_write_outputs(tmp_path):
    config = small_config("output.densities=true", "output.checkpoints=true", tmp_path=tmp_path)
    paths = write_outputs(run_experiment(config))
    assert set(paths) == {"trajectory", "report", "checkpoints", "densities"}
    assert all(os.path.exists(p) for p in paths.values())
    with open(paths["report"], encoding="utf-8") as f:
        report = json.load(f)
    assert report["header"]["record_version"] == 1
    assert report["header"]["n"] == 8


def test_json_safe():
    assert json_safe({"a": [1.0, float("inf")], "b": float("nan")}) == {"a": [1.0, None], "b": None}


def test_sweep_small():
    config = small_config("steps.policy=budget")
    table = sweep_n(config, [4, 16])
    assert list(table.frame["n"]) == [4, 16]
    assert table.rate_nonincreasing
    assert table.passed
    with pytest.raises(PreconditionError):
        sweep_n(config, [16, 4])


def test_sweep_over_acceptance_sizes():
    config = load_config(os.path.join(CONFIGS, "sweep.json"), ["moments.mc_samples=1000"])
    table = sweep_n(config)
    assert list(table.frame["n"]) == [16, 64, 256, 1024]
    assert table.passed
    assert (table.frame["min_ksd"] <= table.frame["rate_rhs"]).all()
    # the budget stays at zero until w̄ is far below what these sizes reach
    assert (table.frame["b"] == 0.0).all()


def test_verify_suite_small(tmp_path):
    config = small_config("verify.psd_sets=2", "verify.w1_triples=5", "verify.ksd_w1_pairs=5",
                          "verify.contraction_pairs=2", "verify.stein_zero_mean=false",
                          "verify.kernel_grid=false")
    report = verify_suite(config)
    names = [c.name for c in report.checks]
    assert {"stein_kernel_psd", "w1_metric_axioms", "csv_schema", "bounds_from_ledger",
            "budget_fixed_point"} <= set(names)
    assert report.hard_passed
    path = report.to_json(str(tmp_path / "verify.json"))
    with open(path, encoding="utf-8") as f:
        assert json.load(f)["verdict"] == "PASS"
    pdf = report.to_pdf(str(tmp_path))
    assert pdf.endswith("_verify.pdf") and os.path.getsize(pdf) > 0


def test_cli_constants(capsys):
    assert main(["constants", "--set", "init.n=8", "--set", "reference.n_ref=16", "--json"]) == 0
    out = capsys.readouterr().out
    assert "kappa" in out and "R1" in out


def test_cli_run_writes_outputs(tmp_path):
    argv = ["run", "--out", str(tmp_path)]
    for override in SMALL + ["verify.descent=false"]:
        argv += ["--set", override]
    assert main(argv) == 0
    assert (tmp_path / "reference_trajectory.csv").exists()
    assert (tmp_path / "reference_report.json").exists()


def test_cli_config_error_exit_code():
    assert main(["run", "--set", "alpha=0.5"]) == 2
