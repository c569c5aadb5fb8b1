"""End-to-end tests for the named experiments on small configurations."""

import csv
import json

import pytest
from pydantic import ValidationError

from isspcert.executor import Executor
from isspcert.experiments import (
    BOUND_COLUMNS,
    CertificationError,
    ConfigError,
    ExperimentConfig,
    ExperimentName,
)
from isspcert.runner import EXPERIMENTS
from isspcert.types import BoundKind


def _run(**fields):
    fields.setdefault("horizon", 20)
    fields.setdefault("trajectories", 300)
    config = ExperimentConfig(**fields)
    return EXPERIMENTS[config.experiment.value](config, Executor())


# =============================================================================
# Configuration
# =============================================================================


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig(experiment="bounds")
        assert config.experiment is ExperimentName.BOUNDS
        assert config.trajectories == 1500
        assert config.M == [5.0, 20.0, 100.0]

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment="bounds", horizn=10)

    def test_unknown_system_rejected(self):
        with pytest.raises(ValidationError, match="unknown system"):
            ExperimentConfig(experiment="simulate", system={"name": "pendulum"})

    @pytest.mark.parametrize(
        "fields",
        [
            {"M": []},
            {"M": [1.0, -1.0]},
            {"eta": [-0.1]},
            {"M_range": (10.0, 1.0)},
            {"chi_grid": [0.0]},
            {"delta_bracket": (0.5, 0.1)},
            {"seed": -1},
        ],
    )
    def test_invalid_values(self, fields):
        with pytest.raises(ValidationError):
            ExperimentConfig(experiment="bounds", **fields)

    def test_disturbance_block(self):
        config = ExperimentConfig(
            experiment="simulate",
            disturbance={"kind": "gaussian", "mean": [0.0], "covariance": [[0.04]]},
        )
        assert config.disturbance.dim == 1


# =============================================================================
# Experiments
# =============================================================================


class TestSimulate:
    def test_report(self, tmp_path):
        outcome = _run(experiment="simulate")
        assert outcome.report["system"] == "scalar-linear"
        assert outcome.report["domain_exits"] == 0
        assert outcome.headline["stable_fraction"] == 1.0
        assert outcome.violations == []
        written = outcome.write(tmp_path)
        assert {p.name for p in written} == {"report.json", "trajectories.csv"}
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["experiment"] == "simulate"
        assert "output" not in doc["config"]

    def test_export_disabled(self, tmp_path):
        outcome = _run(experiment="simulate", export_trajectories=False)
        assert outcome.batch is None
        assert [p.name for p in outcome.write(tmp_path)] == ["report.json"]

    def test_dimension_mismatch_is_config_error(self):
        with pytest.raises(ConfigError, match="disturbance dimension"):
            _run(
                experiment="simulate",
                disturbance={"kind": "point-mass", "value": [0.0, 0.0]},
            )

    def test_bad_x0_is_config_error(self):
        with pytest.raises(ConfigError, match="x0"):
            _run(experiment="simulate", x0=[1.0, 2.0])

    def test_bad_system_params_is_config_error(self):
        with pytest.raises(ConfigError):
            _run(
                experiment="simulate",
                system={"name": "scalar-linear", "params": {"b": 1.0}},
            )


class TestCertify:
    def test_certificate(self):
        outcome = _run(experiment="certify", target_alpha=0.1, drift_samples=2048)
        assert outcome.headline["certified"] is True
        cert = outcome.report["certificate"]
        assert cert["alpha"] == 0.1
        assert cert["evidence"] == "sampled"
        assert outcome.report["counterexample"] is None

    def test_counterexample_reported(self):
        outcome = _run(
            experiment="certify",
            system={"name": "scalar-linear", "params": {"a": 0.5}},
            disturbance={"kind": "point-mass", "value": [0.0]},
            target_alpha=0.9,
        )
        assert outcome.headline["certified"] is False
        assert outcome.report["certificate"] is None
        assert outcome.report["counterexample"]["phi_budget"] == 0.0


class TestBounds:
    def test_bound_rows(self, tmp_path):
        outcome = _run(experiment="bounds", target_alpha=0.1, rho_tilde=10.0)
        labels = [b.label for b in outcome.bounds]
        assert labels == ["exit", "exit", "exit", "level", "level_ville"]
        assert outcome.violations == []
        assert all(b.empirical is not None for b in outcome.bounds)
        assert len(outcome.report["envelopes"]) == 3

        outcome.write(tmp_path)
        with (tmp_path / "bounds.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == BOUND_COLUMNS
        assert len(rows) == 6

    def test_bound_increases_with_m(self):
        outcome = _run(experiment="bounds", target_alpha=0.1)
        values = [b.bound for b in outcome.bounds]
        assert values == sorted(values)

    def test_certification_failure_raises(self):
        with pytest.raises(CertificationError) as info:
            _run(
                experiment="bounds",
                system={"name": "scalar-linear", "params": {"a": 0.5}},
                disturbance={"kind": "point-mass", "value": [0.0]},
                target_alpha=0.9,
            )
        assert info.value.counterexample is not None

    def test_wrong_certificate_is_flagged(self):
        outcome = _run(
            experiment="bounds",
            certificate={
                "alpha": 0.19,
                "phi": 0.0,
                "a": 5.263,
                "b": 5.263,
                "c": 2.0,
                "p": 2.0,
                "evidence": "analytic",
            },
            disturbance={"kind": "gaussian", "mean": [0.0], "covariance": [[1.0]]},
            M=[100.0],
        )
        assert len(outcome.violations) == 1
        assert outcome.bounds[0].sound is False


class TestHittingTime:
    def test_bound_above_empirical(self):
        outcome = _run(experiment="hitting-time", target_alpha=0.1)
        head = outcome.headline
        assert head["gamma"] == pytest.approx(
            2.0 * outcome.report["recurrence_threshold"]
        )
        assert head["empirical_mean"] <= head["bound"]
        assert outcome.report["quadrature_relative_error"] < 1e-6
        assert outcome.violations == []
        closed = outcome.report["closed_form"]
        assert head["bound"] == closed["expected_hitting_time_upper"]

    def test_explicit_gamma(self):
        outcome = _run(experiment="hitting-time", target_alpha=0.1, gamma=3.0)
        assert outcome.headline["gamma"] == 3.0


class TestSweep:
    def test_table(self, tmp_path):
        outcome = _run(
            experiment="sweep-M-eta", target_alpha=0.1, eta=[0.0, 1.0], M_points=5
        )
        header, rows = outcome.tables["sweep.csv"]
        assert header[:4] == ["M", "eta", "lambda", "bound"]
        assert len(rows) == 10
        assert rows[0][0] == pytest.approx(1.0)
        assert rows[4][0] == pytest.approx(1000.0)
        assert set(outcome.headline["smallest_M"]) == {"0.0", "1.0"}
        names = {p.name for p in outcome.write(tmp_path)}
        assert names == {"report.json", "sweep.csv"}


class TestReproduceLqg:
    def test_indicators_agree(self):
        outcome = _run(experiment="reproduce-lqg", trajectories=200)
        assert outcome.report["system"] == "double-integrator-lqg"
        assert outcome.report["x0"] == [5.0] * 4
        assert set(outcome.report["indicator_mismatches"].values()) == {0}
        assert [b.label for b in outcome.bounds] == ["rho_k", "exit"] * 3
        assert outcome.report["certificate"]["evidence"] == "analytic"

    def test_largest_m_exit_row_is_informative(self):
        outcome = _run(experiment="reproduce-lqg", trajectories=200)
        exit_rows = [b for b in outcome.bounds if b.label == "exit"]
        top = exit_rows[-1]
        assert top.parameters["M"] == 100.0
        assert 0.0 < top.bound < top.empirical.fraction

    def test_full_batch_bounds_are_sound_and_weak(self):
        outcome = _run(experiment="reproduce-lqg", horizon=100, trajectories=1500)
        assert outcome.violations == []
        assert set(outcome.report["indicator_mismatches"].values()) == {0}
        assert outcome.headline["flagged_steps"] == []
        for b in outcome.bounds:
            assert b.empirical.trajectories == 1500
            assert b.bound <= b.empirical.wilson_interval[1]
        informative = [
            b for b in outcome.bounds if b.label == "rho_k" or b.bound > 0.0
        ]
        assert len(informative) >= 4
        for b in informative:
            # Below the fraction by more than the Wilson half-width beneath it.
            assert b.bound < b.empirical.wilson_interval[0]
        assert all(outcome.report["bound_strictly_below_fraction"].values())


class TestReproduceWalker:
    def test_pipeline(self):
        outcome = _run(
            experiment="reproduce-walker-surrogate",
            trajectories=200,
            drift_samples=1024,
            shell_samples=16,
        )
        head = outcome.headline
        assert head["delta_star"] > 0.0
        assert head["chi_star"] in (1.0, 2.0, 3.0, 4.0)
        assert head["rho_tilde"] > 0.0
        assert [b.label for b in outcome.bounds] == ["stable", "inside_rho_tilde"]
        assert outcome.report["iss_robustness"]["mode"] == "iss"

    def test_certified_region_is_non_trivial(self):
        outcome = _run(
            experiment="reproduce-walker-surrogate",
            horizon=10,
            trajectories=2000,
            drift_samples=1024,
            shell_samples=16,
        )
        head, report = outcome.headline, outcome.report
        cert = report["certificate"]
        radius = report["region_scale"] * head["chi_star"] * head["delta_star"]
        assert radius < 1.0
        assert head["rho_tilde"] >= cert["phi"] / cert["alpha"]
        assert head["kushner_bound"] > 0.5
        assert outcome.violations == []
        for b in outcome.bounds:
            assert b.kind is BoundKind.KUSHNER_CASE_1
            assert b.bound == head["kushner_bound"]
            assert b.sound
            assert b.empirical.fraction >= b.bound
        assert report["domain_exits"] <= 20

    def test_infeasible_bracket(self):
        # The certified ball at chi = 1 already leaves the unit domain.
        with pytest.raises(CertificationError, match="no disturbance scale"):
            _run(
                experiment="reproduce-walker-surrogate",
                chi_grid=[1.0],
                delta_bracket=(0.95, 0.99),
                trajectories=10,
                drift_samples=256,
                shell_samples=8,
            )
