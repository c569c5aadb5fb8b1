"""Tests for isspcert.types models."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from isspcert.types import (
    BoundKind,
    BoundReport,
    DisturbanceKind,
    DisturbanceSpec,
    DriftEstimate,
    EisspCertificate,
    Evidence,
    ExitBound,
    IssEnvelope,
    LpMethod,
    LpNorm,
    RegionKind,
    RobustnessResult,
    SampleRegion,
    SuccessReport,
)


def _cert(**overrides):
    fields = dict(alpha=0.2, phi=0.1, a=1.0, b=2.0, c=2.0, p=2.0, evidence="analytic")
    fields.update(overrides)
    return EisspCertificate(**fields)


# =============================================================================
# Disturbances
# =============================================================================


class TestDisturbanceSpec:
    def test_scalar_covariance_expands_to_identity(self):
        spec = DisturbanceSpec.gaussian(mean=[0.0, 0.0], covariance=0.01)
        assert spec.kind is DisturbanceKind.GAUSSIAN
        assert spec.dim == 2
        np.testing.assert_allclose(spec.covariance_matrix, 0.01 * np.eye(2))

    def test_diagonal_covariance(self):
        spec = DisturbanceSpec.gaussian(mean=0.0, covariance=[1.0, 4.0])
        np.testing.assert_allclose(spec.covariance_matrix, np.diag([1.0, 4.0]))
        np.testing.assert_array_equal(spec.mean_vector, [0.0, 0.0])

    def test_accepts_numpy_arrays(self):
        spec = DisturbanceSpec(
            kind="gaussian", mean=np.zeros(1), covariance=np.eye(1)
        )
        assert spec.mean == [0.0]

    def test_rejects_indefinite_covariance(self):
        with pytest.raises(ValidationError, match="positive definite"):
            DisturbanceSpec.gaussian([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])

    def test_rejects_asymmetric_covariance(self):
        with pytest.raises(ValidationError, match="symmetric"):
            DisturbanceSpec.gaussian([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_truncated_needs_radius(self):
        with pytest.raises(ValidationError, match="radius"):
            DisturbanceSpec.truncated_gaussian(0.0, 1.0, radius=0.0)

    def test_uniform_ball_needs_dimension(self):
        with pytest.raises(ValidationError):
            DisturbanceSpec(kind="uniform-ball", radius=1.0)

    def test_point_mass_needs_value(self):
        with pytest.raises(ValidationError):
            DisturbanceSpec(kind="point-mass", value=[])

    def test_dimension_must_agree(self):
        with pytest.raises(ValidationError, match="dimension"):
            DisturbanceSpec(kind="point-mass", value=[0.0, 0.0], dimension=3)

    def test_zero_mean(self):
        assert DisturbanceSpec.uniform_ball(1.0, 3).is_zero_mean()
        assert not DisturbanceSpec.point_mass([0.0, 1.0]).is_zero_mean()

    def test_scaled_gaussian(self):
        spec = DisturbanceSpec.gaussian([1.0], 0.5).scaled(2.0)
        np.testing.assert_allclose(spec.mean_vector, [2.0])
        np.testing.assert_allclose(spec.covariance_matrix, [[2.0]])

    def test_scaled_truncated_keeps_kind(self):
        spec = DisturbanceSpec.truncated_gaussian(0.0, 1.0, 3.0).scaled(0.1)
        assert spec.kind is DisturbanceKind.TRUNCATED_GAUSSIAN
        assert spec.radius == pytest.approx(0.3)

    def test_scaled_to_zero_is_point_mass(self):
        spec = DisturbanceSpec.gaussian([0.0, 0.0], 1.0).scaled(0.0)
        assert spec.kind is DisturbanceKind.POINT_MASS
        assert spec.dim == 2

    def test_json_round_trip(self):
        spec = DisturbanceSpec.truncated_gaussian([0.0, 1.0], [0.1, 0.2], 0.5)
        assert DisturbanceSpec.model_validate_json(spec.model_dump_json()) == spec

    def test_frozen(self):
        spec = DisturbanceSpec.point_mass([0.0])
        with pytest.raises(ValidationError):
            spec.value = [1.0]


# =============================================================================
# Norms and certificates
# =============================================================================


class TestLpNorm:
    def test_upper_is_value_when_analytic(self):
        norm = LpNorm(p=2.0, value=1.5, method=LpMethod.ANALYTIC)
        assert norm.upper == 1.5

    def test_upper_uses_interval(self):
        norm = LpNorm(
            p=3.0,
            value=1.0,
            method=LpMethod.MONTE_CARLO,
            sample_count=100,
            confidence_interval=(0.9, 1.2),
        )
        assert norm.upper == 1.2

    def test_analytic_with_interval_rejected(self):
        with pytest.raises(ValidationError):
            LpNorm(p=2.0, value=1.0, method="analytic", confidence_interval=(0.9, 1.1))

    def test_interval_must_contain_value(self):
        with pytest.raises(ValidationError):
            LpNorm(p=2.0, value=2.0, method="monte-carlo", confidence_interval=(0, 1))


class TestEisspCertificate:
    def test_derived_quantities(self):
        cert = _cert(alpha=0.2, phi=0.1)
        assert cert.theta == pytest.approx(1.25)
        assert cert.noise_floor == pytest.approx(0.5)
        assert cert.evidence is Evidence.ANALYTIC

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValidationError, match="alpha"):
            _cert(alpha=alpha)

    def test_negative_phi_rejected(self):
        with pytest.raises(ValidationError, match="phi"):
            _cert(phi=-1e-3)

    def test_a_above_b_rejected(self):
        with pytest.raises(ValidationError, match="exceeds"):
            _cert(a=3.0, b=2.0)

    def test_infinite_p_allowed(self):
        assert math.isinf(_cert(p=math.inf).p)


class TestDriftEstimate:
    def test_interval_must_contain_mean(self):
        with pytest.raises(ValidationError):
            DriftEstimate(
                state=[0.0],
                mean_drift=1.0,
                confidence_interval=(2.0, 3.0),
                sample_count=4,
            )

    def test_state_from_array(self):
        est = DriftEstimate(
            state=np.array([1.0, 2.0]),
            mean_drift=0.0,
            confidence_interval=(-1.0, 1.0),
            sample_count=10,
        )
        assert est.state == [1.0, 2.0]
        assert est.upper == 1.0


# =============================================================================
# Sample regions
# =============================================================================


class TestSampleRegion:
    def test_grid(self):
        region = SampleRegion(kind="grid", dimension=2, radius=1.0, points_per_axis=3)
        states = region.states()
        assert states.shape == (9, 2)
        assert states.min() == -1.0 and states.max() == 1.0

    def test_empty_grid(self):
        region = SampleRegion(kind=RegionKind.GRID, dimension=2)
        assert region.states().shape == (0, 2)

    def test_ball_inside_radius(self):
        region = SampleRegion(kind="ball", dimension=3, radius=2.0, count=200)
        states = region.states(seed=4)
        assert states.shape == (200, 3)
        assert np.all(np.linalg.norm(states, axis=1) <= 2.0 + 1e-12)

    def test_shell_between_radii(self):
        region = SampleRegion(
            kind="shell", dimension=2, radius=2.0, inner_radius=1.0, count=100
        )
        norms = np.linalg.norm(region.states(), axis=1)
        assert np.all(norms >= 1.0 - 1e-12)
        assert np.all(norms <= 2.0 + 1e-12)

    def test_sphere(self):
        region = SampleRegion(
            kind="shell", dimension=2, radius=1.5, inner_radius=1.5, count=10
        )
        np.testing.assert_allclose(np.linalg.norm(region.states(), axis=1), 1.5)

    def test_seeded(self):
        region = SampleRegion(kind="ball", dimension=2, count=5)
        np.testing.assert_array_equal(region.states(1), region.states(1))
        assert not np.array_equal(region.states(1), region.states(2))

    def test_points_verbatim(self):
        region = SampleRegion(kind="points", dimension=1, points=[[0.5], [-1.0]])
        np.testing.assert_array_equal(region.states(), [[0.5], [-1.0]])

    def test_point_dimension_checked(self):
        with pytest.raises(ValidationError):
            SampleRegion(kind="points", dimension=2, points=[[1.0]])

    def test_inner_above_outer_rejected(self):
        with pytest.raises(ValidationError):
            SampleRegion(kind="shell", dimension=1, radius=1.0, inner_radius=2.0)


# =============================================================================
# Bounds and reports
# =============================================================================


class TestExitBound:
    def test_alias(self):
        bound = ExitBound(lambda_=2.0, probability_lower_bound=0.5, kind="ville")
        assert bound.model_dump(by_alias=True)["lambda"] == 2.0
        assert ExitBound.model_validate(
            {"lambda": 2.0, "probability_lower_bound": 0.5, "kind": "ville"}
        ) == bound

    def test_lambda_positive(self):
        with pytest.raises(ValidationError):
            ExitBound(lambda_=0.0, probability_lower_bound=0.5, kind=BoundKind.VILLE)

    def test_probability_range(self):
        with pytest.raises(ValidationError):
            ExitBound(lambda_=1.0, probability_lower_bound=1.5, kind=BoundKind.VILLE)


class TestIssEnvelope:
    def test_scalar_and_vector(self):
        env = IssEnvelope(m_tilde=2.0, alpha_tilde=0.5, gamma_value=0.1)
        assert env.bound(0, 1.0) == pytest.approx(2.1)
        np.testing.assert_allclose(env.bound([0, 1, 2], 1.0), [2.1, 1.1, 0.6])

    def test_alpha_tilde_below_one(self):
        with pytest.raises(ValidationError):
            IssEnvelope(m_tilde=1.0, alpha_tilde=1.0, gamma_value=0.0)


class TestSuccessReport:
    def test_valid(self):
        report = SuccessReport(
            fraction=0.5, wilson_interval=(0.4, 0.6), successes=5, trajectories=10
        )
        assert report.fraction == 0.5

    def test_interval_must_contain_fraction(self):
        with pytest.raises(ValidationError):
            SuccessReport(
                fraction=0.9, wilson_interval=(0.4, 0.6), successes=9, trajectories=10
            )

    def test_successes_bounded(self):
        with pytest.raises(ValidationError):
            SuccessReport(
                fraction=1.0, wilson_interval=(0.9, 1.0), successes=11, trajectories=10
            )


class TestBoundReport:
    def _empirical(self, hi):
        return SuccessReport(
            fraction=0.5, wilson_interval=(0.4, hi), successes=50, trajectories=100
        )

    def test_sound_without_empirical(self):
        assert BoundReport(kind="ville", lambda_=1.0, bound=0.9).sound

    def test_sound_when_below_upper(self):
        report = BoundReport(
            kind="ville", lambda_=1.0, bound=0.55, empirical=self._empirical(0.6)
        )
        assert report.sound

    def test_unsound_when_above_upper(self):
        report = BoundReport(
            kind="kushner-case-1",
            lambda_=1.0,
            bound=0.7,
            empirical=self._empirical(0.6),
        )
        assert not report.sound

    def test_dump_uses_alias(self):
        dumped = BoundReport(kind="ville", lambda_=3.0, bound=0.1).model_dump(
            mode="json", by_alias=True
        )
        assert dumped["lambda"] == 3.0
        assert dumped["kind"] == "ville"


class TestRobustnessResult:
    def test_feasible_needs_chi(self):
        with pytest.raises(ValidationError):
            RobustnessResult(delta_star=0.1, k_conv=0.05)

    def test_infeasible(self):
        result = RobustnessResult(delta_star=0.0, k_conv=0.05, feasible=False)
        assert result.chi_star is None
        assert result.mode == "issp"
