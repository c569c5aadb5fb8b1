"""Tests for isspcert.lyapunov: matrix equations, lifts and drift certification."""

import math

import numpy as np
import pytest
from scipy import linalg

from isspcert.lyapunov import (
    DegenerateCertificateError,
    EmptyRegionError,
    PreconditionError,
    QuadraticLyapunov,
    UnstableLinearizationError,
    additive_lift,
    certify_eissp,
    certify_iss,
    default_phi_budget,
    drift_expectation,
    lqg_certificate,
    solve_dare,
    solve_discrete_lyapunov,
)
from isspcert.systems import double_integrator_matrices, scalar_linear
from isspcert.types import (
    Counterexample,
    DimensionMismatchError,
    DisturbanceSpec,
    EisspCertificate,
    Evidence,
    SampleRegion,
)

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def _points(*xs):
    return SampleRegion(kind="points", dimension=1, points=[[x] for x in xs])


# =============================================================================
# Quadratic Lyapunov functions
# =============================================================================


class TestQuadraticLyapunov:
    def test_constants(self):
        V = QuadraticLyapunov(np.diag([1.0, 4.0]))
        assert V.a == pytest.approx(1.0)
        assert V.b == pytest.approx(4.0)
        assert V.c == 2.0
        assert V.hessian_lambda_max == pytest.approx(8.0)

    def test_evaluate_single_and_batch(self):
        V = QuadraticLyapunov(np.diag([1.0, 4.0]))
        assert V([1.0, 1.0]) == pytest.approx(5.0)
        np.testing.assert_allclose(V(np.array([[1.0, 0.0], [0.0, 2.0]])), [1.0, 16.0])

    def test_dimension_checked(self):
        with pytest.raises(DimensionMismatchError):
            QuadraticLyapunov(np.eye(2))([1.0, 2.0, 3.0])

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError, match="positive definite"):
            QuadraticLyapunov(np.diag([1.0, -1.0]))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            QuadraticLyapunov(np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_sector_check(self):
        V = QuadraticLyapunov(np.array([[2.0, 0.5], [0.5, 1.0]]))
        rng = np.random.default_rng(0)
        assert V.sector_check(rng.standard_normal((50, 2)))

    def test_dict_round_trip(self):
        V = QuadraticLyapunov(np.array([[2.0, 0.5], [0.5, 1.0]]))
        np.testing.assert_array_equal(QuadraticLyapunov.from_dict(V.to_dict()).P, V.P)


# =============================================================================
# Matrix equations
# =============================================================================


class TestDiscreteLyapunov:
    def test_scalar(self):
        V = solve_discrete_lyapunov([[0.9]], [[1.0]])
        assert V.P[0, 0] == pytest.approx(1.0 / 0.19)

    def test_residual(self):
        A = np.array([[0.5, 0.2], [-0.1, 0.7]])
        Q = np.eye(2)
        P = solve_discrete_lyapunov(A, Q).P
        np.testing.assert_allclose(A.T @ P @ A - P + Q, 0.0, atol=1e-10)

    def test_unstable(self):
        with pytest.raises(UnstableLinearizationError):
            solve_discrete_lyapunov([[1.1]], [[1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            solve_discrete_lyapunov(np.eye(2) * 0.5, np.eye(3))


class TestDare:
    def test_scalar_golden_ratio(self):
        P, K = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(GOLDEN)
        assert K[0, 0] == pytest.approx(GOLDEN / (1.0 + GOLDEN))

    def test_double_integrator_matches_scipy(self):
        A, B = double_integrator_matrices(0.1)
        P, K = solve_dare(A, B, np.eye(4), np.eye(2))
        expected = linalg.solve_discrete_are(A, B, np.eye(4), np.eye(2))
        np.testing.assert_allclose(P, expected, rtol=1e-9)
        assert np.max(np.abs(np.linalg.eigvals(A - B @ K))) < 1.0

    def test_fixed_point_fallback(self, monkeypatch):
        def broken(*args, **kwargs):
            raise np.linalg.LinAlgError("forced")

        monkeypatch.setattr("isspcert.lyapunov.linalg.solve_discrete_are", broken)
        P, _ = solve_dare([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(GOLDEN, rel=1e-9)

    def test_inconsistent_shapes(self):
        with pytest.raises(DimensionMismatchError):
            solve_dare(np.eye(2), np.ones((2, 1)), np.eye(3), np.eye(1))


# =============================================================================
# Certificates
# =============================================================================


class TestLqgCertificate:
    def test_constants(self):
        A, B = double_integrator_matrices(0.1)
        P, _ = solve_dare(A, B, np.eye(4), np.eye(2))
        spec = DisturbanceSpec.gaussian(np.zeros(4), 0.01)
        cert = lqg_certificate(P, np.eye(4), spec)
        b = np.linalg.eigvalsh(P)[-1]
        assert cert.alpha == pytest.approx(1.0 / b)
        assert cert.phi == pytest.approx(b * 0.04)
        assert cert.evidence is Evidence.ANALYTIC

    def test_degenerate_alpha(self):
        # lambda_min(Q) above lambda_max(P) puts alpha outside (0, 1).
        with pytest.raises(DegenerateCertificateError):
            lqg_certificate(
                np.eye(1), 2.0 * np.eye(1), DisturbanceSpec.point_mass([0.0])
            )


class TestAdditiveLift:
    def test_phi_from_trace(self):
        V = solve_discrete_lyapunov([[0.9]], [[1.0]])
        cert = additive_lift(V, 0.1, DisturbanceSpec.gaussian([0.0], 0.01))
        assert cert.phi == pytest.approx(V.b * 0.01)
        assert cert.alpha == 0.1

    def test_disturbance_gain(self):
        V = QuadraticLyapunov(np.eye(2))
        spec = DisturbanceSpec.gaussian([0.0], 1.0)
        cert = additive_lift(V, 0.5, spec, disturbance_gain=[[1.0], [2.0]])
        assert cert.phi == pytest.approx(5.0)

    def test_doubling_covariance_doubles_phi(self):
        V = solve_discrete_lyapunov([[0.5, 0.1], [0.0, 0.7]], np.eye(2))
        cov = np.array([[0.3, 0.1], [0.1, 0.2]])
        single = additive_lift(V, 0.2, DisturbanceSpec.gaussian([0.0, 0.0], cov))
        double = additive_lift(V, 0.2, DisturbanceSpec.gaussian([0.0, 0.0], 2 * cov))
        assert double.phi == pytest.approx(2.0 * single.phi)

    def test_requires_zero_mean(self):
        V = QuadraticLyapunov(np.eye(1))
        with pytest.raises(PreconditionError):
            additive_lift(V, 0.5, DisturbanceSpec.point_mass([1.0]))

    def test_dimension_checked(self):
        V = QuadraticLyapunov(np.eye(2))
        with pytest.raises(DimensionMismatchError):
            additive_lift(V, 0.5, DisturbanceSpec.gaussian([0.0], 1.0))

    def test_correlated_truncation_is_sampled(self):
        V = QuadraticLyapunov(np.eye(2))
        spec = DisturbanceSpec.truncated_gaussian(
            [0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], radius=2.0
        )
        assert additive_lift(V, 0.5, spec).evidence is Evidence.SAMPLED


# =============================================================================
# Drift
# =============================================================================


class TestDriftExpectation:
    def test_exact_with_point_mass(self):
        system = scalar_linear(0.5)
        V = QuadraticLyapunov(np.eye(1))
        est = drift_expectation(system, V, [2.0], DisturbanceSpec.point_mass([0.0]))
        assert est.mean_drift == pytest.approx(-3.0)
        assert est.confidence_interval == pytest.approx((-3.0, -3.0))
        assert est.sample_count == 4096

    def test_gaussian_mean(self):
        system = scalar_linear(0.5)
        V = QuadraticLyapunov(np.eye(1))
        spec = DisturbanceSpec.gaussian([0.0], 0.04)
        est = drift_expectation(system, V, [1.0], spec, 20000, seed=2)
        # E[(0.5 + d)^2] - 1 = 0.25 + 0.04 - 1
        assert est.mean_drift == pytest.approx(-0.71, abs=0.01)
        lo, hi = est.confidence_interval
        assert lo < est.mean_drift < hi

    def test_deterministic(self):
        system = scalar_linear(0.9)
        V = QuadraticLyapunov(np.eye(1))
        spec = DisturbanceSpec.gaussian([0.0], 0.01)
        a = drift_expectation(system, V, [1.0], spec, 256, seed=5)
        b = drift_expectation(system, V, [1.0], spec, 256, seed=5)
        assert a == b

    def test_state_dimension_checked(self):
        with pytest.raises(DimensionMismatchError):
            drift_expectation(
                scalar_linear(0.5),
                QuadraticLyapunov(np.eye(1)),
                [1.0, 2.0],
                DisturbanceSpec.point_mass([0.0]),
            )

    def test_sample_count_checked(self):
        with pytest.raises(ValueError):
            drift_expectation(
                scalar_linear(0.5),
                QuadraticLyapunov(np.eye(1)),
                [1.0],
                DisturbanceSpec.point_mass([0.0]),
                sample_count=1,
            )


class TestCertifyEissp:
    def setup_method(self):
        self.system = scalar_linear(0.5)
        self.V = solve_discrete_lyapunov([[0.5]], [[1.0]])
        self.quiet = DisturbanceSpec.point_mass([0.0])

    def test_noise_free_certificate(self):
        region = _points(-2.0, -0.5, 0.0, 1.0, 3.0)
        cert = certify_eissp(self.system, self.V, self.quiet, region, 0.5, 64)
        assert isinstance(cert, EisspCertificate)
        assert cert.alpha == 0.5
        assert cert.phi == 0.0
        assert cert.a == pytest.approx(4.0 / 3.0)
        assert cert.evidence is Evidence.SAMPLED

    def test_counterexample_when_rate_too_fast(self):
        # True decrease is 0.75 V; asking for 0.9 V fails away from the origin.
        result = certify_eissp(
            self.system, self.V, self.quiet, _points(0.0, 1.0, 2.0), 0.9, 64
        )
        assert isinstance(result, Counterexample)
        assert result.state == [2.0]
        assert result.phi_budget == 0.0
        assert result.required_phi == pytest.approx(0.8)

    def test_gaussian_phi_near_noise_floor(self):
        system = scalar_linear(0.9)
        V = solve_discrete_lyapunov([[0.9]], [[1.0]])
        spec = DisturbanceSpec.gaussian([0.0], 0.01)
        region = SampleRegion(kind="ball", dimension=1, radius=2.0, count=32)
        cert = certify_eissp(system, V, spec, region, 0.1, 2048, seed=3)
        assert isinstance(cert, EisspCertificate)
        assert cert.phi >= V.b * 0.01 * 0.5
        assert cert.phi <= V.b * 0.01 + 0.5

    def test_executor_does_not_change_result(self):
        from isspcert.executor import Executor

        system = scalar_linear(0.9)
        V = solve_discrete_lyapunov([[0.9]], [[1.0]])
        spec = DisturbanceSpec.gaussian([0.0], 0.01)
        region = SampleRegion(kind="ball", dimension=1, radius=2.0, count=16)
        serial = certify_eissp(system, V, spec, region, 0.1, 512, seed=1)
        with Executor.for_threads(4) as ex:
            threaded = certify_eissp(
                system, V, spec, region, 0.1, 512, seed=1, executor=ex
            )
        assert serial == threaded

    def test_empty_region(self):
        region = SampleRegion(kind="grid", dimension=1)
        with pytest.raises(EmptyRegionError):
            certify_eissp(self.system, self.V, self.quiet, region, 0.5)

    def test_region_outside_domain(self):
        system = scalar_linear(0.5, domain_radius=1.0)
        with pytest.raises(PreconditionError):
            certify_eissp(system, self.V, self.quiet, _points(2.0), 0.5)

    def test_region_dimension(self):
        region = SampleRegion(kind="ball", dimension=2, count=4)
        with pytest.raises(DimensionMismatchError):
            certify_eissp(self.system, self.V, self.quiet, region, 0.5)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            certify_eissp(self.system, self.V, self.quiet, _points(1.0), 1.0)

    def test_default_budget_uses_disturbance_gain(self):
        from isspcert.systems import walker_surrogate

        walker = walker_surrogate(height_gain=(0.0, 1.0))
        V = QuadraticLyapunov(np.eye(2))
        budget = default_phi_budget(walker, V, DisturbanceSpec.gaussian([0.0], 0.25))
        assert budget == pytest.approx(0.25)


class TestCertifyIss:
    def setup_method(self):
        self.system = scalar_linear(0.5)
        self.V = solve_discrete_lyapunov([[0.5]], [[1.0]])

    def test_worst_case_phi(self):
        cert = certify_iss(self.system, self.V, _points(0.0, 1.0), 0.5, 0.1)
        assert isinstance(cert, EisspCertificate)
        # At the origin the worst disturbance is an endpoint of [-0.1, 0.1].
        assert cert.phi == pytest.approx(self.V.b * 0.01)
        assert math.isinf(cert.p)
        assert cert.evidence is Evidence.SAMPLED

    def test_no_disturbance(self):
        cert = certify_iss(self.system, self.V, _points(-1.0, 1.0), 0.5, 0.0)
        assert cert.phi == 0.0

    def test_budget_counterexample(self):
        result = certify_iss(
            self.system, self.V, _points(0.0, 1.0), 0.5, 0.1, phi_budget=1e-3
        )
        assert isinstance(result, Counterexample)
        assert result.state == [0.0]
        assert result.drift.confidence_interval[0] == result.drift.mean_drift

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            certify_iss(self.system, self.V, _points(0.0), 0.5, -1.0)
        with pytest.raises(ValueError):
            certify_iss(
                self.system, self.V, _points(0.0), 0.5, 0.1, disturbance_points=1
            )
