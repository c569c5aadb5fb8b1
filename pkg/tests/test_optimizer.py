"""Tests for the maximum tolerable disturbance search."""

import numpy as np
import pytest
from scipy import stats

from isspcert.lyapunov import QuadraticLyapunov
from isspcert.optimizer import (
    level_set_bound,
    max_tolerable_disturbance,
    max_tolerable_disturbance_iss,
    shell_directions,
    shell_feasibility,
    truncated_gaussian_family,
)
from isspcert.systems import scalar_linear
from isspcert.types import DisturbanceKind, EisspCertificate

CHI_GRID = [1.0, 2.0, 3.0, 4.0]


@pytest.fixture
def system():
    # |x| <= 1 domain; contraction 0.5 needs chi > 1.2 in expectation
    return scalar_linear(0.5, domain_radius=1.0)


@pytest.fixture
def V():
    return QuadraticLyapunov(np.eye(1))


class TestFamily:
    def test_zero_scale_is_point_mass(self):
        spec = truncated_gaussian_family(2)(0.0)
        assert spec.kind is DisturbanceKind.POINT_MASS
        assert spec.dim == 2

    def test_truncated_at_three_sigma(self):
        spec = truncated_gaussian_family(1)(0.1)
        assert spec.kind is DisturbanceKind.TRUNCATED_GAUSSIAN
        assert spec.radius == pytest.approx(0.3)
        np.testing.assert_allclose(spec.covariance_matrix, [[0.01]])


class TestShell:
    def test_unit_directions(self):
        dirs = shell_directions(3, 50, seed=1)
        assert dirs.shape == (50, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
        np.testing.assert_array_equal(dirs, shell_directions(3, 50, seed=1))

    def test_count_positive(self):
        with pytest.raises(ValueError):
            shell_directions(2, 0, seed=0)

    def test_feasible_scale(self, system, V):
        chi = shell_feasibility(
            system, V, 0.05, CHI_GRID, 0.2, shell_sample_count=8, mc_sample_count=1024
        )
        assert chi == 2.0

    def test_region_scale_keeps_ball_inside_domain(self, system, V):
        kwargs = dict(shell_sample_count=8, mc_sample_count=1024)
        wide = shell_feasibility(
            system, V, 0.05, CHI_GRID, 0.2, region_scale=3.0, **kwargs
        )
        narrow = shell_feasibility(
            system, V, 0.05, CHI_GRID, 0.2, region_scale=2.0, **kwargs
        )
        assert wide is None
        assert narrow == 2.0

    def test_accept_sees_only_contracting_shells(self, system, V):
        seen = []

        def accept(chi, delta):
            seen.append((chi, delta))
            return chi >= 3.0

        chi = shell_feasibility(
            system,
            V,
            0.05,
            CHI_GRID,
            0.2,
            shell_sample_count=8,
            mc_sample_count=1024,
            accept=accept,
        )
        assert chi == 3.0
        assert seen == [(2.0, 0.2), (3.0, 0.2)]

    def test_infeasible_when_shell_leaves_domain(self, system, V):
        chi = shell_feasibility(
            system, V, 0.05, CHI_GRID, 0.9, shell_sample_count=8, mc_sample_count=1024
        )
        assert chi is None


class TestMaxTolerableDisturbance:
    def test_domain_limited_scale(self, system, V):
        result = max_tolerable_disturbance(
            system, V, 0.05, CHI_GRID, (0.0, 1.0), 16, 1024, seed=3
        )
        assert result.feasible
        assert result.mode == "issp"
        assert result.chi_star == 2.0
        assert result.delta_star == pytest.approx(0.5, abs=1e-3)
        assert result.delta_star <= 0.5
        assert result.exterior_pass_fraction is None
        assert result.counts["shell"] == 16
        assert result.counts["evaluations"] > 2

    def test_region_scale_shrinks_scale(self, system, V):
        result = max_tolerable_disturbance(
            system, V, 0.05, CHI_GRID, (0.0, 1.0), 16, 1024, seed=3, region_scale=1.25
        )
        assert result.chi_star == 2.0
        assert result.delta_star == pytest.approx(0.4, abs=1e-3)
        assert result.delta_star < 0.4

    def test_infeasible(self, system, V):
        result = max_tolerable_disturbance(
            system, V, 0.05, [1.0], (0.1, 0.5), 16, 1024
        )
        assert not result.feasible
        assert result.delta_star == 0.0
        assert result.chi_star is None

    def test_unbounded_domain_reaches_bracket_top(self, V):
        result = max_tolerable_disturbance(
            scalar_linear(0.5), V, 0.05, CHI_GRID, (0.0, 2.0), 8, 1024
        )
        assert result.delta_star == 2.0
        assert result.chi_star == 2.0
        assert result.exterior_pass_fraction == 1.0

    @pytest.mark.parametrize(
        "k_conv,chi_grid,bracket",
        [
            (0.0, CHI_GRID, (0.0, 1.0)),
            (1.0, CHI_GRID, (0.0, 1.0)),
            (0.05, [], (0.0, 1.0)),
            (0.05, [0.0, 1.0], (0.0, 1.0)),
            (0.05, CHI_GRID, (0.5, 0.1)),
            (0.05, CHI_GRID, (-0.1, 1.0)),
        ],
    )
    def test_invalid_inputs(self, system, V, k_conv, chi_grid, bracket):
        with pytest.raises(ValueError):
            max_tolerable_disturbance(system, V, k_conv, chi_grid, bracket)


class TestScalarThreshold:
    """``x+ = 0.9 x + d`` with ``V = x^2`` on ``|x| <= 1``.

    The shell at ``chi delta`` contracts iff
    ``(0.19 - k) chi^2 >= E[d^2] / delta^2``, independent of ``delta``, so
    ``delta*`` is the domain edge ``1 / chi`` for the smallest such ``chi``.
    """

    GRID = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]

    @staticmethod
    def hand_threshold(k_conv, grid):
        second = stats.truncnorm(-3.0, 3.0).var()
        chi = min(c for c in grid if (0.19 - k_conv) * c * c >= second)
        return chi, 1.0 / chi

    def test_matches_hand_threshold(self, V):
        system = scalar_linear(0.9, domain_radius=1.0)
        chis, deltas = [], []
        for k_conv in (0.02, 0.1, 0.13):
            chi, delta = self.hand_threshold(k_conv, self.GRID)
            result = max_tolerable_disturbance(
                system, V, k_conv, self.GRID, (0.0, 1.0), 8, 16384, seed=11
            )
            assert result.chi_star == chi
            assert result.delta_star == pytest.approx(delta, rel=1e-3)
            chis.append(chi)
            deltas.append(result.delta_star)
        assert chis == [3.0, 4.0, 5.0]
        assert deltas == sorted(deltas, reverse=True)


class TestMaxTolerableDisturbanceIss:
    def test_worst_case_needs_wider_shell(self, system, V):
        result = max_tolerable_disturbance_iss(
            system, V, 0.05, CHI_GRID, (0.0, 1.0), 8
        )
        assert result.mode == "iss"
        assert result.chi_star == 3.0
        assert result.delta_star == pytest.approx(1.0 / 3.0, abs=1e-3)
        assert result.counts["disturbance_points"] == 21

    def test_needs_two_points(self, system, V):
        with pytest.raises(ValueError):
            max_tolerable_disturbance_iss(
                system, V, 0.05, CHI_GRID, (0.0, 1.0), disturbance_points=1
            )


class TestLevelSetBound:
    def test_value(self, V):
        cert = EisspCertificate(
            alpha=0.5, phi=0.01, a=1.0, b=1.0, c=2.0, p=2.0, evidence="analytic"
        )
        assert level_set_bound(2.0, 0.5, V, cert, 0.05, 1) == pytest.approx(0.55)
        assert level_set_bound(2.0, 0.5, V, cert, 0.05, 60) == pytest.approx(
            0.05, rel=1e-6
        )
