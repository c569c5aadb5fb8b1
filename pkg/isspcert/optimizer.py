"""Largest disturbance scale a system tolerates while its shell keeps contracting.

For a scale ``delta`` the disturbance law comes from a family (by default
``N(0, delta^2 I)`` truncated at ``3 delta``). ``delta`` is feasible when some
``chi`` on the grid makes every sampled state on the sphere
``|x| = chi * delta`` satisfy ``E[V(f(x, d))] - V(x) <= -k |x|^2`` by its
upper confidence end. The largest feasible ``delta`` is found by bisection.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Callable, Sequence
from functools import partial
from typing import Dict, Optional, Tuple

import numpy as np

from isspcert.executor import Executor, resolve
from isspcert.lyapunov import (
    DEFAULT_DRIFT_SAMPLES,
    QuadraticLyapunov,
    drift_expectation,
)
from isspcert.systems import SystemModel
from isspcert.types import DisturbanceSpec, EisspCertificate, RobustnessResult
from isspcert.util import CONFIDENCE, stream_rng

logger = logging.getLogger(__name__)

DEFAULT_SHELL_SAMPLES = 64
BISECTION_RTOL = 1e-4
EXTERIOR_RADII = (1.5, 2.0, 3.0)
DEFAULT_DISTURBANCE_POINTS = 21
_SHELL_STREAM = 2**32 - 4

DisturbanceFamily = Callable[[float], DisturbanceSpec]
# Returns the witnessing chi, or None when no chi on the grid works.
_Feasibility = Callable[[float], Optional[float]]
# ``(chi, delta) -> bool``; vetoes a shell that already contracts.
ShellAcceptance = Callable[[float, float], bool]


def _truncated_member(dim: int, delta: float) -> DisturbanceSpec:
    if delta == 0.0:
        return DisturbanceSpec.point_mass(np.zeros(dim))
    return DisturbanceSpec.truncated_gaussian(
        np.zeros(dim), delta * delta * np.eye(dim), 3.0 * delta
    )


def truncated_gaussian_family(dim: int = 1) -> DisturbanceFamily:
    """``delta -> N(0, delta^2 I)`` truncated at ``3 delta`` per axis."""
    return partial(_truncated_member, dim)


def shell_directions(dim: int, count: int, seed: int) -> np.ndarray:
    """``count`` unit vectors uniform on the sphere."""
    if count < 1:
        raise ValueError(f"shell sample count must be >= 1, got {count}")
    raw = stream_rng(seed, _SHELL_STREAM).standard_normal((count, dim))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return raw / np.where(norms > 0.0, norms, 1.0)


def _contracts(
    system: SystemModel,
    V: QuadraticLyapunov,
    spec: DisturbanceSpec,
    k_conv: float,
    mc_sample_count: int,
    seed: int,
    confidence: float,
    indexed: Tuple[int, np.ndarray],
) -> bool:
    index, x = indexed
    if not bool(system.in_domain(x)):
        return False
    est = drift_expectation(
        system, V, x, spec, mc_sample_count, seed, stream=index, confidence=confidence
    )
    sq = float(x @ x)
    return est.upper <= -k_conv * sq + 1e-12 * (1.0 + V.b * sq)


def _fits(system: SystemModel, chi: float, delta: float, region_scale: float) -> bool:
    """Is the ball of radius ``region_scale * chi * delta`` strictly inside?"""
    if system.domain_radius is None:
        return True
    return region_scale * chi * delta < system.domain_radius


def shell_feasibility(
    system: SystemModel,
    V: QuadraticLyapunov,
    k_conv: float,
    chi_grid: Sequence[float],
    delta: float,
    shell_sample_count: int = DEFAULT_SHELL_SAMPLES,
    mc_sample_count: int = DEFAULT_DRIFT_SAMPLES,
    seed: int = 0,
    *,
    family: Optional[DisturbanceFamily] = None,
    executor: Optional[Executor] = None,
    confidence: float = CONFIDENCE,
    region_scale: Optional[float] = None,
    accept: Optional[ShellAcceptance] = None,
) -> Optional[float]:
    """Smallest ``chi`` on the grid whose shell contracts at scale ``delta``.

    With ``region_scale`` a ``chi`` also needs the ball of radius
    ``region_scale * chi * delta`` strictly inside the domain. ``accept``
    gets the last word on a ``chi`` whose shell contracts.
    """
    family = family or truncated_gaussian_family(system.disturbance_dim)
    spec = family(delta)
    directions = shell_directions(system.state_dim, shell_sample_count, seed)
    ex = resolve(executor)
    check = partial(
        _contracts, system, V, spec, k_conv, mc_sample_count, seed, confidence
    )
    for chi in sorted(chi_grid):
        if region_scale is not None and not _fits(system, chi, delta, region_scale):
            continue
        states = chi * delta * directions
        if not bool(np.all(system.in_domain(states))):
            continue
        if not all(ex.map(check, list(enumerate(states)))):
            continue
        if accept is None or accept(float(chi), delta):
            return float(chi)
    return None



def exterior_pass_fraction(
    system: SystemModel,
    V: QuadraticLyapunov,
    k_conv: float,
    chi: float,
    delta: float,
    shell_sample_count: int = DEFAULT_SHELL_SAMPLES,
    mc_sample_count: int = DEFAULT_DRIFT_SAMPLES,
    seed: int = 0,
    *,
    family: Optional[DisturbanceFamily] = None,
    executor: Optional[Executor] = None,
    confidence: float = CONFIDENCE,
) -> Optional[float]:
    """Share of in-domain states at ``EXTERIOR_RADII`` times the shell that contract.

    Diagnostic only: the optimization constrains the shell itself.
    """
    family = family or truncated_gaussian_family(system.disturbance_dim)
    spec = family(delta)
    directions = shell_directions(system.state_dim, shell_sample_count, seed)
    states = np.concatenate([r * chi * delta * directions for r in EXTERIOR_RADII])
    states = states[np.asarray(system.in_domain(states), dtype=bool)]
    if states.shape[0] == 0:
        return None
    check = partial(
        _contracts, system, V, spec, k_conv, mc_sample_count, seed, confidence
    )
    passed = resolve(executor).map(check, list(enumerate(states)))
    return float(np.mean(passed))


def _bisect(
    feasible: _Feasibility, bracket: Tuple[float, float]
) -> Tuple[float, Optional[float], int]:
    lo, hi = bracket
    evaluations = 1
    chi = feasible(lo)
    if chi is None:
        return 0.0, None, evaluations
    evaluations += 1
    chi_hi = feasible(hi)
    if chi_hi is not None:
        return hi, chi_hi, evaluations
    tol = BISECTION_RTOL * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        evaluations += 1
        found = feasible(mid)
        if found is None:
            hi = mid
        else:
            lo, chi = mid, found
    return lo, chi, evaluations


def _check_inputs(
    k_conv: float, chi_grid: Sequence[float], delta_bracket: Tuple[float, float]
) -> None:
    if not 0.0 < k_conv < 1.0:
        raise ValueError(f"k_conv must lie in (0, 1), got {k_conv!r}")
    if not chi_grid or min(chi_grid) <= 0.0:
        raise ValueError("chi_grid must be a non-empty list of positive values")
    lo, hi = delta_bracket
    if not 0.0 <= lo < hi:
        raise ValueError(f"delta_bracket needs 0 <= lo < hi, got {delta_bracket}")


def max_tolerable_disturbance(
    system: SystemModel,
    V: QuadraticLyapunov,
    k_conv: float,
    chi_grid: Sequence[float],
    delta_bracket: Tuple[float, float],
    shell_sample_count: int = DEFAULT_SHELL_SAMPLES,
    mc_sample_count: int = DEFAULT_DRIFT_SAMPLES,
    seed: int = 0,
    *,
    family: Optional[DisturbanceFamily] = None,
    executor: Optional[Executor] = None,
    confidence: float = CONFIDENCE,
    region_scale: Optional[float] = None,
    accept: Optional[ShellAcceptance] = None,
) -> RobustnessResult:
    """Bisect for the largest ``delta`` whose shell drift condition holds.

    Every feasibility check reuses ``seed``, so the bisection sees one fixed
    set of shell states and disturbance draws. ``region_scale`` and ``accept``
    tighten feasibility as in :func:`shell_feasibility`.
    """
    _check_inputs(k_conv, chi_grid, delta_bracket)
    feasible = partial(
        shell_feasibility,
        system,
        V,
        k_conv,
        chi_grid,
        shell_sample_count=shell_sample_count,
        mc_sample_count=mc_sample_count,
        seed=seed,
        family=family,
        executor=executor,
        confidence=confidence,
        region_scale=region_scale,
        accept=accept,
    )
    delta, chi, evaluations = _bisect(feasible, delta_bracket)
    counts: Dict[str, int] = {
        "shell": shell_sample_count,
        "mc": mc_sample_count,
        "evaluations": evaluations,
    }
    if chi is None:
        logger.info(
            "optimizer.infeasible k_conv=%.6g bracket=%s", k_conv, delta_bracket
        )
        return RobustnessResult(
            delta_star=0.0,
            k_conv=k_conv,
            feasible=False,
            seeds={"shell": seed, "mc": seed},
            counts=counts,
        )
    exterior = exterior_pass_fraction(
        system,
        V,
        k_conv,
        chi,
        delta,
        shell_sample_count,
        mc_sample_count,
        seed,
        family=family,
        executor=executor,
        confidence=confidence,
    )
    logger.info(
        "optimizer.done delta_star=%.6g chi_star=%.6g evaluations=%d",
        delta,
        chi,
        evaluations,
    )
    return RobustnessResult(
        delta_star=delta,
        chi_star=chi,
        k_conv=k_conv,
        exterior_pass_fraction=exterior,
        seeds={"shell": seed, "mc": seed},
        counts=counts,
    )


def _worst_case_contracts(
    system: SystemModel,
    V: QuadraticLyapunov,
    k_conv: float,
    disturbances: np.ndarray,
    x: np.ndarray,
) -> bool:
    if not bool(system.in_domain(x)):
        return False
    nxt = system.step(np.broadcast_to(x, (len(disturbances), x.size)), disturbances)
    sq = float(x @ x)
    worst = float(np.max(V(nxt))) - float(V(x))
    return worst <= -k_conv * sq + 1e-12 * (1.0 + V.b * sq)


def max_tolerable_disturbance_iss(
    system: SystemModel,
    V: QuadraticLyapunov,
    k_conv: float,
    chi_grid: Sequence[float],
    delta_bracket: Tuple[float, float],
    shell_sample_count: int = DEFAULT_SHELL_SAMPLES,
    seed: int = 0,
    *,
    disturbance_points: int = DEFAULT_DISTURBANCE_POINTS,
    executor: Optional[Executor] = None,
    region_scale: Optional[float] = None,
) -> RobustnessResult:
    """Deterministic counterpart: the drift bound must hold for every
    ``|d_i| <= delta`` on a grid, not just in expectation.
    """
    _check_inputs(k_conv, chi_grid, delta_bracket)
    if disturbance_points < 2:
        raise ValueError("disturbance_points must be >= 2")
    directions = shell_directions(system.state_dim, shell_sample_count, seed)
    axis = np.linspace(-1.0, 1.0, disturbance_points)
    unit_grid = np.array(list(itertools.product(axis, repeat=system.disturbance_dim)))
    ex = resolve(executor)

    def feasible(delta: float) -> Optional[float]:
        check = partial(_worst_case_contracts, system, V, k_conv, delta * unit_grid)
        for chi in sorted(chi_grid):
            if region_scale is not None and not _fits(
                system, chi, delta, region_scale
            ):
                continue
            states = chi * delta * directions
            if not bool(np.all(system.in_domain(states))):
                continue
            if all(ex.map(check, list(states))):
                return float(chi)
        return None

    delta, chi, evaluations = _bisect(feasible, delta_bracket)
    logger.info("optimizer.iss delta_star=%.6g chi_star=%s", delta, chi)
    return RobustnessResult(
        delta_star=delta,
        chi_star=chi,
        k_conv=k_conv,
        feasible=chi is not None,
        mode="iss",
        seeds={"shell": seed},
        counts={
            "shell": shell_sample_count,
            "disturbance_points": int(unit_grid.shape[0]),
            "evaluations": evaluations,
        },
    )


def level_set_bound(
    chi_star: float,
    delta_star: float,
    V: QuadraticLyapunov,
    certificate: EisspCertificate,
    k_conv: float,
    K: int,
) -> float:
    """``rho~ = ((1 - alpha)^K lambda_max(P) + k) (chi* delta*)^2``."""
    radius_sq = (chi_star * delta_star) ** 2
    return ((1.0 - certificate.alpha) ** K * V.b + k_conv) * radius_sq
