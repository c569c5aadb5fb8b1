"""Quadratic Lyapunov functions, Riccati/Lyapunov solves and drift certification.

The matrix equations are delegated to ``scipy.linalg``; this module adds the
stability preconditions, residual checks and the certificate bookkeeping
around them.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import partial
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from isspcert.distributions import (
    disturbance_covariance,
    lp_norm,
    sample_stream,
)
from isspcert.executor import Executor, resolve
from isspcert.types import (
    Counterexample,
    DimensionMismatchError,
    DisturbanceKind,
    DisturbanceSpec,
    DriftEstimate,
    EisspCertificate,
    Evidence,
    IsspError,
    LpMethod,
    SampleRegion,
)
from isspcert.util import (
    CONFIDENCE,
    as_square,
    is_symmetric,
    normal_quantile,
    spectral_radius,
    symmetric_eigen_extremes,
)

if TYPE_CHECKING:
    from isspcert.systems import SystemModel

logger = logging.getLogger(__name__)

DARE_RTOL = 1e-12
DARE_ITERATION_CAP = 10_000
RESIDUAL_RTOL = 1e-8
DEFAULT_DRIFT_SAMPLES = 4096
DEFAULT_DISTURBANCE_POINTS = 11

# Any vectorized map from an ``(m, n)`` state array to ``m`` values.
LyapunovFunction = Callable[[np.ndarray], Any]


class UnstableLinearizationError(IsspError):
    """The linear map has spectral radius >= 1."""


class SolverFailureError(IsspError):
    """A matrix equation solve did not converge or failed its residual check."""


class DegenerateCertificateError(IsspError):
    """The computed constants do not form a valid certificate."""


class PreconditionError(IsspError, ValueError):
    """An operation's documented precondition does not hold."""


class EmptyRegionError(IsspError, ValueError):
    """The sampling plan produced no states."""


# =============================================================================
# Quadratic Lyapunov functions
# =============================================================================


@dataclass(frozen=True, eq=False)
class QuadraticLyapunov:
    """``V(x) = x^T P x`` with ``P`` symmetric positive definite.

    ``a`` and ``b`` are the extreme eigenvalues of ``P`` so that
    ``a |x|^2 <= V(x) <= b |x|^2``; the exponent ``c`` is always 2.
    """

    P: np.ndarray
    a: float = field(init=False)
    b: float = field(init=False)

    c = 2.0

    def __post_init__(self) -> None:
        P = as_square(self.P, "P")
        if not is_symmetric(P):
            raise ValueError("P must be symmetric")
        P = 0.5 * (P + P.T)
        lo, hi = symmetric_eigen_extremes(P)
        if not lo > 0.0:
            raise ValueError(f"P must be positive definite, smallest eigenvalue {lo}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "a", lo)
        object.__setattr__(self, "b", hi)

    @property
    def dim(self) -> int:
        return int(self.P.shape[0])

    def evaluate(self, x: Any) -> Any:
        """``V`` at a state or a stack of states (last axis is the state)."""
        arr = np.asarray(x, dtype=float)
        if arr.ndim == 0 or arr.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"state shape {arr.shape} does not match P of dimension {self.dim}"
            )
        values = np.maximum(np.einsum("...i,ij,...j->...", arr, self.P, arr), 0.0)
        return float(values) if values.ndim == 0 else values

    __call__ = evaluate

    @property
    def hessian_lambda_max(self) -> float:
        """Largest eigenvalue of the Hessian ``2 P``."""
        return 2.0 * self.b

    def sector_check(self, x: Any) -> bool:
        """Whether ``a |x|^2 <= V(x) <= b |x|^2`` holds at ``x`` (to rounding)."""
        arr = np.asarray(x, dtype=float)
        v = np.asarray(self.evaluate(arr))
        sq = np.sum(arr * arr, axis=-1)
        tol = 1e-12 * (1.0 + self.b * sq)
        return bool(np.all(self.a * sq <= v + tol) and np.all(v <= self.b * sq + tol))

    def to_dict(self) -> Dict[str, List[List[float]]]:
        return {"P": self.P.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuadraticLyapunov":
        return cls(np.asarray(data["P"], dtype=float))


# =============================================================================
# Matrix equations
# =============================================================================


def solve_discrete_lyapunov(A: Any, Q: Any) -> QuadraticLyapunov:
    """Solve ``A^T P A - P + Q = 0`` for a Schur-stable ``A``."""
    A = as_square(A, "A")
    Q = as_square(Q, "Q")
    if A.shape != Q.shape:
        raise DimensionMismatchError(f"A is {A.shape} but Q is {Q.shape}")
    radius = spectral_radius(A)
    if radius >= 1.0:
        raise UnstableLinearizationError(f"spectral radius {radius:.6g} >= 1")

    P = linalg.solve_discrete_lyapunov(A.T, Q)
    P = 0.5 * (P + P.T)
    residual = np.linalg.norm(A.T @ P @ A - P + Q)
    if residual > RESIDUAL_RTOL * max(float(np.linalg.norm(Q)), 1.0):
        raise SolverFailureError(f"lyapunov residual {residual:.3e}")
    logger.debug("lyapunov.solved n=%d spectral_radius=%.6g", A.shape[0], radius)
    return QuadraticLyapunov(P)


def _dare_fixed_point(
    A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray
) -> np.ndarray:
    P = Q.copy()
    for _ in range(DARE_ITERATION_CAP):
        gain = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        nxt = A.T @ P @ A - A.T @ P @ B @ gain + Q
        nxt = 0.5 * (nxt + nxt.T)
        if np.linalg.norm(nxt - P) <= DARE_RTOL * max(float(np.linalg.norm(nxt)), 1.0):
            return nxt
        P = nxt
    raise SolverFailureError(
        f"riccati iteration did not converge in {DARE_ITERATION_CAP} steps"
    )


def solve_dare(A: Any, B: Any, Q: Any, R: Any) -> Tuple[np.ndarray, np.ndarray]:
    """Stabilizing solution ``P`` of the discrete algebraic Riccati equation.

    Returns ``(P, K)`` with the optimal gain ``K = (R + B^T P B)^-1 B^T P A``
    so that ``A - B K`` is Schur stable.
    """
    A = as_square(A, "A")
    Q = as_square(Q, "Q")
    R = as_square(R, "R")
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if Q.shape != A.shape or R.shape[0] != B.shape[1]:
        raise DimensionMismatchError(
            f"A {A.shape}, B {B.shape}, Q {Q.shape}, R {R.shape} are inconsistent"
        )

    try:
        P = linalg.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        logger.warning("dare.fallback reason=%s", exc)
        P = _dare_fixed_point(A, B, Q, R)

    P = 0.5 * (P + P.T)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    residual = np.linalg.norm(A.T @ P @ A - P - A.T @ P @ B @ K + Q)
    if residual > RESIDUAL_RTOL * max(float(np.linalg.norm(P)), 1.0):
        raise SolverFailureError(f"riccati residual {residual:.3e}")
    closed = spectral_radius(A - B @ K)
    if closed >= 1.0:
        raise SolverFailureError(f"closed loop spectral radius {closed:.6g} >= 1")
    logger.debug("dare.solved n=%d closed_loop_radius=%.6g", A.shape[0], closed)
    return P, K


# =============================================================================
# Certificates
# =============================================================================


def _evidence(*methods: LpMethod) -> Evidence:
    if all(m is LpMethod.ANALYTIC for m in methods):
        return Evidence.ANALYTIC
    return Evidence.SAMPLED


def lqg_certificate(P: Any, Q: Any, spec: DisturbanceSpec) -> EisspCertificate:
    """Certificate for ``V = x^T P x`` on a closed loop ``A_cl`` with
    ``A_cl^T P A_cl - P <= -Q`` and additive disturbances from ``spec``.
    """
    V = QuadraticLyapunov(np.asarray(P, dtype=float))
    q_min, _ = symmetric_eigen_extremes(as_square(Q, "Q"))
    alpha = q_min / V.b
    if not 0.0 < alpha < 1.0:
        raise DegenerateCertificateError(
            f"alpha = lambda_min(Q) / lambda_max(P) = {alpha:.6g} is outside (0, 1)"
        )
    second = lp_norm(spec, 2.0)
    return EisspCertificate(
        alpha=alpha,
        phi=V.b * second.upper**2,
        a=V.a,
        b=V.b,
        c=V.c,
        p=2.0,
        evidence=_evidence(second.method),
    )


def additive_lift(
    V: QuadraticLyapunov,
    eiss_alpha: float,
    spec: DisturbanceSpec,
    *,
    disturbance_gain: Optional[Any] = None,
) -> EisspCertificate:
    """Lift a deterministic exponential-stability rate to a certificate.

    For ``x+ = f(x) + G d`` with zero-mean ``d``,
    ``E[V(x+)] = V(f(x)) + tr(G^T P G Cov d)``, so
    ``phi = (lambda_max(Hessian) / 2) tr(G Cov G^T)``.
    """
    if not spec.is_zero_mean():
        raise PreconditionError("additive lift requires a zero-mean disturbance")
    cov = disturbance_covariance(spec)
    if disturbance_gain is not None:
        G = np.asarray(disturbance_gain, dtype=float).reshape(V.dim, -1)
        if G.shape[1] != spec.dim:
            raise DimensionMismatchError(
                f"gain {G.shape} does not act on {spec.dim}-dimensional disturbances"
            )
        cov = G @ cov @ G.T
    elif spec.dim != V.dim:
        raise DimensionMismatchError(
            f"disturbance dimension {spec.dim} != state dimension {V.dim}"
        )
    phi = 0.5 * V.hessian_lambda_max * float(np.trace(cov))
    evidence = Evidence.ANALYTIC
    cm = spec.covariance_matrix
    if spec.kind is DisturbanceKind.TRUNCATED_GAUSSIAN and cm is not None:
        if np.count_nonzero(cm - np.diag(np.diag(cm))):
            evidence = Evidence.SAMPLED
    return EisspCertificate(
        alpha=eiss_alpha, phi=phi, a=V.a, b=V.b, c=V.c, p=2.0, evidence=evidence
    )


# =============================================================================
# Drift estimation and certification
# =============================================================================


def drift_expectation(
    system: "SystemModel",
    V: LyapunovFunction,
    x: Any,
    spec: DisturbanceSpec,
    sample_count: int = DEFAULT_DRIFT_SAMPLES,
    seed: int = 0,
    *,
    stream: int = 0,
    confidence: float = CONFIDENCE,
) -> DriftEstimate:
    """Sample mean and normal interval of ``V(f(x, d)) - V(x)``."""
    if sample_count < 2:
        raise ValueError(f"sample_count must be >= 2, got {sample_count}")
    state = np.asarray(x, dtype=float).reshape(-1)
    if state.size != system.state_dim:
        raise DimensionMismatchError(
            f"state of size {state.size} for a {system.state_dim}-dimensional system"
        )
    if spec.dim != system.disturbance_dim:
        raise DimensionMismatchError(
            f"disturbance dimension {spec.dim} != system's {system.disturbance_dim}"
        )
    draws = sample_stream(spec, seed, stream, sample_count)
    nxt = system.step(np.broadcast_to(state, (sample_count, state.size)), draws)
    increments = np.asarray(V(nxt), dtype=float) - float(V(state))
    mean = float(increments.mean())
    half = normal_quantile(confidence) * float(increments.std(ddof=1)) / math.sqrt(
        sample_count
    )
    return DriftEstimate(
        state=state,
        mean_drift=mean,
        confidence_interval=(mean - half, mean + half),
        sample_count=sample_count,
    )


def default_phi_budget(
    system: "SystemModel", V: QuadraticLyapunov, spec: DisturbanceSpec
) -> float:
    """Noise floor ``lambda_max(P) lambda_max(G^T G) |d|_2^2`` of an additive system."""
    G = system.disturbance_gain
    if G is None:
        raise PreconditionError(
            f"system {system.name!r} is not additive; pass phi_budget explicitly"
        )
    _, g_max = symmetric_eigen_extremes(G.T @ G)
    return V.b * g_max * lp_norm(spec, 2.0).upper ** 2


def _drift_at(
    system: "SystemModel",
    V: QuadraticLyapunov,
    spec: DisturbanceSpec,
    sample_count: int,
    seed: int,
    confidence: float,
    indexed: Tuple[int, np.ndarray],
) -> DriftEstimate:
    index, state = indexed
    return drift_expectation(
        system, V, state, spec, sample_count, seed, stream=index, confidence=confidence
    )


def certify_eissp(
    system: "SystemModel",
    V: QuadraticLyapunov,
    spec: DisturbanceSpec,
    region: SampleRegion,
    target_alpha: float,
    sample_count: int = DEFAULT_DRIFT_SAMPLES,
    seed: int = 0,
    *,
    phi_budget: Optional[float] = None,
    executor: Optional[Executor] = None,
    confidence: float = CONFIDENCE,
) -> Union[EisspCertificate, Counterexample]:
    """Find the smallest ``phi`` with ``E[dV] <= -target_alpha V + phi`` on ``region``.

    ``phi`` is taken from the upper confidence ends of the sampled drifts. A
    state whose Bonferroni-corrected lower end still needs more than
    ``phi_budget`` (by default the noise floor of an additive system) is
    returned as a :class:`Counterexample` instead.
    """
    if not 0.0 < target_alpha < 1.0:
        raise ValueError(f"target_alpha must lie in (0, 1), got {target_alpha!r}")
    if region.dimension != system.state_dim:
        raise DimensionMismatchError(
            f"region is {region.dimension}-dimensional, system {system.state_dim}"
        )
    states = region.states(seed)
    if states.shape[0] == 0:
        raise EmptyRegionError(f"{region.kind.value} region produced no sampled states")
    if not bool(np.all(system.in_domain(states))):
        raise PreconditionError("sample region leaves the system domain")
    budget = default_phi_budget(system, V, spec) if phi_budget is None else phi_budget

    drift_at = partial(_drift_at, system, V, spec, sample_count, seed, confidence)
    estimates = resolve(executor).map(drift_at, list(enumerate(states)))

    z = normal_quantile(confidence)
    # Bonferroni over the states.
    z_family = normal_quantile(1.0 - (1.0 - confidence) / len(states))
    values = np.asarray(V(states), dtype=float).reshape(-1)
    phi = 0.0
    worst: Optional[Tuple[float, int]] = None
    for i, (est, v) in enumerate(zip(estimates, values)):
        se = (est.upper - est.mean_drift) / z
        tol = 1e-12 * (1.0 + abs(v) + budget)
        phi = max(phi, est.upper + target_alpha * v)
        required = est.mean_drift - z_family * se + target_alpha * v
        if required > budget + tol and (worst is None or required > worst[0]):
            worst = (required, i)

    if worst is not None:
        required, i = worst
        logger.info(
            "certify.counterexample states=%d required_phi=%.6g budget=%.6g",
            len(states),
            required,
            budget,
        )
        return Counterexample(
            state=states[i],
            drift=estimates[i],
            required_phi=required,
            phi_budget=budget,
        )

    if phi <= 1e-12 * max(1.0, float(values.max())):
        phi = 0.0
    logger.info(
        "certify.ok states=%d alpha=%.6g phi=%.6g", len(states), target_alpha, phi
    )
    return EisspCertificate(
        alpha=target_alpha,
        phi=phi,
        a=V.a,
        b=V.b,
        c=V.c,
        p=2.0,
        evidence=Evidence.SAMPLED,
    )


def _worst_increment(
    system: "SystemModel",
    V: QuadraticLyapunov,
    disturbances: np.ndarray,
    state: np.ndarray,
) -> float:
    batch = np.broadcast_to(state, (len(disturbances), state.size))
    nxt = system.step(batch, disturbances)
    return float(np.max(V(nxt))) - float(V(state))


def certify_iss(
    system: "SystemModel",
    V: QuadraticLyapunov,
    region: SampleRegion,
    target_alpha: float,
    disturbance_bound: float,
    *,
    disturbance_points: int = DEFAULT_DISTURBANCE_POINTS,
    phi_budget: Optional[float] = None,
    seed: int = 0,
    executor: Optional[Executor] = None,
) -> Union[EisspCertificate, Counterexample]:
    """Worst-case counterpart of :func:`certify_eissp`.

    Checks ``V(f(x, d)) - V(x) <= -target_alpha V(x) + phi`` for every sampled
    state and every ``d`` on a grid over ``|d_i| <= disturbance_bound``.
    """
    if not 0.0 < target_alpha < 1.0:
        raise ValueError(f"target_alpha must lie in (0, 1), got {target_alpha!r}")
    if disturbance_bound < 0.0:
        raise ValueError(f"disturbance_bound must be >= 0, got {disturbance_bound!r}")
    if disturbance_points < 2:
        raise ValueError("disturbance_points must be >= 2")
    if region.dimension != system.state_dim:
        raise DimensionMismatchError(
            f"region is {region.dimension}-dimensional, system {system.state_dim}"
        )
    states = region.states(seed)
    if states.shape[0] == 0:
        raise EmptyRegionError(f"{region.kind.value} region produced no sampled states")
    if not bool(np.all(system.in_domain(states))):
        raise PreconditionError("sample region leaves the system domain")

    axis = np.linspace(-disturbance_bound, disturbance_bound, disturbance_points)
    grid = np.array(list(itertools.product(axis, repeat=system.disturbance_dim)))
    check = partial(_worst_increment, system, V, grid)
    worst = np.asarray(resolve(executor).map(check, list(states)), dtype=float)
    values = np.asarray(V(states), dtype=float).reshape(-1)
    required = worst + target_alpha * values
    i = int(np.argmax(required))
    phi = max(0.0, float(required[i]))

    if phi_budget is not None and phi > phi_budget + 1e-12 * (1.0 + phi_budget):
        logger.info(
            "certify_iss.counterexample required_phi=%.6g budget=%.6g", phi, phi_budget
        )
        return Counterexample(
            state=states[i],
            drift=DriftEstimate(
                state=states[i],
                mean_drift=float(worst[i]),
                confidence_interval=(float(worst[i]), float(worst[i])),
                sample_count=int(grid.shape[0]),
            ),
            required_phi=phi,
            phi_budget=phi_budget,
        )
    if phi <= 1e-12 * max(1.0, float(values.max())):
        phi = 0.0
    logger.info(
        "certify_iss.ok states=%d grid=%d alpha=%.6g phi=%.6g",
        len(states),
        grid.shape[0],
        target_alpha,
        phi,
    )
    return EisspCertificate(
        alpha=target_alpha,
        phi=phi,
        a=V.a,
        b=V.b,
        c=V.c,
        p=math.inf,
        evidence=Evidence.SAMPLED,
    )
