"""Core types for isspcert certificates, bounds, and Monte Carlo reports.

Every type here is a pydantic model so it validates on construction and
round-trips through JSON with ``model_dump_json`` / ``model_validate_json``.
Array-valued inputs are accepted as any nested sequence (including numpy
arrays) and stored as plain lists; the numpy views are exposed as properties.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from isspcert.util import SYMMETRY_TOL, is_symmetric, stream_rng

# Wire-format version stamped into reports written by the CLI.
SCHEMA_VERSION = 1

# Relative slack allowed when comparing floats that should be ordered
# (interval endpoints, a <= b).
_ORDER_TOL = 1e-12


class IsspError(Exception):
    """Base class for every error raised by isspcert."""


class DimensionMismatchError(IsspError, ValueError):
    """A vector or matrix does not match the dimension it is used with."""


def _as_list(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def _within(lo: float, x: float, hi: float) -> bool:
    tol = _ORDER_TOL * max(1.0, abs(lo), abs(x), abs(hi))
    return lo - tol <= x <= hi + tol


class DisturbanceKind(str, Enum):
    """Supported disturbance laws."""

    GAUSSIAN = "gaussian"
    TRUNCATED_GAUSSIAN = "truncated-gaussian"
    UNIFORM_BALL = "uniform-ball"
    POINT_MASS = "point-mass"


class LpMethod(str, Enum):
    """How an Lp norm was obtained."""

    ANALYTIC = "analytic"
    MONTE_CARLO = "monte-carlo"


class Evidence(str, Enum):
    """Provenance of the constants in a certificate."""

    SAMPLED = "sampled"
    ANALYTIC = "analytic"


class BoundKind(str, Enum):
    """Which probability bound produced an :class:`ExitBound`."""

    VILLE = "ville"
    KUSHNER_CASE_1 = "kushner-case-1"
    KUSHNER_CASE_2 = "kushner-case-2"


class HittingTimeForm(str, Enum):
    """How an expected-hitting-time bound was evaluated."""

    CLOSED_FORM_LINEAR = "closed-form-linear"
    QUADRATURE = "quadrature"


class RegionKind(str, Enum):
    """Sampling plan layouts for drift certification."""

    GRID = "grid"
    BALL = "ball"
    SHELL = "shell"
    POINTS = "points"


# =============================================================================
# Disturbances
# =============================================================================


class DisturbanceSpec(BaseModel):
    """A disturbance law over a fixed-dimension real vector space.

    Use the classmethod constructors rather than building the model by hand:

        DisturbanceSpec.gaussian(mean=[0, 0], covariance=0.01)
        DisturbanceSpec.truncated_gaussian(0.0, 1.0, radius=3.0)
        DisturbanceSpec.uniform_ball(radius=0.5, dimension=2)
        DisturbanceSpec.point_mass([0.0])

    ``radius`` bounds each coordinate of the zero-mean part for the truncated
    law (a box), and the Euclidean norm for the uniform ball.
    """

    model_config = ConfigDict(frozen=True)

    kind: DisturbanceKind
    mean: Optional[List[float]] = None
    covariance: Optional[List[List[float]]] = None
    radius: Optional[float] = None
    value: Optional[List[float]] = None
    dimension: Optional[int] = None

    @field_validator("mean", "covariance", "value", mode="before")
    @classmethod
    def _coerce_arrays(cls, v: Any) -> Any:
        return _as_list(v)

    @model_validator(mode="after")
    def _check_shape(self) -> "DisturbanceSpec":
        kind = self.kind
        if kind in (DisturbanceKind.GAUSSIAN, DisturbanceKind.TRUNCATED_GAUSSIAN):
            if self.mean is None or self.covariance is None:
                raise ValueError(f"{kind.value} requires mean and covariance")
            n = len(self.mean)
            cov = np.asarray(self.covariance, dtype=float)
            if n == 0 or cov.shape != (n, n):
                raise ValueError(
                    f"covariance shape {cov.shape} does not match mean length {n}"
                )
            if not np.all(np.isfinite(cov)) or not is_symmetric(cov, SYMMETRY_TOL):
                raise ValueError("covariance must be finite and symmetric")
            if np.linalg.eigvalsh(cov)[0] <= 0.0:
                raise ValueError("covariance must be positive definite")
            if kind is DisturbanceKind.TRUNCATED_GAUSSIAN:
                if self.radius is None or not self.radius > 0.0:
                    raise ValueError("truncated-gaussian requires radius > 0")
        elif kind is DisturbanceKind.UNIFORM_BALL:
            if self.radius is None or not self.radius >= 0.0:
                raise ValueError("uniform-ball requires radius >= 0")
            if self.dimension is None or self.dimension < 1:
                raise ValueError("uniform-ball requires a positive dimension")
        elif kind is DisturbanceKind.POINT_MASS:
            if not self.value:
                raise ValueError("point-mass requires a non-empty value")
        if self.dimension is not None and self.dimension != self._natural_dim():
            raise ValueError(
                f"dimension {self.dimension} disagrees with the law's vectors"
            )
        return self

    def _natural_dim(self) -> int:
        if self.kind is DisturbanceKind.UNIFORM_BALL:
            assert self.dimension is not None
            return self.dimension
        if self.kind is DisturbanceKind.POINT_MASS:
            assert self.value is not None
            return len(self.value)
        assert self.mean is not None
        return len(self.mean)

    # -- constructors ------------------------------------------------------

    @classmethod
    def gaussian(cls, mean: Any, covariance: Any) -> "DisturbanceSpec":
        mu, cov = _mean_and_covariance(mean, covariance)
        return cls(kind=DisturbanceKind.GAUSSIAN, mean=mu, covariance=cov)

    @classmethod
    def truncated_gaussian(
        cls, mean: Any, covariance: Any, radius: float
    ) -> "DisturbanceSpec":
        mu, cov = _mean_and_covariance(mean, covariance)
        return cls(
            kind=DisturbanceKind.TRUNCATED_GAUSSIAN,
            mean=mu,
            covariance=cov,
            radius=float(radius),
        )

    @classmethod
    def uniform_ball(cls, radius: float, dimension: int) -> "DisturbanceSpec":
        return cls(
            kind=DisturbanceKind.UNIFORM_BALL,
            radius=float(radius),
            dimension=int(dimension),
        )

    @classmethod
    def point_mass(cls, value: Any) -> "DisturbanceSpec":
        vec = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(kind=DisturbanceKind.POINT_MASS, value=vec.tolist())

    # -- views -------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self._natural_dim()

    @property
    def mean_vector(self) -> np.ndarray:
        """Mean of the law (the center for truncated laws)."""
        if self.kind is DisturbanceKind.POINT_MASS:
            return np.asarray(self.value, dtype=float)
        if self.kind is DisturbanceKind.UNIFORM_BALL:
            return np.zeros(self.dim)
        return np.asarray(self.mean, dtype=float)

    @property
    def covariance_matrix(self) -> Optional[np.ndarray]:
        """The Gaussian covariance parameter, before any truncation."""
        if self.covariance is None:
            return None
        return np.asarray(self.covariance, dtype=float)

    def is_zero_mean(self) -> bool:
        return bool(np.all(self.mean_vector == 0.0))

    def scaled(self, factor: float) -> "DisturbanceSpec":
        """The law of ``factor * d`` for ``d`` drawn from this law."""
        f = float(factor)
        if f < 0.0:
            raise ValueError(f"scale factor must be >= 0, got {factor!r}")
        if self.kind is DisturbanceKind.POINT_MASS:
            return DisturbanceSpec.point_mass(f * self.mean_vector)
        if self.kind is DisturbanceKind.UNIFORM_BALL:
            assert self.radius is not None
            return DisturbanceSpec.uniform_ball(f * self.radius, self.dim)
        if f == 0.0:
            return DisturbanceSpec.point_mass(np.zeros(self.dim))
        cov = self.covariance_matrix
        assert cov is not None
        if self.kind is DisturbanceKind.GAUSSIAN:
            return DisturbanceSpec.gaussian(f * self.mean_vector, f * f * cov)
        assert self.radius is not None
        return DisturbanceSpec.truncated_gaussian(
            f * self.mean_vector, f * f * cov, f * self.radius
        )


def _mean_and_covariance(mean: Any, covariance: Any) -> Tuple[Any, Any]:
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.asarray(covariance, dtype=float)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(mu.size)
    elif cov.ndim == 1:
        cov = np.diag(cov)
    if mu.size == 1 and cov.shape[0] > 1:
        mu = np.full(cov.shape[0], float(mu[0]))
    return mu.tolist(), cov.tolist()


# =============================================================================
# Norms and certificates
# =============================================================================


class LpNorm(BaseModel):
    """The Lp norm of a disturbance law, exact or estimated."""

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    p: float
    value: float
    method: LpMethod
    sample_count: Optional[int] = None
    confidence_interval: Optional[Tuple[float, float]] = None

    @model_validator(mode="after")
    def _check(self) -> "LpNorm":
        if not self.p > 0.0:
            raise ValueError(f"p must be positive, got {self.p}")
        if not (math.isfinite(self.value) and self.value >= 0.0):
            raise ValueError(f"norm must be finite and >= 0, got {self.value}")
        if self.method is LpMethod.ANALYTIC and self.confidence_interval is not None:
            raise ValueError("analytic norms carry no confidence interval")
        if self.confidence_interval is not None:
            lo, hi = self.confidence_interval
            if not _within(lo, self.value, hi):
                raise ValueError("confidence interval must contain the estimate")
        return self

    @property
    def upper(self) -> float:
        """Conservative value: the interval's upper end when sampled."""
        if self.confidence_interval is None:
            return self.value
        return self.confidence_interval[1]


class EisspCertificate(BaseModel):
    """Constants witnessing exponential ISS in probability.

    ``a |x|^c <= V(x) <= b |x|^c`` and ``E[V(x+)] - V(x) <= -alpha V(x) + phi``
    on the certified region, with ``phi`` built from the p-th moment of the
    disturbance.
    """

    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    alpha: float
    phi: float
    a: float
    b: float
    c: float
    p: float
    evidence: Evidence

    @model_validator(mode="after")
    def _check(self) -> "EisspCertificate":
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (math.isfinite(self.phi) and self.phi >= 0.0):
            raise ValueError(f"phi must be finite and >= 0, got {self.phi}")
        if not (self.a > 0.0 and self.b > 0.0 and self.c > 0.0 and self.p > 0.0):
            raise ValueError("a, b, c and p must all be positive")
        if self.a > self.b * (1.0 + _ORDER_TOL):
            raise ValueError(f"a={self.a} exceeds b={self.b}")
        return self

    @property
    def theta(self) -> float:
        """Per-step growth factor ``1 / (1 - alpha)`` of the supermartingale."""
        return 1.0 / (1.0 - self.alpha)

    @property
    def noise_floor(self) -> float:
        """``phi / alpha``, the level the expected decrease settles to."""
        return self.phi / self.alpha


class DriftEstimate(BaseModel):
    """Monte Carlo estimate of ``E[V(f(x, d))] - V(x)`` at one state."""

    model_config = ConfigDict(frozen=True)

    state: List[float]
    mean_drift: float
    confidence_interval: Tuple[float, float]
    sample_count: int

    @field_validator("state", mode="before")
    @classmethod
    def _coerce_state(cls, v: Any) -> Any:
        return _as_list(v)

    @model_validator(mode="after")
    def _check(self) -> "DriftEstimate":
        lo, hi = self.confidence_interval
        if not _within(lo, self.mean_drift, hi):
            raise ValueError("confidence interval must contain the mean drift")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")
        return self

    @property
    def upper(self) -> float:
        return self.confidence_interval[1]


class Counterexample(BaseModel):
    """A sampled state whose drift cannot be bounded within the noise budget."""

    model_config = ConfigDict(frozen=True)

    state: List[float]
    drift: DriftEstimate
    required_phi: float
    phi_budget: float

    @field_validator("state", mode="before")
    @classmethod
    def _coerce_state(cls, v: Any) -> Any:
        return _as_list(v)


class SampleRegion(BaseModel):
    """Where drift certification samples the state space.

    ``grid`` lays ``points_per_axis`` points on ``[-radius, radius]`` per
    axis, ``ball`` samples ``count`` states uniformly in the ball of
    ``radius``, ``shell`` samples between ``inner_radius`` and ``radius``
    (equal radii give a sphere) and ``points`` uses ``points`` verbatim.
    """

    model_config = ConfigDict(frozen=True)

    kind: RegionKind
    dimension: int = Field(ge=1)
    radius: float = Field(default=1.0, ge=0.0)
    inner_radius: float = Field(default=0.0, ge=0.0)
    count: int = Field(default=0, ge=0)
    points_per_axis: int = Field(default=0, ge=0)
    points: List[List[float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check(self) -> "SampleRegion":
        if self.inner_radius > self.radius:
            raise ValueError("inner_radius must not exceed radius")
        for pt in self.points:
            if len(pt) != self.dimension:
                raise ValueError(f"point {pt} is not {self.dimension}-dimensional")
        return self

    def states(self, seed: int = 0) -> np.ndarray:
        """The sampled states as an ``(m, dimension)`` array; may be empty."""
        n = self.dimension
        if self.kind is RegionKind.POINTS:
            return np.asarray(self.points, dtype=float).reshape(-1, n)
        if self.kind is RegionKind.GRID:
            if self.points_per_axis == 0:
                return np.empty((0, n))
            axis = np.linspace(-self.radius, self.radius, self.points_per_axis)
            mesh = np.meshgrid(*([axis] * n), indexing="ij")
            return np.stack([m.ravel() for m in mesh], axis=1)
        rng = stream_rng(seed, REGION_STREAM)
        directions = rng.standard_normal((self.count, n))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        directions = directions / np.where(norms > 0.0, norms, 1.0)
        inner = 0.0 if self.kind is RegionKind.BALL else self.inner_radius
        u = rng.uniform(size=(self.count, 1))
        # Volume-uniform radius between the inner and outer sphere.
        radii = (inner**n + u * (self.radius**n - inner**n)) ** (1.0 / n)
        return directions * radii


# Sample-region states draw from their own stream so they never share draws
# with the per-state disturbance streams (indexed from 0).
REGION_STREAM = 2**32 - 1


# =============================================================================
# Bounds
# =============================================================================


class ExitBound(BaseModel):
    """A lower bound on the probability of staying within a threshold.

    ``lambda`` is the martingale threshold for Ville bounds and the level
    ``rho~`` for Kushner bounds.
    """

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: float = Field(alias="lambda")
    probability_lower_bound: float
    kind: BoundKind

    @model_validator(mode="after")
    def _check(self) -> "ExitBound":
        if not self.lambda_ > 0.0:
            raise ValueError(f"lambda must be positive, got {self.lambda_}")
        if not 0.0 <= self.probability_lower_bound <= 1.0:
            raise ValueError("probability bound must lie in [0, 1]")
        return self


class IssEnvelope(BaseModel):
    """``|x_k| <= m_tilde * alpha_tilde**k * |x_0| + gamma_value`` in Lp."""

    model_config = ConfigDict(frozen=True)

    m_tilde: float = Field(gt=0.0)
    alpha_tilde: float = Field(gt=0.0, lt=1.0)
    gamma_value: float = Field(ge=0.0)

    def bound(self, k: Any, x0_norm: float) -> Any:
        """Envelope value at step(s) ``k``; vectorizes over array ``k``."""
        steps = np.asarray(k, dtype=float)
        out = self.m_tilde * self.alpha_tilde**steps * x0_norm + self.gamma_value
        return float(out) if out.ndim == 0 else out


class HittingTimeBound(BaseModel):
    """Upper bound on the expected time to enter ``{V <= gamma}``."""

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(gt=0.0)
    expected_hitting_time_upper: float = Field(ge=0.0)
    form: HittingTimeForm
    quadrature_steps: Optional[int] = None

    @property
    def bound(self) -> float:
        """Short name the experiment reports use for the upper bound."""
        return self.expected_hitting_time_upper


# =============================================================================
# Monte Carlo reports
# =============================================================================


class SuccessReport(BaseModel):
    """Fraction of trajectories that stayed below a threshold."""

    model_config = ConfigDict(frozen=True)

    fraction: float = Field(ge=0.0, le=1.0)
    wilson_interval: Tuple[float, float]
    successes: int = Field(ge=0)
    trajectories: int = Field(ge=1)
    threshold_description: str = ""

    @model_validator(mode="after")
    def _check(self) -> "SuccessReport":
        lo, hi = self.wilson_interval
        if not (0.0 <= lo and hi <= 1.0 and _within(lo, self.fraction, hi)):
            raise ValueError("wilson interval must contain the fraction within [0, 1]")
        if self.successes > self.trajectories:
            raise ValueError("successes exceed trajectories")
        return self


class HittingTimeReport(BaseModel):
    """Empirical first entry times into ``{V <= gamma}``.

    Trajectories that never enter are censored at their last observed step
    and still counted in ``mean`` and ``max``.
    """

    model_config = ConfigDict(frozen=True)

    gamma: float
    mean: float
    max: float
    confidence_interval: Tuple[float, float]
    hit_count: int
    censored_count: int
    domain_exit_count: int = 0


class MartingaleStep(BaseModel):
    """Mean one-step increment of ``W`` across trajectories at step ``k``."""

    model_config = ConfigDict(frozen=True)

    k: int
    mean_increment: float
    standard_error: float
    count: int
    flagged: bool


class MartingaleCheckReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigmas: float
    steps: List[MartingaleStep]

    @property
    def flagged_steps(self) -> List[int]:
        return [s.k for s in self.steps if s.flagged]


class RobustnessResult(BaseModel):
    """Largest disturbance scale keeping the exterior of a shell contracting."""

    model_config = ConfigDict(frozen=True)

    delta_star: float = Field(ge=0.0)
    chi_star: Optional[float] = Field(default=None, gt=0.0)
    k_conv: float
    rho_tilde: Optional[float] = Field(default=None, ge=0.0)
    feasible: bool = True
    mode: str = "issp"
    exterior_pass_fraction: Optional[float] = None
    seeds: Dict[str, int] = Field(default_factory=dict)
    counts: Dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check(self) -> "RobustnessResult":
        if self.feasible and self.chi_star is None:
            raise ValueError("a feasible result needs chi_star")
        return self


class BoundReport(BaseModel):
    """One row of a bound comparison: the bound and the parameters behind it.

    ``lambda`` is the threshold the bound refers to, as in :class:`ExitBound`.
    """

    model_config = ConfigDict(
        frozen=True, populate_by_name=True, ser_json_inf_nan="constants"
    )

    kind: BoundKind
    lambda_: float = Field(alias="lambda")
    bound: float = Field(ge=0.0, le=1.0)
    label: str = ""
    parameters: Dict[str, float] = Field(default_factory=dict)
    empirical: Optional[SuccessReport] = None

    @property
    def sound(self) -> bool:
        """False when the bound exceeds the empirical interval's upper end."""
        if self.empirical is None:
            return True
        hi = self.empirical.wilson_interval[1]
        return self.bound <= hi + _ORDER_TOL
