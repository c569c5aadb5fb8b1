"""Disturbance laws: sampling, Lp norms and covariance traces.

Samples are returned as ``(count, dim)`` arrays. Every draw goes through
:func:`isspcert.util.stream_rng`, so ``(seed, stream)`` fully determines the
output.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy import stats

from isspcert.types import (
    DisturbanceKind,
    DisturbanceSpec,
    IsspError,
    LpMethod,
    LpNorm,
)
from isspcert.util import CONFIDENCE, normal_quantile, stream_rng

logger = logging.getLogger(__name__)

DEFAULT_LP_SAMPLES = 2**16
# Streams reserved for the moment estimators; trajectory streams count up
# from 0 and never reach these.
_LP_STREAM = 2**32 - 2
_COVARIANCE_STREAM = 2**32 - 3


class UnboundedSupportError(IsspError, ValueError):
    """The requested norm is infinite for this law."""


# =============================================================================
# Sampling
# =============================================================================


def draw(spec: DisturbanceSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` disturbances from ``spec`` using ``rng``."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    n = spec.dim
    mean = spec.mean_vector

    if spec.kind is DisturbanceKind.POINT_MASS:
        return np.tile(mean, (count, 1))

    if spec.kind is DisturbanceKind.UNIFORM_BALL:
        assert spec.radius is not None
        directions = rng.standard_normal((count, n))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        directions = directions / np.where(norms > 0.0, norms, 1.0)
        radii = spec.radius * rng.uniform(size=(count, 1)) ** (1.0 / n)
        return directions * radii

    cov = spec.covariance_matrix
    assert cov is not None
    if spec.kind is DisturbanceKind.GAUSSIAN:
        return rng.multivariate_normal(mean, cov, size=count, method="cholesky")

    # Truncated: rejection on the centered box |d_i - mean_i| <= radius.
    assert spec.radius is not None
    zero = np.zeros(n)
    kept = np.empty((0, n))
    while kept.shape[0] < count:
        need = count - kept.shape[0]
        batch = rng.multivariate_normal(
            zero, cov, size=max(2 * need, 64), method="cholesky"
        )
        inside = batch[np.all(np.abs(batch) <= spec.radius, axis=1)]
        kept = np.concatenate([kept, inside[:need]])
    return mean + kept


def sample_stream(
    spec: DisturbanceSpec, seed: int, stream: int, count: int
) -> np.ndarray:
    """``count`` draws from stream ``stream`` of master seed ``seed``."""
    return draw(spec, stream_rng(seed, stream), count)


def sample(spec: DisturbanceSpec, seed: int, count: int) -> np.ndarray:
    """``count`` i.i.d. draws; identical for identical ``(spec, seed, count)``."""
    return sample_stream(spec, seed, 0, count)


# =============================================================================
# Moments
# =============================================================================


def _truncated_axis_variances(spec: DisturbanceSpec) -> np.ndarray:
    cov = spec.covariance_matrix
    assert cov is not None and spec.radius is not None
    sigma = np.sqrt(np.diag(cov))
    bound = spec.radius / sigma
    return sigma**2 * stats.truncnorm.var(-bound, bound)


def _is_diagonal(M: np.ndarray) -> bool:
    return bool(np.count_nonzero(M - np.diag(np.diag(M))) == 0)


def disturbance_covariance(spec: DisturbanceSpec) -> np.ndarray:
    """Covariance matrix of the law (after truncation)."""
    n = spec.dim
    if spec.kind is DisturbanceKind.POINT_MASS:
        return np.zeros((n, n))
    if spec.kind is DisturbanceKind.UNIFORM_BALL:
        assert spec.radius is not None
        return spec.radius**2 / (n + 2) * np.eye(n)
    cov = spec.covariance_matrix
    assert cov is not None
    if spec.kind is DisturbanceKind.GAUSSIAN:
        return cov
    if _is_diagonal(cov):
        return np.diag(_truncated_axis_variances(spec))
    # Correlated truncation has no closed form per axis; estimate it.
    draws = sample_stream(spec, 0, _COVARIANCE_STREAM, DEFAULT_LP_SAMPLES)
    logger.debug("covariance.sampled kind=%s n=%d", spec.kind.value, len(draws))
    return np.atleast_2d(np.cov(draws, rowvar=False))


def covariance_trace(spec: DisturbanceSpec) -> float:
    """Trace of the covariance (after truncation)."""
    return float(np.trace(disturbance_covariance(spec)))


def lp_norm(
    spec: DisturbanceSpec,
    p: float,
    sample_count: int = DEFAULT_LP_SAMPLES,
    seed: int = 0,
    confidence: float = CONFIDENCE,
) -> LpNorm:
    """``(E |d|^p)^(1/p)``, closed form where available, else Monte Carlo.

    ``p = inf`` gives the essential supremum of ``|d|`` and raises
    :class:`UnboundedSupportError` for the untruncated Gaussian.
    """
    if not p > 0:
        raise ValueError(f"p must be positive, got {p!r}")
    kind = spec.kind
    mean = spec.mean_vector

    def analytic(value: float) -> LpNorm:
        return LpNorm(p=p, value=value, method=LpMethod.ANALYTIC)

    if kind is DisturbanceKind.POINT_MASS:
        return analytic(float(np.linalg.norm(mean)))

    if math.isinf(p):
        if kind is DisturbanceKind.GAUSSIAN:
            raise UnboundedSupportError("gaussian disturbances have unbounded support")
        assert spec.radius is not None
        if kind is DisturbanceKind.UNIFORM_BALL:
            return analytic(spec.radius)
        return analytic(float(np.linalg.norm(np.abs(mean) + spec.radius)))

    if kind is DisturbanceKind.UNIFORM_BALL:
        assert spec.radius is not None
        n = spec.dim
        return analytic((n / (n + p)) ** (1.0 / p) * spec.radius)

    if p == 2:
        cov = spec.covariance_matrix
        assert cov is not None
        if kind is DisturbanceKind.GAUSSIAN or _is_diagonal(cov):
            second = covariance_trace(spec) + float(mean @ mean)
            return analytic(math.sqrt(second))

    if sample_count < 2:
        raise ValueError(f"sample_count must be >= 2, got {sample_count}")
    draws = sample_stream(spec, seed, _LP_STREAM, sample_count)
    moments = np.linalg.norm(draws, axis=1) ** p
    m = float(moments.mean())
    half = normal_quantile(confidence) * float(moments.std(ddof=1)) / math.sqrt(
        sample_count
    )
    lo, hi = max(m - half, 0.0) ** (1.0 / p), (m + half) ** (1.0 / p)
    logger.debug("lp_norm.sampled p=%s n=%d value=%.6g", p, sample_count, m)
    return LpNorm(
        p=p,
        value=m ** (1.0 / p),
        method=LpMethod.MONTE_CARLO,
        sample_count=sample_count,
        confidence_interval=(lo, hi),
    )

