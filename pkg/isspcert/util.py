"""Numerical helpers shared across the certification modules."""

from __future__ import annotations

import logging
from collections.abc import Callable
from typing import Any, Tuple

import numpy as np
from scipy import integrate, stats

logger = logging.getLogger(__name__)

# Two-sided confidence used by every interval the package reports.
CONFIDENCE = 0.99

SYMMETRY_TOL = 1e-10
EIGEN_RESIDUAL_TOL = 1e-8

QUADRATURE_RTOL = 1e-8
QUADRATURE_MAX_STEPS = 2**20


def zeta(p: float) -> float:
    """Smallest constant with ``(x1**p + x2**p)**(1/p) <= zeta(p) (x1 + x2)``.

    Holds for all ``x1, x2 >= 0``. Equal to 1 for ``p >= 1`` and
    ``2**(1/p - 1)`` below, where ``x1 == x2`` attains it.
    """
    if not p > 0:
        raise ValueError(f"p must be positive, got {p!r}")
    if p >= 1:
        return 1.0
    return float(2.0 ** (1.0 / p - 1.0))


def as_square(M: Any, name: str = "matrix") -> np.ndarray:
    """``M`` as a float 2-D square array; scalars become 1x1."""
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def is_symmetric(M: np.ndarray, tol: float = SYMMETRY_TOL) -> bool:
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    return bool(np.max(np.abs(M - M.T), initial=0.0) <= tol * scale)


def symmetric_eigen_extremes(M: Any) -> Tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix.

    Raises ``ValueError`` if ``M`` is not symmetric and
    ``numpy.linalg.LinAlgError`` if the returned eigenpairs fail the residual
    check ``|M v - w v| <= 1e-8 |M|``.
    """
    arr = as_square(M)
    if not is_symmetric(arr):
        raise ValueError("matrix is not symmetric")
    w, vecs = np.linalg.eigh(arr)
    scale = max(float(np.linalg.norm(arr, 2)), np.finfo(float).tiny)
    for idx in (0, -1):
        v = vecs[:, idx]
        if np.linalg.norm(arr @ v - w[idx] * v) > EIGEN_RESIDUAL_TOL * scale:
            raise np.linalg.LinAlgError("eigen decomposition failed residual check")
    return float(w[0]), float(w[-1])


def spectral_radius(A: Any) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(as_square(A)))))


def normal_quantile(confidence: float = CONFIDENCE) -> float:
    """Two-sided standard normal quantile for ``confidence``."""
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence!r}")
    return float(stats.norm.ppf(0.5 + confidence / 2.0))


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one (master seed, stream) pair.

    Streams are derived with ``SeedSequence`` spawn keys and drive a
    counter-based Philox bit generator, so the draws of stream ``i`` do not
    depend on how many other streams exist or on the order they are used.
    """
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(seq))


def simpson_doubling(
    integrand: Callable[[np.ndarray], np.ndarray],
    lower: float,
    upper: float,
    steps: int = 16,
    rtol: float = QUADRATURE_RTOL,
    max_steps: int = QUADRATURE_MAX_STEPS,
) -> Tuple[float, int]:
    """Composite Simpson integral, doubling ``steps`` until it settles.

    Stops when the relative change between successive refinements drops
    below ``rtol`` or ``max_steps`` is reached. Returns the integral and the
    step count used. ``integrand`` receives the node array.
    """
    if steps < 2 or steps % 2:
        raise ValueError(f"steps must be an even integer >= 2, got {steps}")
    if upper == lower:
        return 0.0, steps

    n = steps
    previous: float = float("nan")
    while True:
        nodes = np.linspace(lower, upper, n + 1)
        current = float(integrate.simpson(integrand(nodes), x=nodes))
        if np.isfinite(previous) and abs(current - previous) <= rtol * abs(current):
            return current, n
        if n * 2 > max_steps:
            logger.warning(
                "quadrature.cap steps=%d change=%.3e", n, abs(current - previous)
            )
            return current, n
        previous = current
        n *= 2
