"""Discrete-time stochastic systems ``x+ = f(x, d)``.

Every model steps a whole batch at once: ``step`` takes ``(m, n)`` states and
``(m, q)`` disturbances (or single vectors) and returns ``(m, n)`` successors.
A model may be partial, defined only on a ball around its fixed point;
stepping from outside that ball raises :class:`DomainExitError`.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from collections.abc import Callable
from typing import Any, Dict, Optional, Tuple

import numpy as np

from isspcert.lyapunov import (
    QuadraticLyapunov,
    lqg_certificate,
    solve_dare,
)
from isspcert.types import (
    DimensionMismatchError,
    DisturbanceSpec,
    EisspCertificate,
    IsspError,
)
from isspcert.util import spectral_radius

logger = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-10


class DomainExitError(IsspError):
    """A state left the domain of a partial system map."""


class SystemModel(ABC):
    """A discrete-time map with an equilibrium at ``fixed_point``."""

    name: str = "system"

    def __init__(
        self,
        state_dim: int,
        disturbance_dim: int,
        *,
        fixed_point: Optional[Any] = None,
        domain_radius: Optional[float] = None,
        disturbance_gain: Optional[Any] = None,
    ):
        if state_dim < 1 or disturbance_dim < 1:
            raise ValueError("state and disturbance dimensions must be positive")
        if domain_radius is not None and not domain_radius > 0.0:
            raise ValueError(f"domain_radius must be positive, got {domain_radius}")
        self.state_dim = state_dim
        self.disturbance_dim = disturbance_dim
        self.fixed_point = (
            np.zeros(state_dim)
            if fixed_point is None
            else np.asarray(fixed_point, dtype=float).reshape(state_dim)
        )
        self.domain_radius = domain_radius
        self.disturbance_gain = (
            None
            if disturbance_gain is None
            else np.asarray(disturbance_gain, dtype=float).reshape(
                state_dim, disturbance_dim
            )
        )

    @abstractmethod
    def _map(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Successors of ``(m, n)`` states under ``(m, q)`` disturbances."""

    def _check_fixed_point(self) -> None:
        zero = np.zeros((1, self.disturbance_dim))
        image = self._map(self.fixed_point[None, :], zero)
        if np.max(np.abs(image[0] - self.fixed_point)) > FIXED_POINT_TOL:
            raise ValueError(f"{self.name}: f(x*, 0) != x*")

    def in_domain(self, x: Any) -> Any:
        """Boolean mask: which states lie in the closed domain ball."""
        arr = np.asarray(x, dtype=float)
        if self.domain_radius is None:
            inside = np.isfinite(arr).all(axis=-1)
        else:
            dist = np.linalg.norm(arr - self.fixed_point, axis=-1)
            inside = dist <= self.domain_radius
        return inside

    def step(self, x: Any, d: Any) -> np.ndarray:
        """One application of the map; vectorizes over leading batch axis."""
        X = np.asarray(x, dtype=float)
        D = np.asarray(d, dtype=float)
        D = D.reshape(-1, self.disturbance_dim) if D.ndim <= 1 else D
        single = X.ndim == 1 and D.shape[0] == 1
        X = np.atleast_2d(X)
        if X.shape[-1] != self.state_dim:
            raise DimensionMismatchError(
                f"{self.name}: state of size {X.shape[-1]}, expected {self.state_dim}"
            )
        if D.shape[-1] != self.disturbance_dim:
            raise DimensionMismatchError(
                f"{self.name}: disturbance of size {D.shape[-1]}, "
                f"expected {self.disturbance_dim}"
            )
        m = max(X.shape[0], D.shape[0])
        X = np.broadcast_to(X, (m, self.state_dim))
        D = np.broadcast_to(D, (m, self.disturbance_dim))
        if self.domain_radius is not None and not bool(np.all(self.in_domain(X))):
            raise DomainExitError(f"{self.name}: state outside the domain")
        out = self._map(X, D)
        return out[0] if single else out

    def jacobian(self, x: Optional[Any] = None, eps: float = 1e-5) -> np.ndarray:
        """Central-difference Jacobian in ``x`` at zero disturbance."""
        base = self.fixed_point if x is None else np.asarray(x, dtype=float)
        n = self.state_dim
        points = np.concatenate([base + eps * np.eye(n), base - eps * np.eye(n)])
        images = self._map(points, np.zeros((2 * n, self.disturbance_dim)))
        return ((images[:n] - images[n:]) / (2.0 * eps)).T

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(name={self.name!r}, n={self.state_dim}, "
            f"q={self.disturbance_dim}, domain_radius={self.domain_radius})"
        )


class LinearSystem(SystemModel):
    """``x+ = A x + G d``."""

    def __init__(
        self,
        A: Any,
        G: Optional[Any] = None,
        *,
        domain_radius: Optional[float] = None,
        name: str = "linear",
    ):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatchError(f"A must be square, got {A.shape}")
        G = np.eye(A.shape[0]) if G is None else np.asarray(G, dtype=float)
        G = G.reshape(A.shape[0], -1)
        super().__init__(
            A.shape[0], G.shape[1], domain_radius=domain_radius, disturbance_gain=G
        )
        self.A = A
        self.name = name

    def _map(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        assert self.disturbance_gain is not None
        return x @ self.A.T + d @ self.disturbance_gain.T


class WalkerSurrogate(SystemModel):
    """Poincare-map surrogate of a compass-gait walker near its limit cycle.

    ``x+ = A x + kappa |x| x + g d`` on a ball of radius ``domain_radius``;
    ``x`` is the deviation from the periodic gait and ``d`` a scalar
    terrain-height perturbation entering through ``g``. Leaving the ball
    models a fall.
    """

    def __init__(
        self,
        contraction: Any,
        curvature: float,
        domain_radius: float,
        height_gain: Any,
    ):
        A = np.atleast_2d(np.asarray(contraction, dtype=float))
        if spectral_radius(A) >= 1.0:
            raise ValueError("contraction must have spectral radius < 1")
        g = np.asarray(height_gain, dtype=float).reshape(A.shape[0], 1)
        super().__init__(
            A.shape[0], 1, domain_radius=domain_radius, disturbance_gain=g
        )
        self.A = A
        self.curvature = float(curvature)
        self.name = "walker-surrogate"
        self._check_fixed_point()

    def _map(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        assert self.disturbance_gain is not None
        radial = self.curvature * np.linalg.norm(x, axis=1, keepdims=True) * x
        return x @ self.A.T + radial + d @ self.disturbance_gain.T


# =============================================================================
# Built-in systems
# =============================================================================


def _rotation(degrees: float) -> np.ndarray:
    t = math.radians(degrees)
    return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


DEFAULT_WALKER_CONTRACTION = _rotation(30.0) @ np.diag([0.7, 0.8])
DEFAULT_WALKER_HEIGHT_GAIN = (0.08, 0.16)


def scalar_linear(a: float, domain_radius: Optional[float] = None) -> LinearSystem:
    """``x+ = a x + d`` on the real line."""
    return LinearSystem(
        [[a]], [[1.0]], domain_radius=domain_radius, name="scalar-linear"
    )


def double_integrator_matrices(dt: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """Planar double integrator ``[px, py, vx, vy]`` with acceleration inputs."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    eye = np.eye(2)
    A = np.block([[eye, dt * eye], [np.zeros((2, 2)), eye]])
    B = np.vstack([0.5 * dt * dt * eye, dt * eye])
    return A, B


def double_integrator_lqg(
    dt: float = 0.1,
    Q: Optional[Any] = None,
    R: Optional[Any] = None,
    spec: Optional[DisturbanceSpec] = None,
) -> Tuple[LinearSystem, QuadraticLyapunov, EisspCertificate]:
    """Closed-loop LQR double integrator with its Riccati certificate.

    Returns the closed loop ``x+ = (A - B K) x + d``, ``V = x^T P x`` and the
    certificate built from ``Q`` and the disturbance's second moment.
    """
    A, B = double_integrator_matrices(dt)
    Q = np.eye(4) if Q is None else np.asarray(Q, dtype=float)
    R = np.eye(2) if R is None else np.asarray(R, dtype=float)
    spec = spec or DisturbanceSpec.gaussian(np.zeros(4), 0.01 * np.eye(4))
    P, K = solve_dare(A, B, Q, R)
    system = LinearSystem(A - B @ K, np.eye(4), name="double-integrator-lqg")
    return system, QuadraticLyapunov(P), lqg_certificate(P, Q, spec)


def walker_surrogate(
    contraction: Optional[Any] = None,
    curvature: float = 0.1,
    domain_radius: float = 1.0,
    height_gain: Optional[Any] = None,
) -> WalkerSurrogate:
    return WalkerSurrogate(
        DEFAULT_WALKER_CONTRACTION if contraction is None else contraction,
        curvature,
        domain_radius,
        DEFAULT_WALKER_HEIGHT_GAIN if height_gain is None else height_gain,
    )


def _linear_from_params(**params: Any) -> LinearSystem:
    return LinearSystem(
        params["A"],
        params.get("G"),
        domain_radius=params.get("domain_radius"),
    )


def _double_integrator_from_params(**params: Any) -> LinearSystem:
    system, _, _ = double_integrator_lqg(
        params.get("dt", 0.1), params.get("Q"), params.get("R")
    )
    return system


SYSTEMS: Dict[str, Callable[..., SystemModel]] = {
    "scalar-linear": scalar_linear,
    "linear": _linear_from_params,
    "double-integrator-lqg": _double_integrator_from_params,
    "walker-surrogate": walker_surrogate,
}


def build_system(name: str, params: Optional[Dict[str, Any]] = None) -> SystemModel:
    """Construct a registered system by name from keyword parameters."""
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise ValueError(
            f"unknown system {name!r}; choose from {sorted(SYSTEMS)}"
        ) from None
    system = factory(**(params or {}))
    logger.debug("system.built %r", system)
    return system
