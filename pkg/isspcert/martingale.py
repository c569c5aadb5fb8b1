"""Time-varying supermartingale and the probability bounds built on it.

Given a certificate ``(alpha, phi)`` and a horizon ``K``,

    W_k = theta**k V(x_k) + theta * phi * (theta**K - theta**k) / (theta - 1)

with ``theta = 1 / (1 - alpha)`` is a nonnegative supermartingale on
``k = 0..K``. Ville's maximal inequality then bounds the chance that ``W``
ever crosses a level ``lambda``; the crossing event is the same as ``V``
crossing the time-varying threshold :func:`rho_trajectory`.

``theta**K`` leaves the float range quickly (``alpha = 0.99`` at ``K = 200``
is ``1e400``), so ``W`` and the matched thresholds are evaluated as
logarithms. Ratios such as ``W_0 / lambda`` are taken in log space and stay
finite; the plain-float accessors return ``inf`` once a value overflows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from isspcert.types import (
    BoundKind,
    EisspCertificate,
    ExitBound,
    IsspError,
    IssEnvelope,
)
from isspcert.util import zeta

logger = logging.getLogger(__name__)


class BothZeroError(IsspError, ValueError):
    """``M |x0|^c + (1 + eta) phi`` is zero, so no threshold exists."""


def _clamp(p: float) -> float:
    return min(1.0, max(0.0, p))


def _check_horizon(K: int) -> None:
    if K < 0 or int(K) != K:
        raise ValueError(f"horizon must be a non-negative integer, got {K!r}")


def _log(x: Any) -> Any:
    with np.errstate(divide="ignore"):
        return np.log(x)


def _log_expm1(x: Any) -> Any:
    """``log(exp(x) - 1)`` for ``x >= 0``; ``-inf`` at zero."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return x + np.log(-np.expm1(-x))


def _exp(x: Any) -> Any:
    with np.errstate(over="ignore"):
        return np.exp(x)


def _log_growth(cert: EisspCertificate) -> float:
    """``log(theta)``."""
    return -math.log1p(-cert.alpha)


@dataclass(frozen=True)
class SupermartingaleProcess:
    certificate: EisspCertificate
    horizon: int

    def __post_init__(self) -> None:
        _check_horizon(self.horizon)

    @property
    def theta(self) -> float:
        return self.certificate.theta

    def log_values(self, v_trace: Any) -> np.ndarray:
        """``log W_k`` for a Lyapunov trace ``V(x_0..x_j)`` (last axis is time).

        Traces may be shorter than ``K + 1``; NaN entries stay NaN and
        ``W = 0`` maps to ``-inf``.
        """
        v = np.asarray(v_trace, dtype=float)
        if v.shape[-1] > self.horizon + 1:
            raise ValueError(
                f"trace of length {v.shape[-1]} exceeds horizon {self.horizon}"
            )
        steps = np.arange(v.shape[-1], dtype=float)
        return self._log_w(steps, v)

    def values(self, v_trace: Any) -> np.ndarray:
        """``W_k`` for a Lyapunov trace; ``inf`` where the value overflows."""
        return _exp(self.log_values(v_trace))

    def log_w0(self, v0: float) -> float:
        return float(self._log_w(0.0, v0))

    def _log_w(self, k: Any, v: Any) -> Any:
        # W_k = theta**k (V + (phi / alpha) (theta**(K - k) - 1))
        growth = _log_growth(self.certificate)
        offset = _log(self.certificate.noise_floor) + _log_expm1(
            (self.horizon - np.asarray(k)) * growth
        )
        return k * growth + np.logaddexp(_log(v), offset)


def w_value(process: SupermartingaleProcess, k: int, v: float) -> float:
    """``W_k`` at Lyapunov value ``v``."""
    if not 0 <= k <= process.horizon:
        raise ValueError(f"step {k} outside 0..{process.horizon}")
    if v < 0:
        raise ValueError(f"lyapunov value must be >= 0, got {v!r}")
    return float(_exp(process._log_w(float(k), v)))


def w_sum_form(process: SupermartingaleProcess, k: int, v: float) -> float:
    """``W_k`` evaluated from the defining geometric sum, term by term."""
    if not 0 <= k <= process.horizon:
        raise ValueError(f"step {k} outside 0..{process.horizon}")
    theta, phi = process.theta, process.certificate.phi
    tail = math.fsum(theta**j for j in range(k + 1, process.horizon + 1))
    return theta**k * v + phi * tail


def supermartingale_gap(
    process: SupermartingaleProcess, k: int, v: float, drift_upper: float
) -> float:
    """``E[W_{k+1} | x_k] - W_k`` given ``E[V(x_{k+1}) | x_k] <= drift_upper``.

    Reduces symbolically to ``theta**(k+1) (drift_upper - (1 - alpha) v - phi)``,
    which is <= 0 whenever the certificate's drift inequality holds.
    """
    alpha, phi = process.certificate.alpha, process.certificate.phi
    slack = drift_upper - (1.0 - alpha) * v - phi
    if slack == 0.0:
        return 0.0
    return float(_exp((k + 1) * _log_growth(process.certificate)) * slack)


def rho_trajectory(
    cert: EisspCertificate, M: float, v0: float, K: int
) -> np.ndarray:
    """Threshold ``rho_k = M v0 (1 - alpha)**k + phi / alpha`` for ``k = 0..K``."""
    _check_horizon(K)
    if M <= 0:
        raise ValueError(f"M must be positive, got {M!r}")
    steps = np.arange(K + 1, dtype=float)
    return M * v0 * (1.0 - cert.alpha) ** steps + cert.phi / cert.alpha


def log_lqg_lambda(cert: EisspCertificate, M: float, v0: float, K: int) -> float:
    """``log`` of :func:`lqg_lambda`, finite for any horizon."""
    _check_horizon(K)
    tail = _log(cert.noise_floor) + K * _log_growth(cert)
    return float(np.logaddexp(_log(M * v0), tail))


def lqg_lambda(cert: EisspCertificate, M: float, v0: float, K: int) -> float:
    """The ``lambda`` for which ``W_k <= lambda`` iff ``V(x_k) <= rho_k`` for all k.

    Equals ``M v0 + phi / (alpha (1 - alpha)**K)``; ``inf`` past float range.
    """
    return float(_exp(log_lqg_lambda(cert, M, v0, K)))


def log_level_lambda(cert: EisspCertificate, rho_tilde: float, K: int) -> float:
    """``log`` of :func:`level_lambda`, finite for any horizon."""
    _check_horizon(K)
    floor = cert.noise_floor
    if rho_tilde < floor:
        raise ValueError(f"rho_tilde {rho_tilde} below the noise floor {floor}")
    tail = _log(floor) + K * _log_growth(cert)
    return float(np.logaddexp(_log(rho_tilde - floor), tail))


def level_lambda(cert: EisspCertificate, rho_tilde: float, K: int) -> float:
    """``lambda`` whose threshold trajectory starts at ``rho_tilde``.

    The threshold then decays towards ``phi / alpha``, so staying below it
    implies staying below ``rho_tilde``. Requires ``rho_tilde >= phi / alpha``.
    """
    return float(_exp(log_level_lambda(cert, rho_tilde, K)))


def ville_bound(
    process: SupermartingaleProcess,
    v0: float,
    lam: float,
    *,
    log_lam: Optional[float] = None,
) -> ExitBound:
    """``P(max_k W_k < lambda) >= 1 - W_0 / lambda``.

    Pass ``log_lam`` when ``lambda`` itself may overflow, as the matched
    thresholds from :func:`log_lqg_lambda` and :func:`log_level_lambda` do.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    if log_lam is None:
        if math.isinf(lam):
            raise ValueError("lambda overflows a float; pass log_lam")
        log_lam = math.log(lam)
    excess = process.log_w0(v0) - log_lam
    bound = 0.0 if excess >= 0.0 else -math.expm1(excess)
    return ExitBound(
        lambda_=lam, probability_lower_bound=_clamp(bound), kind=BoundKind.VILLE
    )


def exit_probability_bound(
    cert: EisspCertificate,
    x0_norm: float,
    v0: float,
    M: float,
    eta: float,
    K: int,
) -> ExitBound:
    """Lower bound on ``P(V(x_k) stays below its threshold for k <= K)``.

    Uses ``lambda = M |x0|^c + (1 + eta) phi``.
    """
    _check_horizon(K)
    if M <= 0:
        raise ValueError(f"M must be positive, got {M!r}")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta!r}")
    if x0_norm < 0 or v0 < 0:
        raise ValueError("x0_norm and v0 must be >= 0")
    lam = M * x0_norm**cert.c + (1.0 + eta) * cert.phi
    if lam <= 0:
        raise BothZeroError("M |x0|^c + (1 + eta) phi is zero")
    return ville_bound(SupermartingaleProcess(cert, K), v0, lam)


def kushner_bound(
    cert: EisspCertificate, v0: float, rho_tilde: float, K: int
) -> ExitBound:
    """Lower bound on ``P(V(x_k) < rho_tilde for k <= K)`` from a fixed level.

    Case 1 applies when ``rho_tilde >= phi / alpha`` (ties included), case 2
    otherwise.
    """
    _check_horizon(K)
    if not rho_tilde > 0:
        raise ValueError(f"rho_tilde must be positive, got {rho_tilde!r}")
    if v0 < 0:
        raise ValueError(f"v0 must be >= 0, got {v0!r}")
    alpha, phi = cert.alpha, cert.phi
    if rho_tilde >= phi / alpha:
        kind = BoundKind.KUSHNER_CASE_1
        bound = (1.0 - v0 / rho_tilde) * (1.0 - phi / rho_tilde) ** K
    else:
        kind = BoundKind.KUSHNER_CASE_2
        decay = (1.0 - alpha) ** K
        bound = 1.0 - (v0 * decay + phi * (1.0 - decay) / alpha) / rho_tilde
    return ExitBound(
        lambda_=rho_tilde, probability_lower_bound=_clamp(bound), kind=kind
    )


def iss_envelope(cert: EisspCertificate, eta: float, M: float) -> IssEnvelope:
    """Lp envelope ``|x_k| <= M~ alpha~**k |x_0| + gamma`` on the event where
    ``V(x_k)`` stays below ``M |x_0|^c (1 - alpha)**k + (eta + 1/alpha) phi``.
    """
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta!r}")
    if M <= 0:
        raise ValueError(f"M must be positive, got {M!r}")
    z = zeta(cert.c)
    root = 1.0 / cert.c
    return IssEnvelope(
        m_tilde=z * (M / cert.a) ** root,
        alpha_tilde=(1.0 - cert.alpha) ** root,
        gamma_value=z * ((eta + 1.0 / cert.alpha) * cert.phi / cert.a) ** root,
    )
