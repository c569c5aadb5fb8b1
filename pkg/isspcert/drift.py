"""Expected hitting-time bounds for sublevel sets ``{V <= gamma}``.

With a drift function ``h`` such that ``E[V(x+)] - V(x) <= -h(V(x))`` outside
the target set, the expected first entry time from ``V(x_0) = v0`` is at
most ``gamma / h(gamma) + integral_gamma^v0 1/h``. For an E-ISSp
certificate ``h(v) = alpha v - phi``, which gives a closed form.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable

import numpy as np

from isspcert.types import (
    EisspCertificate,
    HittingTimeBound,
    HittingTimeForm,
    IsspError,
)
from isspcert.util import simpson_doubling

logger = logging.getLogger(__name__)

MIN_QUADRATURE_STEPS = 16


class DriftNotPositiveError(IsspError, ValueError):
    """The drift function is not positive on the integration interval."""


def recurrence_threshold(cert: EisspCertificate) -> float:
    """``phi / alpha``; every sublevel set above it is recurrent."""
    return cert.noise_floor


def hitting_time_bound_linear(
    cert: EisspCertificate, v0: float, gamma: float
) -> HittingTimeBound:
    """Closed-form bound for ``h(v) = alpha v - phi``.

    Starts strictly inside the target set (``v0 < gamma``) return 0; a start
    on its boundary evaluates the formula, whose log term then vanishes.
    """
    alpha, phi = cert.alpha, cert.phi
    if not gamma > phi / alpha:
        raise DriftNotPositiveError(
            f"gamma={gamma} must exceed phi/alpha={phi / alpha}"
        )
    if v0 < gamma:
        value = 0.0
    else:
        margin = alpha * gamma - phi
        value = gamma / margin + math.log((alpha * v0 - phi) / margin) / alpha
    return HittingTimeBound(
        gamma=gamma,
        expected_hitting_time_upper=value,
        form=HittingTimeForm.CLOSED_FORM_LINEAR,
    )


def hitting_time_bound_variable(
    h: Callable[[float], float],
    gamma: float,
    v0: float,
    quadrature_steps: int = MIN_QUADRATURE_STEPS,
) -> HittingTimeBound:
    """Bound for a general increasing drift ``h`` via composite Simpson."""
    if quadrature_steps < MIN_QUADRATURE_STEPS:
        raise ValueError(
            f"quadrature_steps must be >= {MIN_QUADRATURE_STEPS}, "
            f"got {quadrature_steps}"
        )
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    if v0 < gamma:
        return HittingTimeBound(
            gamma=gamma,
            expected_hitting_time_upper=0.0,
            form=HittingTimeForm.QUADRATURE,
            quadrature_steps=quadrature_steps,
        )

    h_vec = np.vectorize(h, otypes=[float])

    def reciprocal(nodes: np.ndarray) -> np.ndarray:
        values = h_vec(nodes)
        if not bool(np.all(values > 0.0)):
            bad = float(nodes[np.argmax(~(values > 0.0))])
            raise DriftNotPositiveError(f"h is not positive at v={bad:.6g}")
        return 1.0 / values

    h_gamma = float(h(gamma))
    if not h_gamma > 0.0:
        raise DriftNotPositiveError(f"h is not positive at gamma={gamma:.6g}")
    steps = quadrature_steps + quadrature_steps % 2
    integral, used = simpson_doubling(reciprocal, gamma, v0, steps=steps)
    logger.debug("hitting_time.quadrature steps=%d integral=%.9g", used, integral)
    return HittingTimeBound(
        gamma=gamma,
        expected_hitting_time_upper=gamma / h_gamma + integral,
        form=HittingTimeForm.QUADRATURE,
        quadrature_steps=used,
    )
