"""Seeded trajectory simulation and the empirical checks run against it.

Trajectory ``i`` of a batch draws its disturbances from stream ``i`` of the
master seed, so a batch is identical however its chunks are scheduled.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any, List, Optional, Tuple, Union

import numpy as np
from scipy import stats

from isspcert.distributions import sample_stream
from isspcert.executor import Executor, partition, resolve
from isspcert.lyapunov import LyapunovFunction, QuadraticLyapunov
from isspcert.martingale import SupermartingaleProcess
from isspcert.systems import SystemModel
from isspcert.types import (
    DisturbanceSpec,
    HittingTimeReport,
    MartingaleCheckReport,
    MartingaleStep,
    SuccessReport,
)
from isspcert.util import CONFIDENCE, normal_quantile

logger = logging.getLogger(__name__)

DEFAULT_TRAJECTORIES = 1500
CHUNK_SIZE = 250


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Padded trajectory arrays; entries past a trajectory's length are NaN.

    ``states`` is ``(N, K + 1, n)`` and ``lyapunov`` is ``(N, K + 1)``.
    ``lengths[i]`` counts the valid states of trajectory ``i``; a length
    below ``K + 1`` means it left the domain (``domain_exit[i]``).
    """

    states: np.ndarray
    lyapunov: np.ndarray
    lengths: np.ndarray
    domain_exit: np.ndarray
    streams: np.ndarray
    master_seed: int

    @property
    def count(self) -> int:
        return int(self.states.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.states.shape[1] - 1)

    @property
    def valid(self) -> np.ndarray:
        """``(N, K + 1)`` mask of recorded states."""
        return np.arange(self.horizon + 1)[None, :] < self.lengths[:, None]

    def trajectory(self, i: int) -> np.ndarray:
        return self.states[i, : self.lengths[i]]

    def lyapunov_trace(self, i: int) -> np.ndarray:
        return self.lyapunov[i, : self.lengths[i]]

    def w_traces(self, process: SupermartingaleProcess) -> np.ndarray:
        """``W_k`` along every trajectory, NaN past its length."""
        return process.values(self.lyapunov)

    def log_w_traces(self, process: SupermartingaleProcess) -> np.ndarray:
        return process.log_values(self.lyapunov)

    def write_csv(
        self,
        path: Union[str, Path],
        process: Optional[SupermartingaleProcess] = None,
    ) -> None:
        """One row per recorded state: id, k, state components, V, W, exit flag."""
        n = self.states.shape[2]
        w = self.w_traces(process) if process is not None else None
        header = ["trajectory_id", "k", *(f"x{j}" for j in range(n))]
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([*header, "V", "W", "domain_exit"])
            for i in range(self.count):
                for k in range(int(self.lengths[i])):
                    writer.writerow(
                        [
                            i,
                            k,
                            *(repr(float(s)) for s in self.states[i, k]),
                            repr(float(self.lyapunov[i, k])),
                            "" if w is None else repr(float(w[i, k])),
                            int(self.domain_exit[i]),
                        ]
                    )


# =============================================================================
# Simulation
# =============================================================================


def _simulate_chunk(
    system: SystemModel,
    V: LyapunovFunction,
    x0: np.ndarray,
    spec: DisturbanceSpec,
    K: int,
    master_seed: int,
    bounds: Tuple[int, int],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    start, stop = bounds
    m, n = stop - start, x0.size
    states = np.full((m, K + 1, n), np.nan)
    states[:, 0] = x0
    lengths = np.ones(m, dtype=int)
    exits = np.zeros(m, dtype=bool)

    if K > 0:
        draws = np.stack(
            [sample_stream(spec, master_seed, i, K) for i in range(start, stop)]
        )
        alive = np.ones(m, dtype=bool)
        for k in range(K):
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            nxt = system.step(states[idx, k], draws[idx, k])
            inside = np.asarray(system.in_domain(nxt), dtype=bool)
            states[idx[inside], k + 1] = nxt[inside]
            lengths[idx[inside]] += 1
            exits[idx[~inside]] = True
            alive[idx[~inside]] = False

    values = np.full((m, K + 1), np.nan)
    mask = np.arange(K + 1)[None, :] < lengths[:, None]
    values[mask] = np.asarray(V(states[mask]), dtype=float)
    return states, values, lengths, exits


def simulate(
    system: SystemModel,
    x0: Any,
    spec: DisturbanceSpec,
    K: int,
    trajectory_count: int = DEFAULT_TRAJECTORIES,
    master_seed: int = 0,
    *,
    lyapunov: Optional[LyapunovFunction] = None,
    executor: Optional[Executor] = None,
) -> TrajectoryBatch:
    """Roll out ``trajectory_count`` trajectories of length ``K + 1`` from ``x0``.

    Lyapunov traces use ``lyapunov`` (``|x|^2`` when omitted). Trajectories
    leaving the system's domain stop at their last in-domain state.
    """
    if trajectory_count < 1:
        raise ValueError(f"trajectory_count must be >= 1, got {trajectory_count}")
    if K < 0:
        raise ValueError(f"K must be >= 0, got {K}")
    start = np.asarray(x0, dtype=float).reshape(-1)
    if start.size != system.state_dim:
        raise ValueError(
            f"x0 has size {start.size}, system state dimension {system.state_dim}"
        )
    if not bool(system.in_domain(start)):
        raise ValueError("x0 lies outside the system domain")
    V = lyapunov if lyapunov is not None else QuadraticLyapunov(np.eye(start.size))

    run = partial(_simulate_chunk, system, V, start, spec, K, master_seed)
    chunks = resolve(executor).map(run, partition(trajectory_count, CHUNK_SIZE))
    states, values, lengths, exits = (np.concatenate(part) for part in zip(*chunks))
    logger.info(
        "simulate.done system=%s trajectories=%d K=%d exits=%d",
        system.name,
        trajectory_count,
        K,
        int(exits.sum()),
    )
    return TrajectoryBatch(
        states=states,
        lyapunov=values,
        lengths=lengths,
        domain_exit=exits,
        streams=np.arange(trajectory_count),
        master_seed=master_seed,
    )


# =============================================================================
# Empirical checks
# =============================================================================


def wilson_interval(
    successes: int, trials: int, confidence: float = CONFIDENCE
) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    ci = stats.binomtest(successes, trials).proportion_ci(
        confidence_level=confidence, method="wilson"
    )
    return float(ci.low), float(ci.high)


def _report(
    passed: np.ndarray, description: str, confidence: float
) -> SuccessReport:
    n = int(passed.size)
    s = int(passed.sum())
    fraction = s / n
    lo, hi = wilson_interval(s, n, confidence)
    return SuccessReport(
        fraction=fraction,
        wilson_interval=(max(0.0, min(lo, fraction)), min(1.0, max(hi, fraction))),
        successes=s,
        trajectories=n,
        threshold_description=description,
    )


def exceeds_rho(batch: TrajectoryBatch, rho: Any) -> np.ndarray:
    """Per trajectory: did ``V(x_k) > rho_k`` at any recorded step."""
    thresholds = np.asarray(rho, dtype=float)
    if thresholds.shape != (batch.horizon + 1,):
        raise ValueError(
            f"rho has shape {thresholds.shape}, expected ({batch.horizon + 1},)"
        )
    over = np.where(batch.valid, batch.lyapunov > thresholds[None, :], False)
    return np.asarray(over.any(axis=1))


def exceeds_lambda(
    batch: TrajectoryBatch,
    process: SupermartingaleProcess,
    lam: float,
    *,
    log_lam: Optional[float] = None,
) -> np.ndarray:
    """Per trajectory: did ``W_k > lambda`` at any recorded step.

    Compared as logarithms; ``log_lam`` overrides ``lam`` when it may overflow.
    """
    threshold = math.log(lam) if log_lam is None else log_lam
    log_w = batch.log_w_traces(process)
    return np.asarray(np.where(batch.valid, log_w > threshold, False).any(axis=1))



def success_fraction(
    batch: TrajectoryBatch,
    rho: Any,
    *,
    description: str = "V(x_k) <= rho_k for all k",
    confidence: float = CONFIDENCE,
) -> SuccessReport:
    """Fraction staying below ``rho`` at every step; domain exits fail."""
    passed = ~exceeds_rho(batch, rho) & ~batch.domain_exit
    return _report(passed, description, confidence)


def lambda_fraction(
    batch: TrajectoryBatch,
    process: SupermartingaleProcess,
    lam: float,
    *,
    log_lam: Optional[float] = None,
    confidence: float = CONFIDENCE,
) -> SuccessReport:
    """Fraction with ``W_k <= lam`` at every step and no domain exit."""
    over = exceeds_lambda(batch, process, lam, log_lam=log_lam)
    passed = ~over & ~batch.domain_exit
    return _report(passed, f"W_k <= {lam!r} for all k", confidence)


def level_fraction(
    batch: TrajectoryBatch, level: float, *, confidence: float = CONFIDENCE
) -> SuccessReport:
    """Fraction with ``V(x_k) < level`` at every step and no domain exit."""
    over = np.where(batch.valid, batch.lyapunov >= level, False).any(axis=1)
    passed = ~over & ~batch.domain_exit
    return _report(passed, f"V(x_k) < {level!r} for all k", confidence)


def stable_fraction(
    batch: TrajectoryBatch, *, confidence: float = CONFIDENCE
) -> SuccessReport:
    """Fraction of trajectories that never left the domain."""
    return _report(~batch.domain_exit, "no domain exit", confidence)


def empirical_hitting_time(
    batch: TrajectoryBatch, gamma: float, *, confidence: float = CONFIDENCE
) -> HittingTimeReport:
    """First step with ``V <= gamma``; misses are censored at their last step."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma!r}")
    inside = np.where(batch.valid, batch.lyapunov <= gamma, False)
    hit = inside.any(axis=1)
    times = np.where(hit, inside.argmax(axis=1), batch.lengths - 1).astype(float)
    mean = float(times.mean())
    se = float(times.std(ddof=1)) / math.sqrt(times.size) if times.size > 1 else 0.0
    half = normal_quantile(confidence) * se
    return HittingTimeReport(
        gamma=gamma,
        mean=mean,
        max=float(times.max()),
        confidence_interval=(mean - half, mean + half),
        hit_count=int(hit.sum()),
        censored_count=int((~hit).sum()),
        domain_exit_count=int((~hit & batch.domain_exit).sum()),
    )


def empirical_martingale_check(
    batch: TrajectoryBatch,
    process: SupermartingaleProcess,
    *,
    sigmas: float = 3.0,
) -> MartingaleCheckReport:
    """Mean of ``W_{k+1} - W_k`` across trajectories, flagged above ``sigmas`` SE."""
    if process.horizon < batch.horizon:
        raise ValueError(
            f"process horizon {process.horizon} shorter than batch {batch.horizon}"
        )
    w = batch.w_traces(process)
    steps: List[MartingaleStep] = []
    for k in range(batch.horizon):
        rows = batch.lengths > k + 1
        inc = w[rows, k + 1] - w[rows, k]
        count = int(inc.size)
        if count == 0:
            continue
        mean = float(inc.mean())
        se = float(inc.std(ddof=1)) / math.sqrt(count) if count > 1 else 0.0
        tol = 1e-12 * (1.0 + float(np.abs(w[rows, k]).max()))
        steps.append(
            MartingaleStep(
                k=k,
                mean_increment=mean,
                standard_error=se,
                count=count,
                flagged=mean > sigmas * se + tol,
            )
        )
    report = MartingaleCheckReport(sigmas=sigmas, steps=steps)
    if report.flagged_steps:
        logger.warning("martingale.flagged steps=%s", report.flagged_steps)
    return report
