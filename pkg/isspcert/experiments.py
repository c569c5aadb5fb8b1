"""Named experiments: configuration, the experiment bodies and their outputs.

Each experiment takes an :class:`ExperimentConfig` and an executor and returns
an :class:`ExperimentOutcome` holding the JSON report, CSV tables, the bound
comparison rows and any soundness violations (an analytic bound above the
empirical interval). Outputs depend only on the config, never on timing or
worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from isspcert.drift import (
    hitting_time_bound_linear,
    hitting_time_bound_variable,
    recurrence_threshold,
)
from isspcert.executor import Executor
from isspcert.lyapunov import (
    DEFAULT_DRIFT_SAMPLES,
    QuadraticLyapunov,
    certify_eissp,
    solve_discrete_lyapunov,
)
from isspcert.martingale import (
    SupermartingaleProcess,
    exit_probability_bound,
    iss_envelope,
    kushner_bound,
    level_lambda,
    log_level_lambda,
    log_lqg_lambda,
    lqg_lambda,
    rho_trajectory,
    ville_bound,
)
from isspcert.montecarlo import (
    DEFAULT_TRAJECTORIES,
    TrajectoryBatch,
    empirical_hitting_time,
    empirical_martingale_check,
    exceeds_lambda,
    exceeds_rho,
    lambda_fraction,
    level_fraction,
    simulate,
    stable_fraction,
    success_fraction,
)
from isspcert.optimizer import (
    DEFAULT_SHELL_SAMPLES,
    level_set_bound,
    max_tolerable_disturbance,
    max_tolerable_disturbance_iss,
    truncated_gaussian_family,
)
from isspcert.runner import experiment
from isspcert.systems import SYSTEMS, SystemModel, build_system, double_integrator_lqg
from isspcert.types import (
    SCHEMA_VERSION,
    BoundReport,
    Counterexample,
    DisturbanceSpec,
    EisspCertificate,
    IsspError,
    RegionKind,
    SampleRegion,
)

logger = logging.getLogger(__name__)

Table = Tuple[List[str], List[List[Any]]]


class ConfigError(IsspError, ValueError):
    """The configuration is well-formed but cannot be run as given."""


class CertificationError(IsspError):
    """No certificate could be established for the configured system."""

    def __init__(self, message: str, counterexample: Optional[Counterexample] = None):
        super().__init__(message)
        self.counterexample = counterexample


# =============================================================================
# Configuration
# =============================================================================


class ExperimentName(str, Enum):
    SIMULATE = "simulate"
    CERTIFY = "certify"
    BOUNDS = "bounds"
    HITTING_TIME = "hitting-time"
    SWEEP_M_ETA = "sweep-M-eta"
    REPRODUCE_LQG = "reproduce-lqg"
    REPRODUCE_WALKER_SURROGATE = "reproduce-walker-surrogate"


class SystemBlock(BaseModel):
    """A registered system name and the keyword parameters of its factory."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    params: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known(cls, v: str) -> str:
        if v not in SYSTEMS:
            raise ValueError(f"unknown system {v!r}; choose from {sorted(SYSTEMS)}")
        return v


class ExperimentConfig(BaseModel):
    """Everything one run needs. Unknown keys are rejected.

    Blocks left out fall back to the experiment's own defaults: the scalar
    system ``x+ = 0.9 x + d`` for the generic experiments, the LQR double
    integrator for ``reproduce-lqg`` and the walker surrogate for
    ``reproduce-walker-surrogate``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentName
    system: Optional[SystemBlock] = None
    disturbance: Optional[DisturbanceSpec] = None
    lyapunov: Optional[List[List[float]]] = None
    certificate: Optional[EisspCertificate] = None
    x0: Optional[List[float]] = None
    horizon: int = Field(default=100, ge=0)
    trajectories: int = Field(default=DEFAULT_TRAJECTORIES, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    output: str = "out"
    export_trajectories: bool = True

    target_alpha: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    region: Optional[SampleRegion] = None
    drift_samples: int = Field(default=DEFAULT_DRIFT_SAMPLES, ge=2)

    M: List[float] = Field(default_factory=lambda: [5.0, 20.0, 100.0])
    eta: List[float] = Field(default_factory=lambda: [0.0])
    M_range: Tuple[float, float] = (1.0, 1000.0)
    M_points: int = Field(default=25, ge=2)
    target_probability: float = Field(default=0.9, gt=0.0, lt=1.0)
    gamma: Optional[float] = Field(default=None, gt=0.0)
    rho_tilde: Optional[float] = Field(default=None, gt=0.0)

    k_conv: float = Field(default=0.05, gt=0.0, lt=1.0)
    chi_grid: List[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    delta_bracket: Tuple[float, float] = (0.0, 0.5)
    shell_samples: int = Field(default=DEFAULT_SHELL_SAMPLES, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if not self.M or min(self.M) <= 0.0:
            raise ValueError("M must be a non-empty list of positive values")
        if not self.eta or min(self.eta) < 0.0:
            raise ValueError("eta must be a non-empty list of values >= 0")
        lo, hi = self.M_range
        if not 0.0 < lo < hi:
            raise ValueError(f"M_range needs 0 < lo < hi, got {self.M_range}")
        if not self.chi_grid or min(self.chi_grid) <= 0.0:
            raise ValueError("chi_grid must be a non-empty list of positive values")
        d_lo, d_hi = self.delta_bracket
        if not 0.0 <= d_lo < d_hi:
            raise ValueError(
                f"delta_bracket needs 0 <= lo < hi, got {self.delta_bracket}"
            )
        return self


# =============================================================================
# Outcome
# =============================================================================


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_table(path: Path, header: List[str], rows: List[List[Any]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


BOUND_COLUMNS = [
    "label",
    "kind",
    "lambda",
    "bound",
    "M",
    "eta",
    "K",
    "rho_tilde",
    "fraction",
    "wilson_lo",
    "wilson_hi",
    "sound",
]


@dataclass
class ExperimentOutcome:
    """What an experiment produced; :meth:`write` puts it on disk."""

    report: Dict[str, Any]
    bounds: List[BoundReport] = field(default_factory=list)
    tables: Dict[str, Table] = field(default_factory=dict)
    headline: Dict[str, Any] = field(default_factory=dict)
    batch: Optional[TrajectoryBatch] = None
    process: Optional[SupermartingaleProcess] = None
    violations: List[str] = field(default_factory=list)

    def bound_rows(self) -> List[List[Any]]:
        rows = []
        for b in self.bounds:
            emp = b.empirical
            rows.append(
                [
                    b.label,
                    b.kind.value,
                    b.lambda_,
                    b.bound,
                    b.parameters.get("M"),
                    b.parameters.get("eta"),
                    b.parameters.get("K"),
                    b.parameters.get("rho_tilde"),
                    None if emp is None else emp.fraction,
                    None if emp is None else emp.wilson_interval[0],
                    None if emp is None else emp.wilson_interval[1],
                    b.sound,
                ]
            )
        return rows

    def document(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            **self.report,
            "bounds": [_dump(b) for b in self.bounds],
            "violations": list(self.violations),
        }

    def write(self, out_dir: Union[str, Path]) -> List[Path]:
        """Write ``report.json`` plus every table; returns the paths written."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = [out / "report.json"]
        text = json.dumps(self.document(), sort_keys=True, indent=2)
        written[0].write_text(text + "\n")
        if self.bounds:
            written.append(out / "bounds.csv")
            _write_table(written[-1], BOUND_COLUMNS, self.bound_rows())
        for name, (header, rows) in sorted(self.tables.items()):
            written.append(out / name)
            _write_table(written[-1], header, rows)
        if self.batch is not None:
            written.append(out / "trajectories.csv")
            self.batch.write_csv(written[-1], self.process)
        return written


def _dump(model: BaseModel) -> Dict[str, Any]:
    return model.model_dump(mode="json", by_alias=True)


def _violations(bounds: List[BoundReport]) -> List[str]:
    out = []
    for b in bounds:
        if not b.sound:
            assert b.empirical is not None
            out.append(
                f"{b.label or b.kind.value}: bound {b.bound!r} exceeds wilson upper "
                f"{b.empirical.wilson_interval[1]!r} "
                f"({', '.join(f'{k}={v!r}' for k, v in sorted(b.parameters.items()))})"
            )
    return out


# =============================================================================
# Shared setup
# =============================================================================


_SCALAR = SystemBlock(name="scalar-linear", params={"a": 0.9})
_LQG = SystemBlock(name="double-integrator-lqg")
_WALKER = SystemBlock(name="walker-surrogate")
# Far enough out that M |x0|^2 clears W_0 for the largest default M.
_LQG_START = 5.0


@dataclass
class _Setup:
    system: SystemModel
    V: QuadraticLyapunov
    spec: DisturbanceSpec
    certificate: Optional[EisspCertificate]


def _default_spec(dim: int) -> DisturbanceSpec:
    return DisturbanceSpec.gaussian(np.zeros(dim), 0.01 * np.eye(dim))


def _setup(config: ExperimentConfig, default: SystemBlock) -> _Setup:
    block = config.system or default
    certificate: Optional[EisspCertificate] = None
    try:
        if block.name == "double-integrator-lqg":
            params = dict(block.params)
            spec = config.disturbance or _default_spec(4)
            system, V, certificate = double_integrator_lqg(
                params.pop("dt", 0.1),
                params.pop("Q", None),
                params.pop("R", None),
                spec,
            )
            if params:
                raise ConfigError(
                    f"unknown double-integrator parameters {sorted(params)}"
                )
        else:
            system = build_system(block.name, block.params)
            spec = config.disturbance or _default_spec(system.disturbance_dim)
            V = solve_discrete_lyapunov(system.jacobian(), np.eye(system.state_dim))
    except TypeError as e:
        raise ConfigError(f"system {block.name!r}: {e}") from e

    if spec.dim != system.disturbance_dim:
        raise ConfigError(
            f"disturbance dimension {spec.dim} does not match system "
            f"{block.name!r} ({system.disturbance_dim})"
        )
    if config.lyapunov is not None:
        V = QuadraticLyapunov(np.asarray(config.lyapunov, dtype=float))
        certificate = None
        if V.dim != system.state_dim:
            raise ConfigError(
                f"lyapunov P is {V.dim}x{V.dim}, state is {system.state_dim}"
            )
    if config.certificate is not None:
        certificate = config.certificate
    return _Setup(system, V, spec, certificate)


def _initial_state(
    config: ExperimentConfig, system: SystemModel, default: Optional[np.ndarray] = None
) -> np.ndarray:
    if config.x0 is not None:
        x0 = np.asarray(config.x0, dtype=float)
        if x0.size != system.state_dim:
            raise ConfigError(
                f"x0 has {x0.size} entries, system state {system.state_dim}"
            )
        return x0
    return np.ones(system.state_dim) if default is None else default


def _default_region(system: SystemModel, radius: float, count: int) -> SampleRegion:
    if system.domain_radius is not None:
        radius = min(radius, system.domain_radius * (1.0 - 1e-9))
    return SampleRegion(
        kind=RegionKind.BALL, dimension=system.state_dim, radius=radius, count=count
    )


def _certify(
    config: ExperimentConfig,
    setup: _Setup,
    spec: DisturbanceSpec,
    region: SampleRegion,
    alpha: float,
    executor: Executor,
) -> EisspCertificate:
    result = certify_eissp(
        setup.system,
        setup.V,
        spec,
        region,
        alpha,
        config.drift_samples,
        config.seed,
        executor=executor,
    )
    if isinstance(result, Counterexample):
        raise CertificationError(
            f"drift condition fails at state {result.state} "
            f"(needs phi {result.required_phi:.6g} > budget {result.phi_budget:.6g})",
            result,
        )
    return result


def _certificate(
    config: ExperimentConfig, setup: _Setup, x0: np.ndarray, executor: Executor
) -> EisspCertificate:
    """The configured certificate, the system's own, or a sampled one."""
    if setup.certificate is not None:
        return setup.certificate
    # V from the discrete Lyapunov equation with Q = I decreases by |x|^2 >= V / b.
    alpha = config.target_alpha or min(1.0 / setup.V.b, 0.5)
    radius = 2.0 * max(float(np.linalg.norm(x0)), 1.0)
    region = config.region or _default_region(
        setup.system, radius, DEFAULT_SHELL_SAMPLES
    )
    return _certify(config, setup, setup.spec, region, alpha, executor)


def _simulate(
    config: ExperimentConfig,
    setup: _Setup,
    x0: np.ndarray,
    executor: Executor,
    spec: Optional[DisturbanceSpec] = None,
) -> TrajectoryBatch:
    return simulate(
        setup.system,
        x0,
        spec or setup.spec,
        config.horizon,
        config.trajectories,
        config.seed,
        lyapunov=setup.V,
        executor=executor,
    )


def _base_report(
    config: ExperimentConfig, setup: _Setup, x0: np.ndarray
) -> Dict[str, Any]:
    return {
        "experiment": config.experiment.value,
        "config": config.model_dump(mode="json", exclude={"output"}),
        "system": setup.system.name,
        "x0": [float(v) for v in x0],
        "v0": float(setup.V(x0)),
        "lyapunov": setup.V.to_dict(),
    }


# =============================================================================
# Experiments
# =============================================================================


@experiment(ExperimentName.SIMULATE.value)
def run_simulate(config: ExperimentConfig, executor: Executor) -> ExperimentOutcome:
    """Roll out trajectories and report how many stayed in the domain."""
    setup = _setup(config, _SCALAR)
    x0 = _initial_state(config, setup.system)
    batch = _simulate(config, setup, x0, executor)
    stable = stable_fraction(batch)
    complete = batch.lengths == batch.horizon + 1
    final = batch.lyapunov[complete, -1]
    report = _base_report(config, setup, x0)
    report.update(
        {
            "domain_exits": int(batch.domain_exit.sum()),
            "stable": _dump(stable),
            "final_lyapunov_mean": float(final.mean()) if final.size else None,
            "final_lyapunov_max": float(final.max()) if final.size else None,
        }
    )
    return ExperimentOutcome(
        report=report,
        headline={"stable_fraction": stable.fraction},
        batch=batch if config.export_trajectories else None,
    )


@experiment(ExperimentName.CERTIFY.value)
def run_certify(config: ExperimentConfig, executor: Executor) -> ExperimentOutcome:
    """Sample the drift over a sample region; report a certificate or counterexample."""
    setup = _setup(config, _SCALAR)
    x0 = _initial_state(config, setup.system)
    alpha = config.target_alpha or min(1.0 / setup.V.b, 0.5)
    region = config.region or _default_region(
        setup.system, 2.0 * max(float(np.linalg.norm(x0)), 1.0), DEFAULT_SHELL_SAMPLES
    )
    result = certify_eissp(
        setup.system,
        setup.V,
        setup.spec,
        region,
        alpha,
        config.drift_samples,
        config.seed,
        executor=executor,
    )
    report = _base_report(config, setup, x0)
    report["region"] = _dump(region)
    if isinstance(result, Counterexample):
        report["certificate"] = None
        report["counterexample"] = _dump(result)
        headline: Dict[str, Any] = {"certified": False, "state": result.state}
    else:
        report["certificate"] = _dump(result)
        report["counterexample"] = None
        report["recurrence_threshold"] = recurrence_threshold(result)
        headline = {"certified": True, "alpha": result.alpha, "phi": result.phi}
    return ExperimentOutcome(report=report, headline=headline)


@experiment(ExperimentName.BOUNDS.value)
def run_bounds(config: ExperimentConfig, executor: Executor) -> ExperimentOutcome:
    """Exit-probability (and optional Kushner) bounds against simulated fractions."""
    setup = _setup(config, _SCALAR)
    x0 = _initial_state(config, setup.system)
    cert = _certificate(config, setup, x0, executor)
    K = config.horizon
    v0, x0_norm = float(setup.V(x0)), float(np.linalg.norm(x0))
    process = SupermartingaleProcess(cert, K)
    batch = _simulate(config, setup, x0, executor)

    bounds: List[BoundReport] = []
    envelopes: List[Dict[str, Any]] = []
    for M in config.M:
        for eta in config.eta:
            exit_bound = exit_probability_bound(cert, x0_norm, v0, M, eta, K)
            bounds.append(
                BoundReport(
                    kind=exit_bound.kind,
                    label="exit",
                    lambda_=exit_bound.lambda_,
                    bound=exit_bound.probability_lower_bound,
                    parameters={"M": M, "eta": eta, "K": K},
                    empirical=lambda_fraction(batch, process, exit_bound.lambda_),
                )
            )
            envelopes.append({"M": M, "eta": eta, **_dump(iss_envelope(cert, eta, M))})
    if config.rho_tilde is not None:
        kb = kushner_bound(cert, v0, config.rho_tilde, K)
        bounds.append(
            BoundReport(
                kind=kb.kind,
                label="level",
                lambda_=kb.lambda_,
                bound=kb.probability_lower_bound,
                parameters={"K": K, "rho_tilde": config.rho_tilde},
                empirical=level_fraction(batch, config.rho_tilde),
            )
        )
        if config.rho_tilde >= cert.noise_floor:
            level = ville_bound(
                process,
                v0,
                level_lambda(cert, config.rho_tilde, K),
                log_lam=log_level_lambda(cert, config.rho_tilde, K),
            )
            bounds.append(
                BoundReport(
                    kind=level.kind,
                    label="level_ville",
                    lambda_=level.lambda_,
                    bound=level.probability_lower_bound,
                    parameters={"K": K, "rho_tilde": config.rho_tilde},
                    empirical=level_fraction(batch, config.rho_tilde),
                )
            )

    check = empirical_martingale_check(batch, process)
    report = _base_report(config, setup, x0)
    report.update(
        {
            "certificate": _dump(cert),
            "envelopes": envelopes,
            "martingale_check": _dump(check),
            "domain_exits": int(batch.domain_exit.sum()),
        }
    )
    return ExperimentOutcome(
        report=report,
        bounds=bounds,
        headline={"flagged_steps": check.flagged_steps},
        batch=batch if config.export_trajectories else None,
        process=process,
        violations=_violations(bounds),
    )


@experiment(ExperimentName.HITTING_TIME.value)
def run_hitting_time(config: ExperimentConfig, executor: Executor) -> ExperimentOutcome:
    """Expected entry time into ``{V <= gamma}``: bounds and empirical mean."""
    setup = _setup(config, _SCALAR)
    x0 = _initial_state(config, setup.system)
    cert = _certificate(config, setup, x0, executor)
    v0 = float(setup.V(x0))
    gamma = config.gamma
    if gamma is None:
        gamma = 2.0 * cert.noise_floor if cert.phi > 0.0 else 0.1 * v0
    if not gamma > 0.0:
        raise ConfigError("gamma defaults to 0.1 V(x0), which is 0 here; set gamma")

    closed = hitting_time_bound_linear(cert, v0, gamma)
    quadrature = hitting_time_bound_variable(
        lambda v: cert.alpha * v - cert.phi, gamma, v0
    )
    bound = closed.bound
    rel = abs(quadrature.bound - bound) / max(bound, 1e-300)
    batch = _simulate(config, setup, x0, executor)
    empirical = empirical_hitting_time(batch, gamma)

    violations = []
    if empirical.confidence_interval[0] > bound * (1.0 + 1e-12):
        violations.append(
            f"hitting time: empirical mean interval {empirical.confidence_interval} "
            f"lies above the bound {bound!r}"
        )
    if bound > 0.0 and rel > 1e-6:
        violations.append(f"hitting time: quadrature differs by {rel:.3e} relative")

    report = _base_report(config, setup, x0)
    report.update(
        {
            "certificate": _dump(cert),
            "recurrence_threshold": recurrence_threshold(cert),
            "closed_form": _dump(closed),
            "quadrature": _dump(quadrature),
            "quadrature_relative_error": rel,
            "empirical": _dump(empirical),
        }
    )
    return ExperimentOutcome(
        report=report,
        headline={
            "gamma": gamma,
            "bound": bound,
            "empirical_mean": empirical.mean,
            "empirical_max": empirical.max,
            "censored": empirical.censored_count,
        },
        batch=batch if config.export_trajectories else None,
        process=SupermartingaleProcess(cert, config.horizon),
        violations=violations,
    )


@experiment(ExperimentName.SWEEP_M_ETA.value)
def run_sweep(config: ExperimentConfig, executor: Executor) -> ExperimentOutcome:
    """Exit bound over a log grid of ``M`` for every configured ``eta``."""
    setup = _setup(config, _SCALAR)
    x0 = _initial_state(config, setup.system)
    cert = _certificate(config, setup, x0, executor)
    K = config.horizon
    v0, x0_norm = float(setup.V(x0)), float(np.linalg.norm(x0))
    grid = np.geomspace(*config.M_range, num=config.M_points)

    rows: List[List[Any]] = []
    smallest: Dict[str, Optional[float]] = {}
    for eta in config.eta:
        reached: Optional[float] = None
        for M in grid:
            b = exit_probability_bound(cert, x0_norm, v0, float(M), eta, K)
            env = iss_envelope(cert, eta, float(M))
            rows.append(
                [
                    float(M),
                    eta,
                    b.lambda_,
                    b.probability_lower_bound,
                    env.m_tilde,
                    env.gamma_value,
                ]
            )
            hit = b.probability_lower_bound >= config.target_probability
            if reached is None and hit:
                reached = float(M)
        smallest[repr(float(eta))] = reached

    report = _base_report(config, setup, x0)
    report.update(
        {
            "certificate": _dump(cert),
            "target_probability": config.target_probability,
            "smallest_M": smallest,
        }
    )
    header = ["M", "eta", "lambda", "bound", "m_tilde", "gamma_value"]
    return ExperimentOutcome(
        report=report,
        tables={"sweep.csv": (header, rows)},
        headline={"smallest_M": smallest},
    )


@experiment(ExperimentName.REPRODUCE_LQG.value)
def run_reproduce_lqg(
    config: ExperimentConfig, executor: Executor
) -> ExperimentOutcome:
    """Ville bounds on the LQR double integrator against 1500-style batches.

    For each ``M`` the threshold trajectory ``rho_k`` and its matched
    ``lambda`` are checked to flag exactly the same trajectories.
    The exit rows use ``lambda = M |x0|^2 + (1 + eta) phi``, which stays
    below ``W_0`` unless ``M`` exceeds ``V(x0) / |x0|^2`` by a margin, so only
    the largest default ``M`` gives an informative exit row.
    """
    setup = _setup(config, _LQG)
    start = np.full(setup.system.state_dim, _LQG_START)
    x0 = _initial_state(config, setup.system, start)
    cert = _certificate(config, setup, x0, executor)
    K = config.horizon
    v0, x0_norm = float(setup.V(x0)), float(np.linalg.norm(x0))
    process = SupermartingaleProcess(cert, K)
    batch = _simulate(config, setup, x0, executor)

    bounds: List[BoundReport] = []
    mismatches: Dict[str, int] = {}
    strict: Dict[str, bool] = {}
    violations: List[str] = []
    for M in config.M:
        rho = rho_trajectory(cert, M, v0, K)
        lam, log_lam = lqg_lambda(cert, M, v0, K), log_lqg_lambda(cert, M, v0, K)
        ville = ville_bound(process, v0, lam, log_lam=log_lam)
        empirical = success_fraction(batch, rho)
        bounds.append(
            BoundReport(
                kind=ville.kind,
                label="rho_k",
                lambda_=lam,
                bound=ville.probability_lower_bound,
                parameters={"M": M, "eta": 0.0, "K": K},
                empirical=empirical,
            )
        )
        differ = int(
            np.count_nonzero(
                exceeds_lambda(batch, process, lam, log_lam=log_lam)
                != exceeds_rho(batch, rho)
            )
        )
        mismatches[repr(M)] = differ
        strict[repr(M)] = ville.probability_lower_bound < empirical.fraction
        if differ:
            violations.append(
                f"rho_k: {differ} trajectories disagree between W_k > lambda "
                f"and V_k > rho_k at M={M!r}"
            )
        exit_bound = exit_probability_bound(cert, x0_norm, v0, M, config.eta[0], K)
        bounds.append(
            BoundReport(
                kind=exit_bound.kind,
                label="exit",
                lambda_=exit_bound.lambda_,
                bound=exit_bound.probability_lower_bound,
                parameters={"M": M, "eta": config.eta[0], "K": K},
                empirical=lambda_fraction(batch, process, exit_bound.lambda_),
            )
        )
    violations = _violations(bounds) + violations

    check = empirical_martingale_check(batch, process)
    report = _base_report(config, setup, x0)
    report.update(
        {
            "certificate": _dump(cert),
            "indicator_mismatches": mismatches,
            "bound_strictly_below_fraction": strict,
            "martingale_check": _dump(check),
            "domain_exits": int(batch.domain_exit.sum()),
        }
    )
    return ExperimentOutcome(
        report=report,
        bounds=bounds,
        headline={"flagged_steps": check.flagged_steps},
        batch=batch if config.export_trajectories else None,
        process=process,
        violations=violations,
    )


@experiment(ExperimentName.REPRODUCE_WALKER_SURROGATE.value)
def run_reproduce_walker(
    config: ExperimentConfig, executor: Executor
) -> ExperimentOutcome:
    """Robustness pipeline on the walker surrogate.

    Finds the largest tolerable disturbance scale, certifies the drift at that
    scale on the ball around the certified shell, and compares the Kushner
    bound at the resulting level with the simulated fractions of trajectories
    that stay up and that stay inside the level set.

    A shell only counts when the certified ball fits strictly inside the
    walker's domain and the level ``rho~`` clears the certificate's noise
    floor ``phi / alpha``, so the Kushner bound is its first case.
    """
    setup = _setup(config, _WALKER)
    system, V = setup.system, setup.V
    K = config.horizon
    region_scale = math.sqrt((V.b + config.k_conv) / V.a)
    alpha = config.target_alpha or config.k_conv / V.b
    family = truncated_gaussian_family(system.disturbance_dim)
    certified: Dict[Tuple[float, float], EisspCertificate] = {}

    def certify_shell(chi: float, delta: float) -> Optional[EisspCertificate]:
        radius = region_scale * chi * delta
        region = config.region or _default_region(system, radius, config.shell_samples)
        try:
            return _certify(config, setup, family(delta), region, alpha, executor)
        except CertificationError:
            return None

    def clears_noise_floor(chi: float, delta: float) -> bool:
        cert = certify_shell(chi, delta)
        if cert is None:
            return False
        rho_tilde = level_set_bound(chi, delta, V, cert, config.k_conv, K)
        if rho_tilde < cert.noise_floor:
            logger.debug(
                "walker.reject chi=%g delta=%.6g rho_tilde=%.6g floor=%.6g",
                chi,
                delta,
                rho_tilde,
                cert.noise_floor,
            )
            return False
        certified[(chi, delta)] = cert
        return True

    robust = max_tolerable_disturbance(
        system,
        V,
        config.k_conv,
        config.chi_grid,
        config.delta_bracket,
        config.shell_samples,
        config.drift_samples,
        config.seed,
        executor=executor,
        region_scale=region_scale,
        accept=clears_noise_floor,
    )
    if not robust.feasible or robust.chi_star is None or robust.delta_star == 0.0:
        raise CertificationError(
            f"no disturbance scale in {config.delta_bracket} "
            f"meets k_conv={config.k_conv} with rho_tilde above the noise floor"
        )
    chi, delta = robust.chi_star, robust.delta_star
    spec = family(delta)
    cert = certified.get((chi, delta)) or certify_shell(chi, delta)
    if cert is None:  # pragma: no cover
        raise CertificationError(f"certificate lost at chi={chi} delta={delta}")
    region = config.region or _default_region(
        system, region_scale * chi * delta, config.shell_samples
    )

    rho_tilde = level_set_bound(chi, delta, V, cert, config.k_conv, K)
    robust = robust.model_copy(update={"rho_tilde": rho_tilde})
    x0 = _initial_state(config, system, np.zeros(system.state_dim))
    v0 = float(V(x0))
    kushner = kushner_bound(cert, v0, rho_tilde, K)
    batch = _simulate(config, setup, x0, executor, spec)

    bounds = [
        BoundReport(
            kind=kushner.kind,
            label=label,
            lambda_=rho_tilde,
            bound=kushner.probability_lower_bound,
            parameters={"K": K, "rho_tilde": rho_tilde},
            empirical=empirical,
        )
        for label, empirical in (
            ("stable", stable_fraction(batch)),
            ("inside_rho_tilde", level_fraction(batch, rho_tilde)),
        )
    ]
    iss = max_tolerable_disturbance_iss(
        system,
        V,
        config.k_conv,
        config.chi_grid,
        config.delta_bracket,
        config.shell_samples,
        config.seed,
        executor=executor,
        region_scale=region_scale,
    )

    report = _base_report(config, setup, x0)
    report.update(
        {
            "robustness": _dump(robust),
            "iss_robustness": _dump(iss),
            "disturbance": _dump(spec),
            "region": _dump(region),
            "certificate": _dump(cert),
            "rho_tilde": rho_tilde,
            "region_scale": region_scale,
            "domain_exits": int(batch.domain_exit.sum()),
        }
    )
    logger.info(
        "walker.done delta_star=%.6g iss_delta_star=%.6g rho_tilde=%.6g bound=%.6g",
        delta,
        iss.delta_star,
        rho_tilde,
        kushner.probability_lower_bound,
    )
    return ExperimentOutcome(
        report=report,
        bounds=bounds,
        headline={
            "delta_star": delta,
            "chi_star": chi,
            "iss_delta_star": iss.delta_star,
            "rho_tilde": rho_tilde,
            "kushner_bound": kushner.probability_lower_bound,
        },
        batch=batch if config.export_trajectories else None,
        violations=_violations(bounds),
    )
