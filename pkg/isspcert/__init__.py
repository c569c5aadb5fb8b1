"""isspcert: certify exponential input-to-state stability in probability.

Builds quadratic Lyapunov certificates for discrete-time stochastic systems,
turns them into a nonnegative supermartingale, derives finite-horizon exit
probability and hitting-time bounds, and checks every bound against seeded
Monte Carlo simulation.
"""

from __future__ import annotations

from isspcert.distributions import (
    UnboundedSupportError,
    covariance_trace,
    lp_norm,
    sample,
    sample_stream,
)
from isspcert.drift import (
    DriftNotPositiveError,
    hitting_time_bound_linear,
    hitting_time_bound_variable,
    recurrence_threshold,
)
from isspcert.executor import ExecutionMode, Executor
from isspcert.experiments import (
    CertificationError,
    ConfigError,
    ExperimentConfig,
    ExperimentName,
    ExperimentOutcome,
)
from isspcert.lyapunov import (
    DegenerateCertificateError,
    EmptyRegionError,
    PreconditionError,
    QuadraticLyapunov,
    SolverFailureError,
    UnstableLinearizationError,
    additive_lift,
    certify_eissp,
    certify_iss,
    drift_expectation,
    lqg_certificate,
    solve_dare,
    solve_discrete_lyapunov,
)
from isspcert.martingale import (
    BothZeroError,
    SupermartingaleProcess,
    exit_probability_bound,
    iss_envelope,
    kushner_bound,
    rho_trajectory,
    supermartingale_gap,
    ville_bound,
    w_value,
)
from isspcert.montecarlo import (
    TrajectoryBatch,
    empirical_hitting_time,
    empirical_martingale_check,
    simulate,
    success_fraction,
)
from isspcert.observers import (
    Eventful,
    LoggingReporter,
    MarginMeter,
    Meter,
    MetricsMeter,
    Observable,
    Reporter,
    SoundnessMeter,
    TimingMeter,
    observe,
)
from isspcert.optimizer import level_set_bound, max_tolerable_disturbance
from isspcert.runner import ExperimentContext, ExperimentRunner
from isspcert.systems import (
    DomainExitError,
    SystemModel,
    double_integrator_lqg,
    scalar_linear,
    walker_surrogate,
)
from isspcert.types import (
    Counterexample,
    DimensionMismatchError,
    DisturbanceSpec,
    DriftEstimate,
    EisspCertificate,
    ExitBound,
    HittingTimeBound,
    IsspError,
    IssEnvelope,
    LpNorm,
    RobustnessResult,
    SampleRegion,
    SuccessReport,
)
from isspcert.util import symmetric_eigen_extremes, zeta

__version__ = "0.1.0"

__all__ = [
    # Types
    "DisturbanceSpec",
    "LpNorm",
    "EisspCertificate",
    "DriftEstimate",
    "Counterexample",
    "SampleRegion",
    "ExitBound",
    "IssEnvelope",
    "HittingTimeBound",
    "SuccessReport",
    "RobustnessResult",
    # Errors
    "IsspError",
    "DimensionMismatchError",
    "UnboundedSupportError",
    "UnstableLinearizationError",
    "SolverFailureError",
    "DegenerateCertificateError",
    "PreconditionError",
    "EmptyRegionError",
    "BothZeroError",
    "DriftNotPositiveError",
    "DomainExitError",
    "ConfigError",
    "CertificationError",
    # Distributions
    "sample",
    "sample_stream",
    "lp_norm",
    "covariance_trace",
    # Lyapunov
    "QuadraticLyapunov",
    "solve_discrete_lyapunov",
    "solve_dare",
    "drift_expectation",
    "certify_eissp",
    "certify_iss",
    "lqg_certificate",
    "additive_lift",
    # Martingale
    "SupermartingaleProcess",
    "w_value",
    "supermartingale_gap",
    "ville_bound",
    "exit_probability_bound",
    "rho_trajectory",
    "kushner_bound",
    "iss_envelope",
    # Drift
    "hitting_time_bound_linear",
    "hitting_time_bound_variable",
    "recurrence_threshold",
    # Monte Carlo
    "TrajectoryBatch",
    "simulate",
    "success_fraction",
    "empirical_hitting_time",
    "empirical_martingale_check",
    # Systems
    "SystemModel",
    "scalar_linear",
    "double_integrator_lqg",
    "walker_surrogate",
    # Optimizer
    "max_tolerable_disturbance",
    "level_set_bound",
    # Util
    "zeta",
    "symmetric_eigen_extremes",
    # Execution and observers
    "Executor",
    "ExecutionMode",
    "ExperimentConfig",
    "ExperimentName",
    "ExperimentOutcome",
    "ExperimentContext",
    "ExperimentRunner",
    "Eventful",
    "Observable",
    "Meter",
    "TimingMeter",
    "MetricsMeter",
    "SoundnessMeter",
    "MarginMeter",
    "Reporter",
    "LoggingReporter",
    "observe",
]
