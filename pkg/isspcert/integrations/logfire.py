"""Logfire integration: one span per experiment run.

Requires: ``pip install isspcert[logfire]``

:class:`LogfireMeter` opens a span when an experiment starts. On the way
out it attaches the run's bound summary: how many bounds were checked,
which were unsound, the smallest Wilson margin, and numeric headline values.
Failed runs close the span with the exception::

    import logfire
    from isspcert.integrations.logfire import LogfireMeter

    logfire.configure()
    runner = ExperimentRunner(on_execute=[LogfireMeter()])
    runner.run(config)

:class:`LogfireMetricLogger` sends one record of key-value metrics without a
span; the CLI uses it for the per-run totals.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable
from typing import TYPE_CHECKING, Any, Dict, List, Optional

try:
    import logfire as _logfire  # type: ignore[import-not-found]
except ImportError as e:  # pragma: no cover
    raise ImportError(
        "logfire is required for LogfireMeter. "
        "Install it with: pip install isspcert[logfire]"
    ) from e

from isspcert.observers import Meter

if TYPE_CHECKING:
    from isspcert.experiments import ExperimentOutcome
    from isspcert.runner import ExperimentContext

logger = logging.getLogger(__name__)

AttributeExtractor = Callable[["ExperimentContext"], Dict[str, Any]]


def outcome_attributes(outcome: ExperimentOutcome) -> Dict[str, Any]:
    """Span attributes summarizing an outcome's bounds and headline."""
    checked = [b for b in outcome.bounds if b.empirical is not None]
    attrs: Dict[str, Any] = {
        "violations": len(outcome.violations),
        "bounds": len(outcome.bounds),
        "unsound": [b.label or b.kind.value for b in outcome.bounds if not b.sound],
    }
    if checked:
        attrs["min_wilson_margin"] = min(
            b.empirical.wilson_interval[1] - b.bound  # type: ignore[union-attr]
            for b in checked
        )
    for key, value in outcome.headline.items():
        if isinstance(value, (bool, int, float)):
            attrs[f"headline.{key}"] = value
    return attrs


class LogfireMeter(Meter):
    """Meter whose sink is a Logfire span instead of a running aggregate.

    Args:
        logfire_instance: A ``logfire.Logfire`` handle; ``None`` uses the
            module-level default.
        extract_attributes: Optional ``(ctx) -> dict`` evaluated after a
            successful run and attached as ``result_attributes``. An
            extractor that raises is logged and skipped.
        tags: Tags applied to every span.
    """

    name = "logfire"

    def __init__(
        self,
        logfire_instance: Optional[Any] = None,
        extract_attributes: Optional[AttributeExtractor] = None,
        tags: Optional[List[str]] = None,
    ) -> None:
        super().__init__()
        handle = logfire_instance or _logfire
        self._logfire = handle.with_tags(*tags) if tags else handle
        self._extract_attributes = extract_attributes
        # Concurrent runs each own a span, keyed by run id.
        self._spans: Dict[str, Any] = {}
        self._span_lock = threading.Lock()

    def on_start(self, ctx: ExperimentContext) -> None:
        span = self._logfire.span(
            "experiment {name}",
            name=ctx.name,
            run_id=ctx.run_id,
            seed=ctx.config.seed,
            trajectories=ctx.config.trajectories,
            horizon=ctx.config.horizon,
        )
        span.__enter__()
        with self._span_lock:
            self._spans[ctx.run_id] = span

    def on_success(self, ctx: ExperimentContext) -> None:
        span = self._pop(ctx)
        if span is None:
            return
        try:
            span.set_attribute("execution_time", ctx.execution_time)
            if ctx.result is not None:
                for key, value in outcome_attributes(ctx.result).items():
                    span.set_attribute(key, value)
            extra = self._extra(ctx)
            if extra:
                span.set_attribute("result_attributes", extra)
        finally:
            span.__exit__(None, None, None)

    def on_failure(self, ctx: ExperimentContext) -> None:
        span = self._pop(ctx)
        if span is None:
            return
        error = ctx.error
        try:
            span.set_attribute("execution_time", ctx.execution_time)
            span.set_attribute("error", str(error))
            span.set_attribute("error_type", type(error).__name__)
        finally:
            if error is None:
                span.__exit__(None, None, None)
            else:
                span.__exit__(type(error), error, error.__traceback__)

    def _pop(self, ctx: ExperimentContext) -> Optional[Any]:
        with self._span_lock:
            return self._spans.pop(ctx.run_id, None)

    def _extra(self, ctx: ExperimentContext) -> Dict[str, Any]:
        if self._extract_attributes is None:
            return {}
        try:
            return dict(self._extract_attributes(ctx) or {})
        except Exception:
            logger.debug("logfire.extract_failed run=%s", ctx.run_id, exc_info=True)
            return {}


class LogfireMetricLogger:
    """Sends ``prefix: k=v ...`` info records with the values as attributes."""

    def __init__(
        self,
        logfire_instance: Optional[Any] = None,
        prefix: str = "isspcert",
        tags: Optional[List[str]] = None,
    ) -> None:
        handle = logfire_instance or _logfire
        self._logfire = handle.with_tags(*tags) if tags else handle
        self._prefix = prefix

    def log(self, **metrics: Any) -> None:
        body = " ".join(f"{k}={v}" for k, v in metrics.items())
        self._logfire.info(f"{self._prefix}: {body}", **metrics)
