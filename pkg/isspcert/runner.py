"""Experiment registry and the runner that drives one experiment's lifecycle."""

from __future__ import annotations

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional
from uuid import uuid4

from isspcert.executor import Executor
from isspcert.observers import Eventful, Meter, Observable

if TYPE_CHECKING:
    from isspcert.experiments import ExperimentConfig, ExperimentOutcome

logger = logging.getLogger(__name__)

ExperimentFn = Callable[["ExperimentConfig", Executor], "ExperimentOutcome"]
ContextHandler = Callable[["ExperimentContext"], None]

EXPERIMENTS: Dict[str, ExperimentFn] = {}


def experiment(name: str) -> Callable[[ExperimentFn], ExperimentFn]:
    """Register ``fn`` as the implementation of experiment ``name``."""

    def deco(fn: ExperimentFn) -> ExperimentFn:
        if name in EXPERIMENTS:
            raise ValueError(f"experiment {name!r} already registered")
        EXPERIMENTS[name] = fn
        return fn

    return deco


@dataclass
class ExperimentContext:
    """State carried through one run: config in, outcome or error out.

    ``metadata`` is scratch space for meters (start stamps, measurements).
    """

    run_id: str
    name: str
    config: "ExperimentConfig"
    executor: Executor
    start_time: float = 0.0
    end_time: float = 0.0
    result: Optional["ExperimentOutcome"] = None
    error: Optional[Exception] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def execution_time(self) -> float:
        return self.end_time - self.start_time if self.end_time else 0.0

    @property
    def is_success(self) -> bool:
        return self.error is None


class ExperimentRunner(Observable):
    """Runs registered experiments and fires ``start`` / ``success`` /
    ``failure`` / ``complete`` around each one.

    Example:
        timing = TimingMeter()
        runner = ExperimentRunner(executor, on_execute=[timing])
        outcome = runner.run(config)
        timing.value  # seconds
    """

    def __init__(
        self,
        executor: Optional[Executor] = None,
        on_execute: Optional[List[Meter]] = None,
        on_success: Optional[ContextHandler] = None,
        on_failure: Optional[ContextHandler] = None,
    ):
        self.executor = executor or Executor()
        self.start: Eventful = Eventful()
        self.success: Eventful = Eventful()
        self.failure: Eventful = Eventful()
        self.complete: Eventful = Eventful()

        for meter in on_execute or []:
            meter.attach(self)
        if on_success:
            self.success.subscribe(on_success)
        if on_failure:
            self.failure.subscribe(on_failure)

    def run(self, config: "ExperimentConfig") -> "ExperimentOutcome":
        """Run the experiment ``config.experiment`` names; re-raises its errors."""
        name = config.experiment.value
        try:
            fn = EXPERIMENTS[name]
        except KeyError:
            raise ValueError(f"no experiment registered as {name!r}") from None

        ctx = ExperimentContext(
            run_id=uuid4().hex,
            name=name,
            config=config,
            executor=self.executor,
            start_time=time.time(),
        )
        logger.info("experiment.start id=%s name=%s", ctx.run_id, name)
        self.start.fire(ctx)

        try:
            ctx.result = fn(config, self.executor)
        except Exception as e:
            ctx.error = e
            ctx.end_time = time.time()
            logger.warning(
                "experiment.failure id=%s name=%s exc=%s elapsed=%.4fs: %s",
                ctx.run_id,
                name,
                type(e).__name__,
                ctx.execution_time,
                e,
            )
            self.failure.fire(ctx)
            raise
        else:
            ctx.end_time = time.time()
            logger.info(
                "experiment.success id=%s name=%s elapsed=%.4fs violations=%d",
                ctx.run_id,
                name,
                ctx.execution_time,
                len(ctx.result.violations),
            )
            self.success.fire(ctx)
            return ctx.result
        finally:
            self.complete.fire(ctx)
