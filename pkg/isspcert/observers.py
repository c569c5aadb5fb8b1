"""Event channels, meters and reporters for experiment runs.

``Observable``      Holds named :class:`Eventful` channels as attributes;
                    ``obj.on("success", fn)`` and ``obj.success.on(fn)`` are
                    the same subscription.

``Eventful``        One channel. ``fire(*args)`` calls every subscriber in
                    order; an exception from a subscriber propagates.

``Meter``           Folds one number per successful experiment run (elapsed
                    time, unsound bounds, a Wilson margin) into a running
                    mean/variance and reduces it with ``reduction=``.
                    ``attach(runner)`` wires its ``on_<event>`` methods to the
                    runner's lifecycle channels; after each successful run it
                    fires ``measurement(meter, value, ctx)``.

``Reporter``        Subscribes its ``@observe(Meter, "measurement")`` methods
                    to every instance of the target class. Reporters never
                    touch experiment outputs.

Lifecycle events fired by :class:`~isspcert.runner.ExperimentRunner`:
``start``, ``success``, ``failure`` and ``complete``.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

if TYPE_CHECKING:
    from isspcert.runner import ExperimentContext

logger = logging.getLogger(__name__)

LIFECYCLE = ("start", "success", "failure", "complete")


# =============================================================================
# Class-level subscribers
# =============================================================================


class _ClassSubscribers:
    """``(class, event) -> [callables]`` shared by every instance of a class."""

    def __init__(self) -> None:
        self._table: Dict[Tuple[type, str], List[Callable[..., Any]]] = {}
        self._lock = threading.Lock()

    def add(self, cls: type, event: str, fn: Callable[..., Any]) -> None:
        with self._lock:
            self._table.setdefault((cls, event), []).append(fn)

    def discard(self, cls: type, event: str, fn: Callable[..., Any]) -> None:
        with self._lock:
            subs = self._table.get((cls, event))
            if subs and fn in subs:
                subs.remove(fn)

    def matching(self, owner_cls: type, event: str) -> List[Callable[..., Any]]:
        """Subscribers for ``event`` on ``owner_cls`` or any of its bases."""
        with self._lock:
            return [
                fn
                for klass in owner_cls.__mro__
                for fn in self._table.get((klass, event), ())
            ]


_CLASS_SUBSCRIBERS = _ClassSubscribers()


# =============================================================================
# Channels
# =============================================================================


class Eventful:
    """One pub-sub channel.

    With ``owner`` and ``name`` set, ``fire`` also reaches the class-level
    subscribers registered through :func:`observe`. Those run after the
    instance subscribers; one that raises is logged and skipped.
    """

    def __init__(
        self,
        *,
        owner: Optional[object] = None,
        name: Optional[str] = None,
    ) -> None:
        self._subscribers: List[Callable[..., Any]] = []
        self._lock = threading.Lock()
        self._owner = owner
        self._name = name

    def subscribe(self, fn: Callable[..., Any]) -> Callable[..., Any]:
        with self._lock:
            self._subscribers.append(fn)
        return fn

    on = subscribe

    def unsubscribe(self, fn: Callable[..., Any]) -> bool:
        with self._lock:
            if fn not in self._subscribers:
                return False
            self._subscribers.remove(fn)
            return True

    @property
    def subscribers(self) -> List[Callable[..., Any]]:
        with self._lock:
            return list(self._subscribers)

    def fire(self, *args: Any, **kwargs: Any) -> None:
        for fn in self.subscribers:
            fn(*args, **kwargs)
        if self._owner is None or self._name is None:
            return
        for fn in _CLASS_SUBSCRIBERS.matching(type(self._owner), self._name):
            try:
                fn(*args, **kwargs)
            except Exception:
                logger.exception(
                    "reporter.failed event=%s.%s subscriber=%r",
                    type(self._owner).__name__,
                    self._name,
                    fn,
                )


class Observable:
    """Routes string event names to :class:`Eventful` attributes."""

    def _channel(self, event: str) -> Eventful:
        channel = getattr(self, event, None)
        if isinstance(channel, Eventful):
            return channel
        raise AttributeError(f"{type(self).__name__} has no event {event!r}")

    def on(self, event: str, /, fn: Callable[..., Any]) -> Callable[..., Any]:
        return self._channel(event).subscribe(fn)

    subscribe = on

    def fire(self, event: str, /, *args: Any, **kwargs: Any) -> None:
        self._channel(event).fire(*args, **kwargs)

    def events(self) -> List[str]:
        return sorted(
            name
            for name, value in vars(self).items()
            if not name.startswith("_") and isinstance(value, Eventful)
        )


# =============================================================================
# Meters
# =============================================================================


@dataclass
class _Accumulator:
    """Welford running moments plus extremes."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    total: float = 0.0
    lo: float = 0.0
    hi: float = 0.0
    last: float = 0.0

    def add(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)
        self.total += value
        self.lo = value if self.count == 1 else min(self.lo, value)
        self.hi = value if self.count == 1 else max(self.hi, value)
        self.last = value

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / (self.count - 1)) if self.count > 1 else 0.0


REDUCTIONS: Dict[str, Callable[[_Accumulator], float]] = {
    "mean": lambda acc: acc.mean,
    "sum": lambda acc: acc.total,
    "max": lambda acc: acc.hi,
    "min": lambda acc: acc.lo,
    "last": lambda acc: acc.last,
    "count": lambda acc: float(acc.count),
    "std": lambda acc: acc.std,
}


class Meter(Observable):
    """Running aggregate of one number per experiment run.

    Subclasses override :meth:`measure`. :meth:`on_success` stores the value
    in ``ctx.metadata[name]``, folds it in unless it is ``None`` and fires
    ``measurement``.
    """

    name: str = "meter"

    def __init__(self, name: Optional[str] = None, *, reduction: str = "mean") -> None:
        if reduction not in REDUCTIONS:
            raise ValueError(
                f"unknown reduction {reduction!r}; choose from {sorted(REDUCTIONS)}"
            )
        if name is not None:
            self.name = name
        self._reduction = reduction
        self._lock = threading.Lock()
        self._acc = _Accumulator()
        self.measurement = Eventful(owner=self, name="measurement")

    @property
    def reduction(self) -> str:
        return self._reduction

    def reset(self) -> None:
        with self._lock:
            self._acc = _Accumulator()

    def update(self, value: float) -> None:
        with self._lock:
            self._acc.add(float(value))

    @property
    def count(self) -> int:
        return self._acc.count

    @property
    def last(self) -> float:
        return self._acc.last

    @property
    def value(self) -> float:
        with self._lock:
            return REDUCTIONS[self._reduction](self._acc)

    @property
    def stats(self) -> Dict[str, float]:
        """The reduced value plus count, mean, sample std and its standard error."""
        with self._lock:
            acc = self._acc
            return {
                "value": REDUCTIONS[self._reduction](acc),
                "count": float(acc.count),
                "mean": acc.mean,
                "std": acc.std,
                "sem": acc.std / math.sqrt(acc.count) if acc.count else 0.0,
            }

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name}: {self._reduction}={self.value:.4g})"

    def measure(self, ctx: ExperimentContext) -> Optional[float]:
        return None

    def on_start(self, ctx: ExperimentContext) -> None:
        pass

    def on_success(self, ctx: ExperimentContext) -> None:
        value = self.measure(ctx)
        ctx.metadata[self.name] = value
        if value is not None:
            self.update(value)
        self.measurement.fire(self, value, ctx)

    def on_failure(self, ctx: ExperimentContext) -> None:
        pass

    def on_complete(self, ctx: ExperimentContext) -> None:
        pass

    def attach(self, source: Observable) -> Meter:
        """Subscribe ``on_<event>`` to ``source.<event>`` for each lifecycle event."""
        for event in LIFECYCLE:
            channel = getattr(source, event, None)
            if isinstance(channel, Eventful):
                channel.subscribe(getattr(self, f"on_{event}"))
        return self


class TimingMeter(Meter):
    """Wall time of each experiment run, in seconds."""

    name = "timing"

    def __init__(
        self,
        threshold: Optional[float] = None,
        name: str = "timing",
        *,
        reduction: str = "mean",
    ) -> None:
        super().__init__(name=name, reduction=reduction)
        self.threshold = threshold

    def on_start(self, ctx: ExperimentContext) -> None:
        ctx.metadata[f"{self.name}_start"] = time.perf_counter()

    def measure(self, ctx: ExperimentContext) -> float:
        started = ctx.metadata.get(f"{self.name}_start")
        if started is None:
            return ctx.execution_time
        elapsed = time.perf_counter() - started
        if self.threshold is not None and elapsed > self.threshold:
            ctx.metadata[f"{self.name}_exceeded"] = True
            logger.warning(
                "experiment.slow name=%s elapsed=%.2fs threshold=%.2fs",
                ctx.name,
                elapsed,
                self.threshold,
            )
        return elapsed


class MetricsMeter(Meter):
    """One number pulled out of a finished run by ``extract(ctx)``.

    An extractor that raises or returns ``None`` records nothing.
    """

    def __init__(
        self,
        name: str,
        extract: Callable[[ExperimentContext], Optional[float]],
        *,
        reduction: str = "mean",
    ) -> None:
        super().__init__(name=name, reduction=reduction)
        self._extract = extract

    def measure(self, ctx: ExperimentContext) -> Optional[float]:
        try:
            return self._extract(ctx)
        except Exception:
            logger.debug("metrics.extract_failed meter=%s", self.name, exc_info=True)
            return None


class SoundnessMeter(Meter):
    """Number of bounds in a run that exceed their empirical Wilson interval.

    The labels of the offending bounds go to ``ctx.metadata["unsound"]``.
    """

    name = "unsound_bounds"

    def __init__(self, name: str = "unsound_bounds", *, reduction: str = "sum") -> None:
        super().__init__(name=name, reduction=reduction)

    def measure(self, ctx: ExperimentContext) -> Optional[float]:
        if ctx.result is None:
            return None
        unsound = [b.label or b.kind.value for b in ctx.result.bounds if not b.sound]
        ctx.metadata["unsound"] = unsound
        return float(len(unsound))


class MarginMeter(Meter):
    """Smallest ``wilson_hi - bound`` over a run's checked bounds.

    Negative means some bound is unsound. Runs with no checked bound record
    nothing.
    """

    name = "wilson_margin"

    def __init__(self, name: str = "wilson_margin", *, reduction: str = "min") -> None:
        super().__init__(name=name, reduction=reduction)

    def measure(self, ctx: ExperimentContext) -> Optional[float]:
        if ctx.result is None:
            return None
        margins = [
            b.empirical.wilson_interval[1] - b.bound
            for b in ctx.result.bounds
            if b.empirical is not None
        ]
        return min(margins) if margins else None


# =============================================================================
# Reporters
# =============================================================================


def observe(
    target_cls: type, event: str
) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """Mark a Reporter method as a subscriber to ``target_cls.<event>``.

    The subscription is made when the Reporter is instantiated.
    """

    def deco(fn: Callable[..., Any]) -> Callable[..., Any]:
        targets = [*getattr(fn, "_observe_targets", ()), (target_cls, event)]
        fn._observe_targets = targets  # type: ignore[attr-defined]
        return fn

    return deco


class Reporter:
    """Binds its ``@observe``-marked methods at construction until :meth:`close`.

    Example::

        class PrintReporter(Reporter):
            @observe(Meter, "measurement")
            def show(self, meter, value, ctx):
                print(ctx.name, meter.name, value)
    """

    def __init__(self) -> None:
        self._bindings: List[Tuple[type, str, Callable[..., Any]]] = []
        for attr in dir(type(self)):
            targets = getattr(getattr(type(self), attr, None), "_observe_targets", ())
            for target_cls, event in targets:
                bound = getattr(self, attr)
                _CLASS_SUBSCRIBERS.add(target_cls, event, bound)
                self._bindings.append((target_cls, event, bound))

    def close(self) -> None:
        while self._bindings:
            _CLASS_SUBSCRIBERS.discard(*self._bindings.pop())

    def __enter__(self) -> Reporter:
        return self

    def __exit__(self, *args: Any) -> None:
        self.close()


class LoggingReporter(Reporter):
    """Logs every meter measurement through stdlib logging."""

    def __init__(
        self,
        level: int = logging.INFO,
        logger_name: str = "isspcert",
    ) -> None:
        self._level = level
        self._log = logging.getLogger(logger_name)
        super().__init__()

    @observe(Meter, "measurement")
    def _on_measurement(
        self, meter: Meter, value: Optional[float], ctx: ExperimentContext
    ) -> None:
        self._log.log(
            self._level,
            "measurement run=%s experiment=%s %s=%s",
            ctx.run_id,
            ctx.name,
            meter.name,
            value,
        )
