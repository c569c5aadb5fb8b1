"""Ordered executor with sequential, thread, and process modes.

Monte Carlo work (trajectory chunks, drift states, shell states) is split into
independent items, each seeded from its own RNG stream, so the mode and the
worker count change wall time only, never results.
"""

from __future__ import annotations

import logging
import threading
import time
from collections.abc import Callable, Iterable
from concurrent.futures import Future, ProcessPoolExecutor, ThreadPoolExecutor
from enum import Enum
from typing import Any, List, Optional, Tuple, TypeVar, Union

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ExecutionMode(str, Enum):
    """Execution mode for work items."""

    SEQUENTIAL = "sequential"
    THREAD = "thread"
    PROCESS = "process"


def partition(count: int, chunk_size: int) -> List[Tuple[int, int]]:
    """Split ``range(count)`` into consecutive ``(start, stop)`` chunks."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    return [(lo, min(lo + chunk_size, count)) for lo in range(0, count, chunk_size)]


class Executor:
    """Runs a function over work items and returns results in input order.

    Example:
        with Executor(ExecutionMode.THREAD, max_workers=4) as ex:
            chunks = ex.map(simulate_chunk, partition(1500, 250))

    Exceptions raised by a work item propagate out of :meth:`map` (the first
    failing item in input order wins). Process mode needs picklable,
    module-level callables; bind arguments with ``functools.partial``.
    """

    def __init__(
        self,
        mode: ExecutionMode = ExecutionMode.SEQUENTIAL,
        max_workers: int = 4,
    ):
        if max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {max_workers}")
        self._mode = mode
        self._max_workers = max_workers
        self._lock = threading.RLock()
        self._pool: Optional[Union[ThreadPoolExecutor, ProcessPoolExecutor]] = None
        self._running = False

    @classmethod
    def for_threads(cls, threads: int) -> "Executor":
        """Sequential for ``threads <= 1``, else a thread pool of that size."""
        if threads <= 1:
            return cls(ExecutionMode.SEQUENTIAL, max_workers=1)
        return cls(ExecutionMode.THREAD, max_workers=threads)

    @property
    def mode(self) -> ExecutionMode:
        return self._mode

    @property
    def max_workers(self) -> int:
        return self._max_workers

    def start(self) -> None:
        """Start the worker pool; idempotent and atomic under the lock."""
        with self._lock:
            if self._running:
                return

            if self._mode == ExecutionMode.THREAD:
                self._pool = ThreadPoolExecutor(max_workers=self._max_workers)
            elif self._mode == ExecutionMode.PROCESS:
                self._pool = ProcessPoolExecutor(max_workers=self._max_workers)

            self._running = True
        logger.info(
            "executor.start mode=%s max_workers=%d", self._mode.value, self._max_workers
        )

    def stop(self, wait: bool = True) -> None:
        """Stop the worker pool."""
        with self._lock:
            if not self._running:
                return

            pool = self._pool
            self._pool = None
            self._running = False
        # shutdown(wait=True) can block; keep it outside the lock.
        if pool:
            pool.shutdown(wait=wait)
        logger.info("executor.stop mode=%s", self._mode.value)

    def map(self, func: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply ``func`` to every item; results follow input order."""
        work = list(items)
        start = time.perf_counter()

        if self._mode == ExecutionMode.SEQUENTIAL or len(work) <= 1:
            results = [func(item) for item in work]
        else:
            self.start()
            with self._lock:
                pool = self._pool
            assert pool is not None  # set by start() for non-sequential modes
            futures: List[Future[R]] = [pool.submit(func, item) for item in work]
            results = [f.result() for f in futures]

        logger.debug(
            "executor.map mode=%s items=%d elapsed=%.3fs",
            self._mode.value,
            len(work),
            time.perf_counter() - start,
        )
        return results

    def __enter__(self) -> "Executor":
        self.start()
        return self

    def __exit__(self, *args: Any) -> None:
        self.stop()


def resolve(executor: Optional[Executor]) -> Executor:
    """The given executor, or a fresh sequential one."""
    return executor if executor is not None else Executor()
