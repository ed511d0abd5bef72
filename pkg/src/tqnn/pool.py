"""Concurrent fitness evaluation on a thread pool."""

import threading
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional


class EvaluationStatus(Enum):
    """Status of one evaluation."""

    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELLED = "cancelled"


@dataclass
class EvaluationResult:
    """Outcome of one work item; ``value`` is set only when completed."""

    index: int
    label: str
    status: EvaluationStatus
    value: Any = None
    error_message: Optional[str] = None
    duration_seconds: float = 0.0


class EvaluationWorker:
    """Runs one callable and captures its result or failure."""

    def __init__(
        self,
        index: int,
        label: str,
        fn: Callable[[], Any],
        on_complete: Optional[Callable[[EvaluationResult], None]] = None,
    ):
        self.index = index
        self.label = label
        self.fn = fn
        self.on_complete = on_complete

        self.status = EvaluationStatus.PENDING
        self.started_at: Optional[float] = None
        self.result: Optional[EvaluationResult] = None

        self._cancelled = threading.Event()
        self._lock = threading.Lock()

    def run(self) -> EvaluationResult:
        """Execute the callable and return the result."""
        start_time = time.monotonic()

        with self._lock:
            if self._cancelled.is_set():
                self.status = EvaluationStatus.CANCELLED
                result = EvaluationResult(self.index, self.label, EvaluationStatus.CANCELLED)
                self.result = result
                if self.on_complete:
                    self.on_complete(result)
                return result
            self.status = EvaluationStatus.RUNNING
            self.started_at = start_time

        try:
            value = self.fn()
            result = EvaluationResult(
                self.index,
                self.label,
                EvaluationStatus.COMPLETED,
                value=value,
                duration_seconds=time.monotonic() - start_time,
            )
        except Exception as e:
            result = EvaluationResult(
                self.index,
                self.label,
                EvaluationStatus.FAILED,
                error_message=f"{type(e).__name__}: {e}",
                duration_seconds=time.monotonic() - start_time,
            )

        with self._lock:
            self.status = result.status
            self.result = result
        if self.on_complete:
            self.on_complete(result)
        return result

    def cancel(self) -> None:
        """Cancel the evaluation if it has not started yet."""
        self._cancelled.set()


class EvaluationPool:
    """Runs batches of workers, at most ``max_workers`` at a time.

    Results come back ordered by worker index regardless of completion
    order, so serial and parallel runs are interchangeable.
    """

    def __init__(self, max_workers: int = 1):
        self.max_workers = max(1, max_workers)
        self._executor: Optional[ThreadPoolExecutor] = None
        self._workers: list[EvaluationWorker] = []
        self._completed = 0
        self._lock = threading.Lock()

    @property
    def active_count(self) -> int:
        """Return number of currently running evaluations."""
        with self._lock:
            return sum(1 for w in self._workers if w.status == EvaluationStatus.RUNNING)

    @property
    def progress(self) -> tuple[int, int]:
        """(completed, total) for the current batch."""
        with self._lock:
            return self._completed, len(self._workers)

    def _on_done(self, result: EvaluationResult) -> None:
        with self._lock:
            self._completed += 1

    def run_all(self, workers: Sequence[EvaluationWorker]) -> list[EvaluationResult]:
        """Run every worker and return results sorted by index."""
        with self._lock:
            self._workers = list(workers)
            self._completed = 0

        def run_one(worker: EvaluationWorker) -> EvaluationResult:
            result = worker.run()
            self._on_done(result)
            return result

        if self.max_workers == 1 or len(workers) <= 1:
            results = [run_one(w) for w in workers]
        else:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=self.max_workers)
            futures = [self._executor.submit(run_one, w) for w in workers]
            results = [f.result() for f in futures]

        with self._lock:
            self._workers = []
        return sorted(results, key=lambda r: r.index)

    def map(self, fn: Callable[[Any], Any], items: Sequence[Any], labels: Optional[Sequence[str]] = None) -> list[EvaluationResult]:
        """Convenience wrapper: one worker per item."""
        names = list(labels) if labels is not None else [str(i) for i in range(len(items))]
        workers = [
            EvaluationWorker(i, names[i], (lambda item=item: fn(item)))
            for i, item in enumerate(items)
        ]
        return self.run_all(workers)

    def cancel_all(self) -> None:
        """Cancel all evaluations that have not started."""
        with self._lock:
            workers = self._workers[:]
        for worker in workers:
            worker.cancel()

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
