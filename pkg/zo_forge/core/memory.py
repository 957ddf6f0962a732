"""Allocation accounting for optimizer steps."""

from __future__ import annotations

import logging
import tracemalloc
from contextlib import contextmanager
from typing import Iterator, Protocol

_LOGGER = logging.getLogger(__name__)


class LedgerNotArmedError(RuntimeError):
    """Allocation delta requested before a step was bracketed."""


class AllocationObserver(Protocol):
    """Counting hook over the process allocator."""

    def current(self) -> int: ...

    def peak(self) -> int: ...

    def reset_peak(self) -> None: ...


class TracemallocObserver:
    """Observer backed by tracemalloc; numpy registers its buffers with it."""

    def __init__(self) -> None:
        self._started_here = False
        if not tracemalloc.is_tracing():
            tracemalloc.start()
            self._started_here = True
            _LOGGER.debug("Started tracemalloc for allocation accounting")

    def current(self) -> int:
        return tracemalloc.get_traced_memory()[0]

    def peak(self) -> int:
        return tracemalloc.get_traced_memory()[1]

    def reset_peak(self) -> None:
        tracemalloc.reset_peak()

    def close(self) -> None:
        if self._started_here and tracemalloc.is_tracing():
            tracemalloc.stop()
        self._started_here = False


class NullObserver:
    """Observer used when accounting is disabled; every delta is zero."""

    def current(self) -> int:
        return 0

    def peak(self) -> int:
        return 0

    def reset_peak(self) -> None:
        return None


class AllocationLedger:
    """Tracks the peak allocation of optimizer-internal phases within one step.

    Forward passes belong to the loss function and are not bracketed; only the
    code run inside `track()` contributes to the peak.
    """

    def __init__(self, observer: AllocationObserver | None = None) -> None:
        self.observer: AllocationObserver = observer if observer is not None else NullObserver()
        self.bytes_at_step_start: int | None = None
        self.peak_bytes_during_step: int | None = None

    @property
    def armed(self) -> bool:
        return self.bytes_at_step_start is not None

    def begin_step(self) -> None:
        self.bytes_at_step_start = self.observer.current()
        self.peak_bytes_during_step = self.bytes_at_step_start

    @contextmanager
    def track(self) -> Iterator[None]:
        if not self.armed:
            raise LedgerNotArmedError("begin_step() must be called before track()")
        self.observer.reset_peak()
        try:
            yield
        finally:
            peak = self.observer.peak()
            if self.peak_bytes_during_step is None or peak > self.peak_bytes_during_step:
                self.peak_bytes_during_step = peak


def step_allocation_delta(ledger: AllocationLedger) -> int:
    """Peak optimizer-internal bytes above the step-start mark."""
    if ledger.bytes_at_step_start is None or ledger.peak_bytes_during_step is None:
        raise LedgerNotArmedError("Ledger has no completed step to report")
    return max(0, ledger.peak_bytes_during_step - ledger.bytes_at_step_start)
