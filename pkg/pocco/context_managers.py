from __future__ import annotations

import threading
import time
from typing import TYPE_CHECKING, Optional, Type, TypeVar

if TYPE_CHECKING:
    from types import TracebackType

    NoGradT = TypeVar("NoGradT", bound="no_grad")
    StopwatchT = TypeVar("StopwatchT", bound="Stopwatch")

__all__ = (
    "no_grad",
    "is_grad_enabled",
    "Stopwatch",
)

_state = threading.local()


def is_grad_enabled() -> bool:
    """:class:`bool`: Whether new :class:`~pocco.core.Value` nodes record their parents on this thread."""
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that suspends graph recording on the current thread.

    Values created inside the block keep their forward data but no parents, so nothing
    is retained for :func:`~pocco.core.backward`. The flag is thread-local; worker
    threads must enter their own block.

    Example Usage: ::

        with pocco.no_grad():
            trajectory = policy.rollout(instance, lam, mode=DecodeMode.greedy)
    """

    def __init__(self) -> None:
        self._previous: bool = True

    def __enter__(self: NoGradT) -> NoGradT:
        self._previous = is_grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_value: Optional[BaseException],
        traceback: Optional[TracebackType],
    ) -> None:
        _state.grad_enabled = self._previous


class Stopwatch:
    """Measures the wall time of a block in milliseconds.

    ``elapsed_ms`` is ``None`` when the stopwatch is disabled, which keeps reports
    free of timing noise unless wall time is requested.
    """

    def __init__(self, enabled: bool = True) -> None:
        self.enabled: bool = enabled
        self.elapsed_ms: Optional[float] = None
        self._start: float = 0.0

    def __enter__(self: StopwatchT) -> StopwatchT:
        self._start = time.perf_counter()
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_value: Optional[BaseException],
        traceback: Optional[TracebackType],
    ) -> None:
        if self.enabled:
            self.elapsed_ms = round((time.perf_counter() - self._start) * 1000.0, 3)
