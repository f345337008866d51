"""Global multiply-accumulate counter used to cross-check the analytic profiler.

Compute kernels call :func:`add_macs` with the number of multiply-adds they
logically perform. The counter is off unless a :func:`mac_counter` context is
active, so the hot path costs one attribute check.
"""

from __future__ import annotations

from contextlib import contextmanager


class MacCounter:
    """Accumulates multiply-add counts while active."""

    def __init__(self):
        self.macs = 0


_ACTIVE: MacCounter | None = None


def add_macs(n: int) -> None:
    if _ACTIVE is not None:
        _ACTIVE.macs += int(n)


@contextmanager
def mac_counter():
    """Context manager yielding a :class:`MacCounter` that records all MACs."""
    global _ACTIVE
    prev = _ACTIVE
    counter = MacCounter()
    _ACTIVE = counter
    try:
        yield counter
    finally:
        _ACTIVE = prev
