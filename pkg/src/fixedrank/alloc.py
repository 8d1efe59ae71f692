"""Accounting hook for explicit dense ambient-matrix materializations.

Production code keeps everything in factored form; the only places an
m-by-n array is ever built are the conversion helpers (``to_dense``,
``dense_grad``, residual caches, the one-time base-weight shift at
initialization). Each of those calls :func:`note_dense_alloc`, so a test
can wrap an optimizer loop in :func:`count_dense_allocs` and assert the
loop stays matrix-free.
"""

from __future__ import annotations

from contextlib import contextmanager

_sink: list | None = None


def note_dense_alloc(shape: tuple[int, int], tag: str) -> None:
    """Record an intentional dense materialization of the given shape."""
    if _sink is not None:
        _sink.append((tuple(shape), tag))


@contextmanager
def count_dense_allocs(sink: list | None = None):
    """Collect ``(shape, tag)`` records for every marked dense materialization.

    Single-threaded test hook; nested use restores the previous sink.
    """
    global _sink
    if sink is None:
        sink = []
    prev = _sink
    _sink = sink
    try:
        yield sink
    finally:
        _sink = prev
