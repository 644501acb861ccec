"""Fault-injection points for crash testing.

When ``TWIGDB_CRASH_AT`` is set to ``"<point>:<n>"``, the process dies with
``os._exit`` (no cleanup, no buffer flushing — as close to ``kill -9`` as a
process can do to itself) the ``n``-th time execution reaches that point.
Recognized points and where they sit in the commit sequence:

    append      an entry frame entered the pending buffer
    flush       a full twig's frames and entry root hit the log files
    barrier     the durability fsync of the log files returned
    snapshot    the fresh-twig snapshot was atomically replaced
    manifest    the store manifest was atomically replaced

Nothing here is active unless the environment variable is set.
"""

from __future__ import annotations

import os

__all__ = ["arm_from_env", "crash_point", "CRASH_EXIT_CODE"]

CRASH_EXIT_CODE = 86

_armed: dict[str, int] | None = None


def arm_from_env() -> None:
    """(Re)read ``TWIGDB_CRASH_AT``; called by ``Store.open``."""
    global _armed
    spec = os.environ.get("TWIGDB_CRASH_AT")
    if not spec:
        _armed = None
        return
    point, _, count = spec.partition(":")
    _armed = {point: int(count) if count else 1}


def crash_point(point: str) -> None:
    if _armed is None:
        return
    remaining = _armed.get(point)
    if remaining is None:
        return
    if remaining <= 1:
        os._exit(CRASH_EXIT_CODE)
    _armed[point] = remaining - 1
