"""Ordered key index: 9-byte prefixes mapped to 48-bit log positions.

Layout.  The first two bytes of a key's canonical form select one of 65,536
stripes; within a stripe, the remaining seven prefix bytes become a 56-bit
integer stored next to its log position in one flat ``array('Q')`` of
interleaved ``[suffix, position]`` pairs kept sorted by (suffix, position).
That is 16 bytes of array payload per live key — the structure deliberately
does not store full keys, so distinct keys sharing a 9-byte prefix collapse
into one bucket and lookups return *candidate* positions for the caller to
disambiguate by reading the entries themselves.

Writers serialize per stripe (a pool of locks keyed by stripe id); an
ordered bitmap over non-empty stripes supports predecessor scans that cross
stripe boundaries.

Positions must fit in 48 bits, which bounds a shard log at 256 TiB.
"""

from __future__ import annotations

import sys
import threading
from array import array

from .errors import ConsistencyError

__all__ = ["PREFIX_LEN", "POSITION_LIMIT", "StripedIndex"]

PREFIX_LEN = 9
POSITION_LIMIT = 1 << 48

_LOCK_POOL = 4096
_SUFFIX_BYTES = PREFIX_LEN - 2


class StripedIndex:
    def __init__(self):
        self._stripes: list[array | None] = [None] * 65536
        self._occupied = bytearray(65536)  # cheap membership check
        self._mask = 0  # big-int bitmap of non-empty stripes, for ordered scans
        self._locks = [threading.Lock() for _ in range(_LOCK_POOL)]
        self._count = 0

    # -- helpers ---------------------------------------------------------

    @staticmethod
    def _split(key: bytes) -> tuple[int, int]:
        if len(key) < PREFIX_LEN:
            raise ConsistencyError("index keys must be at least 9 bytes")
        return (key[0] << 8) | key[1], int.from_bytes(key[2:PREFIX_LEN], "big")

    @staticmethod
    def _prefix_bytes(stripe: int, suffix: int) -> bytes:
        return stripe.to_bytes(2, "big") + suffix.to_bytes(_SUFFIX_BYTES, "big")

    @staticmethod
    def _bisect(pairs: array, suffix: int, position: int) -> int:
        """First pair index whose (suffix, position) >= the probe."""
        lo, hi = 0, len(pairs) >> 1
        while lo < hi:
            mid = (lo + hi) >> 1
            s = pairs[2 * mid]
            if s < suffix or (s == suffix and pairs[2 * mid + 1] < position):
                lo = mid + 1
            else:
                hi = mid
        return lo

    def _run(self, pairs: array, suffix: int) -> tuple[int, int]:
        return self._bisect(pairs, suffix, 0), self._bisect(pairs, suffix + 1, 0)

    def _prev_stripe(self, stripe: int) -> int:
        """Greatest non-empty stripe id <= stripe, or -1."""
        return (self._mask & ((1 << (stripe + 1)) - 1)).bit_length() - 1

    # -- mutation ---------------------------------------------------------

    def put(self, key: bytes, position: int, *, replacing: int | None = None) -> None:
        """Record ``key -> position``.

        For an update the caller passes the position it just superseded via
        ``replacing``; only that pair is touched, so prefix collisions stay
        unambiguous.
        """
        if not 0 <= position < POSITION_LIMIT:
            raise ConsistencyError(f"position {position} does not fit in 48 bits")
        stripe, suffix = self._split(key)
        with self._locks[stripe & (_LOCK_POOL - 1)]:
            pairs = self._stripes[stripe]
            if pairs is None:
                pairs = self._stripes[stripe] = array("Q")
                self._occupied[stripe] = 1
                self._mask |= 1 << stripe
            if replacing is not None:
                i = self._bisect(pairs, suffix, replacing)
                if 2 * i >= len(pairs) or pairs[2 * i] != suffix or pairs[2 * i + 1] != replacing:
                    raise ConsistencyError("stale index update: prior position not present")
                del pairs[2 * i : 2 * i + 2]
                self._count -= 1
            i = self._bisect(pairs, suffix, position)
            pairs[2 * i : 2 * i] = array("Q", (suffix, position))
            self._count += 1

    def delete(self, key: bytes, position: int) -> None:
        stripe, suffix = self._split(key)
        with self._locks[stripe & (_LOCK_POOL - 1)]:
            pairs = self._stripes[stripe]
            if pairs is not None:
                i = self._bisect(pairs, suffix, position)
                if 2 * i < len(pairs) and pairs[2 * i] == suffix and pairs[2 * i + 1] == position:
                    del pairs[2 * i : 2 * i + 2]
                    self._count -= 1
                    if not pairs:
                        self._stripes[stripe] = None
                        self._occupied[stripe] = 0
                        self._mask &= ~(1 << stripe)
                    return
        raise ConsistencyError("index delete of a pair that is not present")

    # -- lookup -----------------------------------------------------------

    def get(self, key: bytes) -> list[int]:
        """Candidate positions for the key's exact 9-byte prefix."""
        stripe, suffix = self._split(key)
        if not self._occupied[stripe]:
            return []
        with self._locks[stripe & (_LOCK_POOL - 1)]:
            pairs = self._stripes[stripe]
            if pairs is None:
                return []
            lo, hi = self._run(pairs, suffix)
            return [pairs[2 * i + 1] for i in range(lo, hi)]

    def predecessor(self, key: bytes) -> tuple[bytes, list[int]] | None:
        """Greatest stored prefix <= the key's prefix, with its positions."""
        for bucket in self.iter_buckets_desc(key):
            return bucket
        return None

    def iter_buckets_desc(self, key: bytes):
        """Yield (prefix, positions) for stored prefixes <= key's, descending.

        Each bucket is snapshotted under its stripe lock; the iterator itself
        must not race concurrent writers.
        """
        stripe, suffix = self._split(key)
        first = True
        while stripe >= 0:
            if self._occupied[stripe]:
                with self._locks[stripe & (_LOCK_POOL - 1)]:
                    pairs = self._stripes[stripe]
                    snapshot = pairs.tolist() if pairs is not None else []
                if snapshot:
                    end = (len(snapshot) >> 1) if not first else self._bisect_list(snapshot, suffix)
                    i = end - 1
                    while i >= 0:
                        run_suffix = snapshot[2 * i]
                        positions = []
                        while i >= 0 and snapshot[2 * i] == run_suffix:
                            positions.append(snapshot[2 * i + 1])
                            i -= 1
                        positions.reverse()
                        yield self._prefix_bytes(stripe, run_suffix), positions
            first = False
            stripe = self._prev_stripe(stripe - 1)

    @staticmethod
    def _bisect_list(flat: list[int], suffix: int) -> int:
        """First pair index in a flat pair list with suffix > the probe."""
        lo, hi = 0, len(flat) >> 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if flat[2 * mid] <= suffix:
                lo = mid + 1
            else:
                hi = mid
        return lo

    # -- introspection ------------------------------------------------------

    def __len__(self) -> int:
        return self._count

    def memory_report(self) -> dict:
        payload = 0
        total = sys.getsizeof(self._stripes) + sys.getsizeof(self._occupied)
        total += sys.getsizeof(self._mask)
        stripes = 0
        for pairs in self._stripes:
            if pairs is not None:
                stripes += 1
                payload += len(pairs) * pairs.itemsize
                total += sys.getsizeof(pairs)  # includes the buffer itself
        keys = max(self._count, 1)
        return {
            "keys": self._count,
            "active_stripes": stripes,
            "payload_bytes": payload,
            "total_bytes": total,
            "payload_per_key": payload / keys,
            "total_per_key": total / keys,
        }
