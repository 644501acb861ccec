"""Brute-force twin of the storage engine for differential testing.

Same externally observable behavior — operation results, per-key state, the
committed root — computed the slow, obvious way: a sorted list for the key
ring, a flat list of every entry ever written, and a from-scratch Merkle fold
over all of it on every ask, hashed directly with :mod:`hashlib`.  The only
shared code is the entry frame codec, because the frame bytes are themselves
part of the commitment; routing, sentinel placement, ring maintenance,
compaction policy, bitmap layout, domain separation, and tree folding are all
restated here independently, so the engine and the twin can only agree by
both being right.
"""

from __future__ import annotations

import bisect
import hashlib
from math import ceil

from .entry import NULL_ID, Entry

__all__ = ["ReferenceModel"]

TWIG_LEAVES = 2048
TWIG_LEVELS = 11
KEY_BYTES = 32


def _hasher(hash_name: str):
    if hash_name == "sha256":
        return lambda data: hashlib.sha256(data).digest()
    if hash_name == "blake2b256":
        return lambda data: hashlib.blake2b(data, digest_size=32).digest()
    raise ValueError(f"unknown hash function {hash_name!r}")


class _ShardModel:
    def __init__(self, shard_id: int, shard_bits: int, threshold: float, h):
        self.shard_id = shard_id
        self.threshold = threshold
        self._h = h
        if shard_bits:
            first = shard_id << (8 - shard_bits)
            last = first | ((1 << (8 - shard_bits)) - 1)
        else:
            first, last = 0, 0xFF
        self.range_min = bytes([first]) + bytes(KEY_BYTES - 1)
        self.range_max = bytes([last]) + b"\xff" * (KEY_BYTES - 1)

        self.entries: list[Entry] = []
        self.active_ids: list[int] = []  # sorted; appends are monotone
        self.by_key: dict[bytes, int] = {}
        self.ring: list[bytes] = []  # sorted active keys
        self.frontier = 0

        self._append_active(
            Entry(id=0, key=self.range_min, value=b"", next_key=self.range_max, version=0)
        )
        self._append_active(
            Entry(id=1, key=self.range_max, value=b"", next_key=self.range_min, version=0)
        )

    # -- state maintenance -------------------------------------------------

    def _append_active(self, entry: Entry) -> None:
        assert entry.id == len(self.entries)
        self.entries.append(entry)
        self.active_ids.append(entry.id)
        old = self.by_key.get(entry.key)
        if old is None:
            bisect.insort(self.ring, entry.key)
        self.by_key[entry.key] = entry.id

    def _deactivate(self, entry_id: int) -> None:
        self.active_ids.pop(bisect.bisect_left(self.active_ids, entry_id))

    def _drop_key(self, key: bytes) -> None:
        del self.by_key[key]
        self.ring.pop(bisect.bisect_left(self.ring, key))

    def _predecessor(self, key: bytes) -> Entry:
        return self.entries[self.by_key[self.ring[bisect.bisect_left(self.ring, key) - 1]]]

    @property
    def next_id(self) -> int:
        return len(self.entries)

    @property
    def active_count(self) -> int:
        return len(self.active_ids)

    def _advance_frontier(self) -> int:
        fresh = self.next_id // TWIG_LEAVES
        idx = bisect.bisect_left(self.active_ids, self.frontier * TWIG_LEAVES)
        first_active = self.active_ids[idx] if idx < len(self.active_ids) else None
        while self.frontier < fresh and (
            first_active is None or first_active >= (self.frontier + 1) * TWIG_LEAVES
        ):
            self.frontier += 1
        return self.frontier

    # -- operations ----------------------------------------------------------

    def apply(self, kind: str, key: bytes, value: bytes | None, version: int):
        if key == self.range_min or key == self.range_max:
            return ("not_found", None) if kind == "read" else ("forbidden", None)
        live_id = self.by_key.get(key)
        if kind == "read":
            if live_id is None:
                return ("not_found", None)
            return ("ok", self.entries[live_id].value)
        if kind == "update":
            if live_id is None:
                return ("not_found", None)
            prev = self.entries[live_id]
            self._append_active(
                Entry(
                    id=self.next_id,
                    key=key,
                    value=value,
                    next_key=prev.next_key,
                    version=version,
                    old_id=prev.id,
                )
            )
            self._deactivate(prev.id)
            self._compact(version)
            return ("ok", None)
        if kind == "create":
            if live_id is not None:
                return ("exists", None)
            pred = self._predecessor(key)
            self._append_active(
                Entry(
                    id=self.next_id,
                    key=key,
                    value=value,
                    next_key=pred.next_key,
                    version=version,
                    old_next_key_id=pred.id,
                )
            )
            self._append_active(
                Entry(
                    id=self.next_id,
                    key=pred.key,
                    value=pred.value,
                    next_key=key,
                    version=version,
                    old_id=pred.id,
                )
            )
            self._deactivate(pred.id)
            self._compact(version)
            return ("ok", None)
        if kind == "delete":
            if live_id is None:
                return ("not_found", None)
            victim = self.entries[live_id]
            pred = self._predecessor(key)
            self._append_active(
                Entry(
                    id=self.next_id,
                    key=pred.key,
                    value=pred.value,
                    next_key=victim.next_key,
                    version=version,
                    old_id=pred.id,
                    old_next_key_id=victim.id,
                )
            )
            self._deactivate(pred.id)
            self._deactivate(victim.id)
            self._drop_key(key)
            return ("ok", None)
        raise ValueError(f"unknown op kind {kind!r}")

    def _compact(self, version: int) -> None:
        if self.threshold <= 0.0:
            return
        for _ in range(2):
            span = self.next_id - self._advance_frontier() * TWIG_LEAVES
            if span <= 0 or self.active_count / span >= self.threshold:
                return
            fresh_base = (self.next_id // TWIG_LEAVES) * TWIG_LEAVES
            idx = bisect.bisect_left(self.active_ids, self.frontier * TWIG_LEAVES)
            if idx == len(self.active_ids) or self.active_ids[idx] >= fresh_base:
                return
            target = self.entries[self.active_ids[idx]]
            self._append_active(
                Entry(
                    id=self.next_id,
                    key=target.key,
                    value=target.value,
                    next_key=target.next_key,
                    version=version,
                    old_id=target.id,
                )
            )
            self._deactivate(target.id)

    # -- commitments, recomputed from nothing -------------------------------

    def root(self) -> bytes:
        h = self._h
        twig_count = ceil(self.next_id / TWIG_LEAVES)
        null = bytes(32)
        twig_nulls = [null]
        for _ in range(TWIG_LEVELS):
            twig_nulls.append(h(b"\x01" + twig_nulls[-1] + twig_nulls[-1]))

        active = set(self.active_ids)
        twig_roots = []
        for t in range(twig_count):
            level = [
                h(b"\x00" + e.encode())
                for e in self.entries[t * TWIG_LEAVES : (t + 1) * TWIG_LEAVES]
            ]
            for k in range(TWIG_LEVELS):
                if len(level) & 1:
                    level.append(twig_nulls[k])
                level = [
                    h(b"\x01" + level[i] + level[i + 1]) for i in range(0, len(level), 2)
                ]
            bitmap = bytearray(TWIG_LEAVES // 8)
            for eid in range(t * TWIG_LEAVES, min(self.next_id, (t + 1) * TWIG_LEAVES)):
                if eid in active:
                    bitmap[(eid % TWIG_LEAVES) >> 3] |= 1 << (eid & 7)
            twig_roots.append(h(b"\x02" + level[0] + h(b"\x03" + bytes(bitmap))))

        height = max(twig_count - 1, 0).bit_length()
        empty_bits = h(b"\x03" + bytes(TWIG_LEAVES // 8))
        upper_null = h(b"\x02" + twig_nulls[TWIG_LEVELS] + empty_bits)
        nodes = twig_roots
        for _ in range(height):
            if len(nodes) & 1:
                nodes.append(upper_null)
            nodes = [h(b"\x01" + nodes[i] + nodes[i + 1]) for i in range(0, len(nodes), 2)]
            upper_null = h(b"\x01" + upper_null + upper_null)
        return nodes[0]

    def expected_pruned_twigs(self) -> int:
        """Leading twigs that are full and hold no active entry."""
        count = 0
        first_active = self.active_ids[0] if self.active_ids else self.next_id
        while (count + 1) * TWIG_LEAVES <= min(self.next_id, first_active):
            count += 1
        return count


class ReferenceModel:
    """Differential-testing oracle for a whole store (all shards)."""

    def __init__(
        self,
        shard_bits: int = 0,
        hash_name: str = "sha256",
        compaction_threshold: float = 0.0,
    ):
        self.shard_bits = shard_bits
        h = _hasher(hash_name)
        self._h = h
        self.shards = [
            _ShardModel(i, shard_bits, compaction_threshold, h)
            for i in range(1 << shard_bits)
        ]

    def _shard_for(self, key: bytes) -> _ShardModel:
        return self.shards[key[0] >> (8 - self.shard_bits)] if self.shard_bits else self.shards[0]

    def apply_op(self, kind: str, key: bytes, value: bytes | None, version: int):
        """Returns ``(status, value)`` with the engine's status vocabulary."""
        return self._shard_for(key).apply(kind, key, value, version)

    def shard_root(self, shard_id: int) -> bytes:
        return self.shards[shard_id].root()

    def root(self) -> bytes:
        nodes = [shard.root() for shard in self.shards]
        if len(nodes) == 1:
            nodes.append(bytes(32))
        h = self._h
        while len(nodes) > 1:
            nodes = [h(b"\x01" + nodes[i] + nodes[i + 1]) for i in range(0, len(nodes), 2)]
        return nodes[0]

    def snapshot(self) -> dict[bytes, bytes]:
        """Live user keys and values across all shards."""
        state = {}
        for shard in self.shards:
            for key, eid in shard.by_key.items():
                if key != shard.range_min and key != shard.range_max:
                    state[key] = shard.entries[eid].value
        return state

    def entry_at(self, key: bytes) -> Entry | None:
        shard = self._shard_for(key)
        eid = shard.by_key.get(key)
        return shard.entries[eid] if eid is not None else None
