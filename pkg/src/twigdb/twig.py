"""Twigs: fixed 2048-leaf Merkle subtrees with an activity bitmap.

A twig commits to two things at once — the immutable sequence of entry
frames appended to its slots (``entry_root``) and the mutable liveness of
those slots (a 2048-bit bitmap, hashed separately).  The twig root is
``H(0x02 || entry_root || H(0x03 || bitmap))``, so flipping one bit only ever
costs two hashes once the twig is full.

Lifecycle is strictly monotonic::

    FRESH ──(2048th append)──> FULL ──(last bit cleared)──> INACTIVE ──> PRUNED

While FRESH, the twig keeps its leaf digests in memory so the entry root can
be recomputed as appends arrive; the frames themselves are buffered by the
log until the twig fills and is flushed.  A FULL twig retains only its entry
root, bitmap, and cached root (288..320 bytes); a PRUNED twig retains
nothing here.
"""

from __future__ import annotations

import enum

from .errors import (
    CapacityError,
    DoubleDeactivationError,
    LifecycleError,
)
from .merkle import BITMAP_BYTES, TWIG_LEAVES, HashScheme

__all__ = ["TwigState", "ActiveBits", "Twig"]


class TwigState(enum.IntEnum):
    FRESH = 0
    FULL = 1
    INACTIVE = 2
    PRUNED = 3


class ActiveBits:
    """A 2048-bit liveness bitmap (least-significant bit first per byte)."""

    __slots__ = ("_buf",)

    def __init__(self, buf: bytes | None = None):
        if buf is None:
            self._buf = bytearray(BITMAP_BYTES)
        else:
            if len(buf) != BITMAP_BYTES:
                raise ValueError(f"bitmap must be {BITMAP_BYTES} bytes")
            self._buf = bytearray(buf)

    def set_bit(self, slot: int) -> None:
        self._buf[slot >> 3] |= 1 << (slot & 7)

    def clear_bit(self, slot: int) -> None:
        mask = 1 << (slot & 7)
        if not self._buf[slot >> 3] & mask:
            raise DoubleDeactivationError(f"slot {slot} is already inactive")
        self._buf[slot >> 3] &= ~mask

    def test(self, slot: int) -> bool:
        return bool(self._buf[slot >> 3] & (1 << (slot & 7)))

    def popcount(self) -> int:
        return int.from_bytes(self._buf, "little").bit_count()

    def to_bytes(self) -> bytes:
        return bytes(self._buf)

    def iter_set(self, start: int = 0):
        """Yield set slots >= start in ascending order."""
        buf = self._buf
        for slot in range(start, TWIG_LEAVES):
            if buf[slot >> 3] & (1 << (slot & 7)):
                yield slot


class Twig:
    __slots__ = ("index", "state", "bits", "leaves", "leaf_count", "entry_root", "_root", "_dirty")

    def __init__(self, index: int):
        self.index = index
        self.state = TwigState.FRESH
        self.bits = ActiveBits()
        self.leaves = bytearray()
        self.leaf_count = 0
        self.entry_root: bytes | None = None  # fixed once sealed
        self._root: bytes | None = None
        self._dirty = True

    def append_leaf(self, leaf_digest: bytes) -> int:
        """Append a leaf digest to the next slot and mark it active."""
        if self.state != TwigState.FRESH:
            if self.state == TwigState.FULL:
                raise CapacityError(f"twig {self.index} is full")
            raise LifecycleError(f"cannot append to a {self.state.name} twig")
        slot = self.leaf_count
        self.leaves += leaf_digest
        self.leaf_count = slot + 1
        self.bits.set_bit(slot)
        self._dirty = True
        if self.leaf_count == TWIG_LEAVES:
            self.state = TwigState.FULL
        return slot

    def clear_bit(self, slot: int) -> None:
        """Deactivate a slot; a FULL twig whose last bit clears goes INACTIVE."""
        if self.state not in (TwigState.FRESH, TwigState.FULL):
            raise LifecycleError(f"cannot clear bits of a {self.state.name} twig")
        self.bits.clear_bit(slot)
        self._dirty = True
        if self.state == TwigState.FULL and self.bits.popcount() == 0:
            self.state = TwigState.INACTIVE

    def seal_entry_root(self, scheme: HashScheme) -> bytes:
        """Fix the entry root of a filled twig and release its leaf buffer."""
        if self.entry_root is None:
            if self.state == TwigState.FRESH:
                raise LifecycleError("cannot seal a twig that is still filling")
            self.entry_root = scheme.entry_root(self.leaves, self.leaf_count)
        self.leaves = bytearray()
        return self.entry_root

    def root(self, scheme: HashScheme) -> bytes:
        """Current twig root; recomputed only when something changed."""
        if self.state == TwigState.PRUNED:
            if self._root is None:
                raise LifecycleError("pruned twig has no retained root")
            return self._root
        if self._dirty or self._root is None:
            er = self.entry_root
            if er is None:
                er = scheme.entry_root(self.leaves, self.leaf_count)
                if self.state != TwigState.FRESH:
                    self.entry_root = er
            self._root = scheme.combine(er, scheme.bits_hash(self.bits.to_bytes()))
            self._dirty = False
        return self._root

    def prune(self) -> None:
        if self.state != TwigState.INACTIVE:
            raise LifecycleError(f"cannot prune a {self.state.name} twig")
        self.state = TwigState.PRUNED
        self.bits = None
        self.leaves = bytearray()

    def metadata_bytes(self) -> int:
        """In-memory Merkle metadata footprint (payload accounting)."""
        total = 0
        if self.entry_root is not None:
            total += 32
        if self._root is not None:
            total += 32
        if self.bits is not None:
            total += BITMAP_BYTES
        total += len(self.leaves)
        return total
