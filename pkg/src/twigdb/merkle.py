"""Domain-separated hashing and the twig-shaped Merkle kernels.

Every digest in the store is produced through one of four tagged forms so
that leaves, interior nodes, bitmap digests, and twig roots can never be
confused for one another:

    leaf       H(0x00 || entry frame)
    interior   H(0x01 || left || right)
    twig root  H(0x02 || entry_root || bits_root)
    bits       H(0x03 || 256 bitmap bytes)

The hash function itself is configurable (``sha256`` by default, which every
conformance vector in the test suite uses; ``blake2b256`` is also accepted).
Empty positions hash as a chain of null digests: level 0 is 32 zero bytes and
each higher null is the interior hash of two copies of the one below.

Two interchangeable backends implement the bulk kernels.  If the compiled
extension (:mod:`twigdb._merkle_ext`, OpenSSL-backed, SHA-256 only) imported
cleanly it is used automatically; otherwise, or when the environment variable
``TWIGDB_PURE`` is set, a hashlib fallback takes over.  Both keep a running
count of hash compressions so tests can assert hash budgets.
"""

from __future__ import annotations

import hashlib
import os
from typing import Callable

from .errors import ConfigError

try:  # pragma: no cover - exercised only when the extension is absent
    from . import _merkle_ext as _ext
except ImportError:  # pragma: no cover
    _ext = None

__all__ = [
    "DIGEST_SIZE",
    "TWIG_BITS",
    "TWIG_LEAVES",
    "BITMAP_BYTES",
    "HASH_NAMES",
    "HashScheme",
    "hash_invocations",
    "compiled_backend_available",
]

DIGEST_SIZE = 32
TWIG_BITS = 11
TWIG_LEAVES = 1 << TWIG_BITS  # 2048 leaves per twig
BITMAP_BYTES = TWIG_LEAVES // 8

HASH_NAMES = ("sha256", "blake2b256")

_ZERO32 = bytes(DIGEST_SIZE)

_pure_invocations = 0


def _digest_fn(hash_name: str) -> Callable[[bytes], bytes]:
    if hash_name == "sha256":
        _new = hashlib.sha256
    elif hash_name == "blake2b256":
        def _new(data: bytes):
            return hashlib.blake2b(data, digest_size=32)
    else:
        raise ConfigError(f"unknown hash function {hash_name!r}")

    def _digest(data: bytes) -> bytes:
        global _pure_invocations
        _pure_invocations += 1
        return _new(data).digest()

    return _digest


def compiled_backend_available() -> bool:
    return _ext is not None


def hash_invocations() -> int:
    """Hash compressions performed so far, across both backends."""
    total = _pure_invocations
    if _ext is not None:
        total += _ext.hash_invocations()
    return total


class HashScheme:
    """Bound hashing operations plus cached null digests for one hash choice.

    The same instance is shared by every component of a store so that null
    digests are computed once and the two backends cannot be mixed within a
    single tree.
    """

    def __init__(self, hash_name: str = "sha256", *, force_pure: bool = False):
        if hash_name not in HASH_NAMES:
            raise ConfigError(f"unknown hash function {hash_name!r}")
        self.hash_name = hash_name
        use_ext = (
            _ext is not None
            and hash_name == "sha256"
            and not force_pure
            and not os.environ.get("TWIGDB_PURE")
        )
        self.backend = "compiled" if use_ext else "pure"
        self._digest = _digest_fn(hash_name)
        if use_ext:
            self.leaf_hash = _ext.leaf_hash
            self.node_hash = _ext.node_hash
            self.bits_hash = _ext.bits_hash
            self.combine = _ext.combine
        else:
            self.leaf_hash = self._leaf_hash_py
            self.node_hash = self._node_hash_py
            self.bits_hash = self._bits_hash_py
            self.combine = self._combine_py

        # Null digests for the 12 in-twig levels (leaves up to entry root).
        nulls = [_ZERO32]
        for _ in range(TWIG_BITS):
            nulls.append(self.node_hash(nulls[-1], nulls[-1]))
        self._twig_nulls = tuple(nulls)
        self._twig_nulls_cat = b"".join(nulls)
        self.null_bits_root = self.bits_hash(bytes(BITMAP_BYTES))
        self.empty_twig_root = self.combine(nulls[TWIG_BITS], self.null_bits_root)
        # Null digests for levels above the twig roots; 48 levels is far more
        # than any realistic shard (2^48 twigs) so lookups never extend it.
        uppers = [self.empty_twig_root]
        for _ in range(48):
            uppers.append(self.node_hash(uppers[-1], uppers[-1]))
        self._upper_nulls = tuple(uppers)

    # -- single-shot pure fallbacks -------------------------------------

    def _leaf_hash_py(self, frame) -> bytes:
        return self._digest(b"\x00" + bytes(frame))

    def _node_hash_py(self, left: bytes, right: bytes) -> bytes:
        return self._digest(b"\x01" + left + right)

    def _bits_hash_py(self, bits) -> bytes:
        bits = bytes(bits)
        if len(bits) != BITMAP_BYTES:
            raise ValueError("bits_hash expects 256 bitmap bytes")
        return self._digest(b"\x03" + bits)

    def _combine_py(self, entry_root: bytes, bits_root: bytes) -> bytes:
        return self._digest(b"\x02" + entry_root + bits_root)

    # -- null digests ----------------------------------------------------

    def twig_null(self, level: int) -> bytes:
        """Null digest for in-twig level ``level`` (0 = leaves, 11 = root)."""
        return self._twig_nulls[level]

    def upper_null(self, level: int) -> bytes:
        """Null digest ``level`` levels above the twig roots (0 = a pristine twig)."""
        return self._upper_nulls[level]

    # -- bulk kernels ------------------------------------------------------

    def entry_root(self, leaves, count: int) -> bytes:
        """Root of a twig's leaf subtree over ``count`` populated slots.

        ``leaves`` is ``count`` concatenated 32-byte leaf digests; the
        remaining slots up to 2048 are implicitly null.
        """
        if count == 0:
            return self._twig_nulls[TWIG_BITS]
        if count < 0 or count > TWIG_LEAVES:
            raise ValueError("leaf count out of range")
        if self.backend == "compiled":
            return _ext.entry_root(bytes(leaves[: count * 32]), count, self._twig_nulls_cat)
        node_hash = self.node_hash
        level = [bytes(leaves[i * 32 : (i + 1) * 32]) for i in range(count)]
        for k in range(TWIG_BITS):
            if len(level) & 1:
                level.append(self._twig_nulls[k])
            level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        return level[0]

    def fill_subtree(self, heap: bytearray, leaves, count: int) -> None:
        """Materialize a full twig subtree in heap layout for path extraction.

        ``heap`` must be a writable 4096*32-byte buffer; node ``i`` lands at
        ``heap[i*32:(i+1)*32]`` with leaves occupying slots 2048..4095.
        """
        if len(heap) != 4096 * 32:
            raise ValueError("heap must be 4096*32 bytes")
        if count < 0 or count > TWIG_LEAVES:
            raise ValueError("leaf count out of range")
        if self.backend == "compiled":
            _ext.fill_subtree(heap, bytes(leaves[: count * 32]), count)
            return
        base = TWIG_LEAVES * 32
        heap[base : base + count * 32] = leaves[: count * 32]
        heap[base + count * 32 :] = bytes((TWIG_LEAVES - count) * 32)
        node_hash = self.node_hash
        for i in range(TWIG_LEAVES - 1, 0, -1):
            heap[i * 32 : (i + 1) * 32] = node_hash(
                bytes(heap[2 * i * 32 : (2 * i + 1) * 32]),
                bytes(heap[(2 * i + 1) * 32 : (2 * i + 2) * 32]),
            )
