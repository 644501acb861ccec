"""Entry records and their wire format.

An entry is the immutable unit of storage: it binds a key to a value and to
the key ring (``next_key`` points at the smallest active key greater than
this one), and it carries back-links used for history traversal.  Entries are
serialized into self-delimiting little-endian frames:

    offset  size  field
    ------  ----  ---------------------------------------------
         0     8  id
         8     8  version        (block_height << 24 | tx_index)
        16     8  old_id         (previous entry for this key, or NULL_ID)
        24     8  old_next_key_id (entry once holding next_key, or NULL_ID)
        32     2  key_len        (1..256)
        34     2  next_key_len   (1..256)
        36     4  value_len      (top byte must be zero, so < 2^24)
        40     *  key || next_key || value
         *     *  zero padding up to a multiple of 8 bytes

The total frame length is derivable from the fixed 40-byte header, so frames
can be concatenated into a log and re-split without any out-of-band framing.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .errors import DecodeError, EncodeError

__all__ = [
    "NULL_ID",
    "KEY_LEN_MIN",
    "KEY_LEN_MAX",
    "VALUE_LEN_MAX",
    "HEADER_SIZE",
    "Entry",
    "pack_version",
    "unpack_version",
    "canonical_key",
    "frame_size",
]

NULL_ID = 2**64 - 1  # reserved: "no entry"

KEY_LEN_MIN = 1
KEY_LEN_MAX = 256
VALUE_LEN_MAX = 2**24 - 1
TX_INDEX_MAX = 2**24 - 1

HEADER_SIZE = 40
_HEADER = struct.Struct("<QQQQHHI")
_PAD = 8


def pack_version(block_height: int, tx_index: int) -> int:
    """Pack a (block, transaction) pair into one orderable 64-bit version."""
    if not 0 <= tx_index <= TX_INDEX_MAX:
        raise EncodeError(f"tx_index {tx_index} out of range")
    if not 0 <= block_height < 2**40:
        raise EncodeError(f"block height {block_height} out of range")
    return (block_height << 24) | tx_index


def unpack_version(version: int) -> tuple[int, int]:
    return version >> 24, version & TX_INDEX_MAX


def canonical_key(raw_key: bytes) -> bytes:
    """Map an application key to its fixed 32-byte canonical form.

    Canonicalization is always SHA-256 regardless of the tree hash, so that
    shard routing stays stable across hash configurations.
    """
    return hashlib.sha256(raw_key).digest()


def frame_size(key_len: int, next_key_len: int, value_len: int) -> int:
    raw = HEADER_SIZE + key_len + next_key_len + value_len
    return (raw + _PAD - 1) & ~(_PAD - 1)


@dataclass
class Entry:
    """One immutable record of the append-only log."""

    id: int
    key: bytes
    value: bytes
    next_key: bytes
    version: int
    old_id: int = NULL_ID
    old_next_key_id: int = NULL_ID

    def encode(self) -> bytes:
        """Serialize to a padded little-endian frame."""
        klen, nlen, vlen = len(self.key), len(self.next_key), len(self.value)
        if not KEY_LEN_MIN <= klen <= KEY_LEN_MAX:
            raise EncodeError(f"key length {klen} outside 1..256")
        if not KEY_LEN_MIN <= nlen <= KEY_LEN_MAX:
            raise EncodeError(f"next_key length {nlen} outside 1..256")
        if vlen > VALUE_LEN_MAX:
            raise EncodeError(f"value length {vlen} exceeds {VALUE_LEN_MAX}")
        if not 0 <= self.id < NULL_ID:
            raise EncodeError("entry id must be a u64 below NULL_ID")
        for name, ref in (("old_id", self.old_id), ("old_next_key_id", self.old_next_key_id)):
            if not 0 <= ref <= NULL_ID:
                raise EncodeError(f"{name} is not a u64")
        if not 0 <= self.version < 2**64:
            raise EncodeError("version is not a u64")
        header = _HEADER.pack(
            self.id, self.version, self.old_id, self.old_next_key_id, klen, nlen, vlen
        )
        body = header + self.key + self.next_key + self.value
        return body + bytes(-len(body) % _PAD)

    @property
    def encoded_size(self) -> int:
        return frame_size(len(self.key), len(self.next_key), len(self.value))

    @classmethod
    def decode(cls, buf, offset: int = 0) -> tuple["Entry", int]:
        """Parse one frame at ``offset``; returns (entry, bytes consumed).

        Raises :class:`DecodeError` on truncation, length fields outside
        their bounds, or nonzero padding.
        """
        if len(buf) - offset < HEADER_SIZE:
            raise DecodeError("truncated frame header")
        eid, version, old_id, old_nk_id, klen, nlen, vlen = _HEADER.unpack_from(buf, offset)
        if not KEY_LEN_MIN <= klen <= KEY_LEN_MAX:
            raise DecodeError(f"key length {klen} outside 1..256")
        if not KEY_LEN_MIN <= nlen <= KEY_LEN_MAX:
            raise DecodeError(f"next_key length {nlen} outside 1..256")
        if vlen > VALUE_LEN_MAX:
            raise DecodeError("value length top byte is not zero")
        total = frame_size(klen, nlen, vlen)
        if len(buf) - offset < total:
            raise DecodeError("truncated frame body")
        pos = offset + HEADER_SIZE
        key = bytes(buf[pos : pos + klen])
        pos += klen
        next_key = bytes(buf[pos : pos + nlen])
        pos += nlen
        value = bytes(buf[pos : pos + vlen])
        pos += vlen
        if bytes(buf[pos : offset + total]).strip(b"\x00"):
            raise DecodeError("nonzero frame padding")
        entry = cls(
            id=eid,
            key=key,
            value=value,
            next_key=next_key,
            version=version,
            old_id=old_id,
            old_next_key_id=old_nk_id,
        )
        return entry, total
