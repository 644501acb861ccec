"""Wire-format tests for entry frames.

The frozen byte vectors below were computed by hand from the frame layout
(40-byte header, then key || next_key || value, zero-padded to a multiple of
8) so they are independent of the implementation.
"""

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twigdb.entry import (
    NULL_ID,
    Entry,
    canonical_key,
    frame_size,
    pack_version,
    unpack_version,
)
from twigdb.errors import DecodeError, EncodeError

# Minimal entry: id 0, version 0, no back-links, 1-byte key/next_key, empty
# value.  40 + 1 + 1 + 0 = 42, padded up to 48 bytes.
MINIMAL = bytes.fromhex(
    "0000000000000000"  # id = 0
    "0000000000000000"  # version = 0
    "ffffffffffffffff"  # old_id = NULL_ID
    "ffffffffffffffff"  # old_next_key_id = NULL_ID
    "0100"              # key_len = 1
    "0100"              # next_key_len = 1
    "00000000"          # value_len = 0
    "6b"                # key = b"k"
    "6d"                # next_key = b"m"
    "000000000000"      # padding to 48
)

# Every field nontrivial: version = (3 << 24) | 7, 3-byte value, 1 pad byte.
FULL = bytes.fromhex(
    "0500000000000000"  # id = 5
    "0700000300000000"  # version = 50331655
    "0200000000000000"  # old_id = 2
    "ffffffffffffffff"  # old_next_key_id = NULL_ID
    "0200"              # key_len = 2
    "0200"              # next_key_len = 2
    "03000000"          # value_len = 3
    "6162"              # key = b"ab"
    "6364"              # next_key = b"cd"
    "58595a"            # value = b"XYZ"
    "00"                # padding to 48
)


def test_minimal_entry_frozen_bytes():
    e = Entry(id=0, key=b"k", value=b"", next_key=b"m", version=0)
    frame = e.encode()
    assert len(frame) == 48
    assert frame[:8] == bytes(8)
    assert frame == MINIMAL


def test_full_entry_frozen_bytes():
    e = Entry(
        id=5,
        key=b"ab",
        value=b"XYZ",
        next_key=b"cd",
        version=pack_version(3, 7),
        old_id=2,
        old_next_key_id=NULL_ID,
    )
    assert e.encode() == FULL


def test_decode_frozen_bytes():
    e, consumed = Entry.decode(FULL)
    assert consumed == 48
    assert (e.id, e.key, e.value, e.next_key) == (5, b"ab", b"XYZ", b"cd")
    assert unpack_version(e.version) == (3, 7)
    assert e.old_id == 2 and e.old_next_key_id == NULL_ID


def test_version_packing():
    assert pack_version(3, 7) == 50331655
    assert pack_version(0, 0) == 0
    assert unpack_version(50331655) == (3, 7)
    with pytest.raises(EncodeError):
        pack_version(0, 2**24)


def test_canonical_key_is_sha256():
    assert canonical_key(b"hello") == hashlib.sha256(b"hello").digest()
    assert len(canonical_key(b"")) == 32


def test_frame_is_self_delimiting():
    buf = FULL + b"\xde\xad\xbe\xef" * 4
    _, consumed = Entry.decode(buf)
    assert consumed == len(FULL)
    two = MINIMAL + FULL
    e1, n1 = Entry.decode(two)
    e2, n2 = Entry.decode(two, n1)
    assert e1.id == 0 and e2.id == 5 and n1 + n2 == len(two)


def test_decode_rejects_value_len_top_byte():
    # value_len = 2^24 sets the top byte; the frame must not parse.
    bad = bytearray(FULL)
    bad[36:40] = (1 << 24).to_bytes(4, "little")
    with pytest.raises(DecodeError):
        Entry.decode(bytes(bad))


def test_decode_rejects_bad_key_lengths():
    for klen in (0, 257):
        bad = bytearray(MINIMAL)
        bad[32:34] = klen.to_bytes(2, "little")
        with pytest.raises(DecodeError):
            Entry.decode(bytes(bad))


def test_decode_rejects_truncation():
    with pytest.raises(DecodeError):
        Entry.decode(FULL[:39])
    with pytest.raises(DecodeError):
        Entry.decode(FULL[:47])


def test_decode_rejects_nonzero_padding():
    bad = bytearray(MINIMAL)
    bad[-1] = 0x01
    with pytest.raises(DecodeError):
        Entry.decode(bytes(bad))


def test_encode_bounds():
    with pytest.raises(EncodeError):
        Entry(id=1, key=b"", value=b"", next_key=b"x", version=0).encode()
    with pytest.raises(EncodeError):
        Entry(id=1, key=b"k" * 257, value=b"", next_key=b"x", version=0).encode()
    with pytest.raises(EncodeError):
        Entry(id=1, key=b"k", value=b"v" * 2**24, next_key=b"x", version=0).encode()
    with pytest.raises(EncodeError):
        Entry(id=NULL_ID, key=b"k", value=b"", next_key=b"x", version=0).encode()


def test_large_value_round_trip():
    e = Entry(id=9, key=b"K" * 256, value=b"v" * (2**24 - 1), next_key=b"N" * 256, version=1)
    frame = e.encode()
    assert len(frame) == frame_size(256, 256, 2**24 - 1)
    back, consumed = Entry.decode(frame)
    assert consumed == len(frame) and back == e


@settings(max_examples=200, deadline=None)
@given(
    eid=st.integers(0, NULL_ID - 1),
    version=st.integers(0, 2**64 - 1),
    old_id=st.one_of(st.just(NULL_ID), st.integers(0, 2**63)),
    old_nk=st.one_of(st.just(NULL_ID), st.integers(0, 2**63)),
    key=st.binary(min_size=1, max_size=256),
    next_key=st.binary(min_size=1, max_size=256),
    value=st.binary(min_size=0, max_size=2048),
)
def test_round_trip_property(eid, version, old_id, old_nk, key, next_key, value):
    e = Entry(
        id=eid,
        key=key,
        value=value,
        next_key=next_key,
        version=version,
        old_id=old_id,
        old_next_key_id=old_nk,
    )
    frame = e.encode()
    assert len(frame) % 8 == 0
    assert len(frame) == e.encoded_size
    back, consumed = Entry.decode(frame + b"\xff")  # trailing garbage ignored
    assert consumed == len(frame)
    assert back == e
