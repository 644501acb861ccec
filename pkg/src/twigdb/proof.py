"""Self-contained Merkle proofs: inclusion, exclusion, and historical state.

A proof carries everything a verifier needs besides the trusted root digest:
the entry frame itself, its twig's activity bitmap, and the sibling digests
from the leaf up through the twig, the shard tree and the shard-root fold.
Verification is a pure function of the proof bytes and the expected root.

Exclusion works on the key ring: the covering entry whose arc strictly
contains the absent key is proven included and active; the arc bounds do the
rest.  Historical proofs anchor at the *currently* active covering entry and
walk backward through the per-entry pointers — ``old_id`` (same key's prior
version) and ``old_next_key_id`` (the entry whose arc this one absorbed) —
until they reach the entry that covered the key at the queried height.  Arcs
partition key space, so exactly one pointer target covers the key at every
step and the verifier can check the walk deterministically; superseded
entries need no activity bit, only their (immutable) Merkle paths plus the
current bitmap digest of their twig.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .entry import NULL_ID, Entry
from .errors import (
    DecodeError,
    HistoryUnavailableError,
    ProofDecodeError,
    ProofError,
)
from .merkle import BITMAP_BYTES, DIGEST_SIZE, TWIG_BITS, TWIG_LEAVES, HashScheme
from .shard import route_shard
from .tree import global_root_digest
from .twig import TwigState

__all__ = [
    "covers",
    "TraceStep",
    "Proof",
    "VerifyResult",
    "verify_proof",
    "Prover",
    "KIND_INCLUSION",
    "KIND_EXCLUSION",
    "KIND_HISTORICAL",
]

KIND_INCLUSION = 1
KIND_EXCLUSION = 2
KIND_HISTORICAL = 3

_FIXED = struct.Struct("<BHBQHHH")  # kind, shard_id, shard_bits, twig, leaf, upper_len, shard_len


def covers(entry_key: bytes, next_key: bytes, probe: bytes) -> bool:
    """Whether the arc [entry_key, next_key) contains ``probe`` on the ring."""
    if probe == entry_key:
        return True
    if entry_key < next_key:
        return entry_key < probe < next_key
    return probe > entry_key or probe < next_key  # wrapping arc


@dataclass
class TraceStep:
    """One backward step of a historical walk: a superseded entry plus the
    digests tying it to the same shard root as the anchor."""

    frame: bytes
    bits_digest: bytes  # current bitmap digest of the entry's twig
    entry_path: list[bytes]
    upper_path: list[bytes]


@dataclass
class Proof:
    kind: int
    shard_id: int
    shard_bits: int
    twig_index: int
    leaf_index: int
    frame: bytes
    bits: bytes
    entry_path: list[bytes]
    upper_path: list[bytes]
    shard_path: list[bytes]
    root: bytes
    subject_key: bytes | None = None  # exclusion: absent key; historical: queried key
    height: int | None = None
    trace: list[TraceStep] = field(default_factory=list)

    # -- wire format -------------------------------------------------------

    def encode(self) -> bytes:
        out = bytearray()
        out += _FIXED.pack(
            self.kind,
            self.shard_id,
            self.shard_bits,
            self.twig_index,
            self.leaf_index,
            len(self.upper_path),
            len(self.shard_path),
        )
        if self.kind in (KIND_EXCLUSION, KIND_HISTORICAL):
            out += len(self.subject_key).to_bytes(2, "little")
            out += self.subject_key
        if self.kind == KIND_HISTORICAL:
            out += self.height.to_bytes(8, "little")
            out += len(self.trace).to_bytes(2, "little")
        out += self.frame
        out += self.bits
        for digest in self.entry_path:
            out += digest
        for digest in self.upper_path:
            out += digest
        for digest in self.shard_path:
            out += digest
        for step in self.trace:
            out += step.frame
            out += step.bits_digest
            for digest in step.entry_path:
                out += digest
            for digest in step.upper_path:
                out += digest
        out += self.root
        return bytes(out)

    @classmethod
    def decode(cls, buf: bytes) -> "Proof":
        try:
            return cls._decode(buf)
        except ProofDecodeError:
            raise
        except (DecodeError, struct.error, OverflowError, IndexError, ValueError) as exc:
            raise ProofDecodeError(f"malformed proof: {exc}") from exc

    @classmethod
    def _decode(cls, buf: bytes) -> "Proof":
        if len(buf) < _FIXED.size:
            raise ProofDecodeError("proof shorter than its fixed header")
        kind, shard_id, shard_bits, twig_index, leaf_index, upper_len, shard_len = (
            _FIXED.unpack_from(buf, 0)
        )
        if kind not in (KIND_INCLUSION, KIND_EXCLUSION, KIND_HISTORICAL):
            raise ProofDecodeError(f"unknown proof kind {kind}")
        if shard_bits > 8 or shard_id >= (1 << shard_bits if shard_bits else 1):
            raise ProofDecodeError("shard id out of range for shard bits")
        if leaf_index >= TWIG_LEAVES:
            raise ProofDecodeError("leaf index out of range")
        pos = _FIXED.size
        subject_key = None
        height = None
        trace_count = 0
        if kind in (KIND_EXCLUSION, KIND_HISTORICAL):
            key_len = int.from_bytes(buf[pos : pos + 2], "little")
            pos += 2
            if not 1 <= key_len <= 256 or pos + key_len > len(buf):
                raise ProofDecodeError("bad subject key length")
            subject_key = bytes(buf[pos : pos + key_len])
            pos += key_len
        if kind == KIND_HISTORICAL:
            if pos + 10 > len(buf):
                raise ProofDecodeError("truncated historical header")
            height = int.from_bytes(buf[pos : pos + 8], "little")
            trace_count = int.from_bytes(buf[pos + 8 : pos + 10], "little")
            pos += 10

        def take_frame() -> bytes:
            nonlocal pos
            entry, consumed = Entry.decode(buf, pos)
            frame = bytes(buf[pos : pos + consumed])
            pos += consumed
            return frame

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(buf):
                raise ProofDecodeError("truncated proof body")
            chunk = bytes(buf[pos : pos + n])
            pos += n
            return chunk

        def take_digests(n: int) -> list[bytes]:
            return [take(DIGEST_SIZE) for _ in range(n)]

        frame = take_frame()
        bits = take(BITMAP_BYTES)
        entry_path = take_digests(TWIG_BITS)
        upper_path = take_digests(upper_len)
        shard_path = take_digests(shard_len)
        trace = []
        for _ in range(trace_count):
            step_frame = take_frame()
            bits_digest = take(DIGEST_SIZE)
            step_entry_path = take_digests(TWIG_BITS)
            step_upper = take_digests(upper_len)
            trace.append(TraceStep(step_frame, bits_digest, step_entry_path, step_upper))
        root = take(DIGEST_SIZE)
        if pos != len(buf):
            raise ProofDecodeError(f"{len(buf) - pos} trailing bytes after proof")
        return cls(
            kind=kind,
            shard_id=shard_id,
            shard_bits=shard_bits,
            twig_index=twig_index,
            leaf_index=leaf_index,
            frame=frame,
            bits=bits,
            entry_path=entry_path,
            upper_path=upper_path,
            shard_path=shard_path,
            root=root,
            subject_key=subject_key,
            height=height,
            trace=trace,
        )


@dataclass
class VerifyResult:
    ok: bool
    reason: str
    key: bytes | None = None
    value: bytes | None = None
    present: bool | None = None
    height: int | None = None

    def __bool__(self) -> bool:
        return self.ok


def _fold(scheme: HashScheme, node: bytes, index: int, siblings: list[bytes]) -> bytes:
    for sibling in siblings:
        if index & 1:
            node = scheme.node_hash(sibling, node)
        else:
            node = scheme.node_hash(node, sibling)
        index >>= 1
    return node


def _bit_is_set(bits: bytes, slot: int) -> bool:
    return bool(bits[slot >> 3] & (1 << (slot & 7)))


def verify_proof(
    scheme: HashScheme, proof: Proof, expected_root: bytes | None = None
) -> VerifyResult:
    """Statelessly check a decoded proof; trusts nothing but ``expected_root``."""

    def reject(reason: str) -> VerifyResult:
        return VerifyResult(False, reason, height=proof.height)

    if expected_root is not None and proof.root != expected_root:
        return reject("claimed root differs from the expected root")
    try:
        entry, consumed = Entry.decode(proof.frame)
    except DecodeError as exc:  # decode() already validated; belt and braces
        return reject(f"anchor frame: {exc}")
    if consumed != len(proof.frame):
        return reject("anchor frame has trailing bytes")
    if entry.id // TWIG_LEAVES != proof.twig_index or entry.id % TWIG_LEAVES != proof.leaf_index:
        return reject("entry id disagrees with its claimed twig slot")
    leaf = scheme.leaf_hash(proof.frame)
    entry_root = _fold(scheme, leaf, proof.leaf_index, proof.entry_path)
    twig_root = scheme.combine(entry_root, scheme.bits_hash(proof.bits))
    shard_root = _fold(scheme, twig_root, proof.twig_index, proof.upper_path)
    root = _fold(scheme, shard_root, proof.shard_id, proof.shard_path)
    if root != proof.root:
        return reject("digest chain does not reach the claimed root")
    if not _bit_is_set(proof.bits, proof.leaf_index):
        return reject("anchor entry is not active")

    if proof.kind == KIND_INCLUSION:
        return VerifyResult(True, "included", key=entry.key, value=entry.value, present=True)

    subject = proof.subject_key
    if route_shard(subject, proof.shard_bits) != proof.shard_id:
        return reject("subject key does not route to the proof's shard")
    if proof.kind == KIND_EXCLUSION:
        if subject == entry.key:
            return reject("subject key is the covering entry's own key")
        if not covers(entry.key, entry.next_key, subject):
            return reject("covering entry's arc does not contain the subject key")
        return VerifyResult(True, "excluded", key=subject, present=False)

    # historical
    if not covers(entry.key, entry.next_key, subject):
        return reject("anchor arc does not contain the subject key")
    bound = (proof.height + 1) << 24
    current = entry
    for i, step in enumerate(proof.trace):
        if current.version < bound:
            return reject(f"trace step {i} walks past the queried height")
        try:
            nxt, nconsumed = Entry.decode(step.frame)
        except DecodeError as exc:
            return reject(f"trace step {i}: {exc}")
        if nconsumed != len(step.frame):
            return reject(f"trace step {i} frame has trailing bytes")
        if nxt.id not in (current.old_id, current.old_next_key_id) or nxt.id == NULL_ID:
            return reject(f"trace step {i} is not referenced by the previous entry")
        if not covers(nxt.key, nxt.next_key, subject):
            return reject(f"trace step {i} arc does not contain the subject key")
        step_leaf = scheme.leaf_hash(step.frame)
        step_er = _fold(scheme, step_leaf, nxt.id % TWIG_LEAVES, step.entry_path)
        step_twig = scheme.combine(step_er, step.bits_digest)
        if _fold(scheme, step_twig, nxt.id // TWIG_LEAVES, step.upper_path) != shard_root:
            return reject(f"trace step {i} does not chain to the shard root")
        current = nxt
    if current.version >= bound:
        return reject("trace stops before the queried height")
    present = current.key == subject
    return VerifyResult(
        True,
        "historical state",
        key=subject,
        value=current.value if present else None,
        present=present,
        height=proof.height,
    )


class Prover:
    """Builds proofs from live shard state; valid until the next commit.

    Twig subtrees are materialized lazily and memoized, so a batch of proofs
    touching the same twig pays its span read and 2048 leaf hashes once.
    """

    def __init__(self, scheme: HashScheme, shard_bits: int, shards, shard_roots):
        self.scheme = scheme
        self.shard_bits = shard_bits
        self.shards = shards
        self.shard_roots = list(shard_roots)
        self._heaps: dict[tuple[int, int], bytearray] = {}

    # -- plumbing -----------------------------------------------------------

    def _shard_for(self, key: bytes):
        return self.shards[route_shard(key, self.shard_bits)]

    def _heap(self, shard, twig_index: int) -> bytearray:
        memo_key = (shard.shard_id, twig_index)
        heap = self._heaps.get(memo_key)
        if heap is not None:
            return heap
        twig = shard.twigs.get(twig_index)
        if twig is not None and twig.state == TwigState.FRESH:
            leaves, count = twig.leaves, twig.leaf_count
        elif twig_index < shard.log.flushed_twigs:
            scheme = self.scheme
            leaves = bytearray()
            for entry in shard.log.read_twig_frames(twig_index):
                leaves += scheme.leaf_hash(entry.encode())
            count = TWIG_LEAVES
        elif twig is not None:
            raise ProofError(f"twig {twig_index} is sealed but not yet committed")
        else:
            raise HistoryUnavailableError(f"twig {twig_index} has been pruned")
        heap = bytearray(4096 * DIGEST_SIZE)
        self.scheme.fill_subtree(heap, leaves, count)
        self._heaps[memo_key] = heap
        return heap

    def _entry_path(self, shard, entry_id: int) -> list[bytes]:
        heap = self._heap(shard, entry_id // TWIG_LEAVES)
        idx = TWIG_LEAVES + entry_id % TWIG_LEAVES
        path = []
        for _ in range(TWIG_BITS):
            sib = idx ^ 1
            path.append(bytes(heap[sib * DIGEST_SIZE : (sib + 1) * DIGEST_SIZE]))
            idx >>= 1
        return path

    def _twig_bits(self, shard, twig_index: int) -> bytes:
        twig = shard.twigs.get(twig_index)
        if twig is None or twig.bits is None:
            raise HistoryUnavailableError(f"twig {twig_index} has been pruned")
        return twig.bits.to_bytes()

    def _shard_path(self, shard_id: int) -> list[bytes]:
        nodes = list(self.shard_roots)
        if len(nodes) == 1:
            nodes.append(bytes(DIGEST_SIZE))
        path = []
        idx = shard_id
        while len(nodes) > 1:
            path.append(nodes[idx ^ 1])
            nodes = [
                self.scheme.node_hash(nodes[i], nodes[i + 1]) for i in range(0, len(nodes), 2)
            ]
            idx >>= 1
        return path

    def _anchor(self, shard, entry: Entry, kind: int, **extra) -> Proof:
        return Proof(
            kind=kind,
            shard_id=shard.shard_id,
            shard_bits=self.shard_bits,
            twig_index=entry.id // TWIG_LEAVES,
            leaf_index=entry.id % TWIG_LEAVES,
            frame=entry.encode(),
            bits=self._twig_bits(shard, entry.id // TWIG_LEAVES),
            entry_path=self._entry_path(shard, entry.id),
            upper_path=shard.tree.sibling_path(entry.id // TWIG_LEAVES),
            shard_path=self._shard_path(shard.shard_id),
            root=self.root(),
            **extra,
        )

    def root(self) -> bytes:
        return global_root_digest(self.scheme, self.shard_roots)

    # -- proof builders --------------------------------------------------------

    def prove_current(self, key: bytes) -> Proof:
        """Inclusion proof if the key is present, exclusion proof otherwise."""
        shard = self._shard_for(key)
        entry, _ = shard.covering(key)
        if entry.key == key:
            return self._anchor(shard, entry, KIND_INCLUSION)
        return self._anchor(shard, entry, KIND_EXCLUSION, subject_key=key)

    def prove_historical(self, key: bytes, height: int) -> Proof:
        shard = self._shard_for(key)
        anchor, _ = shard.covering(key)
        bound = (height + 1) << 24
        trace = []
        current = anchor
        while current.version >= bound:
            nxt = None
            for pointer in (current.old_id, current.old_next_key_id):
                if pointer == NULL_ID:
                    continue
                candidate = shard.log.read_entry_by_id(pointer)
                if covers(candidate.key, candidate.next_key, key):
                    nxt = candidate
                    break
            if nxt is None:
                raise ProofError(
                    f"timeline of {key.hex()} is broken at entry {current.id}"
                )
            twig_index = nxt.id // TWIG_LEAVES
            trace.append(
                TraceStep(
                    frame=nxt.encode(),
                    bits_digest=self.scheme.bits_hash(self._twig_bits(shard, twig_index)),
                    entry_path=self._entry_path(shard, nxt.id),
                    upper_path=shard.tree.sibling_path(twig_index),
                )
            )
            current = nxt
        return self._anchor(
            shard, anchor, KIND_HISTORICAL, subject_key=key, height=height, trace=trace
        )

    def resolve_historical(self, key: bytes, height: int) -> tuple[bool, bytes | None]:
        """Engine-side historical point query (no proof assembly)."""
        shard = self._shard_for(key)
        current, _ = shard.covering(key)
        bound = (height + 1) << 24
        while current.version >= bound:
            nxt = None
            for pointer in (current.old_id, current.old_next_key_id):
                if pointer == NULL_ID:
                    continue
                candidate = shard.log.read_entry_by_id(pointer)
                if covers(candidate.key, candidate.next_key, key):
                    nxt = candidate
                    break
            if nxt is None:
                raise ProofError(f"timeline of {key.hex()} is broken at entry {current.id}")
            current = nxt
        if current.key == key:
            return True, current.value
        return False, None
