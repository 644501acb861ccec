"""Per-shard append-only entry log with exact IO accounting.

Files owned per shard (``N`` is the shard id):

    shard-N.qlog    concatenated entry frames of *full* twigs, flushed one
                    twig (2048 frames) per sequential write
    shard-N.troots  32-byte entry root per flushed twig, appended with the
                    flush so startup never re-hashes full twigs
    shard-N.fresh   atomic snapshot of the still-filling twig's frames,
                    rewritten at each commit barrier (fresh-twig entries
                    otherwise live only in memory)

Appends first land in a pending buffer keyed by their final log position —
positions are assigned at append time, so the index can point at an entry
before its twig ever reaches the disk.  Reads served from that buffer count
as ``memory_reads``; only file reads count as ``entry_reads``.  A committer
marks its Merkleization phase through the counters object, during which any
physical IO would be booked to the merkleization counters (the engine is
structured so those stay zero, and tests assert it).

Replay trusts the store manifest for *what* is committed (next id, durable
byte tail) but not for where every frame lives: a crash can leave committed
fresh-twig frames only in the qlog bytes *past* the committed tail (the twig
was flushed, destroying the previous snapshot, before the new manifest
landed).  Replay therefore parses the committed range strictly, then
salvages decodable frames beyond it best-effort, then merges the snapshot,
all deduplicated by id; every committed id must turn up somewhere.
"""

from __future__ import annotations

import contextlib
import os
import threading
from array import array

from .entry import HEADER_SIZE, Entry
from .errors import ConsistencyError, CorruptionError, DecodeError, StorageError
from .hooks import crash_point
from .merkle import TWIG_LEAVES

__all__ = ["IoCounters", "EntryLog"]

_READ_CHUNK = 4096


class IoCounters:
    """Physical-operation tallies for one shard (aggregated by the store)."""

    FIELDS = (
        "entry_reads",
        "memory_reads",
        "span_reads",
        "flush_writes",
        "flushed_bytes",
        "snapshot_writes",
        "entries_appended",
        "merkleization_reads",
        "merkleization_writes",
        "cache_misses",
    )

    __slots__ = FIELDS + ("_phase",)

    def __init__(self):
        for name in self.FIELDS:
            setattr(self, name, 0)
        # Thread-local so a committer thread's hashing phase never
        # re-attributes a concurrent updater thread's reads.
        self._phase = threading.local()

    @contextlib.contextmanager
    def merkle_phase(self):
        self._phase.active = True
        try:
            yield
        finally:
            self._phase.active = False

    def read_hit(self):
        if getattr(self._phase, "active", False):
            self.merkleization_reads += 1
        else:
            self.entry_reads += 1

    def write_hit(self, nbytes: int):
        if getattr(self._phase, "active", False):
            self.merkleization_writes += 1
        else:
            self.flush_writes += 1
            self.flushed_bytes += nbytes

    def snapshot(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}


class EntryLog:
    def __init__(self, directory: str, shard_id: int, counters: IoCounters | None = None):
        self.directory = directory
        self.shard_id = shard_id
        self.counters = counters if counters is not None else IoCounters()
        self.qlog_path = os.path.join(directory, f"shard-{shard_id}.qlog")
        self.troots_path = os.path.join(directory, f"shard-{shard_id}.troots")
        self.fresh_path = os.path.join(directory, f"shard-{shard_id}.fresh")
        try:
            self._fd = os.open(self.qlog_path, os.O_RDWR | os.O_CREAT, 0o644)
            self._troots_fd = os.open(self.troots_path, os.O_RDWR | os.O_CREAT, 0o644)
        except OSError as exc:
            raise StorageError(f"cannot open shard {shard_id} log: {exc}") from exc
        self._lock = threading.Lock()
        self.offsets = array("Q")  # entry id -> log position
        self.pending: dict[int, bytes] = {}  # position -> frame, not yet durable
        self.durable_tail = 0
        self.logical_tail = 0
        self.flushed_twigs = 0
        self.troots: list[bytes] = []

    # -- appends ------------------------------------------------------------

    @property
    def next_id(self) -> int:
        return len(self.offsets)

    def append(self, frame: bytes) -> int:
        """Buffer one frame; returns the position it will occupy on disk."""
        if len(frame) % 8:
            raise ConsistencyError("frames must be 8-byte aligned")
        with self._lock:
            position = self.logical_tail
            self.offsets.append(position)
            self.pending[position] = frame
            self.logical_tail = position + len(frame)
            self.counters.entries_appended += 1
        crash_point("append")
        return position

    def position_of(self, entry_id: int) -> int:
        return self.offsets[entry_id]

    def is_flushed(self, position: int) -> bool:
        return position < self.durable_tail

    # -- reads ----------------------------------------------------------------

    def read_entry_at(self, position: int) -> Entry:
        with self._lock:
            if position >= self.durable_tail:
                frame = self.pending.get(position)
                if frame is None:
                    raise ConsistencyError(f"no entry at position {position}")
                self.counters.memory_reads += 1
                entry, _ = Entry.decode(frame)
                return entry
            self.counters.read_hit()
        buf = os.pread(self._fd, _READ_CHUNK, position)
        if len(buf) < HEADER_SIZE:
            raise CorruptionError(f"short read at position {position}")
        try:
            entry, consumed = Entry.decode(buf)
        except DecodeError:
            # frame longer than the first chunk: size it from the header
            klen = int.from_bytes(buf[32:34], "little")
            nlen = int.from_bytes(buf[34:36], "little")
            vlen = int.from_bytes(buf[36:40], "little")
            total = (HEADER_SIZE + klen + nlen + vlen + 7) & ~7
            buf = os.pread(self._fd, total, position)
            entry, consumed = Entry.decode(buf)
        return entry

    def read_entry_by_id(self, entry_id: int) -> Entry:
        if not 0 <= entry_id < len(self.offsets):
            raise ConsistencyError(f"entry id {entry_id} out of range")
        return self.read_entry_at(self.offsets[entry_id])

    def read_twig_frames(self, twig_index: int) -> list[Entry]:
        """All entries of one twig: one span read if flushed, memory otherwise."""
        first = twig_index * TWIG_LEAVES
        last = min(len(self.offsets), first + TWIG_LEAVES)
        if first >= last:
            return []
        with self._lock:
            start = self.offsets[first]
            if start < self.durable_tail:
                end = self.offsets[last] if last < len(self.offsets) else self.durable_tail
                end = min(end, self.durable_tail)
                self.counters.span_reads += 1
                span = None
            else:
                span = b"".join(self.pending[self.offsets[i]] for i in range(first, last))
                self.counters.memory_reads += 1
        if span is None:
            span = os.pread(self._fd, end - start, start)
            if len(span) != end - start:
                raise CorruptionError(f"short span read for twig {twig_index}")
        entries = []
        pos = 0
        for _ in range(last - first):
            entry, consumed = Entry.decode(span, pos)
            entries.append(entry)
            pos += consumed
        return entries

    # -- flushing --------------------------------------------------------------

    def flush_twig(self, twig_index: int, entry_root: bytes) -> None:
        """Write one full twig's frames as a single sequential write."""
        first = twig_index * TWIG_LEAVES
        if twig_index != self.flushed_twigs:
            raise ConsistencyError(
                f"twigs flush in order: expected {self.flushed_twigs}, got {twig_index}"
            )
        with self._lock:
            positions = [self.offsets[i] for i in range(first, first + TWIG_LEAVES)]
            if positions[0] != self.durable_tail:
                raise ConsistencyError("flush does not start at the durable tail")
            data = b"".join(self.pending[p] for p in positions)
            written = os.pwrite(self._fd, data, self.durable_tail)
            if written != len(data):
                raise StorageError("short twig write")
            os.pwrite(self._troots_fd, entry_root, 32 * self.flushed_twigs)
            for p in positions:
                del self.pending[p]
            self.durable_tail += len(data)
            self.flushed_twigs += 1
            self.troots.append(entry_root)
            self.counters.write_hit(len(data))
        crash_point("flush")

    def barrier(self) -> None:
        """Synchronous durability point: fsync log and twig-root sidecar."""
        os.fsync(self._fd)
        os.fsync(self._troots_fd)
        crash_point("barrier")

    def write_fresh_snapshot(self) -> None:
        """Atomically persist the pending (fresh-twig) frames."""
        with self._lock:
            items = sorted(self.pending.items())
            data = b"".join(frame for _, frame in items)
        tmp = self.fresh_path + ".tmp"
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
        try:
            os.write(fd, data)
            os.fsync(fd)
        finally:
            os.close(fd)
        os.replace(tmp, self.fresh_path)
        self.counters.snapshot_writes += 1
        crash_point("snapshot")

    # -- recovery ------------------------------------------------------------

    def replay(self, committed_next_id: int, committed_tail: int):
        """Yield (entry, position) for every committed entry, oldest first.

        Rebuilds the in-memory log state as a side effect; the caller must
        drain the generator.  Bytes past the committed tail are either
        salvage (committed ids whose snapshot a later, unfinished commit
        already replaced) or garbage to be overwritten; the id sequence and
        the committed id count decide which.
        """
        file_size = os.fstat(self._fd).st_size
        if file_size < committed_tail:
            raise CorruptionError(
                f"shard {self.shard_id}: log is shorter than the manifest tail "
                f"({file_size} < {committed_tail})"
            )
        if committed_tail and not committed_next_id:
            raise CorruptionError(f"shard {self.shard_id}: tail without entries")
        pos = 0
        salvage: dict[int, bytes] = {}
        salvage_id = None
        while True:
            frame, entry = self._read_frame_at(pos, file_size)
            in_committed = pos < committed_tail
            if entry is None:
                if in_committed:
                    raise CorruptionError(
                        f"shard {self.shard_id}: committed log bytes at {pos} are damaged"
                    )
                break
            if in_committed:
                if entry.id != len(self.offsets) or entry.id >= committed_next_id:
                    raise CorruptionError(
                        f"shard {self.shard_id}: id discontinuity at position {pos}"
                    )
                if pos + len(frame) > committed_tail:
                    raise CorruptionError(
                        f"shard {self.shard_id}: frame at {pos} straddles the committed tail"
                    )
                self.offsets.append(pos)
                yield entry, pos
            else:
                if salvage_id is None:
                    salvage_id = len(self.offsets)
                if entry.id != salvage_id or entry.id >= committed_next_id:
                    break
                salvage[entry.id] = frame
                salvage_id += 1
            pos += len(frame)
            if pos >= file_size:
                break
        self.durable_tail = committed_tail
        self.logical_tail = committed_tail
        if len(self.offsets) % TWIG_LEAVES:
            raise CorruptionError(
                f"shard {self.shard_id}: durable log is not twig-aligned"
            )
        self.flushed_twigs = len(self.offsets) // TWIG_LEAVES
        for frame in self._snapshot_frames():
            entry, _ = Entry.decode(frame)
            salvage.setdefault(entry.id, frame)
        for eid in range(len(self.offsets), committed_next_id):
            frame = salvage.get(eid)
            if frame is None:
                raise CorruptionError(
                    f"shard {self.shard_id}: committed entry {eid} is unrecoverable"
                )
            entry, _ = Entry.decode(frame)
            position = self.logical_tail
            self.offsets.append(position)
            self.pending[position] = frame
            self.logical_tail = position + len(frame)
            yield entry, position
        self._load_troots()

    def _read_frame_at(self, pos: int, file_size: int):
        """Decode one frame at ``pos``; (None, None) if undecodable/truncated."""
        if pos + HEADER_SIZE > file_size:
            return None, None
        buf = os.pread(self._fd, 1 << 20, pos)
        try:
            entry, consumed = Entry.decode(buf)
        except DecodeError:
            klen = int.from_bytes(buf[32:34], "little")
            nlen = int.from_bytes(buf[34:36], "little")
            vlen = int.from_bytes(buf[36:40], "little")
            total = (HEADER_SIZE + klen + nlen + vlen + 7) & ~7
            if total <= len(buf) or pos + total > file_size:
                return None, None
            buf = os.pread(self._fd, total, pos)
            try:
                entry, consumed = Entry.decode(buf)
            except DecodeError:
                return None, None
        return bytes(buf[:consumed]), entry

    def _snapshot_frames(self) -> list[bytes]:
        try:
            with open(self.fresh_path, "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            return []
        frames = []
        pos = 0
        while pos < len(data):
            try:
                entry, consumed = Entry.decode(data, pos)
            except DecodeError:
                break  # torn snapshot tail: the manifest decides what matters
            frames.append(bytes(data[pos : pos + consumed]))
            pos += consumed
        return frames

    def _load_troots(self) -> None:
        with open(self.troots_path, "rb") as fh:
            data = fh.read()
        roots = [data[i : i + 32] for i in range(0, len(data) - len(data) % 32, 32)]
        self.troots = roots[: self.flushed_twigs]  # drop uncommitted extras

    def missing_troots(self) -> list[int]:
        """Flushed twigs whose persisted entry root is absent (crash repair)."""
        return list(range(len(self.troots), self.flushed_twigs))

    def repair_troot(self, twig_index: int, entry_root: bytes) -> None:
        if twig_index != len(self.troots):
            raise ConsistencyError("troot repair out of order")
        os.pwrite(self._troots_fd, entry_root, 32 * twig_index)
        self.troots.append(entry_root)

    # -- misc -------------------------------------------------------------------

    def pending_bytes(self) -> int:
        return self.logical_tail - self.durable_tail

    def close(self) -> None:
        for fd in (self._fd, self._troots_fd):
            if fd < 0:
                continue
            try:
                os.fsync(fd)
            except OSError:
                pass
            os.close(fd)
        self._fd = self._troots_fd = -1
