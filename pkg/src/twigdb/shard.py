"""Single-shard key-value engine over the append-only entry log.

Active entries form a ring ordered by key: each entry names the next active
key, and two sentinel entries (ids 0 and 1) pin the smallest and largest
representable keys so every lookup has a well-defined covering entry.  All
keys here are 32-byte canonical digests; the store canonicalizes user keys
before routing.

Mutations never rewrite old bytes.  They append fresh entries that supersede
older ones and clear the superseded twig bits:

    create K   appends the new entry first, then the predecessor rewrite
               that splices K into the ring          (1 read, 2 appends)
    update K   appends one rewrite of K's entry      (1 read, 1 append)
    delete K   appends one predecessor rewrite that
               bridges over K                        (2 reads, 1 append)

The work is split so a pipeline can run stages on separate threads with
serial semantics: ``prefetch_op`` performs exactly the physical reads the
op will need, ``apply_op`` mutates index/bits/log buffers (the updater),
``seal_block`` snapshots everything the Merkle work needs, and ``commit``
(the committer) hashes, maintains the upper tree, flushes filled twigs and
writes the fresh-twig snapshot.  ``commit`` does no index reads and no
entry IO: all hashing runs inside the counters' merkle phase, and tests
assert the merkleization IO counters stay zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .entry import NULL_ID, Entry
from .errors import ConsistencyError, CorruptionError
from .indexer import StripedIndex
from .log import EntryLog, IoCounters
from .merkle import TWIG_LEAVES, HashScheme
from .tree import ShardTree
from .twig import Twig, TwigState

__all__ = [
    "OP_READ",
    "OP_CREATE",
    "OP_UPDATE",
    "OP_DELETE",
    "OpResult",
    "CommitTask",
    "Shard",
    "route_shard",
    "shard_range_min",
    "shard_range_max",
]

OP_READ = "read"
OP_CREATE = "create"
OP_UPDATE = "update"
OP_DELETE = "delete"

KEY_BYTES = 32  # canonical key width


def route_shard(key: bytes, shard_bits: int) -> int:
    """Shard id = top ``shard_bits`` bits of the canonical key."""
    if shard_bits == 0:
        return 0
    return key[0] >> (8 - shard_bits)


def shard_range_min(shard_id: int, shard_bits: int) -> bytes:
    """Smallest canonical key routable to the shard (lower sentinel's key)."""
    return bytes([shard_id << (8 - shard_bits) if shard_bits else 0]) + bytes(KEY_BYTES - 1)


def shard_range_max(shard_id: int, shard_bits: int) -> bytes:
    """Largest canonical key routable to the shard (upper sentinel's key)."""
    low = (1 << (8 - shard_bits)) - 1 if shard_bits else 0xFF
    first = ((shard_id << (8 - shard_bits)) | low) if shard_bits else 0xFF
    return bytes([first]) + b"\xff" * (KEY_BYTES - 1)


@dataclass
class OpResult:
    status: str  # "ok" | "not_found" | "exists" | "forbidden"
    value: bytes | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class CommitTask:
    """Everything the committer needs, snapshotted at block seal."""

    height: int
    next_id: int
    filled: list[tuple[int, bytes]] = field(default_factory=list)  # (twig, leaf digests)
    fresh: tuple[int, bytes, int, bytes] | None = None  # (twig, leaves, count, bits)
    dirty_bits: dict[int, bytes] = field(default_factory=dict)  # non-fresh twigs
    newly_inactive: list[int] = field(default_factory=list)


class Shard:
    def __init__(
        self,
        shard_id: int,
        shard_bits: int,
        directory: str,
        scheme: HashScheme,
        counters: IoCounters | None = None,
        compaction_threshold: float = 0.0,
    ):
        self.shard_id = shard_id
        self.shard_bits = shard_bits
        self.scheme = scheme
        self.log = EntryLog(directory, shard_id, counters)
        self.counters = self.log.counters
        self.index = StripedIndex()
        self.twigs: dict[int, Twig] = {}
        self.tree = ShardTree(scheme)
        self.range_min = shard_range_min(shard_id, shard_bits)
        self.range_max = shard_range_max(shard_id, shard_bits)
        self.active_count = 0
        self.compaction_threshold = compaction_threshold
        # committer-side pruning state
        self.pruned_twigs = 0
        self._inactive_pending: set[int] = set()
        # updater-side mirror of the prune frontier (deterministic, no
        # dependence on how far the committer has gotten)
        self.compact_frontier = 0
        # per-block accumulators (updater)
        self._filled: list[int] = []
        self._dirty: set[int] = set()
        self._newly_inactive: list[int] = []

    # -- bootstrap ------------------------------------------------------------

    def bootstrap(self) -> None:
        """Install the two sentinel entries of an empty shard (ids 0 and 1)."""
        if self.log.next_id:
            raise ConsistencyError("bootstrap on a non-empty shard")
        lower = Entry(id=0, key=self.range_min, value=b"", next_key=self.range_max, version=0)
        upper = Entry(id=1, key=self.range_max, value=b"", next_key=self.range_min, version=0)
        pos0 = self._append_entry(lower)
        pos1 = self._append_entry(upper)
        self.index.put(lower.key, pos0)
        self.index.put(upper.key, pos1)
        self.active_count = 2

    # -- plumbing ---------------------------------------------------------------

    @property
    def fresh_twig_index(self) -> int:
        return self.log.next_id // TWIG_LEAVES

    def _twig_for_append(self, twig_index: int) -> Twig:
        twig = self.twigs.get(twig_index)
        if twig is None:
            twig = Twig(twig_index)
            self.twigs[twig_index] = twig
        return twig

    def _append_entry(self, entry: Entry) -> int:
        if entry.id != self.log.next_id:
            raise ConsistencyError("entry ids must follow the log tail")
        frame = entry.encode()
        position = self.log.append(frame)
        twig = self._twig_for_append(entry.id // TWIG_LEAVES)
        twig.append_leaf(self.scheme.leaf_hash(frame))
        self._dirty.add(twig.index)
        if twig.state == TwigState.FULL:
            self._filled.append(twig.index)
        return position

    def _clear_bit(self, entry_id: int) -> None:
        twig_index, slot = divmod(entry_id, TWIG_LEAVES)
        twig = self.twigs[twig_index]
        twig.clear_bit(slot)
        self._dirty.add(twig_index)
        if twig.state == TwigState.INACTIVE:
            self._newly_inactive.append(twig_index)
            self._advance_compact_frontier()

    def _advance_compact_frontier(self) -> None:
        while self.compact_frontier < self.fresh_twig_index:
            twig = self.twigs.get(self.compact_frontier)
            if twig is not None and twig.state not in (TwigState.INACTIVE, TwigState.PRUNED):
                break
            self.compact_frontier += 1

    def _fetch_direct(self, position: int) -> Entry:
        return self.log.read_entry_at(position)

    def _make_cached_fetch(self, cache: dict[int, Entry] | None):
        """One physical read per distinct position per op: re-visits within
        the same op (e.g. delete's exact hit re-seen by the predecessor walk)
        are memo hits, not reads."""
        memo: dict[int, Entry] = {}

        def fetch(position: int) -> Entry:
            entry = memo.get(position)
            if entry is None:
                if cache is not None:
                    entry = cache.get(position)
                    if entry is None:
                        self.counters.cache_misses += 1
                if entry is None:
                    entry = self.log.read_entry_at(position)
                memo[position] = entry
            return entry

        return fetch

    # -- lookups (shared by prefetch and apply, so both walk identically) ----

    def _locate_exact(self, key: bytes, fetch) -> tuple[Entry, int] | None:
        for position in self.index.get(key):
            entry = fetch(position)
            if entry.key == key:
                return entry, position
        return None

    def _locate_predecessor(self, key: bytes, fetch) -> tuple[Entry, int]:
        """Greatest active key strictly below ``key`` (sentinel-guaranteed)."""
        for _, positions in self.index.iter_buckets_desc(key):
            best = None
            for position in positions:
                entry = fetch(position)
                if entry.key < key and (best is None or entry.key > best[0].key):
                    best = (entry, position)
            if best is not None:
                return best
        raise ConsistencyError(f"no predecessor for {key.hex()}: ring is damaged")

    # -- pipeline stages ---------------------------------------------------------

    def prefetch_op(self, kind: str, key: bytes) -> dict[int, Entry]:
        """Perform the op's physical reads ahead of time; returns the cache."""
        cache: dict[int, Entry] = {}

        def fetch(position: int) -> Entry:
            entry = cache.get(position)
            if entry is None:
                entry = self.log.read_entry_at(position)
                cache[position] = entry
            return entry

        if key == self.range_min or key == self.range_max:
            return cache
        if kind in (OP_READ, OP_UPDATE):
            self._locate_exact(key, fetch)
        elif kind == OP_CREATE:
            if self._locate_exact(key, fetch) is None:
                self._locate_predecessor(key, fetch)
        elif kind == OP_DELETE:
            if self._locate_exact(key, fetch) is not None:
                self._locate_predecessor(key, fetch)
        else:
            raise ConsistencyError(f"unknown op kind {kind!r}")
        return cache

    def apply_op(
        self,
        kind: str,
        key: bytes,
        value: bytes | None,
        version: int,
        cache: dict[int, Entry] | None = None,
    ) -> OpResult:
        """Execute one operation against the live state (updater stage)."""
        fetch = self._make_cached_fetch(cache)
        if key == self.range_min or key == self.range_max:
            return OpResult("not_found") if kind == OP_READ else OpResult("forbidden")
        if kind == OP_READ:
            found = self._locate_exact(key, fetch)
            if found is None:
                return OpResult("not_found")
            return OpResult("ok", found[0].value)
        if kind == OP_UPDATE:
            found = self._locate_exact(key, fetch)
            if found is None:
                return OpResult("not_found")
            entry, position = found
            new = Entry(
                id=self.log.next_id,
                key=key,
                value=value,
                next_key=entry.next_key,
                version=version,
                old_id=entry.id,
            )
            new_position = self._append_entry(new)
            self.index.put(key, new_position, replacing=position)
            self._clear_bit(entry.id)
            self._maybe_compact(version)
            return OpResult("ok")
        if kind == OP_CREATE:
            if self._locate_exact(key, fetch) is not None:
                return OpResult("exists")
            pred, pred_position = self._locate_predecessor(key, fetch)
            base = self.log.next_id
            # old_next_key_id records which entry's arc this one absorbed:
            # the new key's arc is split out of the predecessor's old arc,
            # so the (single) timeline of any key's covering entries can be
            # walked backward pointer by pointer.
            created = Entry(
                id=base,
                key=key,
                value=value,
                next_key=pred.next_key,
                version=version,
                old_next_key_id=pred.id,
            )
            created_position = self._append_entry(created)
            rewired = Entry(
                id=base + 1,
                key=pred.key,
                value=pred.value,
                next_key=key,
                version=version,
                old_id=pred.id,
            )
            rewired_position = self._append_entry(rewired)
            self.index.put(key, created_position)
            self.index.put(pred.key, rewired_position, replacing=pred_position)
            self._clear_bit(pred.id)
            self.active_count += 1
            self._maybe_compact(version)
            return OpResult("ok")
        if kind == OP_DELETE:
            found = self._locate_exact(key, fetch)
            if found is None:
                return OpResult("not_found")
            victim, victim_position = found
            pred, pred_position = self._locate_predecessor(key, fetch)
            bridged = Entry(
                id=self.log.next_id,
                key=pred.key,
                value=pred.value,
                next_key=victim.next_key,
                version=version,
                old_id=pred.id,
                old_next_key_id=victim.id,  # the arc absorbs the victim's
            )
            bridged_position = self._append_entry(bridged)
            self.index.delete(key, victim_position)
            self.index.put(pred.key, bridged_position, replacing=pred_position)
            self._clear_bit(pred.id)
            self._clear_bit(victim.id)
            self.active_count -= 1
            return OpResult("ok")
        raise ConsistencyError(f"unknown op kind {kind!r}")

    # -- compaction ---------------------------------------------------------------

    def _oldest_active_id(self) -> int | None:
        fresh = self.fresh_twig_index
        for twig_index in range(self.compact_frontier, fresh):
            twig = self.twigs.get(twig_index)
            if twig is None or twig.state not in (TwigState.FULL, TwigState.FRESH):
                continue
            for slot in twig.bits.iter_set():
                return twig_index * TWIG_LEAVES + slot
        return None

    def _maybe_compact(self, version: int) -> None:
        """Move up to two oldest active entries forward while utilization is
        below the threshold (a move is an update that keeps the value)."""
        if self.compaction_threshold <= 0.0:
            return
        for _ in range(2):
            span = self.log.next_id - self.compact_frontier * TWIG_LEAVES
            if span <= 0 or self.active_count / span >= self.compaction_threshold:
                return
            target = self._oldest_active_id()
            if target is None:
                return
            # Sentinels are movable like anything else — the upper sentinel's
            # bit would otherwise pin twig 0 active forever.
            position = self.log.position_of(target)
            entry = self.log.read_entry_at(position)
            moved = Entry(
                id=self.log.next_id,
                key=entry.key,
                value=entry.value,
                next_key=entry.next_key,
                version=version,
                old_id=entry.id,
            )
            moved_position = self._append_entry(moved)
            self.index.put(entry.key, moved_position, replacing=position)
            self._clear_bit(entry.id)

    # -- sealing and committing -----------------------------------------------------

    def seal_block(self, height: int) -> CommitTask:
        """Snapshot this block's Merkle inputs; resets per-block accumulators."""
        fresh_index = self.fresh_twig_index
        task = CommitTask(height=height, next_id=self.log.next_id)
        for twig_index in self._filled:
            twig = self.twigs[twig_index]
            task.filled.append((twig_index, bytes(twig.leaves)))
            twig.leaves = bytearray()  # committer assigns entry_root later
        for twig_index in sorted(self._dirty):
            twig = self.twigs.get(twig_index)
            if twig is None or twig.state == TwigState.PRUNED:
                continue
            if twig_index == fresh_index and twig.state == TwigState.FRESH:
                task.fresh = (
                    twig_index,
                    bytes(twig.leaves),
                    twig.leaf_count,
                    twig.bits.to_bytes(),
                )
            else:
                task.dirty_bits[twig_index] = twig.bits.to_bytes()
        task.newly_inactive = self._newly_inactive
        self._filled = []
        self._dirty = set()
        self._newly_inactive = []
        return task

    def commit(self, task: CommitTask) -> bytes:
        """Merkleize and persist one sealed block; returns the shard root.

        Hashing happens inside the counters' merkle phase; the only physical
        IO is the twig flushes, the durability barrier and the fresh-twig
        snapshot, all outside that phase.
        """
        if not task.filled and not task.dirty_bits and task.fresh is None:
            if not task.newly_inactive:
                return self.tree.shard_root()
        entry_roots: dict[int, bytes] = {}
        with self.counters.merkle_phase():
            for twig_index, leaves in task.filled:
                entry_roots[twig_index] = self.scheme.entry_root(leaves, TWIG_LEAVES)
        for twig_index, _ in task.filled:
            root = entry_roots[twig_index]
            self.log.flush_twig(twig_index, root)
            self.twigs[twig_index].entry_root = root
        with self.counters.merkle_phase():
            scheme = self.scheme
            if task.fresh is not None:
                twig_index, leaves, count, bits = task.fresh
                fresh_er = scheme.entry_root(leaves, count)
                self.tree.update_twig_root(
                    twig_index, scheme.combine(fresh_er, scheme.bits_hash(bits))
                )
            for twig_index in sorted(task.dirty_bits):
                entry_root = entry_roots.get(twig_index)
                if entry_root is None:
                    entry_root = self.log.troots[twig_index]
                bits = task.dirty_bits[twig_index]
                self.tree.update_twig_root(
                    twig_index, scheme.combine(entry_root, scheme.bits_hash(bits))
                )
            self._inactive_pending.update(task.newly_inactive)
            while self.pruned_twigs in self._inactive_pending:
                twig_index = self.pruned_twigs
                self.tree.prune_twig(twig_index)
                self._inactive_pending.discard(twig_index)
                twig = self.twigs.pop(twig_index, None)
                if twig is not None:
                    twig.prune()
                self.pruned_twigs += 1
            shard_root = self.tree.shard_root()
        self.log.barrier()
        self.log.write_fresh_snapshot()
        return shard_root

    # -- standalone queries (between blocks) ------------------------------------------

    def get(self, key: bytes) -> bytes | None:
        found = self._locate_exact(key, self._fetch_direct)
        return found[0].value if found is not None else None

    def covering(self, key: bytes) -> tuple[Entry, int]:
        """Active entry whose arc covers ``key``: the entry itself if key is
        active, otherwise its strict predecessor on the ring."""
        found = self._locate_exact(key, self._fetch_direct)
        if found is not None:
            return found
        return self._locate_predecessor(key, self._fetch_direct)

    # -- recovery --------------------------------------------------------------------

    def load(self, committed_next_id: int, committed_tail: int, pruned_twigs: int) -> bytes:
        """Rebuild state from disk; returns the recovered shard root.

        Replays the log once, reconstructing the active ring with two O(1)
        rules per entry: an arriving rewrite kills the previous version of
        its key (``old_id``), and if the rewrite widened its arc over the old
        successor T with T's own arc ending where the new arc ends, T was
        deleted and dies too.  Full twigs cost two hashes each (persisted
        entry roots + bitmap); only fresh-twig leaves are re-hashed.
        """
        if self.log.next_id:
            raise ConsistencyError("load on a shard that already has state")
        fresh_start = (committed_next_id // TWIG_LEAVES) * TWIG_LEAVES
        active: dict[bytes, tuple[int, int, bytes]] = {}  # key -> (id, pos, next_key)
        for entry, position in self.log.replay(committed_next_id, committed_tail):
            kills = []
            known = active.get(entry.key)
            if known is not None:
                prev_id, _, prev_next = known
                if entry.old_id != prev_id:
                    raise CorruptionError(
                        f"shard {self.shard_id}: entry {entry.id} supersedes "
                        f"{entry.old_id} but {prev_id} holds the key"
                    )
                kills.append(prev_id)
                if prev_next != entry.next_key:
                    old_successor = active.get(prev_next)
                    if old_successor is not None and old_successor[2] == entry.next_key:
                        kills.append(old_successor[0])  # arc closed over it: deleted
                        del active[prev_next]
            elif entry.old_id != NULL_ID:
                raise CorruptionError(
                    f"shard {self.shard_id}: entry {entry.id} rewrites an unknown key"
                )
            active[entry.key] = (entry.id, position, entry.next_key)
            twig_index, slot = divmod(entry.id, TWIG_LEAVES)
            twig = self._twig_for_append(twig_index)
            if entry.id >= fresh_start:
                twig.append_leaf(self.scheme.leaf_hash(entry.encode()))
            else:
                twig.bits.set_bit(slot)
                twig.leaf_count = slot + 1
                if twig.leaf_count == TWIG_LEAVES:
                    twig.state = TwigState.FULL
            for kill_id in kills:
                kill_twig, kill_slot = divmod(kill_id, TWIG_LEAVES)
                self.twigs[kill_twig].bits.clear_bit(kill_slot)
        for twig_index in self.log.missing_troots():
            leaves = bytearray()
            for entry in self.log.read_twig_frames(twig_index):
                leaves += self.scheme.leaf_hash(entry.encode())
            self.log.repair_troot(twig_index, self.scheme.entry_root(leaves, TWIG_LEAVES))
        roots = []
        for twig_index in range(self.fresh_twig_index + 1):
            twig = self.twigs.get(twig_index)
            if twig is None:  # ends exactly at a twig boundary
                continue
            if twig.state == TwigState.FULL and twig.bits.popcount() == 0:
                twig.state = TwigState.INACTIVE
            if twig.state != TwigState.FRESH:
                twig.entry_root = self.log.troots[twig_index]
            if twig_index < pruned_twigs:
                if twig.state != TwigState.INACTIVE:
                    raise CorruptionError(
                        f"shard {self.shard_id}: manifest prunes live twig {twig_index}"
                    )
                roots.append(self.scheme.combine(twig.entry_root, self.scheme.null_bits_root))
                self.twigs.pop(twig_index)
            else:
                roots.append(twig.root(self.scheme))
        self.tree.bulk_load(roots)
        for twig_index in range(pruned_twigs):
            self.tree.prune_twig(twig_index)
        self.pruned_twigs = pruned_twigs
        self._inactive_pending = {
            t for t, tw in self.twigs.items() if tw.state == TwigState.INACTIVE
        }
        self.compact_frontier = pruned_twigs
        self._advance_compact_frontier()
        for key, (_, position, _) in active.items():
            self.index.put(key, position)
        self.active_count = len(active)
        self._filled = []
        self._dirty = set()
        self._newly_inactive = []
        return self.tree.shard_root()

    def state_at(self, height: int) -> dict[bytes, bytes]:
        """Key -> value mapping as of the end of block ``height``.

        Replays the log (versions are nondecreasing in id, so it stops at the
        first entry past the height) applying the same two kill rules as
        ``load``.  Sentinels are infrastructure and excluded from the result.
        """
        bound = (height + 1) << 24
        active: dict[bytes, tuple[bytes, bytes]] = {}  # key -> (next_key, value)
        done = False
        for twig_index in range(self.fresh_twig_index + 1):
            if done or twig_index * TWIG_LEAVES >= self.log.next_id:
                break
            for entry in self.log.read_twig_frames(twig_index):
                if entry.version >= bound:
                    done = True
                    break
                known = active.get(entry.key)
                if known is not None:
                    prev_next = known[0]
                    if prev_next != entry.next_key:
                        old_successor = active.get(prev_next)
                        if old_successor is not None and old_successor[0] == entry.next_key:
                            del active[prev_next]  # arc closed over it: deleted
                active[entry.key] = (entry.next_key, entry.value)
        active.pop(self.range_min, None)
        active.pop(self.range_max, None)
        return {key: value for key, (_, value) in active.items()}

    # -- reporting ----------------------------------------------------------------------

    def stats(self) -> dict:
        index_mem = self.index.memory_report()
        merkle_bytes = sum(t.metadata_bytes() for t in self.twigs.values())
        merkle_bytes += self.tree.metadata_bytes()
        return {
            "shard_id": self.shard_id,
            "next_id": self.log.next_id,
            "active_entries": self.active_count,
            "flushed_twigs": self.log.flushed_twigs,
            "pruned_twigs": self.pruned_twigs,
            "utilization": (
                self.active_count
                / max(1, self.log.next_id - self.compact_frontier * TWIG_LEAVES)
            ),
            "pending_bytes": self.log.pending_bytes(),
            "index_bytes": index_mem["total_bytes"],
            "merkle_bytes": merkle_bytes,
        }

    def close(self) -> None:
        self.log.close()
