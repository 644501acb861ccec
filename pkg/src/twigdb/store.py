"""The top-level store: configuration, block lifecycle, recovery, queries.

A store is a directory containing

    config.json       immutable identity: shard count, hash function,
                      compaction threshold (all three shape the commitment)
    manifest.json     the last committed block: height, global root, and per
                      shard the entry count, durable byte tail, and pruned
                      twig count — replaced atomically after every block
    shard-N.*         each shard's log files (see :mod:`twigdb.log`)

User keys are arbitrary byte strings (1..256 bytes); internally every key is
its SHA-256 digest, which equalizes key sizes, spreads the ring uniformly,
and makes the first byte routable.  All query APIs speak user keys and
canonicalize at the boundary.

Blocks are the unit of atomicity and of versioning: operations carry
``(height << 24) | tx_index`` versions, commits persist whole blocks, and a
crash rolls back to the previous manifest exactly.  The manifest is replaced
strictly after every shard's durability barrier, so the ordering

    flush twigs → fsync → snapshot fresh twig → replace manifest

underpins recovery (see ``EntryLog.replay``).
"""

from __future__ import annotations

import hashlib
import json
import os
from collections import deque
from dataclasses import dataclass

from .entry import pack_version
from .errors import (
    BlockSequenceError,
    ConfigError,
    CorruptionError,
    EncodeError,
    StorageError,
)
from .hooks import arm_from_env, crash_point
from .log import IoCounters
from .merkle import HashScheme
from .pipeline import SerialPipeline, ThreadedPipeline
from .proof import Proof, Prover, verify_proof
from .shard import (
    OP_CREATE,
    OP_DELETE,
    OP_READ,
    OP_UPDATE,
    Shard,
    route_shard,
)
from .tree import global_root_digest

__all__ = [
    "Store",
    "StoreConfig",
    "BlockReceipt",
    "canonical_key",
    "OP_READ",
    "OP_CREATE",
    "OP_UPDATE",
    "OP_DELETE",
]

CONFIG_FILE = "config.json"
MANIFEST_FILE = "manifest.json"
USER_KEY_MIN = 1
USER_KEY_MAX = 256
STREAM_DEPTH = 2  # committed blocks may trail applied blocks by this many


def canonical_key(user_key: bytes) -> bytes:
    """Fixed-width routing key: the SHA-256 digest of the user key."""
    if not USER_KEY_MIN <= len(user_key) <= USER_KEY_MAX:
        raise EncodeError(f"user keys must be {USER_KEY_MIN}..{USER_KEY_MAX} bytes")
    return hashlib.sha256(user_key).digest()


@dataclass(frozen=True)
class StoreConfig:
    shard_bits: int = 0
    hash_name: str = "sha256"
    compaction_threshold: float = 0.0

    def validate(self) -> None:
        if not 0 <= self.shard_bits <= 8:
            raise ConfigError("shard_bits must be 0..8")
        if not 0.0 <= self.compaction_threshold < 1.0:
            raise ConfigError("compaction_threshold must be in [0, 1)")


@dataclass(frozen=True)
class BlockReceipt:
    height: int
    global_root: bytes
    results: list


class Store:
    """One open handle; a store directory supports a single writer."""

    def __init__(self, directory: str, config: StoreConfig, pipeline: str):
        self.directory = directory
        self.config = config
        self.scheme = HashScheme(config.hash_name)
        self.counters = [IoCounters() for _ in range(1 << config.shard_bits)]
        self.shards = [
            Shard(
                sid,
                config.shard_bits,
                directory,
                self.scheme,
                counters=self.counters[sid],
                compaction_threshold=config.compaction_threshold,
            )
            for sid in range(1 << config.shard_bits)
        ]
        if pipeline == "serial":
            self.pipeline = SerialPipeline(self.shards)
        elif pipeline == "threaded":
            self.pipeline = ThreadedPipeline(self.shards)
        else:
            raise ConfigError(f"unknown pipeline mode {pipeline!r}")
        self.block_height = -1
        self.global_root = b""
        self._next_height = 0
        self._inflight: deque = deque()
        self._open_block: list | None = None
        self._prover: Prover | None = None
        self._closed = False

    # -- opening -----------------------------------------------------------

    @classmethod
    def open(
        cls,
        directory: str,
        *,
        shard_bits: int | None = None,
        hash_name: str | None = None,
        compaction_threshold: float | None = None,
        pipeline: str = "serial",
    ) -> "Store":
        arm_from_env()
        os.makedirs(directory, exist_ok=True)
        config_path = os.path.join(directory, CONFIG_FILE)
        requested = {
            "shard_bits": shard_bits,
            "hash_name": hash_name,
            "compaction_threshold": compaction_threshold,
        }
        if os.path.exists(config_path):
            with open(config_path, "rb") as fh:
                saved = json.load(fh)
            for field_name, value in requested.items():
                if value is not None and value != saved[field_name]:
                    raise ConfigError(
                        f"{field_name}={value!r} conflicts with the stored "
                        f"configuration ({saved[field_name]!r})"
                    )
            config = StoreConfig(
                shard_bits=saved["shard_bits"],
                hash_name=saved["hash_name"],
                compaction_threshold=saved["compaction_threshold"],
            )
            config.validate()
            store = cls(directory, config, pipeline)
            store._recover_or_bootstrap()
            return store
        config = StoreConfig(
            shard_bits=shard_bits if shard_bits is not None else 0,
            hash_name=hash_name if hash_name is not None else "sha256",
            compaction_threshold=(
                compaction_threshold if compaction_threshold is not None else 0.0
            ),
        )
        config.validate()
        _write_atomically(
            config_path,
            json.dumps(
                {
                    "format": 1,
                    "shard_bits": config.shard_bits,
                    "hash_name": config.hash_name,
                    "compaction_threshold": config.compaction_threshold,
                },
                indent=2,
            ).encode(),
        )
        store = cls(directory, config, pipeline)
        store._recover_or_bootstrap()
        return store

    def _recover_or_bootstrap(self) -> None:
        manifest_path = os.path.join(self.directory, MANIFEST_FILE)
        if os.path.exists(manifest_path):
            with open(manifest_path, "rb") as fh:
                manifest = json.load(fh)
            rows = manifest["shards"]
            if len(rows) != len(self.shards):
                raise CorruptionError("manifest shard count does not match config")
            roots = []
            for shard, row in zip(self.shards, rows):
                roots.append(
                    shard.load(row["next_id"], row["tail"], row["pruned_twigs"])
                )
            root = global_root_digest(self.scheme, roots)
            if root != bytes.fromhex(manifest["global_root"]):
                raise CorruptionError(
                    "recovered state does not reproduce the manifest root"
                )
            self.block_height = manifest["block_height"]
            self.global_root = root
            self._next_height = self.block_height + 1
            return
        # Fresh store (or a crash before the very first manifest): install
        # the sentinels and commit them as block 0.
        for shard in self.shards:
            shard.bootstrap()
        self._next_height = 0
        receipt = self.apply_block([])
        assert receipt.height == 0

    # -- block lifecycle -------------------------------------------------------

    def _dispatch(self, ops) -> "object":
        if self._closed:
            raise StorageError("store is closed")
        height = self._next_height
        routed = [[] for _ in self.shards]
        for i, (kind, user_key, value) in enumerate(ops):
            ck = canonical_key(user_key)
            version = pack_version(height, i)
            routed[route_shard(ck, self.config.shard_bits)].append(
                (i, kind, ck, value, version)
            )
        self._next_height += 1
        self._prover = None
        ticket = self.pipeline.submit(height, routed, len(ops))
        self._inflight.append(ticket)
        return ticket

    def _finalize_next(self) -> BlockReceipt:
        ticket = self._inflight.popleft()
        ticket.wait()
        root = global_root_digest(self.scheme, ticket.roots)
        self._write_manifest(ticket.height, root, ticket.manifest_rows)
        self.block_height = ticket.height
        self.global_root = root
        return BlockReceipt(ticket.height, root, ticket.results)

    def _write_manifest(self, height: int, root: bytes, rows) -> None:
        payload = json.dumps(
            {
                "format": 1,
                "block_height": height,
                "global_root": root.hex(),
                "shards": [
                    {"next_id": n, "tail": t, "pruned_twigs": p} for n, t, p in rows
                ],
            },
            indent=2,
        ).encode()
        _write_atomically(os.path.join(self.directory, MANIFEST_FILE), payload)
        crash_point("manifest")

    def apply_block(self, ops) -> BlockReceipt:
        """Apply and commit one block synchronously."""
        if self._open_block is not None:
            raise BlockSequenceError("end_block the explicit block first")
        if self._inflight:
            raise BlockSequenceError("a streamed block is still in flight")
        self._dispatch(ops)
        return self._finalize_next()

    def begin_block(self) -> int:
        if self._open_block is not None:
            raise BlockSequenceError("previous block is still open")
        self._open_block = []
        return self._next_height

    def submit(self, kind: str, user_key: bytes, value: bytes | None = None) -> None:
        if self._open_block is None:
            raise BlockSequenceError("no open block")
        self._open_block.append((kind, user_key, value))

    def end_block(self) -> BlockReceipt:
        if self._open_block is None:
            raise BlockSequenceError("no open block")
        ops, self._open_block = self._open_block, None
        return self.apply_block(ops)

    def submit_stream(self, blocks):
        """Apply an iterable of blocks, overlapping commits with the next
        block's reads and updates; yields a receipt per block, in order."""
        if self._open_block is not None or self._inflight:
            raise BlockSequenceError("stream cannot start mid-block")
        for ops in blocks:
            self._dispatch(ops)
            if len(self._inflight) > STREAM_DEPTH:
                yield self._finalize_next()
        while self._inflight:
            yield self._finalize_next()

    # -- queries ---------------------------------------------------------------

    def get(self, user_key: bytes) -> bytes | None:
        ck = canonical_key(user_key)
        return self.shards[route_shard(ck, self.config.shard_bits)].get(ck)

    def _prover_now(self) -> Prover:
        if self._inflight or self._open_block is not None:
            raise BlockSequenceError("proofs are only defined between blocks")
        if self._prover is None:
            self._prover = Prover(
                self.scheme,
                self.config.shard_bits,
                self.shards,
                [shard.tree.shard_root() for shard in self.shards],
            )
        return self._prover

    def prove(self, user_key: bytes) -> Proof:
        """Inclusion or exclusion proof against the current global root."""
        return self._prover_now().prove_current(canonical_key(user_key))

    def prove_historical(self, user_key: bytes, height: int) -> Proof:
        return self._prover_now().prove_historical(canonical_key(user_key), height)

    def get_at(self, user_key: bytes, height: int) -> tuple[bool, bytes | None]:
        """Unproven historical point query from the retained log."""
        return self._prover_now().resolve_historical(canonical_key(user_key), height)

    def verify(self, proof: Proof):
        """Check a proof against this store's committed global root."""
        return verify_proof(self.scheme, proof, self.global_root)

    def reconstruct_state(self, height: int) -> dict[bytes, bytes]:
        """Full canonical-key -> value mapping as of ``height`` (log replay)."""
        if self._inflight or self._open_block is not None:
            raise BlockSequenceError("reconstruction is only defined between blocks")
        state: dict[bytes, bytes] = {}
        for shard in self.shards:
            state.update(shard.state_at(height))
        return state

    # -- introspection ---------------------------------------------------------

    def stats(self) -> dict:
        per_shard = [shard.stats() for shard in self.shards]
        totals: dict[str, int] = {}
        for counters in self.counters:
            for name, value in counters.snapshot().items():
                totals[name] = totals.get(name, 0) + value
        return {
            "block_height": self.block_height,
            "global_root": self.global_root.hex(),
            "shard_bits": self.config.shard_bits,
            "hash_name": self.config.hash_name,
            "backend": self.scheme.backend,
            "counters": totals,
            "memory": {
                "index_bytes": sum(s["index_bytes"] for s in per_shard),
                "merkle_bytes": sum(s["merkle_bytes"] for s in per_shard),
                "pending_bytes": sum(s["pending_bytes"] for s in per_shard),
            },
            "shards": per_shard,
        }

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self.pipeline.close()
        for shard in self.shards:
            shard.close()

    def __enter__(self) -> "Store":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _write_atomically(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644)
    try:
        os.write(fd, payload)
        os.fsync(fd)
    finally:
        os.close(fd)
    os.replace(tmp, path)
    dir_fd = os.open(os.path.dirname(path) or ".", os.O_RDONLY)
    try:
        os.fsync(dir_fd)
    finally:
        os.close(dir_fd)
