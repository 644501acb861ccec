"""Differential tests: the engine versus the brute-force hashlib twin."""

import hashlib
import random

from twigdb.entry import pack_version
from twigdb.merkle import HashScheme
from twigdb.reference import ReferenceModel
from twigdb.shard import (
    OP_CREATE,
    OP_DELETE,
    OP_READ,
    OP_UPDATE,
    Shard,
    route_shard,
    shard_range_max,
    shard_range_min,
)
from twigdb.tree import global_root_digest

KINDS = (OP_READ, OP_UPDATE, OP_CREATE, OP_DELETE)


def keyspace(seed: int, n: int) -> list[bytes]:
    return [hashlib.sha256(b"%d:%d" % (seed, i)).digest() for i in range(n)]


def random_blocks(seed, n_blocks, ops_per_block, universe, weights=(2, 3, 3, 1)):
    rng = random.Random(seed)
    blocks = []
    for _ in range(n_blocks):
        ops = []
        for _ in range(ops_per_block):
            kind = rng.choices(KINDS, weights=weights)[0]
            key = rng.choice(universe)
            value = None if kind in (OP_READ, OP_DELETE) else rng.randbytes(rng.randrange(64))
            ops.append((kind, key, value))
        blocks.append(ops)
    return blocks


def run_differential(tmp_path, name, shard_bits, threshold, blocks):
    """Feed identical blocks to live shards and the model, comparing every
    operation result and every committed root along the way."""
    scheme = HashScheme("sha256")
    shards = []
    for sid in range(1 << shard_bits):
        d = tmp_path / f"{name}-{sid}"
        d.mkdir()
        s = Shard(sid, shard_bits, str(d), scheme, compaction_threshold=threshold)
        s.bootstrap()
        shards.append(s)
    model = ReferenceModel(shard_bits, "sha256", threshold)
    for height, ops in enumerate(blocks, start=1):
        for i, (kind, key, value) in enumerate(ops):
            version = pack_version(height, i)
            live = shards[route_shard(key, shard_bits)].apply_op(kind, key, value, version)
            assert (live.status, live.value) == model.apply_op(kind, key, value, version), (
                height,
                i,
                kind,
                key.hex(),
            )
        roots = [s.commit(s.seal_block(height)) for s in shards]
        assert roots == [model.shard_root(sid) for sid in range(len(shards))], height
        assert global_root_digest(scheme, roots) == model.root()
    return shards, model


def close_all(shards):
    for s in shards:
        s.close()


def test_empty_store_roots_match(tmp_path):
    shards, model = run_differential(tmp_path, "empty", 0, 0.0, [[]])
    close_all(shards)


def test_differential_serial(tmp_path):
    universe = keyspace(7, 120)
    blocks = random_blocks(7, 6, 80, universe)
    shards, model = run_differential(tmp_path, "serial", 0, 0.0, blocks)
    live = shards[0]
    for key, value in model.snapshot().items():
        assert live.get(key) == value
    for key in universe:
        if key not in model.snapshot():
            assert live.get(key) is None
    close_all(shards)


def test_differential_statuses_and_sentinels(tmp_path):
    universe = keyspace(11, 8)  # tiny universe: lots of exists/not_found
    blocks = random_blocks(11, 5, 60, universe, weights=(1, 2, 3, 3))
    for ops in blocks:  # sprinkle direct hits on the reserved range keys
        ops.insert(0, (OP_UPDATE, shard_range_min(0, 0), b"x"))
        ops.append((OP_READ, shard_range_max(0, 0), None))
    shards, _ = run_differential(tmp_path, "status", 0, 0.0, blocks)
    close_all(shards)


def test_differential_multi_shard(tmp_path):
    universe = keyspace(23, 200)
    blocks = random_blocks(23, 5, 120, universe)
    blocks[2].append((OP_CREATE, shard_range_min(2, 2), b"nope"))
    shards, model = run_differential(tmp_path, "multi", 2, 0.0, blocks)
    spread = {route_shard(k, 2) for k in universe}
    assert spread == {0, 1, 2, 3}
    for key, value in model.snapshot().items():
        assert shards[route_shard(key, 2)].get(key) == value
    close_all(shards)


def test_differential_with_compaction_and_pruning(tmp_path):
    universe = keyspace(41, 1500)
    rng = random.Random(41)
    blocks = [[(OP_CREATE, k, rng.randbytes(24)) for k in universe[:1300]]]
    churn = random_blocks(42, 3, 700, universe[:1300], weights=(1, 6, 1, 2))
    blocks.extend(churn)
    shards, model = run_differential(tmp_path, "compact", 0, 0.85, blocks)
    live = shards[0]
    assert live.pruned_twigs >= 1  # the scenario must actually exercise pruning
    assert live.pruned_twigs == model.shards[0].expected_pruned_twigs()
    assert live.log.next_id == model.shards[0].next_id
    assert live.active_count == model.shards[0].active_count
    assert live.compact_frontier == model.shards[0].frontier
    for key, value in model.snapshot().items():
        assert live.get(key) == value
    close_all(shards)


def test_model_tracks_entry_pointers(tmp_path):
    """The model predicts not just values but the exact pointer fields of the
    live entry for every key (ids, arcs, version)."""
    universe = keyspace(53, 40)
    blocks = random_blocks(53, 4, 50, universe, weights=(1, 3, 4, 2))
    shards, model = run_differential(tmp_path, "pointers", 0, 0.0, blocks)
    live = shards[0]
    for key in universe:
        expected = model.entry_at(key)
        if expected is None:
            assert live.get(key) is None
            continue
        got, _ = live.covering(key)
        assert got == expected
    close_all(shards)
