"""Proof construction and stateless verification: inclusion, exclusion on
the key ring, historical timelines, and adversarial mutations."""

import random

import pytest

from twigdb.entry import pack_version
from twigdb.errors import HistoryUnavailableError, ProofDecodeError
from twigdb.merkle import HashScheme
from twigdb.proof import (
    KIND_EXCLUSION,
    KIND_HISTORICAL,
    KIND_INCLUSION,
    Proof,
    Prover,
    covers,
    verify_proof,
)
from twigdb.shard import (
    OP_CREATE,
    OP_DELETE,
    OP_UPDATE,
    Shard,
    shard_range_max,
    shard_range_min,
)
from twigdb.tree import global_root_digest

RANGE_MIN = shard_range_min(0, 0)
RANGE_MAX = shard_range_max(0, 0)


def key_at(i: int) -> bytes:
    return (i + 1).to_bytes(4, "big") + bytes(28)


def key_between(i: int) -> bytes:
    return (i + 1).to_bytes(4, "big") + bytes(4) + b"\x01" + bytes(23)


def make_shard(tmp_path, threshold=0.0, name="p") -> Shard:
    d = tmp_path / name
    d.mkdir(exist_ok=True)
    shard = Shard(0, 0, str(d), HashScheme("sha256"), compaction_threshold=threshold)
    shard.bootstrap()
    return shard


def run_block(shard, height, ops):
    results = []
    for i, (kind, key, value) in enumerate(ops):
        results.append(shard.apply_op(kind, key, value, pack_version(height, i)))
    task = shard.seal_block(height)
    return results, shard.commit(task)


def prover_for(shard) -> Prover:
    return Prover(shard.scheme, 0, [shard], [shard.tree.shard_root()])


@pytest.fixture
def story(tmp_path):
    """K3's full biography: created, updated, deleted, recreated, updated —
    alongside enough filler keys to span two twigs."""
    shard = make_shard(tmp_path)
    run_block(shard, 1, [(OP_CREATE, key_at(i), b"h1-%d" % i) for i in range(10)])
    run_block(shard, 2, [(OP_UPDATE, key_at(3), b"h2")])
    run_block(shard, 3, [(OP_DELETE, key_at(3), None)])
    run_block(shard, 4, [(OP_CREATE, key_at(3), b"h4")])
    run_block(
        shard,
        5,
        [(OP_UPDATE, key_at(3), b"h5")]
        + [(OP_CREATE, key_at(100 + i), b"f%d" % i) for i in range(1100)],
    )
    yield shard
    shard.close()


def test_covers_arc_semantics():
    a, b, c = key_at(1), key_at(2), key_at(3)
    assert covers(a, c, a)
    assert covers(a, c, b)
    assert not covers(a, c, c)
    assert not covers(b, c, a)
    # wrapping arc of the upper sentinel
    assert covers(RANGE_MAX, RANGE_MIN, RANGE_MAX)
    assert not covers(RANGE_MAX, RANGE_MIN, a)
    # full-ring arc right after bootstrap
    assert covers(RANGE_MIN, RANGE_MAX, a)


def test_inclusion_round_trip_and_verify(story):
    prover = prover_for(story)
    expected_root = global_root_digest(story.scheme, [story.tree.shard_root()])
    proof = prover.prove_current(key_at(3))
    assert proof.kind == KIND_INCLUSION
    assert len(proof.upper_path) == story.tree.height
    assert story.tree.height == 1  # two twigs
    assert len(proof.shard_path) == 1  # single shard padded against zeros
    decoded = Proof.decode(proof.encode())
    assert decoded == proof
    result = verify_proof(story.scheme, decoded, expected_root)
    assert result.ok and result.present
    assert result.key == key_at(3)
    assert result.value == b"h5"


def test_tiny_shard_proof_shapes(tmp_path):
    shard = make_shard(tmp_path, name="tiny")
    run_block(shard, 1, [(OP_CREATE, key_at(0), b"v")])
    prover = prover_for(shard)
    proof = prover.prove_current(key_at(0))
    assert proof.upper_path == []  # single twig: twig root is the shard root
    result = verify_proof(shard.scheme, Proof.decode(proof.encode()), prover.root())
    assert result.ok and result.value == b"v"
    shard.close()


def test_exclusion_between_and_beyond(story):
    prover = prover_for(story)
    root = prover.root()
    cases = [
        key_between(3),                      # between two user keys
        bytes(31) + b"\x01",                 # below every user key
        (2**31).to_bytes(4, "big") + bytes(28),  # above every user key
    ]
    for absent in cases:
        proof = prover.prove_current(absent)
        assert proof.kind == KIND_EXCLUSION
        result = verify_proof(story.scheme, Proof.decode(proof.encode()), root)
        assert result.ok, result.reason
        assert result.present is False
        assert result.key == absent


def test_exclusion_arc_is_checked(story):
    prover = prover_for(story)
    proof = prover.prove_current(key_between(4))
    # claim a key outside the covering arc
    tampered = Proof.decode(proof.encode())
    tampered.subject_key = key_at(8)
    assert not verify_proof(story.scheme, tampered)
    # claim the covering entry's own key
    tampered.subject_key = key_at(4)
    assert not verify_proof(story.scheme, tampered)


def test_stale_root_rejected_by_caller_comparison(story):
    prover = prover_for(story)
    proof = prover.prove_current(key_at(6))
    old_root = prover.root()
    run_block(story, 6, [(OP_UPDATE, key_at(6), b"h6")])
    new_root = global_root_digest(story.scheme, [story.tree.shard_root()])
    assert not verify_proof(story.scheme, proof, new_root)
    # internally consistent against the root it was built for
    assert verify_proof(story.scheme, proof, old_root).ok


def test_superseded_entry_with_fresh_paths_is_rejected(story):
    """A proof for an inactive entry can chain perfectly to the current root
    (its leaf is immutable) — only the bitmap check stops it."""
    live_entry, _ = story.covering(key_at(7))
    run_block(story, 6, [(OP_UPDATE, key_at(7), b"h6")])
    prover = prover_for(story)
    stale = prover._anchor(story, live_entry, KIND_INCLUSION)
    result = verify_proof(story.scheme, stale, prover.root())
    assert not result.ok
    assert "not active" in result.reason
    # the honest proof of the same key verifies
    assert verify_proof(story.scheme, prover.prove_current(key_at(7)), prover.root()).ok


@pytest.mark.parametrize("query", ["inclusion", "exclusion", "historical"])
def test_single_bit_flips_never_prove_a_false_statement(story, query):
    """Flipping any single bit must leave the proof either undecodable,
    rejected, or — when the flip lands in a query field such as the subject
    key — accepted only for a statement that is still true."""
    prover = prover_for(story)
    if query == "inclusion":
        proof = prover.prove_current(key_at(5))
    elif query == "exclusion":
        proof = prover.prove_current(key_between(5))
    else:
        proof = prover.prove_historical(key_at(3), 2)
    blob = proof.encode()
    root = prover.root()
    assert verify_proof(story.scheme, Proof.decode(blob), root).ok
    snapshots: dict[int, dict[bytes, bytes]] = {}

    def state_at(height: int) -> dict[bytes, bytes]:
        if height not in snapshots:
            snapshots[height] = story.state_at(height)
        return snapshots[height]

    rng = random.Random(13)
    accepted = 0
    for _ in range(1000):
        flip = rng.randrange(len(blob) * 8)
        mutated = bytearray(blob)
        mutated[flip >> 3] ^= 1 << (flip & 7)
        try:
            candidate = Proof.decode(bytes(mutated))
        except ProofDecodeError:
            continue
        result = verify_proof(story.scheme, candidate, root)
        if not result.ok:
            continue
        accepted += 1
        if candidate.kind == KIND_INCLUSION:
            assert result.present and story.get(result.key) == result.value
        elif candidate.kind == KIND_EXCLUSION:
            assert not result.present and story.get(result.key) is None
        else:
            snap = state_at(result.height)
            if result.present:
                assert snap.get(result.key) == result.value
            else:
                assert result.key not in snap
    assert accepted < 250  # most flips land in hash-bound bytes


def test_historical_heights_tell_the_whole_biography(story):
    prover = prover_for(story)
    root = prover.root()
    expected = {
        0: (False, None),
        1: (True, b"h1-3"),
        2: (True, b"h2"),
        3: (False, None),
        4: (True, b"h4"),
        5: (True, b"h5"),
    }
    for height, (present, value) in expected.items():
        proof = prover.prove_historical(key_at(3), height)
        decoded = Proof.decode(proof.encode())
        assert decoded == proof
        result = verify_proof(story.scheme, decoded, root)
        assert result.ok, (height, result.reason)
        assert result.present is present, height
        assert result.value == value, height
        assert result.height == height
        assert prover.resolve_historical(key_at(3), height) == (present, value)
    # a key that never existed: provably absent at every height
    never = key_between(7)
    for height in (0, 3, 5):
        result = verify_proof(
            story.scheme, prover.prove_historical(never, height), root
        )
        assert result.ok and result.present is False


def test_historical_trace_cannot_stop_early(story):
    prover = prover_for(story)
    proof = prover.prove_historical(key_at(3), 1)
    assert len(proof.trace) >= 2
    truncated = Proof.decode(proof.encode())
    truncated.trace = truncated.trace[:-1]
    result = verify_proof(story.scheme, truncated)
    assert not result.ok
    assert "stops before" in result.reason
    overlong = Proof.decode(proof.encode())
    overlong.height = 4  # anchor walk for height 4 needs fewer steps
    assert not verify_proof(story.scheme, overlong).ok


def test_proofs_identical_after_rebuild(story, tmp_path):
    queries = [key_at(3), key_between(5), key_at(8)]
    prover = prover_for(story)
    originals = [prover.prove_current(k).encode() for k in queries]
    historical = prover.prove_historical(key_at(3), 2).encode()
    manifest = (story.log.next_id, story.log.durable_tail, story.pruned_twigs)

    reborn = Shard(0, 0, str(tmp_path / "p"), HashScheme("sha256"))
    reborn.load(*manifest)
    prover2 = prover_for(reborn)
    assert [prover2.prove_current(k).encode() for k in queries] == originals
    assert prover2.prove_historical(key_at(3), 2).encode() == historical
    reborn.close()


def test_pruned_twig_history_is_unavailable(tmp_path):
    """Pruning reclaims a twig's bitmap, so trace steps through it can no
    longer be proven.  Entries that compaction happened to rewrite into a
    surviving twig keep their recent history; older heights, whose walk must
    traverse the pruned frames, become unprovable — though the engine can
    still answer unproven point queries from the retained log bytes."""
    shard = make_shard(tmp_path, threshold=0.9, name="compacted")
    run_block(shard, 1, [(OP_CREATE, key_at(i), b"s%d" % i) for i in range(1100)])
    run_block(shard, 2, [(OP_UPDATE, key_at(i), b"u%d" % i) for i in range(1022)])
    assert shard.pruned_twigs >= 1
    prover = prover_for(shard)
    root = prover.root()
    current = verify_proof(shard.scheme, prover.prove_current(key_at(0)), root)
    assert current.ok and current.value == b"u0"
    # rescued by a compaction move into a surviving twig
    rescued = verify_proof(
        shard.scheme, Proof.decode(prover.prove_historical(key_at(0), 1).encode()), root
    )
    assert rescued.ok and rescued.present and rescued.value == b"s0"
    # this key's height-1 entry still lives in the pruned twig
    with pytest.raises(HistoryUnavailableError):
        prover.prove_historical(key_at(500), 1)
    # every pre-compaction timeline runs through the pruned twig
    with pytest.raises(HistoryUnavailableError):
        prover.prove_historical(key_at(0), 0)
    assert prover.resolve_historical(key_at(0), 0) == (False, None)
    assert prover.resolve_historical(key_at(500), 1) == (True, b"s500")
    shard.close()


def test_state_at_reconstructs_every_height(tmp_path):
    shard = make_shard(tmp_path, name="hist")
    model: dict[bytes, bytes] = {}
    snapshots = {}
    rng = random.Random(31)
    universe = [key_at(i) for i in range(40)]
    for height in range(1, 8):
        ops = []
        for _ in range(25):
            k = rng.choice(universe)
            roll = rng.random()
            if roll < 0.45:
                ops.append((OP_CREATE, k, b"c%d" % height))
            elif roll < 0.8:
                ops.append((OP_UPDATE, k, b"u%d" % height))
            else:
                ops.append((OP_DELETE, k, None))
        results, _ = run_block(shard, height, ops)
        for (kind, k, v), res in zip(ops, results):
            if not res.ok:
                continue
            if kind == OP_DELETE:
                del model[k]
            else:
                model[k] = v
        snapshots[height] = dict(model)
    for height, snap in snapshots.items():
        assert shard.state_at(height) == snap
    assert shard.state_at(0) == {}
    shard.close()
