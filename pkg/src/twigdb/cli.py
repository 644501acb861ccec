"""Command-line interface.

Commands print ``key=value`` lines on stdout (stable, script-friendly) and
map the error taxonomy to exit codes:

    0   success
    1   a proof failed verification
    2   malformed input (bad arguments, undecodable bytes, config conflicts)
    3   storage trouble (IO errors, corruption, consistency violations)

Examples::

    twigdb populate --dir /tmp/db --blocks 10 --txs 1000
    twigdb mixed --dir /tmp/db --blocks 20 --txs 500 --mix 15,9,1,1
    twigdb prove --dir /tmp/db --key 74657374 --out proof.bin
    twigdb verify --proof proof.bin --root <hex> --key 74657374
    twigdb replay-check --dir /tmp/db
    twigdb stats --dir /tmp/db
"""

from __future__ import annotations

import argparse
import os
import sys
import time

from .errors import (
    ConfigError,
    ConsistencyError,
    CorruptionError,
    DecodeError,
    EncodeError,
    HistoryUnavailableError,
    ProofDecodeError,
    ProofError,
    StorageError,
    TwigDbError,
)
from .merkle import HashScheme
from .proof import Proof, verify_proof
from .store import Store, canonical_key
from .workload import DEFAULT_MIX, WorkloadGenerator, parse_mix

USAGE_ERRORS = (EncodeError, DecodeError, ProofDecodeError, ConfigError, ValueError)
STORAGE_ERRORS = (StorageError, CorruptionError, ConsistencyError)


def _emit(**fields) -> None:
    for name, value in fields.items():
        print(f"{name}={value}")


def _add_store_args(p: argparse.ArgumentParser, creating: bool) -> None:
    p.add_argument("--dir", required=True, help="store directory")
    p.add_argument("--pipeline", choices=("serial", "threaded"), default="serial")
    if creating:
        p.add_argument("--shard-bits", type=int, default=None)
        p.add_argument("--hash", dest="hash_name", choices=("sha256", "blake2b256"), default=None)
        p.add_argument("--compaction-threshold", type=float, default=None)


def _open_store(args, creating: bool = False) -> Store:
    kwargs = {"pipeline": args.pipeline} if hasattr(args, "pipeline") else {}
    if creating:
        kwargs.update(
            shard_bits=args.shard_bits,
            hash_name=args.hash_name,
            compaction_threshold=args.compaction_threshold,
        )
    return Store.open(args.dir, **kwargs)


def _run_blocks(store: Store, blocks, label: str) -> None:
    ops_done = 0
    started = time.perf_counter()
    receipt = None
    for receipt in store.submit_stream(blocks):
        ops_done += len(receipt.results)
    elapsed = time.perf_counter() - started
    _emit(
        command=label,
        block_height=store.block_height,
        global_root=store.global_root.hex(),
        ops=ops_done,
        seconds=f"{elapsed:.3f}",
        ops_per_second=f"{ops_done / elapsed:.0f}" if elapsed > 0 else "inf",
    )
    if receipt is not None:
        failed = sum(1 for r in receipt.results if not r.ok)
        if failed:
            _emit(last_block_failed_ops=failed)


def cmd_populate(args) -> int:
    if args.crash_at:
        os.environ["TWIGDB_CRASH_AT"] = args.crash_at
    with _open_store(args, creating=True) as store:
        gen = WorkloadGenerator(args.seed, value_size=args.value_size)
        blocks = (gen.populate_block(args.txs) for _ in range(args.blocks))
        _run_blocks(store, blocks, "populate")
    return 0


def cmd_mixed(args) -> int:
    if args.crash_at:
        os.environ["TWIGDB_CRASH_AT"] = args.crash_at
    with _open_store(args, creating=True) as store:
        gen = WorkloadGenerator(args.seed, parse_mix(args.mix), args.value_size)
        warm = args.warm_keys
        if warm and not store.block_height:
            for receipt in store.submit_stream([gen.populate_block(warm)]):
                pass
        blocks = (gen.mixed_block(args.txs) for _ in range(args.blocks))
        _run_blocks(store, blocks, "mixed")
    return 0


def cmd_get(args) -> int:
    with _open_store(args) as store:
        value = store.get(bytes.fromhex(args.key))
        if value is None:
            _emit(present="false")
        else:
            _emit(present="true", value=value.hex())
    return 0


def cmd_prove(args) -> int:
    with _open_store(args) as store:
        key = bytes.fromhex(args.key)
        if args.height is not None:
            proof = store.prove_historical(key, args.height)
        else:
            proof = store.prove(key)
        blob = proof.encode()
        result = store.verify(Proof.decode(blob))
        if args.out:
            with open(args.out, "wb") as fh:
                fh.write(blob)
        _emit(
            kind=proof.kind,
            bytes=len(blob),
            root=store.global_root.hex(),
            self_check="ok" if result.ok else f"failed:{result.reason}",
            present=str(result.present).lower(),
        )
        if args.out:
            _emit(proof_file=args.out)
        else:
            _emit(proof=blob.hex())
        return 0 if result.ok else 1


def cmd_verify(args) -> int:
    if args.proof:
        with open(args.proof, "rb") as fh:
            blob = fh.read()
    else:
        blob = bytes.fromhex(args.proof_hex)
    proof = Proof.decode(blob)
    scheme = HashScheme(args.hash_name)
    expected = bytes.fromhex(args.root) if args.root else None
    result = verify_proof(scheme, proof, expected)
    _emit(ok=str(result.ok).lower())
    if not result.ok:
        _emit(reason=result.reason)
        return 1
    _emit(present=str(result.present).lower())
    if args.key:
        subject = bytes.fromhex(args.key)
        if canonical_key(subject) != result.key:
            _emit(key_match="false")
            return 1
        _emit(key_match="true")
    if result.value is not None:
        _emit(value=result.value.hex())
    if result.height is not None:
        _emit(height=result.height)
    return 0


def cmd_replay_check(args) -> int:
    """Reopen the store (a full recovery) and report what was reproduced."""
    with _open_store(args) as store:
        state = store.reconstruct_state(store.block_height)
        _emit(
            block_height=store.block_height,
            global_root=store.global_root.hex(),
            live_keys=len(state),
            recovery="ok",
        )
    return 0


def cmd_stats(args) -> int:
    with _open_store(args) as store:
        stats = store.stats()
        _emit(
            block_height=stats["block_height"],
            global_root=stats["global_root"],
            shard_bits=stats["shard_bits"],
            hash_name=stats["hash_name"],
            backend=stats["backend"],
        )
        for name, value in sorted(stats["counters"].items()):
            _emit(**{f"counters.{name}": value})
        for name, value in sorted(stats["memory"].items()):
            _emit(**{f"memory.{name}": value})
        for shard in stats["shards"]:
            sid = shard["shard_id"]
            for name in ("next_id", "active_entries", "flushed_twigs", "pruned_twigs"):
                _emit(**{f"shard{sid}.{name}": shard[name]})
            _emit(**{f"shard{sid}.utilization": f"{shard['utilization']:.4f}"})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twigdb", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("populate", help="append create-only blocks")
    _add_store_args(p, creating=True)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--txs", type=int, default=1000, help="operations per block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--value-size", type=int, default=32)
    p.add_argument("--crash-at", default=None, help="fault injection point:count")
    p.set_defaults(fn=cmd_populate)

    p = sub.add_parser("mixed", help="append mixed read/update/create/delete blocks")
    _add_store_args(p, creating=True)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--txs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix", default=",".join(map(str, DEFAULT_MIX)))
    p.add_argument("--value-size", type=int, default=32)
    p.add_argument("--warm-keys", type=int, default=0, help="pre-create this many keys")
    p.add_argument("--crash-at", default=None)
    p.set_defaults(fn=cmd_mixed)

    p = sub.add_parser("get", help="read one key (hex)")
    _add_store_args(p, creating=False)
    p.add_argument("--key", required=True)
    p.set_defaults(fn=cmd_get)

    p = sub.add_parser("prove", help="build (and self-check) a proof for a key")
    _add_store_args(p, creating=False)
    p.add_argument("--key", required=True, help="user key, hex")
    p.add_argument("--height", type=int, default=None, help="historical height")
    p.add_argument("--out", default=None, help="write the proof bytes here")
    p.set_defaults(fn=cmd_prove)

    p = sub.add_parser("verify", help="verify proof bytes without a store")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--proof", help="file containing proof bytes")
    group.add_argument("--proof-hex", help="proof bytes as hex")
    p.add_argument("--root", default=None, help="expected global root, hex")
    p.add_argument("--key", default=None, help="user key the proof should speak for")
    p.add_argument("--hash", dest="hash_name", default="sha256")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("replay-check", help="recover the store and report its state")
    _add_store_args(p, creating=False)
    p.set_defaults(fn=cmd_replay_check)

    p = sub.add_parser("stats", help="print store statistics")
    _add_store_args(p, creating=False)
    p.set_defaults(fn=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.fn(args)
    except (ProofError, HistoryUnavailableError) as exc:
        _emit(error=type(exc).__name__, detail=exc)
        return 1
    except USAGE_ERRORS as exc:
        _emit(error=type(exc).__name__, detail=exc)
        return 2
    except STORAGE_ERRORS as exc:
        _emit(error=type(exc).__name__, detail=exc)
        return 3
    except TwigDbError as exc:
        _emit(error=type(exc).__name__, detail=exc)
        return 3
    except OSError as exc:
        _emit(error="OSError", detail=exc)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
