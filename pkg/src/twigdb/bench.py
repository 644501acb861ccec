"""Benchmark CLI: the compiled hashing kernels against the pure fallback.

Two layers are timed:

  * kernels — leaf hashing, dense twig-subtree construction, and the
    full-twig entry root, measured per backend in isolation
  * store   — end-to-end blocks (populate, then a mixed workload) through
    the whole engine, once per backend

Run as ``twigdb-bench`` or ``python3 -m twigdb.bench``.  Output is
``key=value`` lines; every timing also reports a rate so runs of different
sizes stay comparable.
"""

from __future__ import annotations

import argparse
import os
import shutil
import tempfile
import time

from .merkle import TWIG_LEAVES, HashScheme, compiled_backend_available
from .store import Store
from .workload import WorkloadGenerator

__all__ = ["main"]


def _emit(**fields) -> None:
    for name, value in fields.items():
        print(f"{name}={value}")


def _time(fn, *args) -> float:
    start = time.perf_counter()
    fn(*args)
    return time.perf_counter() - start


def bench_kernels(scheme: HashScheme, frames: int) -> dict[str, float]:
    payloads = [b"\x07" * 120 + i.to_bytes(8, "little") for i in range(frames)]

    def leaves():
        leaf = scheme.leaf_hash
        for p in payloads:
            leaf(p)

    leaf_s = _time(leaves)

    digests = b"".join(scheme.leaf_hash(p) for p in payloads[:TWIG_LEAVES])
    rounds = max(1, frames // TWIG_LEAVES)

    def roots():
        for _ in range(rounds):
            scheme.entry_root(digests, TWIG_LEAVES)

    root_s = _time(roots)

    heap = bytearray(2 * TWIG_LEAVES * 32)

    def subtrees():
        for _ in range(rounds):
            scheme.fill_subtree(heap, digests, TWIG_LEAVES)

    fill_s = _time(subtrees)
    return {
        "leaf_hashes_per_second": frames / leaf_s,
        "entry_roots_per_second": rounds / root_s,
        "fill_subtrees_per_second": rounds / fill_s,
    }


def bench_store(backend: str, blocks: int, txs: int) -> dict[str, float]:
    directory = tempfile.mkdtemp(prefix=f"twigdb-bench-{backend}-")
    previous = os.environ.get("TWIGDB_PURE")
    if backend == "pure":
        os.environ["TWIGDB_PURE"] = "1"
    else:
        os.environ.pop("TWIGDB_PURE", None)
    try:
        with Store.open(directory, pipeline="threaded") as store:
            assert store.scheme.backend == backend
            gen = WorkloadGenerator(99)
            populate = [gen.populate_block(txs) for _ in range(blocks)]
            pop_s = _time(lambda: [store.apply_block(ops) for ops in populate])
            mixed = [gen.mixed_block(txs) for _ in range(blocks)]
            mix_s = _time(lambda: list(store.submit_stream(mixed)))
            root = store.global_root.hex()
        return {
            "populate_ops_per_second": blocks * txs / pop_s,
            "mixed_ops_per_second": blocks * txs / mix_s,
            "final_root": root,
        }
    finally:
        if previous is None:
            os.environ.pop("TWIGDB_PURE", None)
        else:
            os.environ["TWIGDB_PURE"] = previous
        shutil.rmtree(directory, ignore_errors=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="twigdb-bench", description=__doc__)
    parser.add_argument("--frames", type=int, default=200_000, help="kernel bench size")
    parser.add_argument("--blocks", type=int, default=4)
    parser.add_argument("--txs", type=int, default=2000)
    parser.add_argument(
        "--skip-store", action="store_true", help="only benchmark the hash kernels"
    )
    args = parser.parse_args(argv)

    backends = ["pure"]
    if compiled_backend_available():
        backends.insert(0, "compiled")
    _emit(compiled_available=str(compiled_backend_available()).lower())

    results: dict[str, dict[str, float]] = {}
    for backend in backends:
        scheme = HashScheme("sha256", force_pure=backend == "pure")
        assert scheme.backend == backend
        kernel = bench_kernels(scheme, args.frames)
        for name, value in kernel.items():
            _emit(**{f"{backend}.kernel.{name}": f"{value:.0f}"})
        results[backend] = kernel
        if not args.skip_store:
            store = bench_store(backend, args.blocks, args.txs)
            for name, value in store.items():
                if isinstance(value, str):
                    _emit(**{f"{backend}.store.{name}": value})
                else:
                    _emit(**{f"{backend}.store.{name}": f"{value:.0f}"})
            results[backend].update(store)

    if len(results) == 2:
        for metric in ("leaf_hashes_per_second", "entry_roots_per_second", "fill_subtrees_per_second"):
            ratio = results["compiled"][metric] / results["pure"][metric]
            _emit(**{f"speedup.{metric}": f"{ratio:.2f}x"})
        if not args.skip_store:
            roots_match = results["compiled"]["final_root"] == results["pure"]["final_root"]
            _emit(backends_agree_on_root=str(roots_match).lower())
            if not roots_match:
                return 1
            for metric in ("populate_ops_per_second", "mixed_ops_per_second"):
                ratio = results["compiled"][metric] / results["pure"][metric]
                _emit(**{f"speedup.{metric}": f"{ratio:.2f}x"})
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
