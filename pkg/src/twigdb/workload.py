"""Deterministic synthetic workloads for tests, benchmarks, and the CLI.

Every key and value is derived from the seed and a monotone counter, and the
generator tracks which keys are live, so two generators with the same seed
emit byte-identical operation streams in which every operation succeeds.
That determinism is what crash-recovery and pipeline-equivalence tests lean
on: the same (seed, blocks, txs) triple must always produce the same store.
"""

from __future__ import annotations

import hashlib
import random

from .store import OP_CREATE, OP_DELETE, OP_READ, OP_UPDATE

__all__ = ["WorkloadGenerator", "DEFAULT_MIX", "parse_mix"]

DEFAULT_MIX = (15, 9, 1, 1)  # read, update, create, delete


def parse_mix(text: str) -> tuple[int, int, int, int]:
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError("mix must be four comma-separated integers: r,u,c,d")
    mix = tuple(int(p) for p in parts)
    if any(p < 0 for p in mix) or sum(mix) == 0:
        raise ValueError("mix weights must be non-negative and not all zero")
    return mix


class WorkloadGenerator:
    def __init__(
        self,
        seed: int = 0,
        mix: tuple[int, int, int, int] = DEFAULT_MIX,
        value_size: int = 32,
    ):
        self.seed = seed
        self.mix = mix
        self.value_size = value_size
        self._rng = random.Random(seed)
        self._counter = 0
        self.live: list[bytes] = []

    def _new_key(self) -> bytes:
        key = hashlib.sha256(b"%d:%d" % (self.seed, self._counter)).digest()
        self._counter += 1
        return key

    def _value(self) -> bytes:
        seedling = hashlib.sha256(b"%d/v/%d" % (self.seed, self._counter)).digest()
        self._counter += 1
        reps = -(-self.value_size // len(seedling))
        return (seedling * reps)[: self.value_size]

    def _pick_live(self) -> bytes:
        return self.live[self._rng.randrange(len(self.live))]

    def populate_block(self, n_ops: int) -> list[tuple[str, bytes, bytes | None]]:
        ops = []
        for _ in range(n_ops):
            key = self._new_key()
            self.live.append(key)
            ops.append((OP_CREATE, key, self._value()))
        return ops

    def mixed_block(self, n_ops: int) -> list[tuple[str, bytes, bytes | None]]:
        kinds = (OP_READ, OP_UPDATE, OP_CREATE, OP_DELETE)
        ops = []
        for _ in range(n_ops):
            kind = self._rng.choices(kinds, weights=self.mix)[0]
            if kind == OP_CREATE or not self.live:
                key = self._new_key()
                self.live.append(key)
                ops.append((OP_CREATE, key, self._value()))
            elif kind == OP_DELETE:
                i = self._rng.randrange(len(self.live))
                key = self.live[i]
                self.live[i] = self.live[-1]
                self.live.pop()
                ops.append((OP_DELETE, key, None))
            elif kind == OP_UPDATE:
                ops.append((OP_UPDATE, self._pick_live(), self._value()))
            else:
                ops.append((OP_READ, self._pick_live(), None))
        return ops
