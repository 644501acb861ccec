"""Block execution pipelines: one serial, one with per-shard stage threads.

Both produce bit-identical state.  Operations are routed to shards up front
(a shard sees the block order restricted to its own keys), every shard
applies its operations strictly in that order, and every shard commits its
blocks strictly in height order.  The threaded pipeline only overlaps work
*across* shards and lets block N+1's reads and updates proceed while block
N's Merkleization and flushing are still running; it reorders nothing within
a shard, which is all determinism needs.

Per shard, two stages run on their own threads:

    worker     prefetch (the op's physical reads) then apply, op by op
    committer  Merkleize the sealed block, flush full twigs, barrier,
               snapshot the fresh twig

The queues between stages are bounded so a slow committer exerts
back-pressure on submission instead of letting pending blocks accumulate
without limit.
"""

from __future__ import annotations

import threading
from queue import Queue

__all__ = ["BlockTicket", "SerialPipeline", "ThreadedPipeline", "QUEUE_DEPTH"]

QUEUE_DEPTH = 4


class BlockTicket:
    """Completion handle for one submitted block."""

    __slots__ = (
        "height",
        "results",
        "roots",
        "manifest_rows",
        "error",
        "_remaining",
        "_lock",
        "_done",
    )

    def __init__(self, height: int, op_count: int, shard_count: int):
        self.height = height
        self.results = [None] * op_count
        self.roots: list[bytes | None] = [None] * shard_count
        # (next_id, durable_tail, pruned_twigs) captured right after each
        # shard's commit, before its committer can start on the next block
        self.manifest_rows: list[tuple[int, int, int] | None] = [None] * shard_count
        self.error: BaseException | None = None
        self._remaining = shard_count
        self._lock = threading.Lock()
        self._done = threading.Event()

    def _shard_done(self) -> None:
        with self._lock:
            self._remaining -= 1
            if not self._remaining:
                self._done.set()

    def _fail(self, exc: BaseException) -> None:
        with self._lock:
            self.error = self.error or exc
            self._done.set()

    def wait(self) -> "BlockTicket":
        self._done.wait()
        if self.error is not None:
            raise self.error
        return self

    def ready(self) -> bool:
        return self._done.is_set()


def _apply_ops(shard, ops, ticket: BlockTicket) -> None:
    for op_index, kind, key, value, version in ops:
        cache = shard.prefetch_op(kind, key)
        ticket.results[op_index] = shard.apply_op(kind, key, value, version, cache)


def _commit_into(shard, task, ticket: BlockTicket) -> None:
    ticket.roots[shard.shard_id] = shard.commit(task)
    ticket.manifest_rows[shard.shard_id] = (
        task.next_id,
        shard.log.durable_tail,
        shard.pruned_twigs,
    )
    ticket._shard_done()


class SerialPipeline:
    """Everything inline on the caller's thread; the determinism baseline."""

    def __init__(self, shards):
        self.shards = shards

    def submit(self, height: int, routed, op_count: int) -> BlockTicket:
        ticket = BlockTicket(height, op_count, len(self.shards))
        for shard, ops in zip(self.shards, routed):
            _apply_ops(shard, ops, ticket)
            task = shard.seal_block(height)
            _commit_into(shard, task, ticket)
        return ticket

    def close(self) -> None:
        pass


class ThreadedPipeline:
    def __init__(self, shards):
        self.shards = shards
        self._work_queues: list[Queue] = []
        self._commit_queues: list[Queue] = []
        self._threads: list[threading.Thread] = []
        for shard in shards:
            wq: Queue = Queue(maxsize=QUEUE_DEPTH)
            cq: Queue = Queue(maxsize=QUEUE_DEPTH)
            self._work_queues.append(wq)
            self._commit_queues.append(cq)
            for name, fn, args in (
                (f"twigdb-worker-{shard.shard_id}", self._worker, (shard, wq, cq)),
                (f"twigdb-committer-{shard.shard_id}", self._committer, (shard, cq)),
            ):
                t = threading.Thread(target=fn, args=args, name=name, daemon=True)
                t.start()
                self._threads.append(t)

    @staticmethod
    def _worker(shard, wq: Queue, cq: Queue) -> None:
        while True:
            item = wq.get()
            if item is None:
                cq.put(None)
                return
            height, ops, ticket = item
            try:
                _apply_ops(shard, ops, ticket)
                task = shard.seal_block(height)
            except BaseException as exc:  # propagate to the waiter
                ticket._fail(exc)
                continue
            cq.put((task, ticket))

    @staticmethod
    def _committer(shard, cq: Queue) -> None:
        while True:
            item = cq.get()
            if item is None:
                return
            task, ticket = item
            try:
                _commit_into(shard, task, ticket)
            except BaseException as exc:
                ticket._fail(exc)

    def submit(self, height: int, routed, op_count: int) -> BlockTicket:
        ticket = BlockTicket(height, op_count, len(self.shards))
        for wq, ops in zip(self._work_queues, routed):
            wq.put((height, ops, ticket))
        return ticket

    def close(self) -> None:
        for wq in self._work_queues:
            wq.put(None)
        for t in self._threads:
            t.join()
