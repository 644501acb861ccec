"""Per-shard upper tree over twig roots, plus global-root assembly.

The upper tree is never persisted: it is cheap to rebuild (two hashes per
twig plus one reduction pass) and lives entirely in memory as sparse
per-level maps.  Level 0 holds twig roots; each parent is
``H(0x01 || left || right)`` with absent children standing in for
level-appropriate null digests (an empty twig at level 0, doubled upward).

The tree height is ``ceil(log2(twig_count))`` and grows as twigs are added;
proof paths therefore lengthen over time, which the proof tests pin down.

Pruning advances a left-to-right frontier.  A pruned twig's root stays
resident only while its parent can still be recomputed (i.e. until the
sibling subtree is fully pruned as well); after that the parent digest alone
carries the information.  None of this ever changes the shard root.
"""

from __future__ import annotations

from .errors import PruningViolationError
from .merkle import HashScheme

__all__ = ["ShardTree", "global_root_digest"]


class ShardTree:
    def __init__(self, scheme: HashScheme):
        self.scheme = scheme
        self.levels: list[dict[int, bytes]] = [{}]
        self.twig_count = 0
        self.frontier = 0  # twigs below this index are pruned

    @property
    def height(self) -> int:
        return max(self.twig_count - 1, 0).bit_length()

    def _node(self, level: int, index: int) -> bytes:
        node = self.levels[level].get(index)
        return node if node is not None else self.scheme.upper_null(level)

    def update_twig_root(self, index: int, digest: bytes) -> None:
        """Install a twig root and recompute its path to the shard root."""
        if index < self.frontier:
            raise PruningViolationError(f"twig {index} is behind the pruning frontier")
        if index >= self.twig_count:
            self.twig_count = index + 1
        height = self.height
        while len(self.levels) <= height:
            self.levels.append({})
        self.levels[0][index] = digest
        node_hash = self.scheme.node_hash
        idx = index
        for level in range(height):
            left = idx & ~1
            parent = node_hash(self._node(level, left), self._node(level, left | 1))
            idx >>= 1
            self.levels[level + 1][idx] = parent

    def shard_root(self) -> bytes:
        height = self.height
        if height == 0:
            return self._node(0, 0)
        return self.levels[height][0]

    def prune_twig(self, index: int) -> None:
        """Advance the frontier past ``index``, dropping nodes no parent needs."""
        if index != self.frontier:
            raise PruningViolationError(
                f"twigs must prune left to right (frontier {self.frontier}, got {index})"
            )
        self.frontier = index + 1
        # Drop sibling pairs whose parent covers an entirely-pruned range.
        idx = index
        for level in range(self.height):
            parent = idx >> 1
            if ((parent + 1) << (level + 1)) > self.frontier:
                break
            self.levels[level].pop(2 * parent, None)
            self.levels[level].pop(2 * parent + 1, None)
            idx = parent

    def bulk_load(self, roots: list[bytes]) -> None:
        """Rebuild from a dense list of twig roots (startup path)."""
        if self.levels != [{}] or self.twig_count:
            raise PruningViolationError("bulk_load requires an empty tree")
        self.twig_count = len(roots)
        self.levels = [dict(enumerate(roots))]
        node_hash = self.scheme.node_hash
        level = 0
        width = len(roots)
        while width > 1:
            nulls = self.scheme.upper_null(level)
            cur = self.levels[level]
            nxt = {}
            for i in range(0, width, 2):
                nxt[i >> 1] = node_hash(cur.get(i, nulls), cur.get(i + 1, nulls))
            self.levels.append(nxt)
            level += 1
            width = (width + 1) >> 1

    def sibling_path(self, index: int) -> list[bytes]:
        """Digests of the siblings along a twig's path to the shard root."""
        path = []
        idx = index
        for level in range(self.height):
            path.append(self._node(level, idx ^ 1))
            idx >>= 1
        return path

    def upper_node_count(self) -> int:
        return sum(len(level) for level in self.levels[1:])

    def metadata_bytes(self) -> int:
        """Upper-node payload bytes (level 0 is accounted with the twigs)."""
        return 32 * self.upper_node_count()


def global_root_digest(scheme: HashScheme, shard_roots: list[bytes]) -> bytes:
    """Fold the per-shard roots (shard id ascending) into the global root.

    Shard counts are powers of two by construction; the single-shard case
    pads with a 32-zero-byte digest so the global root is always at least
    one interior hash.
    """
    nodes = list(shard_roots)
    if len(nodes) == 1:
        nodes.append(bytes(32))
    while len(nodes) > 1:
        nodes = [scheme.node_hash(nodes[i], nodes[i + 1]) for i in range(0, len(nodes), 2)]
    return nodes[0]
