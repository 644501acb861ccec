"""Exception taxonomy.

Every error raised by the package derives from :class:`TwigDbError` so that
embedders can catch one type at the API boundary.  The CLI maps these onto
exit codes: decode/usage problems exit 2, storage problems exit 3, and
verification or ledger failures exit 1.
"""

from __future__ import annotations

__all__ = [
    "TwigDbError",
    "EncodeError",
    "DecodeError",
    "CapacityError",
    "LifecycleError",
    "DoubleDeactivationError",
    "PruningViolationError",
    "ConfigError",
    "NotFoundError",
    "DuplicateKeyError",
    "BoundaryProtectionError",
    "ShardRoutingError",
    "UninitializedShardError",
    "ConsistencyError",
    "CorruptionError",
    "StorageError",
    "BlockSequenceError",
    "ProofError",
    "ProofDecodeError",
    "HistoryUnavailableError",
]


class TwigDbError(Exception):
    """Base class for all package errors."""


class EncodeError(TwigDbError):
    """An entry violates the wire-format bounds and cannot be serialized."""


class DecodeError(TwigDbError):
    """A byte string does not parse as a well-formed entry frame."""


class CapacityError(TwigDbError):
    """An append was attempted against a structure that is already full."""


class LifecycleError(TwigDbError):
    """A twig state transition was requested out of order."""


class DoubleDeactivationError(TwigDbError):
    """An active bit that is already clear was cleared again."""


class PruningViolationError(TwigDbError):
    """An operation addressed a twig behind the pruning frontier."""


class ConfigError(TwigDbError):
    """Invalid or conflicting store configuration."""


class NotFoundError(TwigDbError):
    """The key is not present in the store."""


class DuplicateKeyError(TwigDbError):
    """A create targeted a key that already exists."""


class BoundaryProtectionError(TwigDbError):
    """A mutation targeted a shard sentinel key."""


class ShardRoutingError(TwigDbError):
    """A key was routed to a shard that does not own it."""


class UninitializedShardError(TwigDbError):
    """A lookup ran against a shard whose sentinels were never written."""


class ConsistencyError(TwigDbError):
    """Internal invariants disagree (index, ring linkage, or id bookkeeping)."""


class CorruptionError(TwigDbError):
    """Persisted state failed validation during replay or recovery."""


class StorageError(TwigDbError):
    """The underlying files could not be read or written."""


class BlockSequenceError(TwigDbError):
    """Block heights were submitted out of order or with gaps."""


class ProofError(TwigDbError):
    """A proof could not be produced."""


class ProofDecodeError(TwigDbError):
    """Proof bytes are malformed (distinct from a proof that verifies false)."""


class HistoryUnavailableError(TwigDbError):
    """A historical query needs entries that have been pruned away."""
