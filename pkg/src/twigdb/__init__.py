"""twigdb: an embedded verifiable key-value store.

All state lives in an append-only per-shard entry log; authentication comes
from an in-memory Merkle forest of fixed-size "twigs" (2048-leaf subtrees)
whose roots roll up through per-shard trees into a single global root per
committed block.

Typical use::

    from twigdb import Store

    with Store.open("./db", shard_bits=2) as store:
        receipt = store.apply_block([("create", b"alice", b"100")])
        proof = store.prove(b"alice")
        assert store.verify(proof).value == b"100"

Proof blobs are self-contained: ``verify_proof(scheme, Proof.decode(blob),
trusted_root)`` checks them without any store at hand.
"""

from .entry import NULL_ID, Entry, pack_version, unpack_version
from .errors import (
    BlockSequenceError,
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
from .merkle import HashScheme, compiled_backend_available
from .proof import Proof, VerifyResult, verify_proof
from .reference import ReferenceModel
from .store import (
    OP_CREATE,
    OP_DELETE,
    OP_READ,
    OP_UPDATE,
    BlockReceipt,
    Store,
    StoreConfig,
    canonical_key,
)
from .workload import WorkloadGenerator

__version__ = "0.1.0"

__all__ = [
    "BlockReceipt",
    "BlockSequenceError",
    "ConfigError",
    "ConsistencyError",
    "CorruptionError",
    "DecodeError",
    "EncodeError",
    "Entry",
    "HashScheme",
    "HistoryUnavailableError",
    "NULL_ID",
    "OP_CREATE",
    "OP_DELETE",
    "OP_READ",
    "OP_UPDATE",
    "Proof",
    "ProofDecodeError",
    "ProofError",
    "ReferenceModel",
    "StorageError",
    "Store",
    "StoreConfig",
    "TwigDbError",
    "VerifyResult",
    "WorkloadGenerator",
    "canonical_key",
    "compiled_backend_available",
    "pack_version",
    "unpack_version",
    "verify_proof",
    "__version__",
]
