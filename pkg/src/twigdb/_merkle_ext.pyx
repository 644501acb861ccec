# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled SHA-256 hashing kernels (OpenSSL libcrypto).

Mirrors the pure-Python fallback in twigdb.merkle byte for byte.  Only the
bulk subtree builders matter for throughput, but the single-shot helpers are
compiled too so that the per-append leaf hash stays off the Python heap.
"""

from cpython.bytes cimport PyBytes_FromStringAndSize
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset


cdef extern from "openssl/evp.h" nogil:
    ctypedef struct EVP_MD
    ctypedef struct EVP_MD_CTX
    const EVP_MD *EVP_sha256()
    EVP_MD_CTX *EVP_MD_CTX_new()
    void EVP_MD_CTX_free(EVP_MD_CTX *ctx)
    int EVP_DigestInit_ex(EVP_MD_CTX *ctx, const EVP_MD *md, void *engine)
    int EVP_DigestUpdate(EVP_MD_CTX *ctx, const void *data, size_t count)
    int EVP_DigestFinal_ex(EVP_MD_CTX *ctx, unsigned char *out, unsigned int *size)


BACKEND = "compiled"

cdef unsigned long long _invocations = 0

# Context reused by the single-shot helpers; those run with the GIL held, so
# sharing one context is safe.  Bulk kernels allocate their own context and
# release the GIL.
cdef EVP_MD_CTX *_shared_ctx = EVP_MD_CTX_new()


cdef inline void _tagged2(EVP_MD_CTX *ctx, unsigned char tag,
                          const unsigned char *a, size_t alen,
                          const unsigned char *b, size_t blen,
                          unsigned char *out) nogil:
    EVP_DigestInit_ex(ctx, EVP_sha256(), NULL)
    EVP_DigestUpdate(ctx, &tag, 1)
    EVP_DigestUpdate(ctx, a, alen)
    if blen:
        EVP_DigestUpdate(ctx, b, blen)
    EVP_DigestFinal_ex(ctx, out, NULL)


def hash_invocations():
    """Total hash compressions performed through this module."""
    return _invocations


def leaf_hash(const unsigned char[:] frame):
    """H(0x00 || frame) of a serialized entry frame."""
    global _invocations
    cdef unsigned char out[32]
    _tagged2(_shared_ctx, 0x00, &frame[0], frame.shape[0], NULL, 0, out)
    _invocations += 1
    return PyBytes_FromStringAndSize(<char *> out, 32)


def node_hash(const unsigned char[:] left, const unsigned char[:] right):
    """H(0x01 || left || right) for interior nodes."""
    global _invocations
    if left.shape[0] != 32 or right.shape[0] != 32:
        raise ValueError("node_hash expects two 32-byte digests")
    cdef unsigned char out[32]
    _tagged2(_shared_ctx, 0x01, &left[0], 32, &right[0], 32, out)
    _invocations += 1
    return PyBytes_FromStringAndSize(<char *> out, 32)


def bits_hash(const unsigned char[:] bits):
    """H(0x03 || bitmap bytes) over a twig's 256-byte activity bitmap."""
    global _invocations
    if bits.shape[0] != 256:
        raise ValueError("bits_hash expects 256 bitmap bytes")
    cdef unsigned char out[32]
    _tagged2(_shared_ctx, 0x03, &bits[0], 256, NULL, 0, out)
    _invocations += 1
    return PyBytes_FromStringAndSize(<char *> out, 32)


def combine(const unsigned char[:] entry_root, const unsigned char[:] bits_root):
    """H(0x02 || entry_root || bits_root): the twig root."""
    global _invocations
    if entry_root.shape[0] != 32 or bits_root.shape[0] != 32:
        raise ValueError("combine expects two 32-byte digests")
    cdef unsigned char out[32]
    _tagged2(_shared_ctx, 0x02, &entry_root[0], 32, &bits_root[0], 32, out)
    _invocations += 1
    return PyBytes_FromStringAndSize(<char *> out, 32)


def entry_root(const unsigned char[:] leaves, Py_ssize_t count,
               const unsigned char[:] nulls):
    """Root of a twig's 11-level leaf subtree.

    ``leaves`` holds ``count`` concatenated 32-byte digests (count >= 1);
    missing slots on the right are padded with the per-level null digests
    supplied in ``nulls`` (12 x 32 bytes, level 0 first).
    """
    global _invocations
    cdef Py_ssize_t width, pairs, odd, i, level
    cdef unsigned long long done = 0
    cdef unsigned char *scratch
    cdef EVP_MD_CTX *ctx
    if count < 1 or count > 2048:
        raise ValueError("leaf count out of range")
    if leaves.shape[0] < count * 32:
        raise ValueError("leaf buffer shorter than count")
    if nulls.shape[0] < 12 * 32:
        raise ValueError("need 12 null digests")
    scratch = <unsigned char *> malloc(count * 32)
    if scratch == NULL:
        raise MemoryError
    ctx = EVP_MD_CTX_new()
    if ctx == NULL:
        free(scratch)
        raise MemoryError
    memcpy(scratch, &leaves[0], count * 32)
    width = count
    with nogil:
        for level in range(11):
            pairs = width >> 1
            odd = width & 1
            for i in range(pairs):
                _tagged2(ctx, 0x01, scratch + 64 * i, 32,
                         scratch + 64 * i + 32, 32, scratch + 32 * i)
            if odd:
                _tagged2(ctx, 0x01, scratch + 64 * pairs, 32,
                         &nulls[level * 32], 32, scratch + 32 * pairs)
            done += pairs + odd
            width = pairs + odd
    out = PyBytes_FromStringAndSize(<char *> scratch, 32)
    EVP_MD_CTX_free(ctx)
    free(scratch)
    _invocations += done
    return out


def fill_subtree(unsigned char[:] heap, const unsigned char[:] leaves,
                 Py_ssize_t count):
    """Materialize a twig subtree in heap layout (node i at heap[i*32:]).

    Leaves occupy slots 2048..4095; unpopulated slots are zero (the level-0
    null digest), and all 2047 interior nodes are recomputed.  Used for
    sibling-path extraction when generating proofs.
    """
    global _invocations
    cdef Py_ssize_t i
    cdef EVP_MD_CTX *ctx
    if heap.shape[0] != 4096 * 32:
        raise ValueError("heap must be 4096*32 bytes")
    if count < 0 or count > 2048 or leaves.shape[0] < count * 32:
        raise ValueError("bad leaf buffer")
    if count:
        memcpy(&heap[2048 * 32], &leaves[0], count * 32)
    memset(&heap[(2048 + count) * 32], 0, (2048 - count) * 32)
    ctx = EVP_MD_CTX_new()
    if ctx == NULL:
        raise MemoryError
    with nogil:
        for i in range(2047, 0, -1):
            _tagged2(ctx, 0x01, &heap[2 * i * 32], 32,
                     &heap[(2 * i + 1) * 32], 32, &heap[i * 32])
    EVP_MD_CTX_free(ctx)
    _invocations += 2047
