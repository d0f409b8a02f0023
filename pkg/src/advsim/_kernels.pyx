# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: 64-bit string hashing, MinHash signatures over
4-byte windows, signature min-merging/agreement, and hashed bigram counts.

advsim._kernels_py is the drop-in pure-Python twin; both must produce
bit-identical results (tests/test_kernels.py enforces this).
"""

from libc.stdint cimport uint64_t


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z ^= z >> 30
    z = z * <uint64_t>0xBF58476D1CE4E5B9u
    z ^= z >> 27
    z = z * <uint64_t>0x94D049BB133111EBu
    z ^= z >> 31
    return z


def fnv1a64(data: bytes) -> int:
    cdef const unsigned char[::1] view = data
    cdef uint64_t h = <uint64_t>0xCBF29CE484222325u
    cdef Py_ssize_t i
    for i in range(view.shape[0]):
        h = (h ^ view[i]) * <uint64_t>0x100000001B3u
    return h


def mix(x: int) -> int:
    return mix64(<uint64_t>x)


def minhash_sig_into(data: bytes, const uint64_t[::1] seeds, uint64_t[::1] out):
    """out[i] = min over 4-byte windows w of mix64(u32(w) ^ seeds[i]);
    empty window sets leave out at the identity (all ones)."""
    cdef Py_ssize_t n = len(data), nh = seeds.shape[0], i, j
    cdef const unsigned char[::1] view
    cdef uint64_t x, h
    for i in range(nh):
        out[i] = <uint64_t>0xFFFFFFFFFFFFFFFFu
    if n < 4:
        return
    view = data
    for j in range(n - 3):
        x = (<uint64_t>view[j]
             | (<uint64_t>view[j + 1]) << 8
             | (<uint64_t>view[j + 2]) << 16
             | (<uint64_t>view[j + 3]) << 24)
        for i in range(nh):
            h = mix64(x ^ seeds[i])
            if h < out[i]:
                out[i] = h


def merge_min_into(sigs: list, uint64_t[::1] out):
    cdef Py_ssize_t nh = out.shape[0], i, k
    cdef const uint64_t[::1] s
    for i in range(nh):
        out[i] = <uint64_t>0xFFFFFFFFFFFFFFFFu
    for k in range(len(sigs)):
        s = sigs[k]
        for i in range(nh):
            if s[i] < out[i]:
                out[i] = s[i]


def sig_agreement(const uint64_t[::1] a, const uint64_t[::1] b) -> float:
    cdef Py_ssize_t n = a.shape[0], i
    cdef Py_ssize_t hits = 0
    for i in range(n):
        if a[i] == b[i]:
            hits += 1
    return hits / <double>n


def bigram_counts_into(const uint64_t[::1] token_hashes, salt: int, double[::1] out):
    """Histogram of hashed consecutive token-hash pairs."""
    cdef Py_ssize_t n = token_hashes.shape[0], dim = out.shape[0], i
    cdef uint64_t s = <uint64_t>salt, h
    for i in range(dim):
        out[i] = 0.0
    for i in range(n - 1):
        h = mix64(token_hashes[i] ^ ((token_hashes[i + 1] << 32)
                                     | (token_hashes[i + 1] >> 32)) ^ s)
        out[h % <uint64_t>dim] += 1.0
