"""Hashing kernels with backend selection.

Imports the compiled extension when available and falls back to the
pure-Python implementation otherwise; advsim.kernels.BACKEND says which
one is active. All hash salts are fixed constants so signatures and
feature vectors are identical across machines and backends.
"""

from __future__ import annotations

import numpy as np

try:
    from . import _kernels as _impl

    BACKEND = "compiled"
except ImportError:  # extension not built
    from . import _kernels_py as _impl

    BACKEND = "python"

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

N_HASHES = 256                      # MinHash signature length
MINHASH_SALT = 0x5EED_0F_CA_7A_106  # seeds the 256 window-hash functions
NGRAM_SALT = 0x00D1_CE50_FBAD_C0DE  # bigram bucket hashing
NGRAM_DIM = 256                     # cosine-oracle feature dimension
EMBED_SALT = 0x57AD_B00C_5A17_ED01  # strand-embedding bucket hashing

fnv1a64 = _impl.fnv1a64
mix = _impl.mix


def _hash_seeds(salt: int, count: int) -> np.ndarray:
    seeds = np.empty(count, dtype=np.uint64)
    state = salt & MASK64
    for i in range(count):
        state = (state + GOLDEN) & MASK64
        seeds[i] = mix(state)
    return seeds


MINHASH_SEEDS = _hash_seeds(MINHASH_SALT, N_HASHES)

EMPTY_SIG = np.full(N_HASHES, MASK64, dtype=np.uint64)
EMPTY_SIG.setflags(write=False)


def minhash_sig(data: bytes, seeds: np.ndarray = MINHASH_SEEDS) -> np.ndarray:
    """MinHash signature of the 4-byte-window shingle set of data."""
    out = np.empty(len(seeds), dtype=np.uint64)
    _impl.minhash_sig_into(data, seeds, out)
    return out


def merge_sigs(sigs: list[np.ndarray]) -> np.ndarray:
    """Elementwise minimum: the signature of the union of shingle sets."""
    out = np.empty(N_HASHES, dtype=np.uint64)
    _impl.merge_min_into(sigs, out)
    return out


def sig_agreement(a: np.ndarray, b: np.ndarray) -> float:
    """Fraction of agreeing positions: the Jaccard estimate."""
    return _impl.sig_agreement(a, b)


def bigram_counts(token_hashes: np.ndarray, dim: int = NGRAM_DIM,
                  salt: int = NGRAM_SALT) -> np.ndarray:
    out = np.empty(dim, dtype=np.float64)
    _impl.bigram_counts_into(token_hashes, salt, out)
    return out
