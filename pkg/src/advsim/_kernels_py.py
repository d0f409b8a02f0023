"""Pure-Python twin of the compiled kernels in _kernels.pyx.

Selected automatically by advsim.kernels when the extension is not built.
Results are bit-identical to the compiled path (tests enforce it); only
speed differs, so attack runs against the fuzzy-hashing oracle are much
slower on this backend.
"""

MASK64 = (1 << 64) - 1
_FULL = 0xFFFFFFFFFFFFFFFF


def mix(x: int) -> int:
    z = x & MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & MASK64
    z ^= z >> 31
    return z


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def minhash_sig_into(data: bytes, seeds, out) -> None:
    nh = len(seeds)
    for i in range(nh):
        out[i] = _FULL
    n = len(data)
    if n < 4:
        return
    windows = {
        data[j] | data[j + 1] << 8 | data[j + 2] << 16 | data[j + 3] << 24
        for j in range(n - 3)
    }
    mix_ = mix
    for x in windows:
        for i in range(nh):
            h = mix_(x ^ int(seeds[i]))
            if h < out[i]:
                out[i] = h


def merge_min_into(sigs: list, out) -> None:
    nh = len(out)
    for i in range(nh):
        out[i] = _FULL
    for sig in sigs:
        for i in range(nh):
            v = sig[i]
            if v < out[i]:
                out[i] = v


def sig_agreement(a, b) -> float:
    n = len(a)
    hits = sum(1 for i in range(n) if a[i] == b[i])
    return hits / n


def bigram_counts_into(token_hashes, salt: int, out) -> None:
    dim = len(out)
    for i in range(dim):
        out[i] = 0.0
    salt &= MASK64
    for i in range(len(token_hashes) - 1):
        h2 = int(token_hashes[i + 1])
        rot = ((h2 << 32) | (h2 >> 32)) & MASK64
        h = mix(int(token_hashes[i]) ^ rot ^ salt)
        out[h % dim] += 1.0
