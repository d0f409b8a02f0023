"""Similarity oracles: the attack-facing scoring contract plus four
built-in scorers and a line-JSON remote client.

Built-ins:
  gsize    - node-count comparison
  gedit    - labeled graph edit distance (exact on tiny graphs, bipartite
             assignment approximation above, scored as an edit path so it
             always upper-bounds the true distance)
  catalog1 - MinHash/Jaccard fuzzy hashing over 4-byte token shingles
  ngram    - cosine over hashed instruction-token bigrams

All built-ins are deterministic (fixed salts), symmetric, and score
sim(f, f) = 1.0 exactly.
"""

from __future__ import annotations

import json
import socket
import threading
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import kernels
from .cfg import BasicBlock, FunctionCfg, parse_function, serialize_function
from .errors import OracleError, ProtocolError, RemoteFailure, Timeout
from .isa import operand_kinds

_SEP = b"\x1f"


class SimilarityOracle:
    """Scoring contract: higher means more similar, sim(f, f) is maximal."""

    name = "oracle"

    def sim(self, a: FunctionCfg, b: FunctionCfg) -> float:
        raise NotImplementedError


class CountingOracle(SimilarityOracle):
    """Transparent wrapper that counts queries (importance probes and
    candidate evaluations alike)."""

    def __init__(self, inner: SimilarityOracle):
        self.inner = inner
        self.name = inner.name
        self.queries = 0

    def sim(self, a, b):
        self.queries += 1
        return self.inner.sim(a, b)


# ---------------------------------------------------------------------------
# GSIZE
# ---------------------------------------------------------------------------

class GsizeOracle(SimilarityOracle):
    """1 - |Na - Nb| / max(Na, Nb) over basic-block counts."""

    name = "gsize"

    def sim(self, a, b):
        na, nb = a.num_nodes, b.num_nodes
        return 1.0 - abs(na - nb) / max(na, nb)


# ---------------------------------------------------------------------------
# GEDIT
# ---------------------------------------------------------------------------

_EXACT_NODE_LIMIT = 6


def _graph_of(f: FunctionCfg):
    ids = sorted(f.blocks)
    index = {bid: i for i, bid in enumerate(ids)}
    labels = [tuple(i.mnemonic for i in f.blocks[bid].instrs) for bid in ids]
    edges = frozenset(
        (index[bid], index[s]) for bid in ids for s in f.blocks[bid].succs
    )
    return labels, edges


def _induced_cost(la, ea, lb, eb, mapping: dict[int, int]) -> int:
    """True edit-path cost of a node mapping: substitutions, node
    deletions/insertions, and every edge edit the mapping forces."""
    inverse = {v: k for k, v in mapping.items()}
    cost = sum(1 for u, v in mapping.items() if la[u] != lb[v])
    cost += (len(la) - len(mapping)) + (len(lb) - len(mapping))
    for u, v in ea:
        if u in mapping and v in mapping:
            if (mapping[u], mapping[v]) not in eb:
                cost += 1
        else:
            cost += 1
    for x, y in eb:
        if x in inverse and y in inverse:
            if (inverse[x], inverse[y]) not in ea:
                cost += 1
        else:
            cost += 1
    return cost


def _exact_ged(la, ea, lb, eb) -> int:
    """Branch-and-bound over all injective partial mappings."""
    best = _induced_cost(la, ea, lb, eb, {})  # delete/insert everything

    def recurse(u: int, mapping: dict[int, int], partial: int):
        nonlocal best
        if partial >= best:
            return
        if u == len(la):
            cost = _induced_cost(la, ea, lb, eb, mapping)
            if cost < best:
                best = cost
            return
        for v in range(len(lb)):
            if v not in mapping.values():
                mapping[u] = v
                recurse(u + 1, mapping,
                        partial + (0 if la[u] == lb[v] else 1))
                del mapping[u]
        recurse(u + 1, mapping, partial + 1)  # delete u

    recurse(0, {}, 0)
    return best


def _assignment_ged(la, ea, lb, eb) -> int:
    """Bipartite-assignment heuristic: solve the folded local-cost LSAP,
    then charge the resulting edit path exactly."""
    na, nb = len(la), len(lb)
    out_a = [0] * na
    in_a = [0] * na
    for u, v in ea:
        out_a[u] += 1
        in_a[v] += 1
    out_b = [0] * nb
    in_b = [0] * nb
    for u, v in eb:
        out_b[u] += 1
        in_b[v] += 1

    big = float(na + nb + len(ea) + len(eb) + 10)
    size = na + nb
    cost = np.full((size, size), big, dtype=np.float64)
    for i in range(na):
        for j in range(nb):
            cost[i, j] = (0.0 if la[i] == lb[j] else 1.0) + 0.5 * (
                abs(out_a[i] - out_b[j]) + abs(in_a[i] - in_b[j]))
        cost[i, nb + i] = 1.0 + 0.5 * (out_a[i] + in_a[i])
    for j in range(nb):
        cost[na + j, j] = 1.0 + 0.5 * (out_b[j] + in_b[j])
    cost[na:, nb:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    mapping = {int(r): int(c) for r, c in zip(rows, cols) if r < na and c < nb}
    return _induced_cost(la, ea, lb, eb, mapping)


class GeditOracle(SimilarityOracle):
    """similarity = 1 - d / (Na + Nb + Ea + Eb); d never undercuts the
    true labeled edit distance because it always prices a concrete edit
    path. Tiny graphs (both sides <= 6 nodes) are solved exactly."""

    name = "gedit"

    def __init__(self):
        self._graphs = weakref.WeakKeyDictionary()

    def _graph(self, f):
        g = self._graphs.get(f)
        if g is None:
            g = _graph_of(f)
            self._graphs[f] = g
        return g

    def distance(self, a: FunctionCfg, b: FunctionCfg) -> int:
        la, ea = self._graph(a)
        lb, eb = self._graph(b)
        if len(la) <= _EXACT_NODE_LIMIT and len(lb) <= _EXACT_NODE_LIMIT:
            return _exact_ged(la, ea, lb, eb)
        return min(_assignment_ged(la, ea, lb, eb),
                   _assignment_ged(lb, eb, la, ea))

    def sim(self, a, b):
        la, ea = self._graph(a)
        lb, eb = self._graph(b)
        total = len(la) + len(lb) + len(ea) + len(eb)
        return 1.0 - self.distance(a, b) / total


# ---------------------------------------------------------------------------
# Catalog1-style MinHash fuzzy hashing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MinHashSignature:
    """256 per-hash minima over the function's 4-byte shingle set."""

    values: tuple[int, ...]

    def __post_init__(self):
        if len(self.values) != kernels.N_HASHES:
            raise OracleError(f"signature length {len(self.values)}")


def instruction_token_bytes(ins) -> bytes:
    return ins.mnemonic.encode() + operand_kinds(ins).encode() + _SEP


def token_stream(f: FunctionCfg) -> bytes:
    """Canonical byte stream: instruction tokens in (block id, index)
    order. This is the stream the 4-gram shingles are taken over."""
    return b"".join(
        instruction_token_bytes(i)
        for b in f.blocks_in_order()
        for i in b.instrs
    )


def shingle_set(f: FunctionCfg) -> set[bytes]:
    """Exact 4-gram shingle set of the token stream (the slow reference
    the MinHash signature estimates against)."""
    data = token_stream(f)
    return {data[i:i + 4] for i in range(len(data) - 3)}


_BLOCK_SIG_CAP = 60_000


class Catalog1Oracle(SimilarityOracle):
    """Fraction of co-agreeing MinHash positions, i.e. the standard
    unbiased Jaccard estimate over token 4-grams.

    Signatures merge per-block partial signatures with the 4-grams that
    straddle block boundaries, which is exact as long as every block
    serializes to >= 3 bytes (always true here: mnemonics are at least two
    characters plus a separator); shorter blocks trigger a whole-stream
    fallback. Per-block caching makes rescoring a lightly edited function
    cheap.
    """

    name = "catalog1"

    def __init__(self):
        self._fn_sigs: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()
        self._block_bytes: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()
        self._part_sigs: dict[bytes, np.ndarray] = {}

    def _bytes_of(self, block: BasicBlock) -> bytes:
        data = self._block_bytes.get(block)
        if data is None:
            data = b"".join(instruction_token_bytes(i) for i in block.instrs)
            self._block_bytes[block] = data
        return data

    def _sig_of_bytes(self, data: bytes) -> np.ndarray:
        sig = self._part_sigs.get(data)
        if sig is None:
            if len(self._part_sigs) >= _BLOCK_SIG_CAP:
                self._part_sigs.clear()
            sig = kernels.minhash_sig(data)
            self._part_sigs[data] = sig
        return sig

    def signature_array(self, f: FunctionCfg) -> np.ndarray:
        sig = self._fn_sigs.get(f)
        if sig is not None:
            return sig
        chunks = [self._bytes_of(b) for b in f.blocks_in_order()]
        if any(len(c) < 3 for c in chunks):
            sig = kernels.minhash_sig(b"".join(chunks))
        else:
            parts = [self._sig_of_bytes(c) for c in chunks]
            for left, right in zip(chunks, chunks[1:]):
                parts.append(self._sig_of_bytes(left[-3:] + right[:3]))
            sig = kernels.merge_sigs(parts)
        self._fn_sigs[f] = sig
        return sig

    def signature(self, f: FunctionCfg) -> MinHashSignature:
        return MinHashSignature(tuple(int(x) for x in self.signature_array(f)))

    def sim(self, a, b):
        return kernels.sig_agreement(self.signature_array(a),
                                     self.signature_array(b))


# ---------------------------------------------------------------------------
# hashed-bigram cosine
# ---------------------------------------------------------------------------

class NgramCosineOracle(SimilarityOracle):
    """Cosine over hashed (mnemonic, operand-kind) bigram counts of the
    linearized instruction sequence; a fast content-sensitive stand-in for
    instruction-embedding models."""

    name = "ngram"

    def __init__(self):
        self._fn_vecs: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()
        self._block_hashes: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def _hashes_of(self, block: BasicBlock) -> np.ndarray:
        arr = self._block_hashes.get(block)
        if arr is None:
            arr = np.array(
                [kernels.fnv1a64(f"{i.mnemonic}.{operand_kinds(i)}".encode())
                 for i in block.instrs],
                dtype=np.uint64,
            )
            self._block_hashes[block] = arr
        return arr

    def vector(self, f: FunctionCfg) -> np.ndarray:
        vec = self._fn_vecs.get(f)
        if vec is None:
            stream = np.concatenate(
                [self._hashes_of(b) for b in f.blocks_in_order()])
            counts = kernels.bigram_counts(stream)
            norm = float(np.sqrt(counts @ counts))
            vec = counts / norm if norm else counts
            self._fn_vecs[f] = vec
        return vec

    def sim(self, a, b):
        va, vb = self.vector(a), self.vector(b)
        if va is vb or np.array_equal(va, vb):
            return 1.0
        return min(1.0, float(va @ vb))


# ---------------------------------------------------------------------------
# remote oracle (line-delimited JSON)
# ---------------------------------------------------------------------------

PROTOCOL_VERSION = 1


class RemoteOracle(SimilarityOracle):
    """Client for a similarity model behind a stream socket.

    Wire format, one JSON object per line:
      hello    -> {"op": "hello", "version": 1}
      greeting <- {"ok": true, "name": str}
      request  -> {"id": n, "op": "sim", "a": <function>, "b": <function>}
      response <- {"id": n, "score": float} | {"id": n, "error": str}
    """

    def __init__(self, address: str, timeout: float = 30.0):
        host, _, port = address.rpartition(":")
        if not host:
            raise OracleError(f"remote address '{address}' is not HOST:PORT")
        self.name = f"remote:{address}"
        self._addr = (host, int(port))
        self._timeout = timeout
        self._lock = threading.Lock()
        self._file = None
        self._next_id = 0

    def _connect(self):
        try:
            sock = socket.create_connection(self._addr, timeout=self._timeout)
        except socket.timeout as exc:
            raise Timeout(f"{self.name}: connect timed out") from exc
        except OSError as exc:
            raise OracleError(f"{self.name}: {exc}") from exc
        self._file = sock.makefile("rwb")
        self._send({"op": "hello", "version": PROTOCOL_VERSION})
        greeting = self._recv()
        if greeting.get("ok") is not True or "name" not in greeting:
            raise ProtocolError(f"{self.name}: bad handshake reply {greeting!r}")
        self.name = f"remote:{greeting['name']}"

    def _send(self, obj: dict):
        try:
            self._file.write(json.dumps(obj).encode() + b"\n")
            self._file.flush()
        except OSError as exc:
            raise ProtocolError(f"{self.name}: send failed: {exc}") from exc

    def _recv(self) -> dict:
        try:
            line = self._file.readline()
        except socket.timeout as exc:
            raise Timeout(f"{self.name}: reply timed out") from exc
        except OSError as exc:
            raise ProtocolError(f"{self.name}: receive failed: {exc}") from exc
        if not line:
            raise ProtocolError(f"{self.name}: peer closed the connection")
        try:
            obj = json.loads(line)
        except ValueError as exc:
            raise ProtocolError(f"{self.name}: bad JSON reply") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"{self.name}: reply is not an object")
        return obj

    def sim(self, a, b):
        with self._lock:
            if self._file is None:
                self._connect()
            req_id = self._next_id
            self._next_id += 1
            self._send({"id": req_id, "op": "sim",
                        "a": serialize_function(a), "b": serialize_function(b)})
            reply = self._recv()
            if reply.get("id") != req_id:
                raise ProtocolError(
                    f"{self.name}: reply id {reply.get('id')} != {req_id}")
            if "error" in reply:
                raise RemoteFailure(f"{self.name}: {reply['error']}")
            score = reply.get("score")
            if not isinstance(score, (int, float)):
                raise ProtocolError(f"{self.name}: missing score")
            return float(score)

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None


def serve_connection(oracle: SimilarityOracle, conn: socket.socket) -> None:
    """Answer one client on an accepted socket until it disconnects.
    This is how out-of-scope models (or the built-ins, for testing) attach
    to the attack over the wire protocol."""
    file = conn.makefile("rwb")

    def send(obj):
        file.write(json.dumps(obj).encode() + b"\n")
        file.flush()

    line = file.readline()
    if not line:
        return
    hello = json.loads(line)
    if hello.get("op") != "hello":
        send({"ok": False, "name": oracle.name})
        return
    send({"ok": True, "name": oracle.name})
    while True:
        line = file.readline()
        if not line:
            return
        req = json.loads(line)
        try:
            a = parse_function(req["a"], strict=False)
            b = parse_function(req["b"], strict=False)
            send({"id": req.get("id"), "score": oracle.sim(a, b)})
        except Exception as exc:  # report, never silently zero
            send({"id": req.get("id"), "error": str(exc)})


BUILTIN_ORACLES = {
    "gsize": GsizeOracle,
    "gedit": GeditOracle,
    "catalog1": Catalog1Oracle,
    "ngram": NgramCosineOracle,
}


def make_oracle(spec: str) -> SimilarityOracle:
    if spec in BUILTIN_ORACLES:
        return BUILTIN_ORACLES[spec]()
    if spec.startswith("remote:"):
        return RemoteOracle(spec[len("remote:"):])
    raise OracleError(
        f"unknown oracle '{spec}' (expected one of {sorted(BUILTIN_ORACLES)} "
        "or remote:HOST:PORT)")
