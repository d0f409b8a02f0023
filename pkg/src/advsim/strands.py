"""Strand extraction, embedding, and the per-attack candidate pool.

A strand is an intra-block chain of data-dependent instructions with no
control flow and no memory or stack writes; strands are the payload of the
two insertion transformations. The embedding is a deterministic hashed
token model: it only has to provide a usable proximity structure over
strands, not learned semantics.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import kernels
from .cfg import (FunctionCfg, Instruction, Location, clobber_set, dependency,
                  parse_function, serialize_instruction)
from .errors import EmptyDb, InsufficientStrands, InvalidStrand
from .isa import operand_kinds

if TYPE_CHECKING:  # avoid a circular import; actions come from transforms
    from .transforms import TransformAction

EMBED_DIM = 128
_BIGRAM_SALT = kernels.EMBED_SALT ^ 0x0B16B00B50000001


@dataclass(frozen=True, eq=False)
class Strand:
    """eq/hash stay identity-based: strands are deduplicated by text and
    used as weak-cache keys on hot paths."""

    instrs: tuple[Instruction, ...]
    source: tuple[str, int] | None = None  # (function id, block id)

    def __len__(self) -> int:
        return len(self.instrs)

    def text(self) -> str:
        return "; ".join(i.text() for i in self.instrs)

    def clobbers(self) -> frozenset[Location]:
        return clobber_set(self.instrs)


def validate_strand(instrs: Sequence[Instruction]) -> None:
    """Raise InvalidStrand unless instrs forms a legal strand: non-empty,
    no control flow, no memory/stack writes (checked by clobber_set), and
    every instruction past the first depending on an earlier one."""
    if not instrs:
        raise InvalidStrand("empty strand")
    clobber_set(instrs)
    for j in range(1, len(instrs)):
        if not any(dependency(instrs[i], instrs[j]) for i in range(j)):
            raise InvalidStrand(
                f"instruction '{instrs[j].text()}' independent of the strand prefix"
            )


def make_strand(instrs: Sequence[Instruction],
                source: tuple[str, int] | None = None) -> Strand:
    validate_strand(instrs)
    return Strand(instrs=tuple(instrs), source=source)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def _backward_slice(instrs: Sequence[Instruction], seed_idx: int) -> list[int]:
    """Def-use slice inside one block: walk backward from the seed,
    collecting producers of still-needed register/flag values."""
    needed = {loc for loc in instrs[seed_idx].reads
              if loc.kind in ("register", "flag")}
    members = [seed_idx]
    for j in range(seed_idx - 1, -1, -1):
        if instrs[j].writes & needed:
            members.append(j)
            needed -= instrs[j].writes
            needed |= {loc for loc in instrs[j].reads
                       if loc.kind in ("register", "flag")}
    members.reverse()
    return members


def extract_strands(corpus: Iterable[FunctionCfg]) -> "StrandDb":
    """Decompose every block of every function into backward slices and
    keep the ones that are valid strands, deduplicated by text."""
    seen: dict[str, Strand] = {}
    for f in corpus:
        for block in f.blocks_in_order():
            instrs = block.instrs
            used = [False] * len(instrs)
            for seed_idx in range(len(instrs) - 1, -1, -1):
                if used[seed_idx]:
                    continue
                members = _backward_slice(instrs, seed_idx)
                for m in members:
                    used[m] = True
                picked = [instrs[m] for m in members]
                try:
                    strand = make_strand(picked, source=(f.id, block.id))
                except InvalidStrand:
                    continue
                seen.setdefault(strand.text(), strand)
    if not seen:
        raise EmptyDb("no strand survived extraction filtering")
    strands = tuple(seen[key] for key in sorted(seen))
    return StrandDb.build(strands)


# ---------------------------------------------------------------------------
# embedding
# ---------------------------------------------------------------------------

def _token_hashes(s: Strand) -> list[int]:
    return [
        kernels.fnv1a64(f"{ins.mnemonic}.{operand_kinds(ins)}".encode())
        for ins in s.instrs
    ]


def embed_strand(s: Strand, dim: int = EMBED_DIM,
                 salt: int = kernels.EMBED_SALT) -> np.ndarray:
    """Deterministic unit vector: hashed unigram+bigram counts of
    (mnemonic, operand-kind) tokens. Register identity is deliberately
    invisible; only operand kinds matter."""
    counts = np.zeros(dim, dtype=np.float64)
    hashes = _token_hashes(s)
    for h in hashes:
        counts[kernels.mix(h ^ salt) % dim] += 1.0
    bsalt = salt ^ _BIGRAM_SALT
    for h1, h2 in zip(hashes, hashes[1:]):
        rot = ((h2 << 32) | (h2 >> 32)) & kernels.MASK64
        counts[kernels.mix(h1 ^ rot ^ bsalt) % dim] += 1.0
    norm = math.sqrt(float(counts @ counts))
    if norm == 0.0:
        basis = np.zeros(dim, dtype=np.float64)
        basis[0] = 1.0
        return basis
    return counts / norm


# ---------------------------------------------------------------------------
# database and candidate pool
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class StrandDb:
    strands: tuple[Strand, ...]
    vectors: np.ndarray  # (n, dim), rows unit-norm
    dim: int = EMBED_DIM
    salt: int = kernels.EMBED_SALT

    @classmethod
    def build(cls, strands: tuple[Strand, ...], dim: int = EMBED_DIM,
              salt: int = kernels.EMBED_SALT) -> "StrandDb":
        vectors = np.stack([embed_strand(s, dim, salt) for s in strands])
        return cls(strands=strands, vectors=vectors, dim=dim, salt=salt)

    def __len__(self) -> int:
        return len(self.strands)

    def __post_init__(self):
        self._text_index = {s.text(): i for i, s in enumerate(self.strands)}

    def index_of(self, s: Strand) -> int | None:
        return self._text_index.get(s.text())

    def neighbors(self, vector: np.ndarray, k: int,
                  exclude: int | None = None) -> list[int]:
        """Top-k db indices by cosine (rows are unit vectors, so dot
        suffices); ties broken by ascending index."""
        sims = self.vectors @ vector
        order = np.argsort(-sims, kind="stable")
        out = [int(i) for i in order if i != exclude]
        return out[:k]

    def to_json(self, path) -> None:
        doc = {
            "dim": self.dim,
            "salt": self.salt,
            "strands": [
                {
                    "source": list(s.source) if s.source else None,
                    "instrs": [serialize_instruction(i) for i in s.instrs],
                }
                for s in self.strands
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "StrandDb":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        strands = []
        for sdoc in doc["strands"]:
            # piggyback on the function parser for instruction validation
            shell = {
                "id": "strand", "name": "strand",
                "provenance": {"project": "", "compiler": "", "opt_level": ""},
                "entry": 0,
                "blocks": [{"id": 0, "succs": [], "instrs": sdoc["instrs"]}],
            }
            f = parse_function(shell, strict=False)
            source = tuple(sdoc["source"]) if sdoc.get("source") else None
            strands.append(make_strand(f.blocks[0].instrs, source=source))
        return cls.build(tuple(strands), dim=doc["dim"], salt=doc["salt"])


@dataclass(frozen=True)
class CandidatePool:
    """The strand working set the optimizer draws from; refreshed between
    iterations with half neighbors of the best insertions, half fresh
    random strands."""

    entries: tuple[int, ...]
    capacity: int
    random_fraction: float = 0.5

    def __post_init__(self):
        if len(self.entries) != self.capacity:
            raise InsufficientStrands(
                f"pool holds {len(self.entries)} entries, capacity {self.capacity}"
            )
        if len(set(self.entries)) != len(self.entries):
            raise InsufficientStrands("duplicate pool entries")


def init_pool(db: StrandDb, capacity: int, seed: int,
              random_fraction: float = 0.5) -> CandidatePool:
    if len(db) < capacity:
        raise InsufficientStrands(f"db has {len(db)} strands, need {capacity}")
    rng = random.Random(seed)
    entries = tuple(rng.sample(range(len(db)), capacity))
    return CandidatePool(entries=entries, capacity=capacity,
                         random_fraction=random_fraction)


def update_pool(pool: CandidatePool, top_actions: Sequence["TransformAction"],
                db: StrandDb, seed: int) -> CandidatePool:
    """Rebuild the pool: ceil(capacity*(1-random_fraction)) slots from the
    nearest neighbors of the top insertion strands (round-robin across
    actions, duplicates skipped), the rest fresh uniform strands."""
    neighbor_slots = math.ceil(pool.capacity * (1.0 - pool.random_fraction))
    chosen: list[int] = []
    chosen_set: set[int] = set()

    queues = []
    for action in top_actions:
        if action.strand is None:
            continue
        vec = embed_strand(action.strand, db.dim, db.salt)
        exclude = db.index_of(action.strand)
        queues.append(iter(db.neighbors(vec, len(db), exclude=exclude)))
    while queues and len(chosen) < neighbor_slots:
        next_round = []
        for queue in queues:
            for idx in queue:
                if idx not in chosen_set:
                    chosen.append(idx)
                    chosen_set.add(idx)
                    next_round.append(queue)
                    break
            if len(chosen) >= neighbor_slots:
                break
        queues = next_round

    rng = random.Random(seed)
    remaining = [i for i in range(len(db)) if i not in chosen_set]
    fill = pool.capacity - len(chosen)
    chosen.extend(rng.sample(remaining, fill))
    return CandidatePool(entries=tuple(chosen), capacity=pool.capacity,
                         random_fraction=pool.random_fraction)
