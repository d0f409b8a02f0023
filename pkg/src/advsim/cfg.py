"""Function/CFG data model, ingestion and serialization.

A function is a control-flow graph of basic blocks; every instruction
carries explicit read/write location sets so that dependence and liveness
questions never require decoding an ISA. Values are immutable after
construction: transformations build new functions and may share unchanged
blocks with their input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator

from .errors import FilterError, GraphError, InvalidStrand, SchemaError

# Corpus admission filter: anything smaller is rejected in strict mode.
MIN_INSTRUCTIONS = 6
MIN_NODES = 2

FLAG_NAMES = frozenset({"ZF", "SF", "CF", "OF", "PF", "AF"})
MEM_NAME = "mem"
STACK_NAME = "stack"


@dataclass(frozen=True)
class Location:
    """One architectural storage location.

    kind is one of "register", "flag", "stackslot", "memory". Memory is a
    single opaque location named "mem" (no aliasing model), and the stack
    is likewise a single location named "stack".
    """

    kind: str
    name: str

    def __repr__(self):
        return f"Loc({self.name})"


@lru_cache(maxsize=4096)
def location(name: str) -> Location:
    """Classify a location name. Unknown names are registers."""
    if name == MEM_NAME:
        return Location("memory", name)
    if name == STACK_NAME:
        return Location("stackslot", name)
    if name in FLAG_NAMES:
        return Location("flag", name)
    return Location("register", name)


MEM_LOC = location(MEM_NAME)
STACK_LOC = location(STACK_NAME)


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    operands: tuple[str, ...] = ()
    reads: frozenset[Location] = frozenset()
    writes: frozenset[Location] = frozenset()
    is_control_flow: bool = False
    mem_effect: str = "none"  # none | read | write
    synthetic: bool = False

    def text(self) -> str:
        """Canonical one-line rendering, used for dedup and reports."""
        if not self.operands:
            return self.mnemonic
        return self.mnemonic + " " + ",".join(self.operands)

    def touches_memory(self) -> bool:
        return self.mem_effect != "none"


@dataclass(frozen=True, eq=False)
class BasicBlock:
    id: int
    instrs: tuple[Instruction, ...]
    succs: tuple[int, ...]

    @property
    def tail(self) -> Instruction:
        return self.instrs[-1]

    def has_cf_tail(self) -> bool:
        return bool(self.instrs) and self.instrs[-1].is_control_flow

    def body_len(self) -> int:
        """Number of non-control-flow instructions."""
        return len(self.instrs) - (1 if self.has_cf_tail() else 0)


@dataclass(frozen=True)
class Provenance:
    project: str
    compiler: str
    opt_level: str


@dataclass(eq=False)
class FunctionCfg:
    """A function as an immutable CFG; eq/hash are by identity on purpose
    so functions can key weak caches cheaply. Size counts may be supplied
    by callers that know the delta they applied (transformations), and are
    derived otherwise."""

    id: str
    name: str
    provenance: Provenance
    entry: int
    blocks: dict[int, BasicBlock]
    num_instrs: int | None = None
    num_nodes: int | None = None

    def __post_init__(self):
        if self.num_instrs is None:
            self.num_instrs = sum(len(b.instrs) for b in self.blocks.values())
        if self.num_nodes is None:
            self.num_nodes = len(self.blocks)

    def blocks_in_order(self) -> list[BasicBlock]:
        return [self.blocks[i] for i in sorted(self.blocks)]

    def instructions(self) -> Iterator[tuple[int, int, Instruction]]:
        """Yield (block id, index, instruction) in (block id, index) order."""
        for block in self.blocks_in_order():
            for idx, ins in enumerate(block.instrs):
                yield block.id, idx, ins


@dataclass(frozen=True)
class ModificationSize:
    """Attack footprint: instructions/nodes added on top of the query."""

    m_instrs: int
    m_nodes: int


def modification_size(original: FunctionCfg, modified: FunctionCfg) -> ModificationSize:
    d_instrs = modified.num_instrs - original.num_instrs
    d_nodes = modified.num_nodes - original.num_nodes
    if d_instrs < 0 or d_nodes < 0:
        raise GraphError("modified function shrank; transformations only add")
    return ModificationSize(d_instrs, d_nodes)


def function_len(f: FunctionCfg) -> int:
    """Total instruction count, synthetic instructions included."""
    return f.num_instrs


# ---------------------------------------------------------------------------
# dependence / liveness primitives
# ---------------------------------------------------------------------------

def dependency(a: Instruction, b: Instruction) -> bool:
    """True when the two instructions must not be reordered.

    Conflicts: read-after-write, write-after-read, write-after-write on any
    location (memory and the stack are single locations, so any two memory
    accesses with at least one write conflict), plus anything control-flow.
    """
    if a.is_control_flow or b.is_control_flow:
        return True
    if a.writes & b.reads or a.reads & b.writes or a.writes & b.writes:
        return True
    return False


def clobber_set(instrs: Iterable[Instruction]) -> frozenset[Location]:
    """Locations a strand overwrites; exactly the save/restore list for
    strand insertion. Memory- or stack-writing and control-flow
    instructions disqualify the strand."""
    clobbered: set[Location] = set()
    for ins in instrs:
        if ins.is_control_flow:
            raise InvalidStrand(f"control flow in strand: {ins.text()}")
        if ins.mem_effect == "write" or MEM_LOC in ins.writes:
            raise InvalidStrand(f"memory write in strand: {ins.text()}")
        if STACK_LOC in ins.writes or STACK_LOC in ins.reads:
            raise InvalidStrand(f"stack access in strand: {ins.text()}")
        clobbered.update(ins.writes)
    clobbered.discard(MEM_LOC)
    return frozenset(clobbered)


# ---------------------------------------------------------------------------
# ingestion / serialization
# ---------------------------------------------------------------------------

def _expect(doc: dict, key: str, types, ctx: str):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"{ctx}: missing field '{key}'")
    value = doc[key]
    if not isinstance(value, types):
        raise SchemaError(f"{ctx}: field '{key}' has type {type(value).__name__}")
    return value


def _parse_instruction(doc: dict, ctx: str) -> Instruction:
    mn = _expect(doc, "mn", str, ctx)
    ops = _expect(doc, "ops", list, ctx)
    if not all(isinstance(o, str) for o in ops):
        raise SchemaError(f"{ctx}: operands must be strings")
    reads = _expect(doc, "reads", list, ctx)
    writes = _expect(doc, "writes", list, ctx)
    if not all(isinstance(x, str) for x in reads + writes):
        raise SchemaError(f"{ctx}: location names must be strings")
    cf = _expect(doc, "cf", bool, ctx)
    mem = _expect(doc, "mem", str, ctx)
    if mem not in ("none", "read", "write"):
        raise SchemaError(f"{ctx}: mem effect '{mem}'")
    read_locs = frozenset(location(x) for x in reads)
    write_locs = frozenset(location(x) for x in writes)
    if mem == "write" and MEM_LOC not in write_locs:
        raise SchemaError(f"{ctx}: mem_effect=write but 'mem' not in writes")
    if mem == "read" and MEM_LOC not in read_locs:
        raise SchemaError(f"{ctx}: mem_effect=read but 'mem' not in reads")
    if not read_locs and not write_locs and not cf and mn != "nop":
        raise SchemaError(f"{ctx}: '{mn}' reads and writes nothing")
    return Instruction(
        mnemonic=mn,
        operands=tuple(ops),
        reads=read_locs,
        writes=write_locs,
        is_control_flow=cf,
        mem_effect=mem,
        synthetic=bool(doc.get("synthetic", False)),
    )


def parse_function(document: dict, strict: bool = True) -> FunctionCfg:
    """Build a FunctionCfg from an ingestion-schema object.

    strict additionally enforces the corpus admission filter (at least 6
    instructions and 2 CFG nodes).
    """
    fid = _expect(document, "id", str, "function")
    name = _expect(document, "name", str, fid)
    prov_doc = _expect(document, "provenance", dict, fid)
    prov = Provenance(
        project=_expect(prov_doc, "project", str, fid),
        compiler=_expect(prov_doc, "compiler", str, fid),
        opt_level=_expect(prov_doc, "opt_level", str, fid),
    )
    entry = _expect(document, "entry", int, fid)
    blocks_doc = _expect(document, "blocks", list, fid)

    blocks: dict[int, BasicBlock] = {}
    for bdoc in blocks_doc:
        bid = _expect(bdoc, "id", int, f"{fid}: block")
        ctx = f"{fid}: block {bid}"
        if bid in blocks:
            raise GraphError(f"{ctx}: duplicate block id")
        succs = _expect(bdoc, "succs", list, ctx)
        if not all(isinstance(s, int) for s in succs):
            raise SchemaError(f"{ctx}: successor ids must be integers")
        instr_docs = _expect(bdoc, "instrs", list, ctx)
        instrs = tuple(
            _parse_instruction(idoc, f"{ctx}, instr {i}")
            for i, idoc in enumerate(instr_docs)
        )
        blocks[bid] = BasicBlock(id=bid, instrs=instrs, succs=tuple(succs))

    f = FunctionCfg(id=fid, name=name, provenance=prov, entry=entry, blocks=blocks)
    check_function(f, strict=strict)
    return f


def check_function(f: FunctionCfg, strict: bool = False) -> None:
    """Validate every structural invariant; raises on the first violation."""
    if not f.blocks:
        raise GraphError(f"{f.id}: function has no blocks")
    if f.entry not in f.blocks:
        raise GraphError(f"{f.id}: entry block {f.entry} does not exist")
    for block in f.blocks.values():
        ctx = f"{f.id}: block {block.id}"
        if not block.instrs:
            raise GraphError(f"{ctx}: empty block")
        if len(block.succs) > 2:
            raise GraphError(f"{ctx}: more than two successors")
        if len(set(block.succs)) != len(block.succs):
            raise GraphError(f"{ctx}: duplicate successor")
        for s in block.succs:
            if s not in f.blocks:
                raise GraphError(f"{ctx}: dangling successor {s}")
        for ins in block.instrs[:-1]:
            if ins.is_control_flow:
                raise GraphError(f"{ctx}: control flow before block tail")
        if block.has_cf_tail():
            # Unconditional transfers have one target, conditionals two,
            # returns none.
            if len(block.succs) not in (0, 1, 2):
                raise GraphError(f"{ctx}: bad successor count")
        elif len(block.succs) > 1:
            raise GraphError(f"{ctx}: fallthrough block with two successors")
    if strict:
        if f.num_instrs < MIN_INSTRUCTIONS or f.num_nodes < MIN_NODES:
            raise FilterError(
                f"{f.id}: {f.num_instrs} instructions / {f.num_nodes} nodes "
                f"below the {MIN_INSTRUCTIONS}-instruction/{MIN_NODES}-node filter"
            )


def serialize_instruction(ins: Instruction) -> dict:
    doc = {
        "mn": ins.mnemonic,
        "ops": list(ins.operands),
        "reads": sorted(loc.name for loc in ins.reads),
        "writes": sorted(loc.name for loc in ins.writes),
        "cf": ins.is_control_flow,
        "mem": ins.mem_effect,
    }
    if ins.synthetic:
        doc["synthetic"] = True
    return doc


def serialize_function(f: FunctionCfg) -> dict:
    return {
        "id": f.id,
        "name": f.name,
        "provenance": {
            "project": f.provenance.project,
            "compiler": f.provenance.compiler,
            "opt_level": f.provenance.opt_level,
        },
        "entry": f.entry,
        "blocks": [
            {
                "id": b.id,
                "succs": list(b.succs),
                "instrs": [serialize_instruction(i) for i in b.instrs],
            }
            for b in f.blocks_in_order()
        ],
    }


def load_corpus(path, strict: bool = True) -> list[FunctionCfg]:
    with open(path, "r", encoding="utf-8") as fh:
        docs = json.load(fh)
    if not isinstance(docs, list):
        raise SchemaError("corpus file must be a JSON array of functions")
    return [parse_function(doc, strict=strict) for doc in docs]


def save_corpus(functions: Iterable[FunctionCfg], path) -> None:
    docs = [serialize_function(f) for f in functions]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(docs, fh, indent=1)
        fh.write("\n")
