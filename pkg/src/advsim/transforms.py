"""The four semantics-preserving CFG transformations.

IR swaps adjacent independent instructions, NS splits a block in three via
unconditional jumps, DBA hides a strand behind an always-false branch, and
SA splices a strand into a block inside a full save/restore wrapper. All
of them are pure (input function in, new function out) and only ever add
content; unchanged blocks are shared with the input function.

remove_instruction is not an attack step: it is the probe behind the
importance score.
"""

from __future__ import annotations

import enum
import weakref
from dataclasses import dataclass, replace

from .cfg import BasicBlock, FunctionCfg, Instruction
from .errors import NotApplicable
from .isa import REGISTERS, make
from .strands import CandidatePool, Strand, StrandDb, validate_strand

# Register compared against itself in the dead-branch guard; reading any
# register is side-effect free, so the choice is arbitrary but fixed.
GUARD_REG = "r0"


class TransformKind(str, enum.Enum):
    IR = "IR"
    NS = "NS"
    DBA = "DBA"
    SA = "SA"


@dataclass(frozen=True)
class Position:
    """An instruction slot: (block id, index within the block)."""

    block: int
    index: int


@dataclass(frozen=True)
class TransformAction:
    kind: TransformKind
    pos: Position
    strand: Strand | None = None

    def __post_init__(self):
        needs_strand = self.kind in (TransformKind.DBA, TransformKind.SA)
        if needs_strand != (self.strand is not None):
            raise ValueError(f"{self.kind.value}: strand presence mismatch")


# The synthetic glue instructions are constants; mint them once.
_JMP = make("jmp", synthetic=True)
_NOP = make("nop", synthetic=True)
_GUARD = (
    make("pushf", synthetic=True),
    make("cmp", GUARD_REG, GUARD_REG, synthetic=True),
    make("jne", synthetic=True),
)
_RESTORE_FLAGS = make("popf", synthetic=True)
_SAVE_FLAGS = make("pushf", synthetic=True)
_PUSH = {r: make("push", r, synthetic=True) for r in REGISTERS}
_POP = {r: make("pop", r, synthetic=True) for r in REGISTERS}

_marked_strands: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _with_blocks(f: FunctionCfg, new_blocks: dict[int, BasicBlock],
                 d_instrs: int = 0, d_nodes: int = 0) -> FunctionCfg:
    return FunctionCfg(id=f.id, name=f.name, provenance=f.provenance,
                       entry=f.entry, blocks=new_blocks,
                       num_instrs=f.num_instrs + d_instrs,
                       num_nodes=f.num_nodes + d_nodes)


def _block_and_body(f: FunctionCfg, pos: Position) -> tuple[BasicBlock, int]:
    block = f.blocks.get(pos.block)
    if block is None:
        raise NotApplicable(f"no block {pos.block}")
    if not 0 <= pos.index < len(block.instrs):
        raise NotApplicable(f"index {pos.index} outside block {pos.block}")
    return block, block.body_len()


def _fresh_ids(f: FunctionCfg, count: int) -> list[int]:
    top = max(f.blocks)
    return [top + 1 + i for i in range(count)]


def _mark(strand: Strand) -> tuple[Instruction, ...]:
    marked = _marked_strands.get(strand)
    if marked is None:
        marked = tuple(replace(ins, synthetic=True) for ins in strand.instrs)
        _marked_strands[strand] = marked
    return marked


def _reg_order(loc_name: str) -> tuple[int, str]:
    if loc_name.startswith("r") and loc_name[1:].isdigit():
        return (int(loc_name[1:]), loc_name)
    return (1 << 30, loc_name)


def ir_applicable(f: FunctionCfg, pos: Position) -> bool:
    from .cfg import dependency

    block = f.blocks.get(pos.block)
    if block is None or pos.index + 1 >= len(block.instrs):
        return False
    a, b = block.instrs[pos.index], block.instrs[pos.index + 1]
    if a.is_control_flow or b.is_control_flow:
        return False
    return not dependency(a, b)


def apply_ir(f: FunctionCfg, pos: Position) -> FunctionCfg:
    """Swap the adjacent, data-independent instructions at pos/pos+1."""
    if not ir_applicable(f, pos):
        raise NotApplicable(f"IR at {pos}")
    block = f.blocks[pos.block]
    instrs = list(block.instrs)
    instrs[pos.index], instrs[pos.index + 1] = instrs[pos.index + 1], instrs[pos.index]
    blocks = dict(f.blocks)
    blocks[pos.block] = BasicBlock(block.id, tuple(instrs), block.succs)
    return _with_blocks(f, blocks)


def ns_applicable(f: FunctionCfg, pos: Position) -> bool:
    block = f.blocks.get(pos.block)
    if block is None:
        return False
    k = block.body_len()
    return k >= 3 and 1 <= pos.index <= k - 2


def apply_ns(f: FunctionCfg, pos: Position) -> FunctionCfg:
    """Split a block into three chained by fresh unconditional jumps.

    With k body instructions the parts are [0, i), [i, p2), [p2, k) where
    p2 = i + max(1, (k - i) // 2); the admissible 1 <= i <= k-2 keeps all
    three non-empty. The final part inherits the tail and the successors.
    """
    if not ns_applicable(f, pos):
        raise NotApplicable(f"NS at {pos}")
    block = f.blocks[pos.block]
    k = block.body_len()
    body = block.instrs[:k]
    tail = block.instrs[k:]
    i = pos.index
    p2 = i + max(1, (k - i) // 2)
    id_b, id_c = _fresh_ids(f, 2)

    blocks = dict(f.blocks)
    blocks[block.id] = BasicBlock(block.id, body[:i] + (_JMP,), (id_b,))
    blocks[id_b] = BasicBlock(id_b, body[i:p2] + (_JMP,), (id_c,))
    blocks[id_c] = BasicBlock(id_c, body[p2:] + tail, block.succs)
    return _with_blocks(f, blocks, d_instrs=2, d_nodes=2)


def dba_applicable(f: FunctionCfg, pos: Position) -> bool:
    block = f.blocks.get(pos.block)
    return block is not None and 0 <= pos.index < len(block.instrs)


def apply_dba(f: FunctionCfg, pos: Position, s: Strand) -> FunctionCfg:
    """Split at pos and guard a new dead block holding the strand.

    The guard compares a register with itself and jumps to the dead block
    on not-equal, so the branch is structurally never taken; its flag
    side effects are discharged by a save before and a restore on the
    live continuation.
    """
    validate_strand(s.instrs)
    block, k = _block_and_body(f, pos)
    split = min(pos.index, k)  # a tail position splits just before the tail
    body = block.instrs[:k]
    tail = block.instrs[k:]
    id_dead, id_cont = _fresh_ids(f, 2)

    blocks = dict(f.blocks)
    blocks[block.id] = BasicBlock(block.id, body[:split] + _GUARD,
                                  (id_dead, id_cont))
    blocks[id_dead] = BasicBlock(id_dead, _mark(s) + (_JMP,), (id_cont,))
    blocks[id_cont] = BasicBlock(
        id_cont, (_RESTORE_FLAGS,) + body[split:] + tail, block.succs)
    return _with_blocks(f, blocks, d_instrs=len(s.instrs) + 5, d_nodes=2)


def sa_applicable(f: FunctionCfg, pos: Position) -> bool:
    block = f.blocks.get(pos.block)
    return block is not None and 0 <= pos.index < len(block.instrs)


def apply_sa(f: FunctionCfg, pos: Position, s: Strand) -> FunctionCfg:
    """Insert the strand at pos wrapped in saves/restores for everything
    it clobbers: one push/pop pair per register, one flag-save/restore
    pair when any flag is written."""
    validate_strand(s.instrs)
    block, k = _block_and_body(f, pos)
    insert_at = min(pos.index, k)  # never behind the control-flow tail
    clobbered = s.clobbers()
    regs = sorted((l.name for l in clobbered if l.kind == "register"),
                  key=_reg_order)
    flags = any(l.kind == "flag" for l in clobbered)

    saves = [_PUSH[r] for r in regs]
    restores = [_POP[r] for r in reversed(regs)]
    if flags:
        saves.append(_SAVE_FLAGS)
        restores.insert(0, _RESTORE_FLAGS)

    instrs = (block.instrs[:insert_at] + tuple(saves) + _mark(s)
              + tuple(restores) + block.instrs[insert_at:])
    blocks = dict(f.blocks)
    blocks[block.id] = BasicBlock(block.id, instrs, block.succs)
    return _with_blocks(f, blocks,
                        d_instrs=len(s.instrs) + len(saves) + len(restores))


def remove_instruction(f: FunctionCfg, pos: Position) -> FunctionCfg:
    """Delete one non-control-flow instruction (importance probing only).
    A block emptied by the deletion keeps a no-op placeholder so the graph
    shape survives."""
    block, _ = _block_and_body(f, pos)
    victim = block.instrs[pos.index]
    if victim.is_control_flow:
        raise NotApplicable("cannot remove a control-flow instruction")
    instrs = block.instrs[:pos.index] + block.instrs[pos.index + 1:]
    delta = -1
    if not instrs:
        instrs = (_NOP,)
        delta = 0
    blocks = dict(f.blocks)
    blocks[pos.block] = BasicBlock(block.id, instrs, block.succs)
    return _with_blocks(f, blocks, d_instrs=delta)


APPLICABILITY = {
    TransformKind.IR: ir_applicable,
    TransformKind.NS: ns_applicable,
    TransformKind.DBA: dba_applicable,
    TransformKind.SA: sa_applicable,
}

KIND_ORDER = (TransformKind.IR, TransformKind.NS, TransformKind.DBA,
              TransformKind.SA)


def enumerate_actions(
    f: FunctionCfg,
    positions: list[Position],
    enabled: frozenset[TransformKind],
    pool: CandidatePool,
    per_action_strands: int,
    db: StrandDb,
) -> list[TransformAction]:
    """All candidate edits for this iteration, position-major and in fixed
    kind order so ties resolve deterministically. Each position yields at
    most one IR and one NS action plus per_action_strands DBA and SA
    actions, the strands taken from the head of the pool in pool order."""
    strand_picks = [db.strands[i] for i in pool.entries[:per_action_strands]]
    actions: list[TransformAction] = []
    for pos in positions:
        for kind in KIND_ORDER:
            if kind not in enabled:
                continue
            if not APPLICABILITY[kind](f, pos):
                continue
            if kind in (TransformKind.DBA, TransformKind.SA):
                actions.extend(
                    TransformAction(kind, pos, strand) for strand in strand_picks
                )
            else:
                actions.append(TransformAction(kind, pos))
    return actions


def apply_action(f: FunctionCfg, action: TransformAction) -> FunctionCfg:
    if action.kind is TransformKind.IR:
        return apply_ir(f, action.pos)
    if action.kind is TransformKind.NS:
        return apply_ns(f, action.pos)
    if action.kind is TransformKind.DBA:
        return apply_dba(f, action.pos, action.strand)
    return apply_sa(f, action.pos, action.strand)


def replay_trace(f: FunctionCfg, trace) -> FunctionCfg:
    for action in trace:
        f = apply_action(f, action)
    return f
