"""Synthetic corpus: random mini-ISA functions and emulated compiler
variants.

gen_function builds reducible CFGs from structured regions (straight
lines, diamonds, counted loops), so every generated function terminates
by construction. gen_variants derives four semantics-equivalent functions
per base function through distinct deterministic pipelines, standing in
for compiler/optimization-level combinations.

The corpus node-count profile is deliberately bimodal (a crowd of small
functions plus a minority of very large ones); pools drawn from it give
the node-count oracle a realistic spread of graph sizes.
"""

from __future__ import annotations

import random
from dataclasses import replace

from .cfg import (BasicBlock, FunctionCfg, Instruction, Provenance,
                  check_function, dependency, location)
from .isa import REGISTERS, make, is_register
from .machine import OBSERVED_REGS

SCRATCH_REGS = tuple(r for r in REGISTERS if r not in OBSERVED_REGS)
_OUTPUT = OBSERVED_REGS

# Variant pipelines are labeled as compiler/opt-level combinations.
VARIANT_PROVENANCE = (
    ("cc-a", "O0"),  # identity
    ("cc-a", "O3"),  # register renaming
    ("cc-b", "O0"),  # block reordering + jump threading
    ("cc-b", "O3"),  # rescheduling + redundant padding
)

# Short instruction idioms shared across functions (think prologues and
# counter patterns); they give unrelated functions a common token floor.
_IDIOMS = (
    ("mov", "xor"), ("xor", "or"), ("mov", "mov", "add"), ("add", "sub"),
    ("mov", "shl"), ("load", "add"), ("mov", "store"), ("sub", "and"),
)


_ALU = ("add", "sub", "xor", "mul", "and", "or")


class _Profile:
    """Per-function instruction dialect. Different source functions favor
    different opcode mixes, immediates, and idioms, so unrelated functions
    stop looking token-identical."""

    def __init__(self, rng: random.Random):
        # hard opcode dialect: functions use only a few ALU ops each
        active = rng.sample(range(len(_ALU)), rng.randint(2, 4))
        w = [rng.random() ** 2 if i in active else 0.0
             for i in range(len(_ALU))]
        total = sum(w)
        self.alu_weights = [x / total for x in w]
        self.p_mov = 0.10 + 0.20 * rng.random()
        self.p_shift = 0.05 + 0.10 * rng.random()
        self.p_mem = 0.08 + 0.18 * rng.random()
        self.p_idiom = 0.10 + 0.25 * rng.random()
        self.p_imm = 0.30 + 0.35 * rng.random()
        # immediate style: pools deliberately concentrate on different
        # magnitude buckets per function
        self.imm_pool = rng.choice((
            (0, 1), (2, 3, 5, 8, 15), (16, 40, 128, 255),
            (4096, 70000, 1 << 20), (1, 30, 5000),
        ))
        self.disp_range = rng.choice(((0, 8), (0, 16), (8, 16)))
        self.shift_range = rng.choice(((1, 4), (1, 9), (4, 9)))
        self.idioms = rng.sample(_IDIOMS, 3)
        self.p_explicit_jmp = rng.choice((0.1, 0.5, 0.9))

    def imm(self, rng: random.Random) -> str:
        if rng.random() < 0.15:
            return str(rng.randrange(0, 4096))
        return str(rng.choice(self.imm_pool))

    def alu(self, rng: random.Random) -> str:
        return rng.choices(_ALU, weights=self.alu_weights)[0]


class _Builder:
    def __init__(self, rng: random.Random, instr_range: tuple[int, int],
                 profile: _Profile):
        self.rng = rng
        self.profile = profile
        self.instr_lo, self.instr_hi = instr_range
        self.blocks: dict[int, BasicBlock] = {}
        self.next_id = 0
        self.reserved: set[str] = set()

    def new_id(self) -> int:
        bid = self.next_id
        self.next_id += 1
        return bid

    def emit(self, bid: int, instrs: list[Instruction], succs: tuple[int, ...]):
        self.blocks[bid] = BasicBlock(bid, tuple(instrs), succs)

    # -- instruction soup ---------------------------------------------------

    def _src(self, initialized: set[str]) -> str:
        rng = self.rng
        if rng.random() < self.profile.p_imm:
            return self.profile.imm(rng)
        return rng.choice(sorted(initialized))

    def _dst(self, initialized: set[str]) -> str:
        rng = self.rng
        # favor already-live registers so values chain through the function
        pool = [r for r in REGISTERS if r not in self.reserved]
        if initialized and rng.random() < 0.7:
            pool = [r for r in sorted(initialized) if r not in self.reserved] or pool
        return rng.choice(pool)

    def _writable(self, initialized: set[str]) -> str:
        pool = [r for r in sorted(initialized) if r not in self.reserved]
        return self.rng.choice(pool or ["r0"])

    def _disp(self) -> str:
        return str(self.rng.randrange(*self.profile.disp_range))

    def _one(self, initialized: set[str]) -> Instruction:
        rng, prof = self.rng, self.profile
        roll = rng.random()
        if roll < prof.p_mov:
            return make("mov", self._dst(initialized), self._src(initialized))
        if roll < prof.p_mov + prof.p_shift:
            mn = rng.choice(("shl", "shr"))
            return make(mn, self._writable(initialized),
                        str(rng.randrange(*prof.shift_range)))
        if roll < prof.p_mov + prof.p_shift + prof.p_mem:
            if rng.random() < 0.55:
                return make("load", self._dst(initialized), "r1", self._disp())
            return make("store", "r1", self._disp(),
                        rng.choice(sorted(initialized)))
        return make(prof.alu(rng), self._writable(initialized),
                    self._src(initialized))

    def _idiom(self, initialized: set[str]) -> list[Instruction]:
        rng = self.rng
        out = []
        for mn in rng.choice(self.profile.idioms):
            if mn == "mov":
                out.append(make("mov", self._dst(initialized),
                                self._src(initialized)))
            elif mn == "load":
                out.append(make("load", self._dst(initialized), "r1",
                                self._disp()))
            elif mn == "store":
                out.append(make("store", "r1", self._disp(),
                                rng.choice(sorted(initialized))))
            elif mn in ("shl", "shr"):
                out.append(make(mn, self._writable(initialized),
                                str(rng.randrange(*self.profile.shift_range))))
            else:
                out.append(make(mn, self._writable(initialized),
                                self._src(initialized)))
        return out

    def fill(self, count: int, initialized: set[str]) -> list[Instruction]:
        """count straight-line instructions; updates initialized in place."""
        out: list[Instruction] = []
        while len(out) < count:
            if self.rng.random() < self.profile.p_idiom:
                batch = self._idiom(initialized)
            else:
                batch = [self._one(initialized)]
            for ins in batch:
                for loc in ins.writes:
                    if loc.kind == "register":
                        initialized.add(loc.name)
            out.extend(batch)
        return out[:count]

    def block_len(self) -> int:
        return self.rng.randint(self.instr_lo, self.instr_hi)

    # -- structured regions -------------------------------------------------

    def region(self, budget: int, initialized: set[str]) -> tuple[int, int]:
        """Build a single-entry/single-exit region of roughly budget
        blocks; returns (entry id, exit id). The exit block is left
        unterminated so the caller can chain it."""
        rng = self.rng
        if budget >= 4 and rng.random() < 0.5:
            if rng.random() < 0.55:
                return self._diamond(budget, initialized)
            return self._loop(budget, initialized)
        return self._straight(budget, initialized)

    def _straight(self, budget: int, initialized: set[str]) -> tuple[int, int]:
        count = 1 if budget <= 1 else self.rng.randint(1, min(3, budget))
        first = prev = self.new_id()
        self.emit(prev, self.fill(self.block_len(), initialized), ())
        for _ in range(count - 1):
            bid = self.new_id()
            self.emit(bid, self.fill(self.block_len(), initialized), ())
            self._link(prev, bid)
            prev = bid
        return first, prev

    def _link(self, src: int, dst: int):
        block = self.blocks[src]
        if self.rng.random() < self.profile.p_explicit_jmp:
            self.blocks[src] = BasicBlock(
                block.id, block.instrs + (make("jmp"),), (dst,))
        else:
            self.blocks[src] = BasicBlock(block.id, block.instrs, (dst,))

    def _diamond(self, budget: int, initialized: set[str]) -> tuple[int, int]:
        rng = self.rng
        cond = self.new_id()
        instrs = self.fill(max(1, self.block_len() - 1), initialized)
        instrs.append(make("cmp", rng.choice(sorted(initialized)),
                           self.profile.imm(rng)))
        instrs.append(make(rng.choice(("jz", "jnz"))))

        arm_budget = max(1, (budget - 2) // 2)
        left_init = set(initialized)
        right_init = set(initialized)
        l_entry, l_exit = self.region(arm_budget, left_init)
        r_entry, r_exit = self.region(arm_budget, right_init)
        join = self.new_id()
        initialized.update(left_init & right_init)
        self.emit(cond, instrs, (l_entry, r_entry))
        self.emit(join, self.fill(self.block_len(), initialized), ())
        self._link(l_exit, join)
        self._link(r_exit, join)
        return cond, join

    def _loop(self, budget: int, initialized: set[str]) -> tuple[int, int]:
        rng = self.rng
        counter = rng.choice([r for r in SCRATCH_REGS if r not in self.reserved])
        self.reserved.add(counter)
        pre = self.new_id()
        pre_instrs = self.fill(max(1, self.block_len() - 1), initialized)
        pre_instrs.append(make("mov", counter, str(rng.randrange(1, 5))))
        initialized.add(counter)

        body_init = set(initialized)
        b_entry, b_exit = self.region(max(1, budget - 3), body_init)
        initialized.update(body_init)  # counted loops run at least once

        latch = self.new_id()
        exit_id = self.new_id()
        self.emit(pre, pre_instrs, (b_entry,))
        self.emit(latch, [make("sub", counter, "1"), make("jnz")],
                  (b_entry, exit_id))
        self._link(b_exit, latch)
        self.emit(exit_id, self.fill(self.block_len(), initialized), ())
        self.reserved.discard(counter)
        return pre, exit_id


def gen_function(seed: int, blocks: tuple[int, int] = (4, 10),
                 instrs_per_block: tuple[int, int] = (2, 5),
                 name: str = "", provenance: Provenance | None = None) -> FunctionCfg:
    """Random reducible function; always passes the strict corpus filter
    and always terminates (loops are counted, branches only go forward)."""
    rng = random.Random(seed)
    builder = _Builder(rng, instrs_per_block, _Profile(rng))
    target = rng.randint(*blocks)

    initialized = {"r0", "r1", "r2", "r3"}
    entry, tip = builder.region(min(3, target), initialized)
    while len(builder.blocks) < target - 1:
        remaining = target - len(builder.blocks) - 1
        r_entry, r_exit = builder.region(remaining, initialized)
        builder._link(tip, r_entry)
        tip = r_exit

    # epilogue: fold live values into the outputs so computations are
    # observable, then return
    ret = builder.new_id()
    fold = []
    for out_reg in rng.sample(_OUTPUT, 2):
        src = rng.choice(sorted(initialized))
        fold.append(make(rng.choice(("add", "xor")), out_reg, src))
    fold.append(make("ret"))
    builder.emit(ret, fold, ())
    builder._link(tip, ret)

    name = name or f"fn{seed & 0xFFFFFFFF:08x}"
    prov = provenance or Provenance("synth", "base", "-")
    f = FunctionCfg(id=f"{name}.base", name=name, provenance=prov,
                    entry=entry, blocks=builder.blocks)
    if f.num_instrs < 6:
        # tiny degenerate draw: pad the return block
        block = f.blocks[ret]
        extra = tuple(make("add", "r0", "1") for _ in range(6 - f.num_instrs))
        f.blocks[ret] = BasicBlock(ret, block.instrs[:-1] + extra
                                   + (block.instrs[-1],), block.succs)
        f = FunctionCfg(id=f.id, name=f.name, provenance=prov,
                        entry=entry, blocks=f.blocks)
    check_function(f, strict=True)
    return f


# ---------------------------------------------------------------------------
# variant pipelines
# ---------------------------------------------------------------------------

def _rename_registers(f: FunctionCfg, rng: random.Random) -> dict[int, BasicBlock]:
    perm = list(SCRATCH_REGS)
    rng.shuffle(perm)
    mapping = dict(zip(SCRATCH_REGS, perm))

    def map_loc(loc):
        if loc.kind == "register" and loc.name in mapping:
            return location(mapping[loc.name])
        return loc

    blocks = {}
    for bid, block in f.blocks.items():
        instrs = []
        for ins in block.instrs:
            instrs.append(replace(
                ins,
                operands=tuple(mapping.get(op, op) if is_register(op) else op
                               for op in ins.operands),
                reads=frozenset(map_loc(l) for l in ins.reads),
                writes=frozenset(map_loc(l) for l in ins.writes),
            ))
        blocks[bid] = BasicBlock(bid, tuple(instrs), block.succs)
    return blocks


def _thread_jumps(blocks: dict[int, BasicBlock], entry: int) -> dict[int, BasicBlock]:
    """Merge straight-line pairs: a single-successor block whose target has
    no other predecessor absorbs the target (dropping the jump)."""
    blocks = dict(blocks)
    changed = True
    while changed:
        changed = False
        preds: dict[int, int] = {}
        for b in blocks.values():
            for s in b.succs:
                preds[s] = preds.get(s, 0) + 1
        for bid in sorted(blocks):
            block = blocks.get(bid)
            if block is None or len(block.succs) != 1:
                continue
            target = block.succs[0]
            if target == entry or target == bid or preds.get(target) != 1:
                continue
            tgt = blocks[target]
            body = block.instrs[:-1] if block.has_cf_tail() else block.instrs
            blocks[bid] = BasicBlock(bid, body + tgt.instrs, tgt.succs)
            del blocks[target]
            changed = True
            break
    return blocks


def _renumber(blocks: dict[int, BasicBlock], entry: int,
              rng: random.Random) -> tuple[dict[int, BasicBlock], int]:
    ids = sorted(blocks)
    shuffled = list(ids)
    rng.shuffle(shuffled)
    mapping = dict(zip(ids, shuffled))
    out = {}
    for bid, block in blocks.items():
        nid = mapping[bid]
        out[nid] = BasicBlock(nid, block.instrs,
                              tuple(mapping[s] for s in block.succs))
    return out, mapping[entry]


def _reschedule_block(block: BasicBlock, rng: random.Random) -> BasicBlock:
    """Random dependence-respecting order of the block body."""
    k = block.body_len()
    body = list(block.instrs[:k])
    remaining = list(range(k))
    order: list[int] = []
    while remaining:
        ready = [i for i in remaining
                 if not any(dependency(body[j], body[i])
                            for j in remaining if j < i)]
        pick = rng.choice(ready)
        order.append(pick)
        remaining.remove(pick)
    instrs = tuple(body[i] for i in order) + block.instrs[k:]
    return BasicBlock(block.id, instrs, block.succs)


def _liveness(blocks: dict[int, BasicBlock]) -> dict[int, list[set]]:
    """Per-block list of live-after sets (registers and flags), one per
    instruction slot. Outputs r0..r3 are live at every function exit."""
    exit_live = {location(r) for r in _OUTPUT}
    live_in: dict[int, set] = {bid: set() for bid in blocks}
    changed = True
    while changed:
        changed = False
        for bid in sorted(blocks, reverse=True):
            block = blocks[bid]
            live = set(exit_live) if not block.succs else set()
            for s in block.succs:
                live |= live_in[s]
            for ins in reversed(block.instrs):
                live -= ins.writes
                live |= {l for l in ins.reads if l.kind in ("register", "flag")}
            if live != live_in[bid]:
                live_in[bid] = live
                changed = True

    after: dict[int, list[set]] = {}
    for bid, block in blocks.items():
        live = set(exit_live) if not block.succs else set()
        for s in block.succs:
            live |= live_in[s]
        slots = [set(live)]
        for ins in reversed(block.instrs):
            live = (live - ins.writes) | {
                l for l in ins.reads if l.kind in ("register", "flag")}
            slots.append(set(live))
        slots.reverse()  # slots[i] = live before instruction i
        after[bid] = slots
    return after


_FLAG_LOCS = frozenset({location("ZF"), location("SF"), location("CF")})


def _pad_blocks(blocks: dict[int, BasicBlock], rng: random.Random,
                rate: float = 0.35) -> dict[int, BasicBlock]:
    """Insert redundant instructions that write only dead scratch
    registers (and clobber flags only where all flags are dead)."""
    live_before = _liveness(blocks)
    out = {}
    for bid in sorted(blocks):
        block = blocks[bid]
        k = block.body_len()
        slots = live_before[bid]
        new: list[Instruction] = []
        for i in range(k + 1):
            if rng.random() < rate:
                live = slots[i]
                dead = [r for r in SCRATCH_REGS if location(r) not in live]
                if dead:
                    dst = rng.choice(dead)
                    flags_dead = not (_FLAG_LOCS & live)
                    live_regs = sorted(
                        l.name for l in live if l.kind == "register")
                    src = rng.choice(live_regs) if live_regs and \
                        rng.random() < 0.5 else str(rng.randrange(256))
                    if flags_dead and rng.random() < 0.6:
                        mn = rng.choice(("add", "xor", "sub", "mul", "or"))
                        new.append(make("mov", dst, src))
                        new.append(make(mn, dst, str(rng.randrange(256))))
                    else:
                        new.append(make("mov", dst, src))
            if i < k:
                new.append(block.instrs[i])
        out[bid] = BasicBlock(bid, tuple(new) + block.instrs[k:], block.succs)
    return out


def gen_variants(f: FunctionCfg, seed: int) -> list[FunctionCfg]:
    """Four equivalent variants of f, one per emulated compiler/opt-level
    combination: identity, register renaming, block reordering with jump
    threading, and rescheduling with redundant padding."""
    variants = []
    for vidx, (compiler, opt) in enumerate(VARIANT_PROVENANCE):
        rng = random.Random((seed << 3) ^ vidx)
        prov = Provenance("synth", compiler, opt)
        vid = f"{f.name}.{compiler}.{opt}"
        if vidx == 0:
            blocks, entry = dict(f.blocks), f.entry
        elif vidx == 1:
            blocks, entry = _rename_registers(f, rng), f.entry
        elif vidx == 2:
            blocks = _thread_jumps(f.blocks, f.entry)
            # keep the variant above the corpus admission filter
            if len(blocks) < 2 or sum(len(b.instrs) for b in blocks.values()) < 6:
                blocks = f.blocks
            blocks, entry = _renumber(blocks, f.entry, rng)
        else:
            blocks = {bid: _reschedule_block(b, rng)
                      for bid, b in f.blocks.items()}
            blocks = _pad_blocks(blocks, rng)
            entry = f.entry
        v = FunctionCfg(id=vid, name=f.name, provenance=prov,
                        entry=entry, blocks=blocks)
        check_function(v, strict=False)
        variants.append(v)
    return variants


# ---------------------------------------------------------------------------
# corpus assembly
# ---------------------------------------------------------------------------

GIANT_FRACTION = 0.12
CLUSTER_FRACTION = 0.30
NORMAL_BLOCKS = (4, 10)
GIANT_BLOCKS = (120, 200)
INSTRS_PER_BLOCK = (2, 5)


def _jitter_immediates(blocks: dict[int, BasicBlock],
                       rng: random.Random) -> dict[int, BasicBlock]:
    """Replace some immediate operands with fresh small values (1..8 keeps
    loop bounds tame). Purely textual: the result is a new function, not
    an equivalent one."""
    out = {}
    for bid, block in blocks.items():
        instrs = []
        for ins in block.instrs:
            if ins.operands and rng.random() < 0.4:
                ops = tuple(
                    str(rng.randrange(1, 9))
                    if (not is_register(op) and rng.random() < 0.7) else op
                    for op in ins.operands
                )
                ins = replace(ins, operands=ops)
            instrs.append(ins)
        out[bid] = BasicBlock(bid, tuple(instrs), block.succs)
    return out


def mutate_base(f: FunctionCfg, seed: int, name: str) -> FunctionCfg:
    """A new source function textually close to f: reschedule, light
    padding, scratch renaming, immediate jitter, fresh block numbering.
    Stands in for the near-duplicate function families real codebases
    carry."""
    rng = random.Random(seed)
    blocks = {bid: _reschedule_block(b, rng) for bid, b in f.blocks.items()}
    blocks = _pad_blocks(blocks, rng, rate=0.15)
    shell = FunctionCfg(id=f.id, name=f.name, provenance=f.provenance,
                        entry=f.entry, blocks=blocks)
    blocks = _rename_registers(shell, rng)
    blocks = _jitter_immediates(blocks, rng)
    blocks, entry = _renumber(blocks, f.entry, rng)
    out = FunctionCfg(id=f"{name}.base", name=name,
                      provenance=Provenance("synth", "base", "-"),
                      entry=entry, blocks=blocks)
    check_function(out, strict=True)
    return out


def gen_corpus(n_groups: int, seed: int,
               giant_fraction: float = GIANT_FRACTION,
               cluster_fraction: float = CLUSTER_FRACTION) -> list[FunctionCfg]:
    """n_groups * 4 functions: each group is the variant set of one base
    function. A giant_fraction of groups are very large functions (pools
    get a heavy node-count tail) and a cluster_fraction of the remaining
    bases are mutated copies of earlier ones (pools get families of
    genuinely similar functions)."""
    rng = random.Random(seed)
    corpus: list[FunctionCfg] = []
    lineage: list[FunctionCfg] = []
    for g in range(n_groups):
        name = f"fn{g:05d}"
        if rng.random() < giant_fraction:
            base = gen_function(rng.getrandbits(48), blocks=GIANT_BLOCKS,
                                instrs_per_block=INSTRS_PER_BLOCK, name=name)
        elif lineage and rng.random() < cluster_fraction:
            base = mutate_base(rng.choice(lineage), rng.getrandbits(48), name)
        else:
            base = gen_function(rng.getrandbits(48), blocks=NORMAL_BLOCKS,
                                instrs_per_block=INSTRS_PER_BLOCK, name=name)
            lineage.append(base)
        corpus.extend(gen_variants(base, seed=rng.getrandbits(48)))
    return corpus
