"""Deterministic interpreter for mini-ISA functions.

This is the ground-truth oracle behind every semantics-preservation claim:
two functions are compared by running both on randomized input states and
demanding bitwise-identical observables (r0..r3, memory, halt flag). The
stack and scratch registers r4..r15 are excluded from the observables,
mirroring a calling convention, so save/restore wrappers are neutral by
definition while clobbers of declared outputs or memory are always caught.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .cfg import FunctionCfg
from .errors import IllegalInstruction, OutOfFuel
from .isa import FLAGS, MASK64, REGISTERS, is_register

DEFAULT_FUEL = 10_000
OBSERVED_REGS = ("r0", "r1", "r2", "r3")


@dataclass
class MachineState:
    regs: dict[str, int] = field(default_factory=lambda: {r: 0 for r in REGISTERS})
    flags: dict[str, int] = field(default_factory=lambda: {f: 0 for f in FLAGS})
    stack: list[int] = field(default_factory=list)
    mem: dict[int, int] = field(default_factory=dict)
    halted: bool = False
    fuel: int = DEFAULT_FUEL

    def clone(self) -> "MachineState":
        return MachineState(
            regs=dict(self.regs),
            flags=dict(self.flags),
            stack=list(self.stack),
            mem=dict(self.mem),
            halted=self.halted,
            fuel=self.fuel,
        )


@dataclass(frozen=True)
class ObservableState:
    """What a caller can see after the function returns."""

    regs: tuple[int, ...]              # r0..r3
    mem: tuple[tuple[int, int], ...]   # sorted (address, value), zeros dropped
    halted: bool


def _observe(state: MachineState) -> ObservableState:
    cells = tuple(sorted((a, v) for a, v in state.mem.items() if v != 0))
    return ObservableState(
        regs=tuple(state.regs[r] for r in OBSERVED_REGS),
        mem=cells,
        halted=state.halted,
    )


def _flags_zs(state: MachineState, value: int) -> None:
    state.flags["ZF"] = 1 if value == 0 else 0
    state.flags["SF"] = (value >> 63) & 1


def _value(state: MachineState, token: str) -> int:
    if is_register(token):
        return state.regs[token]
    return int(token) & MASK64


def _step(state: MachineState, ins, block) -> int | None:
    """Execute one instruction; returns the next block id at a control
    transfer, None to continue within the block."""
    mn = ins.mnemonic
    ops = ins.operands
    regs = state.regs
    if mn == "mov":
        regs[ops[0]] = _value(state, ops[1])
    elif mn in ("add", "sub", "mul", "and", "or", "xor"):
        a = regs[ops[0]]
        b = _value(state, ops[1])
        if mn == "add":
            full = a + b
            state.flags["CF"] = 1 if full > MASK64 else 0
            res = full & MASK64
        elif mn == "sub":
            state.flags["CF"] = 1 if a < b else 0
            res = (a - b) & MASK64
        elif mn == "mul":
            full = a * b
            state.flags["CF"] = 1 if full > MASK64 else 0
            res = full & MASK64
        else:
            res = {"and": a & b, "or": a | b, "xor": a ^ b}[mn]
            state.flags["CF"] = 0
        regs[ops[0]] = res
        _flags_zs(state, res)
    elif mn in ("shl", "shr"):
        a = regs[ops[0]]
        n = int(ops[1]) & 63
        if mn == "shl":
            state.flags["CF"] = (a >> (64 - n)) & 1 if n else 0
            res = (a << n) & MASK64
        else:
            state.flags["CF"] = (a >> (n - 1)) & 1 if n else 0
            res = a >> n
        regs[ops[0]] = res
        _flags_zs(state, res)
    elif mn == "cmp":
        a = regs[ops[0]]
        b = _value(state, ops[1])
        state.flags["CF"] = 1 if a < b else 0
        _flags_zs(state, (a - b) & MASK64)
    elif mn == "test":
        res = regs[ops[0]] & regs[ops[1]]
        state.flags["CF"] = 0
        _flags_zs(state, res)
    elif mn == "load":
        addr = (regs[ops[1]] + int(ops[2])) & MASK64
        regs[ops[0]] = state.mem.get(addr, 0)
    elif mn == "store":
        addr = (regs[ops[0]] + int(ops[1])) & MASK64
        value = regs[ops[2]]
        if value:
            state.mem[addr] = value
        else:
            state.mem.pop(addr, None)  # canonical: absent cells are zero
    elif mn == "push":
        state.stack.append(regs[ops[0]])
    elif mn == "pop":
        regs[ops[0]] = state.stack.pop() if state.stack else 0
    elif mn == "pushf":
        word = state.flags["ZF"] | (state.flags["SF"] << 1) | (state.flags["CF"] << 2)
        state.stack.append(word)
    elif mn == "popf":
        word = state.stack.pop() if state.stack else 0
        state.flags["ZF"] = word & 1
        state.flags["SF"] = (word >> 1) & 1
        state.flags["CF"] = (word >> 2) & 1
    elif mn == "nop":
        pass
    elif mn == "jmp":
        return block.succs[0]
    elif mn in ("jz", "jnz", "jne"):
        taken = state.flags["ZF"] == 1 if mn == "jz" else state.flags["ZF"] == 0
        return block.succs[0] if taken else block.succs[1]
    elif mn == "ret":
        state.halted = True
        return -1
    else:
        raise IllegalInstruction(f"interpreter: unknown mnemonic '{mn}'")
    return None


def execute(
    f: FunctionCfg, input_state: MachineState, fuel: int = DEFAULT_FUEL
) -> tuple[ObservableState, set[int]]:
    """Run f from its entry block; returns observables and the executed
    block-id set (the latter proves dead branches dead)."""
    state = input_state.clone()
    state.fuel = fuel
    state.halted = False
    visited: set[int] = set()
    bid = f.entry
    while True:
        block = f.blocks[bid]
        visited.add(bid)
        nxt = None
        for ins in block.instrs:
            if state.fuel <= 0:
                raise OutOfFuel(f"{f.id}: fuel exhausted in block {bid}")
            state.fuel -= 1
            nxt = _step(state, ins, block)
            if nxt is not None:
                break
        if state.halted:
            return _observe(state), visited
        if nxt is None:
            # fallthrough tail
            if not block.succs:
                state.halted = True
                return _observe(state), visited
            nxt = block.succs[0]
        bid = nxt


def random_input_state(rng: random.Random) -> MachineState:
    """Input distribution for equivalence trials: r0..r3 are arguments
    (mixing small and full-width values), r1 doubles as a small memory
    base, scratch registers start at zero, a few low cells are prefilled."""
    state = MachineState()
    for r in ("r0", "r2", "r3"):
        state.regs[r] = (
            rng.randrange(0, 16) if rng.random() < 0.5 else rng.getrandbits(64)
        )
    state.regs["r1"] = rng.randrange(0, 48)
    for addr in range(0, 16):
        if rng.random() < 0.5:
            state.mem[addr] = rng.getrandbits(64)
    return state


@dataclass(frozen=True)
class EquivalenceVerdict:
    equivalent: bool
    trials_run: int
    skipped: int
    counterexample: MachineState | None = None

    def __bool__(self) -> bool:
        return self.equivalent


def check_equivalence(
    f1: FunctionCfg,
    f2: FunctionCfg,
    trials: int = 8,
    seed: int = 0,
    fuel: int = DEFAULT_FUEL,
) -> EquivalenceVerdict:
    """Randomized differential run. A trial where either side runs out of
    fuel is skipped (divergence within budget is not evidence either way);
    any observable mismatch yields the failing input as a counterexample."""
    rng = random.Random(seed)
    run = skipped = 0
    for _ in range(trials):
        inp = random_input_state(rng)
        try:
            out1, _ = execute(f1, inp, fuel=fuel)
            out2, _ = execute(f2, inp, fuel=fuel)
        except OutOfFuel:
            skipped += 1
            continue
        run += 1
        if out1 != out2:
            return EquivalenceVerdict(False, run, skipped, counterexample=inp)
    return EquivalenceVerdict(True, run, skipped)
