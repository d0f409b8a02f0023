"""Mini-ISA definition layer.

The authoritative read/write-set table lives in data/isa.json; this module
loads it and exposes instruction factories so that generators and
transformations mint instructions whose declared effects always agree with
the interpreter in machine.py.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .cfg import Instruction, location
from .errors import IllegalInstruction

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class MnemonicSpec:
    name: str
    operand_kinds: tuple[str, ...]  # reg | imm | rim
    reads: tuple[str, ...]          # symbolic: opN / flag / mem / stack
    writes: tuple[str, ...]
    is_control_flow: bool
    mem_effect: str
    doc: str


def _load_table() -> tuple[dict[str, MnemonicSpec], tuple[str, ...], tuple[str, ...]]:
    raw = json.loads(
        resources.files("advsim").joinpath("data/isa.json").read_text("utf-8")
    )
    table = {}
    for name, spec in raw["mnemonics"].items():
        table[name] = MnemonicSpec(
            name=name,
            operand_kinds=tuple(spec["operands"]),
            reads=tuple(spec["reads"]),
            writes=tuple(spec["writes"]),
            is_control_flow=spec["cf"],
            mem_effect=spec["mem"],
            doc=spec["doc"],
        )
    return table, tuple(raw["registers"]), tuple(raw["flags"])


TABLE, REGISTERS, FLAGS = _load_table()
REGISTER_SET = frozenset(REGISTERS)


def is_register(token: str) -> bool:
    return token in REGISTER_SET


def is_immediate(token: str) -> bool:
    if token.startswith("-"):
        return token[1:].isdigit()
    return token.isdigit()


def _imm_kind(token: str) -> str:
    """Immediates are tagged by magnitude bucket, never by value."""
    try:
        v = abs(int(token))
    except ValueError:
        return "I"
    if v == 0:
        return "I0"
    if v == 1:
        return "I1"
    if v < 16:
        return "I2"
    if v < 256:
        return "I3"
    return "I4"


_ARG_REGS = frozenset({"r0", "r1", "r2", "r3"})


def operand_kinds(ins: Instruction) -> str:
    """Kind tag string, one tag per operand. Register identity is
    deliberately collapsed to a class: A for argument/output registers,
    R for scratch. Immediates are bucketed by magnitude."""
    return "".join(
        ("A" if op in _ARG_REGS else "R") if is_register(op) else _imm_kind(op)
        for op in ins.operands)


def _resolve(symbols, operands) -> frozenset:
    locs = set()
    for sym in symbols:
        if sym.startswith("op"):
            token = operands[int(sym[2:])]
            if is_register(token):
                locs.add(location(token))
        else:
            locs.add(location(sym))
    return frozenset(locs)


def make(mnemonic: str, *operands: str, synthetic: bool = False) -> Instruction:
    """Mint an instruction with the table-derived read/write sets."""
    spec = TABLE.get(mnemonic)
    if spec is None:
        raise IllegalInstruction(f"unknown mnemonic '{mnemonic}'")
    if len(operands) != len(spec.operand_kinds):
        raise IllegalInstruction(
            f"{mnemonic} takes {len(spec.operand_kinds)} operands, got {len(operands)}"
        )
    for tok, kind in zip(operands, spec.operand_kinds):
        if kind == "reg" and not is_register(tok):
            raise IllegalInstruction(f"{mnemonic}: expected register, got '{tok}'")
        if kind == "imm" and not is_immediate(tok):
            raise IllegalInstruction(f"{mnemonic}: expected immediate, got '{tok}'")
        if kind == "rim" and not (is_register(tok) or is_immediate(tok)):
            raise IllegalInstruction(f"{mnemonic}: bad operand '{tok}'")
    return Instruction(
        mnemonic=mnemonic,
        operands=tuple(operands),
        reads=_resolve(spec.reads, operands),
        writes=_resolve(spec.writes, operands),
        is_control_flow=spec.is_control_flow,
        mem_effect=spec.mem_effect,
        synthetic=synthetic,
    )
