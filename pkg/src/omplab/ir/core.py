"""Module, function and instruction containers for the device IR.

The same containers carry both the target-independent form and the
machine form produced by instruction selection. The machine form differs
only in that depot-resident allocas are gone and their uses are
``FrameIndex`` operands tagged with a base register.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterator

from .types import I1, VOID, PtrType, Type, sizeof


class Opcode(enum.Enum):
    ALLOCA = "alloca"
    LOAD = "load"
    STORE = "store"
    BITCAST = "bitcast"
    ADDRSPACECAST = "addrspacecast"
    GETELEMENT = "getelement"
    BINOP = "binop"
    CMP = "cmp"
    BRANCH = "br"
    CONDBRANCH = "condbr"
    CALL = "call"
    RET = "ret"
    BARRIER = "barrier"


TERMINATORS = frozenset({Opcode.BRANCH, Opcode.CONDBRANCH, Opcode.RET})
CAST_OPCODES = frozenset({Opcode.BITCAST, Opcode.ADDRSPACECAST})
BINOPS = ("add", "sub", "mul", "sdiv", "srem", "and", "or", "xor", "shl", "ashr")
PREDICATES = ("eq", "ne", "slt", "sle", "sgt", "sge")


class BaseReg(enum.Enum):
    """Stack base register a frame index is addressed from."""

    FRAME_LOCAL = "VRFrameLocal"
    SHARED = "VRShared"


# -- operand payloads -------------------------------------------------------


@dataclass(frozen=True)
class Ref:
    name: str

    def __str__(self) -> str:
        return f"%{self.name}"


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Null:
    def __str__(self) -> str:
        return "null"


@dataclass(frozen=True)
class Sym:
    name: str

    def __str__(self) -> str:
        return f"@{self.name}"


@dataclass(frozen=True)
class FrameIndex:
    index: int
    base: BaseReg = BaseReg.FRAME_LOCAL
    # alloca this operand was selected from; survives slot merging
    origin: str = ""

    def __str__(self) -> str:
        tag = "shared" if self.base is BaseReg.SHARED else "local"
        return f"fi#{self.index}<{tag},%{self.origin}>"


Payload = Ref | Const | Null | Sym | FrameIndex


@dataclass(frozen=True)
class Operand:
    type: Type
    value: Payload

    def __str__(self) -> str:
        return f"{self.type} {self.value}"

    @property
    def ref(self) -> str | None:
        return self.value.name if isinstance(self.value, Ref) else None


def ref(t: Type, name: str) -> Operand:
    return Operand(t, Ref(name))


def const(t: Type, value: int) -> Operand:
    return Operand(t, Const(value))


def null(t: Type) -> Operand:
    return Operand(t, Null())


def sym(t: Type, name: str) -> Operand:
    return Operand(t, Sym(name))


# -- instructions -----------------------------------------------------------


@dataclass
class Instruction:
    """One IR instruction.

    ``type`` is the annotation printed after the opcode: the allocated
    type for alloca, the loaded type for load, the destination type for
    casts, the result pointer type for getelement, the operand type for
    binop/cmp and the return type for call.
    """

    opcode: Opcode
    operands: list[Operand] = field(default_factory=list)
    result: str | None = None
    type: Type | None = None
    op: str | None = None
    callee: str | None = None
    targets: tuple[str, ...] = ()
    count: int = 1
    align: int = 0
    meta: tuple[str, ...] = ()

    @property
    def result_type(self) -> Type | None:
        if self.result is None:
            return None
        if self.opcode is Opcode.ALLOCA:
            return PtrType(self.type)
        if self.opcode is Opcode.CMP:
            return I1
        return self.type

    @property
    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    def uses(self) -> Iterator[str]:
        for o in self.operands:
            if isinstance(o.value, Ref):
                yield o.value.name

    def alloc_bytes(self) -> int:
        assert self.opcode is Opcode.ALLOCA
        return sizeof(self.type) * self.count

    def has_meta(self, tag: str) -> bool:
        return tag in self.meta

    def copy(self, **changes) -> "Instruction":
        changes.setdefault("operands", list(self.operands))
        return replace(self, **changes)


@dataclass
class Block:
    label: str
    instructions: list[Instruction] = field(default_factory=list)

    @property
    def terminator(self) -> Instruction | None:
        if self.instructions and self.instructions[-1].is_terminator:
            return self.instructions[-1]
        return None

    def successors(self) -> tuple[str, ...]:
        term = self.terminator
        return term.targets if term is not None else ()


@dataclass(frozen=True)
class Param:
    name: str
    type: Type


@dataclass
class Function:
    name: str
    ret: Type
    params: list[Param]
    blocks: list[Block] = field(default_factory=list)
    kernel: bool = False

    @property
    def is_machine(self) -> bool:
        return False

    def block(self, label: str) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def instructions(self) -> Iterator[Instruction]:
        for b in self.blocks:
            yield from b.instructions

    def positions(self) -> Iterator[tuple[Block, int, Instruction]]:
        for b in self.blocks:
            for i, inst in enumerate(b.instructions):
                yield b, i, inst

    def definitions(self) -> dict[str, Type]:
        defs = {p.name: p.type for p in self.params}
        for inst in self.instructions():
            if inst.result is not None:
                defs[inst.result] = inst.result_type
        return defs

    def allocas(self) -> list[Instruction]:
        return [i for i in self.instructions() if i.opcode is Opcode.ALLOCA]

    def predecessors(self) -> dict[str, list[str]]:
        preds: dict[str, list[str]] = {b.label: [] for b in self.blocks}
        for b in self.blocks:
            for s in b.successors():
                if s in preds and b.label not in preds[s]:
                    preds[s].append(b.label)
        return preds


# -- machine form -----------------------------------------------------------


@dataclass(frozen=True)
class FrameObject:
    """A depot-resident stack object created by instruction selection."""

    index: int
    origin: str
    size: int
    align: int


@dataclass(frozen=True)
class DepotSlot:
    frame_indices: tuple[int, ...]
    offset: int
    size: int
    align: int
    shared: bool = False


@dataclass(frozen=True)
class DepotLayout:
    """Mirrored local/shared depot of one function.

    The shared depot reuses the local offsets, so both totals are equal.
    """

    slots: tuple[DepotSlot, ...] = ()
    total_local_bytes: int = 0
    total_shared_bytes: int = 0

    def slot_of(self, index: int) -> DepotSlot:
        for s in self.slots:
            if index in s.frame_indices:
                return s
        raise KeyError(f"frame index {index} has no depot slot")

    def offset_of(self, index: int) -> int:
        return self.slot_of(index).offset


@dataclass
class MachineFunction(Function):
    frame: list[FrameObject] = field(default_factory=list)
    layout: DepotLayout | None = None

    @property
    def is_machine(self) -> bool:
        return True

    def frame_object(self, index: int) -> FrameObject:
        for fo in self.frame:
            if fo.index == index:
                return fo
        raise KeyError(index)


# -- module -----------------------------------------------------------------


@dataclass(frozen=True)
class Declaration:
    name: str
    ret: Type
    params: tuple[Type, ...]


@dataclass(frozen=True)
class GlobalVar:
    name: str
    type: Type
    addrspace: int


@dataclass(frozen=True)
class MapInfo:
    name: str
    direction: str
    lower: int
    length: int


@dataclass(frozen=True)
class TargetInfo:
    """Launch descriptor of one compiled target region."""

    kernel: str
    num_teams: int | None = None
    thread_limit: int | None = None
    maps: tuple[MapInfo, ...] = ()


@dataclass
class Module:
    functions: list[Function] = field(default_factory=list)
    declarations: list[Declaration] = field(default_factory=list)
    globals: list[GlobalVar] = field(default_factory=list)
    targets: list[TargetInfo] = field(default_factory=list)

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def has_function(self, name: str) -> bool:
        return any(f.name == name for f in self.functions)

    def declaration(self, name: str) -> Declaration | None:
        for d in self.declarations:
            if d.name == name:
                return d
        return None

    def declare(self, name: str, ret: Type, *params: Type) -> None:
        if self.declaration(name) is None:
            self.declarations.append(Declaration(name, ret, tuple(params)))

    def signature(self, name: str) -> tuple[Type, tuple[Type, ...]] | None:
        d = self.declaration(name)
        if d is not None:
            return d.ret, d.params
        for f in self.functions:
            if f.name == name:
                return f.ret, tuple(p.type for p in f.params)
        return None

    def kernels(self) -> list[Function]:
        return [f for f in self.functions if f.kernel]


def void_call(callee: str, *args: Operand) -> Instruction:
    return Instruction(Opcode.CALL, list(args), type=VOID, callee=callee)
