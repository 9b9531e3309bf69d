"""Generic -> shared -> generic cast round trips for shared allocas."""

from __future__ import annotations

from ..ir import AddressSpace, Function, Instruction, Opcode, Operand, PtrType, Ref
from .detect import SharedSet


def shared_name(alloca: str) -> str:
    return f"{alloca}.s"


def generic_name(alloca: str) -> str:
    return f"{alloca}.g"


def insert_cast_round_trips(func: Function, shared: SharedSet) -> Function:
    """Place two address-space casts right after every shared alloca.

    All other uses of the alloca are rebound to the generic result of the
    round trip, so the only direct user left is the cast to shared memory.
    Later stages recognise that cast and bind the slot to the shared depot.
    """
    rebound: dict[str, str] = {}
    for b in func.blocks:
        out: list[Instruction] = []
        for inst in b.instructions:
            out.append(inst)
            if inst.opcode is Opcode.ALLOCA and inst.result in shared:
                t = inst.result_type
                st = PtrType(t.pointee, AddressSpace.SHARED)
                s, g = shared_name(inst.result), generic_name(inst.result)
                out.append(Instruction(Opcode.ADDRSPACECAST, [Operand(t, Ref(inst.result))], s, st))
                out.append(Instruction(Opcode.ADDRSPACECAST, [Operand(st, Ref(s))], g, t))
                rebound[inst.result] = g
        b.instructions = out
    for b in func.blocks:
        for n, inst in enumerate(b.instructions):
            if inst.opcode is Opcode.ADDRSPACECAST and inst.result == shared_name(inst.operands[0].ref or ""):
                continue
            if any(o.ref in rebound for o in inst.operands):
                ops = [Operand(o.type, Ref(rebound[o.ref])) if o.ref in rebound else o for o in inst.operands]
                b.instructions[n] = inst.copy(operands=ops)
    return func
