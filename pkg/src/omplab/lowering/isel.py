"""Instruction selection into machine form.

Depot-resident allocas become frame objects and their uses become
``FrameIndex`` operands addressed from the local frame register. All other
allocas are promotable: they stay as allocas and model values the register
allocator would keep out of the depot.
"""

from __future__ import annotations

from ..ir import BaseReg, Block, FrameIndex, FrameObject, Function, MachineFunction, Opcode, Operand


def round_up(n: int, k: int) -> int:
    return -(-n // k) * k


def select_instructions(func: Function, resident: set[str]) -> MachineFunction:
    frame: list[FrameObject] = []
    index: dict[str, int] = {}
    for a in func.allocas():
        if a.result in resident:
            index[a.result] = len(frame)
            frame.append(FrameObject(len(frame), a.result, a.alloc_bytes(), a.align))
    blocks = []
    for b in func.blocks:
        out = []
        for inst in b.instructions:
            if inst.opcode is Opcode.ALLOCA and inst.result in index:
                continue
            if any(o.ref in index for o in inst.operands):
                ops = [
                    Operand(o.type, FrameIndex(index[o.ref], BaseReg.FRAME_LOCAL, o.ref)) if o.ref in index else o
                    for o in inst.operands
                ]
                inst = inst.copy(operands=ops)
            out.append(inst)
        blocks.append(Block(b.label, out))
    return MachineFunction(func.name, func.ret, list(func.params), blocks, func.kernel, frame, None)
