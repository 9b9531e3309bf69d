"""Rebasing of frame indices onto the shared stack register."""

from __future__ import annotations

from dataclasses import replace

from ..ir import AddressSpace, BaseReg, DepotLayout, FrameIndex, MachineFunction, Opcode, Operand, PtrType


class LoweringError(Exception):
    def __init__(self, rule: str, message: str):
        super().__init__(f"[{rule}] {message}")
        self.rule = rule
        self.message = message


def _is_shared_cast(inst) -> bool:
    return (
        inst.opcode is Opcode.ADDRSPACECAST
        and isinstance(inst.operands[0].value, FrameIndex)
        and isinstance(inst.type, PtrType)
        and inst.type.addrspace == AddressSpace.SHARED
    )


def lower_frame_indices(
    mf: MachineFunction, layout: DepotLayout, diagnostics: list[LoweringError] | None = None
) -> MachineFunction:
    """Translate every frame index that feeds a cast to shared memory.

    A translated index is rebased to the shared register in every operand
    that names it, and its depot slot is marked shared. An index with both
    a shared cast and other direct uses has no single residency; that is
    raised, or appended to ``diagnostics`` when a list is supplied.
    """
    translated = {inst.operands[0].value.index for inst in mf.instructions() if _is_shared_cast(inst)}
    for index in sorted(translated):
        others = [
            inst for inst in mf.instructions()
            if not _is_shared_cast(inst)
            and any(isinstance(o.value, FrameIndex) and o.value.index == index for o in inst.operands)
        ]
        if others:
            origins = sorted({
                o.value.origin for i in others for o in i.operands
                if isinstance(o.value, FrameIndex) and o.value.index == index
            })
            err = LoweringError(
                "ambiguous-residency",
                f"@{mf.name}: fi#{index} is cast to shared but also used directly (via {', '.join('%' + x for x in origins)})",
            )
            if diagnostics is None:
                raise err
            diagnostics.append(err)
    for b in mf.blocks:
        for n, inst in enumerate(b.instructions):
            if any(isinstance(o.value, FrameIndex) and o.value.index in translated for o in inst.operands):
                ops = [
                    Operand(o.type, replace(o.value, base=BaseReg.SHARED))
                    if isinstance(o.value, FrameIndex) and o.value.index in translated else o
                    for o in inst.operands
                ]
                b.instructions[n] = inst.copy(operands=ops)
    slots = tuple(
        replace(s, shared=s.shared or any(i in translated for i in s.frame_indices)) for s in layout.slots
    )
    mf.layout = replace(layout, slots=slots)
    return mf


def shared_frame_indices(mf: MachineFunction) -> set[int]:
    return {
        o.value.index for inst in mf.instructions() for o in inst.operands
        if isinstance(o.value, FrameIndex) and o.value.base is BaseReg.SHARED
    }
