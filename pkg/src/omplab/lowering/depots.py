"""Mirrored local/shared depot construction."""

from __future__ import annotations

from ..ir import DepotLayout, DepotSlot, MachineFunction
from .detect import SharedSet
from .isel import round_up

SLOT_ALIGN = 8


def build_depots(mf: MachineFunction, shared: SharedSet) -> DepotLayout:
    """One 8-aligned slot per frame object; the shared depot reuses the offsets."""
    slots = []
    offset = 0
    for fo in mf.frame:
        size = round_up(fo.size, SLOT_ALIGN)
        slots.append(DepotSlot((fo.index,), offset, size, fo.align, fo.origin in shared))
        offset += size
    return DepotLayout(tuple(slots), offset, offset)


def layout_manifest(mf: MachineFunction) -> dict:
    """Slot table of one function as plain data."""
    lay = mf.layout or DepotLayout()
    return {
        "function": mf.name,
        "slots": [
            {
                "frame_indices": list(s.frame_indices),
                "origins": [mf.frame_object(i).origin for i in s.frame_indices],
                "offset": s.offset,
                "size": s.size,
                "align": s.align,
                "residency": "shared" if s.shared else "local",
            }
            for s in lay.slots
        ],
        "total_local_bytes": lay.total_local_bytes,
        "total_shared_bytes": lay.total_shared_bytes,
    }
