"""Stack slot coloring: merge depot slots whose live ranges are disjoint.

Frame indices already rebased to the shared register are never candidates;
a slot merged across the two depots would be shared memory for one variable
and thread-private memory for the other.
"""

from __future__ import annotations

from dataclasses import replace

from ..ir import BaseReg, DepotLayout, DepotSlot, FrameIndex, MachineFunction, Operand
from .detect import frame_index_roots
from .isel import round_up

Point = tuple[int, int]


def _graph(mf: MachineFunction) -> tuple[list[Point], dict[Point, list[Point]]]:
    labels = {b.label: n for n, b in enumerate(mf.blocks)}
    points: list[Point] = []
    succ: dict[Point, list[Point]] = {}
    for bn, b in enumerate(mf.blocks):
        for i in range(len(b.instructions)):
            p = (bn, i)
            points.append(p)
            if i + 1 < len(b.instructions):
                succ[p] = [(bn, i + 1)]
            else:
                succ[p] = [(labels[t], 0) for t in b.successors() if t in labels and mf.blocks[labels[t]].instructions]
    return points, succ


def _reach(starts: set[Point], edges: dict[Point, list[Point]]) -> set[Point]:
    seen = set(starts)
    stack = list(starts)
    while stack:
        p = stack.pop()
        for q in edges.get(p, ()):
            if q not in seen:
                seen.add(q)
                stack.append(q)
    return seen


def slot_references(mf: MachineFunction) -> dict[int, set[Point]]:
    """Instruction points that touch each frame index directly or via a derived pointer."""
    roots = frame_index_roots(mf)
    refs: dict[int, set[Point]] = {fo.index: set() for fo in mf.frame}
    for bn, b in enumerate(mf.blocks):
        for i, inst in enumerate(b.instructions):
            for o in inst.operands:
                if isinstance(o.value, FrameIndex):
                    refs.setdefault(o.value.index, set()).add((bn, i))
                elif o.ref in roots:
                    refs[roots[o.ref]].add((bn, i))
    return refs


def live_ranges(mf: MachineFunction) -> dict[int, set[Point]]:
    """Points after some reference that can still reach a reference."""
    _, succ = _graph(mf)
    pred: dict[Point, list[Point]] = {}
    for p, qs in succ.items():
        for q in qs:
            pred.setdefault(q, []).append(p)
    return {
        fi: (_reach(r, succ) & _reach(r, pred)) if r else set()
        for fi, r in slot_references(mf).items()
    }


def color_stack_slots(mf: MachineFunction, layout: DepotLayout) -> DepotLayout:
    """Greedy first-fit merge, in frame-index order, of non-interfering local slots."""
    shared_based = {
        o.value.index for inst in mf.instructions() for o in inst.operands
        if isinstance(o.value, FrameIndex) and o.value.base is BaseReg.SHARED
    }
    live = live_ranges(mf)
    groups: list[tuple[list[int], set[Point], bool]] = []
    for fo in sorted(mf.frame, key=lambda f: f.index):
        if fo.index not in shared_based:
            for members, points, mergeable in groups:
                if mergeable and not (points & live[fo.index]):
                    members.append(fo.index)
                    points |= live[fo.index]
                    break
            else:
                groups.append(([fo.index], set(live[fo.index]), True))
        else:
            groups.append(([fo.index], set(live[fo.index]), False))
    slots = []
    offset = 0
    for members, _, _ in groups:
        old = [layout.slot_of(i) for i in members]
        size = max(s.size for s in old)
        align = max(s.align for s in old)
        offset = round_up(offset, 8)
        slots.append(DepotSlot(tuple(members), offset, size, align, any(s.shared for s in old)))
        offset += size
    return DepotLayout(tuple(slots), offset, offset)


def apply_coloring(mf: MachineFunction, layout: DepotLayout) -> MachineFunction:
    """Rewrite merged frame indices to the first index of their slot."""
    rep = {i: s.frame_indices[0] for s in layout.slots for i in s.frame_indices}
    for b in mf.blocks:
        for n, inst in enumerate(b.instructions):
            if any(isinstance(o.value, FrameIndex) and rep[o.value.index] != o.value.index for o in inst.operands):
                ops = [
                    Operand(o.type, replace(o.value, index=rep[o.value.index])) if isinstance(o.value, FrameIndex) else o
                    for o in inst.operands
                ]
                b.instructions[n] = inst.copy(operands=ops)
    mf.layout = layout
    return mf


def mixed_slots(layout: DepotLayout, mf: MachineFunction, shared_origins: set[str]) -> list[DepotSlot]:
    """Slots that hold both a shared variable and a thread-private one."""
    out = []
    for s in layout.slots:
        kinds = {mf.frame_object(i).origin in shared_origins for i in s.frame_indices}
        if kinds == {True, False}:
            out.append(s)
    return out
