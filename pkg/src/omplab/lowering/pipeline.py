"""Pass manager for the depot lowering pipeline.

Two orderings are provided. ``default`` decides residency while lowering
allocas, one alloca at a time. ``O0`` runs a separate whole-function
detection pass first and inserts the casts in a pass of its own. Both must
arrive at the same shared sets.

Every pass declares the facts it needs and provides. Stack coloring needs
frame-index lowering to have run, because only then can it tell shared
slots apart; running it earlier is a hard error unless ``unsafe`` is set,
which exists to reproduce the resulting miscompile.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

from ..ir import DepotLayout, FrameIndex, MachineFunction, Module, Opcode, print_ir, validate
from .casts import insert_cast_round_trips
from .coloring import apply_coloring, color_stack_slots, mixed_slots
from .depots import build_depots, layout_manifest
from .detect import SharedSet, call_escapes, detect_address_taken, detect_per_alloca
from .frames import LoweringError, lower_frame_indices
from .isel import select_instructions


class PassOrderError(Exception):
    pass


@dataclass
class PipelineState:
    module: Module
    unsafe: bool = False
    shared: dict[str, SharedSet] = field(default_factory=dict)
    facts: set[str] = field(default_factory=set)
    diagnostics: list[LoweringError] = field(default_factory=list)
    dumps: dict[str, str] = field(default_factory=dict)
    history: list[str] = field(default_factory=list)

    def machine_functions(self) -> list[MachineFunction]:
        return [f for f in self.module.functions if isinstance(f, MachineFunction)]


@dataclass(frozen=True)
class Pass:
    name: str
    run: Callable[[PipelineState], None]
    requires: tuple[str, ...] = ()
    provides: tuple[str, ...] = ()
    # requirements that ``unsafe`` mode may skip
    waivable: tuple[str, ...] = ()


# -- pass bodies ------------------------------------------------------------


def _lower_alloca(state: PipelineState) -> None:
    for f in state.module.functions:
        shared = detect_per_alloca(f)
        state.shared[f.name] = shared
        insert_cast_round_trips(f, shared)


def _function_data_sharing(state: PipelineState) -> None:
    for f in state.module.functions:
        state.shared[f.name] = detect_address_taken(f)


def _insert_casts(state: PipelineState) -> None:
    for f in state.module.functions:
        insert_cast_round_trips(f, state.shared[f.name])


def _isel(state: PipelineState) -> None:
    out = []
    for f in state.module.functions:
        resident = set(state.shared[f.name].members) | call_escapes(f)
        out.append(select_instructions(f, resident))
    state.module.functions = out


def _build_depots(state: PipelineState) -> None:
    for mf in state.machine_functions():
        mf.layout = build_depots(mf, state.shared[mf.name])


def _lower_frames(state: PipelineState) -> None:
    sink = state.diagnostics if state.unsafe else None
    for mf in state.machine_functions():
        lower_frame_indices(mf, mf.layout, sink)


def _stack_coloring(state: PipelineState) -> None:
    for mf in state.machine_functions():
        apply_coloring(mf, color_stack_slots(mf, mf.layout))
        for s in mixed_slots(mf.layout, mf, set(state.shared[mf.name].members)):
            origins = ", ".join("%" + mf.frame_object(i).origin for i in s.frame_indices)
            state.diagnostics.append(
                LoweringError("shared-local-overlap", f"@{mf.name}: depot offset {s.offset} holds {origins}")
            )


def _finalize(state: PipelineState) -> None:
    for mf in state.machine_functions():
        check_machine_function(mf, state.diagnostics if state.unsafe else None)
    diags = validate(state.module)
    if diags:
        raise LoweringError("invalid-ir", "; ".join(str(d) for d in diags))


PASSES = {
    p.name: p
    for p in (
        Pass("lower-alloca", _lower_alloca, (), ("shared-set", "casts")),
        Pass("function-data-sharing", _function_data_sharing, (), ("shared-set",)),
        Pass("insert-cast-round-trips", _insert_casts, ("shared-set",), ("casts",)),
        Pass("isel", _isel, ("shared-set",), ("machine",)),
        Pass("build-depots", _build_depots, ("machine",), ("depots",)),
        Pass("lower-shared-frame-indices", _lower_frames, ("depots",), ("frames-lowered",)),
        Pass("stack-coloring", _stack_coloring, ("depots", "frames-lowered"), ("colored",), ("frames-lowered",)),
        Pass("finalize", _finalize, ("depots",), ("final",)),
    )
}

PIPELINES = {
    "default": (
        "lower-alloca", "isel", "build-depots", "lower-shared-frame-indices", "stack-coloring", "finalize",
    ),
    "O0": (
        "function-data-sharing", "insert-cast-round-trips", "isel", "build-depots",
        "lower-shared-frame-indices", "finalize",
    ),
}


def check_machine_function(mf: MachineFunction, diagnostics: list | None = None) -> None:
    """Post-pipeline invariants of one machine function."""
    lay = mf.layout or DepotLayout()
    problems = []
    if lay.total_local_bytes != lay.total_shared_bytes:
        problems.append(("mirror", f"local depot {lay.total_local_bytes} != shared depot {lay.total_shared_bytes}"))
    bases: dict[int, set] = {}
    for inst in mf.instructions():
        for o in inst.operands:
            if isinstance(o.value, FrameIndex):
                bases.setdefault(o.value.index, set()).add(o.value.base)
                try:
                    lay.slot_of(o.value.index)
                except KeyError:
                    problems.append(("frame-index", f"fi#{o.value.index} has no depot slot"))
    for index, b in sorted(bases.items()):
        if len(b) > 1:
            problems.append(("mixed-base", f"fi#{index} addressed from both stack registers"))
    for rule, msg in problems:
        err = LoweringError(rule, f"@{mf.name}: {msg}")
        if diagnostics is None:
            raise err
        diagnostics.append(err)


class PassManager:
    def __init__(self, passes: list[str] | tuple[str, ...], unsafe: bool = False, dump_after: tuple[str, ...] = ()):
        unknown = [p for p in passes if p not in PASSES]
        if unknown:
            raise PassOrderError(f"unknown pass {unknown[0]!r}")
        bad_dumps = [d for d in dump_after if d != "all" and d not in PASSES]
        if bad_dumps:
            raise PassOrderError(f"--dump-after names unknown pass {bad_dumps[0]!r}")
        self.passes = [PASSES[p] for p in passes]
        self.unsafe = unsafe
        self.dump_after = set(dump_after)
        self.hooks: list[Callable[[str, PipelineState], None]] = []
        self.check_order()

    def check_order(self) -> None:
        facts: set[str] = set()
        for p in self.passes:
            missing = [r for r in p.requires if r not in facts and not (self.unsafe and r in p.waivable)]
            if missing:
                raise PassOrderError(f"pass {p.name!r} requires {', '.join(missing)} from an earlier pass")
            facts.update(p.provides)

    def add_hook(self, hook: Callable[[str, PipelineState], None]) -> None:
        """Register ``hook(pass_name, state)`` to run after every pass."""
        self.hooks.append(hook)

    def run(self, module: Module) -> PipelineState:
        state = PipelineState(module, unsafe=self.unsafe)
        for p in self.passes:
            p.run(state)
            state.facts.update(p.provides)
            state.history.append(p.name)
            if p.name in self.dump_after or "all" in self.dump_after:
                state.dumps[p.name] = print_ir(state.module)
            for hook in self.hooks:
                hook(p.name, state)
        return state


def run_pipeline(module: Module, pipeline: str = "default", **kw) -> PipelineState:
    if pipeline not in PIPELINES:
        raise PassOrderError(f"unknown pipeline {pipeline!r}")
    return PassManager(PIPELINES[pipeline], **kw).run(module)


def misordered_pipeline() -> tuple[str, ...]:
    """The default pipeline with coloring moved ahead of frame-index lowering."""
    p = list(PIPELINES["default"])
    p.remove("stack-coloring")
    p.insert(p.index("lower-shared-frame-indices"), "stack-coloring")
    return tuple(p)


def depot_manifest(state: PipelineState) -> dict:
    """Slot table and shared-reference count of the kernel, for the occupancy model."""
    kernel = next(f for f in state.module.functions if f.kernel)
    nargs = [
        inst.operands[1].value.value for inst in kernel.instructions()
        if inst.opcode is Opcode.CALL and inst.callee == "__kmpc_kernel_prepare_parallel"
    ]
    table = layout_manifest(kernel)
    return {
        "kernel": kernel.name,
        "slot_sizes": [s["size"] for s in table["slots"]],
        "nargs": max(nargs, default=0),
        "shared_set": state.shared[kernel.name].sorted(),
        "stack_bytes": kernel.layout.total_shared_bytes,
        "layout": table,
    }


def manifest_json(state: PipelineState) -> str:
    return json.dumps(depot_manifest(state), indent=2, sort_keys=True) + "\n"
