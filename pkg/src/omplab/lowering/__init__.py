"""Backend lowering of shared allocas to the mirrored shared depot."""

from .casts import insert_cast_round_trips
from .coloring import apply_coloring, color_stack_slots, live_ranges, mixed_slots
from .depots import build_depots, layout_manifest
from .detect import SharedSet, alias_map, call_escapes, detect_address_taken, detect_per_alloca
from .frames import LoweringError, lower_frame_indices, shared_frame_indices
from .isel import select_instructions
from .pipeline import (
    PASSES,
    PIPELINES,
    PassManager,
    PassOrderError,
    PipelineState,
    check_machine_function,
    depot_manifest,
    manifest_json,
    misordered_pipeline,
    run_pipeline,
)

__all__ = [
    "LoweringError", "PASSES", "PIPELINES", "PassManager", "PassOrderError", "PipelineState",
    "SharedSet", "alias_map", "apply_coloring", "build_depots", "call_escapes", "check_machine_function",
    "color_stack_slots", "depot_manifest", "detect_address_taken", "detect_per_alloca",
    "insert_cast_round_trips", "layout_manifest", "live_ranges", "lower_frame_indices", "manifest_json",
    "misordered_pipeline", "mixed_slots", "run_pipeline", "select_instructions", "shared_frame_indices",
]
