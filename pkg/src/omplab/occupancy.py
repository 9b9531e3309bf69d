"""Shared-memory footprint and per-SM team concurrency.

Per team, shared memory holds the kernel's shared depot, the runtime's
preallocated argument table and its private state block. Concurrency is
the minimum of three limits: registers, shared memory and resident blocks.
Register counts per thread are inputs, not predictions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

from .runtime import PREALLOC_ENTRIES, PRIVATE_STATE_BYTES, dynamic_list_bytes, prealloc_bytes

THREADS_PER_TEAM = 128
# footprint of a kernel sharing a single variable; each further one costs 8 bytes
BASE_FOOTPRINT = 233
BYTES_PER_VAR = 8
# depot bytes of the master/worker scaffolding alone (work_fn and args slots)
SCAFFOLD_STACK = 16
ARRAY_BYTES = 384


@dataclass(frozen=True)
class GpuSpec:
    name: str
    smem_per_sm: int
    max_blocks_per_sm: int
    regs_per_sm: int = 65536
    warp_size: int = 32
    max_regs_per_thread: int = 255

    def __post_init__(self):
        for f in ("smem_per_sm", "max_blocks_per_sm", "regs_per_sm", "warp_size", "max_regs_per_thread"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.name.startswith("k40") and self.smem_per_sm not in (16384, 32768, 49152):
            raise ValueError("K40 shared memory must be 16, 32 or 48 KB")


GPUS = {
    "k40-16k": GpuSpec("k40-16k", 16384, 16),
    "k40-32k": GpuSpec("k40-32k", 32768, 16),
    "k40-48k": GpuSpec("k40-48k", 49152, 16),
    "p100": GpuSpec("p100", 65536, 32),
}


def gpu(name: str) -> GpuSpec:
    try:
        return GPUS[name]
    except KeyError:
        raise ValueError(f"unknown GPU {name!r}; choose one of {', '.join(GPUS)}") from None


@dataclass(frozen=True)
class DepotManifest:
    slot_sizes: tuple[int, ...]
    nargs: int = 0
    prealloc_entries: int = PREALLOC_ENTRIES
    private_state_bytes: int = PRIVATE_STATE_BYTES

    @property
    def prealloc_bytes(self) -> int:
        return prealloc_bytes(self.prealloc_entries)

    @classmethod
    def from_pipeline(cls, manifest: dict, prealloc_entries: int = PREALLOC_ENTRIES) -> "DepotManifest":
        """Build from the dict produced by ``lowering.depot_manifest``."""
        return cls(tuple(manifest["slot_sizes"]), manifest["nargs"], prealloc_entries)


@dataclass(frozen=True)
class FootprintReport:
    stack_bytes: int
    prealloc_bytes: int
    private_bytes: int
    total_bytes: int
    dynamic_global_bytes: int


@dataclass(frozen=True)
class OccupancyReport:
    teams_reg_limited: int
    teams_smem_limited: int
    teams_block_limited: int
    potential_teams: int
    actual_teams: int
    smem_per_sm_used: int


def footprint(m: DepotManifest) -> FootprintReport:
    stack = sum(m.slot_sizes)
    total = stack + m.prealloc_bytes + m.private_state_bytes
    return FootprintReport(
        stack, m.prealloc_bytes, m.private_state_bytes, total, dynamic_list_bytes(m.nargs, m.prealloc_entries)
    )


def occupancy(g: GpuSpec, fp: FootprintReport, regs_per_thread: int,
              threads_per_team: int = THREADS_PER_TEAM) -> OccupancyReport:
    if not 1 <= regs_per_thread <= g.max_regs_per_thread:
        raise ValueError(f"registers per thread must be in [1, {g.max_regs_per_thread}]")
    reg = g.regs_per_sm // (regs_per_thread * threads_per_team)
    smem = g.smem_per_sm // fp.total_bytes
    block = g.max_blocks_per_sm
    potential = min(reg, block)
    return OccupancyReport(reg, smem, block, potential, min(reg, smem, block), potential * fp.total_bytes)


@dataclass(frozen=True)
class MaxVars:
    teams: int
    max_regs: int
    max_vars: int


def max_vars_at_concurrency(g: GpuSpec, teams: int, threads_per_team: int = THREADS_PER_TEAM) -> MaxVars:
    if teams < 1:
        raise ValueError("teams must be at least 1")
    regs = min(g.max_regs_per_thread, g.regs_per_sm // (teams * threads_per_team))
    budget = g.smem_per_sm // teams
    return MaxVars(teams, regs, max(0, (budget - BASE_FOOTPRINT) // BYTES_PER_VAR))


# -- fixtures -----------------------------------------------------------------

SCALAR_COUNTS = (1, 2, 4, 8, 16, 32, 64)
ARRAY_COUNTS = (1, 2, 3, 4)
MAX_VARS_TEAMS = (16, 15, 14, 13, 12, 8, 4, 2, 1)

# registers per thread, by GPU family and program
SCALAR_REGS = {"k40": (36, 36, 36, 36, 40, 72, 136), "p100": (31, 31, 31, 31, 40, 71, 135)}
ARRAY_REGS = {"k40": 36, "p100": 30}


def family(g: GpuSpec) -> str:
    return "p100" if g.name.startswith("p100") else "k40"


def scalar_manifest(n: int) -> DepotManifest:
    """A kernel sharing ``n`` scalars: scaffolding slots plus one slot each."""
    return DepotManifest((8, 8) + (8,) * n, nargs=n)


def array_manifest(k: int) -> DepotManifest:
    """A kernel sharing ``k`` arrays of 96 ints plus the output pointer."""
    return DepotManifest((8, 8, 8) + (ARRAY_BYTES,) * k, nargs=k + 1)


def scalar_rows(g: GpuSpec, with_model_row: bool = False) -> list[list]:
    rows = []
    if with_model_row:
        fp = footprint(DepotManifest((8, 8)))
        occ = occupancy(g, fp, SCALAR_REGS[family(g)][0])
        rows.append(["model", fp.total_bytes, fp.dynamic_global_bytes, SCALAR_REGS[family(g)][0],
                     occ.actual_teams, occ.smem_per_sm_used])
    for n, regs in zip(SCALAR_COUNTS, SCALAR_REGS[family(g)]):
        fp = footprint(scalar_manifest(n))
        occ = occupancy(g, fp, regs)
        rows.append([n, fp.total_bytes, fp.dynamic_global_bytes, regs, occ.actual_teams, occ.smem_per_sm_used])
    return rows


def footprint_rows(kind: str) -> list[list]:
    make, counts = (scalar_manifest, SCALAR_COUNTS) if kind == "scalars" else (array_manifest, ARRAY_COUNTS)
    out = []
    for n in counts:
        fp = footprint(make(n))
        out.append([n, fp.stack_bytes, fp.prealloc_bytes, fp.private_bytes, fp.total_bytes])
    return out


def array_rows(g: GpuSpec) -> list[list]:
    regs = ARRAY_REGS[family(g)]
    rows = []
    for k in ARRAY_COUNTS:
        fp = footprint(array_manifest(k))
        occ = occupancy(g, fp, regs)
        rows.append([k, ARRAY_BYTES * k, fp.total_bytes, regs, occ.potential_teams, occ.smem_per_sm_used,
                     occ.actual_teams])
    return rows


def max_vars_rows(g: GpuSpec) -> list[list]:
    cells = [max_vars_at_concurrency(g, t) for t in MAX_VARS_TEAMS]
    return [
        ["teams"] + [c.teams for c in cells],
        ["registers"] + [c.max_regs for c in cells],
        ["variables"] + [c.max_vars for c in cells],
    ]


HEADERS = {
    "footprint-scalars": ["vars", "stack", "prealloc", "private", "total"],
    "footprint-arrays": ["arrays", "stack", "prealloc", "private", "total"],
    "scalars": ["vars", "static_smem", "dynamic_global", "registers", "teams_per_sm", "smem_per_sm"],
    "arrays": ["arrays", "array_bytes", "static_smem", "registers", "potential_teams", "smem_per_sm",
               "actual_teams"],
}


def to_csv(header: list[str] | None, rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def reproduce_tables(gpus: list[GpuSpec], which: tuple[str, ...] = ("footprint", "scalars", "arrays", "max-vars"),
                     model_row: bool = True) -> dict[str, str]:
    """CSV text per table, keyed ``<table>`` or ``<table>-<gpu>``."""
    out: dict[str, str] = {}
    if "footprint" in which:
        out["footprint-scalars"] = to_csv(HEADERS["footprint-scalars"], footprint_rows("scalars"))
        out["footprint-arrays"] = to_csv(HEADERS["footprint-arrays"], footprint_rows("arrays"))
    for g in gpus:
        if "scalars" in which:
            out[f"scalars-{g.name}"] = to_csv(HEADERS["scalars"], scalar_rows(g, model_row))
        if "arrays" in which:
            out[f"arrays-{g.name}"] = to_csv(HEADERS["arrays"], array_rows(g))
        if "max-vars" in which:
            out[f"max-vars-{g.name}"] = to_csv(None, max_vars_rows(g))
    return out


def report_json(fp: FootprintReport, occ: OccupancyReport | None = None) -> str:
    data = {"footprint": asdict(fp)}
    if occ is not None:
        data["occupancy"] = asdict(occ)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
