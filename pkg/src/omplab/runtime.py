"""Per-team device runtime: work hand-off and the shared-args list.

The runtime owns a fixed reservation at the top of each team's shared
memory: a preallocated table of 8-byte argument references and an opaque
thread-private state block. Regions with more arguments than the table
holds get a list allocated from a global-memory heap, released when the
last participating worker ends the region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

PREALLOC_ENTRIES = 20
REFERENCE_BYTES = 8
PRIVATE_STATE_BYTES = 49


class ProtocolError(Exception):
    """A runtime entry point was called out of order."""


class AllocationError(Exception):
    """The global heap could not satisfy a shared-args list allocation."""


def prealloc_bytes(entries: int = PREALLOC_ENTRIES) -> int:
    return entries * REFERENCE_BYTES


def runtime_reserved_bytes(entries: int = PREALLOC_ENTRIES) -> int:
    """Shared memory the runtime claims in every team."""
    return prealloc_bytes(entries) + PRIVATE_STATE_BYTES


def dynamic_list_bytes(nargs: int, entries: int = PREALLOC_ENTRIES) -> int:
    return 0 if nargs <= entries else REFERENCE_BYTES * nargs


class Heap:
    """First-fit allocator over a global-memory arena ``[base, base + size)``."""

    def __init__(self, base: int, size: int):
        self.base = base
        self.size = size
        self.blocks: dict[int, int] = {}

    def malloc(self, nbytes: int) -> int:
        cursor = self.base
        for start in sorted(self.blocks):
            if start - cursor >= nbytes:
                break
            cursor = start + self.blocks[start]
        if cursor + nbytes > self.base + self.size:
            raise AllocationError(f"cannot allocate {nbytes} bytes for the shared-args list")
        self.blocks[cursor] = nbytes
        return cursor

    def free(self, addr: int) -> None:
        if addr not in self.blocks:
            raise ProtocolError(f"free of unallocated address {addr:#x}")
        del self.blocks[addr]

    @property
    def live_bytes(self) -> int:
        return sum(self.blocks.values())


@dataclass
class Event:
    team: int
    thread: int
    call: str
    args: tuple = ()

    def __str__(self) -> str:
        return f"{self.team}\t{self.thread}\t{self.call}\t{' '.join(str(a) for a in self.args)}"


@dataclass
class TeamRuntime:
    """Runtime state of one team.

    ``table_addr`` is the address of the preallocated list in the team's
    shared memory; ``heap`` serves overflowing lists. Addresses are opaque
    integers supplied by the caller.
    """

    team: int
    team_size: int
    table_addr: int
    heap: Heap
    entries: int = PREALLOC_ENTRIES
    work_fn: int = 0
    shared_args: int = 0
    nargs: int = 0
    dynamic: bool = False
    finished: bool = False
    in_flight: bool = False
    initialized: bool = False
    participants: int = 0
    pending: set[int] = field(default_factory=set)
    acquired: set[int] = field(default_factory=set)
    events: list[Event] = field(default_factory=list)

    @property
    def num_workers(self) -> int:
        return self.team_size - 32

    @property
    def prealloc_table_bytes(self) -> int:
        return prealloc_bytes(self.entries)

    @property
    def private_state_bytes(self) -> int:
        return PRIVATE_STATE_BYTES

    def log(self, thread: int, call: str, *args) -> None:
        self.events.append(Event(self.team, thread, call, args))

    # -- entry points --

    def kernel_init(self, thread: int, team_size: int) -> None:
        self.log(thread, "kernel_init", team_size)
        self.team_size = team_size
        self.work_fn = 0
        self.shared_args = 0
        self.nargs = 0
        self.finished = False
        self.in_flight = False
        self.initialized = True

    def prepare_parallel(self, thread: int, work_fn: int, nargs: int) -> int:
        """Register work and return the list the caller fills with references."""
        if self.in_flight:
            raise ProtocolError(f"team {self.team}: prepare_parallel while a parallel region is in flight")
        if nargs < 0:
            raise ProtocolError(f"team {self.team}: negative argument count {nargs}")
        if nargs <= self.entries:
            self.shared_args = self.table_addr
            self.dynamic = False
        else:
            self.shared_args = self.heap.malloc(REFERENCE_BYTES * nargs)
            self.dynamic = True
        self.work_fn = work_fn
        self.nargs = nargs
        self.in_flight = True
        self.participants = self.num_workers
        self.pending = set(range(self.participants))
        self.acquired = set()
        self.log(thread, "prepare_parallel", f"{work_fn:#x}", nargs, "dynamic" if self.dynamic else "prealloc")
        return self.shared_args

    def kernel_parallel(self, thread: int) -> tuple[bool, int, int]:
        """Return ``(participate, work_fn, shared_args)`` for a waiting worker."""
        if self.finished:
            self.log(thread, "kernel_parallel", "terminate")
            return False, 0, 0
        if not self.in_flight:
            raise ProtocolError(f"team {self.team}: kernel_parallel with no work registered")
        if thread in self.acquired:
            raise ProtocolError(f"team {self.team}: thread {thread} acquired the same region twice")
        self.acquired.add(thread)
        participate = thread < self.participants
        self.log(thread, "kernel_parallel", f"{self.work_fn:#x}", int(participate))
        return participate, self.work_fn, self.shared_args

    def end_parallel(self, thread: int) -> None:
        if not self.in_flight or thread not in self.pending:
            raise ProtocolError(f"team {self.team}: end_parallel without a matching begin (thread {thread})")
        self.pending.discard(thread)
        self.log(thread, "end_parallel")
        if not self.pending:
            if self.dynamic:
                self.heap.free(self.shared_args)
                self.dynamic = False
            self.in_flight = False

    def terminate(self, thread: int) -> None:
        if self.in_flight:
            raise ProtocolError(f"team {self.team}: terminate while a parallel region is in flight")
        self.finished = True
        self.work_fn = 0
        self.shared_args = 0
        self.log(thread, "terminate")

    @property
    def dynamic_bytes(self) -> int:
        return REFERENCE_BYTES * self.nargs if self.dynamic else 0


def kernel_init(team: int, team_size: int, table_addr: int = 0, heap: Heap | None = None,
                entries: int = PREALLOC_ENTRIES) -> TeamRuntime:
    """Fresh runtime state for one launched team."""
    rt = TeamRuntime(team, team_size, table_addr, heap or Heap(1 << 20, 1 << 20), entries)
    rt.kernel_init(team_size - 32, team_size)
    return rt
