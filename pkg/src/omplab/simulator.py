"""Deterministic interpreter for generated kernels over a modeled GPU.

Memory is split into one global space, one shared space per team and one
local space per thread. Addresses are 64-bit words tagged with their space
and owner, so a dereference by the wrong thread or team is caught at the
access rather than silently reading another thread's data::

    bits 56..63  space tag (1 global, 3 shared, 5 local, 7 function)
    bits 32..55  owner (team for shared, global thread id for local)
    bits  0..31  byte offset

Teams run one after another. Inside a team, threads run in id order, each
until it reaches a barrier or exits; once every live thread waits at the
barrier they are all released. Barriers count live threads only, so lanes
that exit early do not hold the team up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .codegen import (
    KMPC_DEINIT,
    KMPC_END_PARALLEL,
    KMPC_INIT,
    KMPC_PARALLEL,
    KMPC_PREPARE,
    READ_NTID,
    READ_TID,
    STATE_MACHINE_BLOCKS,
    WARP_SIZE,
)
from .frontend.parser import c_arith, wrap32
from .ir import (
    AddressSpace,
    BaseReg,
    Const,
    FrameIndex,
    Function,
    Instruction,
    IntType,
    MachineFunction,
    Module,
    Null,
    Opcode,
    PtrType,
    Ref,
    Sym,
    element_of,
    sizeof,
)
from .runtime import PREALLOC_ENTRIES, PRIVATE_STATE_BYTES, AllocationError, Heap, ProtocolError, TeamRuntime

TAG_SHIFT = 56
OWNER_SHIFT = 32
OFFSET_MASK = (1 << 32) - 1
OWNER_MASK = (1 << 24) - 1
TAG_GLOBAL = 1
TAG_SHARED = 3
TAG_LOCAL = 5
TAG_FUNC = 7
GLOBAL_BASE = 0x100
FUNC_STRIDE = 0x40


def encode(tag: int, owner: int, offset: int) -> int:
    return (tag << TAG_SHIFT) | ((owner & OWNER_MASK) << OWNER_SHIFT) | (offset & OFFSET_MASK)


def decode(addr: int) -> tuple[int, int, int]:
    return addr >> TAG_SHIFT, (addr >> OWNER_SHIFT) & OWNER_MASK, addr & OFFSET_MASK


class SimTrap(Exception):
    def __init__(self, kind: str, message: str, team: int = -1, thread: int = -1):
        super().__init__(f"[{kind}] team {team} thread {thread}: {message}")
        self.kind = kind
        self.message = message
        self.team = team
        self.thread = thread


@dataclass(frozen=True)
class LaunchConfig:
    num_teams: int
    thread_limit: int
    max_team_size: int = 1024

    def __post_init__(self):
        if self.num_teams < 1 or self.thread_limit < 1:
            raise ValueError("num_teams and thread_limit must be positive")
        if self.team_size > self.max_team_size:
            raise ValueError(f"team of {self.team_size} threads exceeds the device limit {self.max_team_size}")

    @property
    def team_size(self) -> int:
        return self.thread_limit + WARP_SIZE


@dataclass
class TraceEvent:
    step: int
    team: int
    thread: int
    event: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.step}\t{self.team}\t{self.thread}\t{self.event}\t{self.detail}"


@dataclass
class SimResult:
    outputs: dict[str, list[int]]
    steps: int
    events: list[TraceEvent] = field(default_factory=list)
    runtime_events: list = field(default_factory=list)
    # (team, role) -> barrier arrivals
    barriers: dict[tuple[int, str], int] = field(default_factory=dict)
    # team -> thread ids that executed sequential-region instructions
    sequential_threads: dict[int, set[int]] = field(default_factory=dict)
    # (team, tid) -> instructions executed in user code
    user_steps: dict[tuple[int, int], int] = field(default_factory=dict)
    wrapper_calls: int = 0
    leaked_heap_bytes: int = 0
    max_dynamic_bytes: int = 0

    def trace_lines(self) -> list[str]:
        return [str(e) for e in self.events]


@dataclass
class _DFunc:
    fn: Function
    blocks: dict[str, list[Instruction]]
    entry: str
    local_bytes: int
    shared_base: int
    user_labels: frozenset[str]
    sequential_labels: frozenset[str]


class _Frame:
    __slots__ = ("f", "label", "insts", "ip", "regs", "local_base", "saved_sp")

    def __init__(self, f: _DFunc, regs: dict, local_base: int, saved_sp: int):
        self.f = f
        self.label = f.entry
        self.insts = f.blocks[f.entry]
        self.ip = 0
        self.regs = regs
        self.local_base = local_base
        self.saved_sp = saved_sp


class _Thread:
    __slots__ = ("tid", "gtid", "frames", "local", "sp", "exited", "role")

    def __init__(self, tid: int, gtid: int, role: str):
        self.tid = tid
        self.gtid = gtid
        self.frames: list[_Frame] = []
        self.local = bytearray()
        self.sp = 0
        self.exited = False
        self.role = role


def _is_dispatch(label: str) -> bool:
    return label.startswith("execute.fn.") or label.startswith("check.next.")


class Simulator:
    def __init__(
        self,
        module: Module,
        config: LaunchConfig,
        buffers: dict[str, list[int]] | None = None,
        scalars: dict[str, int] | None = None,
        *,
        checked: bool = True,
        trace: bool = False,
        prealloc_entries: int = PREALLOC_ENTRIES,
        heap_bytes: int = 1 << 16,
        step_limit: int = 20_000_000,
    ):
        self.module = module
        self.config = config
        self.checked = checked
        self.tracing = trace
        self.entries = prealloc_entries
        self.step_limit = step_limit
        kernels = module.kernels()
        if len(kernels) != 1:
            raise SimTrap("launch", f"expected one kernel, found {len(kernels)}")
        self.kernel = kernels[0]
        self.funcs: dict[str, _DFunc] = {}
        self.func_addr: dict[str, int] = {}
        self.func_at: dict[int, str] = {}
        shared_cursor = 0
        for n, f in enumerate([self.kernel] + [g for g in module.functions if g is not self.kernel]):
            lay = f.layout if isinstance(f, MachineFunction) else None
            local = lay.total_local_bytes if lay else 0
            shared = lay.total_shared_bytes if lay else 0
            labels = [b.label for b in f.blocks]
            if f is self.kernel:
                seq = frozenset(l for l in labels if l not in STATE_MACHINE_BLOCKS and not _is_dispatch(l))
                user = seq
            else:
                seq = frozenset()
                user = frozenset(labels)
            self.funcs[f.name] = _DFunc(
                f, {b.label: b.instructions for b in f.blocks}, f.blocks[0].label, local, shared_cursor, user, seq
            )
            shared_cursor += shared
            addr = encode(TAG_FUNC, 0, FUNC_STRIDE * (n + 1) + 0x1230)
            self.func_addr[f.name] = addr
            self.func_at[addr] = f.name
        self.depot_bytes = shared_cursor
        self.table_offset = shared_cursor
        self.shared_bytes = shared_cursor + self.entries * 8 + PRIVATE_STATE_BYTES
        # global memory: mapped buffers, then the runtime heap
        self.buffers = dict(buffers or {})
        self.scalars = dict(scalars or {})
        self.buffer_addr: dict[str, int] = {}
        info = module.targets[0] if module.targets else None
        self.maps = {m.name: m for m in info.maps} if info else {}
        cursor = GLOBAL_BASE
        for p in self.kernel.params:
            if isinstance(p.type, PtrType):
                if p.name not in self.maps:
                    raise SimTrap("launch", f"pointer parameter %{p.name} is not mapped")
                m = self.maps[p.name]
                self.buffer_addr[p.name] = cursor
                cursor += 4 * (m.lower + m.length)
                cursor = -(-cursor // 8) * 8
        heap_base = cursor
        self.global_mem = bytearray(heap_base + heap_bytes)
        self.heap = Heap(encode(TAG_GLOBAL, 0, heap_base), heap_bytes)
        for name, m in self.maps.items():
            data = self.buffers.get(name)
            base = self.buffer_addr.get(name)
            if base is None:
                continue
            if m.direction in ("to", "tofrom"):
                if data is None:
                    raise SimTrap("launch", f"no input for mapped buffer {name}")
                if len(data) < m.lower + m.length:
                    raise SimTrap("launch", f"buffer {name} has {len(data)} elements, map needs {m.lower + m.length}")
                for i in range(m.lower, m.lower + m.length):
                    self._write(self.global_mem, base + 4 * i, wrap32(data[i]), 4)
        for p in self.kernel.params:
            if not isinstance(p.type, PtrType) and p.name not in self.scalars:
                raise SimTrap("launch", f"no value for scalar parameter %{p.name}")
        self.steps = 0
        self.result = SimResult({}, 0)
        self.team = 0
        self.shared_mem = bytearray()
        self.runtime: TeamRuntime | None = None
        self.claims: dict[int, str] = {}

    # -- memory --

    @staticmethod
    def _write(mem: bytearray, off: int, value: int, size: int) -> None:
        mem[off:off + size] = (value & ((1 << (8 * size)) - 1)).to_bytes(size, "little")

    def _memory(self, th: _Thread, addr: int, size: int, what: str) -> tuple[bytearray, int]:
        tag, owner, off = decode(addr)
        if addr == 0:
            raise SimTrap("null", f"{what} through a null pointer", self.team, th.tid)
        if tag == TAG_LOCAL:
            if owner != th.gtid:
                raise SimTrap(
                    "address-space",
                    f"{what} of local memory owned by thread {owner} (address {addr:#x})", self.team, th.tid,
                )
            mem = th.local
        elif tag == TAG_SHARED:
            if owner != self.team:
                raise SimTrap("address-space", f"{what} of shared memory of team {owner}", self.team, th.tid)
            mem = self.shared_mem
        elif tag == TAG_GLOBAL:
            mem = self.global_mem
        elif tag == TAG_FUNC:
            raise SimTrap("address-space", f"{what} through function address {addr:#x}", self.team, th.tid)
        else:
            raise SimTrap("address-space", f"{what} through malformed address {addr:#x}", self.team, th.tid)
        if off + size > len(mem):
            raise SimTrap("bounds", f"{what} at {addr:#x} is outside memory", self.team, th.tid)
        return mem, off

    def load(self, th: _Thread, addr: int, t) -> int:
        size = sizeof(t)
        mem, off = self._memory(th, addr, size, "load")
        signed = isinstance(t, IntType)
        v = int.from_bytes(mem[off:off + size], "little", signed=signed)
        if self.tracing and addr >> TAG_SHIFT == TAG_SHARED:
            self.emit(th, "shared-load", f"+{off} {v}")
        return v

    def store(self, th: _Thread, addr: int, value: int, t) -> None:
        size = sizeof(t)
        mem, off = self._memory(th, addr, size, "store")
        self._write(mem, off, value, size)
        if self.tracing and addr >> TAG_SHIFT == TAG_SHARED:
            self.emit(th, "shared-store", f"+{off} {value}")

    def emit(self, th: _Thread | None, event: str, detail: str = "") -> None:
        if self.tracing:
            self.result.events.append(TraceEvent(self.steps, self.team, th.tid if th else -1, event, detail))

    # -- values --

    def value(self, th: _Thread, fr: _Frame, o) -> int:
        v = o.value
        if isinstance(v, Ref):
            return fr.regs[v.name]
        if isinstance(v, Const):
            return v.value
        if isinstance(v, Null):
            return 0
        if isinstance(v, Sym):
            if v.name in self.func_addr:
                return self.func_addr[v.name]
            raise SimTrap("symbol", f"unknown symbol @{v.name}", self.team, th.tid)
        if isinstance(v, FrameIndex):
            f = fr.f
            off = f.fn.layout.offset_of(v.index)
            if v.base is BaseReg.SHARED:
                shared_off = f.shared_base + off
                if self.checked:
                    prev = self.claims.setdefault(shared_off, v.origin)
                    if prev != v.origin:
                        raise SimTrap(
                            "overlap",
                            f"shared/local overlap: shared depot offset {shared_off} used for %{prev} and %{v.origin}",
                            self.team, th.tid,
                        )
                return encode(TAG_SHARED, self.team, shared_off)
            return encode(TAG_LOCAL, th.gtid, fr.local_base + off)
        raise TypeError(v)  # pragma: no cover

    # -- execution --

    def alloc_local(self, th: _Thread, nbytes: int) -> int:
        base = th.sp
        th.sp += -(-nbytes // 8) * 8
        if th.sp > len(th.local):
            th.local.extend(bytes(th.sp - len(th.local)))
        th.local[base:th.sp] = bytes(th.sp - base)
        return base

    def call(self, th: _Thread, name: str, args: list[int]) -> None:
        f = self.funcs[name]
        saved = th.sp
        base = self.alloc_local(th, f.local_bytes)
        regs = {p.name: a for p, a in zip(f.fn.params, args)}
        th.frames.append(_Frame(f, regs, base, saved))

    def role(self, tid: int) -> str:
        master = self.config.team_size - WARP_SIZE
        return "worker" if tid < master else ("master" if tid == master else "inactive")

    def builtin(self, th: _Thread, fr: _Frame, inst: Instruction, args: list[int]) -> int | None:
        name = inst.callee
        rt = self.runtime
        worker = th.role == "worker"
        if name == READ_TID:
            return th.tid
        if name == READ_NTID:
            return self.config.team_size
        if name == "omp_get_thread_num":
            return th.tid if worker else 0
        if name == "omp_get_num_threads":
            return self.config.thread_limit if worker else 1
        if name == "omp_get_team_num":
            return self.team
        if name == "omp_get_num_teams":
            return self.config.num_teams
        self.emit(th, "call", name.replace("__kmpc_kernel_", "") + "(" + ",".join(hex(a) if a > 0xFFFF else str(a) for a in args) + ")")
        if name == KMPC_INIT:
            rt.kernel_init(th.tid, args[0])
            return None
        if name == KMPC_PREPARE:
            try:
                lst = rt.prepare_parallel(th.tid, args[0], args[1])
            except AllocationError as e:
                raise SimTrap("malloc", str(e), self.team, th.tid) from e
            self.result.max_dynamic_bytes = max(self.result.max_dynamic_bytes, rt.dynamic_bytes)
            return lst
        if name == KMPC_PARALLEL:
            participate, work_fn, lst = rt.kernel_parallel(th.tid)
            self.store(th, args[0], work_fn, PtrType(IntType(8)))
            self.store(th, args[1], lst, PtrType(PtrType(IntType(8))))
            return int(participate)
        if name == KMPC_END_PARALLEL:
            rt.end_parallel(th.tid)
            return None
        if name == KMPC_DEINIT:
            rt.terminate(th.tid)
            return None
        raise SimTrap("call", f"call to unknown function @{name}", self.team, th.tid)

    def run_thread(self, th: _Thread) -> None:
        """Run ``th`` until it reaches a barrier or exits."""
        while True:
            fr = th.frames[-1]
            if fr.ip >= len(fr.insts):
                raise SimTrap("control", f"fell off block %{fr.label}", self.team, th.tid)
            inst = fr.insts[fr.ip]
            fr.ip += 1
            self.steps += 1
            if self.steps > self.step_limit:
                raise SimTrap("step-limit", f"exceeded {self.step_limit} steps", self.team, th.tid)
            if fr.label in fr.f.user_labels:
                key = (self.team, th.tid)
                self.result.user_steps[key] = self.result.user_steps.get(key, 0) + 1
                if fr.label in fr.f.sequential_labels:
                    self.result.sequential_threads.setdefault(self.team, set()).add(th.tid)
            op = inst.opcode
            if op is Opcode.LOAD:
                fr.regs[inst.result] = self.load(th, self.value(th, fr, inst.operands[0]), inst.type)
            elif op is Opcode.STORE:
                v = self.value(th, fr, inst.operands[0])
                self.store(th, self.value(th, fr, inst.operands[1]), v, inst.operands[0].type)
            elif op is Opcode.BINOP:
                a = self.value(th, fr, inst.operands[0])
                b = self.value(th, fr, inst.operands[1])
                fr.regs[inst.result] = self._binop(th, inst.op, a, b)
            elif op is Opcode.CMP:
                a = self.value(th, fr, inst.operands[0])
                b = self.value(th, fr, inst.operands[1])
                fr.regs[inst.result] = int(_compare(inst.op, a, b))
            elif op is Opcode.BRANCH:
                self.jump(fr, inst.targets[0])
            elif op is Opcode.CONDBRANCH:
                c = self.value(th, fr, inst.operands[0])
                self.jump(fr, inst.targets[0] if c else inst.targets[1])
            elif op is Opcode.GETELEMENT:
                base = self.value(th, fr, inst.operands[0])
                idx = self.value(th, fr, inst.operands[1])
                step = sizeof(element_of(inst.operands[0].type))
                tag, owner, off = decode(base)
                fr.regs[inst.result] = encode(tag, owner, off + idx * step)
            elif op is Opcode.BITCAST:
                fr.regs[inst.result] = self.value(th, fr, inst.operands[0])
            elif op is Opcode.ADDRSPACECAST:
                v = self.value(th, fr, inst.operands[0])
                dst = inst.type.addrspace
                if dst != AddressSpace.GENERIC and v != 0:
                    want = {AddressSpace.SHARED: TAG_SHARED, AddressSpace.LOCAL: TAG_LOCAL,
                            AddressSpace.GLOBAL: TAG_GLOBAL}[dst]
                    if v >> TAG_SHIFT != want:
                        raise SimTrap(
                            "address-space", f"cast of {v:#x} to {dst.label} memory", self.team, th.tid
                        )
                fr.regs[inst.result] = v
            elif op is Opcode.ALLOCA:
                base = self.alloc_local(th, inst.alloc_bytes())
                fr.regs[inst.result] = encode(TAG_LOCAL, th.gtid, base)
            elif op is Opcode.CALL:
                args = [self.value(th, fr, o) for o in inst.operands]
                if inst.callee in self.funcs:
                    if inst.callee.startswith("__omp_wrapper_"):
                        self.result.wrapper_calls += 1
                        self.emit(th, "wrapper", inst.callee)
                    self.call(th, inst.callee, args)
                else:
                    r = self.builtin(th, fr, inst, args)
                    if inst.result is not None:
                        fr.regs[inst.result] = r
            elif op is Opcode.RET:
                th.sp = fr.saved_sp
                th.frames.pop()
                if not th.frames:
                    th.exited = True
                    self.emit(th, "exit", th.role)
                    return
            elif op is Opcode.BARRIER:
                key = (self.team, th.role)
                self.result.barriers[key] = self.result.barriers.get(key, 0) + 1
                self.emit(th, "barrier", f"{th.role} {fr.label}")
                return
            else:  # pragma: no cover
                raise SimTrap("opcode", f"cannot execute {op}", self.team, th.tid)

    @staticmethod
    def jump(fr: _Frame, label: str) -> None:
        fr.label = label
        fr.insts = fr.f.blocks[label]
        fr.ip = 0

    def _binop(self, th: _Thread, op: str, a: int, b: int) -> int:
        try:
            if op == "add":
                return wrap32(a + b)
            if op == "sub":
                return wrap32(a - b)
            if op == "mul":
                return wrap32(a * b)
            if op == "sdiv":
                return c_arith("/", a, b)
            if op == "srem":
                return c_arith("%", a, b)
        except ZeroDivisionError as e:
            raise SimTrap("arith", "integer division by zero", self.team, th.tid) from e
        if op == "and":
            return wrap32(a & b)
        if op == "or":
            return wrap32(a | b)
        if op == "xor":
            return wrap32(a ^ b)
        if op == "shl":
            return wrap32(a << (b & 31))
        if op == "ashr":
            return wrap32(a >> (b & 31))
        raise SimTrap("opcode", f"unknown binop {op}", self.team, th.tid)  # pragma: no cover

    def run_team(self, team: int) -> None:
        cfg = self.config
        self.team = team
        self.shared_mem = bytearray(self.shared_bytes)
        self.claims = {}
        table = encode(TAG_SHARED, team, self.table_offset)
        self.runtime = TeamRuntime(team, cfg.team_size, table, self.heap, self.entries)
        threads = [_Thread(tid, team * cfg.team_size + tid, self.role(tid)) for tid in range(cfg.team_size)]
        args = []
        for p in self.kernel.params:
            if isinstance(p.type, PtrType):
                args.append(encode(TAG_GLOBAL, 0, self.buffer_addr[p.name]))
            else:
                args.append(wrap32(self.scalars[p.name]))
        for th in threads:
            self.call(th, self.kernel.name, args)
        phase = 0
        while True:
            for th in threads:
                if not th.exited:
                    try:
                        self.run_thread(th)
                    except ProtocolError as e:
                        raise SimTrap("protocol", str(e), team, th.tid) from e
            live = [th for th in threads if not th.exited]
            if not live:
                break
            phase += 1
            self.emit(None, "release", f"phase {phase} threads {len(live)}")
        self.result.runtime_events.extend(self.runtime.events)

    def run(self) -> SimResult:
        for team in range(self.config.num_teams):
            self.run_team(team)
        outputs = {}
        for name, m in self.maps.items():
            base = self.buffer_addr.get(name)
            if base is None:
                continue
            if m.direction in ("from", "tofrom"):
                data = list(self.buffers.get(name, [0] * (m.lower + m.length)))
                data += [0] * (m.lower + m.length - len(data))
                for i in range(m.lower, m.lower + m.length):
                    data[i] = int.from_bytes(self.global_mem[base + 4 * i:base + 4 * i + 4], "little", signed=True)
                outputs[name] = data
            else:
                outputs[name] = list(self.buffers.get(name, []))
        self.result.outputs = outputs
        self.result.steps = self.steps
        self.result.leaked_heap_bytes = self.heap.live_bytes
        return self.result


def _compare(pred: str, a: int, b: int) -> bool:
    if pred == "eq":
        return a == b
    if pred == "ne":
        return a != b
    if pred == "slt":
        return a < b
    if pred == "sle":
        return a <= b
    if pred == "sgt":
        return a > b
    if pred == "sge":
        return a >= b
    raise ValueError(pred)  # pragma: no cover


def launch(
    module: Module,
    config: LaunchConfig,
    buffers: dict[str, list[int]] | None = None,
    scalars: dict[str, int] | None = None,
    **kw,
) -> SimResult:
    """Run every team of ``module`` to completion and copy mapped buffers out."""
    return Simulator(module, config, buffers, scalars, **kw).run()


def trace(module: Module, config: LaunchConfig, buffers=None, scalars=None, **kw) -> SimResult:
    """Like ``launch`` but records barrier, runtime-call and shared-access events."""
    kw["trace"] = True
    return Simulator(module, config, buffers, scalars, **kw).run()


__all__ = [
    "LaunchConfig", "SimResult", "SimTrap", "Simulator", "TraceEvent", "decode", "encode", "launch", "trace",
]
