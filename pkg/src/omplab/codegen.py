"""Master/worker kernel generation.

``outline_parallel`` moves every parallel region of the kernel into its own
function and leaves a fork marker behind. ``emit_wrapper`` builds the shim
that unpacks the shared-args list, and ``emit_master_worker`` rewrites the
kernel into the state machine run by a team: workers spin in a barrier
delimited loop waiting for work, one master thread runs the sequential
code and hands out outlined regions, and the rest of the master warp
idles until exit.
"""

from __future__ import annotations

from dataclasses import dataclass

from .frontend.lower import PARALLEL_BEGIN, PARALLEL_END, SHARING_CANDIDATE
from .ir import (
    I1,
    I8_PTR,
    I32,
    VOID,
    Block,
    Function,
    Instruction,
    Module,
    Opcode,
    Operand,
    Param,
    PtrType,
    const,
    null,
    ref,
    sym,
    void_call,
)

WARP_SIZE = 32
FORK_MARKER = "__omp_fork_parallel"
KMPC_INIT = "__kmpc_kernel_init"
KMPC_PREPARE = "__kmpc_kernel_prepare_parallel"
KMPC_PARALLEL = "__kmpc_kernel_parallel"
KMPC_END_PARALLEL = "__kmpc_kernel_end_parallel"
KMPC_DEINIT = "__kmpc_kernel_deinit"
READ_TID = "llvm.nvvm.read.ptx.sreg.tid.x"
READ_NTID = "llvm.nvvm.read.ptx.sreg.ntid.x"

# blocks of the generated kernel that are not user code, in emission order
STATE_MACHINE_BLOCKS = (
    "entry", "worker", "await.work", "select.workers", "execute.parallel",
    "terminate.parallel", "barrier.parallel", "mastercheck", "master", "master.deinit", "exit",
)

_I8_PTR_PTR = PtrType(I8_PTR)
_LIST_ADDR = PtrType(_I8_PTR_PTR)


class CodegenError(Exception):
    """Internal consistency failure; indicates a bug upstream of codegen."""


@dataclass(frozen=True)
class KernelLayout:
    """Thread roles inside one team of ``team_size`` threads.

    The last warp is reserved: its first lane is the master and the other
    31 lanes are deactivated. All lower ids are workers.
    """

    team_size: int

    def __post_init__(self):
        if self.team_size <= WARP_SIZE:
            raise ValueError(f"team of {self.team_size} threads leaves no workers")

    @classmethod
    def for_thread_limit(cls, thread_limit: int) -> "KernelLayout":
        return cls(thread_limit + WARP_SIZE)

    @property
    def num_workers(self) -> int:
        return self.team_size - WARP_SIZE

    @property
    def workers_upper_bound(self) -> int:
        return self.num_workers - 1

    @property
    def master(self) -> int:
        return self.team_size - WARP_SIZE

    @property
    def inactive(self) -> range:
        return range(self.master + 1, self.team_size)

    def role(self, tid: int) -> str:
        if tid < self.master:
            return "worker"
        return "master" if tid == self.master else "inactive"


@dataclass(frozen=True)
class OutlinedRegion:
    index: int
    function: str
    wrapper: str
    captures: tuple[Param, ...]


def outlined_name(k: int) -> str:
    return f"__omp_outlined_{k}"


def wrapper_name(k: int) -> str:
    return f"__omp_wrapper_{k}"


def _marker_index(inst: Instruction, callee: str) -> int | None:
    if inst.opcode is Opcode.CALL and inst.callee == callee:
        return inst.operands[0].value.value
    return None


def outline_parallel(module: Module) -> tuple[Module, list[OutlinedRegion]]:
    """Extract each parallel region of the kernel into ``__omp_outlined_k``."""
    kernel = _single_kernel(module)
    regions: list[OutlinedRegion] = []
    defs = kernel.definitions()
    allocas = {i.result: i for i in kernel.allocas()}
    order = [i.result for i in kernel.allocas()]
    blocks = list(kernel.blocks)
    new_functions: list[Function] = []
    while True:
        start = next(
            (n for n, b in enumerate(blocks) if b.instructions and _marker_index(b.instructions[0], PARALLEL_BEGIN) is not None),
            None,
        )
        if start is None:
            break
        k = _marker_index(blocks[start].instructions[0], PARALLEL_BEGIN)
        end = next(
            n for n in range(start, len(blocks))
            if blocks[n].instructions and _marker_index(blocks[n].instructions[0], PARALLEL_END) == k
        )
        body = blocks[start:end + 1]
        inside = {i.result for b in body for i in b.instructions if i.result is not None}
        used: set[str] = set()
        for b in body:
            for inst in b.instructions:
                used.update(u for u in inst.uses() if u not in inside)
        for name in sorted(used):
            if name not in allocas:
                raise CodegenError(f"parallel region {k} uses non-memory value %{name} from outside")
            if not allocas[name].has_meta(SHARING_CANDIDATE):
                raise CodegenError(f"parallel region {k} captures private variable %{name}")
        captures = tuple(Param(n, defs[n]) for n in order if n in used)
        cont = body[-1].terminator.targets[0]
        out_blocks = []
        for b in body:
            insts = [i.copy() for i in b.instructions]
            if b is body[0]:
                insts = insts[1:]
            if b is body[-1]:
                insts = [i for i in insts[1:-1]] + [Instruction(Opcode.RET)]
            out_blocks.append(Block(b.label, insts))
        params = [Param(".global_tid", PtrType(I32)), Param(".bound_tid", PtrType(I32))] + list(captures)
        new_functions.append(Function(outlined_name(k), VOID, params, out_blocks))
        module.declare(FORK_MARKER, VOID, I32)
        marker = Block(
            body[0].label,
            [void_call(FORK_MARKER, const(I32, k)), Instruction(Opcode.BRANCH, targets=(cont,))],
        )
        blocks[start:end + 1] = [marker]
        regions.append(OutlinedRegion(k, outlined_name(k), wrapper_name(k), captures))
    kernel.blocks = blocks
    module.functions.extend(new_functions)
    module.declarations = [d for d in module.declarations if d.name not in (PARALLEL_BEGIN, PARALLEL_END)]
    return module, regions


def emit_wrapper(region: OutlinedRegion) -> Function:
    """Wrapper ``(level, tid, shared_args)`` that calls the outlined function."""
    params = [Param("level", I32), Param("tid", I32), Param("shared_args", _I8_PTR_PTR)]
    args = [null(PtrType(I32)), null(PtrType(I32))]
    if not region.captures:
        body = [void_call(region.function, *args), Instruction(Opcode.RET)]
        return Function(region.wrapper, VOID, params, [Block("entry", body)])
    entry = Block(
        "entry",
        [
            Instruction(Opcode.ALLOCA, [], "shared_args.addr", _I8_PTR_PTR, align=8),
            Instruction(Opcode.STORE, [ref(_I8_PTR_PTR, "shared_args"), ref(_LIST_ADDR, "shared_args.addr")]),
            Instruction(Opcode.BRANCH, targets=("next",)),
        ],
    )
    nxt = Block("next")
    temp = iter(range(1 << 30))
    for i, cap in enumerate(region.captures):
        lst, slot, raw, cast = (str(next(temp)) for _ in range(4))
        nxt.instructions += [
            Instruction(Opcode.LOAD, [ref(_LIST_ADDR, "shared_args.addr")], lst, _I8_PTR_PTR),
            Instruction(Opcode.GETELEMENT, [ref(_I8_PTR_PTR, lst), const(I32, i)], slot, _I8_PTR_PTR),
            Instruction(Opcode.LOAD, [ref(_I8_PTR_PTR, slot)], raw, I8_PTR),
            Instruction(Opcode.BITCAST, [ref(I8_PTR, raw)], cast, cap.type),
        ]
        args.append(ref(cap.type, cast))
    nxt.instructions += [void_call(region.function, *args), Instruction(Opcode.RET)]
    return Function(region.wrapper, VOID, params, [entry, nxt])


def _declare_runtime(module: Module) -> None:
    module.declare(READ_TID, I32)
    module.declare(READ_NTID, I32)
    module.declare(KMPC_INIT, VOID, I32)
    module.declare(KMPC_PREPARE, _I8_PTR_PTR, I8_PTR, I32)
    module.declare(KMPC_PARALLEL, I1, _I8_PTR_PTR, _LIST_ADDR)
    module.declare(KMPC_END_PARALLEL, VOID)
    module.declare(KMPC_DEINIT, VOID)


def emit_master_worker(module: Module, layout: KernelLayout | None = None) -> Module:
    """Rewrite the outlined kernel into the master/worker state machine.

    ``layout`` only documents the geometry; the emitted code derives thread
    roles from the launched block size so one kernel serves every team size.
    """
    kernel = _single_kernel(module)
    module.declarations = [d for d in module.declarations if d.name != FORK_MARKER]
    _declare_runtime(module)
    regions = sorted(
        (f for f in module.functions if f.name.startswith("__omp_wrapper_")),
        key=lambda f: int(f.name.rsplit("_", 1)[1]),
    )
    outlined = {f.name: f for f in module.functions}

    def br(label: str) -> Instruction:
        return Instruction(Opcode.BRANCH, targets=(label,))

    def condbr(c: str, t: str, f: str) -> Instruction:
        return Instruction(Opcode.CONDBRANCH, [ref(I1, c)], targets=(t, f))

    allocas = [i for i in kernel.blocks[0].instructions if i.opcode is Opcode.ALLOCA]
    seq_blocks = [Block(b.label, list(b.instructions)) for b in kernel.blocks]
    seq_blocks[0].label = "seq.entry"
    seq_blocks[0].instructions = [i for i in seq_blocks[0].instructions if i.opcode is not Opcode.ALLOCA]
    for b in seq_blocks:
        for n, inst in enumerate(b.instructions):
            if inst.opcode is Opcode.BRANCH and inst.targets == ("entry",):  # pragma: no cover
                b.instructions[n] = br("seq.entry")
            if inst.opcode is Opcode.RET:
                b.instructions[n] = br("master.deinit")
        expanded: list[Instruction] = []
        for inst in b.instructions:
            k = _marker_index(inst, FORK_MARKER)
            if k is None:
                expanded.append(inst)
                continue
            out = outlined[outlined_name(k)]
            caps = out.params[2:]
            lst = f"shared_args.{k}"
            expanded.append(
                Instruction(
                    Opcode.CALL, [sym(I8_PTR, wrapper_name(k)), const(I32, len(caps))], lst, _I8_PTR_PTR,
                    callee=KMPC_PREPARE,
                )
            )
            for i, cap in enumerate(caps):
                slot, raw = f"shared_args.{k}.{i}", f"{cap.name}.{k}.cast"
                expanded += [
                    Instruction(Opcode.GETELEMENT, [ref(_I8_PTR_PTR, lst), const(I32, i)], slot, _I8_PTR_PTR),
                    Instruction(Opcode.BITCAST, [ref(cap.type, cap.name)], raw, I8_PTR),
                    Instruction(Opcode.STORE, [ref(I8_PTR, raw), ref(_I8_PTR_PTR, slot)]),
                ]
            # release the workers, then wait for them to finish the region
            expanded += [Instruction(Opcode.BARRIER), Instruction(Opcode.BARRIER)]
        b.instructions = expanded

    entry = Block("entry", allocas + [
        Instruction(Opcode.ALLOCA, [], "work_fn.addr", I8_PTR, align=8),
        Instruction(Opcode.ALLOCA, [], "args.addr", _I8_PTR_PTR, align=8),
        Instruction(Opcode.CALL, [], "tid", I32, callee=READ_TID),
        Instruction(Opcode.CALL, [], "ntid", I32, callee=READ_NTID),
        Instruction(Opcode.BINOP, [ref(I32, "ntid"), const(I32, WARP_SIZE)], "master_tid", I32, op="sub"),
        Instruction(Opcode.CMP, [ref(I32, "tid"), ref(I32, "master_tid")], "is_worker", I32, op="slt"),
        condbr("is_worker", "worker", "mastercheck"),
    ])
    worker = Block("worker", [br("await.work")])
    await_work = Block("await.work", [
        Instruction(Opcode.BARRIER),
        Instruction(
            Opcode.CALL,
            [ref(_I8_PTR_PTR, "work_fn.addr"), ref(_LIST_ADDR, "args.addr")],
            "is_active", I1, callee=KMPC_PARALLEL,
        ),
        Instruction(Opcode.LOAD, [ref(_I8_PTR_PTR, "work_fn.addr")], "work_fn", I8_PTR),
        Instruction(Opcode.CMP, [ref(I8_PTR, "work_fn"), null(I8_PTR)], "should_terminate", I8_PTR, op="eq"),
        condbr("should_terminate", "exit", "select.workers"),
    ])
    select = Block("select.workers", [condbr("is_active", "execute.parallel", "barrier.parallel")])
    dispatch: list[Block] = []
    execute = Block("execute.parallel", [
        Instruction(Opcode.LOAD, [ref(_LIST_ADDR, "args.addr")], "args", _I8_PTR_PTR),
    ])
    current = execute
    for w in regions:
        k = w.name.rsplit("_", 1)[1]
        hit, miss = f"execute.fn.{k}", f"check.next.{k}"
        current.instructions += [
            Instruction(Opcode.CMP, [ref(I8_PTR, "work_fn"), sym(I8_PTR, w.name)], f"is_fn.{k}", I8_PTR, op="eq"),
            condbr(f"is_fn.{k}", hit, miss),
        ]
        dispatch.append(Block(hit, [
            void_call(w.name, const(I32, 0), ref(I32, "tid"), ref(_I8_PTR_PTR, "args")),
            br("terminate.parallel"),
        ]))
        current = Block(miss)
        dispatch.append(current)
    current.instructions.append(br("terminate.parallel"))
    terminate = Block("terminate.parallel", [void_call(KMPC_END_PARALLEL), br("barrier.parallel")])
    barrier = Block("barrier.parallel", [Instruction(Opcode.BARRIER), br("await.work")])
    mastercheck = Block("mastercheck", [
        Instruction(Opcode.CMP, [ref(I32, "tid"), ref(I32, "master_tid")], "is_master", I32, op="eq"),
        condbr("is_master", "master", "exit"),
    ])
    master = Block("master", [void_call(KMPC_INIT, ref(I32, "ntid")), br("seq.entry")])
    deinit = Block("master.deinit", [void_call(KMPC_DEINIT), Instruction(Opcode.BARRIER), br("exit")])
    exit_ = Block("exit", [Instruction(Opcode.RET)])
    kernel.blocks = (
        [entry, worker, await_work, select, execute] + dispatch
        + [terminate, barrier, mastercheck, master] + seq_blocks + [deinit, exit_]
    )
    return module


def generate_kernel(module: Module) -> tuple[Module, list[OutlinedRegion]]:
    """Outline, wrap and rewrite the kernel of a freshly lowered module."""
    module, regions = outline_parallel(module)
    for r in regions:
        module.functions.append(emit_wrapper(r))
    emit_master_worker(module)
    return module, regions


def shared_arg_stores(kernel: Function) -> dict[int, list[str]]:
    """Values the master stores into each region's shared-args list, in slot order."""
    out: dict[int, list[str]] = {}
    casts = {i.result: i.operands[0].ref for i in kernel.instructions() if i.opcode is Opcode.BITCAST}
    for inst in kernel.instructions():
        if inst.opcode is Opcode.STORE:
            dst = inst.operands[1].ref or ""
            if dst.startswith("shared_args."):
                _, k, _slot = dst.split(".")
                out.setdefault(int(k), []).append(casts.get(inst.operands[0].ref, inst.operands[0].ref))
    return out


def _single_kernel(module: Module) -> Function:
    kernels = module.kernels()
    if len(kernels) != 1:
        raise CodegenError(f"expected one kernel, found {len(kernels)}")
    return kernels[0]
