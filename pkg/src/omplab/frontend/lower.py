"""Lowering of a resolved syntax tree to pre-codegen device IR.

The target region becomes one kernel function. Each parallel construct is
left inline, bracketed by ``__omp_parallel_begin``/``__omp_parallel_end``
marker calls that codegen later replaces by an outlined function and the
master/worker protocol. Every local lives in memory (one alloca per
variable), so no phi construction is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..ir import (
    I1,
    I32,
    VOID,
    ArrayType,
    Block as IRBlock,
    Function,
    Instruction,
    MapInfo,
    Module,
    Opcode,
    Operand,
    Param as IRParam,
    PtrType,
    TargetInfo,
    const,
    ref,
    void_call,
)
from .ast import (
    Assign,
    BinOp,
    Block,
    Call,
    Cond,
    Decl,
    For,
    If,
    Index,
    Neg,
    Num,
    Parallel,
    Program,
    SharingAttribute,
    Symbol,
    Var,
    walk,
)

SHARING_CANDIDATE = "sharing-candidate"
PARALLEL_BEGIN = "__omp_parallel_begin"
PARALLEL_END = "__omp_parallel_end"

TargetDescriptor = TargetInfo

_BINOP = {"+": "add", "-": "sub", "*": "mul", "/": "sdiv", "%": "srem"}
_CMP = {"<": "slt", "<=": "sle", ">": "sgt", ">=": "sge", "==": "eq", "!=": "ne"}
_I32_PTR = PtrType(I32)


def kernel_name(program: Program) -> str:
    return f"__omp_offloading_{program.name}"


@dataclass
class _Slot:
    name: str  # alloca result
    symbol: Symbol

    @property
    def type(self):
        s = self.symbol
        if s.kind == "array":
            return ArrayType(s.size, I32)
        if s.kind == "pointer":
            return _I32_PTR
        return I32


class _Lowerer:
    def __init__(self, program: Program):
        self.program = program
        self.module = Module()
        self.slots: dict[int, _Slot] = {}
        self.names: set[str] = set()
        self.temp = 0
        self.label_id = 0
        self.blocks: list[IRBlock] = []
        self.current: IRBlock | None = None
        self.shared_uids = {
            s.uid for n in walk(program.target) if isinstance(n, Parallel) for s in n.captured
        }

    # -- helpers --

    def fresh(self) -> str:
        name = str(self.temp)
        self.temp += 1
        return name

    def label(self, stem: str) -> str:
        label = f"{stem}.{self.label_id}"
        self.label_id += 1
        return label

    def unique(self, stem: str) -> str:
        name = stem
        n = 1
        while name in self.names:
            name = f"{stem}.{n}"
            n += 1
        self.names.add(name)
        return name

    def emit(self, inst: Instruction) -> Instruction:
        self.current.instructions.append(inst)
        return inst

    def start(self, label: str) -> None:
        self.current = IRBlock(label)
        self.blocks.append(self.current)

    def branch(self, label: str) -> None:
        self.emit(Instruction(Opcode.BRANCH, targets=(label,)))

    def call_builtin(self, name: str) -> Operand:
        self.module.declare(name, I32)
        r = self.fresh()
        self.emit(Instruction(Opcode.CALL, [], r, I32, callee=name))
        return ref(I32, r)

    def alloca(self, sym: Symbol, name: str) -> None:
        slot = _Slot(self.unique(name), sym)
        self.slots[sym.uid] = slot
        t = slot.type
        meta = (SHARING_CANDIDATE,) if sym.uid in self.shared_uids else ()
        align = 8 if isinstance(t, PtrType) else 4
        self.emit(Instruction(Opcode.ALLOCA, [], slot.name, t, align=align, meta=meta))

    # -- program --

    def run(self) -> tuple[Module, TargetInfo]:
        p = self.program
        t = p.target
        used = {s.uid for s in p.symbols if s.name in t.sharing or f"{s.name}#{s.uid}" in t.sharing}
        mapped = {m.name for m in t.maps}
        params = [
            prm.symbol for prm in p.params
            if prm.symbol.uid in used or (prm.is_pointer and prm.name in mapped)
        ]
        self.names.update(s.name for s in params)
        self.start("entry")
        for s in params:
            self.alloca(s, f"{s.name}.addr")
            t_ = self.slots[s.uid].type
            self.emit(Instruction(Opcode.STORE, [ref(t_, s.name), ref(PtrType(t_), self.slots[s.uid].name)]))
        # hoist every sequential local into the entry block
        seq = [p.host, [t.body] + ([t.teams.body] if t.teams else [])]
        for group in seq:
            for stmt in group:
                for sym in _locals(stmt):
                    self.alloca(sym, sym.name)
        for s in p.host:
            self.stmt(s)
        self.stmt(t.body)
        if t.teams is not None:
            self.stmt(t.teams.body)
        self.emit(Instruction(Opcode.RET))
        kname = kernel_name(p)
        fn = Function(kname, VOID, [IRParam(s.name, self.slots[s.uid].type) for s in params], self.blocks, kernel=True)
        self.module.functions.append(fn)
        info = TargetInfo(
            kname,
            t.teams.num_teams if t.teams else None,
            t.teams.thread_limit if t.teams else None,
            tuple(MapInfo(m.name, m.direction, m.lower, m.length) for m in t.maps),
        )
        self.module.targets.append(info)
        return self.module, info

    # -- statements --

    def stmt(self, s) -> None:
        if isinstance(s, Decl):
            if s.init is not None:
                v = self.expr(s.init)
                self.store(v, s.symbol)
        elif isinstance(s, Assign):
            self.assign(s)
        elif isinstance(s, Block):
            for x in s.stmts:
                self.stmt(x)
        elif isinstance(s, For):
            self.loop(s)
        elif isinstance(s, If):
            self.branch_if(s)
        elif isinstance(s, Parallel):
            self.parallel(s)
        else:  # pragma: no cover
            raise TypeError(type(s))

    def store(self, v: Operand, sym: Symbol) -> None:
        slot = self.slots[sym.uid]
        self.emit(Instruction(Opcode.STORE, [v, ref(PtrType(slot.type), slot.name)]))

    def address(self, lv) -> Operand:
        slot = self.slots[lv.symbol.uid]
        if isinstance(lv, Var):
            return ref(_I32_PTR, slot.name)
        idx = self.expr(lv.index)
        if slot.symbol.kind == "array":
            base = ref(PtrType(slot.type), slot.name)
        else:
            r = self.fresh()
            self.emit(Instruction(Opcode.LOAD, [ref(PtrType(_I32_PTR), slot.name)], r, _I32_PTR))
            base = ref(_I32_PTR, r)
        r = self.fresh()
        self.emit(Instruction(Opcode.GETELEMENT, [base, idx], r, _I32_PTR))
        return ref(_I32_PTR, r)

    def load(self, addr: Operand) -> Operand:
        r = self.fresh()
        self.emit(Instruction(Opcode.LOAD, [addr], r, I32))
        return ref(I32, r)

    def binop(self, op: str, a: Operand, b: Operand) -> Operand:
        r = self.fresh()
        self.emit(Instruction(Opcode.BINOP, [a, b], r, I32, op=op))
        return ref(I32, r)

    def assign(self, s: Assign) -> None:
        addr = self.address(s.target)
        if s.op == "=":
            v = self.expr(s.value)
        elif s.op in ("++", "--"):
            v = self.binop("add" if s.op == "++" else "sub", self.load(addr), const(I32, 1))
        else:
            # evaluate the right-hand side before reading the target
            rhs = self.expr(s.value)
            v = self.binop(_BINOP[s.op[0]], self.load(addr), rhs)
        self.emit(Instruction(Opcode.STORE, [v, addr]))

    def compare(self, op: str, a: Operand, b: Operand) -> Operand:
        r = self.fresh()
        self.emit(Instruction(Opcode.CMP, [a, b], r, I32, op=_CMP[op]))
        return ref(I1, r)

    def cond(self, c: Cond) -> Operand:
        left = self.expr(c.left)
        if c.op is None:
            return self.compare("!=", left, const(I32, 0))
        return self.compare(c.op, left, self.expr(c.right))

    def loop(self, s: For, stride: Operand | None = None, start: Operand | None = None) -> None:
        init = start if start is not None else self.expr(s.init)
        self.store(init, s.symbol)
        cond, body, inc, end = (self.label(x) for x in ("for.cond", "for.body", "for.inc", "for.end"))
        self.branch(cond)
        self.start(cond)
        var = ref(_I32_PTR, self.slots[s.symbol.uid].name)
        c = self.compare(s.cmp, self.load(var), self.expr(s.bound))
        self.emit(Instruction(Opcode.CONDBRANCH, [c], targets=(body, end)))
        self.start(body)
        self.stmt(s.body)
        self.branch(inc)
        self.start(inc)
        step = stride if stride is not None else const(I32, s.step)
        self.emit(Instruction(Opcode.STORE, [self.binop("add", self.load(var), step), var]))
        self.branch(cond)
        self.start(end)

    def branch_if(self, s: If) -> None:
        c = self.cond(s.cond)
        then = self.label("if.then")
        end = self.label("if.end")
        other = self.label("if.else") if s.orelse is not None else end
        self.emit(Instruction(Opcode.CONDBRANCH, [c], targets=(then, other)))
        self.start(then)
        self.stmt(s.then)
        self.branch(end)
        if s.orelse is not None:
            self.start(other)
            self.stmt(s.orelse)
            self.branch(end)
        self.start(end)

    def parallel(self, s: Parallel) -> None:
        k = s.region
        self.module.declare(PARALLEL_BEGIN, VOID, I32)
        self.module.declare(PARALLEL_END, VOID, I32)
        entry = f"par.{k}.entry"
        self.branch(entry)
        self.start(entry)
        self.emit(void_call(PARALLEL_BEGIN, const(I32, k)))
        for sym in _locals(s.body):
            self.alloca(sym, sym.name)
        if s.is_for:
            # cyclic schedule: iteration init + step*(tid + k*nthreads)
            loop = s.body
            tid = self.call_builtin("omp_get_thread_num")
            nth = self.call_builtin("omp_get_num_threads")
            first = self.binop("add", self.expr(loop.init), self.binop("mul", tid, const(I32, loop.step)))
            stride = self.binop("mul", nth, const(I32, loop.step))
            self.loop(loop, stride=stride, start=first)
        else:
            self.stmt(s.body)
        exit_ = f"par.{k}.exit"
        self.branch(exit_)
        self.start(exit_)
        self.emit(void_call(PARALLEL_END, const(I32, k)))
        cont = f"par.{k}.cont"
        self.branch(cont)
        self.start(cont)

    # -- expressions --

    def expr(self, e) -> Operand:
        if isinstance(e, Num):
            return const(I32, e.value)
        if isinstance(e, (Var, Index)):
            return self.load(self.address(e))
        if isinstance(e, BinOp):
            a = self.expr(e.left)
            b = self.expr(e.right)
            return self.binop(_BINOP[e.op], a, b)
        if isinstance(e, Neg):
            return self.binop("sub", const(I32, 0), self.expr(e.operand))
        if isinstance(e, Call):
            return self.call_builtin(e.name)
        raise TypeError(type(e))  # pragma: no cover


def _locals(stmt) -> list[Symbol]:
    """Symbols declared by ``stmt``, not descending into parallel constructs."""
    out: list[Symbol] = []

    def visit(node) -> None:
        if isinstance(node, Parallel):
            return
        if isinstance(node, Decl) or (isinstance(node, For) and node.declares):
            out.append(node.symbol)
        if isinstance(node, Block):
            for x in node.stmts:
                visit(x)
        elif isinstance(node, For):
            visit(node.body)
        elif isinstance(node, If):
            visit(node.then)
            if node.orelse is not None:
                visit(node.orelse)

    visit(stmt)
    return out


def lower_to_ir(program: Program) -> tuple[Module, TargetInfo]:
    """Lower a sharing-resolved program; returns the module and its launch descriptor."""
    return _Lowerer(program).run()


def sharing_candidates(program: Program) -> list[str]:
    """Source names of variables captured by a parallel region, in declaration order.

    Parameters are lowered to ``<name>.addr`` allocas; the IR carries the
    ``sharing-candidate`` tag on whichever alloca holds each variable.
    """
    seen: dict[int, Symbol] = {}
    for n in walk(program.target):
        if isinstance(n, Parallel):
            for s in n.captured:
                seen.setdefault(s.uid, s)
    return [seen[u].name for u in sorted(seen)]


__all__ = [
    "PARALLEL_BEGIN", "PARALLEL_END", "SHARING_CANDIDATE", "SharingAttribute", "TargetDescriptor",
    "kernel_name", "lower_to_ir", "sharing_candidates",
]
