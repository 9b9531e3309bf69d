"""Structural and typing checks for IR modules.

The validator is purely static. Whether a local-memory pointer is ever
dereferenced by a thread other than its owner is a dynamic property and
is checked by the simulator's address decoder instead.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import (
    CAST_OPCODES,
    Const,
    FrameIndex,
    Function,
    Instruction,
    MachineFunction,
    Module,
    Null,
    Opcode,
    Ref,
    Sym,
)
from .types import I1, AddressSpace, IntType, PtrType, Type, VoidType, element_of


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    function: str
    block: str
    index: int
    message: str

    def __str__(self) -> str:
        return f"@{self.function}:{self.block}#{self.index}: [{self.rule}] {self.message}"


def dominators(func: Function) -> dict[str, set[str]]:
    """Dominator sets of the blocks reachable from the entry block."""
    if not func.blocks:
        return {}
    entry = func.blocks[0].label
    succs = {b.label: [s for s in b.successors()] for b in func.blocks}
    reachable = [entry]
    seen = {entry}
    for label in reachable:
        for s in succs.get(label, ()):
            if s in succs and s not in seen:
                seen.add(s)
                reachable.append(s)
    preds = {label: [] for label in reachable}
    for label in reachable:
        for s in succs[label]:
            if s in preds:
                preds[s].append(label)
    dom = {label: set(reachable) for label in reachable}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for label in reachable[1:]:
            new = set.intersection(*(dom[p] for p in preds[label])) if preds[label] else set()
            new = new | {label}
            if new != dom[label]:
                dom[label] = new
                changed = True
    return dom


class _Checker:
    def __init__(self, module: Module):
        self.module = module
        self.diags: list[Diagnostic] = []
        self.globals = {g.name: g for g in module.globals}

    def report(self, rule: str, func: Function, block: str, index: int, message: str) -> None:
        self.diags.append(Diagnostic(rule, func.name, block, index, message))

    # -- module-level rules --

    def module_rules(self) -> None:
        m = self.module
        names = [f.name for f in m.functions] + [d.name for d in m.declarations]
        for n in sorted({n for n in names if names.count(n) > 1}):
            self.diags.append(Diagnostic("duplicate-symbol", n, "", -1, f"@{n} defined twice"))
        if m.targets:
            for t in m.targets:
                if not m.has_function(t.kernel) or not m.function(t.kernel).kernel:
                    self.diags.append(
                        Diagnostic("kernel-count", t.kernel, "", -1, "target kernel missing")
                    )
            if len(m.kernels()) != len(m.targets):
                self.diags.append(
                    Diagnostic(
                        "kernel-count", "", "", -1,
                        f"{len(m.kernels())} kernel entries for {len(m.targets)} targets",
                    )
                )
        self._check_recursion()

    def _check_recursion(self) -> None:
        defined = {f.name: f for f in self.module.functions}
        graph = {
            f.name: sorted(
                {i.callee for i in f.instructions() if i.opcode is Opcode.CALL and i.callee in defined}
            )
            for f in self.module.functions
        }
        state: dict[str, int] = {}

        def visit(n: str) -> bool:
            state[n] = 1
            for m in graph[n]:
                if state.get(m) == 1 or (m not in state and visit(m)):
                    return True
            state[n] = 2
            return False

        for name in graph:
            if name not in state and visit(name):
                self.diags.append(Diagnostic("recursion", name, "", -1, "call graph has a cycle"))
                return

    # -- function-level rules --

    def function_rules(self, func: Function) -> None:
        defs: dict[str, tuple[str, int]] = {p.name: ("", -1) for p in func.params}
        types: dict[str, Type] = {p.name: p.type for p in func.params}
        labels = {b.label for b in func.blocks}
        if not func.blocks:
            self.report("empty-function", func, "", -1, "function has no blocks")
            return
        for b in func.blocks:
            if not b.instructions:
                self.report("terminator", func, b.label, -1, "empty block")
                continue
            for i, inst in enumerate(b.instructions):
                last = i == len(b.instructions) - 1
                if inst.is_terminator != last:
                    msg = "block must end with a terminator" if last else "terminator before block end"
                    self.report("terminator", func, b.label, i, msg)
                for t in inst.targets:
                    if t not in labels:
                        self.report("unknown-label", func, b.label, i, f"no block %{t}")
                if inst.result is not None:
                    if inst.result in defs:
                        self.report("duplicate-definition", func, b.label, i, f"%{inst.result}")
                    defs[inst.result] = (b.label, i)
                    types[inst.result] = inst.result_type
        dom = dominators(func)
        for b in func.blocks:
            for i, inst in enumerate(b.instructions):
                for name in inst.uses():
                    if name not in defs:
                        self.report("undefined-value", func, b.label, i, f"%{name} is not defined")
                        continue
                    dblock, dindex = defs[name]
                    if dblock == "" or b.label not in dom:
                        continue
                    ok = dindex < i if dblock == b.label else dblock in dom[b.label]
                    if not ok:
                        self.report("def-before-use", func, b.label, i, f"%{name} does not dominate use")
                self.instruction_rules(func, b.label, i, inst, types)

    def _operand_types(self, func, block, index, inst, types) -> bool:
        ok = True
        for o in inst.operands:
            v = o.value
            if isinstance(v, Ref):
                if v.name in types and types[v.name] != o.type:
                    self.report(
                        "type-mismatch", func, block, index,
                        f"%{v.name} has type {types[v.name]}, used as {o.type}",
                    )
                    ok = False
            elif isinstance(v, Const) and not isinstance(o.type, IntType):
                self.report("type-mismatch", func, block, index, f"integer constant typed {o.type}")
                ok = False
            elif isinstance(v, Null) and not isinstance(o.type, PtrType):
                self.report("type-mismatch", func, block, index, f"null typed {o.type}")
                ok = False
            elif isinstance(v, Sym):
                if v.name in self.globals:
                    g = self.globals[v.name]
                    if o.type != PtrType(g.type, AddressSpace(g.addrspace)):
                        self.report("type-mismatch", func, block, index, f"@{v.name} typed {o.type}")
                        ok = False
                elif self.module.signature(v.name) is None:
                    self.report("unknown-symbol", func, block, index, f"@{v.name}")
                    ok = False
                elif not isinstance(o.type, PtrType):
                    self.report("type-mismatch", func, block, index, f"@{v.name} typed {o.type}")
                    ok = False
            elif isinstance(v, FrameIndex):
                if not isinstance(func, MachineFunction):
                    self.report("frame-index", func, block, index, "frame index outside machine code")
                    ok = False
                elif v.index not in {fo.index for fo in func.frame}:
                    self.report("frame-index", func, block, index, f"no frame object fi#{v.index}")
                    ok = False
                elif func.layout is not None:
                    try:
                        func.layout.slot_of(v.index)
                    except KeyError:
                        self.report("frame-index", func, block, index, f"fi#{v.index} has no depot slot")
                        ok = False
        return ok

    def instruction_rules(self, func, block, index, inst: Instruction, types) -> None:
        self._operand_types(func, block, index, inst, types)
        k = inst.opcode
        ops = inst.operands
        r = lambda rule, msg: self.report(rule, func, block, index, msg)  # noqa: E731
        if k is Opcode.ALLOCA:
            if inst.align not in (4, 8):
                r("bad-alloca", f"alignment {inst.align} not in {{4, 8}}")
            if inst.count < 1:
                r("bad-alloca", f"element count {inst.count}")
        elif k is Opcode.LOAD:
            p = ops[0].type
            if not isinstance(p, PtrType):
                r("not-pointer", f"load through {p}")
            elif p.pointee != inst.type:
                r("type-mismatch", f"load {inst.type} through {p}")
        elif k is Opcode.STORE:
            v, p = ops[0].type, ops[1].type
            if not isinstance(p, PtrType):
                r("not-pointer", f"store through {p}")
            elif p.pointee != v:
                r("type-mismatch", f"store {v} through {p}")
        elif k in CAST_OPCODES:
            src, dst = ops[0].type, inst.type
            if not (isinstance(src, PtrType) and isinstance(dst, PtrType)):
                r("bad-cast", f"{k.value} {src} to {dst}")
            elif k is Opcode.BITCAST and src.addrspace != dst.addrspace:
                r("bad-cast", "bitcast may not change address space")
            elif k is Opcode.ADDRSPACECAST:
                if src.pointee != dst.pointee or src.addrspace == dst.addrspace:
                    r("bad-cast", f"addrspacecast {src} to {dst}")
                elif AddressSpace.GENERIC not in (src.addrspace, dst.addrspace):
                    r("bad-cast", "addrspacecast must go through the generic space")
        elif k is Opcode.GETELEMENT:
            base, idx, res = ops[0].type, ops[1].type, inst.type
            if not isinstance(base, PtrType):
                r("not-pointer", f"getelement on {base}")
            elif not isinstance(idx, IntType):
                r("type-mismatch", f"index of type {idx}")
            elif not isinstance(res, PtrType) or res.pointee != element_of(base) or res.addrspace != base.addrspace:
                r("type-mismatch", f"getelement yields {res} from {base}")
        elif k in (Opcode.BINOP, Opcode.CMP):
            t = inst.type
            if any(o.type != t for o in ops):
                r("type-mismatch", f"operands of {inst.op} differ from {t}")
            if k is Opcode.BINOP and not isinstance(t, IntType):
                r("type-mismatch", f"{inst.op} on {t}")
        elif k is Opcode.CONDBRANCH:
            if ops[0].type != I1:
                r("type-mismatch", f"branch condition of type {ops[0].type}")
        elif k is Opcode.CALL:
            sig = self.module.signature(inst.callee)
            if sig is None:
                r("unknown-callee", f"@{inst.callee}")
                return
            ret, params = sig
            if ret != inst.type:
                r("type-mismatch", f"@{inst.callee} returns {ret}, call expects {inst.type}")
            if len(params) != len(ops):
                r("type-mismatch", f"@{inst.callee} takes {len(params)} arguments, got {len(ops)}")
            else:
                for n, (pt, o) in enumerate(zip(params, ops)):
                    if pt != o.type:
                        r("type-mismatch", f"argument {n} of @{inst.callee}: {o.type} vs {pt}")
            if inst.result is not None and isinstance(ret, VoidType):
                r("type-mismatch", "void call produces a value")
        elif k is Opcode.RET:
            got = ops[0].type if ops else None
            want = None if isinstance(func.ret, VoidType) else func.ret
            if got != want:
                r("type-mismatch", f"ret {got} in function returning {func.ret}")


def validate(module: Module) -> list[Diagnostic]:
    checker = _Checker(module)
    checker.module_rules()
    for f in module.functions:
        checker.function_rules(f)
    return checker.diags
