"""Canonical text form (``.sir``) of the device IR.

``print_ir`` is the canonical printer; ``parse_ir`` accepts exactly the
canonical grammar (plus blank lines and ``;`` comments) so printing a
parsed canonical file reproduces it byte for byte. See ``docs/ir.md``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .core import (
    BINOPS,
    PREDICATES,
    BaseReg,
    Block,
    Const,
    Declaration,
    DepotLayout,
    DepotSlot,
    FrameIndex,
    FrameObject,
    Function,
    GlobalVar,
    Instruction,
    MachineFunction,
    MapInfo,
    Module,
    Null,
    Opcode,
    Operand,
    Param,
    Ref,
    Sym,
    TargetInfo,
)
from .types import VOID, AddressSpace, ArrayType, IntType, PtrType, Type


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# -- printing ---------------------------------------------------------------


def _op(o: Operand) -> str:
    return f"{o.type} {o.value}"


def print_instruction(inst: Instruction) -> str:
    k = inst.opcode
    ops = inst.operands
    lhs = f"%{inst.result} = " if inst.result is not None else ""
    if k is Opcode.ALLOCA:
        count = f", {inst.count}" if inst.count != 1 else ""
        text = f"{lhs}alloca {inst.type}{count}, align {inst.align}"
    elif k is Opcode.LOAD:
        text = f"{lhs}load {inst.type}, {_op(ops[0])}"
    elif k is Opcode.STORE:
        text = f"store {_op(ops[0])}, {_op(ops[1])}"
    elif k in (Opcode.BITCAST, Opcode.ADDRSPACECAST):
        text = f"{lhs}{k.value} {_op(ops[0])} to {inst.type}"
    elif k is Opcode.GETELEMENT:
        text = f"{lhs}getelement {inst.type}, {_op(ops[0])}, {_op(ops[1])}"
    elif k is Opcode.BINOP:
        text = f"{lhs}{inst.op} {inst.type} {ops[0].value}, {ops[1].value}"
    elif k is Opcode.CMP:
        text = f"{lhs}icmp {inst.op} {inst.type} {ops[0].value}, {ops[1].value}"
    elif k is Opcode.BRANCH:
        text = f"br label %{inst.targets[0]}"
    elif k is Opcode.CONDBRANCH:
        t, f = inst.targets
        text = f"br {_op(ops[0])}, label %{t}, label %{f}"
    elif k is Opcode.CALL:
        args = ", ".join(_op(o) for o in ops)
        text = f"{lhs}call {inst.type} @{inst.callee}({args})"
    elif k is Opcode.RET:
        text = f"ret {_op(ops[0])}" if ops else "ret void"
    elif k is Opcode.BARRIER:
        text = "barrier"
    else:  # pragma: no cover
        raise ValueError(k)
    for tag in inst.meta:
        text += f" !{tag}"
    return text


def _print_target(t: TargetInfo) -> str:
    parts = [f"target @{t.kernel}"]
    if t.num_teams is not None:
        parts.append(f"num_teams {t.num_teams}")
    if t.thread_limit is not None:
        parts.append(f"thread_limit {t.thread_limit}")
    for m in t.maps:
        parts.append(f"map {m.direction} %{m.name} {m.lower} {m.length}")
    return " ".join(parts)


def _print_function(f: Function) -> list[str]:
    params = ", ".join(f"{p.type} %{p.name}" for p in f.params)
    head = "define machine " if f.is_machine else "define "
    head += f"{f.ret} @{f.name}({params})"
    if f.kernel:
        head += " kernel"
    lines = [head + " {"]
    if isinstance(f, MachineFunction):
        for fo in f.frame:
            lines.append(f"  frame fi#{fo.index} %{fo.origin} size {fo.size} align {fo.align}")
        if f.layout is not None:
            lay = f.layout
            lines.append(f"  depot local {lay.total_local_bytes} shared {lay.total_shared_bytes}")
            for s in lay.slots:
                fis = ",".join(f"fi#{i}" for i in s.frame_indices)
                res = "shared" if s.shared else "local"
                lines.append(f"  slot {fis} offset {s.offset} size {s.size} align {s.align} {res}")
    for b in f.blocks:
        lines.append(f"{b.label}:")
        for inst in b.instructions:
            lines.append("  " + print_instruction(inst))
    lines.append("}")
    return lines


def print_ir(module: Module) -> str:
    sections: list[list[str]] = []
    if module.targets:
        sections.append([_print_target(t) for t in module.targets])
    if module.globals:
        sections.append(
            [f"global @{g.name} : {g.type} addrspace({g.addrspace})" for g in module.globals]
        )
    if module.declarations:
        sections.append(
            [
                f"declare {d.ret} @{d.name}({', '.join(str(t) for t in d.params)})"
                for d in module.declarations
            ]
        )
    for f in module.functions:
        sections.append(_print_function(f))
    return "\n\n".join("\n".join(s) for s in sections) + "\n"


# -- lexing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<comment>;.*)
  | (?P<fi>fi\#\d+)
  | (?P<local>%[A-Za-z0-9_.$\-]+)
  | (?P<global>@[A-Za-z0-9_.$\-]+)
  | (?P<meta>![A-Za-z0-9_.\-]+)
  | (?P<num>-?\d+)
  | (?P<word>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[\[\](){},*=:<>])
    """,
    re.VERBOSE,
)


@dataclass
class Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex_line(text: str, line: int) -> list[Tok]:
    toks: list[Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos + 1)
        kind = m.lastgroup
        if kind == "comment":
            break
        if kind != "ws":
            toks.append(Tok(kind, m.group(), line, pos + 1))
        pos = m.end()
    return toks


class _Cursor:
    def __init__(self, toks: list[Tok], line: int, text: str):
        self.toks = toks
        self.i = 0
        self.line = line
        self.eol_col = len(text) + 1

    def peek(self, offset: int = 0) -> Tok | None:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def error(self, message: str) -> ParseError:
        tok = self.peek()
        col = tok.col if tok is not None else self.eol_col
        return ParseError(message, self.line, col)

    def next(self, what: str = "token") -> Tok:
        tok = self.peek()
        if tok is None:
            raise self.error(f"expected {what}, found end of line")
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        tok = self.peek()
        if tok is not None and tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        tok = self.peek()
        if tok is None or tok.text != text:
            found = "end of line" if tok is None else repr(tok.text)
            raise self.error(f"expected {text!r}, found {found}")
        self.i += 1
        return tok

    def expect_kind(self, kind: str, what: str) -> Tok:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            found = "end of line" if tok is None else repr(tok.text)
            raise self.error(f"expected {what}, found {found}")
        self.i += 1
        return tok

    def int(self) -> int:
        return int(self.expect_kind("num", "integer").text)

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def end(self) -> None:
        if not self.done():
            raise self.error(f"unexpected {self.peek().text!r}")


# -- parsing ----------------------------------------------------------------

_INT = re.compile(r"i(\d+)$")
_CASTS = {"bitcast": Opcode.BITCAST, "addrspacecast": Opcode.ADDRSPACECAST}


def _parse_type(c: _Cursor) -> Type:
    tok = c.next("type")
    if tok.text == "void":
        t: Type = VOID
    elif tok.kind == "word" and _INT.match(tok.text):
        t = IntType(int(tok.text[1:]))
    elif tok.text == "[":
        n = c.int()
        c.expect("x")
        elem = _parse_type(c)
        c.expect("]")
        t = ArrayType(n, elem)
    else:
        raise ParseError(f"expected type, found {tok.text!r}", tok.line, tok.col)
    while True:
        if c.accept("*"):
            t = PtrType(t)
        elif c.peek() is not None and c.peek().text == "addrspace":
            c.next()
            c.expect("(")
            space_tok = c.peek()
            n = c.int()
            c.expect(")")
            c.expect("*")
            try:
                t = PtrType(t, AddressSpace(n))
            except ValueError:
                raise ParseError(f"unknown address space {n}", space_tok.line, space_tok.col)
        else:
            return t


def _parse_value(c: _Cursor):
    tok = c.next("value")
    if tok.kind == "local":
        return Ref(tok.text[1:]), tok
    if tok.kind == "global":
        return Sym(tok.text[1:]), tok
    if tok.kind == "num":
        return Const(int(tok.text)), tok
    if tok.text == "null":
        return Null(), tok
    if tok.kind == "fi":
        index = int(tok.text[3:])
        c.expect("<")
        tag = c.expect_kind("word", "base register").text
        if tag not in ("local", "shared"):
            raise ParseError(f"unknown base register {tag!r}", tok.line, tok.col)
        c.expect(",")
        origin = c.expect_kind("local", "origin").text[1:]
        c.expect(">")
        base = BaseReg.SHARED if tag == "shared" else BaseReg.FRAME_LOCAL
        return FrameIndex(index, base, origin), tok
    raise ParseError(f"expected value, found {tok.text!r}", tok.line, tok.col)


class _FunctionParser:
    def __init__(self):
        self.uses: list[tuple[str, Tok]] = []
        self.label_uses: list[tuple[str, Tok]] = []

    def operand(self, c: _Cursor) -> Operand:
        t = _parse_type(c)
        return self.untyped(c, t)

    def untyped(self, c: _Cursor, t: Type) -> Operand:
        value, tok = _parse_value(c)
        if isinstance(value, Ref):
            self.uses.append((value.name, tok))
        return Operand(t, value)

    def label(self, c: _Cursor) -> str:
        c.expect("label")
        tok = c.expect_kind("local", "label")
        self.label_uses.append((tok.text[1:], tok))
        return tok.text[1:]

    def instruction(self, c: _Cursor) -> Instruction:
        result = None
        if c.peek().kind == "local" and c.peek(1) is not None and c.peek(1).text == "=":
            result = c.next().text[1:]
            c.next()
        tok = c.expect_kind("word", "opcode")
        name = tok.text
        if name == "alloca":
            t = _parse_type(c)
            count = 1
            c.expect(",")
            if c.peek() is not None and c.peek().kind == "num":
                count = c.int()
                c.expect(",")
            c.expect("align")
            inst = Instruction(Opcode.ALLOCA, [], result, t, count=count, align=c.int())
        elif name == "load":
            t = _parse_type(c)
            c.expect(",")
            inst = Instruction(Opcode.LOAD, [self.operand(c)], result, t)
        elif name == "store":
            v = self.operand(c)
            c.expect(",")
            inst = Instruction(Opcode.STORE, [v, self.operand(c)])
        elif name in _CASTS:
            src = self.operand(c)
            c.expect("to")
            inst = Instruction(_CASTS[name], [src], result, _parse_type(c))
        elif name == "getelement":
            t = _parse_type(c)
            c.expect(",")
            base = self.operand(c)
            c.expect(",")
            inst = Instruction(Opcode.GETELEMENT, [base, self.operand(c)], result, t)
        elif name in BINOPS:
            t = _parse_type(c)
            a = self.untyped(c, t)
            c.expect(",")
            inst = Instruction(Opcode.BINOP, [a, self.untyped(c, t)], result, t, op=name)
        elif name == "icmp":
            pred = c.expect_kind("word", "predicate")
            if pred.text not in PREDICATES:
                raise ParseError(f"unknown predicate {pred.text!r}", pred.line, pred.col)
            t = _parse_type(c)
            a = self.untyped(c, t)
            c.expect(",")
            inst = Instruction(Opcode.CMP, [a, self.untyped(c, t)], result, t, op=pred.text)
        elif name == "br":
            if c.peek() is not None and c.peek().text == "label":
                inst = Instruction(Opcode.BRANCH, targets=(self.label(c),))
            else:
                cond = self.operand(c)
                c.expect(",")
                t = self.label(c)
                c.expect(",")
                inst = Instruction(Opcode.CONDBRANCH, [cond], targets=(t, self.label(c)))
        elif name == "call":
            t = _parse_type(c)
            callee = c.expect_kind("global", "callee").text[1:]
            c.expect("(")
            args = []
            if not c.accept(")"):
                while True:
                    args.append(self.operand(c))
                    if c.accept(")"):
                        break
                    c.expect(",")
            inst = Instruction(Opcode.CALL, args, result, t, callee=callee)
        elif name == "ret":
            if c.accept("void"):
                inst = Instruction(Opcode.RET)
            else:
                inst = Instruction(Opcode.RET, [self.operand(c)])
        elif name == "barrier":
            inst = Instruction(Opcode.BARRIER)
        else:
            raise ParseError(f"unknown opcode {name!r}", tok.line, tok.col)
        meta = []
        while c.peek() is not None and c.peek().kind == "meta":
            meta.append(c.next().text[1:])
        inst.meta = tuple(meta)
        c.end()
        if result is not None and inst.result is None:
            raise ParseError(f"{name} produces no value", tok.line, tok.col)
        return inst


def _parse_header(c: _Cursor) -> tuple[Function, bool]:
    c.expect("define")
    machine = c.accept("machine")
    ret = _parse_type(c)
    name = c.expect_kind("global", "function name").text[1:]
    c.expect("(")
    params = []
    if not c.accept(")"):
        while True:
            t = _parse_type(c)
            params.append(Param(c.expect_kind("local", "parameter").text[1:], t))
            if c.accept(")"):
                break
            c.expect(",")
    kernel = c.accept("kernel")
    c.expect("{")
    c.end()
    cls = MachineFunction if machine else Function
    return cls(name, ret, params, kernel=kernel), machine


def _parse_frame_line(c: _Cursor, f: MachineFunction) -> None:
    word = c.next().text
    if word == "frame":
        index = int(c.expect_kind("fi", "frame index").text[3:])
        origin = c.expect_kind("local", "origin").text[1:]
        c.expect("size")
        size = c.int()
        c.expect("align")
        f.frame.append(FrameObject(index, origin, size, c.int()))
    elif word == "depot":
        c.expect("local")
        local = c.int()
        c.expect("shared")
        f.layout = DepotLayout((), local, c.int())
    else:  # slot
        if f.layout is None:
            raise c.error("slot before depot line")
        fis = [int(c.expect_kind("fi", "frame index").text[3:])]
        while c.accept(","):
            fis.append(int(c.expect_kind("fi", "frame index").text[3:]))
        c.expect("offset")
        offset = c.int()
        c.expect("size")
        size = c.int()
        c.expect("align")
        align = c.int()
        res = c.expect_kind("word", "residency").text
        if res not in ("local", "shared"):
            raise c.error(f"unknown residency {res!r}")
        slot = DepotSlot(tuple(fis), offset, size, align, res == "shared")
        f.layout = DepotLayout(
            f.layout.slots + (slot,), f.layout.total_local_bytes, f.layout.total_shared_bytes
        )
    c.end()


def _parse_target(c: _Cursor) -> TargetInfo:
    c.expect("target")
    kernel = c.expect_kind("global", "kernel").text[1:]
    num_teams = thread_limit = None
    maps = []
    while not c.done():
        key = c.next().text
        if key == "num_teams":
            num_teams = c.int()
        elif key == "thread_limit":
            thread_limit = c.int()
        elif key == "map":
            direction = c.expect_kind("word", "map direction").text
            if direction not in ("to", "from", "tofrom"):
                raise c.error(f"unknown map direction {direction!r}")
            name = c.expect_kind("local", "mapped symbol").text[1:]
            lower = c.int()
            maps.append(MapInfo(name, direction, lower, c.int()))
        else:
            raise c.error(f"unknown target attribute {key!r}")
    return TargetInfo(kernel, num_teams, thread_limit, tuple(maps))


def parse_ir(text: str) -> Module:
    module = Module()
    func: Function | None = None
    block: Block | None = None
    fparser: _FunctionParser | None = None
    header_line = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _lex_line(raw, lineno)
        if not toks:
            continue
        c = _Cursor(toks, lineno, raw)
        first = toks[0]
        if func is None:
            if first.text == "define":
                func, _ = _parse_header(c)
                fparser = _FunctionParser()
                block = None
                header_line = lineno
            elif first.text == "declare":
                c.next()
                ret = _parse_type(c)
                name = c.expect_kind("global", "function name").text[1:]
                c.expect("(")
                params = []
                if not c.accept(")"):
                    while True:
                        params.append(_parse_type(c))
                        if c.accept(")"):
                            break
                        c.expect(",")
                c.end()
                module.declarations.append(Declaration(name, ret, tuple(params)))
            elif first.text == "global":
                c.next()
                name = c.expect_kind("global", "global name").text[1:]
                c.expect(":")
                t = _parse_type(c)
                c.expect("addrspace")
                c.expect("(")
                space = c.int()
                c.expect(")")
                c.end()
                module.globals.append(GlobalVar(name, t, space))
            elif first.text == "target":
                module.targets.append(_parse_target(c))
            else:
                raise ParseError(f"unexpected {first.text!r} at top level", lineno, first.col)
            continue
        if first.text == "}" and len(toks) == 1:
            _finish_function(func, fparser, header_line)
            module.functions.append(func)
            func = None
            continue
        if first.kind == "word" and len(toks) == 2 and toks[1].text == ":":
            block = Block(first.text)
            func.blocks.append(block)
            continue
        if first.kind == "local" and len(toks) == 2 and toks[1].text == ":":
            raise ParseError("block labels are written without '%'", lineno, first.col)
        if block is None and first.text in ("frame", "depot", "slot"):
            if not isinstance(func, MachineFunction):
                raise ParseError(f"{first.text!r} outside a machine function", lineno, first.col)
            _parse_frame_line(c, func)
            continue
        if block is None:
            raise ParseError("instruction outside a block", lineno, first.col)
        block.instructions.append(fparser.instruction(c))
    if func is not None:
        raise ParseError(f"function @{func.name} is not closed", header_line, 1)
    return module


def _finish_function(func: Function, fp: _FunctionParser, header_line: int) -> None:
    defined = {p.name for p in func.params}
    for inst in func.instructions():
        if inst.result is not None:
            if inst.result in defined:
                raise ParseError(f"value %{inst.result} defined twice", header_line, 1)
            defined.add(inst.result)
    for name, tok in fp.uses:
        if name not in defined:
            raise ParseError(f"dangling value %{name}", tok.line, tok.col)
    labels = {b.label for b in func.blocks}
    for name, tok in fp.label_uses:
        if name not in labels:
            raise ParseError(f"unknown label %{name}", tok.line, tok.col)

