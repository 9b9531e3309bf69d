"""Recursive-descent parser for ``.ompk`` kernel sources.

The accepted language is the C statement subset documented in
``docs/dsl.md``: one host function with ``int`` scalars and ``int *``
array parameters, an optional scalar host prelude, and exactly one
``#pragma omp target`` region.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

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
    MapClause,
    Neg,
    Num,
    Parallel,
    Param,
    Program,
    Span,
    Target,
    Teams,
    Var,
)


class DslSyntaxError(Exception):
    def __init__(self, message: str, span: Span):
        super().__init__(f"{span}: {message}")
        self.message = message
        self.span = span


class UnsupportedConstruct(DslSyntaxError):
    pass


BUILTINS = ("omp_get_thread_num", "omp_get_team_num", "omp_get_num_threads", "omp_get_num_teams")
UNSUPPORTED_DIRECTIVES = frozenset(
    {
        "task", "taskloop", "taskwait", "taskgroup", "simd", "distribute", "for", "single",
        "master", "critical", "barrier", "sections", "section", "atomic", "ordered", "flush",
        "declare", "loop", "workshare",
    }
)

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<num>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\+\+|--|\+=|-=|\*=|/=|%=|<=|>=|==|!=|&&|\|\||[-+*/%<>=()\[\]{};,:!])
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass
class Tok:
    kind: str  # num | ident | op | directive | eof
    text: str
    span: Span
    body: list["Tok"] | None = None


def _lex_fragment(text: str, line: int, col0: int) -> list[Tok]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", Span(line, col0 + pos))
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            out.append(Tok(kind, m.group(), Span(line, col0 + pos)))
        pos = m.end()
    return out


def tokenize(source: str) -> list[Tok]:
    toks: list[Tok] = []
    lines = source.split("\n")
    i = 0
    in_block_comment = False
    code: list[tuple[int, str]] = []
    while i < len(lines):
        raw = lines[i]
        lineno = i + 1
        stripped = raw.lstrip()
        if not in_block_comment and stripped.startswith("#"):
            text = raw
            while text.rstrip().endswith("\\") and i + 1 < len(lines):
                i += 1
                text = text.rstrip()[:-1] + " " + lines[i]
            col = len(raw) - len(stripped) + 1
            # directive lines are tokenized as a unit
            body_text = text.lstrip()[1:]
            body = _lex_fragment(body_text, lineno, col + 1)
            if code:
                toks.extend(_lex_code(code))
                code = []
            toks.append(Tok("directive", body_text.strip(), Span(lineno, col), body))
        else:
            code.append((lineno, raw))
            opens = raw.count("/*")
            closes = raw.count("*/")
            if opens > closes:
                in_block_comment = True
            elif closes > opens:
                in_block_comment = False
        i += 1
    if code:
        toks.extend(_lex_code(code))
    last = len(lines)
    toks.append(Tok("eof", "", Span(last, 1)))
    return toks


def _lex_code(chunk: list[tuple[int, str]]) -> list[Tok]:
    # lex a run of consecutive code lines jointly so block comments may span lines
    first_line = chunk[0][0]
    text = "\n".join(line for _, line in chunk)
    out = []
    pos = 0
    line = first_line
    line_start = 0
    while pos < len(text):
        if text[pos] == "\n":
            line += 1
            pos += 1
            line_start = pos
            continue
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", Span(line, pos - line_start + 1))
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            out.append(Tok(kind, m.group(), Span(line, pos - line_start + 1)))
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            line_start = pos + m.group().rfind("\n") + 1
        pos = m.end()
    return out


class _Parser:
    def __init__(self, toks: list[Tok], overrides: dict[str, int]):
        self.toks = toks
        self.i = 0
        self.overrides = dict(overrides)
        self.defines: dict[str, int] = {}
        self.region_count = 0

    # -- token helpers --

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def advance(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Tok:
        if not self.at(text):
            found = self.tok.text or "end of input"
            raise DslSyntaxError(f"expected {text!r}, found {found!r}", self.tok.span)
        return self.advance()

    def ident(self) -> Tok:
        if self.tok.kind != "ident":
            raise DslSyntaxError(f"expected identifier, found {self.tok.text!r}", self.tok.span)
        return self.advance()

    # -- program --

    def program(self) -> Program:
        while self.tok.kind == "directive":
            self.define(self.advance())
        for name in self.overrides:
            self.defines.setdefault(name, self.overrides[name])
        start = self.expect("void").span
        name = self.ident().text
        self.expect("(")
        params: list[Param] = []
        if not self.accept(")"):
            while True:
                sp = self.expect("int").span
                is_ptr = self.accept("*")
                params.append(Param(self.ident().text, is_ptr, sp))
                if self.accept(")"):
                    break
                self.expect(",")
        self.expect("{")
        host: list = []
        target = None
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise DslSyntaxError("unterminated function body", self.tok.span)
            if self.tok.kind == "directive":
                d = self.tok
                words = [t.text for t in d.body]
                if words[:2] == ["pragma", "omp"] and len(words) > 2 and words[2] == "target":
                    if target is not None:
                        raise UnsupportedConstruct("only one target region per source", d.span)
                    target = self.target()
                    continue
                self.directive_error(d, "host code")
            if target is not None:
                raise UnsupportedConstruct("host statements after the target region", self.tok.span)
            host.extend(self.host_statement())
        self.expect("}")
        if self.tok.kind != "eof":
            raise DslSyntaxError(f"unexpected {self.tok.text!r} after function", self.tok.span)
        if target is None:
            raise DslSyntaxError("no target region", start)
        return Program(name, params, host, target, dict(self.defines), start)

    def define(self, d: Tok) -> None:
        body = d.body
        if not body or body[0].text != "define":
            self.directive_error(d, "file scope")
        if len(body) < 3 or body[1].kind != "ident":
            raise DslSyntaxError("malformed #define", d.span)
        name = body[1].text
        sub = _Parser(body[2:] + [Tok("eof", "", d.span)], {})
        sub.defines = self.defines
        value = sub.const_expr()
        if sub.tok.kind != "eof":
            raise DslSyntaxError("#define takes a single integer expression", sub.tok.span)
        self.defines[name] = self.overrides.get(name, value)

    def directive_error(self, d: Tok, where: str):
        words = [t.text for t in d.body]
        if words[:2] == ["pragma", "omp"] and len(words) > 2:
            name = words[2]
            if name in UNSUPPORTED_DIRECTIVES:
                raise UnsupportedConstruct(f"unsupported construct '{name}'", d.span)
            raise UnsupportedConstruct(f"'omp {name}' is not allowed in {where}", d.span)
        if words and words[0] == "define":
            raise DslSyntaxError("#define must precede the function", d.span)
        raise UnsupportedConstruct(f"unsupported directive '#{d.text}'", d.span)

    def host_statement(self) -> list:
        stmts = self.statement(context="host")
        for s in stmts:
            if isinstance(s, Decl) and s.size is not None:
                raise UnsupportedConstruct("host arrays are not supported; pass them as parameters", s.span)
            if not isinstance(s, (Decl, Assign)):
                raise UnsupportedConstruct("host code may only declare and assign scalars", s.span)
        return stmts

    # -- directives --

    def pragma_words(self, d: Tok) -> "_Parser":
        sub = _Parser(d.body + [Tok("eof", "", d.span)], {})
        sub.defines = self.defines
        sub.expect("pragma")
        sub.expect("omp")
        return sub

    def target(self) -> Target:
        d = self.advance()
        p = self.pragma_words(d)
        p.expect("target")
        maps: list[MapClause] = []
        while p.tok.kind != "eof":
            clause = p.ident()
            if clause.text == "teams":
                raise UnsupportedConstruct("combined 'target teams' is not supported; use two directives", clause.span)
            if clause.text != "map":
                raise UnsupportedConstruct(f"unsupported target clause '{clause.text}'", clause.span)
            p.expect("(")
            direction = p.ident()
            if direction.text not in ("to", "from", "tofrom"):
                raise DslSyntaxError(f"unknown map type '{direction.text}'", direction.span)
            p.expect(":")
            while True:
                name = p.ident()
                p.expect("[")
                lower = 0 if p.at(":") else p.const_expr()
                p.expect(":")
                length = p.const_expr()
                p.expect("]")
                if length <= 0:
                    raise DslSyntaxError("map extent length must be positive", name.span)
                maps.append(MapClause(name.text, direction.text, lower, length, name.span))
                if p.accept(")"):
                    break
                p.expect(",")
        teams = None
        if self.tok.kind == "directive" and self._is_teams(self.tok):
            teams = self.teams()
            body = Block([], d.span)
        else:
            if not self.at("{"):
                raise DslSyntaxError("target must be followed by a block or a teams directive", self.tok.span)
            body = self.block(context="target")
            inner = [s for s in body.stmts if isinstance(s, Teams)]
            if inner:
                if len(body.stmts) != 1:
                    raise UnsupportedConstruct(
                        "teams must be closely nested in target (no code between them)", inner[0].span
                    )
                teams = inner[0]
                body = Block([], body.span)
        return Target(maps, teams, body, d.span)

    @staticmethod
    def _is_teams(tok: Tok) -> bool:
        words = [t.text for t in tok.body]
        return words[:3] == ["pragma", "omp", "teams"]

    def teams(self) -> Teams:
        d = self.advance()
        p = self.pragma_words(d)
        p.expect("teams")
        num_teams = thread_limit = None
        while p.tok.kind != "eof":
            clause = p.ident()
            if clause.text not in ("num_teams", "thread_limit"):
                raise UnsupportedConstruct(f"unsupported teams clause '{clause.text}'", clause.span)
            p.expect("(")
            value = p.const_expr()
            p.expect(")")
            if value <= 0:
                raise DslSyntaxError(f"{clause.text} must be positive", clause.span)
            if clause.text == "num_teams":
                num_teams = value
            else:
                thread_limit = value
        if not self.at("{"):
            raise DslSyntaxError("teams must be followed by a block", self.tok.span)
        body = self.block(context="teams")
        return Teams(num_teams, thread_limit, body, d.span)

    def parallel(self, d: Tok, context: str) -> Parallel:
        if context == "parallel":
            raise UnsupportedConstruct("nested parallel regions are not supported", d.span)
        if context == "host":
            raise UnsupportedConstruct("parallel outside a target region", d.span)
        p = self.pragma_words(d)
        p.expect("parallel")
        is_for = p.accept("for")
        if p.tok.kind != "eof":
            raise UnsupportedConstruct(f"unsupported parallel clause '{p.tok.text}'", p.tok.span)
        if is_for:
            if not self.at("for"):
                raise DslSyntaxError("'parallel for' must be followed by a for loop", self.tok.span)
            body = self.statement(context="parallel")[0]
        else:
            stmts = self.statement(context="parallel")
            body = stmts[0] if len(stmts) == 1 else Block(stmts, d.span)
        region = self.region_count
        self.region_count += 1
        return Parallel(body, is_for, d.span, region)

    # -- statements --

    def block(self, context: str) -> Block:
        sp = self.expect("{").span
        stmts = []
        while not self.at("}"):
            if self.tok.kind == "eof":
                raise DslSyntaxError("unterminated block", sp)
            stmts.extend(self.statement(context))
        self.expect("}")
        return Block(stmts, sp)

    def statement(self, context: str) -> list:
        t = self.tok
        if t.kind == "directive":
            words = [x.text for x in t.body]
            if words[:3] == ["pragma", "omp", "parallel"]:
                self.advance()
                return [self.parallel(t, context)]
            if words[:3] == ["pragma", "omp", "teams"]:
                if context != "target":
                    raise UnsupportedConstruct("teams must be closely nested in target", t.span)
                return [self.teams()]
            self.directive_error(t, f"{context} code")
        if self.at("{"):
            return [self.block(context)]
        if self.accept(";"):
            return []
        if self.at("int"):
            return self.declaration()
        if self.at("for"):
            return [self.for_loop(context)]
        if self.at("if"):
            return [self.if_stmt(context)]
        s = self.assignment()
        self.expect(";")
        return [s]

    def declaration(self) -> list[Decl]:
        self.expect("int")
        decls = []
        while True:
            name = self.ident()
            size = None
            init = None
            if self.accept("["):
                size = self.const_expr()
                if size <= 0:
                    raise DslSyntaxError("array size must be positive", name.span)
                self.expect("]")
            if self.accept("="):
                if size is not None:
                    raise UnsupportedConstruct("array initializers are not supported", name.span)
                init = self.expr()
            decls.append(Decl(name.text, size, init, name.span))
            if self.accept(";"):
                return decls
            self.expect(",")

    def lvalue(self):
        name = self.ident()
        if name.text in self.defines:
            raise DslSyntaxError(f"cannot assign to constant '{name.text}'", name.span)
        if self.accept("["):
            idx = self.expr()
            self.expect("]")
            return Index(name.text, idx, name.span)
        return Var(name.text, name.span)

    def assignment(self) -> Assign:
        target = self.lvalue()
        op = self.tok
        if op.text in ("++", "--"):
            self.advance()
            return Assign(target, op.text, None, target.span)
        if op.text not in ("=", "+=", "-=", "*=", "/=", "%="):
            raise DslSyntaxError(f"expected assignment, found {op.text!r}", op.span)
        self.advance()
        return Assign(target, op.text, self.expr(), target.span)

    def for_loop(self, context: str) -> For:
        sp = self.expect("for").span
        self.expect("(")
        declares = self.accept("int")
        var = self.ident().text
        self.expect("=")
        init = self.expr()
        self.expect(";")
        cvar = self.ident()
        if cvar.text != var:
            raise UnsupportedConstruct("loop condition must test the loop variable", cvar.span)
        cmp = self.tok.text
        if cmp not in ("<", "<=", ">", ">=", "!="):
            raise DslSyntaxError(f"unsupported loop comparison {cmp!r}", self.tok.span)
        self.advance()
        bound = self.expr()
        self.expect(";")
        svar = self.ident()
        if svar.text != var:
            raise UnsupportedConstruct("loop increment must update the loop variable", svar.span)
        if self.accept("++"):
            step = 1
        elif self.accept("--"):
            step = -1
        elif self.at("+=") or self.at("-="):
            sign = 1 if self.advance().text == "+=" else -1
            step = sign * self.const_expr()
            if step == 0:
                raise DslSyntaxError("loop step must be non-zero", svar.span)
        else:
            raise DslSyntaxError("loop increment must be ++, --, += or -=", self.tok.span)
        self.expect(")")
        inner = context if context != "target" else "target"
        body_stmts = self.statement(inner)
        body = body_stmts[0] if len(body_stmts) == 1 else Block(body_stmts, sp)
        return For(var, declares, init, cmp, bound, step, body, sp)

    def if_stmt(self, context: str) -> If:
        sp = self.expect("if").span
        self.expect("(")
        cond = self.condition()
        self.expect(")")
        then = self.statement(context)
        then_s = then[0] if len(then) == 1 else Block(then, sp)
        orelse = None
        if self.accept("else"):
            e = self.statement(context)
            orelse = e[0] if len(e) == 1 else Block(e, sp)
        return If(cond, then_s, orelse, sp)

    def condition(self) -> Cond:
        left = self.expr()
        if self.tok.text in ("<", "<=", ">", ">=", "==", "!="):
            op = self.advance().text
            return Cond(op, left, self.expr(), left.span)
        return Cond(None, left, None, left.span)

    # -- expressions --

    def expr(self):
        left = self.term()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.advance()
            left = BinOp(op.text, left, self.term(), op.span)
        return left

    def term(self):
        left = self.unary()
        while self.tok.text in ("*", "/", "%") and self.tok.kind == "op":
            op = self.advance()
            left = BinOp(op.text, left, self.unary(), op.span)
        return left

    def unary(self):
        if self.at("-"):
            sp = self.advance().span
            operand = self.unary()
            if isinstance(operand, Num):
                return Num(-operand.value, sp)
            return Neg(operand, sp)
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.primary()

    def primary(self):
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(int(t.text), t.span)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            self.advance()
            if t.text in self.defines:
                return Num(self.defines[t.text], t.span)
            if self.accept("("):
                self.expect(")")
                if t.text not in BUILTINS:
                    raise UnsupportedConstruct(f"unknown function '{t.text}'", t.span)
                return Call(t.text, t.span)
            if self.accept("["):
                idx = self.expr()
                self.expect("]")
                return Index(t.text, idx, t.span)
            return Var(t.text, t.span)
        raise DslSyntaxError(f"expected expression, found {t.text or 'end of input'!r}", t.span)

    def const_expr(self) -> int:
        e = self.expr()
        return fold(e)


def fold(e) -> int:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg):
        return -fold(e.operand)
    if isinstance(e, BinOp):
        a, b = fold(e.left), fold(e.right)
        return c_arith(e.op, a, b)
    raise DslSyntaxError("expected a constant expression", e.span)


def wrap32(v: int) -> int:
    v &= 0xFFFFFFFF
    return v - (1 << 32) if v & 0x80000000 else v


def c_arith(op: str, a: int, b: int) -> int:
    """32-bit two's complement arithmetic with C division semantics."""
    if op == "+":
        return wrap32(a + b)
    if op == "-":
        return wrap32(a - b)
    if op == "*":
        return wrap32(a * b)
    if b == 0:
        raise ZeroDivisionError("integer division by zero")
    q = abs(a) // abs(b)
    if (a < 0) != (b < 0):
        q = -q
    if op == "/":
        return wrap32(q)
    if op == "%":
        return wrap32(a - q * b)
    raise ValueError(op)


def parse_dsl(source: str, defines: dict[str, int] | None = None) -> Program:
    """Parse kernel source; ``defines`` override ``#define`` constants."""
    toks = tokenize(source)
    return _Parser(toks, defines or {}).program()
