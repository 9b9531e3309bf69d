"""Name resolution and implicit data-sharing attribute resolution.

Rules, applied per construct without a ``default`` clause:

* host variables referenced in the target region are ``mapped`` when they
  are array parameters listed in a map clause and ``firstprivate``
  otherwise;
* variables referenced in ``teams`` or ``parallel`` but declared in an
  enclosing context are ``shared``;
* variables declared inside a ``parallel`` construct, and the iteration
  variable of ``parallel for``, are ``private``.
"""

from __future__ import annotations

from .ast import (
    Assign,
    Block,
    Call,
    Decl,
    For,
    If,
    Index,
    Num,
    Parallel,
    Program,
    Scope,
    SharingAttribute,
    Symbol,
    Teams,
    Var,
    BinOp,
    Neg,
    Cond,
    walk,
)
from .parser import DslSyntaxError


class SemanticError(DslSyntaxError):
    pass


class _Resolver:
    def __init__(self, program: Program):
        self.program = program
        self.scopes: list[dict[str, Symbol]] = []
        self.symbols: list[Symbol] = []
        # enclosing target/teams/parallel constructs, outermost first
        self.constructs: list[object] = []
        self.refs: dict[int, list[Symbol]] = {}

    def declare(self, name: str, kind: str, scope: Scope, span, size=None, is_param=False, region=-1) -> Symbol:
        if name in self.scopes[-1]:
            raise SemanticError(f"redeclaration of '{name}'", span)
        sym = Symbol(name, len(self.symbols), kind, scope, size, region, is_param)
        self.symbols.append(sym)
        self.scopes[-1][name] = sym
        return sym

    def lookup(self, name: str, span) -> Symbol:
        for scope in reversed(self.scopes):
            if name in scope:
                sym = scope[name]
                for construct in self.constructs:
                    self.refs.setdefault(id(construct), [])
                    if sym not in self.refs[id(construct)]:
                        self.refs[id(construct)].append(sym)
                return sym
        raise SemanticError(f"reference to undeclared variable '{name}'", span)

    # -- traversal --

    def run(self) -> Program:
        p = self.program
        self.scopes.append({})
        for prm in p.params:
            prm.symbol = self.declare(prm.name, "pointer" if prm.is_pointer else "scalar", Scope.HOST, prm.span, is_param=True)
        for s in p.host:
            self.stmt(s, Scope.HOST, -1)
        t = p.target
        mapped = set()
        for m in t.maps:
            sym = self.scopes[0].get(m.name)
            if sym is None or sym.kind != "pointer":
                raise SemanticError(f"map clause names '{m.name}', which is not an array parameter", m.span)
            if m.name in mapped:
                raise SemanticError(f"'{m.name}' mapped twice", m.span)
            mapped.add(m.name)
        self.enter(t)
        self.scopes.append({})
        for s in t.body.stmts:
            self.stmt(s, Scope.TARGET, -1)
        if t.teams is not None:
            self.enter(t.teams)
            self.scopes.append({})
            for s in t.teams.body.stmts:
                self.stmt(s, Scope.TEAMS, -1)
            self.scopes.pop()
            self.leave()
        self.scopes.pop()
        self.leave()
        p.symbols = self.symbols
        self.attributes(mapped)
        return p

    def enter(self, construct) -> None:
        self.constructs.append(construct)
        self.refs.setdefault(id(construct), [])

    def leave(self) -> None:
        self.constructs.pop()

    def stmt(self, s, scope: Scope, region: int) -> None:
        if isinstance(s, Decl):
            if s.init is not None:
                self.expr(s.init)
            kind = "array" if s.size is not None else "scalar"
            s.symbol = self.declare(s.name, kind, scope, s.span, s.size, region=region)
        elif isinstance(s, Assign):
            self.lvalue(s.target)
            if s.value is not None:
                self.expr(s.value)
        elif isinstance(s, Block):
            self.scopes.append({})
            for x in s.stmts:
                self.stmt(x, scope, region)
            self.scopes.pop()
        elif isinstance(s, For):
            self.scopes.append({})
            if s.declares:
                self.expr(s.init)
                s.symbol = self.declare(s.var, "scalar", scope, s.span, region=region)
                # the header reads and writes the variable
                self.lookup(s.var, s.span)
            else:
                s.symbol = self.lookup(s.var, s.span)
                if s.symbol.kind != "scalar":
                    raise SemanticError(f"loop variable '{s.var}' is not a scalar", s.span)
                self.expr(s.init)
            self.expr(s.bound)
            self.stmt(s.body, scope, region)
            self.scopes.pop()
        elif isinstance(s, If):
            self.cond(s.cond)
            self.stmt(s.then, scope, region)
            if s.orelse is not None:
                self.stmt(s.orelse, scope, region)
        elif isinstance(s, Parallel):
            if s.is_for and not s.body.declares:
                raise SemanticError("a 'parallel for' loop must declare its iteration variable", s.body.span)
            self.enter(s)
            self.scopes.append({})
            self.stmt(s.body, Scope.PARALLEL, s.region)
            self.scopes.pop()
            self.leave()
        elif isinstance(s, Teams):  # pragma: no cover - parser places teams
            raise SemanticError("misplaced teams construct", s.span)
        else:  # pragma: no cover
            raise TypeError(type(s))

    def lvalue(self, lv) -> None:
        sym = self.lookup(lv.name, lv.span)
        lv.symbol = sym
        if isinstance(lv, Index):
            if sym.kind == "scalar":
                raise SemanticError(f"'{lv.name}' is not an array", lv.span)
            self.expr(lv.index)
        elif sym.kind != "scalar":
            raise SemanticError(f"cannot assign to array '{lv.name}'", lv.span)

    def expr(self, e) -> None:
        if isinstance(e, (Num, Call)):
            return
        if isinstance(e, Var):
            e.symbol = self.lookup(e.name, e.span)
            if e.symbol.kind != "scalar":
                raise SemanticError(f"array '{e.name}' used as a value", e.span)
        elif isinstance(e, Index):
            e.symbol = self.lookup(e.name, e.span)
            if e.symbol.kind == "scalar":
                raise SemanticError(f"'{e.name}' is not an array", e.span)
            self.expr(e.index)
        elif isinstance(e, BinOp):
            self.expr(e.left)
            self.expr(e.right)
        elif isinstance(e, Neg):
            self.expr(e.operand)
        else:  # pragma: no cover
            raise TypeError(type(e))

    def cond(self, c: Cond) -> None:
        self.expr(c.left)
        if c.right is not None:
            self.expr(c.right)

    # -- attributes --

    def attributes(self, mapped: set[str]) -> None:
        p = self.program
        t = p.target
        host = sorted((s for s in self.refs[id(t)] if s.scope is Scope.HOST), key=lambda s: s.uid)
        attrs = {}
        for sym in host:
            if sym.kind == "pointer":
                if sym.name not in mapped:
                    raise SemanticError(
                        f"array parameter '{sym.name}' is used in the target region but not mapped", t.span
                    )
                attrs[sym.uid] = SharingAttribute.MAPPED
            else:
                attrs[sym.uid] = SharingAttribute.FIRSTPRIVATE
        _fill(t.sharing, host, attrs)
        constructs = [n for n in walk(p.target) if isinstance(n, (Teams, Parallel))]
        for c in constructs:
            inner = set()
            for n in walk(c):
                if isinstance(n, Decl) or (isinstance(n, For) and n.declares):
                    inner.add(n.symbol.uid)
            if isinstance(c, Parallel) and c.is_for:
                inner.add(c.body.symbol.uid)
            refs = sorted(self.refs.get(id(c), []), key=lambda s: s.uid)
            attrs = {
                s.uid: SharingAttribute.PRIVATE if s.uid in inner else SharingAttribute.SHARED
                for s in refs
            }
            _fill(c.sharing, refs, attrs)
            if isinstance(c, Parallel):
                c.captured = [s for s in refs if attrs[s.uid] is SharingAttribute.SHARED]


def _fill(table: dict, refs: list[Symbol], attrs: dict[int, SharingAttribute]) -> None:
    names = [s.name for s in refs]
    for s in refs:
        key = s.name if names.count(s.name) == 1 else f"{s.name}#{s.uid}"
        table[key] = attrs[s.uid]


def resolve_sharing(program: Program) -> Program:
    """Bind every name to a symbol and annotate constructs with attributes."""
    return _Resolver(program).run()
