"""Syntax tree of the OpenMP-like kernel language."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any, Iterator


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


class SharingAttribute(enum.Enum):
    SHARED = "shared"
    PRIVATE = "private"
    FIRSTPRIVATE = "firstprivate"
    MAPPED = "mapped"


# -- expressions ------------------------------------------------------------


@dataclass(eq=False)
class Num:
    value: int
    span: Span


@dataclass(eq=False)
class Var:
    name: str
    span: Span
    symbol: "Symbol | None" = None


@dataclass(eq=False)
class Index:
    name: str
    index: "Expr"
    span: Span
    symbol: "Symbol | None" = None


@dataclass(eq=False)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span


@dataclass(eq=False)
class Neg:
    operand: "Expr"
    span: Span


@dataclass(eq=False)
class Call:
    name: str
    span: Span


Expr = Num | Var | Index | BinOp | Neg | Call
LValue = Var | Index


@dataclass(eq=False)
class Cond:
    op: str | None
    left: Expr
    right: Expr | None
    span: Span


# -- statements -------------------------------------------------------------


@dataclass(eq=False)
class Decl:
    name: str
    size: int | None
    init: Expr | None
    span: Span
    symbol: "Symbol | None" = None


@dataclass(eq=False)
class Assign:
    target: LValue
    op: str
    value: Expr | None
    span: Span


@dataclass(eq=False)
class Block:
    stmts: list["Stmt"]
    span: Span


@dataclass(eq=False)
class For:
    var: str
    declares: bool
    init: Expr
    cmp: str
    bound: Expr
    step: int
    body: "Stmt"
    span: Span
    symbol: "Symbol | None" = None


@dataclass(eq=False)
class If:
    cond: Cond
    then: "Stmt"
    orelse: "Stmt | None"
    span: Span


@dataclass(eq=False)
class Parallel:
    body: "Stmt"
    is_for: bool
    span: Span
    region: int = -1
    sharing: dict[str, SharingAttribute] = field(default_factory=dict)
    # shared symbols in declaration order; this is the capture order
    captured: list["Symbol"] = field(default_factory=list)


@dataclass(eq=False)
class Teams:
    num_teams: int | None
    thread_limit: int | None
    body: Block
    span: Span
    sharing: dict[str, SharingAttribute] = field(default_factory=dict)


@dataclass(eq=False)
class MapClause:
    name: str
    direction: str
    lower: int
    length: int
    span: Span


@dataclass(eq=False)
class Target:
    maps: list[MapClause]
    teams: Teams | None
    body: Block
    span: Span
    sharing: dict[str, SharingAttribute] = field(default_factory=dict)


Stmt = Decl | Assign | Block | For | If | Parallel


@dataclass(eq=False)
class Param:
    name: str
    is_pointer: bool
    span: Span
    symbol: "Symbol | None" = None


@dataclass(eq=False)
class Program:
    name: str
    params: list[Param]
    host: list[Stmt]
    target: Target
    defines: dict[str, int]
    span: Span
    symbols: list["Symbol"] = field(default_factory=list)

    @property
    def region_body(self) -> Block:
        """The block executed by each team's initial thread."""
        return self.target.teams.body if self.target.teams else self.target.body


# -- resolved symbols -------------------------------------------------------


class Scope(enum.Enum):
    HOST = "host"
    TARGET = "target"
    TEAMS = "teams"
    PARALLEL = "parallel"


@dataclass(eq=False)
class Symbol:
    name: str
    uid: int
    kind: str  # scalar | array | pointer
    scope: Scope
    size: int | None = None
    region: int = -1
    is_param: bool = False

    def __repr__(self) -> str:
        return f"Symbol({self.name}#{self.uid})"


def walk(node: Any) -> Iterator[Any]:
    """Pre-order traversal over every syntax node below ``node``."""
    yield node
    if not is_dataclass(node):
        return
    for f in fields(node):
        if f.name in ("symbol", "symbols", "span", "sharing", "captured"):
            continue
        v = getattr(node, f.name)
        if isinstance(v, list):
            for item in v:
                if is_dataclass(item):
                    yield from walk(item)
        elif is_dataclass(v):
            yield from walk(v)


def to_tree(node: Any) -> Any:
    """Stable JSON-compatible rendering used by ``--dump-ast``."""
    if isinstance(node, list):
        return [to_tree(n) for n in node]
    if isinstance(node, dict):
        return {k: to_tree(v) for k, v in sorted(node.items())}
    if isinstance(node, enum.Enum):
        return node.value
    if isinstance(node, Span):
        return str(node)
    if isinstance(node, Symbol):
        return f"{node.name}#{node.uid}"
    if not is_dataclass(node):
        return node
    out: dict[str, Any] = {"node": type(node).__name__}
    for f in fields(node):
        if f.name == "symbols":
            continue
        v = getattr(node, f.name)
        if v is None or (f.name in ("sharing", "captured") and not v):
            continue
        out[f.name] = to_tree(v)
    return out
