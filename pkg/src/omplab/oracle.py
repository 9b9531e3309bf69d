"""Single-threaded reference semantics for ``.ompk`` programs.

Teams run one after another. A parallel region runs its body once per
worker id in increasing order; a ``parallel for`` runs its iterations in
order, attributing iteration ``j`` to worker ``j mod workers`` exactly as
the generated cyclic schedule does. For programs without data races this
yields the result of any parallel execution.

Locals are zero when their scope is entered, matching the simulator, which
zero-fills every frame.
"""

from __future__ import annotations

from .frontend.ast import (
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
    Var,
)
from .frontend.parser import c_arith, wrap32

_CMP = {
    "<": lambda a, b: a < b, "<=": lambda a, b: a <= b, ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b, "==": lambda a, b: a == b, "!=": lambda a, b: a != b,
}


class OracleError(Exception):
    pass


class _Ctx:
    def __init__(self, team: int, num_teams: int, tid: int, nthreads: int):
        self.team = team
        self.num_teams = num_teams
        self.tid = tid
        self.nthreads = nthreads


class _Oracle:
    def __init__(self, program: Program, num_teams: int, workers: int, step_limit: int):
        self.p = program
        self.num_teams = num_teams
        self.workers = workers
        self.steps = 0
        self.step_limit = step_limit

    def tick(self) -> None:
        self.steps += 1
        if self.steps > self.step_limit:
            raise OracleError("step limit exceeded")

    # cells: uid -> list (scalars are one-element lists)
    def enter(self, env: dict, stmt) -> None:
        for sym in _declared(stmt):
            env[sym.uid] = [0] * (sym.size if sym.kind == "array" else 1)

    def stmt(self, s, env: dict, ctx: _Ctx) -> None:
        self.tick()
        if isinstance(s, Decl):
            if s.init is not None:
                env[s.symbol.uid][0] = self.expr(s.init, env, ctx)
        elif isinstance(s, Assign):
            self.assign(s, env, ctx)
        elif isinstance(s, Block):
            for x in s.stmts:
                self.stmt(x, env, ctx)
        elif isinstance(s, For):
            self.loop(s, env, ctx)
        elif isinstance(s, If):
            if self.cond(s.cond, env, ctx):
                self.stmt(s.then, env, ctx)
            elif s.orelse is not None:
                self.stmt(s.orelse, env, ctx)
        elif isinstance(s, Parallel):
            self.parallel(s, env, ctx)
        else:  # pragma: no cover
            raise TypeError(type(s))

    def cell(self, lv, env: dict, ctx: _Ctx) -> tuple[list, int]:
        data = env[lv.symbol.uid]
        if isinstance(lv, Var):
            return data, 0
        i = self.expr(lv.index, env, ctx)
        if not 0 <= i < len(data):
            raise OracleError(f"index {i} out of bounds for '{lv.name}' at {lv.span}")
        return data, i

    def assign(self, s: Assign, env: dict, ctx: _Ctx) -> None:
        data, i = self.cell(s.target, env, ctx)
        if s.op == "=":
            v = self.expr(s.value, env, ctx)
        elif s.op in ("++", "--"):
            v = wrap32(data[i] + (1 if s.op == "++" else -1))
        else:
            rhs = self.expr(s.value, env, ctx)
            v = self.arith(s.op[0], data[i], rhs)
        data[i] = v

    def loop(self, s: For, env: dict, ctx: _Ctx, first=None, stride=None) -> int:
        cell = env[s.symbol.uid]
        cell[0] = self.expr(s.init, env, ctx) if first is None else first
        count = 0
        while _CMP[s.cmp](cell[0], self.expr(s.bound, env, ctx)):
            self.stmt(s.body, env, ctx)
            cell[0] = wrap32(cell[0] + (s.step if stride is None else stride))
            count += 1
            self.tick()
        return count

    def parallel(self, s: Parallel, env: dict, ctx: _Ctx) -> None:
        w = self.workers
        for tid in range(w):
            inner = dict(env)
            self.enter(inner, s.body)
            tctx = _Ctx(ctx.team, ctx.num_teams, tid, w)
            if s.is_for:
                loop = s.body
                first = wrap32(self.expr(loop.init, inner, tctx) + tid * loop.step)
                self.loop(loop, inner, tctx, first, wrap32(w * loop.step))
            else:
                self.stmt(s.body, inner, tctx)

    def cond(self, c: Cond, env: dict, ctx: _Ctx) -> bool:
        left = self.expr(c.left, env, ctx)
        if c.op is None:
            return left != 0
        return _CMP[c.op](left, self.expr(c.right, env, ctx))

    def arith(self, op: str, a: int, b: int) -> int:
        try:
            return c_arith(op, a, b)
        except ZeroDivisionError as e:
            raise OracleError("integer division by zero") from e

    def expr(self, e, env: dict, ctx: _Ctx) -> int:
        if isinstance(e, Num):
            return wrap32(e.value)
        if isinstance(e, (Var, Index)):
            data, i = self.cell(e, env, ctx)
            return data[i]
        if isinstance(e, BinOp):
            a = self.expr(e.left, env, ctx)
            b = self.expr(e.right, env, ctx)
            return self.arith(e.op, a, b)
        if isinstance(e, Neg):
            return wrap32(-self.expr(e.operand, env, ctx))
        if isinstance(e, Call):
            return {
                "omp_get_thread_num": ctx.tid,
                "omp_get_num_threads": ctx.nthreads,
                "omp_get_team_num": ctx.team,
                "omp_get_num_teams": ctx.num_teams,
            }[e.name]
        raise TypeError(type(e))  # pragma: no cover

    def run(self, buffers: dict[str, list[int]], scalars: dict[str, int]) -> dict[str, list[int]]:
        p = self.p
        t = p.target
        maps = {m.name: m for m in t.maps}
        host: dict = {}
        device: dict[str, list[int]] = {}
        for prm in p.params:
            if prm.is_pointer:
                m = maps.get(prm.name)
                n = m.lower + m.length if m else len(buffers.get(prm.name, []))
                data = list(buffers.get(prm.name, []))
                data += [0] * (n - len(data))
                if m is not None:
                    if m.direction == "from":
                        data = data[:m.lower] + [0] * m.length + data[m.lower + m.length:]
                    device[prm.name] = data
                host[prm.symbol.uid] = data
            else:
                if prm.name not in scalars and prm.name in t.sharing:
                    raise OracleError(f"no value for scalar parameter '{prm.name}'")
                host[prm.symbol.uid] = [wrap32(scalars.get(prm.name, 0))]
        hctx = _Ctx(0, self.num_teams, 0, 1)
        for s in p.host:
            self.enter(host, s)
        for s in p.host:
            self.stmt(s, host, hctx)
        for team in range(self.num_teams):
            env = {}
            for uid, cell in host.items():
                sym = p.symbols[uid]
                # firstprivate scalars are copied per team, mapped arrays are shared
                env[uid] = cell if sym.kind == "pointer" else list(cell)
            ctx = _Ctx(team, self.num_teams, 0, 1)
            self.enter(env, t.body)
            if t.teams is not None:
                self.enter(env, t.teams.body)
            self.stmt(t.body, env, ctx)
            if t.teams is not None:
                self.stmt(t.teams.body, env, ctx)
        out = {}
        for name, m in maps.items():
            out[name] = device[name] if m.direction in ("from", "tofrom") else list(buffers.get(name, []))
        return out


def _declared(stmt) -> list:
    out = []

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


def sequential_oracle(
    program: Program,
    buffers: dict[str, list[int]] | None = None,
    scalars: dict[str, int] | None = None,
    num_teams: int | None = None,
    thread_limit: int | None = None,
    step_limit: int = 5_000_000,
) -> dict[str, list[int]]:
    """Reference outputs of every mapped buffer of a sharing-resolved program."""
    teams = program.target.teams
    nt = num_teams or (teams.num_teams if teams and teams.num_teams else 1)
    w = thread_limit or (teams.thread_limit if teams and teams.thread_limit else None)
    if w is None:
        raise OracleError("no thread_limit in the source; pass one explicitly")
    return _Oracle(program, nt, w, step_limit).run(buffers or {}, scalars or {})


__all__ = ["OracleError", "SharingAttribute", "sequential_oracle"]
