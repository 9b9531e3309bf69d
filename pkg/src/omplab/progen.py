"""Random generator of data-race-free ``.ompk`` programs.

Every generated program maps one output buffer ``a`` of ``TEAMS*WORKERS``
elements. Parallel regions only read shared values and write either their
own private variables or the element ``a[team*WORKERS + k]`` owned by the
current worker (``k`` is the thread id, or the loop index of a
``parallel for`` over ``[0, WORKERS)``). Sequential code between regions
may read back any element of its own team's slice. That makes every fair
interleaving produce the same result, so the sequential oracle is exact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

TID = "omp_get_thread_num()"
TEAM = "omp_get_team_num()"


@dataclass
class GeneratedProgram:
    seed: int
    source: str
    teams: int
    workers: int
    scalars: dict[str, int]

    @property
    def buffers(self) -> dict[str, list[int]]:
        return {"a": [0] * (self.teams * self.workers)}


class _Gen:
    def __init__(self, rng: random.Random, teams: int, workers: int):
        self.rng = rng
        self.teams = teams
        self.workers = workers
        self.lines: list[str] = []
        self.depth = 1
        self.counter = 0

    def emit(self, line: str) -> None:
        self.lines.append("  " * self.depth + line)

    def fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    def expr(self, leaves: list[str], depth: int = 2) -> str:
        r = self.rng
        if depth == 0 or r.random() < 0.3:
            if leaves and r.random() < 0.7:
                return r.choice(leaves)
            v = r.randint(-9, 9)
            return f"({v})" if v < 0 else str(v)
        kind = r.random()
        a = self.expr(leaves, depth - 1)
        if kind < 0.6:
            op = r.choice("+-*")
            return f"({a} {op} {self.expr(leaves, depth - 1)})"
        if kind < 0.85:
            op = r.choice("/%")
            d = r.choice([k for k in range(-5, 6) if k != 0])
            return f"({a} {op} {d})" if d > 0 else f"({a} {op} ({d}))"
        return f"-({a})"

    def cond(self, leaves: list[str]) -> str:
        op = self.rng.choice(["<", "<=", ">", ">=", "==", "!="])
        return f"{self.expr(leaves, 1)} {op} {self.expr(leaves, 1)}"

    def slot(self, k: str) -> str:
        return f"a[{TEAM} * WORKERS + {k}]"

    def array_read(self, arrays: list[tuple[str, int]], index: str) -> list[str]:
        return [f"{name}[({index}) % {size}]" for name, size in arrays]

    def sequential(self, scalars: list[str], arrays: list[tuple[str, int]]) -> None:
        """Master-only statements; may update team scalars and read the team slice."""
        r = self.rng
        if not scalars:
            return
        for _ in range(r.randint(0, 2)):
            target = r.choice(scalars)
            reads = scalars + [TEAM] + [f"{n}[{r.randrange(s)}]" for n, s in arrays]
            choice = r.random()
            if choice < 0.3:
                self.emit(f"{target} += {self.slot(str(r.randrange(self.workers)))};")
            elif choice < 0.5:
                self.emit(f"if ({self.cond(reads)}) {{")
                self.depth += 1
                self.emit(f"{target} = {self.expr(reads)};")
                self.depth -= 1
                self.emit("} else {")
                self.depth += 1
                self.emit(f"{target} -= {self.expr(reads, 1)};")
                self.depth -= 1
                self.emit("}")
            elif choice < 0.7:
                i = self.fresh("k")
                self.emit(f"for (int {i} = 0; {i} < {r.randint(1, 4)}; {i}++) {{")
                self.depth += 1
                self.emit(f"{target} = {self.expr(reads + [i], 1)};")
                self.depth -= 1
                self.emit("}")
            else:
                self.emit(f"{target} {r.choice(['=', '+=', '*='])} {self.expr(reads)};")

    def region(self, shared: list[str], arrays: list[tuple[str, int]]) -> None:
        r = self.rng
        is_for = r.random() < 0.5
        if is_for:
            i = self.fresh("i")
            self.emit("#pragma omp parallel for")
            self.emit(f"for (int {i} = 0; {i} < WORKERS; {i}++) {{")
            own = i
        else:
            self.emit("#pragma omp parallel")
            self.emit("{")
            own = TID
        self.depth += 1
        leaves = shared + [own, TEAM, "omp_get_num_threads()"] + self.array_read(arrays, own)
        privates = []
        for _ in range(r.randint(0, 2)):
            p = self.fresh("p")
            self.emit(f"int {p} = {self.expr(leaves)};")
            privates.append(p)
            leaves.append(p)
        if privates and r.random() < 0.4:
            p = r.choice(privates)
            self.emit(f"if ({self.cond(leaves)}) {{")
            self.depth += 1
            self.emit(f"{p} = {self.expr(leaves)};")
            self.depth -= 1
            self.emit("}")
        if privates and r.random() < 0.3:
            j = self.fresh("j")
            p = r.choice(privates)
            self.emit(f"for (int {j} = 0; {j} < {r.randint(1, 3)}; {j}++) {{")
            self.depth += 1
            self.emit(f"{p} += {self.expr(leaves + [j], 1)};")
            self.depth -= 1
            self.emit("}")
        op = r.choice(["=", "+=", "-="])
        self.emit(f"{self.slot(own)} {op} {self.expr(leaves)};")
        self.depth -= 1
        self.emit("}")

    def program(self, name: str, use_param: bool) -> str:
        r = self.rng
        head = [f"#define TEAMS {self.teams}", f"#define WORKERS {self.workers}"]
        params = "int *a, int n" if use_param else "int *a"
        out = head + [f"void {name}({params}) {{"]
        host = []
        for _ in range(r.randint(0, 2)):
            h = self.fresh("h")
            out.append(f"  int {h} = {r.randint(0, 40) - 20};")
            host.append(h)
        if use_param:
            host.append("n")
        out.append("  #pragma omp target map(tofrom: a[:TEAMS*WORKERS])")
        out.append("  #pragma omp teams num_teams(TEAMS) thread_limit(WORKERS)")
        out.append("  {")
        self.depth = 2
        scalars = []
        for _ in range(r.randint(0, 3)):
            s = self.fresh("s")
            self.emit(f"int {s} = {self.expr(host + scalars + [TEAM], 1)};")
            scalars.append(s)
        arrays = []
        if r.random() < 0.5:
            name_, size = self.fresh("arr"), r.randint(1, 6)
            i = self.fresh("k")
            self.emit(f"int {name_}[{size}];")
            self.emit(f"for (int {i} = 0; {i} < {size}; {i}++) {{")
            self.depth += 1
            self.emit(f"{name_}[{i}] = {self.expr(host + scalars + [i, TEAM], 1)};")
            self.depth -= 1
            self.emit("}")
            arrays.append((name_, size))
        for _ in range(r.randint(1, 3)):
            self.sequential(scalars, arrays)
            self.region(host + scalars, arrays)
        self.sequential(scalars, arrays)
        if scalars and r.random() < 0.5:
            self.emit(f"{self.slot('0')} += {r.choice(scalars)};")
        out += self.lines
        out += ["  }", "}"]
        return "\n".join(out) + "\n"


def generate_program(seed: int, teams: int | None = None, workers: int | None = None) -> GeneratedProgram:
    """Deterministic race-free program for ``seed``."""
    rng = random.Random(seed)
    t = teams or rng.choice([1, 2, 3])
    w = workers or rng.choice([1, 2, 4, 8])
    use_param = rng.random() < 0.3
    src = _Gen(rng, t, w).program(f"gen{seed}", use_param)
    scalars = {"n": rng.randint(-50, 50)} if use_param else {}
    return GeneratedProgram(seed, src, t, w, scalars)


def generate_programs(count: int, seed: int = 0) -> list[GeneratedProgram]:
    return [generate_program(seed + k) for k in range(count)]
