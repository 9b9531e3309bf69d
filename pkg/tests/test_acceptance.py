"""Acceptance criteria 1-8, one PASS/FAIL line each.

Run ``python3 tests/test_acceptance.py`` for the report alone, or through
pytest, where each criterion is also a test.
"""

from __future__ import annotations

import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from helpers import corpus  # noqa: E402
from omplab.codegen import generate_kernel  # noqa: E402
from omplab.frontend import compile_source  # noqa: E402
from omplab.lowering import PIPELINES, PassManager, depot_manifest, misordered_pipeline  # noqa: E402
from omplab.occupancy import (  # noqa: E402
    GPUS,
    DepotManifest,
    array_rows,
    footprint,
    footprint_rows,
    max_vars_rows,
    scalar_rows,
)
from omplab.oracle import sequential_oracle  # noqa: E402
from omplab.progen import generate_programs  # noqa: E402
from omplab.simulator import LaunchConfig, SimTrap, launch  # noqa: E402

K40 = GPUS["k40-16k"]
P100 = GPUS["p100"]


def compile_program(source: str, defines=None, passes=None, unsafe=False, hook=None):
    program, module, _ = compile_source(source, defines)
    module, _ = generate_kernel(module)
    pm = PassManager(passes or PIPELINES["default"], unsafe=unsafe)
    if hook:
        pm.add_hook(hook)
    return program, pm.run(module)


def oracle_equal(source, defines, teams, workers, buffers, scalars=None) -> bool:
    program, state = compile_program(source, defines)
    got = launch(state.module, LaunchConfig(teams, workers), buffers, scalars).outputs
    return got == sequential_oracle(program, buffers, scalars, teams, workers)


# -- criteria ----------------------------------------------------------------


def criterion_1():
    start = time.perf_counter()
    want = [(24, 160, 49, 233), (32, 160, 49, 241), (48, 160, 49, 257), (80, 160, 49, 289),
            (144, 160, 49, 353), (272, 160, 49, 481), (528, 160, 49, 737)]
    rows = footprint_rows("scalars")
    # the compiled scalar programs must give the same stacks as the fixtures
    compiled = [
        footprint(DepotManifest.from_pipeline(depot_manifest(compile_program(corpus(f"scalars_{n}"))[1])))
        for n in (1, 2, 4, 8, 16, 32, 64)
    ]
    elapsed = time.perf_counter() - start
    got = [tuple(r[1:]) for r in rows]
    from_programs = [(f.stack_bytes, f.prealloc_bytes, f.private_bytes, f.total_bytes) for f in compiled]
    ok = got == want and from_programs == want and elapsed < 1.0
    return ok, f"rows {got}; compiled {'equal' if from_programs == want else from_programs}; {elapsed:.2f}s"


def criterion_2():
    want = [617, 1001, 1385, 1769]
    got = [r[-1] for r in footprint_rows("arrays")]
    compiled = [
        footprint(DepotManifest.from_pipeline(depot_manifest(compile_program(corpus(f"arrays_{k}"))[1]))).total_bytes
        for k in (1, 2, 3, 4)
    ]
    return got == want and compiled == want, f"totals {got}; compiled {compiled}"


def criterion_3():
    k40 = [(r[2], r[4], r[5]) for r in scalar_rows(K40)]
    p100 = [(r[4], r[5]) for r in scalar_rows(P100)]
    want_k40 = [(0, 14, 3262), (0, 14, 3374), (0, 14, 3598), (0, 14, 4046), (0, 12, 4236), (256, 7, 3367),
                (512, 3, 2211)]
    want_p100 = [(16, 3728), (16, 3856), (16, 4112), (16, 4624), (12, 4236), (7, 3367), (3, 2211)]
    regs_ok = [r[3] for r in scalar_rows(K40)] == [36, 36, 36, 36, 40, 72, 136] and \
        [r[3] for r in scalar_rows(P100)] == [31, 31, 31, 31, 40, 71, 135]
    return k40 == want_k40 and p100 == want_p100 and regs_ok, f"K40 {k40}; P100 {p100}"


def criterion_4():
    k40 = array_rows(K40)
    p100 = array_rows(P100)
    got = ([r[6] for r in k40], [r[5] for r in k40], [r[6] for r in p100], [r[5] for r in p100])
    want = ([14, 14, 11, 9], [8638, 14014, 19390, 24766], [17, 17, 17, 17], [10489, 17017, 23545, 30073])
    return got == want, f"K40 teams {got[0]} smem {got[1]}; P100 teams {got[2]} smem {got[3]}"


def criterion_5():
    teams, regs, vars_ = (row[1:] for row in max_vars_rows(K40))
    want_regs = [32, 34, 36, 39, 42, 64, 128, 255, 255]
    want_vars = [98, 106, 116, 128, 140, 226, 482, 994, 2018]
    exact = {16, 13, 8, 4, 2, 1}
    vars_ok = all(
        (g == w) if t in exact else abs(g - w) <= 1 for t, g, w in zip(teams, vars_, want_vars)
    )
    off = [(t, g, w) for t, g, w in zip(teams, vars_, want_vars) if g != w]
    return regs == want_regs and vars_ok, f"registers {regs}; variables {vars_}; off by one at {off}"


def criterion_6():
    start = time.perf_counter()
    cases = failures = 0
    for name in ("fig1b", "fig5", "fig6"):
        src = corpus(name)
        for teams in (1, 2, 4):
            for workers in (8, 96):
                defines = {"TEAMS": teams, "WORKERS": workers, "N": workers}
                size = teams * workers
                cases += 1
                failures += not oracle_equal(src, defines, teams, workers, {"a": [0] * size})
    generated = generate_programs(100, seed=1000)
    for g in generated:
        cases += 1
        failures += not oracle_equal(g.source, None, g.teams, g.workers, g.buffers, g.scalars)
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30.0
    return ok, f"{cases - failures}/{cases} cases equal the oracle ({len(generated)} generated); {elapsed:.1f}s"


def criterion_7():
    src = corpus("coloring_bug")
    buffers = {"a": [0, 0]}
    cfg = LaunchConfig(2, 8)
    program, bad = compile_program(src, passes=misordered_pipeline(), unsafe=True)
    overlap = "shared-local-overlap" in [d.rule for d in bad.diagnostics]
    try:
        launch(bad.module, cfg, buffers)
        trapped = False
    except SimTrap as e:
        trapped = e.kind == "overlap"
    wrong = launch(bad.module, cfg, buffers, checked=False).outputs["a"]
    expected = sequential_oracle(program, buffers)["a"]
    _, good = compile_program(src)
    right = launch(good.module, cfg, buffers).outputs["a"]
    ok = overlap and trapped and wrong != expected and right == expected and not good.diagnostics
    return ok, (f"misordered: overlap={overlap} trap={trapped} a={wrong}; "
                f"correct order: a={right}; oracle {expected}")


def criterion_8():
    violations: list[str] = []
    checks = 0

    def hook(pass_name, state):
        nonlocal checks
        for mf in state.machine_functions():
            if mf.layout is not None:
                checks += 1
                if mf.layout.total_local_bytes != mf.layout.total_shared_bytes:
                    violations.append(f"{mf.name} after {pass_name}")

    sources = [corpus(p.stem) for p in sorted((Path(__file__).resolve().parents[1] / "src/omplab/corpus").glob("*.ompk"))]
    sources += [g.source for g in generate_programs(30, seed=5000)]
    for src in sources:
        for pipeline in ("default", "O0"):
            compile_program(src, passes=PIPELINES[pipeline], hook=hook)
    rng = random.Random(8)
    law_failures = 0
    for _ in range(500):
        nargs = rng.randint(0, 128)
        slots = tuple(rng.choice((8, 16, 384)) for _ in range(rng.randint(0, 12)))
        fp = footprint(DepotManifest(slots, nargs))
        law_failures += fp.dynamic_global_bytes != (0 if nargs <= 20 else 8 * nargs)
        law_failures += (fp.dynamic_global_bytes == 0) != (nargs <= 20)
    # compiled kernels sharing a random number of values, checked through the simulator too
    for nargs in sorted(rng.sample(range(0, 129), 6)) + [20, 21]:
        src = shared_values_program(nargs)
        _, state = compile_program(src)
        man = depot_manifest(state)
        fp = footprint(DepotManifest.from_pipeline(man))
        r = launch(state.module, LaunchConfig(1, 2), {"a": [0, 0]})
        expected = 0 if nargs <= 20 else 8 * nargs
        law_failures += man["nargs"] != nargs or fp.dynamic_global_bytes != expected
        law_failures += r.max_dynamic_bytes != expected or r.leaked_heap_bytes != 0
    ok = not violations and law_failures == 0
    return ok, f"{checks} mirror checks, {len(violations)} violations; capacity law failures {law_failures}"


def shared_values_program(nargs: int) -> str:
    """A kernel whose single region captures exactly ``nargs`` values."""
    if nargs == 0:
        body = "    #pragma omp parallel\n    {\n      int y = 1;\n    }\n"
        return ("void k(int *a) {\n  #pragma omp target map(tofrom: a[:2])\n"
                "  #pragma omp teams num_teams(1) thread_limit(2)\n  {\n" + body + "  }\n}\n")
    decls = "".join(f"    int v{i} = {i};\n" for i in range(nargs - 1))
    total = " + ".join(f"v{i}" for i in range(nargs - 1)) or "0"
    return ("void k(int *a) {\n  #pragma omp target map(tofrom: a[:2])\n"
            "  #pragma omp teams num_teams(1) thread_limit(2)\n  {\n" + decls +
            f"    #pragma omp parallel\n    {{\n      a[omp_get_thread_num()] = {total};\n    }}\n  }}\n}}\n")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8]


def report(n: int) -> tuple[bool, str]:
    ok, detail = CRITERIA[n - 1]()
    return ok, f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.mark.parametrize("n", range(1, 9))
def test_criterion(n, capsys):
    ok, line = report(n)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [report(n) for n in range(1, 9)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
