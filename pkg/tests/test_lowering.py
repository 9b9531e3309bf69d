from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import codegen, corpus, lowered
from omplab.codegen import generate_kernel, shared_arg_stores
from omplab.ir import BaseReg, FrameIndex, Opcode, parse_ir, validate
from omplab.lowering import (
    PASSES,
    PIPELINES,
    LoweringError,
    PassManager,
    PassOrderError,
    build_depots,
    color_stack_slots,
    depot_manifest,
    detect_address_taken,
    detect_per_alloca,
    insert_cast_round_trips,
    live_ranges,
    lower_frame_indices,
    misordered_pipeline,
    run_pipeline,
    select_instructions,
    shared_frame_indices,
)
from omplab.frontend import compile_source
from omplab.oracle import sequential_oracle
from omplab.simulator import LaunchConfig, SimTrap, launch

CORPUS_NAMES = [
    "fig1b", "fig1b_bare", "fig5", "fig6", "scalars_1", "scalars_64", "arrays_1", "arrays_4",
    "coloring_bug", "empty_target",
]


def func(text: str):
    m = parse_ir(text)
    assert validate(m) == []
    return m.functions[0]


# -- random small functions ----------------------------------------------------------

# an op is (kind, operand choice); operand choices index into the pointer values so far
OPS = st.lists(
    st.tuples(st.sampled_from(["alloca", "array", "bitcast", "gep", "store_ptr", "store_val"]), st.integers(0, 50)),
    min_size=1, max_size=10,
)


def build(ops) -> str:
    """Well-typed function text from an op list; pointer values are i32*, [4 x i32]* or i8*."""
    lines: list[str] = []
    values: list[tuple[str, str]] = []
    n = 0
    for kind, pick in ops:
        if kind in ("alloca", "array") or not values:
            t = "[4 x i32]" if kind == "array" else "i32"
            lines.append(f"  %v{n} = alloca {t}, align 4")
            values.append((f"v{n}", t + "*"))
            n += 1
            continue
        name, t = values[pick % len(values)]
        if kind == "bitcast":
            lines.append(f"  %v{n} = bitcast {t} %{name} to i8*")
            values.append((f"v{n}", "i8*"))
            n += 1
        elif kind == "gep" and t != "i8*":
            lines.append(f"  %v{n} = getelement i32*, {t} %{name}, i32 {pick % 3}")
            values.append((f"v{n}", "i32*"))
            n += 1
        elif kind == "store_ptr" and t in ("i8*", "i32*"):
            sink = "%s8" if t == "i8*" else "%s32"
            lines.append(f"  store {t} %{name}, {t}* {sink}")
        elif kind == "store_val" and t == "i32*":
            lines.append(f"  store i32 {pick}, i32* %{name}")
    body = "\n".join(lines)
    return f"define void @f(i8** %s8, i32** %s32) {{\nentry:\n{body}\n  ret void\n}}\n"


def brute_force_shared(text: str) -> set[str]:
    """Walk each stored value back through its definitions to the alloca it came from."""
    defs: dict[str, str | None] = {}
    stored: list[str] = []
    for line in text.splitlines():
        words = line.replace(",", " ").split()
        if len(words) > 2 and words[1] == "=":
            res = words[0][1:]
            defs[res] = None if words[2] == "alloca" else next(w[1:] for w in words[3:] if w.startswith("%"))
        elif words and words[0] == "store":
            stored.append(words[2])
    out = set()
    for v in stored:
        if not v.startswith("%"):
            continue
        name = v[1:]
        while name in defs and defs[name] is not None:
            name = defs[name]
        if name in defs:
            out.add(name)
    return out


@settings(max_examples=300, deadline=None)
@given(OPS)
def test_detection_matches_brute_force(ops):
    text = build(ops)
    f = func(text)
    expected = brute_force_shared(text)
    assert set(detect_address_taken(f).members) == expected
    assert set(detect_per_alloca(f).members) == expected


@settings(max_examples=100, deadline=None)
@given(OPS)
def test_cast_round_trips_count(ops):
    f = func(build(ops))
    shared = detect_address_taken(f)
    before = sum(i.opcode is Opcode.ADDRSPACECAST for i in f.instructions())
    insert_cast_round_trips(f, shared)
    insts = list(f.instructions())
    assert sum(i.opcode is Opcode.ADDRSPACECAST for i in insts) == before + 2 * len(shared)
    for k, inst in enumerate(insts):
        if inst.opcode is Opcode.ALLOCA and inst.result in shared:
            a, b = insts[k + 1], insts[k + 2]
            assert a.opcode is b.opcode is Opcode.ADDRSPACECAST
            assert a.operands[0].ref == inst.result and b.operands[0].ref == a.result
            # the only direct user left is the cast to shared memory
            assert [i for i in insts if inst.result in [o.ref for o in i.operands]] == [a]


# -- detection ----------------------------------------------------------------


def test_fig1b_c_is_shared_and_loop_counter_is_not():
    m, _ = codegen(corpus("fig1b_bare"))
    assert "c" in detect_address_taken(m.kernels()[0])
    m, _ = codegen(corpus("arrays_1"))
    shared = detect_address_taken(m.kernels()[0])
    assert "i" not in shared and {"d1", "a.addr"} <= set(shared.members)


def test_store_through_bitcast_alias_is_shared():
    f = func(
        "define void @f(i8** %s) {\nentry:\n  %x = alloca i32, align 4\n  %y = alloca i32, align 4\n"
        "  %p = bitcast i32* %x to i8*\n  store i8* %p, i8** %s\n  store i32 3, i32* %y\n  ret void\n}\n"
    )
    assert detect_address_taken(f).sorted() == ["x"]
    assert detect_address_taken(f).aliases["p"] == "x"


def test_storing_an_element_address_shares_the_whole_array():
    f = func(
        "define void @f(i32** %s) {\nentry:\n  %d = alloca [4 x i32], align 4\n"
        "  %e = getelement i32*, [4 x i32]* %d, i32 2\n  store i32* %e, i32** %s\n  ret void\n}\n"
    )
    assert detect_address_taken(f).sorted() == ["d"]


@pytest.mark.parametrize("name", CORPUS_NAMES)
def test_o0_and_default_agree_on_shared_sets(name):
    a = lowered(corpus(name))
    b = lowered(corpus(name), pipeline="O0")
    assert a.shared == b.shared
    assert depot_manifest(a)["slot_sizes"] == depot_manifest(b)["slot_sizes"]


@pytest.mark.parametrize("name", CORPUS_NAMES)
def test_detection_covers_every_stored_capture(name):
    m, _ = codegen(corpus(name))
    k = m.kernels()[0]
    stored = {v for vs in shared_arg_stores(k).values() for v in vs}
    assert stored <= set(detect_address_taken(k).members)


# -- depots ---------------------------------------------------------------------


@pytest.mark.parametrize("name,stack", [
    ("fig1b_bare", 24), ("fig1b", 32), ("scalars_1", 24), ("scalars_8", 80), ("scalars_64", 528),
    ("arrays_1", 408), ("arrays_4", 1560), ("fig5", 80), ("fig6", 408),
])
def test_depot_sizes(name, stack):
    st_ = lowered(corpus(name))
    k = st_.module.kernels()[0]
    assert k.layout.total_local_bytes == k.layout.total_shared_bytes == stack
    assert all(s.offset % 8 == 0 and s.size % 8 == 0 for s in k.layout.slots)


def test_runtime_out_params_stay_local():
    k = lowered(corpus("fig1b_bare")).module.kernels()[0]
    residency = {k.frame_object(s.frame_indices[0]).origin: s.shared for s in k.layout.slots}
    assert residency == {"c": True, "work_fn.addr": False, "args.addr": False}


def test_build_depots_mirrors_and_rounds_slots():
    f = parse_ir(
        "declare void @use(i8*)\n"
        "define void @f(i32** %s) {\nentry:\n  %x = alloca i32, align 4\n  %b = alloca i8, align 1\n"
        "  store i32* %x, i32** %s\n  call void @use(i8* %b)\n  ret void\n}\n"
    ).function("f")
    shared = detect_address_taken(f)
    mf = select_instructions(f, {"x", "b"})
    lay = build_depots(mf, shared)
    assert [(s.offset, s.size, s.shared) for s in lay.slots] == [(0, 8, True), (8, 8, False)]
    assert lay.total_local_bytes == lay.total_shared_bytes == 16


# -- frame index lowering ----------------------------------------------------------


def test_shared_cast_rebases_every_use():
    k = lowered(corpus("fig1b")).module.kernels()[0]
    shared = shared_frame_indices(k)
    origins = {k.frame_object(i).origin for i in shared}
    assert origins == {"c", "a.addr"}
    for inst in k.instructions():
        for o in inst.operands:
            if isinstance(o.value, FrameIndex):
                assert (o.value.base is BaseReg.SHARED) == (o.value.index in shared)


def _ambiguous():
    m = parse_ir(
        "define void @f(i32** %s) {\nentry:\n  %c = alloca i32, align 4\n"
        "  %c.s = addrspacecast i32* %c to i32 addrspace(3)*\n  store i32 1, i32* %c\n  ret void\n}\n"
    )
    f = m.function("f")
    mf = select_instructions(f, {"c"})
    return mf, build_depots(mf, detect_address_taken(f))


def test_ambiguous_residency_is_raised():
    mf, lay = _ambiguous()
    with pytest.raises(LoweringError) as e:
        lower_frame_indices(mf, lay)
    assert e.value.rule == "ambiguous-residency" and "%c" in e.value.message


def test_ambiguous_residency_can_be_collected():
    mf, lay = _ambiguous()
    sink: list = []
    lower_frame_indices(mf, lay, sink)
    assert [d.rule for d in sink] == ["ambiguous-residency"]


def test_never_cast_index_stays_local():
    k = lowered(corpus("fig1b_bare")).module.kernels()[0]
    locals_ = {k.frame_object(s.frame_indices[0]).origin for s in k.layout.slots if not s.shared}
    assert locals_ == {"work_fn.addr", "args.addr"}


@pytest.mark.parametrize("name", CORPUS_NAMES)
def test_no_frame_index_uses_both_bases(name):
    for mf in lowered(corpus(name)).machine_functions():
        bases: dict[int, set] = {}
        for inst in mf.instructions():
            for o in inst.operands:
                if isinstance(o.value, FrameIndex):
                    bases.setdefault(o.value.index, set()).add(o.value.base)
        assert all(len(b) == 1 for b in bases.values())


# -- coloring ---------------------------------------------------------------------

USE_TEXT = "declare void @use(i32*)\n"


def straight_line(order: list[int], nslots: int) -> str:
    body = [f"  %t{k} = alloca i32, align 4" for k in range(nslots)]
    body += [f"  call void @use(i32* %t{k})" for k in order]
    return USE_TEXT + "define void @f() {\nentry:\n" + "\n".join(body) + "\n  ret void\n}\n"


def intervals(order: list[int], nslots: int) -> dict[str, tuple[int, int]]:
    out = {}
    for k in range(nslots):
        pos = [p for p, v in enumerate(order) if v == k]
        if pos:
            out[f"t{k}"] = (pos[0], pos[-1])
    return out


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: st.tuples(st.just(n), st.lists(st.integers(0, n - 1), min_size=1, max_size=15))))
def test_coloring_never_merges_interfering_slots(case):
    n, order = case
    f = parse_ir(straight_line(order, n)).function("f")
    used = {f"t{k}" for k in order}
    mf = select_instructions(f, used)
    lay = build_depots(mf, detect_address_taken(f))
    colored = color_stack_slots(mf, lay)
    iv = intervals(order, n)
    for s in colored.slots:
        names = [mf.frame_object(i).origin for i in s.frame_indices]
        for a in names:
            for b in names:
                if a < b:
                    (a0, a1), (b0, b1) = iv[a], iv[b]
                    assert a1 < b0 or b1 < a0, (a, b, order)
    assert colored.total_local_bytes == colored.total_shared_bytes <= lay.total_local_bytes
    # first-fit over disjoint intervals: slot count equals the greedy colouring count
    groups: list[list[tuple[int, int]]] = []
    for name in sorted(iv, key=lambda x: int(x[1:])):
        for g in groups:
            if all(iv[name][1] < a or b < iv[name][0] for a, b in g):
                g.append(iv[name])
                break
        else:
            groups.append([iv[name]])
    assert len(colored.slots) == len(groups)


def test_disjoint_temporaries_merge():
    f = parse_ir(straight_line([0, 0, 1, 1], 2)).function("f")
    mf = select_instructions(f, {"t0", "t1"})
    lay = build_depots(mf, detect_address_taken(f))
    colored = color_stack_slots(mf, lay)
    assert lay.total_local_bytes == 16 and colored.total_local_bytes == 8
    assert live_ranges(mf)[0] and live_ranges(mf)[1]


def test_single_slot_is_unchanged():
    f = parse_ir(straight_line([0], 1)).function("f")
    mf = select_instructions(f, {"t0"})
    lay = build_depots(mf, detect_address_taken(f))
    assert color_stack_slots(mf, lay) == lay


def test_shared_slot_is_not_merged_with_disjoint_local():
    st_ = lowered(corpus("coloring_bug"))
    k = st_.module.kernels()[0]
    for s in k.layout.slots:
        kinds = {k.frame_object(i).origin in st_.shared[k.name] for i in s.frame_indices}
        assert len(kinds) == 1
    assert st_.diagnostics == []


# -- pass manager -------------------------------------------------------------------


def test_misordered_pipeline_is_rejected():
    with pytest.raises(PassOrderError, match="stack-coloring"):
        PassManager(misordered_pipeline())


def test_unknown_pass_and_dump_are_rejected():
    with pytest.raises(PassOrderError):
        PassManager(["isel", "frobnicate"])
    with pytest.raises(PassOrderError):
        PassManager(PIPELINES["default"], dump_after=("nope",))
    with pytest.raises(PassOrderError):
        run_pipeline(codegen(corpus("fig1b"))[0], "O3")


def test_isel_needs_a_shared_set():
    with pytest.raises(PassOrderError, match="shared-set"):
        PassManager(["isel"])


def test_dump_after_records_text():
    st_ = lowered(corpus("fig1b_bare"), dump_after=("isel", "stack-coloring"))
    assert set(st_.dumps) == {"isel", "stack-coloring"}
    assert "fi#0" in st_.dumps["isel"]
    assert "frame fi#0" in st_.dumps["stack-coloring"]


def test_every_pass_is_in_some_pipeline():
    used = {p for pl in PIPELINES.values() for p in pl}
    assert used == set(PASSES)


@pytest.mark.parametrize("pipeline", ["default", "O0"])
@pytest.mark.parametrize("name", CORPUS_NAMES)
def test_mirror_invariant_after_every_pass(name, pipeline):
    seen = []

    def hook(pass_name, state):
        for mf in state.machine_functions():
            if mf.layout is not None:
                assert mf.layout.total_local_bytes == mf.layout.total_shared_bytes, pass_name
        seen.append(pass_name)

    m, _ = codegen(corpus(name))
    pm = PassManager(PIPELINES[pipeline])
    pm.add_hook(hook)
    pm.run(m)
    assert seen == list(PIPELINES[pipeline])


# -- the ordering regression ------------------------------------------------------------


def _coloring_bug(pipeline, unsafe):
    prog, m, _ = compile_source(corpus("coloring_bug"))
    m, _ = generate_kernel(m)
    pm = PassManager(pipeline, unsafe=unsafe)
    return prog, pm.run(m)


def test_misordered_coloring_overlaps_and_miscompiles():
    prog, st_ = _coloring_bug(misordered_pipeline(), unsafe=True)
    assert "shared-local-overlap" in [d.rule for d in st_.diagnostics]
    with pytest.raises(SimTrap) as e:
        launch(st_.module, LaunchConfig(2, 8), {"a": [0, 0]})
    assert e.value.kind == "overlap"
    r = launch(st_.module, LaunchConfig(2, 8), {"a": [0, 0]}, checked=False)
    assert r.outputs["a"] != sequential_oracle(prog, {"a": [0, 0]})["a"]


def test_correct_order_passes_on_the_same_fixture():
    prog, st_ = _coloring_bug(PIPELINES["default"], unsafe=False)
    assert st_.diagnostics == []
    r = launch(st_.module, LaunchConfig(2, 8), {"a": [0, 0]})
    assert r.outputs["a"] == sequential_oracle(prog, {"a": [0, 0]})["a"] == [7, 7]
