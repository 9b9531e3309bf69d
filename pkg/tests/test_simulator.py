from __future__ import annotations

import pytest

from helpers import corpus, frontend, lowered, zeros
from omplab.codegen import generate_kernel
from omplab.ir import I32
from omplab.lowering import PASSES, PipelineState, SharedSet
from omplab.oracle import sequential_oracle
from omplab.simulator import (
    TAG_LOCAL,
    TAG_SHARED,
    LaunchConfig,
    Simulator,
    SimTrap,
    decode,
    encode,
    launch,
    trace,
)


def run(name: str, defines: dict[str, int] | None = None, **kw):
    prog, _, _ = frontend(corpus(name), defines)
    st = lowered(corpus(name), defines)
    info = st.module.targets[0]
    cfg = LaunchConfig(info.num_teams, info.thread_limit)
    return prog, launch(st.module, cfg, zeros(prog), **kw)


def regions_source(count: int, workers: int) -> str:
    body = "\n".join(
        f"    x = x + {k};\n    #pragma omp parallel\n    {{\n      a[omp_get_thread_num()] += x;\n    }}"
        for k in range(1, count + 1)
    )
    return (
        f"void regions(int *a) {{\n  #pragma omp target map(tofrom: a[:{workers}])\n"
        f"  #pragma omp teams num_teams(1) thread_limit({workers})\n  {{\n    int x = 0;\n{body}\n  }}\n}}\n"
    )


def test_address_encoding_round_trips():
    assert decode(encode(TAG_SHARED, 3, 0x40)) == (TAG_SHARED, 3, 0x40)
    assert decode(encode(TAG_LOCAL, 70000, 8)) == (TAG_LOCAL, 70000, 8)


def test_launch_config():
    assert LaunchConfig(2, 8).team_size == 40
    with pytest.raises(ValueError):
        LaunchConfig(0, 8)
    with pytest.raises(ValueError):
        LaunchConfig(1, 1000)


def test_fig1b_gives_all_ones():
    _, r = run("fig1b")
    assert r.outputs["a"] == [1] * 16


def test_fig5_adds_the_sum_of_increments():
    prog, r = run("fig5")
    s = sum(range(1, 8))
    assert r.outputs["a"] == [s] * 192
    assert r.outputs == sequential_oracle(prog, zeros(prog))


def test_fig6_adds_ten():
    prog, r = run("fig6")
    assert r.outputs["a"] == [10] * 192
    assert r.outputs == sequential_oracle(prog, zeros(prog))


def test_inputs_are_copied_in():
    st = lowered(corpus("fig1b"))
    r = launch(st.module, LaunchConfig(2, 8), {"a": list(range(16))})
    assert r.outputs["a"] == [i + 1 for i in range(16)]


@pytest.mark.parametrize("team_size", [33, 64, 128, 256])
@pytest.mark.parametrize("count", [1, 2, 3])
def test_no_deadlock(team_size, count):
    workers = team_size - 32
    st = lowered(regions_source(count, workers))
    r = launch(st.module, LaunchConfig(1, workers), {"a": [0] * workers})
    # x takes 1, 3, 6 before each region
    assert r.outputs["a"] == [sum(k * (k + 1) // 2 for k in range(1, count + 1))] * workers
    assert r.barriers[(0, "master")] == 2 * count + 1
    assert r.barriers[(0, "worker")] == workers * (2 * count + 1)
    assert (0, "inactive") not in r.barriers
    assert r.leaked_heap_bytes == 0


def test_workers_read_the_latest_master_write():
    st = lowered(regions_source(2, 2))
    r = trace(st.module, LaunchConfig(1, 2), {"a": [0, 0]})
    assert r.outputs["a"] == [1 + 3] * 2
    # every worker load of x inside a region sees the value the master stored just before it
    last_store: dict[str, str] = {}
    master = 2
    for e in r.events:
        if e.event == "shared-store" and e.thread == master:
            off, v = e.detail.split()
            last_store[off] = v
        elif e.event == "shared-load" and e.thread < master:
            off, v = e.detail.split()
            if off in last_store:
                assert v == last_store[off]


def test_exactly_one_thread_runs_sequential_code():
    _, r = run("fig5")
    master = 96
    assert r.sequential_threads == {0: {master}, 1: {master}}


def test_trace_shows_two_master_barriers_per_region():
    st = lowered(corpus("fig1b_bare"))
    r = trace(st.module, LaunchConfig(1, 4))
    master_barriers = [e.detail for e in r.events if e.event == "barrier" and e.thread == 4]
    assert master_barriers == ["master par.0.entry", "master par.0.entry", "master master.deinit"]
    assert sum(e.event == "wrapper" for e in r.events) == 4


def test_no_regions_means_no_wrapper_calls():
    _, r = run("empty_target")
    assert r.wrapper_calls == 0
    assert r.outputs["a"] == [42] * len(r.outputs["a"])


def test_trace_lines_are_tab_separated():
    st = lowered(corpus("fig1b_bare"))
    r = trace(st.module, LaunchConfig(1, 1))
    for line in r.trace_lines():
        step, team, thread, event, _ = line.split("\t")
        assert step.isdigit() and team == "0" and int(thread) >= -1 and event
    calls = [e.detail for e in r.events if e.event == "call"]
    assert calls[0].startswith("init(") and "deinit()" in calls
    # workers learn about termination after the master's deinit
    assert calls[calls.index("deinit()") + 1].startswith("parallel(")


def test_runtime_events_follow_the_protocol():
    st = lowered(regions_source(2, 3))
    r = launch(st.module, LaunchConfig(1, 3), {"a": [0] * 3})
    calls = [e.call for e in r.runtime_events]
    assert calls[0] == "kernel_init"
    assert calls.count("prepare_parallel") == 2
    assert calls.count("end_parallel") == 6
    assert calls[-1] == "kernel_parallel"


def test_overflow_list_is_released():
    prog, r = run("scalars_32", {"TEAMS": 1, "WORKERS": 4})
    assert r.max_dynamic_bytes == 8 * 32
    assert r.leaked_heap_bytes == 0
    assert r.outputs == sequential_oracle(prog, zeros(prog))


def test_failed_list_allocation_traps():
    st = lowered(corpus("scalars_32"), {"TEAMS": 1, "WORKERS": 4})
    with pytest.raises(SimTrap) as e:
        launch(st.module, LaunchConfig(1, 4), {"a": [0] * 4}, heap_bytes=64)
    assert e.value.kind == "malloc"


def test_small_prealloc_table_forces_dynamic_lists():
    prog, _, _ = frontend(corpus("fig5"), {"TEAMS": 1, "WORKERS": 2})
    st = lowered(corpus("fig5"), {"TEAMS": 1, "WORKERS": 2})
    r = launch(st.module, LaunchConfig(1, 2), zeros(prog), prealloc_entries=4)
    assert r.max_dynamic_bytes == 64 and r.outputs["a"] == [28, 28]


def _without_sharing():
    """fig1b_bare lowered as if detection found nothing: c stays in the local depot."""
    _, m, _ = frontend(corpus("fig1b_bare"))
    m, _ = generate_kernel(m)
    state = PipelineState(m)
    state.shared = {f.name: SharedSet() for f in m.functions}
    for p in ("isel", "build-depots", "lower-shared-frame-indices"):
        PASSES[p].run(state)
    return state.module


def test_private_address_handed_to_workers_traps():
    with pytest.raises(SimTrap) as e:
        launch(_without_sharing(), LaunchConfig(1, 2))
    assert e.value.kind == "address-space" and "local memory owned by thread" in str(e.value)


def test_shared_memory_of_another_team_traps():
    st = lowered(corpus("fig1b"))
    sim = Simulator(st.module, LaunchConfig(2, 8), {"a": [0] * 16})
    sim.run()
    sim.team = 1
    th = type("T", (), {"tid": 0, "gtid": 40})()
    with pytest.raises(SimTrap, match="shared memory of team 0"):
        sim.load(th, encode(TAG_SHARED, 0, 0), I32)


def test_missing_inputs_trap_at_launch():
    st = lowered(corpus("fig1b"))
    with pytest.raises(SimTrap, match="no input"):
        launch(st.module, LaunchConfig(2, 8), {})
    with pytest.raises(SimTrap, match="map needs"):
        launch(st.module, LaunchConfig(2, 8), {"a": [0]})


def test_step_limit_traps():
    st = lowered(corpus("fig5"))
    with pytest.raises(SimTrap) as e:
        launch(st.module, LaunchConfig(2, 96), {"a": [0] * 192}, step_limit=100)
    assert e.value.kind == "step-limit"


def test_runs_are_deterministic():
    st = lowered(corpus("fig6"), {"TEAMS": 1, "WORKERS": 4})
    a = trace(st.module, LaunchConfig(1, 4), {"a": [0] * 4})
    b = trace(st.module, LaunchConfig(1, 4), {"a": [0] * 4})
    assert a.trace_lines() == b.trace_lines() and a.steps == b.steps
