from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from omplab.runtime import (
    PREALLOC_ENTRIES,
    PRIVATE_STATE_BYTES,
    AllocationError,
    Heap,
    ProtocolError,
    dynamic_list_bytes,
    kernel_init,
    prealloc_bytes,
    runtime_reserved_bytes,
)

TABLE = 0x300


def team(workers: int = 4, heap: Heap | None = None, entries: int = PREALLOC_ENTRIES):
    return kernel_init(0, workers + 32, TABLE, heap, entries)


def run_region(rt, nargs: int) -> int:
    master = rt.team_size - 32
    lst = rt.prepare_parallel(master, 0x40, nargs)
    for w in range(rt.num_workers):
        ok, fn, args = rt.kernel_parallel(w)
        assert ok and fn == 0x40 and args == lst
        rt.end_parallel(w)
    return lst


def test_reservation_constants():
    assert prealloc_bytes() == 160
    assert PRIVATE_STATE_BYTES == 49
    assert runtime_reserved_bytes() == 209
    assert runtime_reserved_bytes(0) == 49


@given(st.integers(0, 128))
def test_dynamic_list_law(nargs):
    expected = 0 if nargs <= 20 else 8 * nargs
    assert dynamic_list_bytes(nargs) == expected


def test_small_region_uses_the_preallocated_table():
    rt = team()
    assert run_region(rt, PREALLOC_ENTRIES) == TABLE
    assert rt.heap.live_bytes == 0 and not rt.in_flight


def test_large_region_allocates_and_frees():
    rt = team()
    master = rt.team_size - 32
    lst = rt.prepare_parallel(master, 0x40, 21)
    assert lst != TABLE and rt.dynamic and rt.dynamic_bytes == 168
    assert rt.heap.live_bytes == 168
    for w in range(rt.num_workers):
        rt.kernel_parallel(w)
        rt.end_parallel(w)
        # released only when the last worker finishes
        assert rt.heap.live_bytes == (0 if w == rt.num_workers - 1 else 168)


def test_heap_exhaustion_is_an_allocation_error():
    rt = team(heap=Heap(0x1000, 64))
    with pytest.raises(AllocationError):
        rt.prepare_parallel(rt.team_size - 32, 0x40, 64)


def test_heap_first_fit_reuses_freed_space():
    h = Heap(0, 100)
    a = h.malloc(40)
    b = h.malloc(40)
    h.free(a)
    assert h.malloc(30) == a
    assert h.malloc(20) == b + 40
    with pytest.raises(AllocationError):
        h.malloc(30)
    with pytest.raises(ProtocolError):
        h.free(7)


def test_entries_are_configurable():
    rt = team(entries=2)
    assert rt.prealloc_table_bytes == 16
    rt.prepare_parallel(rt.team_size - 32, 0x40, 3)
    assert rt.dynamic


def test_termination_hands_out_null_work():
    rt = team()
    run_region(rt, 1)
    rt.terminate(rt.team_size - 32)
    assert rt.kernel_parallel(0) == (False, 0, 0)


@pytest.mark.parametrize("misuse", ["prepare_twice", "end_without_begin", "acquire_idle", "terminate_in_flight",
                                    "acquire_twice", "end_twice", "negative_nargs"])
def test_protocol_violations(misuse):
    rt = team()
    m = rt.team_size - 32
    with pytest.raises(ProtocolError):
        if misuse == "prepare_twice":
            rt.prepare_parallel(m, 0x40, 1)
            rt.prepare_parallel(m, 0x40, 1)
        elif misuse == "end_without_begin":
            rt.end_parallel(0)
        elif misuse == "acquire_idle":
            rt.kernel_parallel(0)
        elif misuse == "terminate_in_flight":
            rt.prepare_parallel(m, 0x40, 1)
            rt.terminate(m)
        elif misuse == "acquire_twice":
            rt.prepare_parallel(m, 0x40, 1)
            rt.kernel_parallel(0)
            rt.kernel_parallel(0)
        elif misuse == "end_twice":
            rt.prepare_parallel(m, 0x40, 1)
            rt.end_parallel(0)
            rt.end_parallel(0)
        else:
            rt.prepare_parallel(m, 0x40, -1)


def test_reinit_clears_state():
    rt = team()
    run_region(rt, 1)
    rt.terminate(rt.team_size - 32)
    rt.kernel_init(rt.team_size - 32, rt.team_size)
    assert not rt.finished and rt.work_fn == 0 and rt.initialized


def test_event_log_lines():
    rt = team(workers=1)
    run_region(rt, 2)
    lines = [str(e) for e in rt.events]
    assert lines == [
        "0\t1\tkernel_init\t33",
        "0\t1\tprepare_parallel\t0x40 2 prealloc",
        "0\t0\tkernel_parallel\t0x40 1",
        "0\t0\tend_parallel\t",
    ]


@given(st.lists(st.integers(0, 128), min_size=1, max_size=6), st.integers(1, 8))
def test_regions_never_leak(nargs_seq, workers):
    rt = team(workers)
    peak = 0
    for n in nargs_seq:
        run_region(rt, n)
        peak = max(peak, dynamic_list_bytes(n))
        assert rt.heap.live_bytes == 0
    assert peak == max(dynamic_list_bytes(n) for n in nargs_seq)
