from __future__ import annotations

import json
import subprocess
import sys

import pytest

from omplab.cli import main
from omplab.progen import generate_program


def omplab(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_corpus_listing(capsys):
    code, out, _ = omplab(capsys, "corpus")
    names = [line.split("\t")[0] for line in out.splitlines()]
    assert code == 0 and "corpus:fig1b" in names and "corpus:coloring_bug" in names


def test_compile_writes_module_and_manifest(capsys, tmp_path):
    code, out, _ = omplab(capsys, "compile", "corpus:fig1b_bare", "--out-dir", str(tmp_path))
    assert code == 0
    assert "shared set: %c" in out and "stack=24 total=233 nargs=1 dynamic=0" in out
    man = json.loads((tmp_path / "fig1b_bare.manifest.json").read_text())
    assert man["stack"] == 24 and man["footprint"]["total_bytes"] == 233
    assert (tmp_path / "fig1b_bare.sir").read_text().startswith("target @__omp_offloading_fig1b_bare")


def test_o0_pipeline_reports_the_same_shared_set(capsys, tmp_path):
    outs = []
    for pipeline in ("default", "O0"):
        code, out, _ = omplab(capsys, "compile", "corpus:fig1b", "--pipeline", pipeline, "--out-dir", str(tmp_path))
        assert code == 0
        outs.append([line for line in out.splitlines() if line.startswith("shared set")])
    assert outs[0] == outs[1] == ["shared set: %a.addr %c"]


def test_compile_defines_and_dumps(capsys, tmp_path):
    code, out, _ = omplab(capsys, "compile", "corpus:scalars_8", "-D", "WORKERS=4", "--dump-after", "isel",
                          "--out-dir", str(tmp_path))
    assert code == 0 and "; after isel" in out and "stack=80" in out


def test_dump_ast_is_json(capsys, tmp_path):
    code, out, _ = omplab(capsys, "compile", "corpus:fig1b_bare", "--dump-ast", "--out-dir", str(tmp_path))
    assert code == 0
    tree = json.loads(out[:out.index("\nwrote ") + 1])
    assert isinstance(tree, dict)


def test_syntax_errors_are_diagnostics(capsys, tmp_path):
    bad = tmp_path / "bad.ompk"
    bad.write_text("void f(int *a) {\n  int x = ;\n}\n")
    code, _, err = omplab(capsys, "compile", str(bad), "--out-dir", str(tmp_path))
    assert code == 2 and err.startswith(f"{bad}:2:")


def test_run_fig1b_matches_the_oracle(capsys):
    code, out, _ = omplab(capsys, "run", "corpus:fig1b", "--check-oracle")
    assert code == 0
    assert out.splitlines() == ["a: " + " ".join(["1"] * 16), "oracle: PASS"]


def test_run_with_buffers_and_geometry(capsys):
    code, out, _ = omplab(capsys, "run", "corpus:fig1b", "-D", "N=2", "-D", "TEAMS=1", "--buffer", "a=5,6",
                          "--check-oracle")
    assert code == 0 and out.splitlines()[0] == "a: 6 7"


def test_run_compiled_module_with_source(capsys, tmp_path):
    omplab(capsys, "compile", "corpus:fig6", "--out-dir", str(tmp_path))
    code, out, _ = omplab(capsys, "run", str(tmp_path / "fig6.sir"), "--check-oracle", "--source", "corpus:fig6")
    assert code == 0 and out.splitlines()[-1] == "oracle: PASS"
    code, _, _ = omplab(capsys, "run", str(tmp_path / "fig6.sir"), "--check-oracle")
    assert code == 2


def test_generated_program_round_trip(capsys, tmp_path):
    g = generate_program(11)
    src = tmp_path / "g.ompk"
    src.write_text(g.source)
    args = ["run", str(src), "--check-oracle"] + [f"--scalar={k}={v}" for k, v in g.scalars.items()]
    code, out, _ = omplab(capsys, *args)
    assert code == 0 and out.endswith("oracle: PASS\n")
    code, out, _ = omplab(capsys, "gen", "--seed", "11")
    assert code == 0 and out == g.source


def test_misordered_pipeline_needs_unsafe(capsys, tmp_path):
    code, _, err = omplab(capsys, "compile", "corpus:coloring_bug", "--pipeline", "misordered",
                          "--out-dir", str(tmp_path))
    assert code == 2 and "stack-coloring" in err


def test_misordered_pipeline_traps_or_miscompiles(capsys):
    code, _, err = omplab(capsys, "run", "corpus:coloring_bug", "--pipeline", "misordered", "--unsafe")
    assert code == 3 and "overlap" in err
    code, out, _ = omplab(capsys, "run", "corpus:coloring_bug", "--pipeline", "misordered", "--unsafe",
                          "--unchecked", "--check-oracle")
    assert code == 4 and "oracle: FAIL" in out
    code, out, _ = omplab(capsys, "run", "corpus:coloring_bug", "--check-oracle")
    assert code == 0 and out.splitlines() == ["a: 7 7", "oracle: PASS"]


def test_unsafe_compile_reports_overlap(capsys, tmp_path):
    code, _, err = omplab(capsys, "compile", "corpus:coloring_bug", "--pipeline", "misordered", "--unsafe",
                          "--out-dir", str(tmp_path))
    assert code == 2 and "shared-local-overlap" in err


def test_trace_verb(capsys, tmp_path):
    code, out, _ = omplab(capsys, "trace", "corpus:fig1b_bare", "--workers", "2")
    assert code == 0
    events = [line.split("\t")[3] for line in out.splitlines()]
    assert events.count("wrapper") == 2
    path = tmp_path / "t.log"
    code, _, _ = omplab(capsys, "run", "corpus:fig1b", "--trace", str(path))
    assert code == 0 and "barrier" in path.read_text()


def test_occupancy_examples(capsys):
    code, out, _ = omplab(capsys, "occupancy", "--vars", "8", "--regs", "36")
    assert code == 0
    assert out.strip() == "gpu=k40-16k stack=80 total=289 dynamic=0 potential=14 teams=14 smem=4046"
    code, out, _ = omplab(capsys, "occupancy", "--vars", "0", "--regs", "32")
    assert "total=225" in out and "teams=16" in out
    code, out, _ = omplab(capsys, "occupancy", "--vars", "64", "--regs", "135", "--gpu", "p100", "--json")
    data = json.loads(out)
    assert data["footprint"]["dynamic_global_bytes"] == 512 and data["occupancy"]["actual_teams"] == 3


def test_occupancy_from_program_and_manifest(capsys, tmp_path):
    code, out, _ = omplab(capsys, "occupancy", "--input", "corpus:arrays_3", "--regs", "36")
    assert code == 0 and "total=1385" in out and "potential=14 teams=11 smem=19390" in out
    omplab(capsys, "compile", "corpus:arrays_3", "--out-dir", str(tmp_path))
    code, out2, _ = omplab(capsys, "occupancy", "--manifest", str(tmp_path / "arrays_3.manifest.json"),
                           "--regs", "36")
    assert out2 == out


def test_occupancy_rejects_bad_registers(capsys):
    code, _, err = omplab(capsys, "occupancy", "--vars", "1", "--regs", "300")
    assert code == 2 and "registers" in err


def test_gpu_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("OMPLAB_GPU", "p100")
    code, out, _ = omplab(capsys, "occupancy", "--vars", "1", "--regs", "31")
    assert out.startswith("gpu=p100") and "teams=16 smem=3728" in out
    monkeypatch.setenv("OMPLAB_GPU", "nope")
    code, _, err = omplab(capsys, "occupancy", "--vars", "1", "--regs", "31")
    assert code == 2 and "unknown GPU" in err


def test_tables_verb(capsys, tmp_path):
    code, out, _ = omplab(capsys, "tables", "--max-vars")
    assert code == 0
    rows = out.splitlines()
    assert rows[1] == "registers,32,34,36,39,42,64,128,255,255"
    code, out, _ = omplab(capsys, "tables", "--all", "--gpu", "k40-16k", "--gpu", "p100", "--out", str(tmp_path))
    written = sorted(p.name for p in tmp_path.iterdir())
    assert "scalars-p100.csv" in written and "footprint-arrays.csv" in written
    assert (tmp_path / "arrays-p100.csv").read_text().splitlines()[1].endswith(",17")


def test_prealloc_entries_override(capsys, tmp_path):
    code, out, _ = omplab(capsys, "compile", "corpus:fig5", "--prealloc-entries", "4", "--out-dir", str(tmp_path))
    assert code == 0 and "total=161 nargs=8 dynamic=64" in out


@pytest.mark.parametrize("argv", [["run", "corpus:nope"], ["run", "missing.ompk"]])
def test_missing_inputs(capsys, argv):
    code, _, _ = omplab(capsys, *argv)
    assert code == 2


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "omplab", "occupancy", "--vars", "1", "--regs", "36"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0 and "teams=14 smem=3262" in r.stdout
