from __future__ import annotations

from pathlib import Path

from omplab.codegen import generate_kernel
from omplab.frontend import compile_source
from omplab.lowering import run_pipeline

CORPUS = Path(__file__).resolve().parents[1] / "src" / "omplab" / "corpus"
GOLDEN = Path(__file__).resolve().parent / "golden"


def corpus(name: str) -> str:
    return (CORPUS / f"{name}.ompk").read_text()


def frontend(source: str, defines: dict[str, int] | None = None):
    return compile_source(source, defines)


def codegen(source: str, defines: dict[str, int] | None = None):
    _, module, _ = compile_source(source, defines)
    return generate_kernel(module)


def lowered(source: str, defines: dict[str, int] | None = None, pipeline: str = "default", **kw):
    module, _ = codegen(source, defines)
    return run_pipeline(module, pipeline, **kw)


def zeros(program) -> dict[str, list[int]]:
    return {m.name: [0] * (m.lower + m.length) for m in program.target.maps}
