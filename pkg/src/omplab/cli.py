"""Command-line driver: compile, run, trace, occupancy and tables.

Exit codes: 0 success, 2 diagnostics, 3 simulator trap, 4 output mismatch
against the sequential oracle.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .codegen import CodegenError, generate_kernel
from .frontend import DslSyntaxError, compile_source, to_tree
from .ir import Module, ParseError, parse_ir, print_ir
from .lowering import (
    PIPELINES,
    LoweringError,
    PassManager,
    PassOrderError,
    depot_manifest,
    misordered_pipeline,
)
from .occupancy import (
    GPUS,
    DepotManifest,
    footprint,
    gpu,
    occupancy,
    reproduce_tables,
    scalar_manifest,
)
from .oracle import OracleError, sequential_oracle
from .progen import generate_program
from .runtime import PREALLOC_ENTRIES
from .simulator import LaunchConfig, SimTrap, launch

EXIT_OK = 0
EXIT_DIAGNOSTICS = 2
EXIT_TRAP = 3
EXIT_MISMATCH = 4

DEFAULT_GPU = "k40-16k"
PIPELINE_CHOICES = (*PIPELINES, "misordered")
TABLES = ("footprint", "scalars", "arrays", "max-vars")


class Diagnostics(Exception):
    """User-facing failure that maps to exit code 2."""


@dataclass
class Config:
    gpu: str = DEFAULT_GPU
    prealloc_entries: int = PREALLOC_ENTRIES
    pipeline: str = "default"
    dump_after: list[str] = field(default_factory=list)
    trace_path: str | None = None
    seed: int = 0

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "Config":
        return cls(
            gpu=getattr(args, "gpu", None) or os.environ.get("OMPLAB_GPU") or DEFAULT_GPU,
            prealloc_entries=getattr(args, "prealloc_entries", PREALLOC_ENTRIES),
            pipeline=getattr(args, "pipeline", "default"),
            dump_after=list(getattr(args, "dump_after", None) or []),
            trace_path=getattr(args, "trace", None),
            seed=getattr(args, "seed", 0),
        )


# -- helpers ------------------------------------------------------------------


def corpus_path(name: str) -> Path:
    return Path(str(resources.files("omplab") / "corpus" / f"{name}.ompk"))


def corpus_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("omplab").joinpath("corpus").iterdir()
                  if p.name.endswith(".ompk"))


def resolve_input(source: str) -> Path:
    """``corpus:NAME`` names a bundled program; anything else is a path."""
    if source.startswith("corpus:"):
        path = corpus_path(source[len("corpus:"):])
        if not path.exists():
            raise Diagnostics(f"{source}: no such corpus program (have: {', '.join(corpus_names())})")
        return path
    path = Path(source)
    if not path.exists():
        raise Diagnostics(f"{source}: no such file")
    return path


def parse_defines(items: list[str] | None) -> dict[str, int]:
    out = {}
    for item in items or []:
        name, _, value = item.partition("=")
        try:
            out[name] = int(value, 0) if value else 1
        except ValueError:
            raise Diagnostics(f"-D {item}: value must be an integer") from None
    return out


def parse_assignments(items: list[str] | None, what: str) -> dict[str, str]:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise Diagnostics(f"--{what} {item}: expected NAME=VALUE")
        out[name] = value
    return out


def parse_buffers(items: list[str] | None) -> dict[str, list[int]]:
    try:
        return {k: [int(x, 0) for x in v.split(",") if x.strip()] for k, v in parse_assignments(items, "buffer").items()}
    except ValueError:
        raise Diagnostics("--buffer values must be comma-separated integers") from None


def parse_scalars(items: list[str] | None) -> dict[str, int]:
    try:
        return {k: int(v, 0) for k, v in parse_assignments(items, "scalar").items()}
    except ValueError:
        raise Diagnostics("--scalar values must be integers") from None


def pass_list(cfg: Config) -> tuple[str, ...]:
    return misordered_pipeline() if cfg.pipeline == "misordered" else PIPELINES[cfg.pipeline]


@dataclass
class Compiled:
    path: Path
    program: object | None
    module: Module
    state: object | None = None


def compile_file(path: Path, cfg: Config, defines: dict[str, int], unsafe: bool = False,
                 dump_ast: bool = False, out=None) -> Compiled:
    out = out or sys.stdout
    text = path.read_text()
    try:
        program, module, _ = compile_source(text, defines)
    except DslSyntaxError as e:
        raise Diagnostics(f"{path}:{e.span}: error: {e.message}") from None
    if dump_ast:
        out.write(json.dumps(to_tree(program), indent=2) + "\n")
    try:
        module, _ = generate_kernel(module)
        if {"codegen", "all"} & set(cfg.dump_after):
            out.write(f"; after codegen\n{print_ir(module)}")
        dumps = tuple(d for d in cfg.dump_after if d != "codegen")
        pm = PassManager(pass_list(cfg), unsafe=unsafe, dump_after=dumps)
        state = pm.run(module)
    except (CodegenError, LoweringError, PassOrderError) as e:
        raise Diagnostics(f"{path}: error: {e}") from None
    for name, dump in state.dumps.items():
        out.write(f"; after {name}\n{dump}")
    return Compiled(path, program, state.module, state)


def load_program(path: Path, cfg: Config, defines: dict[str, int], unsafe: bool) -> Compiled:
    if path.suffix == ".sir":
        try:
            return Compiled(path, None, parse_ir(path.read_text()))
        except ParseError as e:
            raise Diagnostics(f"{path}:{e.line}:{e.col}: error: {e.message}") from None
    return compile_file(path, cfg, defines, unsafe)


def report_diagnostics(state, stream) -> int:
    if state is None or not state.diagnostics:
        return 0
    for d in state.diagnostics:
        stream.write(f"warning: {d}\n")
    return len(state.diagnostics)


def manifest_report(state, cfg: Config) -> dict:
    man = depot_manifest(state)
    fp = footprint(DepotManifest.from_pipeline(man, cfg.prealloc_entries))
    man["stack"] = man["stack_bytes"]
    man["footprint"] = asdict(fp)
    return man


def format_buffer(name: str, values: list[int]) -> str:
    return f"{name}: {' '.join(str(v) for v in values)}"


# -- verbs ------------------------------------------------------------------


def cmd_compile(args, cfg: Config) -> int:
    path = resolve_input(args.input)
    c = compile_file(path, cfg, parse_defines(args.define), args.unsafe, args.dump_ast)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sir = Path(args.output) if args.output else out_dir / f"{path.stem}.sir"
    man_path = Path(args.manifest) if args.manifest else sir.with_suffix(".manifest.json")
    sir.write_text(print_ir(c.module))
    report = manifest_report(c.state, cfg)
    man_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    fp = report["footprint"]
    print(f"wrote {sir} and {man_path}")
    print(f"shared set: {' '.join('%' + n for n in report['shared_set']) or '(empty)'}")
    print(f"stack={fp['stack_bytes']} total={fp['total_bytes']} nargs={report['nargs']} "
          f"dynamic={fp['dynamic_global_bytes']}")
    return EXIT_DIAGNOSTICS if report_diagnostics(c.state, sys.stderr) else EXIT_OK


def _launch(args, cfg: Config, tracing: bool):
    path = resolve_input(args.input)
    defines = parse_defines(args.define)
    c = load_program(path, cfg, defines, args.unsafe)
    report_diagnostics(c.state, sys.stderr)
    target = c.module.targets[0] if c.module.targets else None
    teams = args.teams or (target.num_teams if target and target.num_teams else 1)
    workers = args.workers or (target.thread_limit if target and target.thread_limit else None)
    if workers is None:
        raise Diagnostics(f"{path}: no thread_limit in the program; pass --workers")
    buffers = parse_buffers(args.buffer)
    for m in target.maps if target else ():
        # unspecified buffers start zeroed; short ones are zero-padded
        data = buffers.setdefault(m.name, [])
        data.extend([0] * (m.lower + m.length - len(data)))
    scalars = parse_scalars(args.scalar)
    try:
        config = LaunchConfig(teams, workers)
    except ValueError as e:
        raise Diagnostics(str(e)) from None
    result = launch(c.module, config, buffers, scalars, checked=not args.unchecked, trace=tracing,
                    prealloc_entries=cfg.prealloc_entries)
    return c, result, (teams, workers, buffers, scalars)


def check_oracle(args, c: Compiled, launch_args, outputs) -> int:
    teams, workers, buffers, scalars = launch_args
    program = c.program
    if program is None:
        if not args.source:
            raise Diagnostics("--check-oracle on a .sir module needs --source FILE.ompk")
        try:
            program = compile_source(resolve_input(args.source).read_text(), parse_defines(args.define))[0]
        except DslSyntaxError as e:
            raise Diagnostics(f"{args.source}:{e.span}: error: {e.message}") from None
    try:
        expected = sequential_oracle(program, buffers, scalars, teams, workers)
    except OracleError as e:
        raise Diagnostics(f"oracle: {e}") from None
    bad = [(n, i, g, w) for n in sorted(expected)
           for i, (g, w) in enumerate(zip(outputs.get(n, []), expected[n])) if g != w]
    bad += [(n, -1, len(outputs.get(n, [])), len(expected[n])) for n in expected
            if len(outputs.get(n, [])) != len(expected[n])]
    if not bad:
        print("oracle: PASS")
        return EXIT_OK
    n, i, got, want = bad[0]
    where = f"{n}[{i}]" if i >= 0 else f"length of {n}"
    print(f"oracle: FAIL ({len(bad)} mismatches; first at {where}: got {got}, expected {want})")
    return EXIT_MISMATCH


def cmd_run(args, cfg: Config) -> int:
    tracing = bool(cfg.trace_path)
    try:
        c, result, launch_args = _launch(args, cfg, tracing)
    except SimTrap as e:
        print(f"trap: {e}", file=sys.stderr)
        return EXIT_TRAP
    for name in sorted(result.outputs):
        print(format_buffer(name, result.outputs[name]))
    if tracing:
        Path(cfg.trace_path).write_text("\n".join(result.trace_lines()) + "\n")
    if args.check_oracle:
        return check_oracle(args, c, launch_args, result.outputs)
    return EXIT_OK


def cmd_trace(args, cfg: Config) -> int:
    try:
        _, result, _ = _launch(args, cfg, True)
    except SimTrap as e:
        print(f"trap: {e}", file=sys.stderr)
        return EXIT_TRAP
    text = "\n".join(result.trace_lines()) + "\n"
    if cfg.trace_path:
        Path(cfg.trace_path).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_occupancy(args, cfg: Config) -> int:
    g = gpu(cfg.gpu)
    if args.input:
        c = compile_file(resolve_input(args.input), cfg, parse_defines(args.define))
        m = DepotManifest.from_pipeline(depot_manifest(c.state), cfg.prealloc_entries)
    elif args.manifest:
        m = DepotManifest.from_pipeline(json.loads(Path(args.manifest).read_text()), cfg.prealloc_entries)
    else:
        base = scalar_manifest(args.vars)
        m = DepotManifest(base.slot_sizes, base.nargs, cfg.prealloc_entries)
    fp = footprint(m)
    try:
        occ = occupancy(g, fp, args.regs, args.threads)
    except ValueError as e:
        raise Diagnostics(str(e)) from None
    if args.json:
        print(json.dumps({"gpu": g.name, "footprint": asdict(fp), "occupancy": asdict(occ)}, indent=2,
                         sort_keys=True))
    else:
        print(f"gpu={g.name} stack={fp.stack_bytes} total={fp.total_bytes} dynamic={fp.dynamic_global_bytes} "
              f"potential={occ.potential_teams} teams={occ.actual_teams} smem={occ.smem_per_sm_used}")
    return EXIT_OK


def cmd_tables(args, cfg: Config) -> int:
    which = tuple(t for t in TABLES if args.all or getattr(args, t.replace("-", "_")))
    if not which:
        which = TABLES
    gpus = [gpu(n) for n in (args.gpus or [cfg.gpu])]
    tables = reproduce_tables(gpus, which, model_row=not args.no_model_row)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for key, text in tables.items():
            (out / f"{key}.csv").write_text(text)
            print(out / f"{key}.csv")
    elif len(tables) == 1:
        sys.stdout.write(next(iter(tables.values())))
    else:
        for key, text in tables.items():
            sys.stdout.write(f"# {key}\n{text}\n")
    return EXIT_OK


def cmd_gen(args, cfg: Config) -> int:
    g = generate_program(cfg.seed)
    sys.stdout.write(g.source)
    return EXIT_OK


def cmd_corpus(args, cfg: Config) -> int:
    for name in corpus_names():
        print(f"corpus:{name}\t{corpus_path(name)}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="omplab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    def program_opts(p, unsafe=True):
        p.add_argument("-D", dest="define", action="append", metavar="NAME=VALUE", help="override a #define")
        p.add_argument("--pipeline", choices=PIPELINE_CHOICES, default="default")
        if unsafe:
            p.add_argument("--unsafe", action="store_true",
                           help="let misordered pipelines run, reporting the damage as warnings")
        p.add_argument("--prealloc-entries", type=int, default=PREALLOC_ENTRIES)

    p = sub.add_parser("compile", help="lower a .ompk program to .sir plus a depot manifest")
    p.add_argument("input", help="source file or corpus:NAME")
    program_opts(p)
    p.add_argument("-o", "--output", help="output .sir path")
    p.add_argument("--manifest", help="output manifest path (default: next to the .sir)")
    p.add_argument("--out-dir", default=".", help="directory for default output names")
    p.add_argument("--dump-after", action="append", metavar="PASS",
                   help="print the module after PASS ('codegen', a lowering pass, or 'all')")
    p.add_argument("--dump-ast", action="store_true", help="print the resolved syntax tree as JSON")
    p.set_defaults(func=cmd_compile)

    for verb, func, text in (("run", cmd_run, "simulate a program and print mapped buffers"),
                             ("trace", cmd_trace, "simulate a program and print its event trace")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("input", help=".ompk source, .sir module or corpus:NAME")
        program_opts(p)
        p.add_argument("--teams", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--buffer", action="append", metavar="NAME=V,V,...")
        p.add_argument("--scalar", action="append", metavar="NAME=V")
        p.add_argument("--unchecked", action="store_true", help="disable the shared/local overlap check")
        p.add_argument("--trace", metavar="PATH", help="write the tab-separated event trace to PATH")
        if verb == "run":
            p.add_argument("--check-oracle", action="store_true", help="compare against the sequential oracle")
            p.add_argument("--source", help="source of a .sir module, for --check-oracle")
        p.set_defaults(func=func)

    p = sub.add_parser("occupancy", help="footprint and teams per SM for one kernel")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--vars", type=int, help="kernel sharing this many scalars")
    src.add_argument("--manifest", help="depot manifest JSON written by compile")
    src.add_argument("--input", help="compile this program and use its manifest")
    p.add_argument("-D", dest="define", action="append", metavar="NAME=VALUE")
    p.add_argument("--regs", type=int, required=True, help="registers per thread")
    p.add_argument("--threads", type=int, default=128, help="threads per team")
    p.add_argument("--gpu", choices=sorted(GPUS))
    p.add_argument("--prealloc-entries", type=int, default=PREALLOC_ENTRIES)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_occupancy, pipeline="default")

    p = sub.add_parser("tables", help="reproduce the footprint and occupancy tables as CSV")
    p.add_argument("--all", action="store_true")
    for t in TABLES:
        p.add_argument(f"--{t}", action="store_true")
    p.add_argument("--gpu", dest="gpus", action="append", choices=sorted(GPUS))
    p.add_argument("--no-model-row", action="store_true", help="omit the extrapolated zero-variable row")
    p.add_argument("--out", metavar="DIR", help="write one CSV per table into DIR")
    p.set_defaults(func=cmd_tables)

    p = sub.add_parser("gen", help="print a random race-free program")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("corpus", help="list bundled programs")
    p.set_defaults(func=cmd_corpus)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = Config.from_args(args)
    try:
        gpu(cfg.gpu)
        return args.func(args, cfg)
    except Diagnostics as e:
        print(e, file=sys.stderr)
        return EXIT_DIAGNOSTICS
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIAGNOSTICS


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
