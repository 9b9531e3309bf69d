"""Parser, data-sharing resolution and IR lowering for ``.ompk`` sources."""

from .ast import Program, SharingAttribute, to_tree
from .lower import PARALLEL_BEGIN, PARALLEL_END, SHARING_CANDIDATE, TargetDescriptor, lower_to_ir, sharing_candidates
from .parser import DslSyntaxError, UnsupportedConstruct, parse_dsl
from .sharing import SemanticError, resolve_sharing


def compile_source(source: str, defines: dict[str, int] | None = None):
    """Parse, resolve and lower ``source``; returns (program, module, descriptor)."""
    program = resolve_sharing(parse_dsl(source, defines))
    module, info = lower_to_ir(program)
    return program, module, info


__all__ = [
    "DslSyntaxError", "PARALLEL_BEGIN", "PARALLEL_END", "Program", "SHARING_CANDIDATE",
    "SemanticError", "SharingAttribute", "TargetDescriptor", "UnsupportedConstruct",
    "compile_source", "lower_to_ir", "parse_dsl", "resolve_sharing", "sharing_candidates", "to_tree",
]
