"""Address-taken detection of allocas.

An alloca is shared when its address, or a value derived from it through
bit casts, address-space casts or element addressing, is the value operand
of a store. Storing a pointer publishes it to whoever can read the
destination, which in generated kernels is the team-wide shared-args list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..ir import FrameIndex, Function, Opcode

ALIAS_OPCODES = frozenset({Opcode.BITCAST, Opcode.ADDRSPACECAST, Opcode.GETELEMENT})


@dataclass(frozen=True)
class SharedSet:
    members: frozenset[str] = frozenset()
    # value name -> root alloca, for every alias of every alloca
    aliases: dict[str, str] = field(default_factory=dict, compare=False)

    def __contains__(self, name: str) -> bool:
        return name in self.members

    def __len__(self) -> int:
        return len(self.members)

    def sorted(self) -> list[str]:
        return sorted(self.members)


def alias_map(func: Function) -> dict[str, str]:
    """Map every alloca and derived pointer value to its root alloca."""
    roots: dict[str, str] = {i.result: i.result for i in func.allocas()}
    changed = True
    while changed:
        changed = False
        for inst in func.instructions():
            if inst.opcode in ALIAS_OPCODES and inst.result not in roots:
                base = inst.operands[0].ref
                if base in roots:
                    roots[inst.result] = roots[base]
                    changed = True
    return roots


def detect_address_taken(func: Function) -> SharedSet:
    """Whole-function detection: one alias map, then one scan of all stores."""
    roots = alias_map(func)
    members = set()
    for inst in func.instructions():
        if inst.opcode is Opcode.STORE:
            v = inst.operands[0].ref
            if v in roots:
                members.add(roots[v])
    return SharedSet(frozenset(members), roots)


def _users(func: Function) -> dict[str, list]:
    users: dict[str, list] = {}
    for inst in func.instructions():
        for n, o in enumerate(inst.operands):
            if o.ref is not None:
                users.setdefault(o.ref, []).append((inst, n))
    return users


def is_address_stored(func: Function, alloca: str, users: dict[str, list] | None = None) -> bool:
    """Per-alloca walk: follow the alias chain of one alloca looking for a store of it."""
    users = _users(func) if users is None else users
    pointer_aliases = [alloca]
    seen = {alloca}
    while pointer_aliases:
        value = pointer_aliases.pop()
        for inst, n in users.get(value, ()):
            if inst.opcode is Opcode.STORE and n == 0:
                return True
            if inst.opcode in ALIAS_OPCODES and n == 0 and inst.result not in seen:
                seen.add(inst.result)
                pointer_aliases.append(inst.result)
    return False


def detect_per_alloca(func: Function) -> SharedSet:
    """Detection fused into alloca lowering: decide each alloca on its own."""
    users = _users(func)
    members = frozenset(a.result for a in func.allocas() if is_address_stored(func, a.result, users))
    return SharedSet(members, alias_map(func))


def call_escapes(func: Function) -> set[str]:
    """Allocas whose address, or an alias of it, is passed to a call.

    These cannot be promoted to registers and stay in the local depot, like
    the out-parameters of the worker's work-acquisition call.
    """
    roots = alias_map(func)
    out = set()
    for inst in func.instructions():
        if inst.opcode is Opcode.CALL:
            for o in inst.operands:
                if o.ref in roots:
                    out.add(roots[o.ref])
    return out


def frame_index_roots(func: Function) -> dict[str, int]:
    """Machine-form alias map: value name -> frame index it was derived from."""
    roots: dict[str, int] = {}
    changed = True
    while changed:
        changed = False
        for inst in func.instructions():
            if inst.opcode in ALIAS_OPCODES and inst.result not in roots:
                base = inst.operands[0]
                if isinstance(base.value, FrameIndex):
                    roots[inst.result] = base.value.index
                    changed = True
                elif base.ref in roots:
                    roots[inst.result] = roots[base.ref]
                    changed = True
    return roots
