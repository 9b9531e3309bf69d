"""Value types of the device IR.

Pointers are 8 bytes wide and ints are 4 bytes, matching the 64-bit NVPTX
data layout the runtime list arithmetic assumes (8 bytes per reference).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

POINTER_BYTES = 8


class AddressSpace(enum.IntEnum):
    """NVPTX address-space numbering."""

    GENERIC = 0
    GLOBAL = 1
    SHARED = 3
    LOCAL = 5

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class VoidType:
    def __str__(self) -> str:
        return "void"


@dataclass(frozen=True)
class IntType:
    bits: int

    def __str__(self) -> str:
        return f"i{self.bits}"


@dataclass(frozen=True)
class ArrayType:
    count: int
    elem: "Type"

    def __str__(self) -> str:
        return f"[{self.count} x {self.elem}]"


@dataclass(frozen=True)
class PtrType:
    pointee: "Type"
    addrspace: AddressSpace = AddressSpace.GENERIC

    def __str__(self) -> str:
        if self.addrspace == AddressSpace.GENERIC:
            return f"{self.pointee}*"
        return f"{self.pointee} addrspace({int(self.addrspace)})*"


Type = VoidType | IntType | ArrayType | PtrType

VOID = VoidType()
I1 = IntType(1)
I8 = IntType(8)
I32 = IntType(32)
I64 = IntType(64)
I8_PTR = PtrType(I8)


def ptr(t: Type, space: AddressSpace = AddressSpace.GENERIC) -> PtrType:
    return PtrType(t, space)


def sizeof(t: Type) -> int:
    if isinstance(t, IntType):
        return max(1, t.bits // 8)
    if isinstance(t, PtrType):
        return POINTER_BYTES
    if isinstance(t, ArrayType):
        return t.count * sizeof(t.elem)
    raise TypeError(f"type {t} has no size")


def alignof(t: Type) -> int:
    if isinstance(t, ArrayType):
        return alignof(t.elem)
    return sizeof(t)


def is_ptr(t: Type | None) -> bool:
    return isinstance(t, PtrType)


def element_of(t: PtrType) -> Type:
    """Element type addressed by indexing through ``t`` (arrays decay)."""
    if isinstance(t.pointee, ArrayType):
        return t.pointee.elem
    return t.pointee
