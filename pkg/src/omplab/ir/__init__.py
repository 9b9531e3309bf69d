"""Typed SSA-like device IR with explicit address spaces."""

from .core import (
    BaseReg,
    Block,
    Const,
    Declaration,
    DepotLayout,
    DepotSlot,
    FrameIndex,
    FrameObject,
    Function,
    GlobalVar,
    Instruction,
    MachineFunction,
    MapInfo,
    Module,
    Null,
    Opcode,
    Operand,
    Param,
    Ref,
    Sym,
    TargetInfo,
    const,
    null,
    ref,
    sym,
    void_call,
)
from .text import ParseError, parse_ir, print_instruction, print_ir
from .types import (
    I1,
    I8,
    I8_PTR,
    I32,
    I64,
    VOID,
    AddressSpace,
    ArrayType,
    IntType,
    PtrType,
    Type,
    VoidType,
    alignof,
    element_of,
    ptr,
    sizeof,
)
from .validate import Diagnostic, dominators, validate

__all__ = [
    "AddressSpace", "ArrayType", "BaseReg", "Block", "Const", "Declaration", "DepotLayout",
    "DepotSlot", "Diagnostic", "FrameIndex", "FrameObject", "Function", "GlobalVar", "I1",
    "I8", "I8_PTR", "I32", "I64", "Instruction", "IntType", "MachineFunction", "MapInfo",
    "Module", "Null", "Opcode", "Operand", "Param", "ParseError", "PtrType", "Ref", "Sym",
    "TargetInfo", "Type", "VOID", "VoidType", "alignof", "const", "dominators", "element_of",
    "null", "parse_ir", "print_instruction", "print_ir", "ptr", "ref", "sizeof", "sym",
    "validate", "void_call",
]
