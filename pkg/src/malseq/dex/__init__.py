"""DEX binary and JSON IR readers producing a common :class:`DexProgram`."""

from pathlib import Path

from .errors import (
    BadIndex,
    DexError,
    DuplicateMethodSignature,
    InvalidInstruction,
    MalformedHeader,
    SchemaViolation,
    TruncatedFile,
    UnresolvedReference,
    UnsupportedVersion,
)
from .ir import dumps_ir, load_ir, parse_signature, program_to_ir
from .parser import parse_dex
from .types import (
    API_PREFIXES,
    ClassDef,
    DexProgram,
    Instruction,
    InvokeKind,
    MethodDef,
    MethodRef,
    Prototype,
    RefKind,
    Source,
    classify_method_ref,
    is_invoke_opcode,
)


def load_program(path) -> DexProgram:
    """Read a ``.dex`` binary or a JSON IR file, chosen by content."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == b"dex\n" or path.suffix == ".dex":
        return parse_dex(data, name=path.name)
    return load_ir(data, name=path.name)


__all__ = [
    "API_PREFIXES",
    "BadIndex",
    "ClassDef",
    "DexError",
    "DexProgram",
    "DuplicateMethodSignature",
    "Instruction",
    "InvalidInstruction",
    "InvokeKind",
    "MalformedHeader",
    "MethodDef",
    "MethodRef",
    "Prototype",
    "RefKind",
    "SchemaViolation",
    "Source",
    "TruncatedFile",
    "UnresolvedReference",
    "UnsupportedVersion",
    "classify_method_ref",
    "dumps_ir",
    "is_invoke_opcode",
    "load_ir",
    "load_program",
    "parse_dex",
    "parse_signature",
    "program_to_ir",
]
