"""Exceptions raised while reading DEX binaries or textual IR."""


class DexError(Exception):
    """Base class for all input-format errors."""


class MalformedHeader(DexError):
    pass


class TruncatedFile(DexError):
    pass


class BadIndex(DexError):
    pass


class UnsupportedVersion(DexError):
    pass


class InvalidInstruction(DexError):
    """An opcode that is unused in every supported DEX version."""


class SchemaViolation(DexError):
    pass


class DuplicateMethodSignature(DexError):
    pass


class UnresolvedReference(DexError):
    pass
