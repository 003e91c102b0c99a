"""Immutable program model shared by the binary parser and the IR loader."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

# Package prefixes whose external methods count as behavioral APIs.
# java/ and javax/ are referenced by almost every method and carry no
# device-level behavior, so they are ignored.
API_PREFIXES = (
    "android/",
    "com/android/internal/util/",
    "dalvik/",
    "org/apache/",
    "org/json/",
    "org/w3c/dom/",
    "org/xml/sax",
    "org/xmlpull/v1/",
    "junit/",
)
IGNORED_PREFIXES = ("java/", "javax/")


class RefKind(enum.Enum):
    INTERNAL = "internal"
    EXTERNAL_API = "external_api"
    EXTERNAL_IGNORED = "external_ignored"


class Source(enum.Enum):
    DEX_BINARY = "dex"
    TEXT_IR = "ir"


class InvokeKind(enum.Enum):
    VIRTUAL = "virtual"
    SUPER = "super"
    DIRECT = "direct"
    STATIC = "static"
    INTERFACE = "interface"


@dataclass(frozen=True)
class Prototype:
    parameters: tuple[str, ...]
    return_type: str

    def __str__(self) -> str:
        return "(" + "".join(self.parameters) + ")" + self.return_type


@dataclass(frozen=True)
class MethodRef:
    class_descriptor: str
    name: str
    proto: Prototype
    kind: RefKind = RefKind.EXTERNAL_IGNORED

    @property
    def signature(self) -> str:
        return f"{self.class_descriptor}->{self.name}{self.proto}"

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.class_descriptor, self.name, str(self.proto))


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: int | None
    width: int
    invoke_target: int | None = None
    raw: bytes = b""

    @property
    def invoke_kind(self) -> InvokeKind | None:
        if self.opcode is None or self.invoke_target is None:
            return None
        return _INVOKE_KINDS[(self.opcode - 0x6E) % 6]

    @property
    def is_range(self) -> bool:
        return self.opcode is not None and 0x74 <= self.opcode <= 0x78

    @property
    def mnemonic(self) -> str:
        kind = self.invoke_kind
        if kind is None:
            return "invoke" if self.opcode is None else f"op-{self.opcode:02x}"
        return f"invoke-{kind.value}" + ("/range" if self.is_range else "")


_INVOKE_KINDS = (
    InvokeKind.VIRTUAL,
    InvokeKind.SUPER,
    InvokeKind.DIRECT,
    InvokeKind.STATIC,
    InvokeKind.INTERFACE,
)


def is_invoke_opcode(opcode: int) -> bool:
    return 0x6E <= opcode <= 0x72 or 0x74 <= opcode <= 0x78


@dataclass(frozen=True)
class MethodDef:
    ref: int
    access_flags: int = 0
    registers_size: int = 0
    ins_size: int = 0
    outs_size: int = 0
    instructions: tuple[Instruction, ...] = ()


@dataclass(frozen=True)
class ClassDef:
    descriptor: str
    superclass: str | None = None
    access_flags: int = 0
    source_file: str | None = None
    methods: tuple[int, ...] = ()


@dataclass(frozen=True)
class DexProgram:
    classes: tuple[ClassDef, ...]
    methods: tuple[MethodDef, ...]
    method_refs: tuple[MethodRef, ...]
    strings: tuple[str, ...] = ()
    types: tuple[str, ...] = ()
    source: Source = Source.DEX_BINARY
    name: str = ""
    label: str | None = None
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    @cached_property
    def method_by_ref(self) -> dict[int, int]:
        """Map a method_refs index to the internal method that defines it."""
        return {m.ref: i for i, m in enumerate(self.methods)}

    @cached_property
    def method_by_signature(self) -> dict[str, int]:
        return {self.method_refs[m.ref].signature: i for i, m in enumerate(self.methods)}

    def method_ref(self, method: int) -> MethodRef:
        return self.method_refs[self.methods[method].ref]

    def signature(self, method: int) -> str:
        return self.method_ref(method).signature

    def invokes(self, method: int) -> list[Instruction]:
        return [ins for ins in self.methods[method].instructions if ins.invoke_target is not None]


def classify_method_ref(ref: MethodRef, program: DexProgram | None = None, *, defined: bool | None = None) -> RefKind:
    """Return the kind of a referenced method.

    A method defined in the program is internal whatever its name; an
    undefined one is an API when its class sits under one of the platform
    prefixes, and is ignored otherwise.
    """
    if defined is None:
        if program is None:
            raise TypeError("either program or defined is required")
        defined = ref.key in {program.method_refs[m.ref].key for m in program.methods}
    if defined:
        return RefKind.INTERNAL
    desc = ref.class_descriptor
    if not desc.startswith("L"):
        return RefKind.EXTERNAL_IGNORED
    path = desc[1:]
    if path.startswith(API_PREFIXES):
        return RefKind.EXTERNAL_API
    return RefKind.EXTERNAL_IGNORED


def parse_prototype(text: str) -> Prototype:
    """Split a ``(params)ret`` descriptor string into its type descriptors."""
    if not text.startswith("(") or ")" not in text:
        raise ValueError(f"bad prototype {text!r}")
    close = text.index(")")
    params_text, ret = text[1:close], text[close + 1 :]
    params = []
    i = 0
    while i < len(params_text):
        j = i
        while params_text[j] == "[":
            j += 1
            if j >= len(params_text):
                raise ValueError(f"bad prototype {text!r}")
        if params_text[j] == "L":
            end = params_text.find(";", j)
            if end < 0:
                raise ValueError(f"bad prototype {text!r}")
            j = end
        elif params_text[j] not in "ZBSCIJFD":
            raise ValueError(f"bad prototype {text!r}")
        params.append(params_text[i : j + 1])
        i = j + 1
    if not ret or not _valid_type(ret):
        raise ValueError(f"bad prototype {text!r}")
    return Prototype(tuple(params), ret)


def _valid_type(desc: str) -> bool:
    d = desc.lstrip("[")
    if d == "V":
        return desc == "V"
    if len(d) == 1:
        return d in "ZBSCIJFD"
    return d.startswith("L") and d.endswith(";") and len(d) > 2
