"""Textual JSON form of a program: methods with their ordered invoke lists.

    {"methods": [{"class": "La;", "name": "a", "proto": "()V",
                  "invokes": ["Lb;->b()V", ...]}],
     "label": "malicious" | "benign" | null}

Invoke offsets in an IR program are list positions.
"""

from __future__ import annotations

import json
import re

import jsonschema

from .errors import DuplicateMethodSignature, SchemaViolation, UnresolvedReference
from .types import ClassDef, DexProgram, Instruction, MethodDef, MethodRef, RefKind, Source, classify_method_ref, parse_prototype

IR_SCHEMA = {
    "type": "object",
    "required": ["methods"],
    "properties": {
        "methods": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["class", "name", "proto", "invokes"],
                "properties": {
                    "class": {"type": "string", "pattern": r"^L[^;\s]+;$"},
                    "name": {"type": "string", "minLength": 1},
                    "proto": {"type": "string"},
                    "invokes": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
        "label": {"enum": ["malicious", "benign", None]},
        "name": {"type": "string"},
        "metadata": {"type": "object"},
    },
}

_SIGNATURE_RE = re.compile(r"^(\[*L[^;\s]+;|\[+[ZBSCIJFD])->([^(\s]+)(\(.*)$")


def parse_signature(sig: str) -> tuple[str, str, str]:
    """Split ``Lcls;->name(params)ret`` into its three parts."""
    m = _SIGNATURE_RE.match(sig)
    if m is None:
        raise UnresolvedReference(f"cannot parse method signature {sig!r}")
    cls, name, proto = m.groups()
    try:
        parse_prototype(proto)
    except ValueError:
        raise UnresolvedReference(f"bad prototype in {sig!r}") from None
    return cls, name, proto


def load_ir(text: str | bytes | dict, name: str = "") -> DexProgram:
    doc = text if isinstance(text, dict) else _loads(text)
    try:
        jsonschema.validate(doc, IR_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaViolation(exc.message) from None

    refs: list[MethodRef] = []
    index: dict[tuple[str, str, str], int] = {}
    for entry in doc["methods"]:
        try:
            proto = parse_prototype(entry["proto"])
        except ValueError as exc:
            raise SchemaViolation(str(exc)) from None
        key = (entry["class"], entry["name"], str(proto))
        if key in index:
            raise DuplicateMethodSignature(f"{key[0]}->{key[1]}{key[2]} declared twice")
        index[key] = len(refs)
        refs.append(MethodRef(entry["class"], entry["name"], proto, RefKind.INTERNAL))

    methods = []
    for i, entry in enumerate(doc["methods"]):
        instructions = []
        for pos, sig in enumerate(entry["invokes"]):
            cls, mname, proto_text = parse_signature(sig)
            proto = parse_prototype(proto_text)
            key = (cls, mname, str(proto))
            if key not in index:
                index[key] = len(refs)
                ref = MethodRef(cls, mname, proto)
                refs.append(MethodRef(cls, mname, proto, classify_method_ref(ref, defined=False)))
            instructions.append(Instruction(offset=pos, opcode=None, width=1, invoke_target=index[key]))
        methods.append(MethodDef(ref=i, instructions=tuple(instructions)))

    classes: dict[str, list[int]] = {}
    for i, entry in enumerate(doc["methods"]):
        classes.setdefault(entry["class"], []).append(i)

    return DexProgram(
        classes=tuple(ClassDef(descriptor=c, methods=tuple(ms)) for c, ms in classes.items()),
        methods=tuple(methods),
        method_refs=tuple(refs),
        types=tuple(dict.fromkeys(r.class_descriptor for r in refs)),
        source=Source.TEXT_IR,
        name=doc.get("name", name) or name,
        label=doc.get("label"),
        metadata=dict(doc.get("metadata", {})),
    )


def _loads(text: str | bytes) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"not JSON: {exc}") from None


def program_to_ir(program: DexProgram) -> dict:
    """Render any program (binary or IR) as an IR document."""
    methods = []
    for i, m in enumerate(program.methods):
        ref = program.method_refs[m.ref]
        methods.append(
            {
                "class": ref.class_descriptor,
                "name": ref.name,
                "proto": str(ref.proto),
                "invokes": [program.method_refs[ins.invoke_target].signature for ins in program.invokes(i)],
            }
        )
    doc: dict = {"methods": methods, "label": program.label}
    if program.name:
        doc["name"] = program.name
    return doc


def dumps_ir(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True)
