"""Little-endian DEX reader.

Only the sections the behavior pipeline needs are read: header, string,
type, proto and method ids, class definitions and code items.  Annotations
and debug info are skipped.

Layout reference: https://source.android.com/docs/core/runtime/dex-format
"""

from __future__ import annotations

import re
import struct

from .errors import BadIndex, DexError, InvalidInstruction, MalformedHeader, TruncatedFile, UnsupportedVersion
from .opcodes import WIDTHS, payload_width
from .types import (
    ClassDef,
    DexProgram,
    Instruction,
    MethodDef,
    MethodRef,
    Prototype,
    Source,
    classify_method_ref,
    is_invoke_opcode,
)

HEADER_SIZE = 0x70
ENDIAN_CONSTANT = 0x12345678
SUPPORTED_VERSIONS = ("035", "036", "037", "038", "039")
NO_INDEX = 0xFFFFFFFF

_MAGIC_RE = re.compile(rb"dex\n(\d\d\d)\x00")

_HEADER = struct.Struct("<8sI20sIIIIII" + "II" * 7)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.size = len(data)

    def check(self, off: int, length: int, what: str) -> None:
        if off < 0 or length < 0 or off + length > self.size:
            raise TruncatedFile(f"{what} at 0x{off:x}+{length} runs past end of file (0x{self.size:x})")

    def u16(self, off: int) -> int:
        self.check(off, 2, "u16")
        return struct.unpack_from("<H", self.data, off)[0]

    def u32(self, off: int) -> int:
        self.check(off, 4, "u32")
        return struct.unpack_from("<I", self.data, off)[0]

    def uleb128(self, off: int) -> tuple[int, int]:
        result = 0
        shift = 0
        for i in range(5):
            self.check(off + i, 1, "uleb128")
            byte = self.data[off + i]
            result |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return result, off + i + 1
            shift += 7
        raise MalformedHeader(f"uleb128 at 0x{off:x} longer than 5 bytes")


def decode_mutf8(raw: bytes) -> str:
    """Decode modified UTF-8 (NUL as C0 80, supplementary chars as surrogate pairs)."""
    raw = raw.replace(b"\xc0\x80", b"\x00")
    try:
        text = raw.decode("utf-8", errors="surrogatepass")
    except UnicodeDecodeError:
        # a damaged name is not worth rejecting the whole file over
        return raw.decode("utf-8", errors="replace")
    try:
        return text.encode("utf-16-le", errors="surrogatepass").decode("utf-16-le")
    except UnicodeDecodeError:
        return text.encode("utf-16-le", errors="surrogatepass").decode("utf-16-le", errors="replace")


def parse_header(data: bytes) -> dict[str, int | str]:
    if len(data) < 8:
        raise MalformedHeader("file too short for DEX magic")
    m = _MAGIC_RE.fullmatch(data[:8])
    if m is None:
        raise MalformedHeader(f"bad magic {data[:8]!r}")
    version = m.group(1).decode()
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"DEX version {version} not supported")
    if len(data) < HEADER_SIZE:
        raise TruncatedFile(f"header needs {HEADER_SIZE} bytes, file has {len(data)}")
    fields = _HEADER.unpack_from(data, 0)
    names = (
        "magic checksum signature file_size header_size endian_tag link_size link_off map_off "
        "string_ids_size string_ids_off type_ids_size type_ids_off proto_ids_size proto_ids_off "
        "field_ids_size field_ids_off method_ids_size method_ids_off class_defs_size class_defs_off "
        "data_size data_off"
    ).split()
    header = dict(zip(names, fields))
    header["version"] = version
    if header["endian_tag"] != ENDIAN_CONSTANT:
        raise MalformedHeader(f"unsupported endian tag 0x{header['endian_tag']:08x}")
    if header["header_size"] != HEADER_SIZE:
        raise MalformedHeader(f"header_size 0x{header['header_size']:x} != 0x70")
    if header["file_size"] > len(data):
        raise TruncatedFile(f"header declares {header['file_size']} bytes, file has {len(data)}")
    if header["file_size"] < len(data):
        raise MalformedHeader(f"header declares {header['file_size']} bytes, file has {len(data)}")
    return header


def parse_dex(data: bytes, name: str = "") -> DexProgram:
    """Parse a DEX binary into a :class:`DexProgram`.

    Raises a :class:`DexError` subclass on any malformed input; never an
    ``IndexError`` or ``struct.error``.
    """
    try:
        return _parse(bytes(data), name)
    except DexError:
        raise
    except (IndexError, struct.error) as exc:
        raise TruncatedFile(str(exc)) from exc


def _section(r: _Reader, header: dict, key: str, item_size: int) -> tuple[int, int]:
    size, off = header[f"{key}_size"], header[f"{key}_off"]
    if size:
        r.check(off, size * item_size, key)
    return size, off


def _parse(data: bytes, name: str) -> DexProgram:
    header = parse_header(data)
    r = _Reader(data)

    n_strings, strings_off = _section(r, header, "string_ids", 4)
    strings = []
    for i in range(n_strings):
        data_off = r.u32(strings_off + 4 * i)
        _, pos = r.uleb128(data_off)
        end = data.find(b"\x00", pos)
        if end < 0:
            raise TruncatedFile(f"string {i} is not NUL-terminated")
        strings.append(decode_mutf8(data[pos:end]))

    def string(idx: int) -> str:
        if idx >= n_strings:
            raise BadIndex(f"string index {idx} >= {n_strings}")
        return strings[idx]

    n_types, types_off = _section(r, header, "type_ids", 4)
    types = [string(r.u32(types_off + 4 * i)) for i in range(n_types)]

    def type_name(idx: int) -> str:
        if idx >= n_types:
            raise BadIndex(f"type index {idx} >= {n_types}")
        return types[idx]

    n_protos, protos_off = _section(r, header, "proto_ids", 12)
    protos = []
    for i in range(n_protos):
        base = protos_off + 12 * i
        ret = type_name(r.u32(base + 4))
        params_off = r.u32(base + 8)
        params: tuple[str, ...] = ()
        if params_off:
            count = r.u32(params_off)
            r.check(params_off + 4, 2 * count, "type_list")
            params = tuple(type_name(r.u16(params_off + 4 + 2 * k)) for k in range(count))
        protos.append(Prototype(params, ret))

    n_methods, methods_off = _section(r, header, "method_ids", 8)
    raw_refs = []
    for i in range(n_methods):
        base = methods_off + 8 * i
        class_idx, proto_idx, name_idx = r.u16(base), r.u16(base + 2), r.u32(base + 4)
        if proto_idx >= n_protos:
            raise BadIndex(f"proto index {proto_idx} >= {n_protos}")
        raw_refs.append((type_name(class_idx), string(name_idx), protos[proto_idx]))

    n_classes, classes_off = _section(r, header, "class_defs", 32)
    classes = []
    methods: list[MethodDef] = []
    defined: set[int] = set()
    for i in range(n_classes):
        base = classes_off + 32 * i
        descriptor = type_name(r.u32(base))
        access = r.u32(base + 4)
        super_idx = r.u32(base + 8)
        source_idx = r.u32(base + 16)
        class_data_off = r.u32(base + 24)
        first = len(methods)
        if class_data_off:
            for m in _class_methods(r, class_data_off, n_methods):
                if m.ref in defined:
                    raise BadIndex(f"method index {m.ref} defined twice")
                defined.add(m.ref)
                methods.append(m)
        classes.append(
            ClassDef(
                descriptor=descriptor,
                superclass=None if super_idx == NO_INDEX else type_name(super_idx),
                access_flags=access,
                source_file=None if source_idx == NO_INDEX else string(source_idx),
                methods=tuple(range(first, len(methods))),
            )
        )

    refs = []
    for idx, (cls, mname, proto) in enumerate(raw_refs):
        ref = MethodRef(cls, mname, proto)
        refs.append(MethodRef(cls, mname, proto, classify_method_ref(ref, defined=idx in defined)))

    return DexProgram(
        classes=tuple(classes),
        methods=tuple(methods),
        method_refs=tuple(refs),
        strings=tuple(strings),
        types=tuple(types),
        source=Source.DEX_BINARY,
        name=name,
        metadata={"version": header["version"], "file_size": header["file_size"]},
    )


def _class_methods(r: _Reader, off: int, n_methods: int):
    n_static, off = r.uleb128(off)
    n_instance, off = r.uleb128(off)
    n_direct, off = r.uleb128(off)
    n_virtual, off = r.uleb128(off)
    for _ in range(n_static + n_instance):
        _, off = r.uleb128(off)
        _, off = r.uleb128(off)
    for count in (n_direct, n_virtual):
        idx = 0
        for _ in range(count):
            diff, off = r.uleb128(off)
            access, off = r.uleb128(off)
            code_off, off = r.uleb128(off)
            idx += diff
            if idx >= n_methods:
                raise BadIndex(f"method index {idx} >= {n_methods}")
            if code_off:
                yield _code_item(r, code_off, idx, access, n_methods)
            else:
                yield MethodDef(ref=idx, access_flags=access)


def _code_item(r: _Reader, off: int, ref: int, access: int, n_methods: int) -> MethodDef:
    registers, ins, outs = r.u16(off), r.u16(off + 2), r.u16(off + 4)
    insns_size = r.u32(off + 12)
    insns_off = off + 16
    r.check(insns_off, 2 * insns_size, "insns")
    units = struct.unpack_from(f"<{insns_size}H", r.data, insns_off)
    return MethodDef(
        ref=ref,
        access_flags=access,
        registers_size=registers,
        ins_size=ins,
        outs_size=outs,
        instructions=tuple(decode_instructions(units, n_methods, r.data, insns_off)),
    )


def decode_instructions(units, n_methods: int, data: bytes = b"", base: int = 0):
    """Walk a code region, yielding one :class:`Instruction` per opcode or payload."""
    pos = 0
    n = len(units)
    while pos < n:
        unit = units[pos]
        op = unit & 0xFF
        width = None
        if op == 0x00:
            try:
                width = payload_width(units, pos)
            except IndexError:
                raise TruncatedFile(f"payload at unit {pos} runs past code end") from None
        if width is None:
            width = WIDTHS[op]
            if width is None:
                raise InvalidInstruction(f"unused opcode 0x{op:02x} at unit {pos}")
        if pos + width > n:
            raise TruncatedFile(f"instruction 0x{op:02x} at unit {pos} runs past code end")
        target = None
        if is_invoke_opcode(op):
            target = units[pos + 1]
            if target >= n_methods:
                raise BadIndex(f"invoke target {target} >= {n_methods}")
        raw = data[base + 2 * pos : base + 2 * (pos + width)] if data else b""
        yield Instruction(offset=pos, opcode=op, width=width, invoke_target=target, raw=raw)
        pos += width
