"""Tiny DEX assembler used to produce binary fixtures for the parser tests.

Writes header, id sections, class_data, code_items, type_lists,
string_data and a map_list with the checksum and SHA-1 signature filled in.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field


@dataclass
class Method:
    name: str
    params: tuple[str, ...]
    ret: str
    code: list | None  # list of ("raw", [units]) / ("invoke", opcode, signature, [regs])
    access: int = 0x1
    direct: bool = False
    registers: int = 4
    ins: int = 0
    outs: int = 0


@dataclass
class Class:
    descriptor: str
    superclass: str = "Ljava/lang/Object;"
    methods: list[Method] = field(default_factory=list)


def split_sig(sig: str):
    cls, rest = sig.split("->")
    name, proto = rest.split("(", 1)
    params_text, ret = proto.split(")")
    params, i = [], 0
    while i < len(params_text):
        j = i
        while params_text[j] == "[":
            j += 1
        if params_text[j] == "L":
            j = params_text.index(";", j)
        params.append(params_text[i : j + 1])
        i = j + 1
    return cls, name, tuple(params), ret


def _uleb(value: int) -> bytes:
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def _shorty(t: str) -> str:
    return "L" if t[0] in "L[" else t


def _align(buf: bytearray, n: int = 4) -> None:
    while len(buf) % n:
        buf.append(0)


def build_dex(classes: list[Class], version: bytes = b"035") -> bytes:
    # Collect every method reference: definitions plus invoke targets.
    method_keys = []
    for c in classes:
        for m in c.methods:
            method_keys.append((c.descriptor, m.name, m.params, m.ret))
            for item in m.code or []:
                if item[0] == "invoke":
                    method_keys.append(split_sig(item[2]))
    method_keys = list(dict.fromkeys(method_keys))

    type_set = set()
    for c in classes:
        type_set.add(c.descriptor)
        if c.superclass:
            type_set.add(c.superclass)
    for cls, _, params, ret in method_keys:
        type_set.update((cls, ret, *params))
    protos = sorted({(ret, params) for _, _, params, ret in method_keys})
    string_set = set(type_set)
    string_set.update(name for _, name, _, _ in method_keys)
    string_set.update(_shorty(ret) + "".join(_shorty(p) for p in params) for ret, params in protos)
    strings = sorted(string_set)
    sidx = {s: i for i, s in enumerate(strings)}
    types = sorted(type_set, key=lambda t: sidx[t])
    tidx = {t: i for i, t in enumerate(types)}
    protos.sort(key=lambda p: (tidx[p[0]], [tidx[x] for x in p[1]]))
    pidx = {p: i for i, p in enumerate(protos)}
    method_keys.sort(key=lambda k: (tidx[k[0]], sidx[k[1]], pidx[(k[3], k[2])]))
    midx = {k: i for i, k in enumerate(method_keys)}

    n_str, n_typ, n_pro, n_met, n_cls = len(strings), len(types), len(protos), len(method_keys), len(classes)
    string_ids_off = 0x70
    type_ids_off = string_ids_off + 4 * n_str
    proto_ids_off = type_ids_off + 4 * n_typ
    method_ids_off = proto_ids_off + 12 * n_pro
    class_defs_off = method_ids_off + 8 * n_met
    data_off = class_defs_off + 32 * n_cls

    data = bytearray()

    def here() -> int:
        return data_off + len(data)

    # code items (4-aligned)
    code_offs = {}
    n_code = 0
    for c in classes:
        for m in c.methods:
            if m.code is None:
                continue
            _align(data)
            if n_code == 0:
                code_start = here()
            n_code += 1
            units = []
            for item in m.code:
                if item[0] == "raw":
                    units.extend(item[1])
                else:
                    _, op, sig, regs = item
                    target = midx[split_sig(sig)]
                    if 0x74 <= op <= 0x78:
                        units.extend([(len(regs) << 8) | op, target, regs[0] if regs else 0])
                    else:
                        r = list(regs) + [0] * (5 - len(regs))
                        units.extend([(len(regs) << 12) | (r[4] << 8) | op, target, r[0] | (r[1] << 4) | (r[2] << 8) | (r[3] << 12)])
            code_offs[(c.descriptor, m.name, m.params, m.ret)] = here()
            data += struct.pack("<HHHHII", m.registers, m.ins, m.outs, 0, 0, len(units))
            data += struct.pack(f"<{len(units)}H", *units)

    # type lists
    _align(data)
    type_list_start = here()
    tl_offs = {}
    for ret, params in protos:
        if params and params not in tl_offs:
            _align(data)
            tl_offs[params] = here()
            data += struct.pack("<I", len(params))
            data += struct.pack(f"<{len(params)}H", *(tidx[p] for p in params))
    n_tl = len(tl_offs)

    # string data
    string_data_start = here()
    str_offs = []
    for s in strings:
        str_offs.append(here())
        data += _uleb(len(s)) + s.encode() + b"\x00"

    # class data
    class_data_start = here()
    cd_offs = []
    n_cd = 0
    for c in classes:
        if not c.methods:
            cd_offs.append(0)
            continue
        n_cd += 1
        cd_offs.append(here())
        direct = sorted((m for m in c.methods if m.direct), key=lambda m: midx[(c.descriptor, m.name, m.params, m.ret)])
        virtual = sorted((m for m in c.methods if not m.direct), key=lambda m: midx[(c.descriptor, m.name, m.params, m.ret)])
        data += _uleb(0) + _uleb(0) + _uleb(len(direct)) + _uleb(len(virtual))
        for group in (direct, virtual):
            prev = 0
            for m in group:
                key = (c.descriptor, m.name, m.params, m.ret)
                data += _uleb(midx[key] - prev) + _uleb(m.access) + _uleb(code_offs.get(key, 0))
                prev = midx[key]

    # map list
    _align(data)
    map_off = here()
    entries = [
        (0x0000, 1, 0),
        (0x0001, n_str, string_ids_off),
        (0x0002, n_typ, type_ids_off),
        (0x0003, n_pro, proto_ids_off),
        (0x0005, n_met, method_ids_off),
        (0x0006, n_cls, class_defs_off),
    ]
    if n_code:
        entries.append((0x2001, n_code, code_start))
    if n_tl:
        entries.append((0x1001, n_tl, type_list_start))
    entries.append((0x2002, n_str, string_data_start))
    if n_cd:
        entries.append((0x2000, n_cd, class_data_start))
    entries.append((0x1000, 1, map_off))
    entries = [e for e in entries if e[1]]
    data += struct.pack("<I", len(entries))
    for typ, size, off in entries:
        data += struct.pack("<HHII", typ, 0, size, off)

    body = bytearray()
    body += b"".join(struct.pack("<I", o) for o in str_offs)
    body += b"".join(struct.pack("<I", sidx[t]) for t in types)
    for ret, params in protos:
        shorty = _shorty(ret) + "".join(_shorty(p) for p in params)
        body += struct.pack("<III", sidx[shorty], tidx[ret], tl_offs.get(params, 0) if params else 0)
    for cls, name, params, ret in method_keys:
        body += struct.pack("<HHI", tidx[cls], pidx[(ret, params)], sidx[name])
    for c, cd in zip(classes, cd_offs):
        sup = tidx[c.superclass] if c.superclass else 0xFFFFFFFF
        body += struct.pack("<IIIIIIII", tidx[c.descriptor], 0x1, sup, 0, 0xFFFFFFFF, 0, cd, 0)
    assert len(body) == data_off - 0x70

    file_size = data_off + len(data)
    header = bytearray(0x70)
    header[0:8] = b"dex\n" + version + b"\x00"
    struct.pack_into(
        "<IIIIII" + "II" * 7,
        header,
        0x20,
        file_size, 0x70, 0x12345678, 0, 0, map_off,
        n_str, string_ids_off if n_str else 0,
        n_typ, type_ids_off if n_typ else 0,
        n_pro, proto_ids_off if n_pro else 0,
        0, 0,
        n_met, method_ids_off if n_met else 0,
        n_cls, class_defs_off if n_cls else 0,
        len(data), data_off,
    )
    out = header + body + data
    out[12:32] = hashlib.sha1(bytes(out[32:])).digest()
    struct.pack_into("<I", out, 8, zlib.adler32(bytes(out[12:])))
    return bytes(out)


def minimal_fixture() -> bytes:
    """One class, one static method: invoke-virtual, move-result-object, invoke-static, return-void."""
    run = Method(
        name="run",
        params=("Landroid/telephony/TelephonyManager;",),
        ret="V",
        access=0x9,
        direct=True,
        registers=2,
        ins=1,
        outs=1,
        code=[
            ("invoke", 0x6E, "Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;", [1]),
            ("raw", [0x000C]),
            ("invoke", 0x71, "Landroid/telephony/SmsManager;->getDefault()Landroid/telephony/SmsManager;", []),
            ("raw", [0x000E]),
        ],
    )
    return build_dex([Class("Lcom/example/Main;", methods=[run])])
