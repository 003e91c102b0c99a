"""Instruction widths (in 16-bit code units) for every Dalvik opcode.

Only the width is needed to walk an instruction stream; operands of
non-invoke instructions stay opaque.  ``None`` marks opcodes unused in
DEX 035-039.
"""

from __future__ import annotations

WIDTHS: list[int | None] = [None] * 256


def _fill(lo: int, hi: int, width: int) -> None:
    for op in range(lo, hi + 1):
        WIDTHS[op] = width


_fill(0x00, 0x01, 1)  # nop, move
_fill(0x02, 0x02, 2)  # move/from16
_fill(0x03, 0x03, 3)  # move/16
_fill(0x04, 0x04, 1)
_fill(0x05, 0x05, 2)
_fill(0x06, 0x06, 3)
_fill(0x07, 0x07, 1)
_fill(0x08, 0x08, 2)
_fill(0x09, 0x09, 3)
_fill(0x0A, 0x12, 1)  # move-result*, move-exception, return*, const/4
_fill(0x13, 0x13, 2)  # const/16
_fill(0x14, 0x14, 3)  # const
_fill(0x15, 0x16, 2)  # const/high16, const-wide/16
_fill(0x17, 0x17, 3)  # const-wide/32
_fill(0x18, 0x18, 5)  # const-wide
_fill(0x19, 0x1A, 2)  # const-wide/high16, const-string
_fill(0x1B, 0x1B, 3)  # const-string/jumbo
_fill(0x1C, 0x1C, 2)  # const-class
_fill(0x1D, 0x1E, 1)  # monitor-enter/exit
_fill(0x1F, 0x20, 2)  # check-cast, instance-of
_fill(0x21, 0x21, 1)  # array-length
_fill(0x22, 0x23, 2)  # new-instance, new-array
_fill(0x24, 0x26, 3)  # filled-new-array(/range), fill-array-data
_fill(0x27, 0x28, 1)  # throw, goto
_fill(0x29, 0x29, 2)  # goto/16
_fill(0x2A, 0x2C, 3)  # goto/32, packed-switch, sparse-switch
_fill(0x2D, 0x3D, 2)  # cmp*, if-*
_fill(0x44, 0x6D, 2)  # aget/aput/iget/iput/sget/sput
_fill(0x6E, 0x72, 3)  # invoke-kind
_fill(0x74, 0x78, 3)  # invoke-kind/range
_fill(0x7B, 0x8F, 1)  # unop
_fill(0x90, 0xAF, 2)  # binop
_fill(0xB0, 0xCF, 1)  # binop/2addr
_fill(0xD0, 0xE2, 2)  # binop/lit16, binop/lit8
_fill(0xFA, 0xFB, 4)  # invoke-polymorphic(/range)
_fill(0xFC, 0xFD, 3)  # invoke-custom(/range)
_fill(0xFE, 0xFF, 2)  # const-method-handle, const-method-type

PACKED_SWITCH_PAYLOAD = 0x0100
SPARSE_SWITCH_PAYLOAD = 0x0200
FILL_ARRAY_DATA_PAYLOAD = 0x0300


def payload_width(units, pos: int) -> int | None:
    """Width of the pseudo-instruction payload starting at ``units[pos]``.

    Returns None when the unit at ``pos`` is a plain nop.  ``units`` is any
    indexable of 16-bit code units; raises IndexError on a short stream.
    """
    ident = units[pos]
    if ident == PACKED_SWITCH_PAYLOAD:
        return 4 + units[pos + 1] * 2
    if ident == SPARSE_SWITCH_PAYLOAD:
        return 2 + units[pos + 1] * 4
    if ident == FILL_ARRAY_DATA_PAYLOAD:
        element_width = units[pos + 1]
        size = units[pos + 2] | (units[pos + 3] << 16)
        return 4 + (element_width * size + 1) // 2
    return None
