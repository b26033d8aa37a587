"""Byte-at-a-time SpreadsheetML scanner.

The scanner consumes arbitrary byte windows of a worksheet (or shared
strings) part and emits typed cell/string events.  It is resumable at any
byte: every construct that can straddle a window edge (tag names,
attribute values, entities, numbers, text runs) lives in the scan state,
so feeding a document one byte at a time yields the same events as one
big feed.

Element names are recognized on the fly with per-name counters instead of
copied and compared; irrelevant attribute values are skipped between
their quotes; row numbers, column letters, string indexes and booleans
are deserialized in place.  Floating-point text is the one thing copied
to a side buffer, then converted with an exact 128-bit decimal-to-binary
routine (ambiguous cases fall back to the host parser at drain time).

The hot loop is JIT-compiled with numba (nogil), so parser threads run in
parallel; the Python API here wraps the kernel for tools and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Union

import numpy as np
from numba import njit

from .errors import (
    MalformedDocument,
    MalformedNumber,
    MalformedRef,
    NoAnchorFound,
    Overflow,
)

# --- public enums -------------------------------------------------------

# cell types (the closed set of the `t` attribute on c)
CT_NUMBER = 0
CT_SST = 1
CT_BOOL = 2
CT_ERROR = 3
CT_FORMULA_STR = 4
CT_INLINE = 5

CELL_TYPE_NAMES = {
    CT_NUMBER: "number",
    CT_SST: "shared_string",
    CT_BOOL: "boolean",
    CT_ERROR: "error",
    CT_FORMULA_STR: "formula_string",
    CT_INLINE: "inline_string",
}

# event kinds on the tape
EV_NUM_INT = 1  # f64 payload, integral text deserialized in situ
EV_NUM_FLT = 2  # f64 payload, buffered float path
EV_NUM_TXT = 3  # text span; converted by the host parser at drain time
EV_SST = 4      # i64 shared-string index
EV_BOOL = 5     # i64 0/1
EV_INLINE = 6   # text span
EV_FSTR = 7     # text span (cached formula result or unknown t code)
EV_ERR = 8      # no payload
EV_SSTR = 9     # shared-strings table item; i64 index + text span

# kernel statuses
ST_WINDOW_END = 0
ST_DONE = 1
ST_TAPE_FULL = 2
ST_HEAP_FULL = 3
ST_ANCHOR = 4
ST_MALFORMED = 5

# malformed detail codes
MALF_STRUCT = 1
MALF_NUMBER = 2
MALF_REF = 3
MALF_OVERFLOW = 4
MALF_TAG = 5
MALF_TRUNCATED = 6

# --- element and attribute tables ---------------------------------------

ELEMENT_NAMES = (
    b"sheetData",
    b"row",
    b"c",
    b"v",
    b"is",
    b"f",
    b"t",
    b"sst",
    b"si",
    b"r",
    b"rPh",
    b"rPr",
)
E_SHEETDATA, E_ROW, E_C, E_V, E_IS, E_F, E_T, E_SST, E_SI, E_R, E_RPH, E_RPR = range(12)
_N_NAMES = len(ELEMENT_NAMES)
_NAME_MAX = max(len(n) for n in ELEMENT_NAMES)

_NAMES = np.zeros((_N_NAMES, _NAME_MAX), dtype=np.uint8)
_NAME_LEN = np.zeros(_N_NAMES, dtype=np.int64)
for _j, _nm in enumerate(ELEMENT_NAMES):
    _NAMES[_j, : len(_nm)] = np.frombuffer(_nm, dtype=np.uint8)
    _NAME_LEN[_j] = len(_nm)

# candidate set per first byte: bit j set iff element j starts with the byte
_FIRST_MASK = np.zeros(256, dtype=np.int64)
for _j, _nm in enumerate(ELEMENT_NAMES):
    _FIRST_MASK[_nm[0]] |= 1 << _j

# names of a given length (index clamped to _NAME_MAX) and an index table
# for single-bit masks: the candidate set ANDed with the length mask has at
# most one bit, because equal-length names matching the same bytes would be
# the same name
_LEN_MASK = np.zeros(_NAME_MAX + 2, dtype=np.int64)
for _j, _nm in enumerate(ELEMENT_NAMES):
    _LEN_MASK[len(_nm)] |= 1 << _j
_BIT_INDEX = np.full(1 << _N_NAMES, -1, dtype=np.int64)
for _j in range(_N_NAMES):
    _BIT_INDEX[1 << _j] = _j

# attribute value handling
AV_SKIP = 0
AV_REF = 1
AV_ROWNUM = 2
AV_TYPE = 3
AV_STYLE = 4

# pending value kinds
VK_NONE = 0
VK_NUM = 1
VK_SST = 2
VK_BOOL = 3
VK_ERR = 4
VK_STR = 5
VK_INLINE = 6
VK_SSTR = 7

# content contexts
CTX_PRE = 0
CTX_SHEETDATA = 1
CTX_ROW = 2
CTX_CELL = 3
CTX_VALUE = 4
CTX_STR = 5
CTX_STR_T = 6
CTX_SST = 7
CTX_POST = 8
CTX_HUNT = 9

# micro modes (tag scanning; 1..M_CLOSE_WS are handled by the fused tag
# machine, the rest by dedicated handlers; M_TEXT sits outside the fused
# range so text handlers can fall straight through into the tag machine)
M_TAG_OPEN = 1
M_NAME = 2
M_CLOSE_NAME = 3
M_ATTRS = 4
M_ANAME = 5
M_AEQ = 6
M_AQUOTE = 7
M_AVAL_SKIP = 8
M_AVAL_REF = 9
M_AVAL_INT = 10
M_AVAL_TYPE = 11
M_AVAL_STYLE = 12
M_CLOSE_WS = 13
M_TEXT = 14
M_BANG = 15
M_COMMENT = 16
M_CDATA = 17
M_PI = 18

# --- state slots ---------------------------------------------------------

SL_CTX = 0
SL_MODE = 1
SL_DOCKIND = 2
SL_ROW = 3
SL_COL = 4
SL_CELLTYPE = 5
SL_CELLSTYLE = 6
SL_CELLHASREF = 7
SL_PENDROW = 8
SL_INT = 9
SL_DIGITS = 10
SL_NEG = 11
SL_COLACC = 12
SL_COLLETTERS = 13
SL_REFROW = 14
SL_REFCOL = 15
SL_ATTRKIND = 16
SL_QUOTE = 17
SL_TAGLEN = 18
SL_CLOSING = 19
SL_SELF = 20
SL_ELEM = 21
SL_TYPE1 = 22   # first byte of the t attribute value
SL_AFIRST = 23
SL_ALEN = 24
SL_SKIPDEPTH = 25
SL_SAVEDCTX = 26
SL_HEAPLEN = 27
SL_VALSTART = 28
SL_VALWIN = 29
SL_VALWINEND = 30
SL_VALKIND = 31
SL_FLOATSEEN = 32
SL_ENTLEN = 33
SL_ENT0 = 34          # .. SL_ENT0+9: pending entity bytes (after '&')
SL_MANT = 44
SL_MANTD = 45
SL_EXP10 = 46
SL_EXPACC = 47
SL_EXPNEG = 48
SL_EXPSEEN = 49
SL_DOTSEEN = 50
SL_TRUNC = 51
SL_SSTN = 52
SL_EVLEN = 53
SL_MALF = 54
SL_BANG = 55
SL_PREVB = 56
SL_STRSRC = 57
SL_ANCHOR = 58
SL_CNT_SKIP = 59
SL_CNT_COPY = 60
SL_NEED = 61
SL_NCMASK = 62        # bitmask of element names still matching this tag

STATE_SIZE = 64

# entity capacity (bytes between '&' and ';')
_ENT_CAP = 10
# spare heap bytes required beyond a pending spill (entity decode worst case)
_HEAP_MARGIN = 16

# --- exact decimal -> binary64 table (128-bit powers of five) -----------


def _build_pow5_table() -> np.ndarray:
    lo_q, hi_q = -342, 308
    table = np.zeros(2 * (hi_q - lo_q + 1), dtype=np.uint64)
    mask64 = (1 << 64) - 1
    for q in range(lo_q, hi_q + 1):
        if q >= 0:
            c = 5**q
            b = c.bit_length()
            c = (c >> (b - 128)) if b > 128 else (c << (128 - b))
        else:
            power5 = 5**-q
            b = power5.bit_length()
            c = (1 << (b + 127)) // power5 + 1
        idx = 2 * (q - lo_q)
        table[idx] = (c >> 64) & mask64
        table[idx + 1] = c & mask64
    return table


_POW5 = _build_pow5_table()
_POW5_MIN_Q = -342
_POW5_MAX_Q = 308


@njit(cache=True, nogil=True, inline="always")
def _clz64(x):
    # x is uint64, x != 0
    n = 0
    if x >> np.uint64(32) == np.uint64(0):
        n += 32
        x <<= np.uint64(32)
    if x >> np.uint64(48) == np.uint64(0):
        n += 16
        x <<= np.uint64(16)
    if x >> np.uint64(56) == np.uint64(0):
        n += 8
        x <<= np.uint64(8)
    if x >> np.uint64(60) == np.uint64(0):
        n += 4
        x <<= np.uint64(4)
    if x >> np.uint64(62) == np.uint64(0):
        n += 2
        x <<= np.uint64(2)
    if x >> np.uint64(63) == np.uint64(0):
        n += 1
    return n


@njit(cache=True, nogil=True, inline="always")
def _umul128(a, b):
    mask = np.uint64(0xFFFFFFFF)
    a_lo = a & mask
    a_hi = a >> np.uint64(32)
    b_lo = b & mask
    b_hi = b >> np.uint64(32)
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    cross = (lo_lo >> np.uint64(32)) + (hi_lo & mask) + lo_hi
    high = a_hi * b_hi + (hi_lo >> np.uint64(32)) + (cross >> np.uint64(32))
    low = (cross << np.uint64(32)) | (lo_lo & mask)
    return high, low


@njit(cache=True, nogil=True)
def _decimal_to_f64(mant, q, neg):
    """Exact decimal-to-binary64 for mant*10^q (mant is uint64, untruncated).

    Returns (ok, value).  ok=False means the caller must take the host
    fallback path: subnormals, overflow, and the rare cases where the
    128-bit product cannot certify correct rounding.
    """
    if mant == np.uint64(0):
        return True, -0.0 if neg else 0.0
    if q < -342 or q > 308:
        return False, 0.0
    lz = _clz64(mant)
    w = mant << np.uint64(lz)
    idx = 2 * (q - (-342))
    hi, lo = _umul128(w, _POW5[idx])
    mask9 = np.uint64(0x1FF)
    if (hi & mask9) == mask9:
        hi2, lo2 = _umul128(w, _POW5[idx + 1])
        lo_new = lo + hi2
        if lo_new < hi2:
            hi += np.uint64(1)
        lo = lo_new
        if (hi & mask9) == mask9 and lo + np.uint64(1) == np.uint64(0) and (q < -27 or q > 55):
            return False, 0.0
    upperbit = np.int64(hi >> np.uint64(63))
    m = hi >> np.uint64(upperbit + 9)
    power2 = ((152170 + 65536) * q >> 16) + 63 + upperbit - lz + 1023
    if power2 <= 0:
        return False, 0.0  # subnormal: host fallback
    if lo <= np.uint64(1) and -4 <= q <= 23 and (m & np.uint64(3)) == np.uint64(1):
        if (m << np.uint64(upperbit + 9)) == hi:
            m &= ~np.uint64(1)  # round ties to even
    m += m & np.uint64(1)
    m >>= np.uint64(1)
    if m >= (np.uint64(2) << np.uint64(52)):
        m = np.uint64(1) << np.uint64(52)
        power2 += 1
    if power2 >= 0x7FF:
        return False, 0.0
    m &= ~(np.uint64(1) << np.uint64(52))
    value = math.ldexp(float(m | (np.uint64(1) << np.uint64(52))), power2 - 1075)
    return True, -value if neg else value


# --- the kernel -----------------------------------------------------------

_LT = 60
_GT = 62
_SLASH = 47
_AMP = 38
_SEMI = 59
_EQ = 61
_QUOT = 34
_APOS = 39
_QM = 63
_BANG = 33

# event tape field rows (EW is int64[7, cap]; EF is float64[cap])
EW_KIND = 0
EW_ROW = 1
EW_COL = 2
EW_I64 = 3
EW_T0 = 4
EW_TLEN = 5
EW_SRC = 6


@njit(cache=True, nogil=True, inline="always")
def _is_ws(b):
    return b == 32 or b == 9 or b == 10 or b == 13


@njit(cache=True, nogil=True, inline="always")
def _emit(S, EW, EF, kind, row, col, num, ival, t0, tl, src):
    j = S[SL_EVLEN]
    EW[EW_KIND, j] = kind
    EW[EW_ROW, j] = row
    EW[EW_COL, j] = col
    EW[EW_I64, j] = ival
    EW[EW_T0, j] = t0
    EW[EW_TLEN, j] = tl
    EW[EW_SRC, j] = src
    EF[j] = num
    S[SL_EVLEN] = j + 1


@njit(cache=True, nogil=True, inline="always")
def _spill(S, heap, doc, end):
    vw = S[SL_VALWIN]
    hl = S[SL_HEAPLEN]
    for k in range(vw, end):
        heap[hl] = doc[k]
        hl += 1
    S[SL_CNT_COPY] += end - vw
    S[SL_HEAPLEN] = hl
    S[SL_VALWIN] = -1


@njit(cache=True, nogil=True)
def _decode_entity_into(S, heap):
    """Decode the pending &...; reference into the heap (capacity assumed).

    Unknown references are emitted verbatim, including the delimiters.
    SL_ENTLEN holds the byte count plus one while a reference is active.
    """
    n = S[SL_ENTLEN] - 1
    hl = S[SL_HEAPLEN]
    code = -1
    if n >= 2 and S[SL_ENT0] == 35:  # '#'
        code = 0
        ok = True
        if S[SL_ENT0 + 1] == 120 or S[SL_ENT0 + 1] == 88:  # 'x' | 'X'
            if n < 3:
                ok = False
            for k in range(2, n):
                b = S[SL_ENT0 + k]
                if 48 <= b <= 57:
                    d = b - 48
                elif 97 <= b <= 102:
                    d = b - 87
                elif 65 <= b <= 70:
                    d = b - 55
                else:
                    ok = False
                    break
                code = code * 16 + d
                if code > 0x10FFFF:
                    ok = False
                    break
        else:
            for k in range(1, n):
                b = S[SL_ENT0 + k]
                if 48 <= b <= 57:
                    code = code * 10 + (b - 48)
                else:
                    ok = False
                    break
                if code > 0x10FFFF:
                    ok = False
                    break
        if not ok:
            code = -1
    elif n == 2 and S[SL_ENT0] == 108 and S[SL_ENT0 + 1] == 116:  # lt
        code = 60
    elif n == 2 and S[SL_ENT0] == 103 and S[SL_ENT0 + 1] == 116:  # gt
        code = 62
    elif n == 3 and S[SL_ENT0] == 97 and S[SL_ENT0 + 1] == 109 and S[SL_ENT0 + 2] == 112:  # amp
        code = 38
    elif (
        n == 4
        and S[SL_ENT0] == 113
        and S[SL_ENT0 + 1] == 117
        and S[SL_ENT0 + 2] == 111
        and S[SL_ENT0 + 3] == 116
    ):  # quot
        code = 34
    elif (
        n == 4
        and S[SL_ENT0] == 97
        and S[SL_ENT0 + 1] == 112
        and S[SL_ENT0 + 2] == 111
        and S[SL_ENT0 + 3] == 115
    ):  # apos
        code = 39

    added = 0
    if code < 0:
        heap[hl] = 38  # '&' verbatim
        hl += 1
        added += 1
        for k in range(n):
            heap[hl] = S[SL_ENT0 + k]
            hl += 1
            added += 1
        heap[hl] = 59  # ';'
        hl += 1
        added += 1
    elif code < 0x80:
        heap[hl] = code
        hl += 1
        added = 1
    elif code < 0x800:
        heap[hl] = 0xC0 | (code >> 6)
        heap[hl + 1] = 0x80 | (code & 0x3F)
        hl += 2
        added = 2
    elif code < 0x10000:
        heap[hl] = 0xE0 | (code >> 12)
        heap[hl + 1] = 0x80 | ((code >> 6) & 0x3F)
        heap[hl + 2] = 0x80 | (code & 0x3F)
        hl += 3
        added = 3
    else:
        heap[hl] = 0xF0 | (code >> 18)
        heap[hl + 1] = 0x80 | ((code >> 12) & 0x3F)
        heap[hl + 2] = 0x80 | ((code >> 6) & 0x3F)
        heap[hl + 3] = 0x80 | (code & 0x3F)
        hl += 4
        added = 4
    S[SL_HEAPLEN] = hl
    S[SL_CNT_COPY] += added
    S[SL_ENTLEN] = 0
    return added


@njit(cache=True, nogil=True, inline="always")
def _open_complete(S, doc, heap, EW, EF, i, limit, hunt_cells, positional, report_anchor):
    """Apply the semantic transition for a completed opening tag.

    `i` is the index of the terminating '>' (not yet consumed).
    Returns 0 to continue, 1 -> DONE, 2 -> ANCHOR, 3 -> tape full,
    4 -> heap full, 5 -> malformed.
    """
    elem = S[SL_ELEM]
    self_ = S[SL_SELF]
    ctx = S[SL_CTX]
    hcap = heap.shape[0]
    ecap = EF.shape[0]

    if S[SL_SKIPDEPTH] > 0:
        if self_ == 0:
            S[SL_SKIPDEPTH] += 1
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_ROW:
        if elem == E_C:
            if S[SL_CELLHASREF] != 0:
                S[SL_ROW] = S[SL_REFROW]
                S[SL_COL] = S[SL_REFCOL]
            else:
                S[SL_COL] = S[SL_COL] + 1
            S[SL_CTX] = CTX_ROW if self_ else CTX_CELL
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_ROW or elem == E_SHEETDATA or elem == E_V:
            S[SL_MALF] = MALF_STRUCT
            return 5
        if self_ == 0:
            S[SL_SKIPDEPTH] = 1
            S[SL_SAVEDCTX] = ctx
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_CELL:
        if elem == E_V:
            if self_ == 0:
                ct = S[SL_CELLTYPE]
                if ct == CT_NUMBER:
                    vk = VK_NUM
                elif ct == CT_SST:
                    vk = VK_SST
                elif ct == CT_BOOL:
                    vk = VK_BOOL
                elif ct == CT_ERROR:
                    vk = VK_ERR
                else:
                    vk = VK_STR
                S[SL_VALKIND] = vk
                S[SL_INT] = 0
                S[SL_DIGITS] = 0
                S[SL_NEG] = 0
                S[SL_MANT] = 0
                S[SL_MANTD] = 0
                S[SL_EXP10] = 0
                S[SL_EXPACC] = 0
                S[SL_EXPNEG] = 0
                S[SL_EXPSEEN] = 0
                S[SL_DOTSEEN] = 0
                S[SL_TRUNC] = 0
                S[SL_FLOATSEEN] = 0
                S[SL_VALSTART] = S[SL_HEAPLEN]
                S[SL_VALWIN] = i + 1
                S[SL_VALWINEND] = i + 1
                S[SL_CTX] = CTX_VALUE
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_IS:
            if self_:
                if S[SL_EVLEN] >= ecap:
                    return 3
                _emit(S, EW, EF, EV_INLINE, S[SL_ROW], S[SL_COL], 0.0, 0, 0, 0, 1)
            else:
                S[SL_VALKIND] = VK_INLINE
                S[SL_STRSRC] = 0
                S[SL_VALSTART] = S[SL_HEAPLEN]
                S[SL_VALWIN] = -1
                S[SL_VALWINEND] = -1
                S[SL_CTX] = CTX_STR
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_F:
            if self_ == 0:
                S[SL_SKIPDEPTH] = 1
                S[SL_SAVEDCTX] = ctx
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_C or elem == E_ROW or elem == E_SHEETDATA:
            S[SL_MALF] = MALF_STRUCT
            return 5
        if self_ == 0:
            S[SL_SKIPDEPTH] = 1
            S[SL_SAVEDCTX] = ctx
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_SHEETDATA:
        if elem == E_ROW:
            if S[SL_PENDROW] >= 0:
                S[SL_ROW] = S[SL_PENDROW]
            else:
                S[SL_ROW] = S[SL_ROW] + 1
            S[SL_COL] = 0
            S[SL_CTX] = CTX_SHEETDATA if self_ else CTX_ROW
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_SHEETDATA or elem == E_C or elem == E_V:
            S[SL_MALF] = MALF_STRUCT
            return 5
        if self_ == 0:
            S[SL_SKIPDEPTH] = 1
            S[SL_SAVEDCTX] = ctx
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_STR:
        if elem == E_T:
            if self_ == 0:
                if S[SL_VALWIN] >= 0:
                    # a second text segment follows: spill the first
                    need = S[SL_VALWINEND] - S[SL_VALWIN]
                    if S[SL_HEAPLEN] + need + _HEAP_MARGIN > hcap:
                        S[SL_NEED] = need + _HEAP_MARGIN
                        return 4
                    _spill(S, heap, doc, S[SL_VALWINEND])
                S[SL_CTX] = CTX_STR_T
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_R:
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_RPH or elem == E_RPR:
            if self_ == 0:
                S[SL_SKIPDEPTH] = 1
                S[SL_SAVEDCTX] = ctx
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_C or elem == E_ROW or elem == E_V or elem == E_SHEETDATA or elem == E_SI or elem == E_SST or elem == E_IS:
            S[SL_MALF] = MALF_STRUCT
            return 5
        if self_ == 0:
            S[SL_SKIPDEPTH] = 1
            S[SL_SAVEDCTX] = ctx
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_SST:
        if elem == E_SST:
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_SI:
            if self_:
                if S[SL_EVLEN] >= ecap:
                    return 3
                _emit(S, EW, EF, EV_SSTR, 0, 0, 0.0, S[SL_SSTN], 0, 0, 1)
                S[SL_SSTN] += 1
            else:
                S[SL_VALKIND] = VK_SSTR
                S[SL_STRSRC] = 1
                S[SL_VALSTART] = S[SL_HEAPLEN]
                S[SL_VALWIN] = -1
                S[SL_VALWINEND] = -1
                S[SL_CTX] = CTX_STR
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_V or elem == E_C or elem == E_ROW or elem == E_T:
            S[SL_MALF] = MALF_STRUCT
            return 5
        if self_ == 0:
            S[SL_SKIPDEPTH] = 1
            S[SL_SAVEDCTX] = ctx
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_PRE:
        if elem == E_SHEETDATA:
            S[SL_CTX] = CTX_POST if self_ else CTX_SHEETDATA
            if self_ and limit >= 0:
                S[SL_MODE] = M_TEXT
                return 1
        # other header elements are scanned flat; nothing to do
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_HUNT:
        anchored = False
        if elem == E_SHEETDATA:
            S[SL_CTX] = CTX_POST if self_ else CTX_SHEETDATA
            anchored = True
        elif elem == E_ROW and (S[SL_PENDROW] >= 0 or positional != 0):
            if S[SL_PENDROW] >= 0:
                S[SL_ROW] = S[SL_PENDROW]
            else:
                S[SL_ROW] = S[SL_ROW] + 1
            S[SL_COL] = 0
            S[SL_CTX] = CTX_SHEETDATA if self_ else CTX_ROW
            anchored = True
        elif elem == E_C and hunt_cells != 0 and S[SL_CELLHASREF] != 0:
            S[SL_ROW] = S[SL_REFROW]
            S[SL_COL] = S[SL_REFCOL]
            S[SL_CTX] = CTX_ROW if self_ else CTX_CELL
            anchored = True
        S[SL_MODE] = M_TEXT
        if anchored:
            if S[SL_CTX] == CTX_POST and limit >= 0:
                return 1
            if report_anchor != 0:
                return 2
        return 0

    if ctx == CTX_POST:
        S[SL_MODE] = M_TEXT
        return 0

    # CTX_VALUE / CTX_STR_T never reach here (tag scanning rejects opens there)
    S[SL_MALF] = MALF_STRUCT
    return 5


@njit(cache=True, nogil=True, inline="always")
def _finish_value(S, heap, EW, EF):
    """Emit the event for a completed <v> element. Returns 0/3 (tape full)."""
    if S[SL_EVLEN] >= EF.shape[0]:
        return 3
    vk = S[SL_VALKIND]
    if S[SL_VALWIN] >= 0:
        src = 0
        t0 = S[SL_VALWIN]
        tl = S[SL_VALWINEND] - S[SL_VALWIN]
    else:
        src = 1
        t0 = S[SL_VALSTART]
        tl = S[SL_HEAPLEN] - S[SL_VALSTART]
    row = S[SL_ROW]
    col = S[SL_COL]
    style = S[SL_CELLSTYLE]
    if vk == VK_NUM:
        if S[SL_DIGITS] == 0 and tl == 0:
            pass  # empty value element: blank cell
        elif S[SL_FLOATSEEN] == 0 and S[SL_TRUNC] == 0 and 1 <= S[SL_DIGITS] <= 15:
            v = float(S[SL_INT])
            if S[SL_NEG] != 0:
                v = -v
            _emit(S, EW, EF, EV_NUM_INT, row, col, v, style, 0, 0, 0)
        else:
            done = False
            if S[SL_TRUNC] == 0 and S[SL_MANTD] <= 18 and S[SL_EXPSEEN] != 1 and S[SL_DIGITS] >= 1:
                q = S[SL_EXP10]
                if S[SL_EXPNEG] != 0:
                    q -= S[SL_EXPACC]
                else:
                    q += S[SL_EXPACC]
                ok, v = _decimal_to_f64(np.uint64(S[SL_MANT]), q, S[SL_NEG] != 0)
                if ok:
                    _emit(S, EW, EF, EV_NUM_FLT, row, col, v, style, 0, 0, 0)
                    done = True
            if not done:
                _emit(S, EW, EF, EV_NUM_TXT, row, col, 0.0, style, t0, tl, src)
    elif vk == VK_SST:
        if S[SL_DIGITS] > 0:
            _emit(S, EW, EF, EV_SST, row, col, 0.0, S[SL_INT], 0, 0, 0)
    elif vk == VK_BOOL:
        if S[SL_DIGITS] > 0:
            bv = 1 if S[SL_INT] != 0 else 0
            _emit(S, EW, EF, EV_BOOL, row, col, 0.0, bv, 0, 0, 0)
    elif vk == VK_ERR:
        _emit(S, EW, EF, EV_ERR, row, col, 0.0, 0, 0, 0, 0)
    else:  # VK_STR
        _emit(S, EW, EF, EV_FSTR, row, col, 0.0, 0, t0, tl, src)
    S[SL_VALKIND] = VK_NONE
    S[SL_VALWIN] = -1
    return 0


@njit(cache=True, nogil=True, inline="always")
def _close_complete(S, heap, EW, EF, limit, report_anchor):
    """Apply the transition for a completed closing tag. Same codes as open."""
    elem = S[SL_ELEM]
    ctx = S[SL_CTX]

    if S[SL_SKIPDEPTH] > 0:
        S[SL_SKIPDEPTH] -= 1
        if S[SL_SKIPDEPTH] == 0:
            S[SL_CTX] = S[SL_SAVEDCTX]
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_VALUE:
        if elem == E_V:
            r = _finish_value(S, heap, EW, EF)
            if r != 0:
                return r
            S[SL_CTX] = CTX_CELL
            S[SL_MODE] = M_TEXT
            return 0
        S[SL_MALF] = MALF_STRUCT
        return 5

    if ctx == CTX_CELL:
        if elem == E_C:
            S[SL_CTX] = CTX_ROW
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_V or elem == E_ROW or elem == E_SHEETDATA:
            S[SL_MALF] = MALF_STRUCT
            return 5
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_ROW:
        if elem == E_ROW:
            S[SL_CTX] = CTX_SHEETDATA
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_C or elem == E_V or elem == E_SHEETDATA:
            S[SL_MALF] = MALF_STRUCT
            return 5
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_SHEETDATA:
        if elem == E_SHEETDATA:
            S[SL_CTX] = CTX_POST
            S[SL_MODE] = M_TEXT
            if limit >= 0:
                return 1
            return 0
        if elem == E_ROW or elem == E_C or elem == E_V:
            S[SL_MALF] = MALF_STRUCT
            return 5
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_STR:
        if elem == E_IS and S[SL_STRSRC] == 0:
            if S[SL_EVLEN] >= EF.shape[0]:
                return 3
            if S[SL_VALWIN] >= 0:
                src = 0
                t0 = S[SL_VALWIN]
                tl = S[SL_VALWINEND] - S[SL_VALWIN]
            else:
                src = 1
                t0 = S[SL_VALSTART]
                tl = S[SL_HEAPLEN] - S[SL_VALSTART]
            _emit(S, EW, EF, EV_INLINE, S[SL_ROW], S[SL_COL], 0.0, 0, t0, tl, src)
            S[SL_VALKIND] = VK_NONE
            S[SL_VALWIN] = -1
            S[SL_CTX] = CTX_CELL
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_SI and S[SL_STRSRC] == 1:
            if S[SL_EVLEN] >= EF.shape[0]:
                return 3
            if S[SL_VALWIN] >= 0:
                src = 0
                t0 = S[SL_VALWIN]
                tl = S[SL_VALWINEND] - S[SL_VALWIN]
            else:
                src = 1
                t0 = S[SL_VALSTART]
                tl = S[SL_HEAPLEN] - S[SL_VALSTART]
            _emit(S, EW, EF, EV_SSTR, 0, 0, 0.0, S[SL_SSTN], t0, tl, src)
            S[SL_SSTN] += 1
            S[SL_VALKIND] = VK_NONE
            S[SL_VALWIN] = -1
            S[SL_CTX] = CTX_SST
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_R:
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_T or elem == E_C or elem == E_ROW or elem == E_V or elem == E_SHEETDATA:
            S[SL_MALF] = MALF_STRUCT
            return 5
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_STR_T:
        if elem == E_T:
            S[SL_CTX] = CTX_STR
            S[SL_MODE] = M_TEXT
            return 0
        S[SL_MALF] = MALF_STRUCT
        return 5

    if ctx == CTX_SST:
        if elem == E_SST:
            S[SL_CTX] = CTX_POST
            S[SL_MODE] = M_TEXT
            return 0
        if elem == E_SI or elem == E_T or elem == E_V:
            S[SL_MALF] = MALF_STRUCT
            return 5
        S[SL_MODE] = M_TEXT
        return 0

    if ctx == CTX_HUNT:
        if elem == E_SHEETDATA:
            S[SL_CTX] = CTX_POST
            S[SL_MODE] = M_TEXT
            if limit >= 0:
                return 1
            if report_anchor != 0:
                return 2
            return 0
        S[SL_MODE] = M_TEXT
        return 0

    # PRE / POST: stray closes are skipped flat
    S[SL_MODE] = M_TEXT
    return 0


@njit(cache=True, nogil=True)
def _scan(
    doc, start, S, heap, EW, EF,
    win_global, limit, hunt_cells, positional, report_anchor
):
    """Scan `doc[start:]`, mutating state and filling the event tape.

    Returns (status, pos): pos is where scanning stopped; for TAPE_FULL /
    HEAP_FULL the caller drains/grows and resumes at pos with the same
    window.
    """
    n = doc.shape[0]
    hcap = heap.shape[0]
    i = start
    mode = S[SL_MODE]
    ctx = S[SL_CTX]

    while i < n:
        # ------------------------------------------------------ text modes
        if mode == M_TEXT:
            if ctx == CTX_VALUE or ctx == CTX_STR_T:
                vk = S[SL_VALKIND]

                # pending entity continuation
                if S[SL_ENTLEN] > 0:
                    while i < n:
                        b = doc[i]
                        if b == _SEMI:
                            if S[SL_HEAPLEN] + _HEAP_MARGIN > hcap:
                                S[SL_NEED] = _HEAP_MARGIN
                                S[SL_MODE] = mode
                                S[SL_CTX] = ctx
                                return ST_HEAP_FULL, i
                            _decode_entity_into(S, heap)
                            i += 1
                            break
                        if S[SL_ENTLEN] - 1 >= _ENT_CAP or b == _LT or b == _AMP:
                            # not a real reference: flush verbatim, reprocess b
                            k = S[SL_ENTLEN] - 1
                            if S[SL_HEAPLEN] + k + 1 > hcap:
                                S[SL_NEED] = k + 1 + _HEAP_MARGIN
                                S[SL_MODE] = mode
                                S[SL_CTX] = ctx
                                return ST_HEAP_FULL, i
                            hl = S[SL_HEAPLEN]
                            heap[hl] = _AMP
                            hl += 1
                            for m in range(k):
                                heap[hl] = S[SL_ENT0 + m]
                                hl += 1
                            S[SL_CNT_COPY] += k + 1
                            S[SL_HEAPLEN] = hl
                            S[SL_ENTLEN] = 0
                            break
                        S[SL_ENT0 + (S[SL_ENTLEN] - 1)] = b
                        S[SL_ENTLEN] += 1
                        i += 1
                    continue

                if vk == VK_NUM:
                    # hot path: hoist the numeric accumulators into locals
                    acc = S[SL_INT]
                    digits = S[SL_DIGITS]
                    mant = S[SL_MANT]
                    mantd = S[SL_MANTD]
                    exp10 = S[SL_EXP10]
                    expseen = S[SL_EXPSEEN]
                    expacc = S[SL_EXPACC]
                    dotseen = S[SL_DOTSEEN]
                    trunc = S[SL_TRUNC]
                    valwin = S[SL_VALWIN]
                    hl = S[SL_HEAPLEN]
                    status = -1
                    while i < n:
                        b = doc[i]
                        if 48 <= b <= 57:
                            d = b - 48
                            if digits < 18:
                                acc = acc * 10 + d
                            digits += 1
                            if expseen != 0:
                                expseen = 2
                                if expacc < 100000:
                                    expacc = expacc * 10 + d
                                else:
                                    trunc = 1
                            else:
                                if mant == 0 and d == 0 and mantd == 0:
                                    if dotseen != 0:
                                        exp10 -= 1
                                elif mantd < 18:
                                    mant = mant * 10 + d
                                    mantd += 1
                                    if dotseen != 0:
                                        exp10 -= 1
                                else:
                                    if dotseen == 0:
                                        exp10 += 1
                                    if d != 0:
                                        trunc = 1
                            if valwin < 0:
                                if hl >= hcap:
                                    S[SL_NEED] = _HEAP_MARGIN
                                    status = ST_HEAP_FULL
                                    break
                                heap[hl] = b
                                hl += 1
                                S[SL_CNT_COPY] += 1
                            i += 1
                            continue
                        if b == _LT:
                            S[SL_VALWINEND] = i
                            mode = M_TAG_OPEN
                            i += 1
                            break
                        # non-digit byte: switch to the buffered path
                        spill_needed = valwin >= 0
                        need = (i - valwin) if spill_needed else 0
                        if hl + need + _HEAP_MARGIN > hcap:
                            S[SL_NEED] = need + _HEAP_MARGIN
                            status = ST_HEAP_FULL
                            break
                        if spill_needed:
                            for k in range(valwin, i):
                                heap[hl] = doc[k]
                                hl += 1
                            S[SL_CNT_COPY] += i - valwin
                            valwin = -1
                        if b == 46:  # '.'
                            if dotseen != 0 or expseen != 0:
                                trunc = 1
                            dotseen = 1
                            S[SL_FLOATSEEN] = 1
                        elif b == 101 or b == 69:  # e E
                            if expseen != 0:
                                trunc = 1
                            expseen = 1
                            S[SL_FLOATSEEN] = 1
                        elif b == 45:  # '-'
                            if digits == 0 and S[SL_NEG] == 0 and S[SL_FLOATSEEN] == 0 and dotseen == 0:
                                S[SL_NEG] = 1
                            elif expseen == 1:
                                S[SL_EXPNEG] = 1
                                expseen = 2
                            else:
                                trunc = 1
                                S[SL_FLOATSEEN] = 1
                        elif b == 43:  # '+'
                            if expseen == 1:
                                expseen = 2
                            else:
                                trunc = 1
                                S[SL_FLOATSEEN] = 1
                        elif b == _AMP:
                            trunc = 1
                            S[SL_FLOATSEEN] = 1
                            S[SL_ENTLEN] = 1
                            i += 1
                            continue
                        else:
                            trunc = 1
                            S[SL_FLOATSEEN] = 1
                        heap[hl] = b
                        hl += 1
                        S[SL_CNT_COPY] += 1
                        i += 1
                    S[SL_INT] = acc
                    S[SL_DIGITS] = digits
                    S[SL_MANT] = mant
                    S[SL_MANTD] = mantd
                    S[SL_EXP10] = exp10
                    S[SL_EXPSEEN] = expseen
                    S[SL_EXPACC] = expacc
                    S[SL_DOTSEEN] = dotseen
                    S[SL_TRUNC] = trunc
                    S[SL_VALWIN] = valwin
                    S[SL_HEAPLEN] = hl
                    if status >= 0:
                        S[SL_MODE] = mode
                        S[SL_CTX] = ctx
                        return status, i
                    if mode == M_TEXT:
                        continue  # window end mid-number
                elif vk == VK_SST or vk == VK_BOOL:
                    while i < n:
                        b = doc[i]
                        if 48 <= b <= 57:
                            S[SL_INT] = S[SL_INT] * 10 + (b - 48)
                            S[SL_DIGITS] += 1
                            if S[SL_INT] >= 2147483647:
                                S[SL_MALF] = MALF_OVERFLOW
                                S[SL_MODE] = mode
                                S[SL_CTX] = ctx
                                return ST_MALFORMED, i
                            i += 1
                            continue
                        if b == _LT:
                            S[SL_VALWINEND] = i
                            mode = M_TAG_OPEN
                            i += 1
                            break
                        S[SL_MALF] = MALF_NUMBER
                        S[SL_MODE] = mode
                        S[SL_CTX] = ctx
                        return ST_MALFORMED, i
                    if mode == M_TEXT:
                        continue
                elif vk == VK_ERR:
                    while i < n and doc[i] != _LT:
                        i += 1
                    if i < n:
                        S[SL_VALWINEND] = i
                        mode = M_TAG_OPEN
                        i += 1
                    if mode == M_TEXT:
                        continue
                # VK_STR / VK_INLINE / VK_SSTR: text accumulation
                elif S[SL_VALWIN] >= 0 or S[SL_HEAPLEN] == S[SL_VALSTART]:
                    # in-situ run (may start one)
                    if S[SL_VALWIN] < 0:
                        S[SL_VALWIN] = i
                    j = i
                    while j < n:
                        b = doc[j]
                        if b == _LT or b == _AMP:
                            break
                        j += 1
                    i = j
                    if i >= n:
                        continue
                    b = doc[i]
                    if b == _LT:
                        S[SL_VALWINEND] = i
                        mode = M_TAG_OPEN
                        i += 1
                    else:
                        # '&': spill and start entity
                        need = i - S[SL_VALWIN]
                        if S[SL_HEAPLEN] + need + _HEAP_MARGIN > hcap:
                            S[SL_NEED] = need + _HEAP_MARGIN
                            S[SL_MODE] = mode
                            S[SL_CTX] = ctx
                            return ST_HEAP_FULL, i
                        _spill(S, heap, doc, i)
                        S[SL_ENTLEN] = 1
                        i += 1
                        continue
                else:
                    # spilled: append bytes to the heap
                    while i < n:
                        b = doc[i]
                        if b == _LT:
                            S[SL_VALWINEND] = i
                            mode = M_TAG_OPEN
                            i += 1
                            break
                        if b == _AMP:
                            S[SL_ENTLEN] = 1
                            i += 1
                            break
                        if S[SL_HEAPLEN] >= hcap:
                            S[SL_NEED] = _HEAP_MARGIN
                            S[SL_MODE] = mode
                            S[SL_CTX] = ctx
                            return ST_HEAP_FULL, i
                        heap[S[SL_HEAPLEN]] = b
                        S[SL_HEAPLEN] += 1
                        S[SL_CNT_COPY] += 1
                        i += 1
                    if mode == M_TEXT:
                        continue
            else:
                # non-capturing contexts: skim to the next structural byte
                while i < n and doc[i] != _LT:
                    i += 1
                if i >= n:
                    break
                if limit >= 0 and S[SL_SKIPDEPTH] == 0 and win_global + i >= limit:
                    if (
                        ctx == CTX_HUNT
                        or ctx == CTX_SHEETDATA
                        or ctx == CTX_POST
                        or ctx == CTX_PRE
                        or ctx == CTX_SST
                        or (ctx == CTX_ROW and positional == 0)
                    ):
                        S[SL_MODE] = mode
                        S[SL_CTX] = ctx
                        return ST_DONE, i
                S[SL_ANCHOR] = win_global + i
                mode = M_TAG_OPEN
                i += 1

        # ------------------------------------------------- fused tag modes
        if mode <= M_CLOSE_WS:
            tmode = mode
            if mode == M_TAG_OPEN:
                # fresh tag: no resumed sub-state to load
                tl = 0
                mask = 0
                afirst = 0
                alen = 0
                quote = 0
                attrkind = 0
                acc = 0
                digits = 0
                colacc = 0
                letters = 0
                type1 = 0
            else:
                tl = S[SL_TAGLEN]
                mask = S[SL_NCMASK]
                afirst = S[SL_AFIRST]
                alen = S[SL_ALEN]
                quote = S[SL_QUOTE]
                attrkind = S[SL_ATTRKIND]
                # SL_INT/SL_DIGITS double as the value accumulators, so the
                # attribute copies are only live while resuming mid-value
                if M_AVAL_REF <= mode <= M_AVAL_STYLE:
                    acc = S[SL_INT]
                    digits = S[SL_DIGITS]
                    colacc = S[SL_COLACC]
                    letters = S[SL_COLLETTERS]
                    type1 = S[SL_TYPE1]
                else:
                    acc = 0
                    digits = 0
                    colacc = 0
                    letters = 0
                    type1 = 0
            # exit protocol: ret >= 0 -> return (ret, rpos);
            # ret == -1 -> back to outer loop (mode/ctx refreshed);
            # ret == -2 -> window end
            ret = -2
            rpos = i

            while i < n:
                b = doc[i]

                if tmode == M_TAG_OPEN:
                    if b == _SLASH:
                        S[SL_CLOSING] = 1
                        S[SL_SELF] = 0
                        tl = 0
                        mask = 0
                        tmode = M_CLOSE_NAME
                        i += 1
                        continue
                    if b == _QM:
                        S[SL_PREVB] = 0
                        mode = M_PI
                        ret = -1
                        i += 1
                        break
                    if b == _BANG:
                        # comment/CDATA may interrupt captured text: spill the run
                        if (ctx == CTX_VALUE or ctx == CTX_STR_T) and S[SL_VALWIN] >= 0:
                            need = S[SL_VALWINEND] - S[SL_VALWIN]
                            if S[SL_HEAPLEN] + need + _HEAP_MARGIN > hcap:
                                S[SL_NEED] = need + _HEAP_MARGIN
                                ret = ST_HEAP_FULL
                                rpos = i
                                break
                            _spill(S, heap, doc, S[SL_VALWINEND])
                        S[SL_BANG] = 0
                        mode = M_BANG
                        ret = -1
                        i += 1
                        break
                    if ctx == CTX_VALUE or ctx == CTX_STR_T:
                        S[SL_MALF] = MALF_STRUCT
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if b == _GT or _is_ws(b):
                        S[SL_MALF] = MALF_TAG
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    S[SL_CLOSING] = 0
                    S[SL_SELF] = 0
                    tl = 1
                    mask = _FIRST_MASK[b]
                    tmode = M_NAME
                    i += 1
                    continue

                if tmode == M_NAME or tmode == M_CLOSE_NAME:
                    if tmode == M_CLOSE_NAME and tl == 0:
                        if b == _GT or _is_ws(b):
                            S[SL_MALF] = MALF_TAG
                            ret = ST_MALFORMED
                            rpos = i
                            break
                        mask = _FIRST_MASK[b]
                        tl = 1
                        i += 1
                    terminated = False
                    while i < n:
                        b = doc[i]
                        if b == _GT or b == _SLASH or _is_ws(b):
                            terminated = True
                            break
                        if mask != 0:
                            m2 = 0
                            m = mask
                            while m != 0:
                                low = m & (-m)
                                j = _BIT_INDEX[low]
                                if tl < _NAME_LEN[j] and _NAMES[j, tl] == b:
                                    m2 |= low
                                m ^= low
                            mask = m2
                        tl += 1
                        i += 1
                    if not terminated:
                        break  # window end mid-name
                    elem = -1
                    if mask != 0 and tl <= _NAME_MAX:
                        elem = _BIT_INDEX[mask & _LEN_MASK[tl]]
                    S[SL_ELEM] = elem
                    if tmode == M_NAME and S[SL_SKIPDEPTH] == 0:
                        if elem == E_C:
                            S[SL_CELLTYPE] = CT_NUMBER
                            S[SL_CELLSTYLE] = -1
                            S[SL_CELLHASREF] = 0
                        elif elem == E_ROW:
                            S[SL_PENDROW] = -1
                    if b == _GT:
                        S[SL_CTX] = ctx
                        if tmode == M_NAME:
                            r = _open_complete(S, doc, heap, EW, EF, i, limit, hunt_cells, positional, report_anchor)
                        else:
                            r = _close_complete(S, heap, EW, EF, limit, report_anchor)
                        ctx = S[SL_CTX]
                        if r == 0:
                            mode = M_TEXT
                            ret = -1
                            i += 1
                            break
                        if r == 1:
                            ret = ST_DONE
                            rpos = i + 1
                            tmode = M_TEXT
                            break
                        if r == 2:
                            ret = ST_ANCHOR
                            rpos = i + 1
                            tmode = M_TEXT
                            break
                        if r == 3:
                            ret = ST_TAPE_FULL
                            rpos = i
                            break
                        if r == 4:
                            ret = ST_HEAP_FULL
                            rpos = i
                            break
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if b == _SLASH:
                        if tmode == M_CLOSE_NAME:
                            S[SL_MALF] = MALF_TAG
                            ret = ST_MALFORMED
                            rpos = i
                            break
                        S[SL_SELF] = 1
                        tmode = M_ATTRS
                        i += 1
                        continue
                    tmode = M_ATTRS if tmode == M_NAME else M_CLOSE_WS
                    i += 1
                    continue

                if tmode == M_ATTRS or tmode == M_CLOSE_WS:
                    while i < n and _is_ws(doc[i]):
                        i += 1
                    if i >= n:
                        break
                    b = doc[i]
                    if b == _GT:
                        S[SL_CTX] = ctx
                        if tmode == M_ATTRS:
                            r = _open_complete(S, doc, heap, EW, EF, i, limit, hunt_cells, positional, report_anchor)
                        else:
                            r = _close_complete(S, heap, EW, EF, limit, report_anchor)
                        ctx = S[SL_CTX]
                        if r == 0:
                            mode = M_TEXT
                            ret = -1
                            i += 1
                            break
                        if r == 1:
                            ret = ST_DONE
                            rpos = i + 1
                            tmode = M_TEXT
                            break
                        if r == 2:
                            ret = ST_ANCHOR
                            rpos = i + 1
                            tmode = M_TEXT
                            break
                        if r == 3:
                            ret = ST_TAPE_FULL
                            rpos = i
                            break
                        if r == 4:
                            ret = ST_HEAP_FULL
                            rpos = i
                            break
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if tmode == M_CLOSE_WS:
                        S[SL_MALF] = MALF_TAG
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if b == _SLASH:
                        S[SL_SELF] = 1
                        i += 1
                        continue
                    afirst = b
                    alen = 1
                    tmode = M_ANAME
                    i += 1
                    continue

                if tmode == M_ANAME or tmode == M_AEQ:
                    bad = False
                    while i < n:
                        b = doc[i]
                        if b == _EQ:
                            break
                        if _is_ws(b):
                            tmode = M_AEQ
                        elif tmode == M_AEQ:
                            bad = True
                            break
                        else:
                            alen += 1
                        i += 1
                    if bad:
                        S[SL_MALF] = MALF_TAG
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if i >= n:
                        break
                    # b == '=': classify the attribute
                    attrkind = AV_SKIP
                    if S[SL_SKIPDEPTH] == 0 and alen == 1:
                        if S[SL_ELEM] == E_C:
                            if afirst == 114:  # r
                                attrkind = AV_REF
                            elif afirst == 116:  # t
                                attrkind = AV_TYPE
                            elif afirst == 115:  # s
                                attrkind = AV_STYLE
                        elif S[SL_ELEM] == E_ROW and afirst == 114:
                            attrkind = AV_ROWNUM
                    tmode = M_AQUOTE
                    i += 1
                    continue

                if tmode == M_AQUOTE:
                    while i < n and _is_ws(doc[i]):
                        i += 1
                    if i >= n:
                        break
                    b = doc[i]
                    if b == _QUOT or b == _APOS:
                        quote = b
                        acc = 0
                        digits = 0
                        colacc = 0
                        letters = 0
                        type1 = 0
                        if attrkind == AV_SKIP:
                            S[SL_CNT_SKIP] += 1
                            tmode = M_AVAL_SKIP
                        elif attrkind == AV_REF:
                            tmode = M_AVAL_REF
                        elif attrkind == AV_ROWNUM:
                            tmode = M_AVAL_INT
                        elif attrkind == AV_TYPE:
                            tmode = M_AVAL_TYPE
                        else:
                            tmode = M_AVAL_STYLE
                        i += 1
                        continue
                    S[SL_MALF] = MALF_TAG
                    ret = ST_MALFORMED
                    rpos = i
                    break

                if tmode == M_AVAL_SKIP:
                    j = i
                    while j < n and doc[j] != quote:
                        j += 1
                    S[SL_CNT_SKIP] += j - i
                    i = j
                    if i >= n:
                        break
                    S[SL_CNT_SKIP] += 1
                    tmode = M_ATTRS
                    i += 1
                    continue

                if tmode == M_AVAL_REF:
                    malf = 0
                    done = False
                    while i < n:
                        b = doc[i]
                        if 65 <= b <= 90:  # A-Z
                            if digits > 0:
                                malf = MALF_REF
                                break
                            colacc = colacc * 26 + (b - 64)
                            letters += 1
                            if colacc > 16384:
                                malf = MALF_OVERFLOW
                                break
                        elif 48 <= b <= 57:
                            if letters == 0:
                                malf = MALF_REF
                                break
                            acc = acc * 10 + (b - 48)
                            digits += 1
                            if acc >= 2147483647:
                                malf = MALF_OVERFLOW
                                break
                        elif b == quote:
                            done = True
                            break
                        else:
                            malf = MALF_REF
                            break
                        i += 1
                    if malf != 0:
                        S[SL_MALF] = malf
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if not done:
                        break  # window end
                    if letters == 0 or digits == 0:
                        S[SL_MALF] = MALF_REF
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    S[SL_CELLHASREF] = 1
                    S[SL_REFROW] = acc
                    S[SL_REFCOL] = colacc
                    tmode = M_ATTRS
                    i += 1
                    continue

                if tmode == M_AVAL_INT or tmode == M_AVAL_STYLE:
                    malf = 0
                    done = False
                    while i < n:
                        b = doc[i]
                        if 48 <= b <= 57:
                            acc = acc * 10 + (b - 48)
                            digits += 1
                            if acc >= 2147483647:
                                malf = MALF_OVERFLOW
                                break
                        elif b == quote:
                            done = True
                            break
                        else:
                            malf = MALF_REF
                            break
                        i += 1
                    if malf != 0:
                        S[SL_MALF] = malf
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if not done:
                        break
                    if digits == 0:
                        S[SL_MALF] = MALF_REF
                        ret = ST_MALFORMED
                        rpos = i
                        break
                    if tmode == M_AVAL_INT:
                        S[SL_PENDROW] = acc
                    else:
                        S[SL_CELLSTYLE] = acc
                    tmode = M_ATTRS
                    i += 1
                    continue

                # tmode == M_AVAL_TYPE
                done = False
                while i < n:
                    b = doc[i]
                    if b == quote:
                        done = True
                        break
                    if digits == 0:
                        type1 = b
                    digits += 1
                    i += 1
                if not done:
                    break
                ln = digits
                ct = CT_FORMULA_STR
                if ln == 1:
                    if type1 == 110:  # n
                        ct = CT_NUMBER
                    elif type1 == 115:  # s
                        ct = CT_SST
                    elif type1 == 98:  # b
                        ct = CT_BOOL
                    elif type1 == 101:  # e
                        ct = CT_ERROR
                elif ln == 3 and type1 == 115:  # str
                    ct = CT_FORMULA_STR
                elif ln == 9 and type1 == 105:  # inlineStr
                    ct = CT_INLINE
                S[SL_CELLTYPE] = ct
                tmode = M_ATTRS
                i += 1
                continue

            if ret == -1:
                continue
            # leaving mid-tag: persist the fused sub-state
            S[SL_TAGLEN] = tl
            S[SL_NCMASK] = mask
            S[SL_AFIRST] = afirst
            S[SL_ALEN] = alen
            S[SL_QUOTE] = quote
            S[SL_ATTRKIND] = attrkind
            if M_AVAL_REF <= tmode <= M_AVAL_STYLE:
                S[SL_INT] = acc
                S[SL_DIGITS] = digits
                S[SL_COLACC] = colacc
                S[SL_COLLETTERS] = letters
                S[SL_TYPE1] = type1
            if ret >= 0:
                S[SL_MODE] = tmode
                S[SL_CTX] = ctx
                return ret, rpos
            # window end mid-tag
            mode = tmode
            break

        # --------------------------------------------------- cold tag modes
        b = doc[i]

        if mode == M_PI:
            j = i
            prev = S[SL_PREVB]
            while j < n:
                b2 = doc[j]
                if b2 == _GT and prev == _QM:
                    mode = M_TEXT
                    j += 1
                    prev = 0
                    break
                prev = b2
                j += 1
            S[SL_PREVB] = prev
            i = j
            continue

        if mode == M_BANG:
            st = S[SL_BANG]
            if st == 0:
                if b == 45:  # '-'
                    S[SL_BANG] = 1
                elif b == 91:  # '['
                    S[SL_BANG] = 10
                else:
                    S[SL_BANG] = 99
                i += 1
                continue
            if st == 1:
                if b == 45:
                    S[SL_PREVB] = 0
                    mode = M_COMMENT
                else:
                    S[SL_BANG] = 99
                i += 1
                continue
            if 10 <= st <= 15:
                # expect CDATA[ after '[', byte by byte
                k = st - 10
                if k == 0:
                    expect = 67  # C
                elif k == 1:
                    expect = 68  # D
                elif k == 2:
                    expect = 65  # A
                elif k == 3:
                    expect = 84  # T
                elif k == 4:
                    expect = 65  # A
                else:
                    expect = 91  # [
                if b == expect:
                    if k == 5:
                        S[SL_PREVB] = 0
                        mode = M_CDATA
                    else:
                        S[SL_BANG] = st + 1
                else:
                    S[SL_BANG] = 99
                i += 1
                continue
            # st == 99: generic <!...> skip
            if b == _GT:
                mode = M_TEXT
            i += 1
            continue

        if mode == M_COMMENT:
            j = i
            cnt = S[SL_PREVB]
            while j < n:
                b2 = doc[j]
                if b2 == 45:
                    if cnt < 2:
                        cnt += 1
                elif b2 == _GT and cnt >= 2:
                    mode = M_TEXT
                    j += 1
                    cnt = 0
                    break
                else:
                    cnt = 0
                j += 1
            S[SL_PREVB] = cnt
            i = j
            continue

        if mode == M_CDATA:
            j = i
            cnt = S[SL_PREVB]
            while j < n:
                b2 = doc[j]
                if b2 == 93:  # ']'
                    if cnt < 2:
                        cnt += 1
                elif b2 == _GT and cnt >= 2:
                    mode = M_TEXT
                    j += 1
                    cnt = 0
                    break
                else:
                    cnt = 0
                j += 1
            S[SL_PREVB] = cnt
            i = j
            continue

        # unreachable mode
        S[SL_MALF] = MALF_STRUCT
        S[SL_MODE] = mode
        S[SL_CTX] = ctx
        return ST_MALFORMED, i

    # ------------------------------------------------------- window end
    # persist any in-situ pending text: the window is about to go away
    S[SL_MODE] = mode
    S[SL_CTX] = ctx
    if S[SL_VALWIN] >= 0:
        if ctx == CTX_VALUE or ctx == CTX_STR_T or ctx == CTX_STR:
            # still inside open text: up to n; already past the '<' of the
            # terminating tag (or between string segments): up to the
            # recorded end
            end = n
            if mode != M_TEXT or ctx == CTX_STR:
                end = S[SL_VALWINEND]
            need = end - S[SL_VALWIN]
            if S[SL_HEAPLEN] + need + _HEAP_MARGIN > hcap:
                S[SL_NEED] = need + _HEAP_MARGIN
                return ST_HEAP_FULL, n
            if need > 0:
                _spill(S, heap, doc, end)
            else:
                S[SL_VALWIN] = -1
    return ST_WINDOW_END, n


# --- Python-level API ------------------------------------------------------

WORKSHEET = 0
SHARED_STRINGS = 1

_MALF_ERRORS = {
    MALF_STRUCT: MalformedDocument,
    MALF_TAG: MalformedDocument,
    MALF_TRUNCATED: MalformedDocument,
    MALF_NUMBER: MalformedNumber,
    MALF_REF: MalformedRef,
    MALF_OVERFLOW: Overflow,
}

DEFAULT_TAPE_CAPACITY = 1 << 16
DEFAULT_HEAP_CAPACITY = 1 << 20


@dataclass(frozen=True)
class CellEvent:
    row: int
    col: int
    type: int  # CT_* code
    payload: object  # float | int | bool | bytes | None
    style: int = -1


@dataclass(frozen=True)
class StringEvent:
    index: int
    text: bytes


class ParseState:
    """Resumable scanner state over one XML part.

    One state per thread; feed windows in document order.  `limit` bounds
    the owned byte range for chunked parsing (-1 = unbounded); `hunt`
    starts in anchor-recovery mode for windows that begin mid-document.
    """

    def __init__(
        self,
        kind: int = WORKSHEET,
        hunt: bool = False,
        hunt_cells: bool = True,
        positional: bool = False,
        start_row: int = 0,
        limit: int = -1,
        tape_capacity: int = DEFAULT_TAPE_CAPACITY,
        heap_capacity: int = DEFAULT_HEAP_CAPACITY,
    ):
        self.kind = kind
        self.S = np.zeros(STATE_SIZE, dtype=np.int64)
        self.S[SL_DOCKIND] = kind
        self.S[SL_MODE] = M_TEXT
        self.S[SL_CTX] = CTX_SST if kind == SHARED_STRINGS else (CTX_HUNT if hunt else CTX_PRE)
        self.S[SL_VALWIN] = -1
        self.S[SL_PENDROW] = -1
        self.S[SL_CELLSTYLE] = -1
        self.S[SL_ROW] = start_row
        self.heap = np.empty(heap_capacity, dtype=np.uint8)
        self.EW = np.empty((7, tape_capacity), dtype=np.int64)
        self.EF = np.empty(tape_capacity, dtype=np.float64)
        self.ev_kind = self.EW[EW_KIND]
        self.ev_row = self.EW[EW_ROW]
        self.ev_col = self.EW[EW_COL]
        self.ev_i64 = self.EW[EW_I64]
        self.ev_t0 = self.EW[EW_T0]
        self.ev_tlen = self.EW[EW_TLEN]
        self.ev_src = self.EW[EW_SRC]
        self.ev_num = self.EF
        self.limit = limit
        self.hunt_cells = 1 if hunt_cells else 0
        self.positional = 1 if positional else 0
        self.report_anchor = 0
        self.heap_grow_events = 0

    # instrumentation
    @property
    def bytes_copied(self) -> int:
        return int(self.S[SL_CNT_COPY])

    @property
    def attr_bytes_skipped(self) -> int:
        """Bytes consumed inside skipped attribute values, quotes included."""
        return int(self.S[SL_CNT_SKIP])

    @property
    def event_count(self) -> int:
        return int(self.S[SL_EVLEN])

    @property
    def current_row(self) -> int:
        return int(self.S[SL_ROW])

    @property
    def current_col(self) -> int:
        return int(self.S[SL_COL])

    def reset(
        self,
        hunt: bool = False,
        hunt_cells: bool = True,
        positional: bool = False,
        start_row: int = 0,
        limit: int = -1,
    ) -> None:
        """Rewind for a fresh window, reusing the tape and heap buffers."""
        S = self.S
        S[:] = 0
        S[SL_DOCKIND] = self.kind
        S[SL_MODE] = M_TEXT
        S[SL_CTX] = CTX_SST if self.kind == SHARED_STRINGS else (CTX_HUNT if hunt else CTX_PRE)
        S[SL_VALWIN] = -1
        S[SL_PENDROW] = -1
        S[SL_CELLSTYLE] = -1
        S[SL_ROW] = start_row
        self.limit = limit
        self.hunt_cells = 1 if hunt_cells else 0
        self.positional = 1 if positional else 0

    def _grow_heap(self) -> None:
        need = int(self.S[SL_NEED])
        new_cap = max(self.heap.shape[0] * 2, int(self.S[SL_HEAPLEN]) + need)
        new_heap = np.empty(new_cap, dtype=np.uint8)
        new_heap[: int(self.S[SL_HEAPLEN])] = self.heap[: int(self.S[SL_HEAPLEN])]
        self.heap = new_heap
        self.heap_grow_events += 1

    def _reset_tape(self) -> None:
        """Drop drained events and compact the pending heap tail to offset 0."""
        self.S[SL_EVLEN] = 0
        start = int(self.S[SL_VALSTART])
        length = int(self.S[SL_HEAPLEN]) - start
        if start > 0:
            if length > 0:
                self.heap[:length] = self.heap[start : start + length]
            self.S[SL_VALSTART] = 0
            self.S[SL_HEAPLEN] = length

    def run(self, window: np.ndarray, win_global: int, drain) -> tuple[int, int]:
        """Scan one window, calling drain(state, window) whenever the tape
        needs consuming. Returns (status, pos) for WINDOW_END / DONE /
        ANCHOR."""
        pos = 0
        while True:
            status, pos = _scan(
                window, pos, self.S, self.heap, self.EW, self.EF,
                win_global, self.limit, self.hunt_cells, self.positional,
                self.report_anchor,
            )
            if status == ST_TAPE_FULL:
                drain(self, window)
                self._reset_tape()
                continue
            if status == ST_HEAP_FULL:
                if self.S[SL_EVLEN] > 0:
                    drain(self, window)
                    self._reset_tape()
                self._grow_heap()
                continue
            if status == ST_MALFORMED:
                drain(self, window)
                self._reset_tape()
                exc = _MALF_ERRORS.get(int(self.S[SL_MALF]), MalformedDocument)
                raise exc(f"at byte {win_global + pos}")
            drain(self, window)
            self._reset_tape()
            return status, pos

    def finish(self) -> None:
        """Validate that the document may legally end here."""
        S = self.S
        ctx = int(S[SL_CTX])
        ok_ctx = (CTX_PRE, CTX_POST, CTX_HUNT) if S[SL_DOCKIND] == WORKSHEET else (CTX_POST,)
        if int(S[SL_MODE]) != M_TEXT or int(S[SL_ENTLEN]) > 0 or int(S[SL_SKIPDEPTH]) > 0 or ctx not in ok_ctx:
            raise MalformedDocument("document ends inside an open construct")


def _as_window(data) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    if arr.dtype != np.uint8:
        arr = arr.view(np.uint8)
    if arr.flags.writeable:
        arr = arr[:]
        arr.flags.writeable = False
    return arr


def materialize_events(state: ParseState, window: np.ndarray) -> list:
    """Turn the current tape into CellEvent/StringEvent objects."""
    out = []
    n = int(state.S[SL_EVLEN])
    heap = state.heap
    for j in range(n):
        kind = int(state.ev_kind[j])
        t0 = int(state.ev_t0[j])
        tl = int(state.ev_tlen[j])
        if kind in (EV_INLINE, EV_FSTR, EV_SSTR, EV_NUM_TXT) and tl >= 0:
            buf = heap if state.ev_src[j] == 1 else window
            text = bytes(buf[t0 : t0 + tl])
        else:
            text = b""
        row = int(state.ev_row[j])
        col = int(state.ev_col[j])
        style = int(state.ev_i64[j])
        if kind in (EV_NUM_INT, EV_NUM_FLT):
            out.append(CellEvent(row, col, CT_NUMBER, float(state.ev_num[j]), style))
        elif kind == EV_NUM_TXT:
            out.append(CellEvent(row, col, CT_NUMBER, deserialize_float_buffered(text), style))
        elif kind == EV_SST:
            out.append(CellEvent(row, col, CT_SST, int(state.ev_i64[j])))
        elif kind == EV_BOOL:
            out.append(CellEvent(row, col, CT_BOOL, bool(state.ev_i64[j])))
        elif kind == EV_INLINE:
            out.append(CellEvent(row, col, CT_INLINE, text))
        elif kind == EV_FSTR:
            out.append(CellEvent(row, col, CT_FORMULA_STR, text))
        elif kind == EV_ERR:
            out.append(CellEvent(row, col, CT_ERROR, None))
        elif kind == EV_SSTR:
            out.append(StringEvent(int(state.ev_i64[j]), text))
    return out


def feed_bytes(state: ParseState, data, sink, win_global: int = 0) -> ParseState:
    """Feed one window; complete constructs are emitted to sink exactly once.

    `sink` is a callable taking one event, or a list to append to.
    """
    push = sink.append if isinstance(sink, list) else sink

    def drain(st: ParseState, window: np.ndarray) -> None:
        for event in materialize_events(st, window):
            push(event)

    window = _as_window(data)
    state.run(window, win_global, drain)
    return state


def resolve_chunk_start(window, positional: bool = False, hunt_cells: bool = True):
    """Find the first safely parseable construct in an arbitrary window.

    Returns (offset, state): offset of the anchoring '<' and a fresh
    hunting state; feeding window[offset:] parses from unambiguous ground.
    Raises NoAnchorFound if the window holds no anchor.
    """
    win = _as_window(window)
    probe = ParseState(WORKSHEET, hunt=True, hunt_cells=hunt_cells, positional=positional)
    probe.report_anchor = 1
    status, _pos = probe.run(win, 0, lambda st, w: None)
    if status != ST_ANCHOR:
        raise NoAnchorFound("window contains no row/cell/sheetData anchor")
    offset = int(probe.S[SL_ANCHOR])
    state = ParseState(WORKSHEET, hunt=True, hunt_cells=hunt_cells, positional=positional)
    return offset, state


# --- documented scalar operations ----------------------------------------

INT_OVERFLOW_LIMIT = 2**31 - 1
MAX_COLUMNS = 16384


def deserialize_int_stream(accumulator: int, byte: int) -> int:
    """One in-situ decimal digit step: acc*10 + digit."""
    if not 48 <= byte <= 57:
        raise MalformedNumber(f"byte {byte!r} is not a decimal digit")
    acc = accumulator * 10 + (byte - 48)
    if acc >= INT_OVERFLOW_LIMIT:
        raise Overflow(f"integer accumulator reached {acc}")
    return acc


def deserialize_col_letters(accumulator: int, byte: int) -> int:
    """One base-26 column-letter step: acc*26 + (letter - 'A' + 1)."""
    if not 65 <= byte <= 90:
        raise MalformedRef(f"byte {byte!r} is not an uppercase letter")
    acc = accumulator * 26 + (byte - 64)
    if acc > MAX_COLUMNS:
        raise Overflow(f"column accumulator reached {acc}")
    return acc


def parse_cell_ref(ref: bytes) -> tuple[int, int]:
    """A1-style reference -> (row, col), both 1-based."""
    if isinstance(ref, str):
        ref = ref.encode()
    col = 0
    i = 0
    n = len(ref)
    while i < n and 65 <= ref[i] <= 90:
        col = deserialize_col_letters(col, ref[i])
        i += 1
    if i == 0 or i == n:
        raise MalformedRef(ref)
    row = 0
    for j in range(i, n):
        if not 48 <= ref[j] <= 57:
            raise MalformedRef(ref)
        row = deserialize_int_stream(row, ref[j])
    if row == 0:
        raise MalformedRef(ref)
    return row, col


def col_to_letters(col: int) -> str:
    """Inverse of the base-26 deserialization (1 -> A, 27 -> AA)."""
    if col < 1:
        raise ValueError(col)
    out = []
    while col:
        col, rem = divmod(col - 1, 26)
        out.append(chr(65 + rem))
    return "".join(reversed(out))


_NAMED_ENTITIES = {b"lt": b"<", b"gt": b">", b"amp": b"&", b"quot": b'"', b"apos": b"'"}


def decode_entity(pending: bytes) -> bytes:
    """Decode one complete &...; reference; unknown references come back
    verbatim."""
    if isinstance(pending, str):
        pending = pending.encode()
    if not (pending.startswith(b"&") and pending.endswith(b";") and len(pending) >= 3):
        return pending
    body = pending[1:-1]
    if body in _NAMED_ENTITIES:
        return _NAMED_ENTITIES[body]
    if body.startswith(b"#"):
        try:
            code = int(body[2:], 16) if body[1:2] in (b"x", b"X") else int(body[1:], 10)
            if 0 <= code <= 0x10FFFF:
                return chr(code).encode("utf-8")
        except ValueError:
            pass
    return pending


def deserialize_float_buffered(buf: bytes) -> float:
    """Convert complete buffered value text with the host's exact parser."""
    try:
        return float(buf.decode("utf-8", "strict"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedNumber(buf[:64]) from exc


def convert_decimal(mant: int, exp10: int, neg: bool) -> tuple[bool, float]:
    """Exact decimal-to-double used by the kernel, exposed for testing."""
    return _decimal_to_f64(np.uint64(mant), exp10, neg)


class NameMatcher:
    """On-the-fly element-name recognition with per-name counters.

    Counters advance when the byte matches the next expected character and
    reset to zero otherwise; at a terminating character, the element whose
    counter equals both its length and the number of bytes seen is the one
    just read.
    """

    def __init__(self, names: Iterable[bytes] = ELEMENT_NAMES):
        self.names = [bytes(n) for n in names]
        self.counters = [0] * len(self.names)
        self.length = 0

    def step(self, byte: int) -> None:
        for j, name in enumerate(self.names):
            c = self.counters[j]
            if c < len(name) and name[c] == byte:
                self.counters[j] = c + 1
            else:
                self.counters[j] = 0
        self.length += 1

    def recognized(self) -> Optional[bytes]:
        for j, name in enumerate(self.names):
            if self.counters[j] == len(name) and self.length == len(name):
                return name
        return None

    def reset(self) -> None:
        self.counters = [0] * len(self.names)
        self.length = 0


def warm_up() -> None:
    """Force kernel compilation (cached on disk after the first session)."""
    doc = b'<worksheet><sheetData><row r="1"><c r="A1"><v>1.5</v></c></row></sheetData></worksheet>'
    state = ParseState(WORKSHEET)
    events: list = []
    feed_bytes(state, doc, events)
    state.finish()
    assert len(events) == 1
