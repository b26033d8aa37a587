from __future__ import annotations

import itertools
import random
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sheetreader.errors import (
    MalformedDocument,
    MalformedNumber,
    MalformedRef,
    NoAnchorFound,
    Overflow,
)
from sheetreader.scanner import (
    CT_BOOL,
    CT_ERROR,
    CT_FORMULA_STR,
    CT_INLINE,
    CT_NUMBER,
    CT_SST,
    ELEMENT_NAMES,
    SHARED_STRINGS,
    WORKSHEET,
    CellEvent,
    NameMatcher,
    ParseState,
    StringEvent,
    col_to_letters,
    convert_decimal,
    decode_entity,
    deserialize_col_letters,
    deserialize_float_buffered,
    deserialize_int_stream,
    feed_bytes,
    parse_cell_ref,
    resolve_chunk_start,
)


def parse_all(doc: bytes, kind=WORKSHEET, **kw) -> list:
    state = ParseState(kind, **kw)
    events: list = []
    feed_bytes(state, doc, events)
    state.finish()
    return events


def parse_split(doc: bytes, cuts: list[int], kind=WORKSHEET) -> list:
    state = ParseState(kind)
    events: list = []
    pos = 0
    for cut in list(cuts) + [len(doc)]:
        feed_bytes(state, doc[pos:cut], events, win_global=pos)
        pos = cut
    state.finish()
    return events


# --- whole-document behaviour ----------------------------------------------

FRAGMENT = b'<worksheet><sheetData><row r="2"><c r="B2" t="s"><v>0</v></c></row></sheetData></worksheet>'


def test_shared_string_cell_event():
    assert parse_all(FRAGMENT) == [CellEvent(2, 2, CT_SST, 0)]


def test_byte_at_a_time_is_identical():
    whole = parse_all(FRAGMENT)
    state = ParseState(WORKSHEET)
    events: list = []
    for k in range(len(FRAGMENT)):
        feed_bytes(state, FRAGMENT[k : k + 1], events, win_global=k)
    state.finish()
    assert events == whole


def test_self_closed_row_has_no_events():
    doc = b'<worksheet><sheetData><row r="1"/><row r="2"><c r="A2"><v>5</v></c></row></sheetData></worksheet>'
    assert parse_all(doc) == [CellEvent(2, 1, CT_NUMBER, 5.0, -1)]


MIXED = (
    b"<worksheet><sheetData>"
    b'<row r="2"><c r="A2"/><c r="B2"><v>42</v></c><c r="C2" t="b"><v>1</v></c>'
    b'<c r="D2" t="e"><v>#DIV/0!</v></c>'
    b'<c r="E2" t="inlineStr"><is><t>he&amp;llo</t></is></c>'
    b'<c r="F2" s="3"><v>-2.5E2</v></c>'
    b'<c r="G2" t="str"><v>res</v></c></row>'
    b"</sheetData></worksheet>"
)
MIXED_EVENTS = [
    CellEvent(2, 2, CT_NUMBER, 42.0, -1),
    CellEvent(2, 3, CT_BOOL, True),
    CellEvent(2, 4, CT_ERROR, None),
    CellEvent(2, 5, CT_INLINE, b"he&llo"),
    CellEvent(2, 6, CT_NUMBER, -250.0, 3),
    CellEvent(2, 7, CT_FORMULA_STR, b"res"),
]


def test_cell_type_dispatch():
    assert parse_all(MIXED) == MIXED_EVENTS


def test_window_split_invariance_small():
    rng = random.Random(20)
    for _ in range(400):
        cuts = sorted(rng.sample(range(1, len(MIXED)), rng.randint(0, 16)))
        assert parse_split(MIXED, cuts) == MIXED_EVENTS


def test_blank_cells_emit_nothing():
    doc = b'<worksheet><sheetData><row r="1"><c r="A1"/><c r="B1" s="2"/><c r="C1"><v></v></c></row></sheetData></worksheet>'
    assert parse_all(doc) == []


def test_unknown_elements_and_attributes_skipped():
    doc = (
        b'<worksheet><cols><col min="1" max="3"/></cols><sheetData>'
        b'<row r="1" ht="15.75" customHeight="1"><c r="A1" weird="x&lt;y"><v>7</v></c>'
        b"<extLst><foo><bar/></foo></extLst></row>"
        b"</sheetData><pageMargins left=\"0.7\"/></worksheet>"
    )
    assert parse_all(doc) == [CellEvent(1, 1, CT_NUMBER, 7.0, -1)]


def test_formula_content_is_skipped():
    doc = (
        b'<worksheet><sheetData><row r="1">'
        b'<c r="A1"><f>SUM(B1:C1)</f><v>12</v></c>'
        b'<c r="B1" t="str"><f aca="1">"x"&amp;"y"</f><v>xy</v></c>'
        b"</row></sheetData></worksheet>"
    )
    assert parse_all(doc) == [
        CellEvent(1, 1, CT_NUMBER, 12.0, -1),
        CellEvent(1, 2, CT_FORMULA_STR, b"xy"),
    ]


def test_comments_and_cdata_are_skipped():
    doc = (
        b"<worksheet><!-- header --><sheetData>"
        b'<row r="1"><c r="A1"><v>1<!-- mid -->2</v></c>'
        b'<c r="B1" t="inlineStr"><is><t>a<![CDATA[zap]]>b</t></is></c></row>'
        b"</sheetData></worksheet>"
    )
    assert parse_all(doc) == [
        CellEvent(1, 1, CT_NUMBER, 12.0, -1),
        CellEvent(1, 2, CT_INLINE, b"ab"),
    ]


def test_shared_strings_document():
    doc = (
        b'<sst count="4" uniqueCount="4"><si><t>abc</t></si>'
        b"<si><r><rPr><b/></rPr><t>d</t></r><r><t xml:space=\"preserve\"> e</t></r></si>"
        b"<si><rPh sb=\"0\" eb=\"1\"><t>ignored</t></rPh><t>kanji</t></si>"
        b"<si><t/></si></sst>"
    )
    assert parse_all(doc, kind=SHARED_STRINGS) == [
        StringEvent(0, b"abc"),
        StringEvent(1, b"d e"),
        StringEvent(2, b"kanji"),
        StringEvent(3, b""),
    ]


def test_positional_cells_without_refs():
    doc = (
        b"<worksheet><sheetData>"
        b"<row><c><v>1</v></c><c/><c><v>3</v></c></row>"
        b"<row/>"
        b"<row><c><v>9</v></c></row>"
        b"</sheetData></worksheet>"
    )
    assert parse_all(doc) == [
        CellEvent(1, 1, CT_NUMBER, 1.0, -1),
        CellEvent(1, 3, CT_NUMBER, 3.0, -1),
        CellEvent(3, 1, CT_NUMBER, 9.0, -1),
    ]


def test_malformed_value_close_outside_value():
    with pytest.raises(MalformedDocument):
        parse_all(b'<worksheet><sheetData><row r="1"></v></row></sheetData></worksheet>')


def test_malformed_truncated_document():
    with pytest.raises(MalformedDocument):
        parse_all(b'<worksheet><sheetData><row r="1"><c r="A1"><v>1')


def test_row_number_overflow():
    with pytest.raises(Overflow):
        parse_all(b'<worksheet><sheetData><row r="99999999999"><c r="A1"><v>1</v></c></row></sheetData></worksheet>')


# --- instrumentation ---------------------------------------------------------


def test_attribute_value_skipping_counts():
    doc = b'<worksheet><sheetData><row r="1" ht="15.75"><c r="A1"><v>1</v></c></row></sheetData></worksheet>'
    state = ParseState(WORKSHEET)
    events: list = []
    feed_bytes(state, doc, events)
    state.finish()
    assert events == [CellEvent(1, 1, CT_NUMBER, 1.0, -1)]
    assert state.attr_bytes_skipped == 7  # 15.75 plus its two quotes
    assert state.bytes_copied == 0  # in-situ integer: no copies


def test_skipped_attr_with_tag_end_inside_quotes():
    doc = b'<worksheet><sheetData><row r="1" x="a>b"><c r="A1"><v>2</v></c></row></sheetData></worksheet>'
    assert parse_all(doc) == [CellEvent(1, 1, CT_NUMBER, 2.0, -1)]


def test_empty_attr_value():
    doc = b'<worksheet><sheetData><row r="1" spans=""><c r="A1"><v>3</v></c></row></sheetData></worksheet>'
    state = ParseState(WORKSHEET)
    events: list = []
    feed_bytes(state, doc, events)
    assert events == [CellEvent(1, 1, CT_NUMBER, 3.0, -1)]
    assert state.attr_bytes_skipped == 2  # just the quotes


def test_skip_soundness_events_unchanged():
    """Junk attributes may consume bytes but never change the events."""
    rng = random.Random(4)
    base_cells = [(r, c, rng.randint(0, 999)) for r in range(1, 20) for c in range(1, 6)]
    with_attrs = []
    without = []
    for r in range(1, 20):
        wa = [f'<row r="{r}" ht="{rng.random():.2f}" x="{rng.randint(0,9)}">']
        wo = [f'<row r="{r}">']
        for rr, c, v in [t for t in base_cells if t[0] == r]:
            ref = f"{col_to_letters(c)}{r}"
            wa.append(f'<c r="{ref}" junk="[{rng.random()}]"><v>{v}</v></c>')
            wo.append(f'<c r="{ref}"><v>{v}</v></c>')
        wa.append("</row>")
        wo.append("</row>")
        with_attrs.append("".join(wa))
        without.append("".join(wo))
    doc_a = ("<worksheet><sheetData>" + "".join(with_attrs) + "</sheetData></worksheet>").encode()
    doc_b = ("<worksheet><sheetData>" + "".join(without) + "</sheetData></worksheet>").encode()
    assert parse_all(doc_a) == parse_all(doc_b)


def test_single_visit_copy_accounting():
    # float values buffer exactly their text; integers and in-window strings copy nothing
    doc = b'<worksheet><sheetData><row r="1"><c r="A1"><v>1.25</v></c><c r="B1"><v>777</v></c><c r="C1" t="inlineStr"><is><t>zz</t></is></c></row></sheetData></worksheet>'
    state = ParseState(WORKSHEET)
    events: list = []
    feed_bytes(state, doc, events)
    assert [e.payload for e in events] == [1.25, 777.0, b"zz"]
    assert state.bytes_copied == len(b"1.25")


# --- element-name matching ---------------------------------------------------


def test_match_element_name_examples():
    m = NameMatcher()
    for b in b"row":
        m.step(b)
    assert m.recognized() == b"row"  # counter 3 == len at the terminator

    m.reset()
    for b in b"rox":
        m.step(b)
    assert m.recognized() is None  # mismatch resets the counter

    m.reset()
    for b in b"sheetData":
        m.step(b)
    assert m.recognized() == b"sheetData"  # counter 9


def test_match_element_name_random_strings():
    rng = random.Random(99)
    names = set(ELEMENT_NAMES)
    alphabet = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    for name in names:  # exhaustive over the known names
        m = NameMatcher()
        for b in name:
            m.step(b)
        assert m.recognized() == name
    for _ in range(4000):  # randomized over non-names
        length = rng.randint(1, 8)
        word = bytes(rng.choice(alphabet) for _ in range(length))
        m = NameMatcher()
        for b in word:
            m.step(b)
        got = m.recognized()
        assert got == (word if word in names else None), word


def test_kernel_recognition_matches_name_matcher():
    # embedded-name tags like <crow> or <rrow> must not be recognized
    for tag in (b"crow", b"rrow", b"xrow", b"cc", b"rowx", b"ro"):
        doc = b"<worksheet><sheetData><" + tag + b"/></sheetData></worksheet>"
        assert parse_all(doc) == []


# --- in-situ deserialization --------------------------------------------------


def test_int_stream_examples():
    acc = 0
    for b in b"375":
        acc = deserialize_int_stream(acc, b)
    assert acc == 375
    assert deserialize_int_stream(0, ord("0")) == 0


def test_int_stream_split_windows():
    acc = 0
    for b in b"12":
        acc = deserialize_int_stream(acc, b)
    for b in b"34":
        acc = deserialize_int_stream(acc, b)
    assert acc == 1234  # whole-string parse is the oracle
    assert acc == int(b"1234")


def test_int_stream_overflow():
    acc = 0
    with pytest.raises(Overflow):
        for b in b"99999999999":
            acc = deserialize_int_stream(acc, b)


def spreadsheet_letter_sequences():
    """Brute-force enumerator of column letters in spreadsheet order."""
    for length in range(1, 4):
        for combo in itertools.product(range(26), repeat=length):
            yield bytes(65 + c for c in combo)


def test_col_letters_against_enumerator():
    expected = {}
    for i, letters in enumerate(spreadsheet_letter_sequences(), start=1):
        if i > 16384:
            break
        expected[letters] = i
    for letters, want in [(b"A", 1), (b"Z", 26), (b"AA", 27), (b"CV", 100)]:
        acc = 0
        for b in letters:
            acc = deserialize_col_letters(acc, b)
        assert acc == want == expected[letters]
    # spot-check the whole enumeration
    rng = random.Random(1)
    for letters in rng.sample(list(expected), 300):
        acc = 0
        for b in letters:
            acc = deserialize_col_letters(acc, b)
        assert acc == expected[letters]
        assert col_to_letters(acc).encode() == letters


def test_col_letters_overflow():
    with pytest.raises(Overflow):
        acc = 0
        for b in b"ZZZZ":
            acc = deserialize_col_letters(acc, b)


def test_parse_cell_ref():
    assert parse_cell_ref(b"A1") == (1, 1)
    assert parse_cell_ref(b"B2") == (2, 2)
    assert parse_cell_ref(b"AA100") == (100, 27)
    for bad in (b"", b"A", b"1", b"A0", b"a1", b"A1B"):
        with pytest.raises(MalformedRef):
            parse_cell_ref(bad)


# --- entities ------------------------------------------------------------------


def test_decode_entity_table():
    assert decode_entity(b"&lt;") == b"<"
    assert decode_entity(b"&gt;") == b">"
    assert decode_entity(b"&amp;") == b"&"
    assert decode_entity(b"&quot;") == b'"'
    assert decode_entity(b"&apos;") == b"'"
    assert decode_entity(b"&#65;") == b"A"
    assert decode_entity(b"&#x41;") == b"A"
    assert decode_entity(b"&#x1F600;") == "\U0001f600".encode()
    assert decode_entity(b"&bogus;") == b"&bogus;"  # verbatim, not an error


def test_entities_against_reference_parser():
    import xml.etree.ElementTree as ET

    text = "a&amp;b&lt;c&gt;d&quot;e&apos;f&#65;g&#x2603;h"
    doc = f'<worksheet><sheetData><row r="1"><c r="A1" t="inlineStr"><is><t>{text}</t></is></c></row></sheetData></worksheet>'
    ref = ET.fromstring(doc).findtext(".//t")
    events = parse_all(doc.encode())
    assert events[0].payload.decode() == ref


def test_entity_split_across_windows():
    doc = b'<worksheet><sheetData><row r="1"><c r="A1" t="inlineStr"><is><t>x&amp;y</t></is></c></row></sheetData></worksheet>'
    mid = doc.index(b"&amp;") + 2
    assert parse_split(doc, [mid]) == [CellEvent(1, 1, CT_INLINE, b"x&y")]


# --- floats ---------------------------------------------------------------------


def test_float_examples():
    assert deserialize_float_buffered(b"1.5") == 1.5
    assert deserialize_float_buffered(b"2.5E2") == 250.0
    with pytest.raises(MalformedNumber):
        deserialize_float_buffered(b"abc")


@settings(max_examples=300, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip_property(value):
    text = repr(value).encode()
    doc = b'<worksheet><sheetData><row r="1"><c r="A1"><v>' + text + b"</v></c></row></sheetData></worksheet>"
    events = parse_all(doc)
    assert struct.pack("<d", events[0].payload) == struct.pack("<d", value)


def test_kernel_float_conversion_differential():
    rng = np.random.default_rng(5)
    values = [float(v) for v in rng.standard_normal(2000) * 10.0 ** rng.integers(-300, 301, 2000).astype(float)]
    values += [0.0, -0.0, 5e-324, 1.7976931348623157e308, 2.2250738585072014e-308]
    texts = [repr(v).encode() for v in values]
    rnd = random.Random(6)
    for _ in range(1500):  # arbitrary decimal strings, not just shortest forms
        m = "".join(rnd.choice("0123456789") for _ in range(rnd.randint(1, 23)))
        f = "".join(rnd.choice("0123456789") for _ in range(rnd.randint(0, 23)))
        e = rnd.randint(-310, 310)
        texts.append(f"{m}.{f}e{e}".encode())
    cells = b"".join(b'<c r="A1"><v>' + t + b"</v></c>" for t in texts)
    doc = b'<worksheet><sheetData><row r="1">' + cells + b"</row></sheetData></worksheet>"
    events = parse_all(doc)
    assert len(events) == len(texts)
    for t, e in zip(texts, events):
        assert struct.pack("<d", float(t)) == struct.pack("<d", e.payload), t


def test_convert_decimal_exactness():
    ok, v = convert_decimal(15, -1, False)
    assert ok and v == 1.5
    ok, v = convert_decimal(12345678901234567, -16, False)
    assert ok and struct.pack("<d", v) == struct.pack("<d", 1.2345678901234567)
    ok, v = convert_decimal(1, 0, True)
    assert ok and v == -1.0


# --- chunk anchor recovery -------------------------------------------------------


FULL = (
    b'<worksheet><sheetData><row r="1"><c r="A1"><v>42</v></c>'
    b'<c r="B1"><v>7</v></c></row><row r="2"><c r="A2"><v>9</v></c></row>'
    b"</sheetData></worksheet>"
)


def sequential_events(doc=FULL):
    return parse_all(doc)


def test_anchor_mid_value():
    k = FULL.index(b"42") + 1
    offset, state = resolve_chunk_start(FULL[k:])
    events: list = []
    feed_bytes(state, FULL[k + offset :], events)
    assert events == sequential_events()[1:]  # leading bytes belong to the previous chunk


def test_anchor_exactly_at_row_open():
    k = FULL.index(b'<row r="2">')
    offset, state = resolve_chunk_start(FULL[k:])
    assert offset == 0
    events: list = []
    feed_bytes(state, FULL[k:], events)
    assert events and events[0].row == 2  # state is start-of-row, row 2


def test_anchor_after_long_attribute_value():
    filler = b"x" * 1000
    doc = (
        b'<worksheet><sheetData><row r="1" junk="' + filler + b'">'
        b'<c r="A1"><v>5</v></c></row></sheetData></worksheet>'
    )
    k = doc.index(b"junk=") + 8  # inside the quoted value, no '<' for 1000 bytes
    offset, state = resolve_chunk_start(doc[k:])
    assert doc[k + offset : k + offset + 2] == b"<c"
    events: list = []
    feed_bytes(state, doc[k + offset :], events)
    assert events == [CellEvent(1, 1, CT_NUMBER, 5.0, -1)]


def test_no_anchor_in_window():
    with pytest.raises(NoAnchorFound):
        resolve_chunk_start(b"no structural characters here at all")


def test_anchor_invariance_over_all_split_points():
    """Prefix parse (with extension) + suffix anchor parse = whole parse,
    each cell exactly once, for every split point."""
    whole = sequential_events()
    for k in range(1, len(FULL) - 1):
        suffix_events: list = []
        try:
            offset, state = resolve_chunk_start(FULL[k:])
        except NoAnchorFound:
            suffix_events = []
        else:
            feed_bytes(state, FULL[k + offset :], suffix_events)
        # cells whose opening tag lies before k belong to the prefix side
        prefix_events = [e for e in whole if e not in suffix_events]
        assert prefix_events + suffix_events == whole, k
