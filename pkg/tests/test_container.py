from __future__ import annotations

import io
import zipfile

import pytest

from sheetreader.container import METHOD_STORED, EntryStream, open_archive
from sheetreader.errors import (
    CrcMismatch,
    InflateError,
    NoSuchEntry,
    NotAZip,
    SizeMismatch,
    StreamExhausted,
)


def make_zip(entries: dict[str, bytes], method=zipfile.ZIP_DEFLATED) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", method) as zf:
        for name, data in entries.items():
            zf.writestr(name, data)
    return buf.getvalue()


def test_entry_listing_matches_zipfile(small_mixed):
    path, _truth = small_mixed
    archive = open_archive(path)
    ours = {e.name for e in archive.entries}
    theirs = {n for n in zipfile.ZipFile(path).namelist() if not n.endswith("/")}
    assert ours == theirs
    assert "xl/worksheets/sheet1.xml" in ours
    assert "_rels/.rels" in ours
    for entry in archive.entries:
        assert archive.index[entry.name] == entry  # lookup round-trips
    archive.close()


def test_empty_bytes_is_not_a_zip():
    with pytest.raises(NotAZip):
        open_archive(b"")


def test_garbage_is_not_a_zip():
    with pytest.raises(NotAZip):
        open_archive(b"x" * 1000)


def test_stored_entry_sizes_equal():
    raw = make_zip({"ten.bin": b"0123456789"}, method=zipfile.ZIP_STORED)
    archive = open_archive(raw)
    entry = archive.index["ten.bin"]
    assert entry.method == METHOD_STORED
    assert entry.compressed_size == entry.uncompressed_size == 10
    assert archive.read_entry_full("ten.bin") == b"0123456789"


def test_read_entry_full_matches_generator_bytes(small_mixed):
    path, truth = small_mixed
    archive = open_archive(path)
    assert archive.read_entry_full("xl/worksheets/sheet1.xml") == truth.sheet_xml
    archive.close()


def test_missing_entry_raises():
    archive = open_archive(make_zip({"a.xml": b"<a/>"}))
    with pytest.raises(NoSuchEntry):
        archive.read_entry_full("nope.xml")
    with pytest.raises(NoSuchEntry):
        archive.open_entry_stream("nope.xml")


def test_stream_exact_step_arithmetic():
    data = bytes(range(256)) * 280  # 71680 bytes > 70KB
    data = data[: 70 * 1024]
    archive = open_archive(make_zip({"e": data}))
    stream = archive.open_entry_stream("e")
    dest = bytearray(32768)
    sizes = []
    while not stream.finished:
        n, fin = stream.stream_next(dest)
        sizes.append(n)
    assert sizes == [32768, 32768, 70 * 1024 - 2 * 32768]
    assert stream.produced == len(data)
    with pytest.raises(StreamExhausted):
        stream.stream_next(dest)


def test_stream_exact_fit_single_call():
    data = b"z" * 32768
    archive = open_archive(make_zip({"e": data}))
    stream = archive.open_entry_stream("e")
    dest = bytearray(32768)
    n, fin = stream.stream_next(dest)
    assert (n, fin) == (32768, True)
    assert bytes(dest) == data


def test_stream_initial_state_and_zero_length():
    archive = open_archive(make_zip({"e": b"abc", "empty": b""}))
    s = archive.open_entry_stream("e")
    assert s.produced == 0 and not s.finished
    s0 = archive.open_entry_stream("empty")
    assert s0.finished


@pytest.mark.parametrize("cap", [1, 7, 4096, 32768])
def test_stream_concat_equals_full_read(small_mixed, cap):
    path, _ = small_mixed
    archive = open_archive(path)
    for name in ("xl/worksheets/sheet1.xml", "xl/sharedStrings.xml"):
        full = archive.read_entry_full(name)
        stream = archive.open_entry_stream(name)
        dest = bytearray(cap)
        parts = []
        while not stream.finished:
            n, _fin = stream.stream_next(dest)
            parts.append(bytes(dest[:n]))
        assert b"".join(parts) == full
    archive.close()


def test_tampered_payload_raises_inflate_error(tmp_path, small_mixed):
    path, _ = small_mixed
    raw = bytearray(open(path, "rb").read())
    archive = open_archive(bytes(raw))
    entry = archive.index["xl/worksheets/sheet1.xml"]
    offset = archive.payload_offset(entry)
    corrupt = bytearray(raw)
    for delta in range(40, 160):  # clobber a run inside the payload
        corrupt[offset + delta] ^= 0xFF
    # the stock inflater must also reject it
    with pytest.raises(Exception):
        zipfile.ZipFile(io.BytesIO(bytes(corrupt))).read("xl/worksheets/sheet1.xml")
    bad = open_archive(bytes(corrupt))
    with pytest.raises((InflateError, SizeMismatch)):
        bad.read_entry_full("xl/worksheets/sheet1.xml")
    with pytest.raises((InflateError, SizeMismatch)):
        stream = bad.open_entry_stream("xl/worksheets/sheet1.xml")
        dest = bytearray(4096)
        while not stream.finished:
            stream.stream_next(dest)


def test_crc_verification_flag():
    raw = bytearray(make_zip({"e.bin": b"payload-city" * 10}, method=zipfile.ZIP_STORED))
    archive = open_archive(bytes(raw))
    offset = archive.payload_offset(archive.index["e.bin"])
    raw[offset] ^= 0x01  # stored payload: silent corruption without CRC check
    bad = open_archive(bytes(raw))
    assert bad.read_entry_full("e.bin") != b"payload-city" * 10  # default: no check
    with pytest.raises(CrcMismatch):
        bad.read_entry_full("e.bin", verify=True)
    with pytest.raises(CrcMismatch):
        stream = bad.open_entry_stream("e.bin", verify=True)
        dest = bytearray(1024)
        while not stream.finished:
            stream.stream_next(dest)


def test_zip64_records_are_honored(tmp_path):
    path = tmp_path / "big.zip"
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        with zf.open(zipfile.ZipInfo("a.bin"), "w", force_zip64=True) as fh:
            fh.write(b"abc" * 1000)
    archive = open_archive(str(path))
    assert archive.read_entry_full("a.bin") == b"abc" * 1000


def test_declared_size_mismatch(tmp_path):
    raw = bytearray(make_zip({"e.xml": b"hello world" * 100}))
    # understate the uncompressed size in both directory records
    import struct

    pos = raw.rfind(b"PK\x01\x02")
    usize = struct.unpack("<I", raw[pos + 24 : pos + 28])[0]
    raw[pos + 24 : pos + 28] = struct.pack("<I", usize - 1)
    lpos = raw.find(b"PK\x03\x04")
    raw[lpos + 22 : lpos + 26] = struct.pack("<I", usize - 1)
    bad = open_archive(bytes(raw))
    with pytest.raises(SizeMismatch):
        bad.read_entry_full("e.xml")
