"""ZIP/OPC container access.

Parses the central directory directly (PKWARE APPNOTE layout, with ZIP64
records when present) so each entry carries the byte offset of its raw
compressed payload.  Decompression is plain zlib: one-shot for the
full-buffer path, a decompressobj for the fixed-step streaming path.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Optional, Union

from .errors import (
    CorruptDirectory,
    CrcMismatch,
    InflateError,
    NoSuchEntry,
    NotAZip,
    SizeMismatch,
    StreamExhausted,
    UnsupportedCompression,
)

METHOD_STORED = 0
METHOD_DEFLATE = 8

_EOCD_SIG = b"PK\x05\x06"
_EOCD64_LOC_SIG = b"PK\x06\x07"
_EOCD64_SIG = b"PK\x06\x06"
_CDIR_SIG = b"PK\x01\x02"
_LOCAL_SIG = b"PK\x03\x04"

# EOCD must sit in the last 64KB + 22 bytes (max comment length).
_EOCD_SEARCH_WINDOW = 64 * 1024 + 22

# Compressed bytes fed to the inflater per step on the streaming path.
_STREAM_READ_SIZE = 256 * 1024


@dataclass(frozen=True)
class ArchiveEntry:
    name: str
    method: int  # METHOD_STORED or METHOD_DEFLATE
    compressed_size: int
    uncompressed_size: int
    header_offset: int  # offset of the local file header
    crc32: int
    _payload_offset: Optional[int] = field(default=None, compare=False)

    @property
    def is_stored(self) -> bool:
        return self.method == METHOD_STORED


class Archive:
    """Immutable view over a ZIP archive; shareable across threads.

    Each thread performing reads must use its own file handle; the archive
    hands out positioned reads through `pread`-style slicing on a duplicated
    descriptor, which is safe for concurrent use.
    """

    def __init__(self, source: Union[str, os.PathLike, bytes, BinaryIO]):
        if isinstance(source, (str, os.PathLike)):
            self._file = open(source, "rb")
            self._owns_file = True
            self._data = None
        elif isinstance(source, (bytes, bytearray, memoryview)):
            self._data = bytes(source)
            self._file = None
            self._owns_file = False
        else:
            self._file = source
            self._owns_file = False
            self._data = None
        if self._file is not None:
            self._file.seek(0, os.SEEK_END)
            self._size = self._file.tell()
            self._fd = self._file.fileno() if hasattr(self._file, "fileno") else None
        else:
            self._size = len(self._data)
            self._fd = None
        self.entries: list[ArchiveEntry] = []
        self.index: dict[str, ArchiveEntry] = {}
        self._payload_offsets: dict[str, int] = {}
        self._read_directory()

    # -- raw byte access --------------------------------------------------

    def _read_at(self, offset: int, size: int) -> bytes:
        if offset < 0 or size < 0 or offset + size > self._size:
            raise CorruptDirectory(
                f"read [{offset}, {offset + size}) outside archive of {self._size} bytes"
            )
        if self._data is not None:
            return self._data[offset : offset + size]
        if self._fd is not None:
            return os.pread(self._fd, size, offset)
        # non-seekable-safe fallback for file-like objects without a descriptor
        self._file.seek(offset)
        return self._file.read(size)

    def close(self) -> None:
        if self._owns_file and self._file is not None:
            self._file.close()

    def __enter__(self) -> "Archive":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- directory parsing -------------------------------------------------

    def _read_directory(self) -> None:
        tail_size = min(self._size, _EOCD_SEARCH_WINDOW)
        tail = self._read_at(self._size - tail_size, tail_size)
        pos = tail.rfind(_EOCD_SIG)
        if pos < 0:
            raise NotAZip("no end-of-central-directory signature found")
        eocd_offset = self._size - tail_size + pos
        eocd = tail[pos : pos + 22]
        if len(eocd) < 22:
            raise CorruptDirectory("truncated end-of-central-directory record")
        (n_here, n_total, cd_size, cd_offset) = struct.unpack("<HHII", eocd[8:20])

        if n_total == 0xFFFF or cd_size == 0xFFFFFFFF or cd_offset == 0xFFFFFFFF:
            locator = self._read_at(eocd_offset - 20, 20)
            if locator[:4] == _EOCD64_LOC_SIG:
                (eocd64_offset,) = struct.unpack("<Q", locator[8:16])
                rec = self._read_at(eocd64_offset, 56)
                if rec[:4] != _EOCD64_SIG:
                    raise CorruptDirectory("bad ZIP64 end-of-central-directory record")
                n_total = struct.unpack("<Q", rec[32:40])[0]
                cd_size = struct.unpack("<Q", rec[40:48])[0]
                cd_offset = struct.unpack("<Q", rec[48:56])[0]

        if cd_offset + cd_size > self._size:
            raise CorruptDirectory("central directory extends past end of file")

        directory = self._read_at(cd_offset, cd_size)
        p = 0
        for _ in range(n_total):
            if directory[p : p + 4] != _CDIR_SIG:
                raise CorruptDirectory("bad central directory entry signature")
            (
                _ver_made,
                _ver_need,
                _flags,
                method,
                _mtime,
                _mdate,
                crc,
                csize,
                usize,
                name_len,
                extra_len,
                comment_len,
                _disk,
                _iattr,
                _eattr,
                header_offset,
            ) = struct.unpack("<HHHHHHIIIHHHHHII", directory[p + 4 : p + 46])
            name = directory[p + 46 : p + 46 + name_len].decode("utf-8", "replace")
            extra = directory[p + 46 + name_len : p + 46 + name_len + extra_len]
            p += 46 + name_len + extra_len + comment_len

            if csize == 0xFFFFFFFF or usize == 0xFFFFFFFF or header_offset == 0xFFFFFFFF:
                csize, usize, header_offset = self._apply_zip64_extra(
                    extra, csize, usize, header_offset
                )

            if name.endswith("/"):
                continue  # directory placeholder, not a part
            if method not in (METHOD_STORED, METHOD_DEFLATE):
                raise UnsupportedCompression(f"{name}: compression method {method}")
            if method == METHOD_STORED and csize != usize:
                raise CorruptDirectory(f"{name}: stored entry with csize != usize")
            if header_offset >= self._size:
                raise CorruptDirectory(f"{name}: local header offset out of bounds")

            entry = ArchiveEntry(
                name=name.replace("\\", "/").lstrip("/"),
                method=method,
                compressed_size=csize,
                uncompressed_size=usize,
                header_offset=header_offset,
                crc32=crc,
            )
            self.entries.append(entry)
            self.index[entry.name] = entry

    @staticmethod
    def _apply_zip64_extra(extra: bytes, csize: int, usize: int, header_offset: int):
        p = 0
        while p + 4 <= len(extra):
            tag, size = struct.unpack("<HH", extra[p : p + 4])
            body = extra[p + 4 : p + 4 + size]
            if tag == 0x0001:
                q = 0
                if usize == 0xFFFFFFFF:
                    usize = struct.unpack("<Q", body[q : q + 8])[0]
                    q += 8
                if csize == 0xFFFFFFFF:
                    csize = struct.unpack("<Q", body[q : q + 8])[0]
                    q += 8
                if header_offset == 0xFFFFFFFF:
                    header_offset = struct.unpack("<Q", body[q : q + 8])[0]
                    q += 8
                break
            p += 4 + size
        return csize, usize, header_offset

    # -- payload location ---------------------------------------------------

    def payload_offset(self, entry: ArchiveEntry) -> int:
        """Offset of the raw compressed payload, from the local header.

        Consulted lazily: the local header's name/extra lengths can differ
        from the central directory's, so the offset is only known after
        reading the 30-byte local header.
        """
        cached = self._payload_offsets.get(entry.name)
        if cached is not None:
            return cached
        header = self._read_at(entry.header_offset, 30)
        if header[:4] != _LOCAL_SIG:
            raise CorruptDirectory(f"{entry.name}: bad local header signature")
        name_len, extra_len = struct.unpack("<HH", header[26:30])
        offset = entry.header_offset + 30 + name_len + extra_len
        if offset + entry.compressed_size > self._size:
            raise CorruptDirectory(f"{entry.name}: payload extends past end of file")
        self._payload_offsets[entry.name] = offset
        return offset

    def _lookup(self, name: str) -> ArchiveEntry:
        entry = self.index.get(name)
        if entry is None:
            raise NoSuchEntry(name)
        return entry

    # -- decompression -------------------------------------------------------

    def read_entry_full(self, name: str, verify: bool = False) -> bytes:
        """Decompress a whole entry into one buffer (the runtime-fast path)."""
        entry = self._lookup(name)
        payload = self._read_at(self.payload_offset(entry), entry.compressed_size)
        if entry.method == METHOD_STORED:
            data = payload
        else:
            try:
                data = zlib.decompress(payload, -zlib.MAX_WBITS, max(entry.uncompressed_size, 1))
            except zlib.error as exc:
                raise InflateError(f"{entry.name}: {exc}") from exc
        if len(data) != entry.uncompressed_size:
            raise SizeMismatch(
                f"{entry.name}: got {len(data)} bytes, declared {entry.uncompressed_size}"
            )
        if verify and zlib.crc32(data) != entry.crc32:
            raise CrcMismatch(entry.name)
        return data

    def open_entry_stream(self, name: str, verify: bool = False) -> "EntryStream":
        entry = self._lookup(name)
        return EntryStream(self, entry, verify=verify)


class EntryStream:
    """Fixed-size-step streaming decompression of one entry.

    Single-threaded; open one stream per thread. Every stream_next call
    fills the destination completely except possibly the last.
    """

    def __init__(self, archive: Archive, entry: ArchiveEntry, verify: bool = False):
        self.entry = entry
        self.produced = 0
        self.finished = entry.uncompressed_size == 0
        self._archive = archive
        self._payload_offset = archive.payload_offset(entry)
        self._consumed = 0  # compressed bytes handed to the inflater
        self._verify = verify
        self._crc = 0
        if entry.method == METHOD_DEFLATE:
            self._inflater = zlib.decompressobj(-zlib.MAX_WBITS)
        else:
            self._inflater = None
        self._pending = b""  # decompressed bytes not yet copied out

    def stream_next(self, dest) -> tuple[int, bool]:
        """Fill `dest` (any writable buffer) with the next uncompressed bytes.

        Returns (bytes_written, finished).
        """
        if self.finished:
            raise StreamExhausted(self.entry.name)
        view = memoryview(dest)
        if view.readonly or len(view) == 0:
            raise ValueError("dest must be a writable non-empty buffer")
        capacity = len(view)
        remaining = self.entry.uncompressed_size - self.produced
        want = min(capacity, remaining)
        written = 0
        while written < want:
            if self._pending:
                take = min(len(self._pending), want - written)
                view[written : written + take] = self._pending[:take]
                self._pending = self._pending[take:]
                written += take
                continue
            chunk = self._next_decompressed(want - written)
            if not chunk:
                raise SizeMismatch(
                    f"{self.entry.name}: stream ended at {self.produced + written} "
                    f"of {self.entry.uncompressed_size} bytes"
                )
            take = min(len(chunk), want - written)
            view[written : written + take] = chunk[:take]
            if take < len(chunk):
                self._pending = chunk[take:]
            written += take
        self.produced += written
        if self._verify:
            self._crc = zlib.crc32(view[:written], self._crc)
        if self.produced >= self.entry.uncompressed_size:
            self.finished = True
            if self._trailing_decompressed():
                raise SizeMismatch(f"{self.entry.name}: stream longer than declared size")
            if self._verify and self._crc != self.entry.crc32:
                raise CrcMismatch(self.entry.name)
        return written, self.finished

    def _next_decompressed(self, max_out: int) -> bytes:
        if self._inflater is None:
            # stored entry: identity copy straight from the payload
            take = min(max_out, self.entry.compressed_size - self._consumed)
            if take <= 0:
                return b""
            data = self._archive._read_at(self._payload_offset + self._consumed, take)
            self._consumed += take
            return data
        while True:
            try:
                if self._inflater.unconsumed_tail:
                    out = self._inflater.decompress(self._inflater.unconsumed_tail, max_out)
                else:
                    take = min(_STREAM_READ_SIZE, self.entry.compressed_size - self._consumed)
                    if take <= 0:
                        return self._inflater.flush()
                    data = self._archive._read_at(self._payload_offset + self._consumed, take)
                    self._consumed += take
                    out = self._inflater.decompress(data, max_out)
            except zlib.error as exc:
                raise InflateError(f"{self.entry.name}: {exc}") from exc
            if out or self._inflater.eof:
                return out

    def _trailing_decompressed(self) -> bool:
        """True if the inflater still yields bytes past the declared size."""
        if self._inflater is None:
            return self.entry.compressed_size > self._consumed or bool(self._pending)
        if self._pending:
            return True
        try:
            if self._inflater.unconsumed_tail:
                return bool(self._inflater.decompress(self._inflater.unconsumed_tail, 1))
            if not self._inflater.eof and self._consumed < self.entry.compressed_size:
                take = min(
                    _STREAM_READ_SIZE, self.entry.compressed_size - self._consumed
                )
                data = self._archive._read_at(self._payload_offset + self._consumed, take)
                self._consumed += take
                return bool(self._inflater.decompress(data, 1))
        except zlib.error:
            return True  # garbage after declared size is a mismatch either way
        return False


def open_archive(source) -> Archive:
    """Open a ZIP/OPC archive from a path, bytes, or binary file object."""
    return Archive(source)
