"""Boundary-reset recompression and fully parallel decompress+parse.

A worksheet entry is recompressed so that the Deflate history window is
emptied at (roughly) fixed uncompressed intervals: each flush ends the
block byte-aligned and resets the dictionary, so decompression can start
at any recorded boundary with no prior history, while the whole stream
stays a single valid Deflate stream for stock inflaters.  Boundary
offsets live in a JSON sidecar next to the archive.

Parsing assigns workers to equally spaced boundaries; each worker runs a
private decompress-and-parse loop over its segment and keeps inflating
past the segment end until its final straddling cell closes.
"""

from __future__ import annotations

import json
import struct
import threading
import zlib
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .container import Archive, METHOD_DEFLATE, open_archive
from .errors import IndexMismatch, InflateError, MalformedDocument
from .frame import ColumnFrame
from .loader import finalize_frame, finish_strings, open_context, strings_for
from .options import EngineOptions
from .scanner import ST_DONE, ST_WINDOW_END, WORKSHEET, ParseState

SIDECAR_SUFFIX = ".sridx"
SIDECAR_VERSION = 1
DEFAULT_INTERVAL = 1 << 20  # 1 MiB of uncompressed content per segment


@dataclass(frozen=True)
class BoundaryIndex:
    entry_name: str
    uncompressed_size: int
    boundaries: tuple[tuple[int, int], ...]  # (compressed_offset, uncompressed_offset)

    def __post_init__(self):
        if not self.boundaries or self.boundaries[0] != (0, 0):
            raise ValueError("first boundary must be (0, 0)")
        for prev, cur in zip(self.boundaries, self.boundaries[1:]):
            if cur[0] <= prev[0] or cur[1] <= prev[1]:
                raise ValueError("boundaries must strictly increase in both coordinates")

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": SIDECAR_VERSION,
                "entry": self.entry_name,
                "uncompressed_size": self.uncompressed_size,
                "boundaries": [list(b) for b in self.boundaries],
            }
        )

    @staticmethod
    def from_json(text: str) -> "BoundaryIndex":
        raw = json.loads(text)
        if raw.get("version") != SIDECAR_VERSION:
            raise IndexMismatch(f"unsupported sidecar version {raw.get('version')!r}")
        return BoundaryIndex(
            entry_name=raw["entry"],
            uncompressed_size=int(raw["uncompressed_size"]),
            boundaries=tuple((int(c), int(u)) for c, u in raw["boundaries"]),
        )


def sidecar_path(archive_path: str) -> str:
    return archive_path + SIDECAR_SUFFIX


def load_index(archive_path: str) -> BoundaryIndex:
    with open(sidecar_path(archive_path), "r", encoding="utf-8") as fh:
        return BoundaryIndex.from_json(fh.read())


# --- repacking ---------------------------------------------------------------


def _recompress_with_boundaries(content: bytes, interval: int, level: int = 6):
    """One valid raw-Deflate stream with history resets every `interval`
    uncompressed bytes; returns (payload, boundaries)."""
    comp = zlib.compressobj(level, zlib.DEFLATED, -zlib.MAX_WBITS)
    out = bytearray()
    boundaries = [(0, 0)]
    pos = 0
    n = len(content)
    while pos < n:
        take = min(interval, n - pos)
        out += comp.compress(content[pos : pos + take])
        pos += take
        if pos < n:
            out += comp.flush(zlib.Z_FULL_FLUSH)
            boundaries.append((len(out), pos))
    out += comp.flush(zlib.Z_FINISH)
    return bytes(out), boundaries


def _write_archive(src: Archive, out_path: str, replaced: str, new_payload: bytes) -> None:
    """Write a new archive copying every entry's raw payload, with one
    entry's payload replaced (classic ZIP layout, no ZIP64)."""
    with open(out_path, "wb") as out:
        offsets = {}
        for entry in src.entries:
            if entry.name == replaced:
                payload = new_payload
                method = METHOD_DEFLATE
            else:
                payload = src._read_at(src.payload_offset(entry), entry.compressed_size)
                method = entry.method
            name = entry.name.encode("utf-8")
            offsets[entry.name] = (out.tell(), len(payload), method)
            if out.tell() > 0xFFFFFFF0 or len(payload) > 0xFFFFFFF0:
                raise ValueError("repacked archive would need ZIP64, which this writer does not emit")
            out.write(
                struct.pack(
                    "<4sHHHHHIIIHH",
                    b"PK\x03\x04", 20, 0x800, method, 0, 0x21,
                    entry.crc32, len(payload), entry.uncompressed_size,
                    len(name), 0,
                )
            )
            out.write(name)
            out.write(payload)
        cd_start = out.tell()
        for entry in src.entries:
            header_offset, csize, method = offsets[entry.name]
            name = entry.name.encode("utf-8")
            out.write(
                struct.pack(
                    "<4sHHHHHHIIIHHHHHII",
                    b"PK\x01\x02", 20, 20, 0x800, method, 0, 0x21,
                    entry.crc32, csize, entry.uncompressed_size,
                    len(name), 0, 0, 0, 0, 0o600 << 16, header_offset,
                )
            )
            out.write(name)
        cd_size = out.tell() - cd_start
        out.write(
            struct.pack(
                "<4sHHHHIIH",
                b"PK\x05\x06", 0, 0, len(src.entries), len(src.entries),
                cd_size, cd_start, 0,
            )
        )


def repack_entry(
    source: Union[str, Archive],
    out_path: str,
    name: Optional[str] = None,
    interval: int = DEFAULT_INTERVAL,
    level: int = 6,
) -> BoundaryIndex:
    """Recompress one entry with boundary resets and write the new archive
    plus its sidecar index."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    archive = source if isinstance(source, Archive) else open_archive(source)
    try:
        if name is None:
            from .metadata import read_workbook

            name = read_workbook(archive).sheets[0].part_path
        content = archive.read_entry_full(name)
        payload, boundaries = _recompress_with_boundaries(content, interval, level)
        _write_archive(archive, out_path, name, payload)
        index = BoundaryIndex(name, len(content), tuple(boundaries))
        with open(sidecar_path(out_path), "w", encoding="utf-8") as fh:
            fh.write(index.to_json())
        return index
    finally:
        if not isinstance(source, Archive):
            archive.close()


# --- parallel decompression + parsing ---------------------------------------


class _SegmentStream:
    """Private inflater over the payload starting at a boundary; keeps
    producing past the segment end so a worker can finish a straddling
    cell without touching other workers' state."""

    def __init__(self, archive: Archive, entry, comp_offset: int):
        self._archive = archive
        self._payload_offset = archive.payload_offset(entry)
        self._comp_remaining = entry.compressed_size - comp_offset
        self._pos = self._payload_offset + comp_offset
        self._inflater = zlib.decompressobj(-zlib.MAX_WBITS)
        self._read_size = 1 << 18

    def fill(self, slab: np.ndarray) -> int:
        """Fill the slab as far as the stream allows; 0 at end of stream."""
        view = memoryview(slab)
        want = slab.shape[0]
        done = 0
        while done < want:
            try:
                if self._inflater.unconsumed_tail:
                    out = self._inflater.decompress(self._inflater.unconsumed_tail, want - done)
                elif self._comp_remaining > 0:
                    take = min(self._read_size, self._comp_remaining)
                    data = self._archive._read_at(self._pos, take)
                    self._pos += take
                    self._comp_remaining -= take
                    out = self._inflater.decompress(data, want - done)
                else:
                    out = self._inflater.flush()
                    if out:
                        take2 = min(len(out), want - done)
                        view[done : done + take2] = out[:take2]
                        done += take2
                    break
            except zlib.error as exc:
                raise InflateError(str(exc)) from exc
            if out:
                view[done : done + len(out)] = out
                done += len(out)
            elif self._inflater.eof or (self._comp_remaining == 0 and not self._inflater.unconsumed_tail):
                break
        return done


def _segment_worker(
    archive: Archive,
    entry,
    frame: ColumnFrame,
    seg_start: tuple[int, int],
    seg_end_unc: int,
    element_size: int,
    is_first: bool,
    is_last: bool,
    errors: list,
) -> None:
    try:
        comp_off, unc_off = seg_start
        stream = _SegmentStream(archive, entry, comp_off)
        state = ParseState(
            WORKSHEET,
            hunt=not is_first,
            limit=-1 if is_last else seg_end_unc,
        )
        # private pipelines are free to take bigger decompression steps than
        # the shared ring would; fewer handoffs per worker
        slab = np.empty(max(element_size, 1 << 20), dtype=np.uint8)
        produced = unc_off
        while True:
            filled = stream.fill(slab)
            if filled == 0:
                if is_last:
                    state.finish()
                elif not _clean(state):
                    raise MalformedDocument("stream ended inside an open construct")
                return
            window = slab[:filled]
            window.flags.writeable = False
            status, _pos = state.run(window, produced, frame.drain_tape)
            produced += filled
            if status == ST_DONE:
                return
    except BaseException as exc:
        errors.append(exc)


def _clean(state: ParseState) -> bool:
    from .interleaved import _state_is_clean

    return _state_is_clean(state)


def parse_parallel_decompress(
    source: Union[str, Archive],
    index: Optional[BoundaryIndex] = None,
    sheet: Union[int, str, None] = None,
    opts: Optional[EngineOptions] = None,
) -> ColumnFrame:
    """Parse with one interleaved decompress+parse worker per segment."""
    opts = opts or EngineOptions()
    if index is None:
        if isinstance(source, Archive):
            raise IndexMismatch("a BoundaryIndex is required when parsing an open archive")
        index = load_index(source)
    ctx = open_context(source, sheet, opts)
    try:
        entry = ctx.archive.index.get(index.entry_name)
        if entry is None:
            raise IndexMismatch(f"entry {index.entry_name!r} not in archive")
        if entry.name != ctx.sheet.part_path:
            raise IndexMismatch(
                f"sidecar indexes {entry.name!r}, requested sheet is {ctx.sheet.part_path!r}"
            )
        if entry.uncompressed_size != index.uncompressed_size:
            raise IndexMismatch("sidecar uncompressed size does not match the entry")
        for comp, _unc in index.boundaries:
            if comp >= max(entry.compressed_size, 1):
                raise IndexMismatch("boundary offset beyond the compressed payload")

        worker, expected = strings_for(ctx, opts)

        threads = opts.threads
        bounds = list(index.boundaries)
        if threads < len(bounds):
            # equally spaced subset of boundaries, one segment per thread
            picks = sorted({round(j * len(bounds) / threads) for j in range(threads)})
            bounds = [bounds[p] for p in picks if p < len(bounds)]
        ends = [b[1] for b in bounds[1:]] + [index.uncompressed_size]

        errors: list = []
        workers = []
        for j, (seg, end_unc) in enumerate(zip(bounds, ends)):
            t = threading.Thread(
                target=_segment_worker,
                args=(ctx.archive, entry, ctx.frame, seg, end_unc,
                      opts.ring_element_size, j == 0, j == len(bounds) - 1, errors),
                name=f"segment-{j}",
            )
            workers.append(t)
            t.start()
        for t in workers:
            t.join()
        if errors:
            raise errors[0]
        ctx.mark("parse")

        finish_strings(ctx, opts, worker, expected)
        return finalize_frame(ctx, opts)
    except BaseException:
        if ctx.owns_archive:
            ctx.archive.close()
        raise
