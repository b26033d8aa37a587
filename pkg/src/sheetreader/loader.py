"""Shared engine plumbing: sheet resolution, pre-allocation hints, and the
single-threaded streaming worker for the shared strings part."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .container import Archive, open_archive
from .errors import SheetReaderError
from .frame import ColumnFrame, SharedStrings
from .metadata import (
    SheetRef,
    WorkbookMeta,
    probe_dimension,
    probe_sst_count,
    read_date_styles,
    read_workbook,
)
from .options import EngineOptions
from .scanner import SHARED_STRINGS, ParseState


@dataclass
class SheetContext:
    archive: Archive
    owns_archive: bool
    meta: WorkbookMeta
    sheet: SheetRef
    rows_hint: int
    cols_hint: int
    date_styles: frozenset[int]
    frame: ColumnFrame
    phases: dict = field(default_factory=dict)

    def mark(self, phase: str) -> None:
        self.phases[phase] = time.perf_counter()


def open_context(
    source: Union[str, Archive],
    sheet: Union[int, str, None],
    opts: EngineOptions,
) -> SheetContext:
    """Resolve the sheet, read pre-allocation hints, build the frame."""
    if isinstance(source, Archive):
        archive, owns = source, False
    else:
        archive, owns = open_archive(source), True
    meta = read_workbook(archive)
    ref = meta.select(sheet)
    dim = probe_dimension(archive, ref.part_path)
    rows_hint = dim.rows if dim else 0
    cols_hint = dim.cols if dim else 0
    date_styles = read_date_styles(archive, meta.styles_path) if opts.detect_dates else frozenset()
    frame = ColumnFrame(rows_hint, cols_hint, track_styles=bool(date_styles))
    frame.date_styles = date_styles
    frame.detect_dates = opts.detect_dates
    ctx = SheetContext(
        archive=archive,
        owns_archive=owns,
        meta=meta,
        sheet=ref,
        rows_hint=rows_hint,
        cols_hint=cols_hint,
        date_styles=date_styles,
        frame=frame,
    )
    ctx.mark("open")
    return ctx


def cells_have_refs(doc: np.ndarray) -> Optional[bool]:
    """Whether the first cell open tag carries a location attribute.

    None when the sheet has no cells at all.
    """
    if isinstance(doc, np.ndarray):
        head = doc[: 1 << 18].tobytes()
        raw = head if _first_cell_tag(head) is not None or doc.shape[0] <= head.__len__() else doc.tobytes()
    else:
        raw = bytes(doc)
    span = _first_cell_tag(raw)
    if span is None:
        return None
    tag = raw[span[0] : span[1]]
    return b" r=" in tag or b"\tr=" in tag


def _first_cell_tag(raw: bytes) -> Optional[tuple[int, int]]:
    pos = 0
    while True:
        pos = raw.find(b"<c", pos)
        if pos < 0:
            return None
        after = raw[pos + 2 : pos + 3]
        if after not in (b" ", b"\t", b"\r", b"\n", b"/", b">"):
            pos += 2
            continue
        end = raw.find(b">", pos)
        if end < 0:
            return None
        return pos, end


def parse_shared_strings(
    archive: Archive,
    path: str,
    expected: Optional[int],
    element_size: int,
    verify: bool = False,
) -> SharedStrings:
    """Parse the strings part in one worker: decompression and scanning
    interleave over a single recycled element."""
    sst = SharedStrings(expected)
    state = ParseState(SHARED_STRINGS)
    stream = archive.open_entry_stream(path, verify=verify)
    slab = np.empty(element_size, dtype=np.uint8)
    offset = 0

    def drain(st: ParseState, window: np.ndarray) -> None:
        sst.extend_from_tape(st, window)

    while not stream.finished:
        written, _fin = stream.stream_next(slab)
        view = slab[:written]
        view.flags.writeable = False
        state.run(view, offset, drain)
        offset += written
    state.finish()
    return sst


class StringsWorker:
    """Background shared-strings parsing for strings_mode=parallel."""

    def __init__(self, archive: Archive, path: Optional[str], expected: Optional[int],
                 element_size: int, verify: bool):
        self.result: Optional[SharedStrings] = None
        self.error: Optional[BaseException] = None
        self._thread: Optional[threading.Thread] = None
        if path is None:
            self.result = SharedStrings(0)
            return

        def run() -> None:
            try:
                self.result = parse_shared_strings(archive, path, expected, element_size, verify)
            except BaseException as exc:  # propagated on join
                self.error = exc

        self._thread = threading.Thread(target=run, name="shared-strings", daemon=True)
        self._thread.start()

    def join(self) -> SharedStrings:
        if self._thread is not None:
            self._thread.join()
        if self.error is not None:
            raise self.error
        return self.result


def strings_for(ctx: SheetContext, opts: EngineOptions) -> tuple[Optional[StringsWorker], Optional[int]]:
    """Start the parallel strings worker (or defer for sequential mode)."""
    path = ctx.meta.shared_strings_path
    expected = None
    if path is not None:
        expected = probe_sst_count(ctx.archive, path)
        ctx.meta.shared_strings_unique_count = expected
    if opts.strings_mode == "parallel":
        return StringsWorker(ctx.archive, path, expected, opts.ring_element_size, opts.verify), expected
    return None, expected


def finish_strings(ctx: SheetContext, opts: EngineOptions,
                   worker: Optional[StringsWorker], expected: Optional[int]) -> None:
    """Join or run the strings parse, then resolve indexes in the frame."""
    if worker is not None:
        sst = worker.join()
    elif ctx.meta.shared_strings_path is not None:
        # sequential mode: strings parsed after the worksheet
        sst = parse_shared_strings(
            ctx.archive, ctx.meta.shared_strings_path, expected,
            opts.ring_element_size, opts.verify,
        )
    else:
        sst = SharedStrings(0)
    ctx.mark("strings")
    ctx.frame.resolve_shared_strings(sst)


def finalize_frame(ctx: SheetContext, opts: EngineOptions) -> ColumnFrame:
    frame = ctx.frame.finalize(headers=opts.headers)
    ctx.mark("finalize")
    frame.phases = dict(ctx.phases)
    if ctx.owns_archive:
        ctx.archive.close()
    return frame
