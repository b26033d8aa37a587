"""Runtime-optimized engine: decompress the whole worksheet into memory,
split it into roughly equal chunks, and parse the chunks in parallel.

Each chunk parser recovers its state from the first structural anchor in
its range and extends past the chunk end to close a straddling cell, so
every cell is emitted exactly once.  When cells carry no location
attributes, a reduced prescan counts row opens to give each chunk its
starting row, and parsing proceeds positionally.
"""

from __future__ import annotations

import re
import threading
from typing import Optional, Union

import numpy as np
from numba import njit

from .container import Archive
from .frame import ColumnFrame
from .loader import (
    SheetContext,
    cells_have_refs,
    finalize_frame,
    finish_strings,
    open_context,
    strings_for,
)
from .options import EngineOptions
from .scanner import (
    ST_DONE,
    ST_WINDOW_END,
    WORKSHEET,
    ParseState,
    materialize_events,
    parse_cell_ref,
)


def split_chunks(doc_len: int, threads: int) -> list[tuple[int, int]]:
    """Contiguous, non-overlapping bounds covering the document; sizes
    differ by at most one byte."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    base = doc_len // threads
    extra = doc_len % threads
    bounds = []
    start = 0
    for k in range(threads):
        size = base + (1 if k < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


@njit(cache=True, nogil=True)
def _count_row_opens(doc, marks):
    """Number of `<row` opening tags strictly before each mark offset.

    Structural by construction: a raw '<' cannot appear inside content or
    attribute values.
    """
    counts = np.zeros(marks.shape[0], dtype=np.int64)
    n = doc.shape[0]
    total = 0
    m = 0
    i = 0
    while i + 4 <= n:
        if doc[i] == 60 and doc[i + 1] == 114 and doc[i + 2] == 111 and doc[i + 3] == 119:
            if i + 4 >= n or doc[i + 4] == 32 or doc[i + 4] == 62 or doc[i + 4] == 47 or doc[i + 4] == 9 or doc[i + 4] == 10 or doc[i + 4] == 13:
                while m < marks.shape[0] and marks[m] <= i:
                    counts[m] = total
                    m += 1
                total += 1
                i += 4
                continue
        i += 1
    while m < marks.shape[0]:
        counts[m] = total
        m += 1
    return counts


def prescan_offsets(doc: np.ndarray, plan: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """(start_row, start_col) ahead of each chunk for positional parsing.

    Rows are atomic per chunk in positional mode, so the starting column
    is always zero; only the row count before each chunk start matters.
    """
    marks = np.array([start for start, _end in plan], dtype=np.int64)
    counts = _count_row_opens(doc, marks)
    return [(int(c), 0) for c in counts]


def parse_chunk(
    doc,
    bounds: tuple[int, int],
    sink,
    positional: bool = False,
    start_row: int = 0,
    is_first: bool = False,
    is_last: bool = False,
) -> None:
    """Parse one chunk of the decompressed document, emitting to sink.

    The chunk owns constructs opening in [start, end); its parser starts
    from the first anchor at or after `start` and runs past `end` until
    the construct that is open at the crossing closes.
    """
    window = doc if isinstance(doc, np.ndarray) else np.frombuffer(doc, dtype=np.uint8)
    start, end = bounds
    if start >= window.shape[0]:
        return
    state = ParseState(
        WORKSHEET,
        hunt=not is_first,
        hunt_cells=not positional,
        positional=positional,
        start_row=start_row,
        limit=-1 if is_last else end,
    )
    push = sink.append if isinstance(sink, list) else sink

    def drain(st: ParseState, win: np.ndarray) -> None:
        for event in materialize_events(st, win):
            push(event)

    status, _pos = state.run(window[start:], start, drain)
    if is_last and status == ST_WINDOW_END:
        state.finish()


def _run_chunk(
    window: np.ndarray,
    bounds: tuple[int, int],
    frame: ColumnFrame,
    positional: bool,
    start_row: int,
    is_first: bool,
    is_last: bool,
    errors: list,
    tape_capacity: int,
) -> None:
    try:
        start, end = bounds
        if start >= window.shape[0]:
            return
        state = ParseState(
            WORKSHEET,
            hunt=not is_first,
            hunt_cells=not positional,
            positional=positional,
            start_row=start_row,
            limit=-1 if is_last else end,
            tape_capacity=tape_capacity,
        )
        status, _pos = state.run(window[start:], start, frame.drain_tape)
        if is_last and status == ST_WINDOW_END:
            state.finish()
    except BaseException as exc:
        errors.append(exc)


_TAIL_CELL = re.compile(rb"<c[ \t][^>]*?r=\"([A-Z]+)([0-9]+)\"")


def tail_scan(doc_bytes: bytes) -> Optional[tuple[int, int]]:
    """Extent bound from the last referenced cell (backward scan)."""
    tail = doc_bytes[-(1 << 20):]
    matches = list(_TAIL_CELL.finditer(tail))
    if not matches:
        if len(tail) < len(doc_bytes):
            matches = list(_TAIL_CELL.finditer(doc_bytes))
        if not matches:
            return None
    last_row, max_col = 0, 0
    for m in matches[-256:]:
        row, col = parse_cell_ref(m.group(1) + m.group(2))
        last_row = max(last_row, row)
        max_col = max(max_col, col)
    return last_row, max_col


def parse_consecutive(
    source: Union[str, Archive],
    sheet: Union[int, str, None] = None,
    opts: Optional[EngineOptions] = None,
) -> ColumnFrame:
    opts = opts or EngineOptions()
    ctx = open_context(source, sheet, opts)
    try:
        worker, expected = strings_for(ctx, opts)

        doc_bytes = ctx.archive.read_entry_full(ctx.sheet.part_path, verify=opts.verify)
        ctx.mark("decompress")
        window = np.frombuffer(doc_bytes, dtype=np.uint8)

        has_refs = cells_have_refs(window)
        positional = has_refs is False

        if ctx.rows_hint == 0 and has_refs:
            hint = tail_scan(doc_bytes)
            if hint:
                with ctx.frame.lock:
                    ctx.frame._grow_to(hint[0], hint[1])
                    ctx.frame.grow_events = 0  # sizing from the tail scan is pre-allocation

        threads = opts.threads
        plan = split_chunks(window.shape[0], threads)
        starts = [(0, 0)] * len(plan)
        if positional and threads > 1:
            starts = prescan_offsets(window, plan)

        errors: list = []
        if threads == 1:
            _run_chunk(window, plan[0], ctx.frame, positional, 0, True, True, errors, 1 << 16)
        else:
            workers = []
            for k, bounds in enumerate(plan):
                t = threading.Thread(
                    target=_run_chunk,
                    args=(window, bounds, ctx.frame, positional, starts[k][0],
                          k == 0, k == len(plan) - 1, errors, 1 << 16),
                    name=f"chunk-{k}",
                )
                workers.append(t)
                t.start()
            for t in workers:
                t.join()
        if errors:
            raise errors[0]
        ctx.mark("parse")

        # release the decompressed document before string resolution
        del window, doc_bytes
        finish_strings(ctx, opts, worker, expected)
        return finalize_frame(ctx, opts)
    except BaseException:
        if ctx.owns_archive:
            ctx.archive.close()
        raise
