"""Memory-optimized engine: one streaming decompression producer feeds a
fixed ring of fixed-size elements consumed by staggered parser threads.

Concurrency control is purely index-based: the writer and every parser
hold monotonically increasing unwrapped indexes.  A parser may read slab
i only when i < writer_index; the writer may fill slab W only when no
parser still holds W - N or lower.  Parser k owns slabs k, k+K, 2K+k, ...
and extends into following slabs only to close a straddling cell, then
readjusts to its own sequence; owners always parse their slabs from the
first anchor, which skips the bytes an extender already consumed.
"""

from __future__ import annotations

import threading
import time
from typing import Optional, Union

import numpy as np

from .container import Archive
from .errors import MalformedDocument, SheetReaderError
from .frame import ColumnFrame
from .loader import (
    cells_have_refs,
    finalize_frame,
    finish_strings,
    open_context,
    strings_for,
)
from .options import EngineOptions
from .scanner import (
    CTX_HUNT,
    CTX_POST,
    CTX_PRE,
    CTX_ROW,
    CTX_SHEETDATA,
    M_TEXT,
    SL_CTX,
    SL_ENTLEN,
    SL_MODE,
    SL_SKIPDEPTH,
    SL_VALKIND,
    ST_DONE,
    ST_WINDOW_END,
    VK_NONE,
    WORKSHEET,
    ParseState,
)

_SPIN = 100
_NAP = 0.0002


def writer_may_fill(w: int, parser_indexes, n_elements: int) -> bool:
    """The writer may fill unwrapped index w iff no parser still holds the
    slab w maps to (one lap behind)."""
    for pk in parser_indexes:
        if pk + n_elements <= w:
            return False
    return True


def parser_may_read(i: int, writer_index: int) -> bool:
    """Parsers only read slabs strictly behind the writer."""
    return i < writer_index


class RingBuffer:
    """N fixed-size byte slabs with one writer index and K parser indexes.

    Indexes are unwrapped (slab = index mod N) and only ever increase;
    under the GIL plain int reads/writes are atomic, giving the required
    publication ordering.
    """

    def __init__(self, n_elements: int, element_size: int, n_parsers: int):
        if n_elements < 2:
            raise ValueError("ring needs at least two elements")
        self.n = n_elements
        self.element_size = element_size
        self.slabs = np.empty((n_elements, element_size), dtype=np.uint8)
        self.fill = np.zeros(n_elements, dtype=np.int64)
        self.writer_index = 0
        self.parser_index = [0] * n_parsers
        self.writer_done = False
        self.total_slabs = -1
        self.error: Optional[BaseException] = None
        self.stall_naps = 0
        self.heap_grow_events = 0  # summed from parser states at exit

    def poison(self, exc: BaseException) -> None:
        if self.error is None:
            self.error = exc
        self.writer_done = True

    def _wait(self, ready) -> bool:
        """Spin briefly, then yield; False when the pipeline is poisoned."""
        spins = 0
        while not ready():
            if self.error is not None:
                return False
            spins += 1
            if spins < _SPIN:
                continue
            self.stall_naps += 1
            time.sleep(_NAP)
        return True

    # -- producer ------------------------------------------------------------

    def writer_step(self, stream) -> bool:
        """Fill the next slab from the stream; False when input is done."""
        if stream.finished:
            self.total_slabs = self.writer_index
            self.writer_done = True
            return False
        w = self.writer_index
        if not self._wait(lambda: writer_may_fill(w, self.parser_index, self.n)):
            return False
        row = self.slabs[w % self.n]
        written, finished = stream.stream_next(row)
        self.fill[w % self.n] = written
        # publish after the slab contents are fully written
        self.writer_index = w + 1
        if finished:
            self.total_slabs = w + 1
            self.writer_done = True
            return False
        return True

    def run_writer(self, stream) -> None:
        try:
            if stream.finished:  # zero-length entry
                self.total_slabs = 0
                self.writer_done = True
                return
            while self.writer_step(stream):
                pass
        except BaseException as exc:
            self.poison(exc)

    # -- consumers -----------------------------------------------------------

    def claim(self, k: int, i: int) -> bool:
        """Claim slab i for parser k and wait until it is published.

        Returns False when the document ends before slab i exists (or the
        pipeline is poisoned).
        """
        self.parser_index[k] = i
        return self.wait_published(i)

    def wait_published(self, i: int) -> bool:
        """Wait for slab i without claiming it (extension reads).

        An extending parser keeps its index on the slab it owns: that
        protects both the extension slabs and its own not-yet-parsed
        slabs from the writer, which can advance at most one lap beyond
        the smallest parser index.
        """
        ok = self._wait(lambda: parser_may_read(i, self.writer_index)
                        or (self.writer_done and self.total_slabs >= 0))
        if not ok:
            return False
        if parser_may_read(i, self.writer_index):
            return True
        return self.writer_done and 0 <= i < self.total_slabs

    def slab_view(self, i: int) -> np.ndarray:
        view = self.slabs[i % self.n][: self.fill[i % self.n]]
        view.flags.writeable = False
        return view


def _state_is_clean(state: ParseState) -> bool:
    ctx = int(state.S[SL_CTX])
    return (
        int(state.S[SL_MODE]) == M_TEXT
        and int(state.S[SL_ENTLEN]) == 0
        and int(state.S[SL_SKIPDEPTH]) == 0
        and int(state.S[SL_VALKIND]) == VK_NONE
        and ctx in (CTX_PRE, CTX_SHEETDATA, CTX_ROW, CTX_POST, CTX_HUNT)
    )


def parser_step(rb: RingBuffer, k: int, n_parsers: int, own: int,
                state: ParseState, frame: ColumnFrame) -> None:
    """Parse parser k's owned slab `own`, extending into following slabs to
    close a straddling cell.

    The parser's published index stays on `own` for the whole step, so the
    writer can never reclaim the extension slabs or the parser's own later
    slabs; extension reads only need the slabs to be published.
    """
    element_size = rb.element_size
    state.reset(
        hunt=own > 0,
        positional=False,
        start_row=0,
        limit=(own + 1) * element_size,
    )
    i = own
    while True:
        window = rb.slab_view(i)
        status, _pos = state.run(window, i * element_size, frame.drain_tape)
        if status == ST_DONE:
            return
        if status != ST_WINDOW_END:
            return
        # the construct is still open: extend into the next slab
        nxt = i + 1
        if nxt >= own + rb.n:
            raise SheetReaderError(
                "cell spans more than the whole ring; increase ring_elements"
                " or ring_element_size"
            )
        if not rb.wait_published(nxt):
            if rb.error is not None:
                raise rb.error
            # document exhausted mid-extension
            if _state_is_clean(state):
                return
            raise MalformedDocument("document ends inside an open construct")
        i = nxt


def _run_parser(rb: RingBuffer, k: int, n_parsers: int, frame: ColumnFrame,
                tape_capacity: int, heap_capacity: int) -> None:
    try:
        state = ParseState(WORKSHEET, hunt=True,
                           tape_capacity=tape_capacity, heap_capacity=heap_capacity)
        own = k
        while True:
            if not rb.claim(k, own):
                if rb.error is not None:
                    raise rb.error
                rb.heap_grow_events += state.heap_grow_events
                return
            parser_step(rb, k, n_parsers, own, state, frame)
            own += n_parsers  # readjust to the staggered sequence
    except BaseException as exc:
        rb.poison(exc)


def _run_sequential_consumer(rb: RingBuffer, frame: ColumnFrame,
                             validate_end: bool = True) -> None:
    """Single parser: plain sequential scan over the slabs in order."""
    state = ParseState(WORKSHEET)
    i = 0
    while True:
        if not rb.claim(0, i):
            if rb.error is not None:
                raise rb.error
            break
        window = rb.slab_view(i)
        state.run(window, i * rb.element_size, frame.drain_tape)
        i += 1
    rb.heap_grow_events += state.heap_grow_events
    if validate_end and rb.error is None:
        state.finish()


def parse_interleaved(
    source: Union[str, Archive],
    sheet: Union[int, str, None] = None,
    opts: Optional[EngineOptions] = None,
) -> ColumnFrame:
    opts = opts or EngineOptions()
    ctx = open_context(source, sheet, opts)
    try:
        worker, expected = strings_for(ctx, opts)

        # attribute-free sheets cannot anchor mid-document: downgrade to one
        # sequential parser
        head = ctx.archive.read_entry_full(ctx.sheet.part_path) if (
            ctx.archive.index[ctx.sheet.part_path].uncompressed_size < (1 << 16)
        ) else None
        if head is not None:
            has_refs = cells_have_refs(np.frombuffer(head, dtype=np.uint8))
        else:
            probe = ctx.archive.open_entry_stream(ctx.sheet.part_path)
            buf = np.empty(1 << 16, dtype=np.uint8)
            probe.stream_next(buf)
            has_refs = cells_have_refs(buf)
        n_parsers = opts.parser_threads if has_refs else 1

        rb = RingBuffer(opts.ring_elements, opts.ring_element_size, n_parsers)
        stream = ctx.archive.open_entry_stream(ctx.sheet.part_path, verify=opts.verify)

        writer = threading.Thread(target=rb.run_writer, args=(stream,), name="inflate")
        writer.start()
        if n_parsers == 1:
            consumers = [threading.Thread(
                target=lambda: _run_or_poison(rb, _run_sequential_consumer, rb, ctx.frame),
                name="parser-0",
            )]
        else:
            consumers = [
                threading.Thread(
                    target=_run_parser,
                    args=(rb, k, n_parsers, ctx.frame, 1 << 14, 1 << 20),
                    name=f"parser-{k}",
                )
                for k in range(n_parsers)
            ]
        for t in consumers:
            t.start()
        writer.join()
        for t in consumers:
            t.join()
        if rb.error is not None:
            raise rb.error
        ctx.mark("parse")

        finish_strings(ctx, opts, worker, expected)
        frame = finalize_frame(ctx, opts)
        frame.ring_stall_naps = rb.stall_naps
        frame.worker_heap_grow_events = rb.heap_grow_events
        return frame
    except BaseException:
        if ctx.owns_archive:
            ctx.archive.close()
        raise


def _run_or_poison(rb: RingBuffer, fn, *args) -> None:
    try:
        fn(*args)
    except BaseException as exc:
        rb.poison(exc)
