"""Column-wise intermediate store.

Cells land in three dense planes (kind, value, optional style) plus a
byte heap for owned text, all pre-allocated from the metadata hints so
parser threads can write disjoint slots without synchronization.  Growth,
when pre-allocation was impossible or understated, takes a lock that
excludes all writers.  Shared-string cells hold indexes until the string
table arrives; export surfaces render CSV and a summary report.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from typing import Optional

import numpy as np
from numba import njit

from .errors import DanglingStringIndex
from .scanner import (
    EV_BOOL,
    EV_ERR,
    EV_FSTR,
    EV_INLINE,
    EV_NUM_FLT,
    EV_NUM_INT,
    EV_NUM_TXT,
    EV_SST,
    EV_SSTR,
    deserialize_float_buffered,
)

# cell kinds in the store
K_NULL = 0
K_INT = 1
K_FLT = 2
K_SST = 3
K_BOOL = 4
K_TEXT = 5
K_ERR = 6

_EVK_NUM_INT = EV_NUM_INT
_EVK_NUM_FLT = EV_NUM_FLT
_EVK_SST = EV_SST
_EVK_BOOL = EV_BOOL
_EVK_ERR = EV_ERR
_EVK_SSTR = EV_SSTR


@njit(cache=True, nogil=True)
def _scatter_cells(n, EW, EF, kind_plane, data_plane, style_plane, track_styles):
    """Write the fixed-width event kinds straight into the planes.

    Cells beyond the current capacity are skipped (the caller grows and
    re-scatters; writes are idempotent).  Returns (slow, n_cells, rmax,
    cmax): the slow-path event count, the cell event count, and the
    1-based extent seen.  Writers touch disjoint cells, so this runs
    without any lock.
    """
    slow = 0
    n_cells = 0
    rmax = 0
    cmax = 0
    cap_r = kind_plane.shape[0]
    cap_c = kind_plane.shape[1]
    for j in range(n):
        k = EW[0, j]
        if k == _EVK_SSTR:
            slow += 1
            continue
        n_cells += 1
        r = EW[1, j] - 1
        c = EW[2, j] - 1
        if r >= rmax:
            rmax = r + 1
        if c >= cmax:
            cmax = c + 1
        if k == _EVK_NUM_INT or k == _EVK_NUM_FLT:
            if r < cap_r and c < cap_c:
                data_plane[r, c] = EF[j]
                kind_plane[r, c] = K_INT if k == _EVK_NUM_INT else K_FLT
                if track_styles:
                    style_plane[r, c] = EW[3, j]
        elif k == _EVK_SST:
            if r < cap_r and c < cap_c:
                data_plane[r, c] = EW[3, j]
                kind_plane[r, c] = K_SST
        elif k == _EVK_BOOL:
            if r < cap_r and c < cap_c:
                data_plane[r, c] = EW[3, j]
                kind_plane[r, c] = K_BOOL
        elif k == _EVK_ERR:
            if r < cap_r and c < cap_c:
                kind_plane[r, c] = K_ERR
        else:
            slow += 1
    return slow, n_cells, rmax, cmax


_DUMMY_STYLE = np.zeros((1, 1), dtype=np.int32)


@njit(cache=True, nogil=True)
def _pack_strings(n, EW, heap_src, win_src, starts, heap_dst, count, used):
    """Copy every string-table event's bytes into the table heap in order.

    Capacity is the caller's problem; runs without the GIL so a strings
    worker does not stall the worksheet pipeline.
    """
    for j in range(n):
        if EW[0, j] != _EVK_SSTR:
            continue
        t0 = EW[4, j]
        tl = EW[5, j]
        buf = heap_src if EW[6, j] == 1 else win_src
        for k in range(tl):
            heap_dst[used + k] = buf[t0 + k]
        used += tl
        count += 1
        starts[count] = used
    return count, used

# column type lattice tags
T_EMPTY = "empty"
T_BOOL = "boolean"
T_INT = "integer"
T_FLT = "double"
T_DATE = "date"
T_STR = "string"

_SERIAL_EPOCH = datetime(1899, 12, 30)


class SharedStrings:
    """The shared string table: an index -> owned bytes mapping.

    Strings are copied out of the source document into one growable heap;
    the table is built by a single worker, so no locking here.
    """

    def __init__(self, expected: Optional[int] = None):
        cap = expected if expected and expected > 0 else 1024
        self._starts = np.zeros(cap + 1, dtype=np.int64)
        self._heap = np.empty(max(32 * cap, 1024), dtype=np.uint8)
        self.count = 0
        self.grow_events = 0

    def _ensure(self, extra_strings: int, extra_bytes: int) -> None:
        if self.count + extra_strings + 1 > self._starts.shape[0]:
            new = np.zeros(max(2 * self._starts.shape[0], self.count + extra_strings + 1), dtype=np.int64)
            new[: self.count + 1] = self._starts[: self.count + 1]
            self._starts = new
            self.grow_events += 1
        used = int(self._starts[self.count])
        if used + extra_bytes > self._heap.shape[0]:
            new = np.empty(max(2 * self._heap.shape[0], used + extra_bytes), dtype=np.uint8)
            new[:used] = self._heap[:used]
            self._heap = new
            self.grow_events += 1

    def append(self, text) -> int:
        data = np.frombuffer(text, dtype=np.uint8) if not isinstance(text, np.ndarray) else text
        self._ensure(1, data.shape[0])
        start = int(self._starts[self.count])
        self._heap[start : start + data.shape[0]] = data
        self.count += 1
        self._starts[self.count] = start + data.shape[0]
        return self.count - 1

    def extend_from_tape(self, state, window: np.ndarray) -> None:
        """Bulk-copy all string-table events of one scanner tape."""
        n = state.event_count
        if n == 0:
            return
        kinds = state.ev_kind[:n]
        mask = kinds == EV_SSTR
        n_strings = int(np.count_nonzero(mask))
        if n_strings == 0:
            return
        total_bytes = int(state.ev_tlen[:n][mask].sum())
        self._ensure(n_strings, total_bytes)
        self.count, used = _pack_strings(
            n, state.EW, state.heap, window, self._starts, self._heap,
            self.count, int(self._starts[self.count]),
        )

    def get(self, index: int) -> bytes:
        if not 0 <= index < self.count:
            raise DanglingStringIndex(index)
        return bytes(self._heap[self._starts[index] : self._starts[index + 1]])

    def __len__(self) -> int:
        return self.count


@dataclass
class Column:
    name: Optional[str]
    dtype: str  # lattice tag
    kind: np.ndarray  # per-row store kinds (K_*)
    data: np.ndarray  # per-row f64 payloads
    frame: "ColumnFrame"
    index: int

    @property
    def null_mask(self) -> np.ndarray:
        """True where the slot holds a value (errors count as null)."""
        return (self.kind != K_NULL) & (self.kind != K_ERR)

    def null_count(self) -> int:
        return int(np.count_nonzero(~self.null_mask))

    def values(self) -> list:
        """Materialized python values with None for nulls."""
        return [self.frame.cell_value(r, self.index) for r in range(self.frame.n_rows)]


class ColumnFrame:
    """Dense columnar store with per-cell kind tags and a text heap."""

    def __init__(self, rows: int = 0, cols: int = 0, track_styles: bool = False):
        rows = max(rows, 0)
        cols = max(cols, 0)
        self._cap_rows = rows
        self._cap_cols = cols
        self.kind = np.zeros((rows, cols), dtype=np.int8)
        self.data = np.zeros((rows, cols), dtype=np.float64)
        self.style = np.full((rows, cols), -1, dtype=np.int32) if track_styles else None
        self._txt_heap = np.empty(1024, dtype=np.uint8)
        self._txt_used = 0
        self._txt_starts = np.zeros(1024, dtype=np.int64)
        self._txt_lens = np.zeros(1024, dtype=np.int64)
        self._txt_count = 0
        self.lock = threading.Lock()
        self._settled = threading.Condition(self.lock)
        self._inflight = 0  # lock-free scatters currently writing the planes
        self.max_row = 0
        self.max_col = 0
        self.declared_rows = rows
        self.declared_cols = cols
        self.grow_events = 0
        self.cells_written = 0  # instrumentation: cell events drained
        self.sst: Optional[SharedStrings] = None
        self.header_names: Optional[list[str]] = None
        self.date_styles: frozenset[int] = frozenset()
        self.detect_dates = True
        self.phases: dict = {}
        self._columns: Optional[list[Column]] = None
        self._kind_counts_cache: Optional[np.ndarray] = None
        self._header_offset = 0

    # -- capacity ------------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return max(self.declared_rows, self.max_row) - self._header_offset

    @property
    def n_cols(self) -> int:
        return max(self.declared_cols, self.max_col)

    def _grow_to(self, rows: int, cols: int) -> None:
        """Resize the planes; caller must hold the lock."""
        new_rows = self._cap_rows
        new_cols = self._cap_cols
        while new_rows < rows:
            new_rows = max(2 * new_rows, 8)
        while new_cols < cols:
            new_cols = max(2 * new_cols, 4)
        if new_rows == self._cap_rows and new_cols == self._cap_cols:
            return
        kind = np.zeros((new_rows, new_cols), dtype=np.int8)
        kind[: self._cap_rows, : self._cap_cols] = self.kind
        self.kind = kind
        data = np.zeros((new_rows, new_cols), dtype=np.float64)
        data[: self._cap_rows, : self._cap_cols] = self.data
        self.data = data
        if self.style is not None:
            style = np.full((new_rows, new_cols), -1, dtype=np.int32)
            style[: self._cap_rows, : self._cap_cols] = self.style
            self.style = style
        self._cap_rows = new_rows
        self._cap_cols = new_cols
        self.grow_events += 1

    def grow_rows(self, new_rows: int) -> None:
        with self.lock:
            if new_rows > self._cap_rows:
                self._grow_to(new_rows, self._cap_cols)

    # -- text heap -----------------------------------------------------------

    def _append_text(self, buf: np.ndarray, start: int, length: int) -> int:
        """Copy text bytes into the heap; caller must hold the lock."""
        if self._txt_count + 1 > self._txt_starts.shape[0]:
            self._txt_starts = np.resize(self._txt_starts, 2 * self._txt_starts.shape[0])
            self._txt_lens = np.resize(self._txt_lens, 2 * self._txt_lens.shape[0])
            self.grow_events += 1
        if self._txt_used + length > self._txt_heap.shape[0]:
            new = np.empty(max(2 * self._txt_heap.shape[0], self._txt_used + length), dtype=np.uint8)
            new[: self._txt_used] = self._txt_heap[: self._txt_used]
            self._txt_heap = new
            self.grow_events += 1
        self._txt_heap[self._txt_used : self._txt_used + length] = buf[start : start + length]
        sid = self._txt_count
        self._txt_starts[sid] = self._txt_used
        self._txt_lens[sid] = length
        self._txt_used += length
        self._txt_count += 1
        return sid

    def text_at(self, sid: int) -> bytes:
        start = self._txt_starts[sid]
        return bytes(self._txt_heap[start : start + self._txt_lens[sid]])

    # -- writes ---------------------------------------------------------------

    def drain_tape(self, state, window: np.ndarray) -> None:
        """Consume a scanner tape into the planes (the engine hot path).

        Safe for concurrent callers: the lock serializes the scatter, and
        workers write disjoint cells anyway.  The numeric/index kinds go
        through vectorized scatters; text and fallback kinds take a slow
        loop (they are rare on the hot path).
        """
        n = state.event_count
        if n == 0:
            return

        def scatter_once():
            with self.lock:
                kind_plane = self.kind
                data_plane = self.data
                style_plane = self.style if self.style is not None else _DUMMY_STYLE
                self._inflight += 1
            try:
                # disjoint cell writes need no lock and run without the GIL
                return _scatter_cells(n, state.EW, state.EF, kind_plane, data_plane,
                                      style_plane, self.style is not None)
            finally:
                with self.lock:
                    self._inflight -= 1
                    if self._inflight == 0:
                        self._settled.notify_all()

        slow, n_cells, rmax, cmax = scatter_once()
        with self.lock:
            self.cells_written += n_cells
            if rmax > self.max_row:
                self.max_row = rmax
            if cmax > self.max_col:
                self.max_col = cmax
            need_grow = rmax > self._cap_rows or cmax > self._cap_cols
            if need_grow:
                # growth swaps the planes: wait out in-flight scatters so none
                # of their writes land in the abandoned buffers, then redo
                # this tape (idempotent disjoint writes)
                while self._inflight > 0:
                    self._settled.wait()
                self._grow_to(max(rmax, self._cap_rows), max(cmax, self._cap_cols))
        if need_grow:
            scatter_once()
        if slow == 0:
            return

        kinds = state.ev_kind[:n]
        rows = state.ev_row[:n]
        cols = state.ev_col[:n]
        i64s = state.ev_i64[:n]
        t0s = state.ev_t0[:n]
        tls = state.ev_tlen[:n]
        srcs = state.ev_src[:n]
        with self.lock:
            slow_mask = (kinds == EV_NUM_TXT) | (kinds == EV_INLINE) | (kinds == EV_FSTR) | (kinds == EV_SSTR)
            for j in np.nonzero(slow_mask)[0]:
                kind = kinds[j]
                buf = state.heap if srcs[j] == 1 else window
                if kind == EV_SSTR:
                    self.sst.append(buf[t0s[j] : t0s[j] + tls[j]])
                    continue
                r = rows[j] - 1
                c = cols[j] - 1
                if kind == EV_NUM_TXT:
                    value = deserialize_float_buffered(bytes(buf[t0s[j] : t0s[j] + tls[j]]))
                    self.kind[r, c] = K_FLT
                    self.data[r, c] = value
                    if self.style is not None:
                        self.style[r, c] = i64s[j]
                else:
                    sid = self._append_text(buf, int(t0s[j]), int(tls[j]))
                    self.kind[r, c] = K_TEXT
                    self.data[r, c] = sid

    def set_cell(self, row: int, col: int, event) -> None:
        """Single-cell write mirroring the tape semantics (tooling/tests)."""
        from .scanner import CT_BOOL, CT_ERROR, CT_NUMBER, CT_SST

        with self.lock:
            if row > self._cap_rows or col > self._cap_cols:
                self._grow_to(max(row, self._cap_rows), max(col, self._cap_cols))
            self.max_row = max(self.max_row, row)
            self.max_col = max(self.max_col, col)
            r, c = row - 1, col - 1
            if event.type == CT_NUMBER:
                v = float(event.payload)
                self.kind[r, c] = K_INT if float(v).is_integer() and abs(v) < 2**53 and isinstance(event.payload, int) else K_FLT
                self.data[r, c] = v
                if self.style is not None and event.style is not None:
                    self.style[r, c] = event.style
            elif event.type == CT_SST:
                self.kind[r, c] = K_SST
                self.data[r, c] = int(event.payload)
            elif event.type == CT_BOOL:
                self.kind[r, c] = K_BOOL
                self.data[r, c] = 1 if event.payload else 0
            elif event.type == CT_ERROR:
                self.kind[r, c] = K_ERR
            else:
                payload = event.payload or b""
                buf = np.frombuffer(payload, dtype=np.uint8)
                sid = self._append_text(buf, 0, buf.shape[0])
                self.kind[r, c] = K_TEXT
                self.data[r, c] = sid

    # -- post-parse ------------------------------------------------------------

    def resolve_shared_strings(self, sst: SharedStrings) -> None:
        """Attach the string table; every index must resolve."""
        self.sst = sst
        n_rows, n_cols = max(self.declared_rows, self.max_row), max(self.declared_cols, self.max_col)
        kinds = self.kind[:n_rows, :n_cols]
        mask = kinds == K_SST
        if mask.any():
            idx = self.data[:n_rows, :n_cols][mask]
            bad = (idx < 0) | (idx >= len(sst))
            if bad.any():
                raise DanglingStringIndex(int(idx[bad][0]))

    def finalize(self, headers: bool = False) -> "ColumnFrame":
        """Shift off the header row (optionally) and compute column types."""
        if headers and self.n_rows >= 1:
            names = []
            for c in range(self.n_cols):
                value = self.cell_value(1, c)
                names.append("" if value is None else _render_text(value))
            self.header_names = names
            self._header_offset = 1
        self._columns = None
        self._kind_counts_cache = None
        self.columns()  # force type computation
        return self

    def _kind_counts(self) -> np.ndarray:
        if self._kind_counts_cache is None:
            n_rows = max(self.declared_rows, self.max_row)
            region = self.kind[self._header_offset : n_rows]
            counts = np.zeros((7, self.kind.shape[1]), dtype=np.int64)
            for k in range(7):
                counts[k] = np.count_nonzero(region == k, axis=0)
            self._kind_counts_cache = counts
        return self._kind_counts_cache

    def _column_dtype(self, c: int) -> str:
        n_rows = max(self.declared_rows, self.max_row)
        if c >= self.kind.shape[1]:
            return T_EMPTY
        kinds = self.kind[self._header_offset : n_rows, c]
        counts = self._kind_counts()[:, c]
        present = counts[K_INT] + counts[K_FLT] + counts[K_SST] + counts[K_BOOL] + counts[K_TEXT]
        if present == 0:
            return T_EMPTY
        n_text = counts[K_SST] + counts[K_TEXT]
        n_num = counts[K_INT] + counts[K_FLT]
        if n_text == present:
            return T_STR
        if counts[K_BOOL] == present:
            return T_BOOL
        if n_num == present:
            if self.detect_dates and self.style is not None and self.date_styles:
                styles = self.style[self._header_offset : n_rows, c]
                dated = np.isin(styles, list(self.date_styles)) & (kinds != K_NULL) & (kinds != K_ERR)
                numeric = (kinds == K_INT) | (kinds == K_FLT)
                if dated[numeric].all() and numeric.any():
                    return T_DATE
                if dated[numeric].any():
                    return T_STR  # mixed date and plain number renderings
            if counts[K_FLT] > 0:
                return T_FLT
            return T_INT
        return T_STR  # mixed content promotes to the lattice top

    def columns(self) -> list[Column]:
        if self._columns is None:
            cols = []
            n_rows = max(self.declared_rows, self.max_row)
            for c in range(self.n_cols):
                name = None
                if self.header_names and c < len(self.header_names):
                    name = self.header_names[c]
                if c < self.kind.shape[1]:
                    kind = self.kind[self._header_offset : n_rows, c]
                    data = self.data[self._header_offset : n_rows, c]
                else:
                    kind = np.zeros(self.n_rows, dtype=np.int8)
                    data = np.zeros(self.n_rows, dtype=np.float64)
                cols.append(Column(name, self._column_dtype(c), kind, data, self, c))
            self._columns = cols
        return self._columns

    # -- value access ------------------------------------------------------------

    def _is_date_cell(self, row0: int, col0: int) -> bool:
        if not self.detect_dates or self.style is None or not self.date_styles:
            return False
        return int(self.style[row0, col0]) in self.date_styles

    def cell_value(self, row: int, col: int):
        """Python value at (1-based data row, 0-based column)."""
        r = row - 1 + self._header_offset
        c = col
        if r >= self.kind.shape[0] or c >= self.kind.shape[1]:
            return None
        kind = self.kind[r, c]
        if kind == K_NULL or kind == K_ERR:
            return None
        if kind == K_INT:
            if self._is_date_cell(r, c):
                return _serial_to_datetime(self.data[r, c])
            return int(self.data[r, c])
        if kind == K_FLT:
            if self._is_date_cell(r, c):
                return _serial_to_datetime(self.data[r, c])
            return float(self.data[r, c])
        if kind == K_BOOL:
            return bool(self.data[r, c])
        if kind == K_SST:
            return self.sst.get(int(self.data[r, c])).decode("utf-8", "replace")
        if kind == K_TEXT:
            return self.text_at(int(self.data[r, c])).decode("utf-8", "replace")
        return None

    # -- export ------------------------------------------------------------------

    def to_csv(self, out, types_line: bool = False) -> None:
        """RFC-4180-style CSV onto a binary stream."""
        cols = self.columns()
        if types_line:
            out.write(("#types," + ",".join(c.dtype for c in cols) + "\n").encode())
        if self.header_names is not None:
            out.write(_render_csv_row([_csv_field(n) for n in self.header_names]))
        n_rows = self.n_rows
        n_cols = self.n_cols
        kinds = self.kind
        data = self.data
        off = self._header_offset
        for r in range(n_rows):
            fields = []
            rr = r + off
            for c in range(n_cols):
                if rr >= kinds.shape[0] or c >= kinds.shape[1]:
                    fields.append("")
                    continue
                k = kinds[rr, c]
                if k == K_NULL or k == K_ERR:
                    fields.append("")
                elif k == K_INT:
                    if self._is_date_cell(rr, c):
                        fields.append(_render_date(data[rr, c]))
                    else:
                        fields.append(repr(int(data[rr, c])))
                elif k == K_FLT:
                    if self._is_date_cell(rr, c):
                        fields.append(_render_date(data[rr, c]))
                    else:
                        fields.append(repr(float(data[rr, c])))
                elif k == K_BOOL:
                    fields.append("TRUE" if data[rr, c] else "FALSE")
                elif k == K_SST:
                    fields.append(_csv_field(self.sst.get(int(data[rr, c])).decode("utf-8", "replace")))
                else:
                    fields.append(_csv_field(self.text_at(int(data[rr, c])).decode("utf-8", "replace")))
            out.write(_render_csv_row(fields))

    def summary(self) -> str:
        cols = self.columns()
        lines = [f"rows={self.n_rows} cols={self.n_cols}"]
        for i, col in enumerate(cols, start=1):
            name = col.name if col.name is not None else f"col{i}"
            lines.append(
                f"col {i} name={name} type={col.dtype} nulls={col.null_count()}/{self.n_rows}"
            )
        return "\n".join(lines) + "\n"


def preallocate(rows: int, cols: int, track_styles: bool = False) -> ColumnFrame:
    return ColumnFrame(rows, cols, track_styles=track_styles)


# --- rendering helpers -----------------------------------------------------


def _csv_field(text: str) -> str:
    if any(ch in text for ch in (",", '"', "\n", "\r")):
        return '"' + text.replace('"', '""') + '"'
    return text


def _render_csv_row(fields: list[str]) -> bytes:
    if len(fields) == 1 and fields[0] == "":
        return b'""\n'  # a lone empty field must not collapse into an empty record
    return (",".join(fields) + "\n").encode("utf-8")


def _render_text(value) -> str:
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (date, datetime)):
        return value.isoformat()
    return str(value)


def _serial_to_datetime(serial: float):
    whole = int(serial)
    frac = serial - whole
    moment = _SERIAL_EPOCH + timedelta(days=whole)
    if frac == 0.0:
        return moment.date()
    return moment + timedelta(seconds=round(frac * 86400))


def _render_date(serial: float) -> str:
    return _serial_to_datetime(serial).isoformat()
