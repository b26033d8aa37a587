"""Parallel worksheet loader with a runtime-optimized consecutive engine,
a constant-memory interleaved engine, and a boundary-reset parallel
decompression path."""

from .consecutive import parse_consecutive, split_chunks
from .container import Archive, ArchiveEntry, EntryStream, open_archive
from .errors import SheetReaderError
from .frame import Column, ColumnFrame, SharedStrings, preallocate
from .generate import ColumnSpec, GenSpec, GroundTruth, generate_xlsx
from .interleaved import RingBuffer, parse_interleaved
from .metadata import (
    SheetDimension,
    WorkbookMeta,
    probe_dimension,
    probe_sst_count,
    read_root_relationships,
    read_workbook,
)
from .options import EngineOptions
from .pdeflate import BoundaryIndex, parse_parallel_decompress, repack_entry
from .scanner import CellEvent, ParseState, StringEvent, feed_bytes, resolve_chunk_start

__version__ = "0.1.0"

_ENGINES = {
    "consecutive": parse_consecutive,
    "interleaved": parse_interleaved,
    "parallel-deflate": parse_parallel_decompress,
}


def read_sheet(path, sheet=None, mode: str = "consecutive", **options) -> ColumnFrame:
    """Load one sheet into a finalized column frame.

    `mode` selects the engine; engine options are EngineOptions fields
    passed as keywords.
    """
    if mode not in _ENGINES:
        raise ValueError(f"unknown mode {mode!r}; pick one of {sorted(_ENGINES)}")
    opts = EngineOptions(**options)
    if mode == "parallel-deflate":
        return parse_parallel_decompress(path, None, sheet, opts)
    return _ENGINES[mode](path, sheet, opts)


__all__ = [
    "Archive",
    "ArchiveEntry",
    "BoundaryIndex",
    "CellEvent",
    "Column",
    "ColumnFrame",
    "ColumnSpec",
    "EngineOptions",
    "EntryStream",
    "GenSpec",
    "GroundTruth",
    "ParseState",
    "RingBuffer",
    "SharedStrings",
    "SheetDimension",
    "SheetReaderError",
    "StringEvent",
    "WorkbookMeta",
    "feed_bytes",
    "generate_xlsx",
    "open_archive",
    "parse_consecutive",
    "parse_interleaved",
    "parse_parallel_decompress",
    "preallocate",
    "probe_dimension",
    "probe_sst_count",
    "read_root_relationships",
    "read_sheet",
    "read_workbook",
    "repack_entry",
    "resolve_chunk_start",
    "split_chunks",
    "__version__",
]
