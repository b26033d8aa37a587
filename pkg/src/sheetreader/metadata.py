"""OPC relationship resolution and pre-allocation probes.

Locates the workbook, worksheets, shared strings and styles parts by
walking the `.rels` graph, and reads the cheap header hints (worksheet
dimension, shared-string counts, date styles) from the head of the
streamed parts.  These are tiny documents, so they are scanned with a
small element/attribute tokenizer restricted to the handful of elements
we need; no general-purpose XML machinery.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .container import Archive
from .errors import (
    MalformedRels,
    MalformedWorkbook,
    MissingRels,
    NoSuchSheet,
)
from .scanner import decode_entity, parse_cell_ref

ROOT_RELS = "_rels/.rels"

_TYPE_OFFICE_DOCUMENT = "officedocument"
_TYPE_SHARED_STRINGS = "sharedstrings"
_TYPE_STYLES = "styles"
_TYPE_WORKSHEET = "worksheet"

# built-in number formats that render as dates/times (ECMA-376 defaults)
DATE_NUMFMT_IDS = frozenset(range(14, 23)) | frozenset(range(45, 48))

# how much of a part head the probes read
_PROBE_WINDOW = 32 * 1024


@dataclass(frozen=True)
class SheetRef:
    display_name: str
    relationship_id: str
    part_path: str


@dataclass
class WorkbookMeta:
    sheets: list[SheetRef] = field(default_factory=list)
    shared_strings_path: Optional[str] = None
    shared_strings_unique_count: Optional[int] = None
    styles_path: Optional[str] = None

    def select(self, selector: Union[int, str, None]) -> SheetRef:
        """Pick a sheet by 1-based index or by name (exact first, then
        case-insensitive)."""
        if not self.sheets:
            raise NoSuchSheet("workbook has no sheets")
        if selector is None:
            return self.sheets[0]
        if isinstance(selector, int):
            if not 1 <= selector <= len(self.sheets):
                raise NoSuchSheet(f"sheet index {selector} out of range 1..{len(self.sheets)}")
            return self.sheets[selector - 1]
        for sheet in self.sheets:
            if sheet.display_name == selector:
                return sheet
        lowered = selector.lower()
        for sheet in self.sheets:
            if sheet.display_name.lower() == lowered:
                return sheet
        raise NoSuchSheet(selector)


@dataclass(frozen=True)
class SheetDimension:
    rows: int
    cols: int


# --- tiny tag tokenizer ----------------------------------------------------


def _iter_tags(data: bytes) -> Iterator[tuple[str, dict[str, bytes]]]:
    """Yield (element_local_name, attributes) for each opening tag.

    Quote-aware, namespace prefixes stripped, attribute values undecoded
    (bytes); good enough for the fixed rels/workbook/sst/styles headers.
    """
    i = 0
    n = len(data)
    while True:
        lt = data.find(b"<", i)
        if lt < 0:
            return
        i = lt + 1
        if i >= n:
            return
        b = data[i]
        if b in (0x2F, 0x21, 0x3F):  # / ! ?
            end = data.find(b">", i)
            if end < 0:
                return
            i = end + 1
            continue
        # element name
        j = i
        while j < n and data[j] not in b" \t\r\n/>":
            j += 1
        name = data[i:j].decode("ascii", "replace")
        if ":" in name:
            name = name.rsplit(":", 1)[1]
        attrs: dict[str, bytes] = {}
        i = j
        while i < n:
            while i < n and data[i] in b" \t\r\n":
                i += 1
            if i >= n:
                return
            if data[i] in b"/>":
                if data[i : i + 1] == b"/":
                    i += 1
                    continue
                i += 1
                break
            j = i
            while j < n and data[j] not in b"= \t\r\n":
                j += 1
            aname = data[i:j].decode("ascii", "replace")
            if ":" in aname:
                aname = aname.rsplit(":", 1)[1]
            i = data.find(b"=", j)
            if i < 0:
                return
            i += 1
            while i < n and data[i] in b" \t\r\n":
                i += 1
            if i >= n or data[i] not in b"\"'":
                return
            quote = data[i]
            end = data.find(bytes([quote]), i + 1)
            if end < 0:
                return
            attrs[aname] = data[i + 1 : end]
            i = end + 1
        yield name, attrs


def _decode_attr(raw: bytes) -> str:
    """Attribute value with entity references resolved."""
    if b"&" not in raw:
        return raw.decode("utf-8")
    out = bytearray()
    i = 0
    while i < len(raw):
        b = raw[i]
        if b == 0x26:  # '&'
            semi = raw.find(b";", i + 1)
            if 0 < semi - i <= 11:
                out += decode_entity(raw[i : semi + 1])
                i = semi + 1
                continue
        out.append(b)
        i += 1
    return out.decode("utf-8")


def _normalize_target(target: str, base_dir: str) -> str:
    """Resolve a relationship target against the source part's directory."""
    if target.startswith("/"):
        path = target.lstrip("/")
    else:
        path = posixpath.join(base_dir, target) if base_dir else target
    return posixpath.normpath(path)


# --- operations -------------------------------------------------------------


def _read_relationships(a: Archive, rels_path: str) -> list[tuple[str, str, str]]:
    """(id, type, normalized target) triples from one .rels part."""
    data = a.read_entry_full(rels_path)
    base_dir = posixpath.dirname(posixpath.dirname(rels_path))
    out = []
    for name, attrs in _iter_tags(data):
        if name != "Relationship":
            continue
        rid = _decode_attr(attrs.get("Id", b""))
        rtype = _decode_attr(attrs.get("Type", b""))
        target = _decode_attr(attrs.get("Target", b""))
        if not target:
            continue
        if attrs.get("TargetMode", b"").lower() == b"external":
            continue
        out.append((rid, rtype, _normalize_target(target, base_dir)))
    return out


def read_root_relationships(a: Archive) -> dict[str, str]:
    """Map relationship type (lowercased last path segment) -> target path."""
    if ROOT_RELS not in a.index:
        raise MissingRels(ROOT_RELS)
    mapping: dict[str, str] = {}
    for _rid, rtype, target in _read_relationships(a, ROOT_RELS):
        key = rtype.rstrip("/").rsplit("/", 1)[-1].lower()
        mapping.setdefault(key, target)
    if _TYPE_OFFICE_DOCUMENT not in mapping:
        raise MalformedRels("no officeDocument relationship in " + ROOT_RELS)
    return mapping


def read_workbook(a: Archive, workbook_path: Optional[str] = None) -> WorkbookMeta:
    """Resolve sheet names/paths plus the shared-strings and styles parts."""
    if workbook_path is None:
        workbook_path = read_root_relationships(a)[_TYPE_OFFICE_DOCUMENT]
    rels_path = posixpath.join(posixpath.dirname(workbook_path), "_rels",
                               posixpath.basename(workbook_path) + ".rels")
    by_id: dict[str, tuple[str, str]] = {}
    if rels_path in a.index:
        for rid, rtype, target in _read_relationships(a, rels_path):
            by_id[rid] = (rtype.rstrip("/").rsplit("/", 1)[-1].lower(), target)

    meta = WorkbookMeta()
    for _rtype_key, target in by_id.values():
        if _rtype_key == _TYPE_SHARED_STRINGS and meta.shared_strings_path is None:
            meta.shared_strings_path = target
        elif _rtype_key == _TYPE_STYLES and meta.styles_path is None:
            meta.styles_path = target

    data = a.read_entry_full(workbook_path)
    for name, attrs in _iter_tags(data):
        if name != "sheet":
            continue
        display = _decode_attr(attrs.get("name", b""))
        rid = _decode_attr(attrs.get("id", b""))
        if rid not in by_id:
            raise MalformedWorkbook(f"sheet {display!r} has no resolvable relationship {rid!r}")
        meta.sheets.append(SheetRef(display, rid, by_id[rid][1]))
    for sheet in meta.sheets:
        if sheet.part_path not in a.index:
            raise MalformedWorkbook(f"sheet part {sheet.part_path} missing from archive")
    return meta


def _read_head(a: Archive, path: str, size: int = _PROBE_WINDOW) -> bytes:
    entry = a.index[path]
    if entry.uncompressed_size <= size:
        return a.read_entry_full(path)
    stream = a.open_entry_stream(path)
    buf = bytearray(size)
    stream.stream_next(buf)
    return bytes(buf)


def probe_dimension(a: Archive, sheet_path: str) -> Optional[SheetDimension]:
    """Worksheet extent from the dimension header element, if trustworthy.

    Single-cell refs (no ':') are treated as absent: some writers emit
    `ref="A1"` regardless of the data, and trusting it would under-allocate.
    """
    head = _read_head(a, sheet_path)
    for name, attrs in _iter_tags(head):
        if name == "dimension":
            ref = attrs.get("ref", b"")
            if b":" not in ref:
                return None
            try:
                _first, second = ref.split(b":", 1)
                rows, cols = parse_cell_ref(second)
            except Exception:
                return None
            return SheetDimension(rows=rows, cols=cols)
        if name == "sheetData":
            return None
    return None


def probe_sst_count(a: Archive, sst_path: str) -> Optional[int]:
    """uniqueCount (preferred) or count attribute of the sst root."""
    head = _read_head(a, sst_path, 4096)
    for name, attrs in _iter_tags(head):
        if name != "sst":
            continue
        for key in ("uniqueCount", "count"):
            raw = attrs.get(key)
            if raw is not None:
                try:
                    return int(raw)
                except ValueError:
                    return None
        return None
    return None


def read_date_styles(a: Archive, styles_path: Optional[str]) -> frozenset[int]:
    """Indexes into cellXfs whose number format is a built-in date format.

    Custom format strings are not interpreted; only the stock date/time
    format ids count.
    """
    if not styles_path or styles_path not in a.index:
        return frozenset()
    data = a.read_entry_full(styles_path)
    date_styles = []
    in_cellxfs = False
    xf_index = -1
    for name, attrs in _iter_tags(data):
        if name == "cellXfs":
            in_cellxfs = True
            xf_index = -1
            continue
        if not in_cellxfs:
            continue
        if name == "xf":
            xf_index += 1
            raw = attrs.get("numFmtId")
            if raw is not None:
                try:
                    if int(raw) in DATE_NUMFMT_IDS:
                        date_styles.append(xf_index)
                except ValueError:
                    pass
    return frozenset(date_styles)
