"""Synthetic workbook generation with retained ground truth.

Files are written with the standard zipfile module (so the reader side is
exercised against an independent producer), and every generated value is
kept as a typed table plus a rendered CSV for oracle comparisons.  Value
streams are drawn per column with dedicated bit generators, which makes a
smaller row count a strict prefix of a larger one for the same seed.
"""

from __future__ import annotations

import csv
import io
import zipfile
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

_EPOCH = date(1899, 12, 30)
_ALPHABET = np.frombuffer(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789", dtype=np.uint8)


@dataclass(frozen=True)
class ColumnSpec:
    kind: str  # float | integer | text | boolean | date
    unique_fraction: float = 0.25
    blank_fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("float", "integer", "text", "boolean", "date"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if not 0.0 <= self.unique_fraction <= 1.0:
            raise ValueError("unique_fraction must be in [0, 1]")
        if not 0.0 <= self.blank_fraction <= 1.0:
            raise ValueError("blank_fraction must be in [0, 1]")


@dataclass(frozen=True)
class GenSpec:
    rows: int
    columns: tuple[ColumnSpec, ...]
    emit_r_attributes: bool = True
    emit_dimension: bool = True
    strings_mode: str = "shared"  # shared | inline
    seed: int = 0
    sheet_name: str = "Sheet1"
    compresslevel: int = 6

    def __post_init__(self):
        if self.rows < 0:
            raise ValueError("rows must be >= 0")
        if self.strings_mode not in ("shared", "inline"):
            raise ValueError("strings_mode must be 'shared' or 'inline'")
        object.__setattr__(self, "columns", tuple(self.columns))

    @staticmethod
    def numeric(rows: int, cols: int, blank: float = 0.0, **kw) -> "GenSpec":
        return GenSpec(rows, tuple(ColumnSpec("float", blank_fraction=blank) for _ in range(cols)), **kw)

    @staticmethod
    def all_text(rows: int, cols: int, blank: float = 0.0, unique: float = 0.25, **kw) -> "GenSpec":
        return GenSpec(rows, tuple(ColumnSpec("text", unique, blank) for _ in range(cols)), **kw)

    @staticmethod
    def mixed(rows: int, blank: float = 0.0, scale: float = 1.0, **kw) -> "GenSpec":
        """The reference mixed layout: 40 float, 30 integer, 20 text with
        25% unique values, 10 text with 75% unique values."""
        def n(x):
            return max(1, round(x * scale))
        cols = (
            [ColumnSpec("float", blank_fraction=blank)] * n(40)
            + [ColumnSpec("integer", blank_fraction=blank)] * n(30)
            + [ColumnSpec("text", 0.25, blank)] * n(20)
            + [ColumnSpec("text", 0.75, blank)] * n(10)
        )
        return GenSpec(rows, tuple(cols), **kw)


@dataclass
class GroundTruth:
    spec: GenSpec
    column_tags: list[str]  # frame lattice tags
    columns: list[list]  # python values, None for blanks
    sheet_xml: bytes  # the worksheet bytes before compression
    sst: list[bytes]  # shared string table in index order
    csv: bytes

    @property
    def rows(self) -> int:
        return self.spec.rows

    @property
    def cols(self) -> int:
        return len(self.spec.columns)


_TAG_BY_KIND = {
    "float": "double",
    "integer": "integer",
    "text": "string",
    "boolean": "boolean",
    "date": "date",
}


def _col_rng(seed: int, col: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64([seed, col, stream]))


def _gen_column(spec: GenSpec, c: int) -> list:
    col = spec.columns[c]
    rows = spec.rows
    blanks = _col_rng(spec.seed, c, 0).random(rows) < col.blank_fraction if col.blank_fraction > 0 else None
    vals_rng = _col_rng(spec.seed, c, 1)
    out: list = []
    if col.kind == "float":
        vals = vals_rng.random(rows) * 2e6 - 1e6
        out = [float(v) for v in vals]
    elif col.kind == "integer":
        vals = vals_rng.integers(-10**9, 10**9, rows)
        out = [int(v) for v in vals]
    elif col.kind == "boolean":
        vals = vals_rng.integers(0, 2, rows)
        out = [bool(v) for v in vals]
    elif col.kind == "date":
        vals = vals_rng.integers(32874, 51000, rows)  # 1990..2039
        out = [_EPOCH + timedelta(days=int(v)) for v in vals]
    else:  # text
        pool: list[str] = []
        out = []
        for _r in range(rows):
            u = vals_rng.random()
            if not pool or u < col.unique_fraction:
                length = int(vals_rng.integers(8, 25))
                chars = vals_rng.integers(0, _ALPHABET.shape[0], length)
                s = _ALPHABET[chars].tobytes().decode("ascii")
                pool.append(s)
                out.append(s)
            else:
                out.append(pool[int(vals_rng.integers(0, len(pool)))])
    if blanks is not None:
        out = [None if blanks[r] else out[r] for r in range(rows)]
    return out


def _col_letters(col: int) -> str:
    out = []
    while col:
        col, rem = divmod(col - 1, 26)
        out.append(chr(65 + rem))
    return "".join(reversed(out))


def _esc(text: str) -> str:
    if "&" in text or "<" in text or ">" in text:
        return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    return text


def _render_sheet(spec: GenSpec, cols: list[list]) -> tuple[bytes, list[str], int]:
    """Worksheet XML, the shared-string pool, and the string cell count."""
    rows = spec.rows
    n_cols = len(spec.columns)
    letters = [_col_letters(c + 1) for c in range(n_cols)]
    kinds = [c.kind for c in spec.columns]
    shared = spec.strings_mode == "shared"
    sst_index: dict[str, int] = {}
    sst_list: list[str] = []
    string_cells = 0
    refs = spec.emit_r_attributes

    parts = ['<?xml version="1.0" encoding="UTF-8" standalone="yes"?>'
             '<worksheet xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main">']
    if spec.emit_dimension and rows > 0 and n_cols > 0:
        parts.append(f'<dimension ref="A1:{letters[-1]}{rows}"/>')
    parts.append("<sheetData>")
    for r in range(rows):
        row_cells = []
        last_value = -1
        for c in range(n_cols):
            value = cols[c][r]
            if value is not None:
                last_value = c
        if last_value < 0:
            if not refs:
                parts.append("<row/>")
            continue
        rr = r + 1
        # without location attributes, blanks become placeholder cells so
        # positions survive; trailing blanks are dropped with the row end
        for c in range(n_cols if refs else last_value + 1):
            value = cols[c][r]
            if value is None:
                if not refs:
                    row_cells.append("<c/>")
                continue
            ref_attr = f' r="{letters[c]}{rr}"' if refs else ""
            kind = kinds[c]
            if kind == "float":
                row_cells.append(f"<c{ref_attr}><v>{value!r}</v></c>")
            elif kind == "integer":
                row_cells.append(f"<c{ref_attr}><v>{value}</v></c>")
            elif kind == "boolean":
                row_cells.append(f'<c{ref_attr} t="b"><v>{1 if value else 0}</v></c>')
            elif kind == "date":
                serial = (value - _EPOCH).days
                row_cells.append(f'<c{ref_attr} s="1"><v>{serial}</v></c>')
            else:
                string_cells += 1
                if shared:
                    idx = sst_index.get(value)
                    if idx is None:
                        idx = len(sst_list)
                        sst_index[value] = idx
                        sst_list.append(value)
                    row_cells.append(f'<c{ref_attr} t="s"><v>{idx}</v></c>')
                else:
                    row_cells.append(f'<c{ref_attr} t="inlineStr"><is><t>{_esc(value)}</t></is></c>')
        row_attr = f' r="{rr}"' if refs else ""
        parts.append(f"<row{row_attr}>" + "".join(row_cells) + "</row>")
    parts.append("</sheetData></worksheet>")
    return "".join(parts).encode("utf-8"), sst_list, string_cells


def _render_sst(sst: list[str], total: int) -> bytes:
    parts = [
        '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>',
        f'<sst xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main" count="{total}" uniqueCount="{len(sst)}">',
    ]
    for s in sst:
        parts.append(f"<si><t>{_esc(s)}</t></si>")
    parts.append("</sst>")
    return "".join(parts).encode("utf-8")


_CONTENT_TYPES = b"""<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Types xmlns="http://schemas.openxmlformats.org/package/2006/content-types"><Default Extension="rels" ContentType="application/vnd.openxmlformats-package.relationships+xml"/><Default Extension="xml" ContentType="application/xml"/><Override PartName="/xl/workbook.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet.main+xml"/><Override PartName="/xl/worksheets/sheet1.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.worksheet+xml"/><Override PartName="/xl/styles.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.styles+xml"/><Override PartName="/xl/sharedStrings.xml" ContentType="application/vnd.openxmlformats-officedocument.spreadsheetml.sharedStrings+xml"/></Types>"""

_ROOT_RELS = b"""<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships"><Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument" Target="/xl/workbook.xml"/></Relationships>"""

_STYLES = b"""<?xml version="1.0" encoding="UTF-8" standalone="yes"?>
<styleSheet xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main"><fonts count="1"><font><sz val="11"/><name val="Calibri"/></font></fonts><fills count="1"><fill><patternFill patternType="none"/></fill></fills><borders count="1"><border/></borders><cellStyleXfs count="1"><xf numFmtId="0" fontId="0" fillId="0" borderId="0"/></cellStyleXfs><cellXfs count="2"><xf numFmtId="0" fontId="0" fillId="0" borderId="0" xfId="0"/><xf numFmtId="14" fontId="0" fillId="0" borderId="0" xfId="0" applyNumberFormat="1"/></cellXfs></styleSheet>"""


def _workbook_xml(sheet_name: str) -> bytes:
    return (
        '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>'
        '<workbook xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main" '
        'xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships">'
        f'<sheets><sheet name="{_esc(sheet_name)}" sheetId="1" r:id="rId1"/></sheets>'
        "</workbook>"
    ).encode()


def _workbook_rels(with_sst: bool) -> bytes:
    rels = [
        '<Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet" Target="worksheets/sheet1.xml"/>',
        '<Relationship Id="rId2" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/styles" Target="styles.xml"/>',
    ]
    if with_sst:
        rels.append('<Relationship Id="rId3" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/sharedStrings" Target="sharedStrings.xml"/>')
    return (
        '<?xml version="1.0" encoding="UTF-8" standalone="yes"?>'
        '<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">'
        + "".join(rels)
        + "</Relationships>"
    ).encode()


def render_value(value) -> str:
    """Canonical text form shared by the ground-truth CSV and exports."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "TRUE" if value else "FALSE"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def _truth_csv(cols: list[list], rows: int) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for r in range(rows):
        writer.writerow([render_value(col[r]) for col in cols])
    return buf.getvalue().encode("utf-8")


def generate_xlsx(spec: GenSpec, path: str) -> GroundTruth:
    """Write the workbook and return the retained ground truth."""
    cols = [_gen_column(spec, c) for c in range(len(spec.columns))]
    sheet_xml, sst_list, string_cells = _render_sheet(spec, cols)

    has_text = any(c.kind == "text" for c in spec.columns)
    with_sst = has_text and spec.strings_mode == "shared"

    def info(name: str) -> zipfile.ZipInfo:
        zi = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
        zi.compress_type = zipfile.ZIP_DEFLATED
        zi.external_attr = 0o600 << 16
        return zi

    with zipfile.ZipFile(path, "w") as zf:
        def write(name: str, data: bytes) -> None:
            zf.writestr(info(name), data, compresslevel=spec.compresslevel)

        write("[Content_Types].xml", _CONTENT_TYPES)
        write("_rels/.rels", _ROOT_RELS)
        write("xl/workbook.xml", _workbook_xml(spec.sheet_name))
        write("xl/_rels/workbook.xml.rels", _workbook_rels(with_sst))
        write("xl/styles.xml", _STYLES)
        if with_sst:
            write("xl/sharedStrings.xml", _render_sst(sst_list, string_cells))
        write("xl/worksheets/sheet1.xml", sheet_xml)

    return GroundTruth(
        spec=spec,
        column_tags=[_TAG_BY_KIND[c.kind] for c in spec.columns],
        columns=cols,
        sheet_xml=sheet_xml,
        sst=[s.encode() for s in sst_list],
        csv=_truth_csv(cols, spec.rows),
    )
