"""Benchmark execution with phase timestamps and periodic RSS sampling.

Each configuration runs in a fresh child process for cold-state isolation;
the parent samples the child's resident set at a fixed period and the
child reports its own phase marks and peak RSS on exit.  Results are
averaged over the requested repeats and emitted as CSV.

OS page caches are NOT dropped automatically (that needs privileges);
pass `caches_cleared=True` to record that the manual step was done.
"""

from __future__ import annotations

import csv
import io
import json
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import psutil

_PHASE_COLUMNS = ("decompress_ms", "parse_ms", "strings_ms", "transform_ms")

REPORT_COLUMNS = (
    "config",
    "file",
    "mode",
    "threads",
    "parser_threads",
    "rows",
    "cols",
    "repeats",
    "wall_ms",
    "peak_rss_bytes",
    *_PHASE_COLUMNS,
    "caches_cleared",
    "error",
)


@dataclass(frozen=True)
class BenchConfig:
    config: str
    file: str
    mode: str = "consecutive"  # consecutive | interleaved | parallel-deflate
    threads: int = 8
    parser_threads: int = 2
    ring_elements: int = 1024
    ring_element_size: int = 32768
    strings_mode: str = "parallel"
    sheet: Optional[str] = None


@dataclass
class BenchRow:
    config: str
    file: str
    mode: str
    threads: int
    parser_threads: int
    rows: int
    cols: int
    repeats: int
    wall_ms: float
    peak_rss_bytes: int
    phases_ms: dict
    samples: list  # list per repeat of [(t_ms, rss_bytes), ...]
    caches_cleared: bool
    error: Optional[str] = None


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)


def read_vm_peak() -> tuple[int, int]:
    """(peak RSS, current RSS) of this process in bytes.

    Peak comes from getrusage (some sandbox kernels omit VmHWM from
    /proc/self/status); current RSS from /proc when present.
    """
    import resource

    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    rss = 0
    try:
        with open("/proc/self/status") as fh:
            for line in fh:
                if line.startswith("VmRSS:"):
                    rss = int(line.split()[1]) * 1024
                    break
    except OSError:
        pass
    return peak, rss


def warm_up_all() -> None:
    """Exercise every engine once on a tiny in-memory workbook so all JIT
    kernels are loaded before any measurement baseline is taken."""
    import io as _io
    import zipfile as _zip

    from . import parse_consecutive, parse_interleaved
    from .container import open_archive
    from .options import EngineOptions
    from .scanner import warm_up

    warm_up()
    buf = _io.BytesIO()
    with _zip.ZipFile(buf, "w", _zip.ZIP_DEFLATED) as zf:
        zf.writestr("_rels/.rels", '<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships"><Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/officeDocument" Target="/xl/workbook.xml"/></Relationships>')
        zf.writestr("xl/workbook.xml", '<workbook xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships"><sheets><sheet name="S" sheetId="1" r:id="rId1"/></sheets></workbook>')
        zf.writestr("xl/_rels/workbook.xml.rels", '<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships"><Relationship Id="rId1" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet" Target="worksheets/sheet1.xml"/><Relationship Id="rId2" Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/sharedStrings" Target="sharedStrings.xml"/></Relationships>')
        zf.writestr("xl/sharedStrings.xml", '<sst count="1" uniqueCount="1"><si><t>x</t></si></sst>')
        zf.writestr("xl/worksheets/sheet1.xml", '<worksheet><dimension ref="A1:B2"/><sheetData><row r="1"><c r="A1"><v>1.5</v></c><c r="B1" t="s"><v>0</v></c></row><row r="2"><c r="A2"><v>7</v></c></row></sheetData></worksheet>')
    raw = buf.getvalue()
    for opts in (EngineOptions(threads=2), ):
        with open_archive(raw) as archive:
            parse_consecutive(archive, None, opts)
    with open_archive(raw) as archive:
        parse_interleaved(archive, None, EngineOptions(parser_threads=2, ring_elements=2, ring_element_size=64))


def _child_main(argv: list[str]) -> int:
    cfg = json.loads(argv[0])
    from . import read_sheet

    warm_up_all()  # load every kernel before the baseline snapshot
    _hwm0, baseline = read_vm_peak()
    t0 = time.perf_counter()
    frame = read_sheet(
        cfg["file"],
        sheet=cfg.get("sheet"),
        mode=cfg.get("mode", "consecutive"),
        threads=cfg.get("threads", 8),
        parser_threads=cfg.get("parser_threads", 2),
        ring_elements=cfg.get("ring_elements", 1024),
        ring_element_size=cfg.get("ring_element_size", 32768),
        strings_mode=cfg.get("strings_mode", "parallel"),
    )
    wall = (time.perf_counter() - t0) * 1000.0
    hwm, _rss = read_vm_peak()
    marks = frame.phases
    t_open = marks.get("open", t0)
    phases = {}
    prev = t_open
    for key, column in (("decompress", "decompress_ms"), ("parse", "parse_ms"),
                        ("strings", "strings_ms"), ("finalize", "transform_ms")):
        if key in marks:
            phases[column] = (marks[key] - prev) * 1000.0
            prev = marks[key]
    print(json.dumps({
        "wall_ms": wall,
        "phases_ms": phases,
        "peak_rss_bytes": hwm,
        "baseline_rss_bytes": baseline,
        "rows": frame.n_rows,
        "cols": frame.n_cols,
    }))
    return 0


def _run_child(cfg: BenchConfig, sample_ms: int) -> tuple[dict, list]:
    proc = subprocess.Popen(
        [sys.executable, "-m", "sheetreader.bench", json.dumps(asdict(cfg))],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
    )
    samples = []
    start = time.perf_counter()
    ps = psutil.Process(proc.pid)
    while proc.poll() is None:
        try:
            samples.append(((time.perf_counter() - start) * 1000.0, ps.memory_info().rss))
        except psutil.Error:
            break
        time.sleep(sample_ms / 1000.0)
    out, err = proc.communicate()
    if proc.returncode != 0:
        raise RuntimeError(f"bench child failed: {err.decode(errors='replace')[-2000:]}")
    return json.loads(out.decode()), samples


def run_benchmark(
    configs: list[BenchConfig],
    repeat: int = 5,
    sample_ms: int = 50,
    caches_cleared: bool = False,
) -> BenchReport:
    """Run every configuration `repeat` times in fresh child processes."""
    report = BenchReport()
    for cfg in configs:
        walls, peaks, all_samples = [], [], []
        phase_sums: dict = {}
        rows = cols = 0
        error = None
        for _ in range(repeat):
            try:
                result, samples = _run_child(cfg, sample_ms)
            except Exception as exc:
                error = str(exc)
                break
            walls.append(result["wall_ms"])
            sampled_peak = max((s[1] for s in samples), default=0)
            peaks.append(max(result["peak_rss_bytes"], sampled_peak))
            all_samples.append(samples)
            rows, cols = result["rows"], result["cols"]
            for key, value in result["phases_ms"].items():
                phase_sums[key] = phase_sums.get(key, 0.0) + value
        n = len(walls)
        report.rows.append(
            BenchRow(
                config=cfg.config,
                file=cfg.file,
                mode=cfg.mode,
                threads=cfg.threads,
                parser_threads=cfg.parser_threads,
                rows=rows,
                cols=cols,
                repeats=n,
                wall_ms=sum(walls) / n if n else 0.0,
                peak_rss_bytes=max(peaks) if peaks else 0,
                phases_ms={k: v / n for k, v in phase_sums.items()} if n else {},
                samples=all_samples,
                caches_cleared=caches_cleared,
                error=error,
            )
        )
    return report


def emit_report(report: BenchReport, out) -> None:
    """CSV with a fixed, documented column order."""
    text = isinstance(out, io.TextIOBase)
    buf = out if text else io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in report.rows:
        writer.writerow(
            [
                row.config,
                row.file,
                row.mode,
                row.threads,
                row.parser_threads,
                row.rows,
                row.cols,
                row.repeats,
                f"{row.wall_ms:.3f}",
                row.peak_rss_bytes,
                *(f"{row.phases_ms.get(c, 0.0):.3f}" for c in _PHASE_COLUMNS),
                "yes" if row.caches_cleared else "no",
                row.error or "",
            ]
        )
    if not text:
        out.write(buf.getvalue().encode("utf-8"))


def read_report(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


if __name__ == "__main__":
    sys.exit(_child_main(sys.argv[1:]))
