"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 parse/data error.  Errors go to
stderr; data goes to stdout or --out.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import SheetReaderError
from .options import EngineOptions

_SIZE_SUFFIXES = {"": 1, "B": 1, "KB": 1024, "MB": 1024**2, "GB": 1024**3}


def parse_size(text: str) -> int:
    raw = text.strip().upper().replace(" ", "")
    for suffix in ("GB", "MB", "KB", "B", ""):
        if raw.endswith(suffix):
            try:
                return int(float(raw[: len(raw) - len(suffix)] or "0") * _SIZE_SUFFIXES[suffix])
            except ValueError:
                break
    raise argparse.ArgumentTypeError(f"not a size: {text!r}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _sheet_selector(text):
    try:
        return int(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sheetreader", description="Parallel worksheet loader")
    sub = p.add_subparsers(dest="command", required=True)

    def engine_flags(sp):
        sp.add_argument("--sheet", type=_sheet_selector, default=None,
                        help="sheet name or 1-based index (default: first)")
        sp.add_argument("--mode", choices=["consecutive", "interleaved", "parallel-deflate"],
                        default="consecutive")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--parser-threads", type=int, default=None)
        sp.add_argument("--ring-elements", type=int, default=None)
        sp.add_argument("--ring-element-size", type=parse_size, default=None)
        sp.add_argument("--strings", choices=["sequential", "parallel"], default=None)
        sp.add_argument("--headers", action="store_true",
                        help="treat row 1 as column names")
        sp.add_argument("--no-dates", action="store_true",
                        help="disable date detection from the styles part")
        sp.add_argument("--verify", action="store_true",
                        help="verify entry CRCs and declared sizes")
        sp.add_argument("--fallback", action=argparse.BooleanOptionalAction, default=True,
                        help="retry with interleaved mode when consecutive runs out of memory")
        sp.add_argument("--sidecar", default=None,
                        help="boundary index path (parallel-deflate mode)")

    sp = sub.add_parser("parse", help="parse a sheet and emit CSV or a summary")
    sp.add_argument("file")
    engine_flags(sp)
    sp.add_argument("--output", choices=["csv", "summary"], default="csv")
    sp.add_argument("--emit-types-line", action="store_true",
                    help="prepend a #types,... line to CSV output")
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("info", help="sheet names, dimensions and string counts")
    sp.add_argument("file")
    sp.add_argument("--json", action="store_true")

    sp = sub.add_parser("gen", help="generate a synthetic workbook with ground truth")
    sp.add_argument("--out", required=True)
    sp.add_argument("--rows", type=int, default=1000)
    sp.add_argument("--cols", type=int, default=100)
    sp.add_argument("--kind", choices=["numeric", "mixed", "text"], default="numeric")
    sp.add_argument("--blank", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-r-attrs", action="store_true")
    sp.add_argument("--no-dimension", action="store_true")
    sp.add_argument("--strings", choices=["shared", "inline"], default="shared")
    sp.add_argument("--compresslevel", type=int, default=6)
    sp.add_argument("--truth", default=None, help="also write the ground-truth CSV here")
    sp.add_argument("--spec-json", default=None, help="full GenSpec as a JSON file (overrides flags)")

    sp = sub.add_parser("bench", help="run a benchmark matrix in child processes")
    sp.add_argument("--matrix", required=True, help="JSON file: list of config objects")
    sp.add_argument("--out", required=True)
    sp.add_argument("--repeat", type=int, default=5)
    sp.add_argument("--sample-ms", type=int, default=50)
    sp.add_argument("--caches-cleared", action="store_true",
                    help="record that OS caches were dropped manually before the run")

    sp = sub.add_parser("repack", help="recompress a worksheet with boundary resets")
    sp.add_argument("file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--entry", default=None, help="archive path (default: first sheet)")
    sp.add_argument("--boundary-interval", type=parse_size, default=None)

    return p


def _options_from_args(args) -> EngineOptions:
    kw = {}
    if args.threads is not None:
        kw["threads"] = args.threads
    if args.parser_threads is not None:
        kw["parser_threads"] = args.parser_threads
    if args.ring_elements is not None:
        kw["ring_elements"] = args.ring_elements
    if args.ring_element_size is not None:
        kw["ring_element_size"] = args.ring_element_size
    if args.strings is not None:
        kw["strings_mode"] = args.strings
    if args.headers:
        kw["headers"] = True
    if args.no_dates:
        kw["detect_dates"] = False
    if args.verify:
        kw["verify"] = True
    return EngineOptions(**kw)


def _parse_frame(args):
    from .consecutive import parse_consecutive
    from .interleaved import parse_interleaved
    from .pdeflate import BoundaryIndex, load_index, parse_parallel_decompress

    opts = _options_from_args(args)
    if args.mode == "interleaved":
        return parse_interleaved(args.file, args.sheet, opts)
    if args.mode == "parallel-deflate":
        index = None
        if args.sidecar:
            with open(args.sidecar, encoding="utf-8") as fh:
                index = BoundaryIndex.from_json(fh.read())
        return parse_parallel_decompress(args.file, index, args.sheet, opts)
    try:
        return parse_consecutive(args.file, args.sheet, opts)
    except MemoryError:
        if not args.fallback:
            print(
                "sheetreader: the decompressed worksheet does not fit in memory; "
                "retry with --mode interleaved",
                file=sys.stderr,
            )
            raise
        print("sheetreader: consecutive mode ran out of memory; retrying interleaved",
              file=sys.stderr)
        return parse_interleaved(args.file, args.sheet, opts)


def _cmd_parse(args) -> int:
    frame = _parse_frame(args)
    out = open(args.out, "wb") if args.out else sys.stdout.buffer
    try:
        if args.output == "csv":
            frame.to_csv(out, types_line=args.emit_types_line)
        else:
            out.write(frame.summary().encode())
    finally:
        if args.out:
            out.close()
        else:
            out.flush()
    return 0


def _cmd_info(args) -> int:
    from .container import open_archive
    from .metadata import probe_dimension, probe_sst_count, read_workbook

    with open_archive(args.file) as archive:
        meta = read_workbook(archive)
        sheets = []
        for ref in meta.sheets:
            dim = probe_dimension(archive, ref.part_path)
            sheets.append(
                {
                    "name": ref.display_name,
                    "path": ref.part_path,
                    "rows": dim.rows if dim else None,
                    "cols": dim.cols if dim else None,
                }
            )
        sst_count = (
            probe_sst_count(archive, meta.shared_strings_path)
            if meta.shared_strings_path
            else None
        )
    if args.json:
        print(json.dumps({"sheets": sheets, "shared_strings": sst_count}))
        return 0
    for s in sheets:
        extent = f"{s['rows']}x{s['cols']}" if s["rows"] else "unknown extent"
        print(f"sheet {s['name']!r} ({s['path']}): {extent}")
    print(f"shared strings: {sst_count if sst_count is not None else 'none'}")
    return 0


def _cmd_gen(args) -> int:
    from .generate import ColumnSpec, GenSpec, generate_xlsx

    if args.spec_json:
        with open(args.spec_json, encoding="utf-8") as fh:
            raw = json.load(fh)
        spec = GenSpec(
            rows=raw["rows"],
            columns=tuple(ColumnSpec(**c) for c in raw["columns"]),
            emit_r_attributes=raw.get("emit_r_attributes", True),
            emit_dimension=raw.get("emit_dimension", True),
            strings_mode=raw.get("strings_mode", "shared"),
            seed=raw.get("seed", 0),
            compresslevel=raw.get("compresslevel", 6),
        )
    else:
        common = dict(
            seed=args.seed,
            emit_r_attributes=not args.no_r_attrs,
            emit_dimension=not args.no_dimension,
            strings_mode=args.strings,
            compresslevel=args.compresslevel,
        )
        if args.kind == "numeric":
            spec = GenSpec.numeric(args.rows, args.cols, blank=args.blank, **common)
        elif args.kind == "mixed":
            spec = GenSpec.mixed(args.rows, blank=args.blank, **common)
        else:
            spec = GenSpec.all_text(args.rows, args.cols, blank=args.blank, **common)
    truth = generate_xlsx(spec, args.out)
    if args.truth:
        with open(args.truth, "wb") as fh:
            fh.write(truth.csv)
    print(f"wrote {args.out}: {truth.rows} rows x {truth.cols} cols", file=sys.stderr)
    return 0


def _cmd_bench(args) -> int:
    from .bench import BenchConfig, emit_report, run_benchmark

    with open(args.matrix, encoding="utf-8") as fh:
        raw = json.load(fh)
    configs = [BenchConfig(**entry) for entry in raw]
    report = run_benchmark(configs, repeat=args.repeat, sample_ms=args.sample_ms,
                           caches_cleared=args.caches_cleared)
    with open(args.out, "wb") as fh:
        emit_report(report, fh)
    print(f"wrote {args.out} ({len(report.rows)} rows)", file=sys.stderr)
    return 0


def _cmd_repack(args) -> int:
    from .pdeflate import DEFAULT_INTERVAL, repack_entry

    interval = args.boundary_interval or DEFAULT_INTERVAL
    index = repack_entry(args.file, args.out, name=args.entry, interval=interval)
    print(
        f"wrote {args.out} (+{len(index.boundaries)} boundaries in sidecar)",
        file=sys.stderr,
    )
    return 0


_COMMANDS = {
    "parse": _cmd_parse,
    "info": _cmd_info,
    "gen": _cmd_gen,
    "bench": _cmd_bench,
    "repack": _cmd_repack,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    try:
        return _COMMANDS[args.command](args)
    except SheetReaderError as exc:
        print(f"sheetreader: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"sheetreader: {exc}", file=sys.stderr)
        return 2
    except MemoryError:
        print("sheetreader: out of memory", file=sys.stderr)
        return 2
    except BrokenPipeError:
        # downstream closed the pipe (e.g. | head); not an error
        import os

        try:
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        except OSError:
            pass
        return 0


if __name__ == "__main__":
    sys.exit(main())
