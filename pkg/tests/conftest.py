from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import pytest

from sheetreader import EngineOptions, GenSpec, generate_xlsx
from sheetreader.frame import K_BOOL, K_ERR, K_FLT, K_INT, K_NULL, K_SST, K_TEXT
from sheetreader.scanner import warm_up


@pytest.fixture(scope="session", autouse=True)
def _warm_kernel():
    warm_up()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    return tmp_path_factory.mktemp("corpus")


@pytest.fixture(scope="session")
def small_mixed(corpus_dir):
    spec = GenSpec.mixed(200, blank=0.1, seed=7)
    path = corpus_dir / "mixed200.xlsx"
    truth = generate_xlsx(spec, str(path))
    return str(path), truth


@pytest.fixture(scope="session")
def small_numeric(corpus_dir):
    spec = GenSpec.numeric(300, 20, seed=11)
    path = corpus_dir / "numeric300.xlsx"
    truth = generate_xlsx(spec, str(path))
    return str(path), truth


@pytest.fixture(scope="session")
def small_norefs(corpus_dir):
    spec = GenSpec.mixed(120, blank=0.2, seed=3, emit_r_attributes=False, emit_dimension=False)
    path = corpus_dir / "norefs120.xlsx"
    truth = generate_xlsx(spec, str(path))
    return str(path), truth


_EPOCH_DAYS = np.datetime64("1899-12-30")


def assert_frame_matches(frame, truth, label=""):
    """Frame equality against generator ground truth.

    Doubles compare bit-exactly.  When the file carries no dimension
    header, trailing all-blank rows/columns are undiscoverable from the
    data, so the frame may be narrower; the missing tail must then be
    all-blank in the truth.
    """
    rows, cols = truth.rows, truth.cols
    assert frame.n_rows <= rows and frame.n_cols <= cols, (label, frame.n_rows, frame.n_cols)
    if truth.spec.emit_dimension and rows > 0 and cols > 0:
        # (a zero-row sheet has no dimension element to declare an extent)
        assert frame.n_rows == rows and frame.n_cols == cols, (label, frame.n_rows, frame.n_cols)
    for c in range(frame.n_cols, cols):
        assert all(v is None for v in truth.columns[c]), (label, "lost non-blank column", c)
    for r in range(frame.n_rows, rows):
        assert all(truth.columns[c][r] is None for c in range(cols)), (label, "lost non-blank row", r)

    kind = frame.kind
    data = frame.data
    for c in range(frame.n_cols):
        values = truth.columns[c]
        tag = truth.column_tags[c]
        exp_null = np.array([v is None for v in values[: frame.n_rows]])
        got_kind = kind[: frame.n_rows, c] if c < kind.shape[1] else np.zeros(frame.n_rows, dtype=np.int8)
        got_null = got_kind == K_NULL
        assert np.array_equal(got_null, exp_null), (label, "null mask", c)
        idx = np.nonzero(~exp_null)[0]
        if idx.shape[0] == 0:
            continue
        got = data[: frame.n_rows, c][idx]
        if tag == "double":
            exp = np.array([values[i] for i in idx], dtype=np.float64)
            assert np.array_equal(got.view(np.uint64), exp.view(np.uint64)), (label, "doubles", c)
            assert np.all(got_kind[idx] == K_FLT), (label, "double kind", c)
        elif tag == "integer":
            exp = np.array([values[i] for i in idx], dtype=np.float64)
            assert np.array_equal(got, exp), (label, "integers", c)
            assert np.all(got_kind[idx] == K_INT), (label, "int kind", c)
        elif tag == "boolean":
            exp = np.array([1.0 if values[i] else 0.0 for i in idx])
            assert np.array_equal(got, exp), (label, "booleans", c)
            assert np.all(got_kind[idx] == K_BOOL), (label, "bool kind", c)
        elif tag == "date":
            exp = np.array([(values[i] - truth_epoch()).days for i in idx], dtype=np.float64)
            assert np.array_equal(got, exp), (label, "dates", c)
        else:  # string
            for i in idx:
                got_v = frame.cell_value(int(i) + 1, c)
                assert got_v == values[i], (label, "string", c, i, got_v, values[i])


def truth_epoch():
    from datetime import date

    return date(1899, 12, 30)


def csv_of(frame, **kw) -> bytes:
    out = io.BytesIO()
    frame.to_csv(out, **kw)
    return out.getvalue()


ALL_ENGINE_CONFIGS = [
    ("consecutive", EngineOptions(threads=1, strings_mode="sequential")),
    ("consecutive", EngineOptions(threads=2)),
    ("consecutive", EngineOptions(threads=8)),
    ("interleaved", EngineOptions(parser_threads=1, ring_elements=2, ring_element_size=4096)),
    ("interleaved", EngineOptions(parser_threads=2)),
    ("interleaved", EngineOptions(parser_threads=4, ring_elements=8, ring_element_size=4096)),
]
