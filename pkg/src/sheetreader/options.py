"""Engine configuration shared by both parsing modes and the CLI."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

DEFAULT_THREADS = 8
DEFAULT_PARSER_THREADS = 2
DEFAULT_RING_ELEMENTS = 1024
DEFAULT_RING_ELEMENT_SIZE = 32 * 1024

THREADS_ENV_VAR = "SHEETREADER_THREADS"


def _env_threads(default: int) -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if not raw:
        return default
    try:
        n = int(raw)
    except ValueError:
        return default
    return n if n >= 1 else default


@dataclass
class EngineOptions:
    # consecutive: number of chunk-parsing threads
    threads: int = field(default_factory=lambda: _env_threads(DEFAULT_THREADS))
    # interleaved: number of parser threads fed by the one decompression thread
    parser_threads: int = DEFAULT_PARSER_THREADS
    ring_elements: int = DEFAULT_RING_ELEMENTS
    ring_element_size: int = DEFAULT_RING_ELEMENT_SIZE
    # "parallel": shared strings parsed in their own worker alongside the
    # worksheet; "sequential": parsed after the worksheet completes.
    strings_mode: str = "parallel"
    headers: bool = False
    # date tagging from the styles part (built-in date number formats)
    detect_dates: bool = True
    verify: bool = False

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.parser_threads < 1:
            raise ValueError("parser_threads must be >= 1")
        if self.ring_elements < 2:
            raise ValueError("ring needs at least two elements")
        if self.ring_element_size < 1:
            raise ValueError("ring_element_size must be positive")
        if self.strings_mode not in ("sequential", "parallel"):
            raise ValueError("strings_mode must be 'sequential' or 'parallel'")
