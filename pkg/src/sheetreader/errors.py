"""Exception taxonomy for the reader.

Every error raised by this package derives from SheetReaderError so callers
can catch one type at the CLI boundary.
"""


class SheetReaderError(Exception):
    pass


# --- container ---------------------------------------------------------

class NotAZip(SheetReaderError):
    """No end-of-central-directory signature in the trailing search window."""


class UnsupportedCompression(SheetReaderError):
    """Entry uses a compression method other than stored or deflate."""


class CorruptDirectory(SheetReaderError):
    """Central directory sizes or offsets fall outside the file."""


class NoSuchEntry(SheetReaderError, KeyError):
    pass


class InflateError(SheetReaderError):
    """Malformed Deflate stream."""


class SizeMismatch(SheetReaderError):
    """Decompressed length differs from the declared uncompressed size."""


class StreamExhausted(SheetReaderError):
    """stream_next called after the stream already finished."""


class CrcMismatch(SheetReaderError):
    """Entry payload fails its CRC-32 check (only under verify=True)."""


# --- metadata ----------------------------------------------------------

class MissingRels(SheetReaderError):
    pass


class MalformedRels(SheetReaderError):
    pass


class MalformedWorkbook(SheetReaderError):
    pass


class NoSuchSheet(SheetReaderError, KeyError):
    pass


# --- scanner -----------------------------------------------------------

class MalformedDocument(SheetReaderError):
    """Structurally impossible XML transition (e.g. </v> outside a value)."""


class MalformedRef(SheetReaderError):
    pass


class MalformedNumber(SheetReaderError):
    pass


class Overflow(SheetReaderError):
    """In-situ integer accumulation exceeded its domain."""


class NoAnchorFound(SheetReaderError):
    """A window contained no structural character to recover state from."""


# --- store -------------------------------------------------------------

class DanglingStringIndex(SheetReaderError):
    """A cell references a shared-string index beyond the table."""


# --- parallel deflate ---------------------------------------------------

class IndexMismatch(SheetReaderError):
    """Boundary sidecar does not match the archive entry it names."""
