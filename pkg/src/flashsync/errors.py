"""Exception hierarchy shared by all flashsync modules."""

from __future__ import annotations


class FlashSyncError(Exception):
    """Base class for every error raised by flashsync."""


class DomainError(FlashSyncError, ValueError):
    """An argument lies outside the domain of an operation."""


class ParseError(FlashSyncError):
    """Input data could not be decoded."""


class Mp4ParseError(ParseError):
    """Malformed or incomplete ISO-BMFF data.

    Attributes:
        box_path: slash separated path of the offending box, e.g. ``moov/trak/mdia/mdhd``
        offset: absolute byte offset where the problem was found
    """

    def __init__(self, message: str, box_path: str, offset: int) -> None:
        super().__init__(f"{message} (box {box_path or '<root>'} at byte {offset})")
        self.reason = message
        self.box_path = box_path
        self.offset = offset


class RtpParseError(ParseError):
    """RTP header records are inconsistent.

    Attributes:
        index: index of the offending record
    """

    def __init__(self, message: str, index: int) -> None:
        super().__init__(f"{message} (record {index})")
        self.index = index


class CsvFormatError(ParseError):
    """A CSV record is malformed or out of order.

    Attributes:
        line: 1-based line number in the source text
    """

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class NumericalError(FlashSyncError):
    """The synchronization problem cannot be solved numerically."""


class SingularSystemError(NumericalError):
    """Least-squares system is rank deficient.

    Attributes:
        directions: names of the unknowns that the data cannot determine
    """

    def __init__(self, message: str, directions: tuple[str, ...] = ()) -> None:
        super().__init__(message)
        self.directions = directions


class MatchingError(NumericalError):
    """No usable event correspondences between two cameras."""


class AmbiguousOffsetError(MatchingError):
    """The coarse offset between two cameras cannot be determined automatically."""
