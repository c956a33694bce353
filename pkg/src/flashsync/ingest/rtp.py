"""Frame timestamps from RTP header records.

Every packet of a video frame carries the same 32-bit RTP timestamp, ticking
at 90 kHz. The first packet with a new timestamp starts a frame. Timestamps
wrap modulo 2**32; steps are unwrapped as signed 32-bit differences, so a
backwards step is detected instead of being mistaken for a wrap.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from ..errors import CsvFormatError, RtpParseError
from .tracks import TimestampTrack

__all__ = [
    "RTP_VIDEO_CLOCK",
    "RtpRecord",
    "unwrap_rtp",
    "parse_rtp_timestamps",
    "load_rtp_records_csv",
]

RTP_VIDEO_CLOCK = 90_000
_MOD = 1 << 32
_HALF = 1 << 31


@dataclass(frozen=True)
class RtpRecord:
    sequence_number: int
    timestamp: int
    marker: bool = False


def unwrap_rtp(raw: Sequence[int]) -> list[int]:
    """Unwrap 32-bit timestamps into a monotone integer sequence.

    Consecutive values may repeat (packets of one frame).

    Raises:
        RtpParseError: a step goes backwards once interpreted modulo 2**32
    """
    out: list[int] = []
    for i, value in enumerate(raw):
        if not 0 <= value < _MOD:
            raise RtpParseError(f"timestamp {value} is not a 32-bit value", i)
        if not out:
            out.append(int(value))
            continue
        step = (value - out[-1]) % _MOD
        if step >= _HALF:
            raise RtpParseError(
                f"timestamp goes backwards by {_MOD - step} ticks after unwrapping", i
            )
        out.append(out[-1] + step)
    return out


def parse_rtp_timestamps(
    records: Iterable[RtpRecord | tuple | int], camera_id: str = ""
) -> TimestampTrack:
    """One 90 kHz timestamp per frame, taken from the frame's first packet.

    ``records`` may be :class:`RtpRecord` objects, ``(seq, timestamp, marker)``
    tuples or bare timestamps. The returned ticks keep the first raw value as
    origin; later values continue past 2**32 instead of wrapping.

    Raises:
        RtpParseError: non-monotonic sequence after unwrapping, with record index
    """
    raw = []
    for rec in records:
        if isinstance(rec, RtpRecord):
            raw.append(rec.timestamp)
        elif isinstance(rec, tuple):
            raw.append(int(rec[1]))
        else:
            raw.append(int(rec))
    unwrapped = unwrap_rtp(raw)
    frames = []
    for value in unwrapped:
        if not frames or value != frames[-1]:
            frames.append(value)
    return TimestampTrack(camera_id, RTP_VIDEO_CLOCK, tuple(frames))


def load_rtp_records_csv(source: str | TextIO) -> list[RtpRecord]:
    """Read ``sequence_number,timestamp_ticks,marker_bit`` records.

    A header line and ``#`` comment lines are allowed.
    """
    text = source if isinstance(source, str) else source.read()
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in next(csv.reader([line]))]
        if not records and fields and fields[0].lower() == "sequence_number":
            continue
        if len(fields) != 3:
            raise CsvFormatError(f"expected 3 fields, got {len(fields)}", lineno)
        try:
            seq, ts, marker = int(fields[0]), int(fields[1]), int(fields[2])
        except ValueError:
            raise CsvFormatError(f"cannot parse record {line!r}", lineno) from None
        if marker not in (0, 1):
            raise CsvFormatError(f"marker bit must be 0 or 1, got {marker}", lineno)
        records.append(RtpRecord(seq, ts, bool(marker)))
    return records
