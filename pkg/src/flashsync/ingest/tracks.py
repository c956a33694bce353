"""Frame timestamp tracks, the timestamp CSV format and dropped-frame analysis."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from ..errors import CsvFormatError, DomainError

__all__ = [
    "TimestampTrack",
    "FrameGap",
    "FrameGapReport",
    "ticks_to_ms",
    "ms_to_ticks",
    "load_timestamp_csv",
    "format_timestamp_csv",
    "detect_dropped_frames",
    "dropped_frame_indices",
]

CSV_HEADER = ("frame", "timestamp_ms")


def ticks_to_ms(ticks, timescale: int):
    """Convert container ticks to milliseconds (scalar or array)."""
    return np.asarray(ticks, dtype=np.float64) * 1000.0 / timescale


def ms_to_ticks(ms, timescale: int) -> np.ndarray:
    """Convert milliseconds back to the nearest integer tick count."""
    return np.rint(np.asarray(ms, dtype=np.float64) * timescale / 1000.0).astype(np.int64)


@dataclass(frozen=True)
class TimestampTrack:
    """Acquisition timestamps of one camera's frames.

    Attributes:
        camera_id: camera name
        timescale: time units per second of ``timestamps``
        timestamps: per-frame timestamps in ``timescale`` units, strictly increasing
        nominal_frame_duration: declared or inferred frame duration in ms
    """

    camera_id: str
    timescale: int
    timestamps: tuple = field(default_factory=tuple)
    nominal_frame_duration: float | None = None

    def __post_init__(self) -> None:
        if isinstance(self.timescale, bool) or int(self.timescale) != self.timescale:
            raise DomainError(f"timescale must be an integer, got {self.timescale!r}")
        if self.timescale < 1:
            raise DomainError(f"timescale must be >= 1, got {self.timescale}")
        ts = tuple(self.timestamps)
        object.__setattr__(self, "timestamps", ts)
        for i in range(1, len(ts)):
            if not ts[i] > ts[i - 1]:
                raise DomainError(
                    f"timestamps must be strictly increasing: "
                    f"index {i} has {ts[i]} after {ts[i - 1]}"
                )
        if self.nominal_frame_duration is not None and not self.nominal_frame_duration > 0:
            raise DomainError("nominal_frame_duration must be positive")

    def __len__(self) -> int:
        return len(self.timestamps)

    def timestamps_ms(self) -> np.ndarray:
        return ticks_to_ms(self.timestamps, self.timescale)

    def frame_duration_ms(self) -> float:
        """Nominal frame duration, falling back to the median frame delta."""
        if self.nominal_frame_duration is not None:
            return self.nominal_frame_duration
        if len(self.timestamps) < 2:
            raise DomainError(
                f"track {self.camera_id!r} has no declared frame duration "
                "and too few frames to infer one"
            )
        return float(np.median(np.diff(self.timestamps_ms())))

    def timestamp_ms(self, frame: int) -> float:
        if not 0 <= frame < len(self.timestamps):
            raise DomainError(
                f"frame {frame} outside track {self.camera_id!r} "
                f"with {len(self.timestamps)} frames"
            )
        return float(ticks_to_ms(self.timestamps[frame], self.timescale))

    def with_camera_id(self, camera_id: str) -> TimestampTrack:
        return TimestampTrack(
            camera_id, self.timescale, self.timestamps, self.nominal_frame_duration
        )


def _strip_comments(text: str) -> Iterable[tuple[int, str]]:
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        yield lineno, stripped


def load_timestamp_csv(
    source: str | TextIO,
    camera_id: str = "",
    nominal_frame_duration: float | None = None,
) -> TimestampTrack:
    """Read ``frame,timestamp_ms`` records into a millisecond track.

    The header line is optional and ``#`` lines are comments. Frame indices
    must count up from 0 without holes: a dropped frame shows up as a
    larger timestamp step, not as a skipped index.

    Raises:
        CsvFormatError: malformed or non-increasing record, with its line number
    """
    text = source if isinstance(source, str) else source.read()
    timestamps: list[float] = []
    prev_line = 0
    for lineno, line in _strip_comments(text):
        fields = next(csv.reader([line]))
        fields = [f.strip() for f in fields]
        if not timestamps and tuple(f.lower() for f in fields) == CSV_HEADER:
            continue
        if len(fields) != 2:
            raise CsvFormatError(f"expected 2 fields, got {len(fields)}", lineno)
        try:
            frame = int(fields[0])
            value = float(fields[1])
        except ValueError:
            raise CsvFormatError(f"cannot parse record {line!r}", lineno) from None
        if not math.isfinite(value):
            raise CsvFormatError(f"non-finite timestamp {fields[1]!r}", lineno)
        if frame != len(timestamps):
            raise CsvFormatError(
                f"frame index {frame} out of order, expected {len(timestamps)}", lineno
            )
        if timestamps and not value > timestamps[-1]:
            raise CsvFormatError(
                f"timestamp {value} not greater than {timestamps[-1]} on line {prev_line}",
                lineno,
            )
        timestamps.append(value)
        prev_line = lineno
    return TimestampTrack(camera_id, 1000, tuple(timestamps), nominal_frame_duration)


def format_timestamp_csv(track: TimestampTrack) -> str:
    """Render a track as timestamp CSV text (header included)."""
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for i, t in enumerate(track.timestamps_ms()):
        buf.write(f"{i},{float(t)!r}\n")
    return buf.getvalue()


@dataclass(frozen=True)
class FrameGap:
    """Frames missing between two consecutive timestamps.

    Attributes:
        frame_before: index of the last frame before the gap
        missing: number of frames that were dropped
        duration_ms: timestamp step across the gap
    """

    frame_before: int
    missing: int
    duration_ms: float


@dataclass(frozen=True)
class FrameGapReport:
    gaps: tuple[FrameGap, ...] = ()

    def __len__(self) -> int:
        return len(self.gaps)

    @property
    def total_missing(self) -> int:
        return sum(g.missing for g in self.gaps)


def detect_dropped_frames(
    track: TimestampTrack, nominal_fps: float, slack: float = 0.25
) -> FrameGapReport:
    """Find timestamp steps longer than ``(1 + slack)`` nominal frame durations."""
    if not nominal_fps > 0:
        raise DomainError(f"nominal_fps must be positive, got {nominal_fps}")
    if not 0.0 <= slack < 0.5:
        raise DomainError(f"slack must lie in [0, 0.5), got {slack}")
    if len(track) < 2:
        return FrameGapReport()
    nominal = 1000.0 / nominal_fps
    deltas = np.diff(track.timestamps_ms())
    gaps = []
    for i in np.flatnonzero(deltas > (1.0 + slack) * nominal):
        delta = float(deltas[i])
        missing = int(round(delta / nominal)) - 1
        # a step just over the slack can still round to one frame
        gaps.append(FrameGap(int(i), max(missing, 1), delta))
    return FrameGapReport(tuple(gaps))


def dropped_frame_indices(report: FrameGapReport, kept_indices: Sequence[int]) -> list[int]:
    """Expand a gap report into nominal indices of the missing frames.

    ``kept_indices[k]`` is the nominal (drop-free) index of track frame ``k``.
    """
    out = []
    for gap in report.gaps:
        base = kept_indices[gap.frame_before]
        out.extend(range(base + 1, base + 1 + gap.missing))
    return out
