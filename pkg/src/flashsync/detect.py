"""Detection of abrupt lighting changes in rolling-shutter frames.

Each frame is reduced to a profile of per-row median intensities. Profiles
of consecutive frames are subtracted; a frame whose largest difference
exceeds a threshold holds a lighting change, and the row where the
difference first reaches half its maximum is the leading edge.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence, TextIO

import numpy as np

from .errors import CsvFormatError, DomainError
from .timebase import SensorGeometry

__all__ = [
    "RowProfile",
    "DiffProfile",
    "EventObservation",
    "median_row_profile",
    "median_row_profiles",
    "diff_profiles",
    "consecutive_diffs",
    "locate_edge",
    "locate_trailing_edge",
    "auto_threshold",
    "detect_events",
    "is_boundary_row",
    "reject_boundary_events",
    "read_raw_frames",
    "load_profile_csv",
    "format_profile_csv",
    "load_events_csv",
    "format_events_csv",
]

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 40.0
DEFAULT_MARGIN_FRACTION = 0.02
AUTO_THRESHOLD_MADS = 8.0

Polarity = Literal["leading", "trailing"]


@dataclass(frozen=True, eq=False)
class RowProfile:
    """Median intensity of every active row of one frame."""

    frame: int
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class DiffProfile:
    """Signed row-wise difference between a frame's profile and its predecessor's."""

    frame: int
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class EventObservation:
    """A lighting transition edge localized to (frame, row) in one camera.

    Detected events have integer rows; simulated ground truth keeps the exact
    fractional row.
    """

    camera_id: str
    frame: int
    row: float
    magnitude: float
    polarity: Polarity = "leading"


def median_row_profile(frame_pixels, frame: int = 0) -> RowProfile:
    """Lower median of each row of an H x W grayscale frame.

    For even widths the order statistic at index ``(W - 1) // 2`` is used, so
    integer inputs give integer medians.
    """
    pixels = np.asarray(frame_pixels)
    if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
        raise DomainError(f"expected a non-empty H x W matrix, got shape {pixels.shape}")
    return RowProfile(frame, median_row_profiles(pixels[np.newaxis])[0])


def median_row_profiles(frames) -> np.ndarray:
    """Vectorized :func:`median_row_profile` over an N x H x W stack."""
    stack = np.asarray(frames)
    if stack.ndim != 3 or 0 in stack.shape[1:]:
        raise DomainError(f"expected an N x H x W stack, got shape {stack.shape}")
    k = (stack.shape[2] - 1) // 2
    return np.partition(stack, k, axis=2)[:, :, k]


def diff_profiles(current: RowProfile, previous: RowProfile) -> DiffProfile:
    if len(current) != len(previous):
        raise DomainError(
            f"profile lengths differ: {len(current)} (frame {current.frame}) "
            f"vs {len(previous)} (frame {previous.frame})"
        )
    values = np.asarray(current.values, dtype=np.float64) - np.asarray(
        previous.values, dtype=np.float64
    )
    return DiffProfile(current.frame, values)


def consecutive_diffs(profiles: Sequence[RowProfile]) -> list[DiffProfile]:
    """Differences of profiles whose frame indices are adjacent.

    Profiles are sorted by frame; a profile without its predecessor yields
    no difference.
    """
    ordered = sorted(profiles, key=lambda p: p.frame)
    return [
        diff_profiles(cur, prev)
        for prev, cur in zip(ordered, ordered[1:])
        if cur.frame == prev.frame + 1
    ]


def locate_edge(diff: DiffProfile) -> int:
    """First row where the difference reaches half of its maximum.

    Raises:
        DomainError: the profile has no positive value
    """
    values = np.asarray(diff.values, dtype=np.float64)
    if values.size == 0 or not values.max() > 0:
        raise DomainError(f"frame {diff.frame}: difference profile has no positive peak")
    return int(np.argmax(values >= 0.5 * values.max()))


def locate_trailing_edge(diff: DiffProfile) -> int:
    """Last row where the difference is still at or above half its maximum."""
    values = np.asarray(diff.values, dtype=np.float64)
    if values.size == 0 or not values.max() > 0:
        raise DomainError(f"frame {diff.frame}: difference profile has no positive peak")
    above = values >= 0.5 * values.max()
    return int(values.size - 1 - np.argmax(above[::-1]))


def auto_threshold(diffs: Sequence[DiffProfile]) -> float:
    """Robust threshold: median + 8 MAD of the per-frame difference maxima.

    The MAD is floored at one intensity unit so that perfectly static input
    does not collapse the threshold onto the median.
    """
    if not diffs:
        return DEFAULT_THRESHOLD
    maxima = np.array([np.max(d.values) for d in diffs], dtype=np.float64)
    med = float(np.median(maxima))
    mad = float(np.median(np.abs(maxima - med)))
    return med + AUTO_THRESHOLD_MADS * max(mad, 1.0)


def detect_events(
    diffs: Iterable[DiffProfile],
    threshold: float | str = DEFAULT_THRESHOLD,
    camera_id: str = "",
    include_trailing: bool = False,
) -> list[EventObservation]:
    """One leading-edge event per frame whose difference maximum exceeds ``threshold``.

    ``threshold="auto"`` uses :func:`auto_threshold`. With ``include_trailing``
    the end of each bright band is reported as a separate trailing event;
    trailing events are diagnostics and are never matched.
    """
    diffs = list(diffs)
    if threshold == "auto":
        threshold = auto_threshold(diffs)
        logger.info("camera %s: automatic threshold %.2f", camera_id, threshold)
    threshold = float(threshold)
    if not threshold > 0:
        raise DomainError(f"threshold must be positive, got {threshold}")
    events = []
    for diff in diffs:
        peak = float(np.max(diff.values))
        if not peak > threshold:
            continue
        events.append(EventObservation(camera_id, diff.frame, locate_edge(diff), peak, "leading"))
        if include_trailing:
            events.append(
                EventObservation(
                    camera_id, diff.frame, locate_trailing_edge(diff), peak, "trailing"
                )
            )
    return events


def is_boundary_row(row: float, rows_active: int, margin: int = 0) -> bool:
    """True for edges at or beyond the first/last ``margin`` rows of the image.

    Edges on the outermost rows are treated as boundary crossings even at
    margin 0: a flash starting there may have begun in the previous frame or
    during the hidden rows.
    """
    return row <= margin or row >= rows_active - 1 - margin


def reject_boundary_events(
    events: Iterable[EventObservation],
    geometry: SensorGeometry | int,
    margin_fraction: float = DEFAULT_MARGIN_FRACTION,
    margin_rows: int | None = None,
) -> list[EventObservation]:
    """Drop events whose edge lies near the top or bottom of the frame.

    Such flashes span two frames and their edge row is unreliable.
    ``margin_rows`` overrides ``margin_fraction * rows_active``.
    """
    rows_active = geometry.rows_active if isinstance(geometry, SensorGeometry) else int(geometry)
    margin = margin_rows if margin_rows is not None else int(margin_fraction * rows_active)
    if margin < 0:
        raise DomainError(f"margin must be non-negative, got {margin}")
    return [e for e in events if not is_boundary_row(e.row, rows_active, margin)]


def read_raw_frames(path: str | Path, height: int, width: int) -> np.ndarray:
    """Load a file of concatenated 8-bit H x W frames as an N x H x W array."""
    data = np.fromfile(path, dtype=np.uint8)
    frame_size = height * width
    if frame_size <= 0:
        raise DomainError(f"invalid frame size {height} x {width}")
    if data.size % frame_size:
        raise DomainError(
            f"{path}: {data.size} bytes is not a whole number of {height}x{width} frames"
        )
    return data.reshape(-1, height, width)


PROFILE_HEADER = ("frame", "row", "median_intensity")
EVENTS_HEADER = ("camera", "frame", "row", "magnitude", "polarity")


def _records(text: str, header: tuple[str, ...]):
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in next(csv.reader([line]))]
        if tuple(f.lower() for f in fields) == header:
            continue
        if len(fields) != len(header):
            raise CsvFormatError(f"expected {len(header)} fields, got {len(fields)}", lineno)
        yield lineno, fields


def load_profile_csv(source: str | TextIO) -> list[RowProfile]:
    """Read ``frame,row,median_intensity`` records into per-frame profiles.

    Every listed frame must cover rows ``0..H-1`` for a common height ``H``.
    """
    text = source if isinstance(source, str) else source.read()
    rows_by_frame: dict[int, dict[int, float]] = {}
    for lineno, fields in _records(text, PROFILE_HEADER):
        try:
            frame, row, value = int(fields[0]), int(fields[1]), float(fields[2])
        except ValueError:
            raise CsvFormatError(f"cannot parse record {fields!r}", lineno) from None
        if frame < 0 or row < 0:
            raise CsvFormatError("negative frame or row index", lineno)
        rows = rows_by_frame.setdefault(frame, {})
        if row in rows:
            raise CsvFormatError(f"duplicate row {row} in frame {frame}", lineno)
        rows[row] = value
    profiles = []
    height = None
    for frame in sorted(rows_by_frame):
        rows = rows_by_frame[frame]
        n = max(rows) + 1
        if len(rows) != n:
            raise CsvFormatError(f"frame {frame} has missing rows", 0)
        if height is None:
            height = n
        elif n != height:
            raise CsvFormatError(f"frame {frame} has {n} rows, expected {height}", 0)
        profiles.append(RowProfile(frame, np.array([rows[r] for r in range(n)])))
    return profiles


def _fmt_number(value: float) -> str:
    value = float(value)
    return str(int(value)) if value.is_integer() else repr(value)


def format_profile_csv(profiles: Iterable[RowProfile]) -> str:
    buf = io.StringIO()
    buf.write(",".join(PROFILE_HEADER) + "\n")
    for profile in profiles:
        for row, value in enumerate(profile.values):
            buf.write(f"{profile.frame},{row},{_fmt_number(value)}\n")
    return buf.getvalue()


def load_events_csv(source: str | TextIO) -> list[EventObservation]:
    text = source if isinstance(source, str) else source.read()
    events = []
    for lineno, fields in _records(text, EVENTS_HEADER):
        try:
            frame = int(fields[1])
            row = float(fields[2])
            magnitude = float(fields[3])
        except ValueError:
            raise CsvFormatError(f"cannot parse record {fields!r}", lineno) from None
        if fields[4] not in ("leading", "trailing"):
            raise CsvFormatError(f"unknown polarity {fields[4]!r}", lineno)
        if row.is_integer():
            row = int(row)
        events.append(EventObservation(fields[0], frame, row, magnitude, fields[4]))
    return events


def format_events_csv(events: Iterable[EventObservation]) -> str:
    buf = io.StringIO()
    buf.write(",".join(EVENTS_HEADER) + "\n")
    for e in events:
        buf.write(
            f"{e.camera_id},{e.frame},{_fmt_number(e.row)},"
            f"{_fmt_number(e.magnitude)},{e.polarity}\n"
        )
    return buf.getvalue()
