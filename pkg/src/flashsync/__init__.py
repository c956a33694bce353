"""Sub-millisecond synchronization of rolling-shutter cameras from flash events."""

from .detect import EventObservation, RowProfile, detect_events, reject_boundary_events
from .errors import (
    AmbiguousOffsetError,
    DomainError,
    FlashSyncError,
    MatchingError,
    NumericalError,
    ParseError,
    SingularSystemError,
)
from .ingest import TimestampTrack, load_timestamp_csv, parse_mp4_timestamps, parse_rtp_timestamps
from .syncsolve import SyncSolution, match_events, solve_joint, solve_pairwise, synchronize
from .timebase import SensorGeometry, SyncParams, apply_sync, row_period, sub_frame_time

__version__ = "0.1.0"

__all__ = [
    "AmbiguousOffsetError",
    "DomainError",
    "EventObservation",
    "FlashSyncError",
    "MatchingError",
    "NumericalError",
    "ParseError",
    "RowProfile",
    "SensorGeometry",
    "SingularSystemError",
    "SyncParams",
    "SyncSolution",
    "TimestampTrack",
    "apply_sync",
    "detect_events",
    "load_timestamp_csv",
    "match_events",
    "parse_mp4_timestamps",
    "parse_rtp_timestamps",
    "reject_boundary_events",
    "row_period",
    "solve_joint",
    "solve_pairwise",
    "sub_frame_time",
    "synchronize",
]
