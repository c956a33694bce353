"""Frame timestamp extraction: MP4 sample tables, RTP headers and CSV sidecars."""

from .mp4 import Mp4VideoTrack, parse_mp4_timestamps, read_video_track
from .rtp import RTP_VIDEO_CLOCK, RtpRecord, load_rtp_records_csv, parse_rtp_timestamps, unwrap_rtp
from .tracks import (
    FrameGap,
    FrameGapReport,
    TimestampTrack,
    detect_dropped_frames,
    dropped_frame_indices,
    format_timestamp_csv,
    load_timestamp_csv,
    ms_to_ticks,
    ticks_to_ms,
)

__all__ = [
    "FrameGap",
    "FrameGapReport",
    "Mp4VideoTrack",
    "RTP_VIDEO_CLOCK",
    "RtpRecord",
    "TimestampTrack",
    "detect_dropped_frames",
    "dropped_frame_indices",
    "format_timestamp_csv",
    "load_rtp_records_csv",
    "load_timestamp_csv",
    "ms_to_ticks",
    "parse_mp4_timestamps",
    "parse_rtp_timestamps",
    "read_video_track",
    "ticks_to_ms",
    "unwrap_rtp",
]
