"""Frame timestamps from ISO-BMFF (MP4) sample tables.

Only the boxes needed for timing are decoded::

    moov/trak/mdia/hdlr       handler type, to find the video track
    moov/trak/mdia/mdhd       media timescale
    moov/trak/mdia/minf/stbl/stts   run-length coded sample deltas

Edit lists and composition offsets are ignored: camera streams are stored in
capture order, so decode order is presentation order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

import numpy as np

from ..errors import Mp4ParseError
from .tracks import TimestampTrack

__all__ = ["Box", "Mp4VideoTrack", "iter_boxes", "read_video_track", "parse_mp4_timestamps"]

# refuse sample tables that would not fit in memory
MAX_SAMPLES = 10_000_000  # about two days at 60 fps


@dataclass(frozen=True)
class Box:
    type: str
    offset: int  # first byte of the header
    payload: int  # first byte after the header
    end: int
    path: str


@dataclass(frozen=True)
class Mp4VideoTrack:
    """Timing tables of one track.

    Attributes:
        track_index: position of the ``trak`` box inside ``moov``
        handler: four-character handler type (``vide`` for video)
        timescale: media timescale from ``mdhd``
        media_duration: duration field from ``mdhd`` in timescale units
        stts: ``(sample_count, sample_delta)`` entries
    """

    track_index: int
    handler: str
    timescale: int
    media_duration: int
    stts: tuple[tuple[int, int], ...]
    stts_offset: int = 0

    @property
    def sample_count(self) -> int:
        return sum(count for count, _ in self.stts)

    @property
    def total_duration(self) -> int:
        """Sum of all sample deltas, i.e. the end time of the last sample."""
        return sum(count * delta for count, delta in self.stts)


def iter_boxes(data: bytes, start: int, end: int, parent: str = "") -> Iterator[Box]:
    """Yield the boxes laid out back to back in ``data[start:end]``."""
    offset = start
    while offset < end:
        if end - offset < 8:
            raise Mp4ParseError("truncated box header", parent, offset)
        size, raw_type = struct.unpack_from(">I4s", data, offset)
        box_type = raw_type.decode("latin-1")
        path = f"{parent}/{box_type}" if parent else box_type
        header = 8
        if size == 1:
            if end - offset < 16:
                raise Mp4ParseError("truncated 64-bit box size", path, offset)
            (size,) = struct.unpack_from(">Q", data, offset + 8)
            header = 16
        elif size == 0:
            size = end - offset
        if size < header:
            raise Mp4ParseError(f"box size {size} smaller than its header", path, offset)
        if offset + size > end:
            raise Mp4ParseError(
                f"box of {size} bytes overruns its container by {offset + size - end} bytes",
                path,
                offset,
            )
        yield Box(box_type, offset, offset + header, offset + size, path)
        offset += size


def _child(data: bytes, box: Box, box_type: str) -> Box:
    for child in iter_boxes(data, box.payload, box.end, box.path):
        if child.type == box_type:
            return child
    raise Mp4ParseError(f"missing {box_type} box", f"{box.path}/{box_type}", box.offset)


def _find_child(data: bytes, box: Box, box_type: str) -> Box | None:
    for child in iter_boxes(data, box.payload, box.end, box.path):
        if child.type == box_type:
            return child
    return None


def _need(box: Box, nbytes: int) -> None:
    if box.end - box.payload < nbytes:
        raise Mp4ParseError(
            f"truncated {box.type} payload: need {nbytes} bytes, "
            f"have {box.end - box.payload}",
            box.path,
            box.offset,
        )


def _handler_type(data: bytes, mdia: Box) -> str | None:
    hdlr = _find_child(data, mdia, "hdlr")
    if hdlr is None:
        return None
    _need(hdlr, 12)
    return data[hdlr.payload + 8 : hdlr.payload + 12].decode("latin-1")


def _read_mdhd(data: bytes, mdhd: Box) -> tuple[int, int]:
    _need(mdhd, 4)
    version = data[mdhd.payload]
    if version == 0:
        _need(mdhd, 20)
        timescale, duration = struct.unpack_from(">II", data, mdhd.payload + 12)
    elif version == 1:
        _need(mdhd, 32)
        timescale, duration = struct.unpack_from(">IQ", data, mdhd.payload + 20)
    else:
        raise Mp4ParseError(f"unsupported mdhd version {version}", mdhd.path, mdhd.offset)
    if timescale == 0:
        raise Mp4ParseError("zero timescale", mdhd.path, mdhd.offset)
    return timescale, duration


def _read_stts(data: bytes, stts: Box) -> tuple[tuple[int, int], ...]:
    _need(stts, 8)
    (entry_count,) = struct.unpack_from(">I", data, stts.payload + 4)
    _need(stts, 8 + 8 * entry_count)
    flat = struct.unpack_from(f">{2 * entry_count}I", data, stts.payload + 8)
    entries = tuple(zip(flat[0::2], flat[1::2]))
    if sum(count for count, _ in entries) > MAX_SAMPLES:
        raise Mp4ParseError(f"more than {MAX_SAMPLES} samples", stts.path, stts.offset)
    return entries


def read_video_track(source: bytes | BinaryIO, track_index: int | None = None) -> Mp4VideoTrack:
    """Locate a track and decode its timing boxes.

    Args:
        source: complete file contents or a binary stream positioned at its start
        track_index: position of the wanted ``trak`` in ``moov``; by default the
            first track whose handler type is ``vide``
    """
    data = source if isinstance(source, (bytes, bytearray, memoryview)) else source.read()
    data = bytes(data)
    moov = None
    for box in iter_boxes(data, 0, len(data)):
        if box.type == "moov":
            moov = box
            break
    if moov is None:
        raise Mp4ParseError("missing moov box", "moov", 0)

    traks = [b for b in iter_boxes(data, moov.payload, moov.end, moov.path) if b.type == "trak"]
    chosen = None
    if track_index is not None:
        if not 0 <= track_index < len(traks):
            raise Mp4ParseError(
                f"track index {track_index} out of range ({len(traks)} tracks)",
                "moov/trak",
                moov.offset,
            )
        chosen = track_index
        mdia = _child(data, traks[chosen], "mdia")
        handler = _handler_type(data, mdia) or ""
    else:
        for i, trak in enumerate(traks):
            mdia = _find_child(data, trak, "mdia")
            if mdia is not None and _handler_type(data, mdia) == "vide":
                chosen, handler = i, "vide"
                break
        if chosen is None:
            raise Mp4ParseError("no video track", "moov/trak", moov.offset)
        mdia = _child(data, traks[chosen], "mdia")

    mdhd = _child(data, mdia, "mdhd")
    timescale, duration = _read_mdhd(data, mdhd)
    stbl = _child(data, _child(data, mdia, "minf"), "stbl")
    stts = _child(data, stbl, "stts")
    return Mp4VideoTrack(
        chosen, handler, timescale, duration, _read_stts(data, stts), stts.offset
    )


def parse_mp4_timestamps(
    source: bytes | BinaryIO, camera_id: str = "", track_index: int | None = None
) -> TimestampTrack:
    """Per-frame timestamps in media timescale ticks, starting at 0.

    Frame ``i`` starts at the sum of the deltas of frames ``0..i-1``.

    Raises:
        Mp4ParseError: truncated or missing boxes, zero timescale, zero deltas
    """
    track = read_video_track(source, track_index)
    counts = np.array([c for c, _ in track.stts], dtype=np.int64)
    deltas = np.array([d for _, d in track.stts], dtype=np.int64)
    per_sample = np.repeat(deltas, counts)
    if per_sample.size > 1 and np.any(per_sample[:-1] == 0):
        raise Mp4ParseError(
            "zero sample delta between frames",
            "moov/trak/mdia/minf/stbl/stts",
            track.stts_offset,
        )
    starts = np.concatenate(([0], np.cumsum(per_sample[:-1]))) if per_sample.size else per_sample
    nominal = None
    if track.stts:
        # the most frequent delta is the nominal frame duration
        run = max(track.stts, key=lambda e: e[0])
        if run[1] > 0:
            nominal = run[1] * 1000.0 / track.timescale
    return TimestampTrack(
        camera_id, track.timescale, tuple(int(t) for t in starts), nominal
    )
