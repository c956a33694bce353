"""Byte-exact ISO-BMFF fixtures assembled with struct, independent of the parser."""

from __future__ import annotations

import struct


def box(box_type: bytes, payload: bytes = b"", large: bool = False) -> bytes:
    if large:
        return struct.pack(">I4sQ", 1, box_type, 16 + len(payload)) + payload
    return struct.pack(">I4s", 8 + len(payload), box_type) + payload


def mdhd(timescale: int, duration: int, version: int = 0) -> bytes:
    if version == 0:
        body = struct.pack(">B3xIIIIHH", 0, 0, 0, timescale, duration, 0x55C4, 0)
    else:
        body = struct.pack(">B3xQQIQHH", 1, 0, 0, timescale, duration, 0x55C4, 0)
    return box(b"mdhd", body)


def hdlr(handler: bytes = b"vide") -> bytes:
    return box(b"hdlr", struct.pack(">B3xI4s12x", 0, 0, handler) + b"VideoHandler\x00")


def stts(entries) -> bytes:
    body = struct.pack(">B3xI", 0, len(entries))
    for count, delta in entries:
        body += struct.pack(">II", count, delta)
    return box(b"stts", body)


def trak(
    timescale: int,
    entries,
    mdhd_version: int = 0,
    handler: bytes = b"vide",
    large: bool = False,
) -> bytes:
    duration = sum(c * d for c, d in entries)
    stbl = box(b"stbl", stts(entries) + box(b"stsd", struct.pack(">B3xI", 0, 0)), large)
    minf = box(b"minf", box(b"vmhd", struct.pack(">B3x8x", 0)) + stbl)
    mdia = box(b"mdia", mdhd(timescale, duration, mdhd_version) + hdlr(handler) + minf, large)
    return box(b"trak", box(b"tkhd", bytes(84)) + mdia, large)


def mp4(*traks: bytes, large_moov: bool = False) -> bytes:
    ftyp = box(b"ftyp", b"isom" + struct.pack(">I", 512) + b"isomiso2avc1mp41")
    mvhd = box(b"mvhd", bytes(100))
    return ftyp + box(b"moov", mvhd + b"".join(traks), large_moov) + box(b"mdat", b"\x00" * 16)


def video_mp4(timescale: int, entries, mdhd_version: int = 0, large: bool = False) -> bytes:
    return mp4(trak(timescale, entries, mdhd_version, large=large), large_moov=large)


def cumulative_timestamps(entries) -> list[int]:
    """Reference oracle: start tick of every sample from stts run lengths."""
    out, t = [], 0
    for count, delta in entries:
        for _ in range(count):
            out.append(t)
            t += delta
    return out
