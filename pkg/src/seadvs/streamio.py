"""Event stream codecs (CSV, EREV binary) and event-frame accumulation.

EREV layout, all little-endian::

    header (24 bytes): magic b"EREV", version u16 = 1, width u16,
                       height u16, 6 reserved zero bytes, count u64
    record (16 bytes): t_us u64, x u16, y u16, polarity i8, 3 zero pad bytes
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .events import EventStream

CSV_HEADER = "t_us,x,y,p"
EREV_MAGIC = b"EREV"
EREV_VERSION = 1
_HEADER = struct.Struct("<4sHHH6sQ")
_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "u1", (3,))]
)
assert _HEADER.size == 24 and _RECORD.itemsize == 16


class StreamFormatError(ValueError):
    pass


def write_csv(stream: EventStream) -> str:
    rows = zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist())
    lines = [CSV_HEADER]
    lines.extend(f"{t},{x},{y},{p}" for t, x, y, p in rows)
    return "\n".join(lines) + "\n"


def read_csv(text: str, width: int, height: int) -> EventStream:
    """Parse CSV text; ``width``/``height`` give the sensor the events must fit."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise StreamFormatError(f"line 1: expected header {CSV_HEADER!r}")
    t, x, y, p = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            if len(parts) != 4:
                raise ValueError("expected 4 fields")
            vals = [int(s) for s in parts]
        except ValueError as exc:
            raise StreamFormatError(f"line {lineno}: malformed event {line!r} ({exc})") from None
        if vals[3] not in (1, -1):
            raise StreamFormatError(f"line {lineno}: polarity must be 1 or -1")
        if vals[0] < 0 or not (0 <= vals[1] < width and 0 <= vals[2] < height):
            raise StreamFormatError(f"line {lineno}: event outside {width}x{height} sensor")
        t.append(vals[0])
        x.append(vals[1])
        y.append(vals[2])
        p.append(vals[3])
    try:
        return EventStream(width, height, t, x, y, p)
    except ValueError as exc:
        raise StreamFormatError(str(exc)) from None


def write_binary(stream: EventStream) -> bytes:
    header = _HEADER.pack(EREV_MAGIC, EREV_VERSION, stream.width, stream.height, bytes(6), len(stream))
    rec = np.zeros(len(stream), dtype=_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    return header + rec.tobytes()


def read_binary(data: bytes) -> EventStream:
    if len(data) < _HEADER.size:
        raise StreamFormatError("truncated file: header incomplete")
    magic, version, width, height, reserved, count = _HEADER.unpack_from(data)
    if magic != EREV_MAGIC:
        raise StreamFormatError(f"bad magic {magic!r}")
    if version != EREV_VERSION:
        raise StreamFormatError(f"unsupported version {version}")
    if reserved != bytes(6):
        raise StreamFormatError("nonzero reserved header bytes")
    expected = _HEADER.size + count * _RECORD.itemsize
    if len(data) < expected:
        raise StreamFormatError(f"truncated file: {len(data)} bytes, header promises {expected}")
    if len(data) > expected:
        raise StreamFormatError(f"{len(data) - expected} trailing bytes after {count} records")
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=_HEADER.size)
    if rec["pad"].any():
        raise StreamFormatError("nonzero padding in event record")
    try:
        return EventStream(width, height, rec["t"], rec["x"], rec["y"], rec["p"])
    except ValueError as exc:
        raise StreamFormatError(str(exc)) from None


@dataclass(frozen=True, eq=False)
class EventFrame:
    width: int
    height: int
    t_start_us: int
    t_end_us: int
    signed: np.ndarray  # (height, width) int32, ON - OFF
    count: np.ndarray  # (height, width) uint32


def accumulate(stream: EventStream, t_start_us: int, t_end_us: int) -> EventFrame:
    """Per-pixel counts of events with t_start_us <= t < t_end_us."""
    if not t_start_us < t_end_us:
        raise ValueError("need t_start_us < t_end_us")
    w, h = stream.width, stream.height
    lo = np.searchsorted(stream.t, np.uint64(max(t_start_us, 0)), side="left")
    hi = np.searchsorted(stream.t, np.uint64(max(t_end_us, 0)), side="left")
    idx = stream.y[lo:hi].astype(np.int64) * w + stream.x[lo:hi]
    pol = stream.p[lo:hi]
    count = np.bincount(idx, minlength=w * h).astype(np.uint32)
    signed = (
        np.bincount(idx, weights=pol.astype(np.float64), minlength=w * h).astype(np.int32)
        if len(idx)
        else np.zeros(w * h, dtype=np.int32)
    )
    return EventFrame(w, h, t_start_us, t_end_us, signed.reshape(h, w), count.reshape(h, w))


def window_count(stream: EventStream, window_us: int) -> int:
    """Windows of ``window_us`` starting at t = 0 needed to cover every event."""
    if len(stream) == 0:
        return 0
    return math.ceil((int(stream.t[-1]) + 1) / window_us)


def event_frames(stream: EventStream, window_us: int, count: int = None) -> list:
    """The "DVS video": consecutive windows [k*window_us, (k+1)*window_us)."""
    if window_us <= 0:
        raise ValueError("window_us must be positive")
    n = window_count(stream, window_us) if count is None else count
    return [accumulate(stream, k * window_us, (k + 1) * window_us) for k in range(n)]


def event_frame_to_image(frame: EventFrame, gain: float = 64) -> np.ndarray:
    """Mid-gray background, ON events brighter and OFF events darker."""
    return np.clip(128 + gain * frame.signed.astype(np.float64), 0, 255).astype(np.uint8)
