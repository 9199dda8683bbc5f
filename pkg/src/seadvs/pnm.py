"""Binary PGM (P5) and ELUM raw-float frame containers."""
from __future__ import annotations

import struct

import numpy as np

ELUM_MAGIC = b"ELUM"
_ELUM_HEADER = struct.Struct("<4sIII")  # magic, width, height, count


def encode_pgm(image: np.ndarray) -> bytes:
    """8-bit or 16-bit P5 graymap; 16-bit samples are big-endian per netpbm."""
    image = np.asarray(image)
    h, w = image.shape
    if image.dtype == np.uint8:
        maxval, body = 255, image.tobytes()
    elif image.dtype == np.uint16:
        maxval, body = 65535, image.astype(">u2").tobytes()
    else:
        raise TypeError(f"unsupported PGM dtype {image.dtype}")
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + body


def decode_pgm(data: bytes) -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    count = w * h
    body = data[pos : pos + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise ValueError("truncated PGM body")
    arr = np.frombuffer(body, dtype=dtype).reshape(h, w)
    return arr.astype(np.uint16) if maxval >= 256 else arr.copy()


def encode_elum(frames: list) -> bytes:
    """Pack same-sized float images into one little-endian float32 file."""
    if not frames:
        raise ValueError("no frames to pack")
    h, w = np.shape(frames[0])
    parts = [_ELUM_HEADER.pack(ELUM_MAGIC, w, h, len(frames))]
    for f in frames:
        if np.shape(f) != (h, w):
            raise ValueError("frame dimensions differ")
        parts.append(np.asarray(f, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_elum(data: bytes) -> np.ndarray:
    if len(data) < _ELUM_HEADER.size:
        raise ValueError("truncated ELUM file")
    magic, w, h, count = _ELUM_HEADER.unpack_from(data)
    if magic != ELUM_MAGIC:
        raise ValueError(f"bad ELUM magic {magic!r}")
    expected = _ELUM_HEADER.size + 4 * w * h * count
    if len(data) != expected:
        raise ValueError(f"ELUM size {len(data)} != expected {expected}")
    body = np.frombuffer(data, dtype="<f4", offset=_ELUM_HEADER.size)
    return body.reshape(count, h, w).astype(np.float32)
