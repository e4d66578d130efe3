"""Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only."""
from __future__ import annotations

import os

import numpy as np


class ImageFormatError(IOError):
    """Malformed or unsupported image file."""


_WHITESPACE = b" \t\n\r\v\f"


def _tokens(buf: bytes, count: int, pos: int):
    """Read ``count`` header tokens starting at ``pos``; skips '#' comments."""
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos] in _WHITESPACE:
            pos += 1
        if pos < n and buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        out.append(buf[start:pos])
    return out, pos


def decode(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode P5/P6 bytes into uint8 (H,W) or (H,W,3)."""
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise ImageFormatError(f"{source}: not a binary PGM/PPM file (magic {buf[:2]!r})")
    channels = 3 if buf[:2] == b"P6" else 1
    try:
        toks, pos = _tokens(buf, 3, 2)
        width, height, maxval = (int(t) for t in toks)
    except (ValueError, ImageFormatError) as exc:
        raise ImageFormatError(f"{source}: malformed header ({exc})") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{source}: invalid dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise ImageFormatError(f"{source}: unsupported bit depth (maxval {maxval}); only 8-bit is supported")
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise ImageFormatError(f"{source}: missing whitespace after header")
    pos += 1
    need = width * height * channels
    raster = buf[pos:pos + need]
    if len(raster) < need:
        raise ImageFormatError(f"{source}: truncated raster ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if maxval != 255 and arr.max(initial=0) > maxval:
        raise ImageFormatError(f"{source}: sample exceeds maxval {maxval}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    arr = arr.reshape(shape).copy()
    if maxval != 255:
        arr = np.round(arr.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    return arr


def encode(arr: np.ndarray) -> bytes:
    """Encode uint8 (H,W) as P5 or (H,W,3) as P6."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ImageFormatError(f"netpbm writer needs uint8 data, got {arr.dtype}")
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ImageFormatError(f"cannot encode array of shape {arr.shape} as PGM/PPM")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(arr).tobytes()


def read(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), str(path))


def write(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(arr))


def to_uint8(x: np.ndarray) -> np.ndarray:
    """[0,1] floats to 8-bit with round-half-even and clipping."""
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
