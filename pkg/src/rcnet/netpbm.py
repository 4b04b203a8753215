"""Binary netpbm (P5/P6) reading and writing.

Strict, bit-exact parsers: header tokens separated by whitespace, `#`
comments allowed inside the header, a single whitespace byte before the
raster.  maxval <= 255 maps to uint8; larger maxvals to uint16 with
big-endian sample order (the conventional netpbm wide format), which is the
on-disk format for probability maps.
"""

from __future__ import annotations

import numpy as np

_WS = b" \t\r\n"


def _tokens(buf):
    """Yields (token, end_index) over the header region of buf."""
    i = 0
    while True:
        while i < len(buf) and buf[i:i + 1] in _WS:
            i += 1
        if i < len(buf) and buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(buf) and buf[i:i + 1] not in _WS and buf[i:i + 1] != b"#":
            i += 1
        if i == start:
            raise ValueError("unexpected end of netpbm header")
        yield buf[start:i], i


def _int_token(tok, what, path):
    try:
        v = int(tok)
    except ValueError:
        raise ValueError(f"{path}: bad {what} token {tok!r}") from None
    if v <= 0:
        raise ValueError(f"{path}: {what} must be positive, got {v}")
    return v


def read_netpbm(path) -> np.ndarray:
    """Returns [h, w] for P5 or [h, w, 3] for P6; dtype uint8 or uint16."""
    with open(path, "rb") as f:
        buf = f.read()
    toks = _tokens(buf)
    magic, _ = next(toks)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: unsupported netpbm magic {magic!r}")
    width, _ = next(toks)
    height, _ = next(toks)
    maxval, end = next(toks)
    w = _int_token(width, "width", path)
    h = _int_token(height, "height", path)
    mv = _int_token(maxval, "maxval", path)
    if mv > 65535:
        raise ValueError(f"{path}: maxval {mv} exceeds 65535")
    if end >= len(buf) or buf[end:end + 1] not in _WS:
        raise ValueError(f"{path}: missing whitespace before raster")
    start = end + 1
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if mv > 255 else np.dtype(np.uint8)
    need = w * h * channels * dtype.itemsize
    raster = buf[start:start + need]
    if len(raster) != need:
        raise ValueError(f"{path}: raster truncated "
                         f"({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=dtype)
    if mv > 255:
        arr = arr.astype(np.uint16)
    if channels == 3:
        return arr.reshape(h, w, 3).copy()
    return arr.reshape(h, w).copy()


def _write(path, magic, arr, maxval):
    if maxval is None:
        maxval = 65535 if arr.dtype == np.uint16 else 255
    if not 0 < maxval <= 65535:
        raise ValueError(f"maxval {maxval} out of range")
    if arr.max(initial=0) > maxval:
        raise ValueError(f"sample value {arr.max()} exceeds maxval {maxval}")
    wide = maxval > 255
    data = arr.astype(">u2" if wide else np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n%d\n" % (magic, w, h, maxval))
        f.write(np.ascontiguousarray(data).tobytes())


def write_pgm(path, arr: np.ndarray, maxval: int | None = None) -> None:
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-d array, got shape {arr.shape}")
    if arr.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"PGM needs uint8/uint16 samples, got {arr.dtype}")
    _write(path, b"P5", arr, maxval)


def write_ppm(path, arr: np.ndarray) -> None:
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(
            f"PPM needs [h, w, 3] uint8, got {arr.shape} {arr.dtype}")
    _write(path, b"P6", arr, 255)
