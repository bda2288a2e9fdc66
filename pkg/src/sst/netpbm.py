"""Binary PPM (P6) / PGM (P5) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _comment(text):
    if text is None:
        return b""
    if "\n" in text:
        raise ValueError("netpbm comments must be a single line")
    return b"# " + text.encode() + b"\n"


def encode_ppm(image, comment: str | None = None) -> bytes:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"PPM needs an H x W x 3 array, got {image.shape}")
    h, w, _ = image.shape
    return b"P6\n" + _comment(comment) + b"%d %d\n255\n" % (w, h) + image.tobytes()


def comments(data: bytes) -> list:
    """Header comment lines (without the leading ``#``)."""
    out, fields, pos = [], 0, 0
    while fields < 3 and pos < len(data):
        end = data.find(b"\n", pos)
        end = len(data) if end < 0 else end
        line = data[pos:end]
        if line.startswith(b"#"):
            out.append(line[1:].strip().decode())
        else:
            fields += 1  # magic, size and maxval each sit on their own line here
        pos = end + 1
    return out


def encode_pgm(raster) -> bytes:
    raster = np.ascontiguousarray(raster, dtype=np.uint8)
    if raster.ndim != 2:
        raise ValueError(f"PGM needs an H x W array, got {raster.shape}")
    h, w = raster.shape
    return b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes()


def _tokens(data: bytes, count: int):
    out, pos = [], 0
    while len(out) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        out.append(data[pos:end])
        pos = end
    return out, pos + 1  # single whitespace byte before the raster


def decode(data: bytes) -> np.ndarray:
    (magic, w, h, maxval), pos = _tokens(data, 4)
    w, h = int(w), int(h)
    if int(maxval) != 255:
        raise ValueError(f"only 8-bit netpbm is supported (maxval {int(maxval)})")
    if magic == b"P6":
        shape = (h, w, 3)
    elif magic == b"P5":
        shape = (h, w)
    else:
        raise ValueError(f"unsupported netpbm magic {magic!r}")
    n = int(np.prod(shape))
    body = data[pos:pos + n]
    if len(body) != n:
        raise ValueError("truncated netpbm raster")
    return np.frombuffer(body, dtype=np.uint8).reshape(shape).copy()


def read(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def write_ppm(path, image, comment: str | None = None):
    Path(path).write_bytes(encode_ppm(image, comment))


def write_pgm(path, raster):
    Path(path).write_bytes(encode_pgm(raster))
