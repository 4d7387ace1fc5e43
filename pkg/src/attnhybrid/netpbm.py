"""Binary netpbm image I/O: greyscale PGM (P5) and color PPM (P6), maxval 255.

The parser accepts arbitrary whitespace and ``#`` comments in the header, as
the format allows; the writers emit a canonical minimal header so identical
pixel grids produce byte-identical files.
"""

from __future__ import annotations

import numpy as np

__all__ = ["read_netpbm", "write_pgm", "write_ppm"]


def _read_header_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    n = len(blob)
    while pos < n:
        ch = blob[pos : pos + 1]
        if ch == b"#":
            while pos < n and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ValueError("netpbm header ended unexpectedly")
    return blob[start:pos], pos


def read_netpbm(path) -> np.ndarray:
    """Read a P5 or P6 file; returns uint8 (H, W) for grey, (H, W, 3) for color."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, pos = _read_header_token(blob, 0)
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported netpbm magic {magic!r} (expected P5 or P6)")
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(blob, pos)
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise ValueError(f"bad image extents {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    data = blob[pos : pos + count]
    if len(data) != count:
        raise ValueError(
            f"netpbm file truncated: expected {count} pixel bytes, got {len(data)}"
        )
    arr = np.frombuffer(data, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def _check_u8(img: np.ndarray, channels: int, what: str) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"{what} expects uint8 pixels, got dtype {img.dtype}")
    want_ndim = 2 if channels == 1 else 3
    if img.ndim != want_ndim or (channels == 3 and img.shape[2] != 3):
        raise ValueError(f"{what} expects shape {'(H, W)' if channels == 1 else '(H, W, 3)'}")
    return img


def write_pgm(path, img: np.ndarray) -> None:
    img = _check_u8(img, 1, "write_pgm")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_ppm(path, img: np.ndarray) -> None:
    img = _check_u8(img, 3, "write_ppm")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
