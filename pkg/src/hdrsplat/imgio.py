"""Bit-exact PFM (HDR, 32-bit float) and binary PPM (LDR, 8-bit) images.

PFM: "PF" header, "{w} {h}", scale "-1.0" (little-endian), rows stored
bottom-to-top as float32 triples. Positive scale (big-endian) is rejected.

PPM: binary "P6", maxval 255, rows top-to-bottom. Quantization is
round-half-away-from-zero on x*255; dequantization divides by 255, so a
round trip moves a pixel by at most 1/510.
"""

from __future__ import annotations

import os

import numpy as np


class ImageFormatError(ValueError):
    """Malformed image file; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _ensure_parent(path: str):
    parent = os.path.dirname(os.path.abspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_pfm(path: str, image: np.ndarray):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PFM writer expects an (h, w, 3) image")
    if not np.all(np.isfinite(image)):
        raise ValueError("PFM writer requires finite pixels")
    h, w = image.shape[:2]
    _ensure_parent(path)
    payload = np.flipud(image).astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(payload)


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()

    def line_at(pos: int):
        end = data.find(b"\n", pos)
        if end < 0:
            raise ImageFormatError("truncated PFM header", pos)
        return data[pos:end], end + 1

    magic, pos = line_at(0)
    if magic != b"PF":
        raise ImageFormatError(f"not a color PFM file (magic {magic!r})", 0)
    dims, pos2 = line_at(pos)
    parts = dims.split()
    try:
        w, h = int(parts[0]), int(parts[1])
        if len(parts) != 2 or w < 1 or h < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise ImageFormatError(f"bad PFM dimensions {dims!r}", pos) from None
    scale_line, pos3 = line_at(pos2)
    try:
        scale = float(scale_line)
    except ValueError:
        raise ImageFormatError(f"bad PFM scale {scale_line!r}", pos2) from None
    if scale >= 0:
        raise ImageFormatError("big-endian PFM is not supported", pos2)
    need = w * h * 3 * 4
    if len(data) - pos3 < need:
        raise ImageFormatError(
            f"truncated PFM payload: need {need} bytes, have {len(data) - pos3}", pos3
        )
    img = np.frombuffer(data[pos3 : pos3 + need], dtype="<f4").reshape(h, w, 3)
    return np.flipud(img).astype(np.float64)


def write_ppm(path: str, image: np.ndarray):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PPM writer expects an (h, w, 3) image")
    if np.any(image < -1e-9) or np.any(image > 1 + 1e-9) or not np.all(np.isfinite(image)):
        raise ValueError("PPM writer expects pixels in [0, 1]")
    h, w = image.shape[:2]
    quant = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(quant.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def token():
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":  # comment runs to end of line
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header", start)
        return data[start:pos], start

    magic, off = token()
    if magic != b"P6":
        raise ImageFormatError(f"not a binary PPM file (magic {magic!r})", off)
    fields = []
    for name in ("width", "height", "maxval"):
        tok, off = token()
        try:
            fields.append(int(tok))
        except ValueError:
            raise ImageFormatError(f"bad PPM {name} {tok!r}", off) from None
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise ImageFormatError("bad PPM dimensions", off)
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval}", off)
    pos += 1  # exactly one whitespace byte separates header and payload
    need = w * h * 3
    if len(data) - pos < need:
        raise ImageFormatError(
            f"truncated PPM payload: need {need} bytes, have {len(data) - pos}", pos
        )
    img = np.frombuffer(data[pos : pos + need], dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float64) / 255.0
