"""Single-channel float images and binary PGM (P5) persistence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ShapeError

PGM_MAXVAL = 65535


@dataclass(frozen=True)
class Image:
    """Float pixel raster, shape (height, width, channels), row-major."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ShapeError(f"pixels must be (H, W, C), got shape {px.shape}")
        if not np.isfinite(px).all():
            raise ShapeError("pixel values must be finite")
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def normalize_depth(img: Image) -> Image:
    """Scale positive depths into (0, 1]; background zeros stay zero."""
    px = img.pixels
    top = px.max()
    if top <= 0:
        return Image(np.zeros_like(px))
    return Image(px / top)


def save_pgm(path, img: Image) -> None:
    """Write a 16-bit binary PGM; values are clipped to [0, 1] and quantized."""
    if img.channels != 1:
        raise ShapeError("PGM supports single-channel images only")
    q = np.clip(img.pixels[:, :, 0], 0.0, 1.0)
    data = np.round(q * PGM_MAXVAL).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n{PGM_MAXVAL}\n".encode("ascii"))
        fh.write(data.tobytes())


def load_pgm(path) -> Image:
    """Read an 8- or 16-bit binary PGM back into [0, 1] floats."""
    with open(path, "rb") as fh:
        data = fh.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; a single whitespace byte ends the header.
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise ParseError("truncated PGM header", path)
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise ParseError("unterminated PGM comment", path)
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ParseError(f"not a binary PGM (magic {tokens[0]!r})", path, 1)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"bad PGM header: {exc}", path, 1)
    dtype = ">u2" if maxval > 255 else np.uint8
    count = width * height
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if raw.size != count:
        raise ParseError("truncated PGM pixel data", path)
    return Image(raw.reshape(height, width).astype(np.float64) / maxval)
