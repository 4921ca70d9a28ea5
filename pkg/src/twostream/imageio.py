"""Binary PPM/PGM image I/O and the small raster helpers used everywhere.

Frames and flow visualizations travel as P6 PPM (maxval 255); saliency maps
as P5 PGM. Both formats are written byte-exactly so directory trees can be
compared for reproducibility.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "read_ppm",
    "write_ppm",
    "write_pgm",
    "read_pgm",
    "rgb_to_gray",
    "bilinear_resize",
]


def _open_for(target, mode: str):
    if isinstance(target, (str, Path)):
        return open(target, mode), True
    return target, False


def _read_token(stream) -> bytes:
    """Next whitespace-delimited header token, skipping '#' comments."""
    token = b""
    while True:
        ch = stream.read(1)
        if ch == b"":
            raise DataError("truncated netpbm header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = stream.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def _read_netpbm(source, magic: bytes, channels: int) -> np.ndarray:
    stream, owned = _open_for(source, "rb")
    try:
        got = stream.read(2)
        if got != magic:
            raise DataError(f"expected netpbm magic {magic!r}, got {got!r}")
        width = int(_read_token(stream))
        height = int(_read_token(stream))
        maxval = int(_read_token(stream))
        if width <= 0 or height <= 0:
            raise DataError(f"non-positive netpbm dimensions {width}x{height}")
        if maxval != 255:
            raise DataError(f"only maxval 255 supported, got {maxval}")
        payload = stream.read(width * height * channels)
        if len(payload) != width * height * channels:
            raise DataError("truncated netpbm payload")
        flat = np.frombuffer(payload, dtype=np.uint8)
        if channels == 1:
            return flat.reshape(height, width)
        return flat.reshape(height, width, channels)
    finally:
        if owned:
            stream.close()


def read_ppm(source) -> np.ndarray:
    """Read a binary P6 PPM into an (H, W, 3) uint8 array."""
    return _read_netpbm(source, b"P6", 3)


def read_pgm(source) -> np.ndarray:
    """Read a binary P5 PGM into an (H, W) uint8 array."""
    return _read_netpbm(source, b"P5", 1)


def _write_netpbm(image: np.ndarray, target, magic: bytes) -> None:
    h, w = image.shape[:2]
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    stream, owned = _open_for(target, "wb")
    try:
        stream.write(header)
        stream.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())
    finally:
        if owned:
            stream.close()


def write_ppm(image: np.ndarray, target) -> None:
    """Write an (H, W, 3) uint8 array as binary P6 PPM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DataError(f"P6 output needs an (H, W, 3) image, got {image.shape}")
    _write_netpbm(image, target, b"P6")


def write_pgm(image: np.ndarray, target) -> None:
    """Write an (H, W) uint8 array as binary P5 PGM."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError(f"P5 output needs an (H, W) image, got {image.shape}")
    _write_netpbm(image, target, b"P5")


def ppm_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_ppm(image, buf)
    return buf.getvalue()


def rgb_to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion of an (H, W, 3) uint8/float image to float64 in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    gray = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    if gray.max(initial=0.0) > 1.0:
        gray = gray / 255.0
    return gray


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-center alignment; identity when the
    size is unchanged. Works on (H, W) and (H, W, C) float arrays."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    return sample_bilinear(image, *np.meshgrid(xs, ys))


def sample_bilinear(image: np.ndarray, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    """Sample ``image`` at float coordinates, clamping to the edges."""
    h, w = image.shape[:2]
    xx = np.clip(xx, 0.0, w - 1.0)
    yy = np.clip(yy, 0.0, h - 1.0)
    x0 = np.floor(xx).astype(np.intp)
    y0 = np.floor(yy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xx - x0
    fy = yy - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bottom = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy
