"""Dense optical flow between consecutive frames, plus its visualization
and interchange formats.

The estimator is the classical variational one: a brightness-constancy data
term coupled to a quadratic smoothness prior, minimized by Jacobi sweeps
inside a coarse-to-fine pyramid with intermediate re-warping. It stands in
for a learned flow network: the rest of the pipeline only needs a dense
(u, v) field per frame pair, so the estimator stays swappable behind
``estimate_flow``.

Color coding follows the familiar flow-visualization convention: hue from
the 55-entry color wheel indexed by atan2(-v, -u), saturation from the
magnitude normalized by the field (or caller-supplied) maximum, so zero
motion renders white.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .imageio import bilinear_resize, rgb_to_gray, sample_bilinear

__all__ = [
    "FlowParams",
    "FlowField",
    "estimate_flow",
    "flow_to_color",
    "write_flo",
    "read_flo",
    "preprocess_clip",
]

# The data term is evaluated on a 0..255 intensity scale; the default
# smoothness weight is calibrated to that scale.
_INTENSITY_SCALE = 255.0
_MIN_COARSE_DIM = 8


@dataclass(frozen=True)
class FlowParams:
    """Solver constants: smoothness weight, Jacobi sweeps per warp,
    pyramid depth, and re-warps per level."""

    alpha: float = 15.0
    iterations: int = 100
    pyramid_levels: int = 3
    warps_per_level: int = 2

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.pyramid_levels < 1:
            raise ValueError(f"pyramid_levels must be >= 1, got {self.pyramid_levels}")
        if self.warps_per_level < 1:
            raise ValueError(f"warps_per_level must be >= 1, got {self.warps_per_level}")


@dataclass
class FlowField:
    """Per-pixel displacement between two frames; u is horizontal (+x
    rightward), v vertical (+y downward), both (height, width) float64."""

    width: int
    height: int
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        if self.u.shape != (self.height, self.width) or self.v.shape != (self.height, self.width):
            raise DataError(
                f"flow buffers must be ({self.height}, {self.width}), got {self.u.shape} and {self.v.shape}"
            )
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise DataError("flow field contains non-finite values")

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u * self.u + self.v * self.v)


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

def _blur3(img: np.ndarray) -> np.ndarray:
    p = np.pad(img, 1, mode="edge")
    horiz = 0.25 * p[1:-1, :-2] + 0.5 * p[1:-1, 1:-1] + 0.25 * p[1:-1, 2:]
    p2 = np.pad(horiz, ((1, 1), (0, 0)), mode="edge")
    return 0.25 * p2[:-2, :] + 0.5 * p2[1:-1, :] + 0.25 * p2[2:, :]


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    return bilinear_resize(_blur3(img), (h + 1) // 2, (w + 1) // 2)


def _neighbor_avg(field: np.ndarray) -> np.ndarray:
    p = np.pad(field, 1, mode="edge")
    return 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])


def _central_gradients(img: np.ndarray):
    p = np.pad(img, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def _solve_level(prev, curr, u, v, alpha, iterations, warps):
    h, w = prev.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    alpha2 = alpha * alpha
    for _ in range(warps):
        warped = sample_bilinear(curr, xx + u, yy + v)
        pgx, pgy = _central_gradients(prev)
        wgx, wgy = _central_gradients(warped)
        ix = 0.5 * (pgx + wgx)
        iy = 0.5 * (pgy + wgy)
        it = warped - prev
        den = alpha2 + ix * ix + iy * iy
        u0 = u.copy()
        v0 = v.copy()
        for _ in range(iterations):
            ub = _neighbor_avg(u)
            vb = _neighbor_avg(v)
            shared = (ix * (ub - u0) + iy * (vb - v0) + it) / den
            u = ub - ix * shared
            v = vb - iy * shared
    return u, v


def estimate_flow(prev: np.ndarray, curr: np.ndarray, params: FlowParams | None = None) -> FlowField:
    """Dense flow carrying each pixel of ``prev`` onto ``curr``.

    Inputs are grayscale images in [0, 1] with identical shapes of at least
    8x8. The result is deterministic: Jacobi sweeps read only the previous
    iterate, so the update order cannot change the outcome.
    """
    if params is None:
        params = FlowParams()
    prev = np.asarray(prev, dtype=np.float64)
    curr = np.asarray(curr, dtype=np.float64)
    if prev.ndim != 2 or curr.ndim != 2:
        raise DataError(f"estimate_flow needs 2-d grayscale images, got {prev.shape} and {curr.shape}")
    if prev.shape != curr.shape:
        raise DataError(f"frame dimensions differ: {prev.shape} vs {curr.shape}")
    h, w = prev.shape
    if h < _MIN_COARSE_DIM or w < _MIN_COARSE_DIM:
        raise DataError(f"estimate_flow needs at least 8x8 images, got {h}x{w}")

    pyr_prev = [prev * _INTENSITY_SCALE]
    pyr_curr = [curr * _INTENSITY_SCALE]
    for _ in range(params.pyramid_levels - 1):
        if min(pyr_prev[-1].shape) < 2 * _MIN_COARSE_DIM:
            break
        pyr_prev.append(_downsample(pyr_prev[-1]))
        pyr_curr.append(_downsample(pyr_curr[-1]))

    u = np.zeros_like(pyr_prev[-1])
    v = np.zeros_like(pyr_prev[-1])
    for level in range(len(pyr_prev) - 1, -1, -1):
        tp = pyr_prev[level]
        tc = pyr_curr[level]
        if u.shape != tp.shape:
            hs, ws = u.shape
            ht, wt = tp.shape
            u = bilinear_resize(u, ht, wt) * (wt / ws)
            v = bilinear_resize(v, ht, wt) * (ht / hs)
        u, v = _solve_level(tp, tc, u, v, params.alpha, params.iterations, params.warps_per_level)
    return FlowField(width=w, height=h, u=u, v=v)


# ---------------------------------------------------------------------------
# color coding
# ---------------------------------------------------------------------------

_RING_SIZES = (15, 6, 4, 11, 13, 6)  # RY, YG, GC, CB, BM, MR


def _make_color_wheel() -> np.ndarray:
    ry, yg, gc, cb, bm, mr = _RING_SIZES
    wheel = np.zeros((sum(_RING_SIZES), 3))
    col = 0
    wheel[col:col + ry, 0] = 255.0
    wheel[col:col + ry, 1] = np.floor(255.0 * np.arange(ry) / ry)
    col += ry
    wheel[col:col + yg, 0] = 255.0 - np.floor(255.0 * np.arange(yg) / yg)
    wheel[col:col + yg, 1] = 255.0
    col += yg
    wheel[col:col + gc, 1] = 255.0
    wheel[col:col + gc, 2] = np.floor(255.0 * np.arange(gc) / gc)
    col += gc
    wheel[col:col + cb, 1] = 255.0 - np.floor(255.0 * np.arange(cb) / cb)
    wheel[col:col + cb, 2] = 255.0
    col += cb
    wheel[col:col + bm, 2] = 255.0
    wheel[col:col + bm, 0] = np.floor(255.0 * np.arange(bm) / bm)
    col += bm
    wheel[col:col + mr, 2] = 255.0 - np.floor(255.0 * np.arange(mr) / mr)
    wheel[col:col + mr, 0] = 255.0
    return wheel


_COLOR_WHEEL = _make_color_wheel()


def flow_to_color(flow: FlowField, max_magnitude: float | None = None) -> np.ndarray:
    """Render a flow field as an (H, W, 3) uint8 image.

    Direction selects a hue on the color wheel, magnitude scales saturation
    (normalized by ``max_magnitude`` or the field maximum), so zero vectors
    are exactly white and the strongest vector reaches the pure wheel color.
    """
    rad_raw = flow.magnitude()
    norm = float(rad_raw.max()) if max_magnitude is None else float(max_magnitude)
    if norm <= 0.0:
        norm = 1e-12
    u = flow.u / norm
    v = flow.v / norm
    rad = np.sqrt(u * u + v * v)

    ncols = _COLOR_WHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.intp)
    k1 = (k0 + 1) % ncols
    frac = fk - k0

    img = np.zeros((flow.height, flow.width, 3), dtype=np.uint8)
    inside = rad <= 1.0
    for ch in range(3):
        col0 = _COLOR_WHEEL[k0, ch] / 255.0
        col1 = _COLOR_WHEEL[k1, ch] / 255.0
        col = (1.0 - frac) * col0 + frac * col1
        col = np.where(inside, 1.0 - rad * (1.0 - col), col * 0.75)
        img[:, :, ch] = np.floor(255.0 * col).astype(np.uint8)
    return img


# ---------------------------------------------------------------------------
# .flo interchange
# ---------------------------------------------------------------------------

_FLO_MAGIC = 202021.25


def write_flo(flow: FlowField, sink) -> None:
    """Write the little-endian .flo layout: float32 magic, int32 width and
    height, then row-major interleaved (u, v) float32 pairs."""
    interleaved = np.empty((flow.height, flow.width, 2), dtype="<f4")
    interleaved[:, :, 0] = flow.u
    interleaved[:, :, 1] = flow.v
    header = struct.pack("<fii", _FLO_MAGIC, flow.width, flow.height)
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as fh:
            fh.write(header)
            fh.write(interleaved.tobytes())
    else:
        sink.write(header)
        sink.write(interleaved.tobytes())


def read_flo(source) -> FlowField:
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            payload = fh.read()
    else:
        payload = source.read()
    if len(payload) < 12:
        raise DataError(f"flo stream truncated: {len(payload)} bytes is shorter than the header")
    magic, width, height = struct.unpack_from("<fii", payload, 0)
    if np.float32(magic) != np.float32(_FLO_MAGIC):
        raise DataError(f"flo magic mismatch: expected {_FLO_MAGIC}, got {magic}")
    if width <= 0 or height <= 0:
        raise DataError(f"flo dimensions must be positive, got {width}x{height}")
    expected = 12 + width * height * 8
    if len(payload) < expected:
        raise DataError(f"flo stream truncated: expected {expected} bytes, got {len(payload)}")
    interleaved = np.frombuffer(payload, dtype="<f4", count=width * height * 2, offset=12)
    interleaved = interleaved.reshape(height, width, 2)
    return FlowField(width=width, height=height,
                     u=interleaved[:, :, 0].astype(np.float64),
                     v=interleaved[:, :, 1].astype(np.float64))


# ---------------------------------------------------------------------------
# clip preprocessing
# ---------------------------------------------------------------------------

def subsample_indices(total: int, count: int) -> list:
    """Evenly spaced frame indices keeping the first and last frame."""
    if count < 2:
        raise DataError(f"subsampling needs at least 2 target frames, got {count}")
    if total < 2:
        raise DataError(f"subsampling needs at least 2 source frames, got {total}")
    return [int(i * (total - 1) / (count - 1) + 0.5) for i in range(count)]


def preprocess_clip(clip, target_frames: int, target_size, params: FlowParams | None = None):
    """Turn a clip into ``target_frames - 1`` (frame, flow image) pairs.

    Frames are subsampled to ``target_frames`` (first and last retained),
    bilinearly resized to ``target_size``, and flow is estimated between
    consecutive grayscale frames. Frame t is paired with the flow from
    t-1 to t, so the first frame has no pair and is dropped.
    """
    if params is None:
        params = FlowParams()
    if isinstance(target_size, int):
        target_size = (target_size, target_size)
    frames = clip.frames
    if len(frames) < 2:
        raise DataError(f"clip {getattr(clip, 'id', '?')} has {len(frames)} frames; need at least 2")
    indices = subsample_indices(len(frames), target_frames)

    th, tw = target_size
    resized = []
    for idx in indices:
        img = bilinear_resize(np.asarray(frames[idx], dtype=np.float64), th, tw)
        resized.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    grays = [rgb_to_gray(img) for img in resized]

    pairs = []
    for t in range(1, target_frames):
        field = estimate_flow(grays[t - 1], grays[t], params)
        pairs.append((resized[t], flow_to_color(field)))
    return pairs
