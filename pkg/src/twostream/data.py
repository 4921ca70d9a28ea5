"""Synthetic video generation and on-disk clip handling.

The generated dataset is built so that one group of categories is
separable only through motion and the other only through appearance,
which is the property a two-stream recognizer exists to exploit:

- motion categories all render the *same* sprite on a random smooth
  texture; only the trajectory differs (rightward, downward, circular,
  ...), with a random start per clip, so single frames carry no category
  signal;
- appearance categories render *different* static sprites (square, disk,
  cross, ...) while the whole scene jitters by the same sub-pixel
  distribution, so the flow field is a featureless global wobble and only
  the frame content identifies the category.

Sprites move on sub-pixel positions rendered with bilinear splatting;
integer-jump motion would violate the smoothness assumptions of the flow
estimator.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .imageio import read_ppm, sample_bilinear, write_ppm

__all__ = [
    "VideoClip",
    "SynthConfig",
    "generate_synthetic_dataset",
    "save_clip",
    "load_clip_ppm_sequence",
    "write_manifest",
    "read_manifest",
]


@dataclass
class VideoClip:
    frames: list
    fps: float
    label: int
    id: str

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DataError(f"clip {self.id!r} has {len(self.frames)} frames; need at least 2")
        first = np.asarray(self.frames[0]).shape
        for i, f in enumerate(self.frames):
            if np.asarray(f).shape != first:
                raise DataError(f"clip {self.id!r} frame {i} shape {np.asarray(f).shape} != {first}")


@dataclass(frozen=True)
class SynthConfig:
    num_motion_categories: int = 3
    num_appearance_categories: int = 3
    train_clips_per_category: int = 40
    test_clips_per_category: int = 10
    frame_size: int = 32
    frames_per_clip: int = 8
    noise_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.num_motion_categories + self.num_appearance_categories < 2:
            raise ConfigError("need at least 2 categories in total")
        if self.num_motion_categories > len(_TRAJECTORIES) or self.num_appearance_categories > len(_SPRITES):
            raise ConfigError(
                f"at most {len(_TRAJECTORIES)} motion and {len(_SPRITES)} appearance categories supported"
            )
        if self.frames_per_clip < 4:
            raise ConfigError(f"frames_per_clip must be >= 4, got {self.frames_per_clip}")
        if self.frame_size < 16:
            raise ConfigError(f"frame_size must be >= 16, got {self.frame_size}")
        if self.train_clips_per_category < 1 or self.test_clips_per_category < 1:
            raise ConfigError("clip counts must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")

    @property
    def num_categories(self) -> int:
        return self.num_motion_categories + self.num_appearance_categories


# ---------------------------------------------------------------------------
# sprites and trajectories
# ---------------------------------------------------------------------------

_SPRITE_SIZE = 9
_SPRITE_VALUE = 0.95
_SPEED = 2.0
_JITTER = 0.6


def _sprite_mask(kind: str) -> np.ndarray:
    s = _SPRITE_SIZE
    c = (s - 1) / 2.0
    yy, xx = np.mgrid[0:s, 0:s].astype(float)
    if kind == "square":
        return np.ones((s, s))
    if kind == "disk":
        return ((xx - c) ** 2 + (yy - c) ** 2 <= c * c).astype(float)
    if kind == "cross":
        return ((np.abs(xx - c) <= 1.2) | (np.abs(yy - c) <= 1.2)).astype(float)
    if kind == "ring":
        r2 = (xx - c) ** 2 + (yy - c) ** 2
        return ((r2 <= c * c) & (r2 >= (c - 2.4) ** 2)).astype(float)
    if kind == "diamond":
        return (np.abs(xx - c) + np.abs(yy - c) <= c).astype(float)
    if kind == "checker":
        return (((xx // 3).astype(int) + (yy // 3).astype(int)) % 2 == 0).astype(float)
    raise ConfigError(f"unknown sprite kind {kind!r}")


_MOTION_SPRITE = "diamond"
_SPRITES = ("square", "disk", "cross", "ring", "checker")
_TRAJECTORIES = ("right", "down", "circle", "left", "up")


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    coarse = rng.uniform(0.15, 0.55, size=(8, 8))
    ys = np.linspace(0, 7, size)
    xs = np.linspace(0, 7, size)
    return sample_bilinear(coarse, *np.meshgrid(xs, ys))


def _splat(canvas: np.ndarray, mask: np.ndarray, top: float, left: float, value: float) -> np.ndarray:
    """Alpha-composite ``mask`` at a sub-pixel position via bilinear splatting."""
    s = mask.shape[0]
    iy, ix = int(np.floor(top)), int(np.floor(left))
    fy, fx = top - iy, left - ix
    alpha = np.zeros((s + 1, s + 1))
    alpha[:s, :s] += mask * (1 - fy) * (1 - fx)
    alpha[:s, 1:] += mask * (1 - fy) * fx
    alpha[1:, :s] += mask * fy * (1 - fx)
    alpha[1:, 1:] += mask * fy * fx
    out = canvas.copy()
    h, w = canvas.shape
    y0, x0 = max(iy, 0), max(ix, 0)
    y1, x1 = min(iy + s + 1, h), min(ix + s + 1, w)
    if y0 >= y1 or x0 >= x1:
        return out
    sub = alpha[y0 - iy:y1 - iy, x0 - ix:x1 - ix]
    out[y0:y1, x0:x1] = out[y0:y1, x0:x1] * (1 - sub) + value * sub
    return out


def _motion_positions(rng: np.random.Generator, kind: str, size: int, frames: int):
    s = _SPRITE_SIZE
    lo = 1.0
    # slow down in small frames so the whole path stays inside the borders
    speed = min(_SPEED, (size - s - 2.0) / (frames - 1))
    travel = speed * (frames - 1)
    if kind in ("right", "left"):
        x0 = rng.uniform(lo, size - s - 1 - travel)
        y0 = rng.uniform(lo, size - s - 1)
        xs = x0 + speed * np.arange(frames)
        if kind == "left":
            xs = xs[::-1]
        return [(y0, x) for x in xs]
    if kind in ("down", "up"):
        x0 = rng.uniform(lo, size - s - 1)
        y0 = rng.uniform(lo, size - s - 1 - travel)
        ys = y0 + speed * np.arange(frames)
        if kind == "up":
            ys = ys[::-1]
        return [(y, x0) for y in ys]
    if kind == "circle":
        omega = 2 * np.pi / frames
        radius = min(speed / (2 * np.sin(omega / 2)), (size - s) / 2.0 - 1.5)
        margin = radius + s / 2 + 1
        cx = rng.uniform(margin, size - margin)
        cy = rng.uniform(margin, size - margin)
        phase = rng.uniform(0, 2 * np.pi)
        angles = phase + omega * np.arange(frames)
        return [(cy + radius * np.sin(a) - s / 2, cx + radius * np.cos(a) - s / 2) for a in angles]
    raise ConfigError(f"unknown trajectory {kind!r}")


def _finish_frame(scene: np.ndarray, rng: np.random.Generator, noise_std: float) -> np.ndarray:
    if noise_std > 0:
        scene = scene + rng.normal(0.0, noise_std, size=scene.shape)
    gray = np.clip(np.rint(scene * 255.0), 0, 255).astype(np.uint8)
    return np.stack([gray] * 3, axis=-1)


def render_clip(rng: np.random.Generator, category: int, config: SynthConfig, clip_id: str) -> VideoClip:
    """Render one clip; all randomness (texture, placement, phase, noise,
    jitter) is drawn from ``rng``, so an equal generator state reproduces
    the clip bit for bit."""
    size = config.frame_size
    n = config.frames_per_clip
    bg = _background(rng, size)
    frames = []
    if category < config.num_motion_categories:
        kind = _TRAJECTORIES[category]
        mask = _sprite_mask(_MOTION_SPRITE)
        for top, left in _motion_positions(rng, kind, size, n):
            scene = _splat(bg, mask, top, left, _SPRITE_VALUE)
            frames.append(_finish_frame(scene, rng, config.noise_std))
    else:
        kind = _SPRITES[category - config.num_motion_categories]
        mask = _sprite_mask(kind)
        s = _SPRITE_SIZE
        top = rng.uniform(2.0, size - s - 2.0)
        left = rng.uniform(2.0, size - s - 2.0)
        scene = _splat(bg, mask, top, left, _SPRITE_VALUE)
        yy, xx = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float), indexing="ij")
        for _ in range(n):
            dy, dx = rng.uniform(-_JITTER, _JITTER, size=2)
            shifted = sample_bilinear(scene, xx + dx, yy + dy)
            frames.append(_finish_frame(shifted, rng, config.noise_std))
    return VideoClip(frames=frames, fps=6.0, label=category, id=clip_id)


def generate_synthetic_dataset(config: SynthConfig):
    """Deterministically build (train clips, test clips) from the config.

    Train and test derive from disjoint children of the config seed, so the
    splits never share a random stream; clip ids are disjoint by
    construction.
    """
    root = np.random.SeedSequence(config.seed)
    train_ss, test_ss = root.spawn(2)
    splits = []
    for split_name, split_ss, per_cat in (("train", train_ss, config.train_clips_per_category),
                                          ("test", test_ss, config.test_clips_per_category)):
        children = split_ss.spawn(config.num_categories * per_cat)
        clips = []
        for cat in range(config.num_categories):
            for i in range(per_cat):
                child = children[cat * per_cat + i]
                clip_id = f"{split_name}_c{cat}_{i:04d}"
                clips.append(render_clip(np.random.default_rng(child), cat, config, clip_id))
        splits.append(clips)
    return splits[0], splits[1]


# ---------------------------------------------------------------------------
# disk layout: <clip_id>/frame_<NNN>.ppm + <clip_id>/label.txt
# ---------------------------------------------------------------------------

_FRAME_RE = re.compile(r"frame_(\d+)\.ppm$")


def save_clip(clip: VideoClip, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        write_ppm(frame, directory / f"frame_{i:03d}.ppm")
    (directory / "label.txt").write_text(f"{clip.label}\n")
    return directory


def load_clip_ppm_sequence(directory) -> VideoClip:
    """Load a clip directory: numbered P6 frames plus a one-line label."""
    directory = Path(directory)
    numbered = []
    for path in directory.iterdir():
        m = _FRAME_RE.search(path.name)
        if m:
            numbered.append((int(m.group(1)), path))
    numbered.sort()
    if len(numbered) < 2:
        raise DataError(f"{directory} holds {len(numbered)} frames; a clip needs at least 2")
    label_path = directory / "label.txt"
    if not label_path.exists():
        raise DataError(f"missing label file {label_path}")
    try:
        label = int(label_path.read_text().strip())
    except ValueError as exc:
        raise DataError(f"label file {label_path} is not an integer") from exc
    frames = [read_ppm(path) for _, path in numbered]
    first = frames[0].shape
    for (num, path), frame in zip(numbered, frames):
        if frame.shape != first:
            raise DataError(f"frame {path} has shape {frame.shape}, expected {first}")
    return VideoClip(frames=frames, fps=6.0, label=label, id=directory.name)


def write_manifest(entries, path) -> None:
    """One clip per line: its directory path and split tag, tab-separated."""
    lines = [f"{clip_path}\t{split}" for clip_path, split in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    """Relative clip paths resolve against the manifest's own directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    entries = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("train", "test"):
            raise DataError(f"manifest line {line_no} malformed: {line!r}")
        clip_path = Path(parts[0])
        if not clip_path.is_absolute():
            clip_path = path.parent / clip_path
        entries.append((clip_path, parts[1]))
    return entries
