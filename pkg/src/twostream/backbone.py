"""Convolutional feature extractor feeding the two-stream model.

The stack is a truncated VGG-style column: per stage, a run of 3x3
same-padding convolutions with ReLU, then a 2x2 max pool. There is no
flatten and no fully-connected stage; the final map is reduced by global
average and global maximum pooling, so the feature width equals the last
stage's channel count and nothing here can memorize spatial layouts.

Two independent instances exist in a full model: one for video frames,
one for flow images.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

__all__ = ["BackboneConfig", "Backbone", "build_backbone", "extract_features", "he_uniform"]


@dataclass(frozen=True)
class BackboneConfig:
    """Architecture constants: input size, per-stage channel widths, and
    convolutions per stage (an int applies to every stage)."""

    input_size: tuple = (32, 32)
    stage_channels: tuple = (16, 32, 64)
    convs_per_stage: tuple = (2, 2, 2)

    def __post_init__(self):
        size = self.input_size if isinstance(self.input_size, tuple) else (self.input_size, self.input_size)
        if isinstance(self.input_size, int):
            object.__setattr__(self, "input_size", (self.input_size, self.input_size))
        channels = tuple(int(c) for c in self.stage_channels)
        object.__setattr__(self, "stage_channels", channels)
        convs = self.convs_per_stage
        if isinstance(convs, int):
            convs = (convs,) * len(channels)
        convs = tuple(int(c) for c in convs)
        object.__setattr__(self, "convs_per_stage", convs)

        h, w = self.input_size
        divisor = 2 ** len(channels)
        if h % divisor or w % divisor:
            raise ShapeError(f"input size {h}x{w} not divisible by 2^{len(channels)} stages")
        if len(convs) != len(channels):
            raise ShapeError(f"{len(convs)} conv counts for {len(channels)} stages")
        if any(c < 1 for c in channels) or any(c < 1 for c in convs):
            raise ShapeError("stage channels and conv counts must be >= 1")
        _ = size

    @property
    def final_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def final_map_size(self) -> tuple:
        h, w = self.input_size
        d = 2 ** len(self.stage_channels)
        return (h // d, w // d)


@dataclass
class Backbone:
    config: BackboneConfig
    kernels: list = field(default_factory=list)   # one Tensor per convolution
    biases: list = field(default_factory=list)

    def parameters(self):
        """Ordered (name, tensor) pairs; the inventory contains convolution
        kernels and biases only."""
        out = []
        idx = 0
        for s, n_convs in enumerate(self.config.convs_per_stage):
            for j in range(n_convs):
                out.append((f"stage{s}_conv{j}_kernel", self.kernels[idx]))
                out.append((f"stage{s}_conv{j}_bias", self.biases[idx]))
                idx += 1
        return out


def he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_backbone(config: BackboneConfig, seed: int) -> Backbone:
    """Allocate and initialize all stage parameters from ``seed``.

    Kernels are He-uniform (suits the ReLU stack), biases zero; the same
    (config, seed) always produces bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    backbone = Backbone(config=config)
    cin = 3
    for cout, n_convs in zip(config.stage_channels, config.convs_per_stage):
        for _ in range(n_convs):
            fan_in = 3 * 3 * cin
            backbone.kernels.append(Tensor(he_uniform(rng, (3, 3, cin, cout), fan_in), requires_grad=True))
            backbone.biases.append(Tensor(np.zeros(cout), requires_grad=True))
            cin = cout
    return backbone


def extract_features(backbone: Backbone, image: Tensor):
    """Run all stages and return (gap, gmax) over the final feature map.

    ``image`` is (H, W, 3) or a batched (B, H, W, 3) tensor with values
    already scaled to [0, 1]; outputs are (C,) or (B, C) accordingly and
    participate in the autodiff graph.
    """
    expected = backbone.config.input_size
    spatial = image.shape[-3:-1]
    if spatial != expected or image.shape[-1] != 3:
        raise ShapeError(f"backbone expects {expected} RGB input, got {image.shape}")
    x = image
    idx = 0
    for n_convs in backbone.config.convs_per_stage:
        for _ in range(n_convs):
            x = T.relu(T.conv2d(x, backbone.kernels[idx], backbone.biases[idx], padding="same"))
            idx += 1
        x = T.max_pool2d(x)
    return T.global_avg_pool(x), T.global_max_pool(x)
