"""Desk-scale feature extractors.

The visual stub is three stride-2 3x3 conv+relu stages producing a
{2, 4, 8} pyramid with channels [C/4, C/2, C]; the deepest level supplies
the flattened (T, P, C) tokens the encoder consumes. Audio descriptors
arrive as 128-d vectors per frame and get one learnable linear map to C.
"""

from __future__ import annotations

import numpy as np

from .config import ConfigError
from .features import AudioFeatures, VideoFeatures, VisualPyramid
from .tensor import DimensionError, Tensor, conv2d, linear, relu, reshape

AUDIO_DIM = 128


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, shape).astype(dtype), requires_grad=True)


def zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class VisualStub:
    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        c = channels
        self.channels = c
        widths = [(3, c // 4), (c // 4, c // 2), (c // 2, c)]
        self.convs = []
        for cin, cout in widths:
            w = glorot(rng, (3, 3, cin, cout), 9 * cin, 9 * cout, dtype)
            b = zeros((cout,), dtype)
            self.convs.append((w, b))

    def __call__(self, video: Tensor) -> VisualPyramid:
        if video.ndim != 4 or video.shape[3] != 3:
            raise DimensionError(f"extract_visual: expected (T, H, W, 3), got {video.shape}")
        t, h, w, _ = video.shape
        if h % 8 or w % 8:
            raise ConfigError(f"extract_visual: H={h}, W={w} must be divisible by 8")
        x = video
        levels = {}
        for i, (cw, cb) in enumerate(self.convs):
            x = relu(conv2d(x, cw, cb, stride=2))
            levels[2 ** (i + 1)] = x
        return VisualPyramid(levels=levels, input_hw=(h, w))

    def deepest_tokens(self, pyramid: VisualPyramid) -> VideoFeatures:
        deep = pyramid.level(8)
        t, h, w, c = deep.shape
        return VideoFeatures(tokens=reshape(deep, (t, h * w, c)), grid=(h, w))

    def named_params(self, prefix: str = "visual"):
        for i, (w, b) in enumerate(self.convs):
            yield f"{prefix}.conv{i}.w", w
            yield f"{prefix}.conv{i}.b", b


class AudioEmbed:
    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.w = glorot(rng, (AUDIO_DIM, channels), AUDIO_DIM, channels, dtype)
        self.b = zeros((channels,), dtype)

    def __call__(self, raw: Tensor) -> AudioFeatures:
        if raw.ndim != 2 or raw.shape[1] != AUDIO_DIM:
            raise DimensionError(f"embed_audio: expected (T, {AUDIO_DIM}), got {raw.shape}")
        return AudioFeatures(tokens=linear(raw, self.w, self.b))

    def named_params(self, prefix: str = "audio"):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b
