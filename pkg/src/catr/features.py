"""Shared feature containers passed between pipeline stages."""

from __future__ import annotations

from dataclasses import dataclass

from .tensor import DimensionError, Tensor


@dataclass
class VideoFeatures:
    """Flattened per-frame video tokens: (T, P, C) with P = h*w."""

    tokens: Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if self.tokens.ndim != 3 or self.tokens.shape[1] != h * w:
            raise DimensionError(f"VideoFeatures: tokens {self.tokens.shape} vs grid {self.grid}")

    @property
    def frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]


@dataclass
class AudioFeatures:
    """One audio token per frame: (T, C)."""

    tokens: Tensor

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise DimensionError(f"AudioFeatures: tokens must be (T, C), got {self.tokens.shape}")

    @property
    def frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]


@dataclass
class VisualPyramid:
    """Backbone feature maps keyed by stride; (T, H/s, W/s, c) each."""

    levels: dict[int, Tensor]
    input_hw: tuple[int, int]

    def level(self, stride: int) -> Tensor:
        if stride not in self.levels:
            raise DimensionError(f"VisualPyramid: no level at stride {stride} (have {sorted(self.levels)})")
        return self.levels[stride]
