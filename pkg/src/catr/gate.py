"""Blockwise-encoded gating of successive encoder block outputs.

A pair of block outputs is concatenated on channels, passed through a 1x1
conv and sigmoid, then globally average-pooled over frames and positions
to yield two gate vectors (one per input). The gated sum goes through a
final 1x1 conv. More than two blocks fold left through the same unit.

With gate width g < C each gate value controls a contiguous group of C/g
channels (C % g == 0).
"""

from __future__ import annotations

import numpy as np

from .backbone import glorot, zeros
from .config import ConfigError
from .features import VideoFeatures
from .tensor import (DimensionError, Tensor, add, concat, expand, linear, mean_pool, mul,
                     narrow, reshape, sigmoid)


class GatePairParams:
    def __init__(self, channels: int, gate_channels: int, rng: np.random.Generator, dtype=np.float32):
        if gate_channels < 1 or channels % gate_channels:
            raise ConfigError(f"gate_channels {gate_channels} must divide channels {channels}")
        self.channels = channels
        self.gate_channels = gate_channels
        self.w_gate = glorot(rng, (2 * channels, 2 * gate_channels), 2 * channels, 2 * gate_channels, dtype)
        self.b_gate = zeros((2 * gate_channels,), dtype)
        self.w_out = glorot(rng, (channels, channels), channels, channels, dtype)
        self.b_out = zeros((channels,), dtype)

    def named_params(self, prefix: str):
        yield f"{prefix}.w_gate", self.w_gate
        yield f"{prefix}.b_gate", self.b_gate
        yield f"{prefix}.w_out", self.w_out
        yield f"{prefix}.b_out", self.b_out


def _spread_groups(gate: Tensor, channels: int) -> Tensor:
    """Repeat each of the g gate values over its C/g channel group."""
    g = gate.shape[0]
    if g == channels:
        return gate
    return reshape(expand(reshape(gate, (g, 1)), 1, channels // g), (channels,))


def gate_pair(v_lo: VideoFeatures, v_hi: VideoFeatures, p: GatePairParams
              ) -> tuple[Tensor, Tensor, VideoFeatures]:
    """Returns (gate_lo, gate_hi, fused); gates have g entries in (0, 1)."""
    if v_lo.tokens.shape != v_hi.tokens.shape or v_lo.grid != v_hi.grid:
        raise DimensionError(f"gate_pair: {v_lo.tokens.shape} vs {v_hi.tokens.shape}")
    g = p.gate_channels
    cat = concat([v_lo.tokens, v_hi.tokens], axis=-1)               # (T, P, 2C)
    act = sigmoid(linear(cat, p.w_gate, p.b_gate))                  # (T, P, 2g)
    pooled = mean_pool(mean_pool(act, 0), 0)                        # (2g,)
    gate_lo = narrow(pooled, 0, 0, g)
    gate_hi = narrow(pooled, 0, g, g)
    weighted = add(mul(v_lo.tokens, _spread_groups(gate_lo, p.channels)),
                   mul(v_hi.tokens, _spread_groups(gate_hi, p.channels)))
    fused = linear(weighted, p.w_out, p.b_out)
    return gate_lo, gate_hi, VideoFeatures(fused, v_lo.grid)


class BlockGate:
    """Left fold of the pairwise unit over L block outputs; L=1 is identity."""

    def __init__(self, channels: int, gate_channels: int, blocks: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.pairs = [GatePairParams(channels, gate_channels, rng, dtype)
                      for _ in range(max(blocks - 1, 0))]

    def __call__(self, outputs: list[VideoFeatures]) -> VideoFeatures:
        if not outputs:
            raise ConfigError("gate_fold: empty block list")
        if len(outputs) - 1 > len(self.pairs):
            raise ConfigError(f"gate_fold: {len(outputs)} blocks but {len(self.pairs)} pair units")
        acc = outputs[0]
        for params, nxt in zip(self.pairs, outputs[1:]):
            _, _, acc = gate_pair(acc, nxt, params)
        return acc

    def named_params(self, prefix: str = "gate"):
        for i, pair in enumerate(self.pairs):
            yield from pair.named_params(f"{prefix}.pair{i}")
