"""Full pipeline: backbones -> encoder -> gate -> seg features -> queries ->
masks + reference scores, with checkpoint save/load."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize
from .backbone import AudioEmbed, VisualStub
from .config import ConfigError, ModelConfig
from .decoder import (KernelHeadParams, QueryDecoder, RefHeadParams, SegFeatureParams,
                      build_seg_features, dynamic_masks, reference_head)
from .encoder import DavtEncoder
from .features import AudioFeatures
from .gate import BlockGate
from .tensor import Tensor


@dataclass
class ModelOutputs:
    mask_probs: Tensor   # (N, T, H/8, W/8)
    ref_probs: Tensor    # (N, T, 2)
    grid: tuple[int, int]


class CatrModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        dtype = np.float32 if cfg.dtype == "float32" else np.float64
        self.np_dtype = dtype
        c = cfg.channels
        rng = np.random.default_rng(seed)
        self.visual = VisualStub(c, rng, dtype)
        self.audio_embed = AudioEmbed(c, rng, dtype)
        self.encoder = DavtEncoder(c, cfg.blocks, cfg.n_heads, cfg.max_frames, rng, dtype,
                                   use_temporal_av=cfg.use_temporal_av,
                                   use_temporal_va=cfg.use_temporal_va)
        self.gate = BlockGate(c, cfg.resolved_gate_channels(), cfg.blocks, rng, dtype)
        pyramid_channels = {2: c // 4, 4: c // 2, 8: c}
        self.seg = SegFeatureParams(c, cfg.seg_levels, pyramid_channels, rng, dtype)
        self.decoder = QueryDecoder(c, cfg.num_queries, cfg.decoder_layers,
                                    cfg.resolved_ffn_dim(), cfg.n_heads, rng, dtype)
        self.kernel_head = KernelHeadParams(c, cfg.resolved_kernel_hidden(), rng, dtype)
        self.ref_head = RefHeadParams(c, rng, dtype)

    def forward(self, video: np.ndarray, audio: np.ndarray) -> ModelOutputs:
        """video (T, H, W, 3), audio (T, 128); both plain arrays."""
        v_in = Tensor(np.asarray(video, dtype=self.np_dtype))
        a_in = Tensor(np.asarray(audio, dtype=self.np_dtype))
        pyramid = self.visual(v_in)
        video_feats = self.visual.deepest_tokens(pyramid)
        audio_feats = self.audio_embed(a_in)

        block_outputs, audio_enc = self.encoder(video_feats, audio_feats)
        fused = self.gate(block_outputs) if self.cfg.use_gate else block_outputs[-1]

        seg = build_seg_features(fused, pyramid, self.seg)
        decoded = self.decoder(audio_enc, seg)
        masks = dynamic_masks(decoded, audio_enc, seg, self.kernel_head)
        refs = reference_head(decoded, audio_enc, self.ref_head)
        return ModelOutputs(mask_probs=masks, ref_probs=refs, grid=fused.grid)

    # -- parameters & checkpoints ----------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        out.extend(self.visual.named_params())
        out.extend(self.audio_embed.named_params())
        out.extend(self.encoder.named_params())
        out.extend(self.gate.named_params())
        out.extend(self.seg.named_params())
        out.extend(self.decoder.named_params())
        out.extend(self.kernel_head.named_params())
        out.extend(self.ref_head.named_params())
        names = [n for n, _ in out]
        if len(names) != len(set(names)):
            raise RuntimeError("duplicate parameter names")
        return out

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_params())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise ConfigError(f"checkpoint mismatch: missing {sorted(missing)[:3]}, "
                              f"unexpected {sorted(extra)[:3]}")
        for name, p in own.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ConfigError(f"checkpoint param {name}: shape {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(self.np_dtype, copy=True)

    def save(self, dirpath, extra_meta: dict | None = None) -> None:
        import dataclasses
        meta = {"model": dataclasses.asdict(self.cfg)}
        if extra_meta:
            meta.update(extra_meta)
        serialize.save_checkpoint(dirpath, self.state(), meta)

    @classmethod
    def load(cls, dirpath) -> "CatrModel":
        state, meta = serialize.load_checkpoint(dirpath)
        if "model" not in meta:
            raise ConfigError(f"{dirpath}: checkpoint lacks model config")
        cfg = ModelConfig(**meta["model"])
        model = cls(cfg, seed=0)
        model.load_state(state)
        return model
