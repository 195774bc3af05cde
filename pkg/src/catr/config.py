"""Run configuration: dataclasses, strict JSON (de)serialization, presets."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


@dataclass
class ModelConfig:
    channels: int = 64           # shared feature dimension C
    blocks: int = 2              # stacked encoder blocks L
    n_heads: int = 4
    num_queries: int = 8
    decoder_layers: int = 3
    gate_channels: int = 0       # 0 means "same as channels"
    max_frames: int = 8          # temporal position table length
    ffn_dim: int = 0             # 0 means 2 * channels
    kernel_hidden: int = 0       # 0 means channels
    seg_levels: list[int] = field(default_factory=lambda: [4, 2])
    use_gate: bool = True
    use_temporal_av: bool = True
    use_temporal_va: bool = True
    dtype: str = "float32"

    def resolved_gate_channels(self) -> int:
        return self.gate_channels or self.channels

    def resolved_ffn_dim(self) -> int:
        return self.ffn_dim or 2 * self.channels

    def resolved_kernel_hidden(self) -> int:
        return self.kernel_hidden or self.channels


@dataclass
class OptimConfig:
    lr: float = 1e-4
    steps: int = 2000
    batch_size: int = 4
    seed: int = 7
    checkpoint_every: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class LossConfig:
    lambda_dice: float = 5.0
    lambda_focal: float = 2.0
    lambda_ref: float = 2.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25


@dataclass
class DataConfig:
    train_dir: str = ""
    eval_dir: str = ""


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "RunConfig":
        m, o, l = self.model, self.optim, self.loss
        for name, val in [("channels", m.channels), ("blocks", m.blocks), ("n_heads", m.n_heads),
                          ("num_queries", m.num_queries), ("decoder_layers", m.decoder_layers),
                          ("max_frames", m.max_frames), ("lr", o.lr), ("steps", o.steps)]:
            if val <= 0:
                raise ConfigError(f"{name} must be positive, got {val}")
        if o.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {o.batch_size}")
        if m.channels % m.n_heads:
            raise ConfigError(f"channels {m.channels} not divisible by n_heads {m.n_heads}")
        g = m.resolved_gate_channels()
        if g < 1 or m.channels % g:
            raise ConfigError(f"gate_channels {g} must divide channels {m.channels}")
        if m.channels % 4:
            raise ConfigError(f"channels {m.channels} must be divisible by 4 (pyramid stub)")
        for s in m.seg_levels:
            if s not in (4, 2):
                raise ConfigError(f"seg_levels may only contain 4 and 2, got {m.seg_levels}")
        if list(m.seg_levels) not in ([], [4], [4, 2]):
            raise ConfigError(f"seg_levels must be a descending prefix of [4, 2], got {m.seg_levels}")
        if m.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {m.dtype}")
        for lam in (l.lambda_dice, l.lambda_focal, l.lambda_ref):
            if lam < 0:
                raise ConfigError("loss weights must be non-negative")
        return self


_SECTIONS = {"model": ModelConfig, "optim": OptimConfig, "loss": LossConfig, "data": DataConfig}


def _from_section(cls, payload: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    return cls(**payload)


def config_from_dict(payload: dict) -> RunConfig:
    if payload.get("config_version") != CONFIG_VERSION:
        raise ConfigError(f"config_version must be {CONFIG_VERSION}, got {payload.get('config_version')}")
    unknown = set(payload) - set(_SECTIONS) - {"config_version"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = payload.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"section {name} must be an object")
        kwargs[name] = _from_section(cls, section, name)
    cfg = RunConfig(**kwargs)
    seed_env = os.environ.get("CATR_SEED")
    if seed_env is not None:
        try:
            cfg.optim.seed = int(seed_env)
        except ValueError as e:
            raise ConfigError(f"CATR_SEED must be an integer, got {seed_env!r}") from e
    return cfg.validate()


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"config_version": CONFIG_VERSION}
    for name in _SECTIONS:
        out[name] = dataclasses.asdict(getattr(cfg, name))
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(payload)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=1, sort_keys=True))


def desk_preset() -> RunConfig:
    """Small everything; trains on a commodity CPU in minutes."""
    cfg = RunConfig()
    cfg.model.seg_levels = [4]  # the stride-2 stage buys nothing at 80x80 and triples conv cost
    return cfg.validate()


def paper_preset() -> RunConfig:
    """Full-scale hyperparameters; not expected to train at desk scale."""
    return RunConfig(
        model=ModelConfig(channels=256, blocks=2, n_heads=8, num_queries=50,
                          decoder_layers=3, gate_channels=256),
        optim=OptimConfig(lr=1e-5, steps=100_000, batch_size=4),
    ).validate()
