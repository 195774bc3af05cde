"""Training loop, optimizer, and end-to-end evaluation helpers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import AvvsSample, read_dataset, write_dataset
from .imageops import avg_pool_mask
from .losses import select_inference, total_loss
from .metrics import EvalReport, evaluate
from .model import CatrModel, ModelOutputs
from .tensor import NumericError, Tensor, add, mul, no_grad


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; diagnostic dump path in args."""


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / bias1
            vhat = self.v[i] / bias2
            p.data = (p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


@dataclass
class StepRecord:
    step: int
    dice: float
    focal: float
    ref: float
    total: float


def sample_targets(sample: AvvsSample) -> tuple[np.ndarray, np.ndarray]:
    """Stride-8 soft coverage targets plus per-frame visibility."""
    masks8 = avg_pool_mask(sample.gt_masks, 8)
    return masks8, sample.visibility.astype(np.float64)


def train_step(model: CatrModel, batch: list[AvvsSample], cfg: RunConfig) -> StepRecord:
    parts = []
    for sample in batch:
        out = model.forward(sample.video, sample.audio)
        masks8, vis = sample_targets(sample)
        parts.append(total_loss(out.mask_probs, out.ref_probs, masks8, vis, cfg.loss))
    total = parts[0].total
    for p in parts[1:]:
        total = add(total, p.total)
    total = mul(total, 1.0 / len(parts))
    value = total.item()
    if not np.isfinite(value):
        raise TrainingDiverged("non-finite loss")
    total.backward()
    return StepRecord(step=0,
                      dice=float(np.mean([p.dice for p in parts])),
                      focal=float(np.mean([p.focal for p in parts])),
                      ref=float(np.mean([p.ref for p in parts])),
                      total=value)


def train(cfg: RunConfig, out_dir, dataset: list[AvvsSample] | None = None,
          log_every: int = 0) -> Path:
    """Run the configured training; returns the final checkpoint directory.

    Writes loss_log.csv (step, dice, focal, ref, total) and periodic
    checkpoints under out_dir. Fully seeded: identical configs and data
    give bit-identical logs.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = read_dataset(cfg.data.train_dir)
    if not dataset:
        raise ValueError("train: empty dataset")

    model = CatrModel(cfg.model, seed=cfg.optim.seed)
    opt = Adam(model.params(), cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps)
    order_rng = np.random.default_rng(cfg.optim.seed + 1)

    log_path = out_dir / "loss_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "dice", "focal", "ref", "total"])
        for step in range(1, cfg.optim.steps + 1):
            idx = order_rng.integers(0, len(dataset), size=cfg.optim.batch_size)
            batch = [dataset[i] for i in idx]
            opt.zero_grad()
            try:
                rec = train_step(model, batch, cfg)
            except (TrainingDiverged, NumericError):
                dump = out_dir / f"diverged_step{step}"
                write_dataset(batch, dump)
                raise TrainingDiverged(f"non-finite loss at step {step}; offending batch "
                                       f"dumped to {dump}") from None
            opt.step()
            writer.writerow([step, f"{rec.dice:.10g}", f"{rec.focal:.10g}",
                             f"{rec.ref:.10g}", f"{rec.total:.10g}"])
            if log_every and step % log_every == 0:
                print(f"step {step:5d}  loss {rec.total:.4f}  "
                      f"(dice {rec.dice:.4f} focal {rec.focal:.4f} ref {rec.ref:.4f})")
            if cfg.optim.checkpoint_every and step % cfg.optim.checkpoint_every == 0:
                model.save(out_dir / f"ckpt_step{step}", {"step": step})
    final = out_dir / "ckpt_final"
    model.save(final, {"step": cfg.optim.steps})
    return final


def predict_sample(model: CatrModel, sample: AvvsSample) -> tuple[int, np.ndarray, ModelOutputs]:
    """Inference on one video: (selected index, (T, H, W) binary masks, raw outputs)."""
    with no_grad():
        out = model.forward(sample.video, sample.audio)
    idx, masks = select_inference(out.ref_probs.data, out.mask_probs.data, sample.frame_hw)
    return idx, masks, out


def evaluate_model(model: CatrModel, samples: list[AvvsSample]) -> EvalReport:
    preds, gts = [], []
    for s in samples:
        _, masks, _ = predict_sample(model, s)
        preds.append(masks)
        gts.append(s.gt_masks.astype(bool))
    return evaluate(preds, gts)
