"""Supervised training on ground-truth composite fields."""
from __future__ import annotations

import csv
import logging
import math
import random
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import dataset
from .fields import FieldParams, encode_sample_fields
from .io import save_checkpoint
from .model import ModelConfig, TrajectoryNet, batch_inputs

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "split", "loc_mse", "assoc_mse", "total", "lr", "wall_time")


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch: int = 20
    epochs: int = 100
    decay_every: int = 30
    decay_factor: float = 0.5
    seed: int = 0
    w_loc: float = 1.0
    w_assoc: float = 1.0
    grad_clip: float = 5.0
    teacher_forcing: bool = True
    augment: bool = True
    checkpoint_every: int = 10

    def __post_init__(self):
        for name in ("lr", "batch", "epochs", "decay_every", "decay_factor", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.w_loc < 0 or self.w_assoc < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossReport:
    loc_mse: torch.Tensor
    assoc_mse: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("loc_mse", "assoc_mse", "total")}


class NonFiniteLossError(RuntimeError):
    pass


def _masked_mse(pred, gt, step_mask):
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(gt.shape)}")
    se = (pred - gt) ** 2
    if step_mask is None:
        return se.mean()
    m = step_mask.to(se.dtype).reshape(*step_mask.shape, *([1] * (se.dim() - step_mask.dim())))
    per_step = se[0, 0].numel()
    n = m.sum() * per_step
    if n == 0:
        return se.sum() * 0.0
    return (se * m).sum() / n


def field_loss(pred_L, pred_A, gt_L, gt_A, step_mask=None, w_loc: float = 1.0,
               w_assoc: float = 1.0) -> LossReport:
    """MSE over channels, cells and valid future steps.

    Field tensors are ``(B, T, C, 64, 64)``; ``step_mask`` is ``(B, T)``.
    """
    loc = _masked_mse(pred_L, gt_L, step_mask)
    assoc = _masked_mse(pred_A, gt_A, step_mask)
    return LossReport(loc, assoc, w_loc * loc + w_assoc * assoc)


def sample_targets(sample, params: FieldParams):
    """Ground-truth fields and step mask for one sample.

    A step is supervised only if every agent of the sample is valid there;
    otherwise the target would teach the network that agents vanish.
    """
    L, A = encode_sample_fields(sample.last_observed, np.nan_to_num(sample.future), params.d0,
                                sample.future_mask)
    return L, A, sample.future_mask.all(axis=0)


def make_batch(samples, semantic_maps, params: FieldParams, dtype=torch.float32):
    maps, sem = batch_inputs(samples, semantic_maps, dtype)
    Ls, As, masks = zip(*(sample_targets(s, params) for s in samples))
    to = lambda xs: torch.from_numpy(np.stack(xs)).to(dtype)  # noqa: E731
    return maps, sem, to(Ls), to(As), torch.from_numpy(np.stack(masks))


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * cfg.decay_factor ** (epoch // cfg.decay_every)


def _write_metrics(path, row):
    new = not Path(path).exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_COLUMNS)
        w.writerow([row[c] for c in METRIC_COLUMNS])


def train(samples, config: TrainConfig, model_cfg: ModelConfig, params: FieldParams | None = None,
          semantic=None, out_dir="runs/train", model: TrajectoryNet | None = None,
          on_epoch=None, run_config=None) -> Path:
    """Fit the network on ``samples`` and return the final checkpoint path.

    ``semantic`` maps a sample's ``scene_id`` to its ``(5, 256, 256)`` map;
    missing scenes get the all-walkable map.  Per-epoch losses are appended
    to ``metrics.csv`` in ``out_dir``.
    """
    params = params or FieldParams()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_everything(config.seed)
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = TrajectoryNet(model_cfg)
    model.train()
    dtype = next(model.parameters()).dtype
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, config.decay_every, config.decay_factor)
    semantic = semantic or {}
    fallback = dataset.all_walkable_map()
    metrics_path = out_dir / "metrics.csv"
    ckpt = out_dir / "checkpoint_final.safetensors"
    start = time.perf_counter()

    # a collapsed network emits subnormal activations that slow CPU kernels
    # by an order of magnitude; flush them while training
    torch.set_flush_denormal(True)
    try:
        for epoch in range(config.epochs):
            lr = opt.param_groups[0]["lr"]
            order = rng.permutation(len(samples))
            sums = {"loc_mse": 0.0, "assoc_mse": 0.0, "total": 0.0}
            n_batches = 0
            for b0 in range(0, len(order), config.batch):
                batch, sems = [], []
                for k in order[b0 : b0 + config.batch]:
                    s = samples[k]
                    sem = semantic.get(s.scene_id, fallback)
                    if config.augment:
                        op = dataset.AUGMENT_OPS[rng.integers(len(dataset.AUGMENT_OPS))]
                        s, sem = dataset.augment(s, sem, op)
                    batch.append(s)
                    sems.append(sem)
                maps, sem_t, gt_L, gt_A, mask = make_batch(batch, sems, params, dtype)
                teacher = gt_L if config.teacher_forcing else None
                pred_L, pred_A = model(maps, sem_t, teacher=teacher, T_pred=gt_L.shape[1])
                report = field_loss(pred_L, pred_A, gt_L, gt_A, mask, config.w_loc, config.w_assoc)
                if not torch.isfinite(report.total):
                    dump = out_dir / f"nonfinite_epoch{epoch}_batch{n_batches}.npz"
                    np.savez(dump, maps=maps.numpy(), gt_L=gt_L.numpy(), gt_A=gt_A.numpy(),
                             pred_L=pred_L.detach().numpy(), pred_A=pred_A.detach().numpy())
                    raise NonFiniteLossError(f"non-finite loss at epoch {epoch}; batch dumped to {dump}")
                opt.zero_grad()
                report.total.backward()
                norm = torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                if norm > config.grad_clip:
                    log.debug("epoch %d: gradient norm %.3g clipped to %g", epoch, float(norm), config.grad_clip)
                opt.step()
                for k, v in report.as_floats().items():
                    sums[k] += v
                n_batches += 1
            sched.step()
            row = {k: v / max(n_batches, 1) for k, v in sums.items()}
            row.update(epoch=epoch, split="train", lr=lr, wall_time=round(time.perf_counter() - start, 3))
            _write_metrics(metrics_path, row)
            log.info("epoch %d loc %.5f assoc %.5f total %.5f lr %.2e", epoch, row["loc_mse"],
                     row["assoc_mse"], row["total"], lr)
            if on_epoch is not None:
                on_epoch(epoch, row)
            if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1:04d}.safetensors", model, opt,
                                epoch + 1, run_config or {"train": asdict(config)})
    finally:
        torch.set_flush_denormal(False)
    save_checkpoint(ckpt, model, opt, config.epochs, run_config or {"train": asdict(config)})
    model.eval()
    return ckpt
