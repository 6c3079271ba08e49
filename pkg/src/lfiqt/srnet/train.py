"""Mini-batch training with adaptive-moment updates, and whole-volume inference."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch

from ..errors import ParameterError, ShapeError, TrainingError
from . import model as model_mod
from .patches import stitch, tile_grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    keep_best: bool = True
    patch_xy: int = 32
    patch_z_lf: int = 4
    stride: tuple = (16, 16, 2)
    min_brain_fraction: float = 0.1
    split: tuple = (12, 3, 15)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ParameterError("epochs >= 0, batch_size >= 1 and learning_rate >= 0 required")
        if len(self.split) != 3 or min(self.split) < 1:
            raise ParameterError("split must be three counts >= 1")
        object.__setattr__(self, "stride", tuple(self.stride))
        object.__setattr__(self, "split", tuple(self.split))

    def to_dict(self):
        return asdict(self)


def _stack(pairs, idx, model):
    x = np.concatenate([pairs[i][0] for i in idx], axis=0)
    y = np.concatenate([pairs[i][1] for i in idx], axis=0)
    return model_mod.as_tensor(model, x), model_mod.as_tensor(model, y)


def evaluate_mse(model, pairs, batch_size=8):
    """Mean voxel MSE over pairs (no gradients)."""
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            idx = range(start, min(start + batch_size, len(pairs)))
            x, y = _stack(pairs, idx, model)
            pred = model.apply(x)
            total += float(torch.sum((pred.double() - y.double()) ** 2))
            count += y.numel()
    return total / count


def train(model, train_pairs, val_pairs, cfg):
    """Fit ``model`` to ``train_pairs``, validating on ``val_pairs`` each epoch.

    History row 0 holds the losses before any update. The returned model is a
    copy holding the lowest-validation-MSE snapshot when ``cfg.keep_best``,
    otherwise the final parameters.
    """
    if not train_pairs or not val_pairs:
        raise ParameterError("training and validation pair sets must be non-empty")
    for x, y in train_pairs[:1] + val_pairs[:1]:
        model.check_input(x.shape)
        if y.shape[-1] != model.config.k * x.shape[-1]:
            raise ShapeError(f"pair slice counts {x.shape[-1]} -> {y.shape[-1]} do not match k = {model.config.k}")

    model = model.copy()
    opt = torch.optim.Adam(
        model.net.parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
    )
    shuffle = np.random.default_rng(cfg.seed)

    train_mse = evaluate_mse(model, train_pairs, cfg.batch_size)
    val_mse = evaluate_mse(model, val_pairs, cfg.batch_size)
    history = [{"epoch": 0, "train_mse": train_mse, "val_mse": val_mse}]
    best_val, best_params, best_epoch = val_mse, model.get_flat(), 0

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle.permutation(len(train_pairs))
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            x, y = _stack(train_pairs, order[start : start + cfg.batch_size], model)
            opt.zero_grad(set_to_none=False)
            loss = model_mod._loss_and_grad(model, x, y)
            value = float(loss.detach())
            if not np.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            opt.step()
            total += value * y.numel()
            count += y.numel()
        train_mse = total / count
        val_mse = evaluate_mse(model, val_pairs, cfg.batch_size)
        if not np.isfinite(val_mse):
            raise TrainingError(f"validation loss diverged at epoch {epoch}", epoch=epoch)
        history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse})
        logger.info("epoch %d train_mse %.6g val_mse %.6g", epoch, train_mse, val_mse)
        if val_mse < best_val:
            best_val, best_params, best_epoch = val_mse, model.get_flat(), epoch

    if cfg.keep_best:
        model.set_flat(best_params)
    model.best_epoch = best_epoch if cfg.keep_best else cfg.epochs
    return model, history


def history_csv(history):
    lines = ["epoch,train_mse,val_mse"]
    lines += [f"{h['epoch']},{h['train_mse']!r},{h['val_mse']!r}" for h in history]
    return "\n".join(lines) + "\n"


def enhance(model, lf, patch_xy=32, patch_z_lf=4, stride=None, batch_size=8):
    """Super-resolve a whole LF volume by overlapping patches.

    The output keeps the in-plane grid, has ``k`` times as many slices and
    spacing divided by ``k`` along the slice axis.
    """
    k = model.config.k
    axis = lf.slice_axis
    data = np.moveaxis(lf.data, axis, 2)
    patch = (patch_xy, patch_xy, patch_z_lf)
    if any(n < p for n, p in zip(data.shape, patch)):
        raise ShapeError(f"volume {data.shape} is smaller than one patch {patch}")
    if stride is None:
        stride = (patch_xy // 2, patch_xy // 2, max(1, patch_z_lf // 2))
    origins = tile_grid(data.shape, patch, stride)

    preds = []
    for start in range(0, len(origins), batch_size):
        chunk = origins[start : start + batch_size]
        x = np.stack([data[ox : ox + patch_xy, oy : oy + patch_xy, oz : oz + patch_z_lf] for ox, oy, oz in chunk])
        preds.extend(model_mod.forward(model, x[:, None])[:, 0].astype(np.float64))
    hf_origins = [(ox, oy, k * oz) for ox, oy, oz in origins]
    out_shape = (data.shape[0], data.shape[1], k * data.shape[2])
    out, _ = stitch(preds, hf_origins, out_shape)

    spacing = list(lf.spacing)
    spacing[axis] = spacing[axis] / k
    return replace(lf.with_data(np.moveaxis(out, 2, axis), spacing=tuple(spacing)), orientation=None)
