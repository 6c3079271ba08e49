"""Desk-scale reproduction: phantoms -> LF simulation -> training -> evaluation."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .lfsim import SimParams, SnrTarget, simulate_lf
from .metrics import SsimParams, evaluate_pair
from .nifti import save_volume
from .phantom import make_phantom, scaled_spec
from .resample import SliceGeometry, bspline_upsample, slice_indices
from .srnet import (
    SrModel,
    SrModelConfig,
    TrainConfig,
    crop_to_lf,
    enhance,
    extract_patches,
    history_csv,
    save_checkpoint,
    train,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeskRecipe:
    dims: tuple = (64, 64, 64)
    spacing: float = 1.0
    n_train: int = 12
    n_val: int = 3
    n_eval: int = 8
    st: float = 6.0
    gap: float = 2.0
    snr_gm: float = 50.0
    snr_wm: float = 63.0
    seed: int = 0
    model: dict = field(default_factory=lambda: {"levels": 3, "base_channels": 8})
    training: dict = field(default_factory=lambda: {"epochs": 20, "batch_size": 8, "learning_rate": 1e-3})

    @property
    def k(self):
        k = (self.st + self.gap) / self.spacing
        if abs(k - round(k)) > 1e-9:
            raise ValueError(f"(st + gap) / spacing = {k} is not an integer")
        return int(round(k))

    def geometry(self):
        return SliceGeometry(self.st, self.gap, axis=2)

    def to_dict(self):
        return asdict(self)


PRESETS = {
    "desk": DeskRecipe(),
    "tiny": DeskRecipe(
        n_train=2,
        n_val=1,
        n_eval=1,
        model={"levels": 1, "base_channels": 4},
        training={"epochs": 2, "batch_size": 8, "learning_rate": 1e-3, "patch_xy": 16, "stride": (16, 16, 2)},
    ),
}


@dataclass
class Subject:
    name: str
    hf: object
    maps: object
    lf: object
    provenance: dict


def make_subject(recipe, index, role):
    seed = recipe.seed * 1000 + index
    jitter = np.random.default_rng([recipe.seed, index])
    spec = scaled_spec(recipe.dims, (recipe.spacing,) * 3, jitter=jitter)
    hf, maps = make_phantom(spec, seed)
    params = SimParams(SnrTarget(recipe.snr_gm, recipe.snr_wm), recipe.geometry(), seed=seed)
    lf, prov = simulate_lf(hf, maps, params)
    return Subject(f"{role}{index:02d}", hf, maps, lf, prov)


def subject_pairs(recipe, subject, tcfg):
    k = recipe.k
    n_lf = subject.lf.shape[2]
    hf = crop_to_lf(subject.hf, n_lf, k)
    maps = subject.maps.map(lambda m: crop_to_lf(m, n_lf, k))
    return extract_patches(
        hf,
        subject.lf,
        maps,
        tcfg.patch_xy,
        tcfg.patch_z_lf,
        tcfg.stride,
        tcfg.min_brain_fraction,
        k=k,
    )


def evaluate_subject(recipe, model, subject, tcfg):
    """Enhanced and B-spline volumes on the cropped HF grid, plus their report."""
    k = recipe.k
    n_lf = subject.lf.shape[2]
    ref = crop_to_lf(subject.hf, n_lf, k)
    brain = np.take(subject.maps.brain_mask(), np.arange(k * n_lf), axis=2)
    enhanced = enhance(model, subject.lf, tcfg.patch_xy, tcfg.patch_z_lf)
    # first LF slice sits on HF index idx0; align the spline's output with the HF grid
    idx0 = slice_indices(subject.hf.shape[2], subject.hf.spacing[2], recipe.geometry())[0]
    baseline = bspline_upsample(subject.lf, 2, k, phase=idx0)
    report = evaluate_pair(enhanced, baseline, ref, brain, SsimParams())
    return ref, enhanced, baseline, brain, report


def run_desk(recipe, out_dir=None):
    """Run the full acceptance recipe; returns a JSON-ready summary."""
    torch.manual_seed(recipe.seed)
    tcfg = TrainConfig(seed=recipe.seed, split=(recipe.n_train, recipe.n_val, recipe.n_eval), **recipe.training)
    mcfg = SrModelConfig(k=recipe.k, **recipe.model)

    n = recipe.n_train + recipe.n_val + recipe.n_eval
    subjects = [make_subject(recipe, i, "s") for i in range(n)]
    train_s = subjects[: recipe.n_train]
    val_s = subjects[recipe.n_train : recipe.n_train + recipe.n_val]
    eval_s = subjects[recipe.n_train + recipe.n_val :]

    train_pairs = [p for s in train_s for p in subject_pairs(recipe, s, tcfg)]
    val_pairs = [p for s in val_s for p in subject_pairs(recipe, s, tcfg)]
    logger.info("%d training / %d validation patches", len(train_pairs), len(val_pairs))

    model = SrModel(mcfg, seed=recipe.seed)
    model, history = train(model, train_pairs, val_pairs, tcfg)

    rows = []
    for s in eval_s:
        ref, enhanced, baseline, brain, report = evaluate_subject(recipe, model, s, tcfg)
        rows.append((s, ref, enhanced, baseline, report))

    summary = {
        "recipe": recipe.to_dict(),
        "k": recipe.k,
        "n_train_patches": len(train_pairs),
        "n_val_patches": len(val_pairs),
        "best_epoch": model.best_epoch,
        "mean_ssim_enhanced": float(np.mean([r[4].enhanced.ssim for r in rows])),
        "mean_ssim_baseline": float(np.mean([r[4].baseline.ssim for r in rows])),
        "subjects": {r[0].name: {"ssim_enhanced": r[4].enhanced.ssim, "ssim_baseline": r[4].baseline.ssim} for r in rows},
    }
    summary["ssim_margin"] = summary["mean_ssim_enhanced"] - summary["mean_ssim_baseline"]

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(model, os.path.join(out_dir, "model.ckpt"), {"recipe": recipe.to_dict(), "train": tcfg.to_dict()})
        with open(os.path.join(out_dir, "history.csv"), "w") as fh:
            fh.write(history_csv(history))
        lines = []
        for s, ref, enhanced, baseline, report in rows:
            for name, v in (("hf", ref), ("lf", s.lf), ("enhanced", enhanced), ("baseline", baseline)):
                save_volume(v, os.path.join(out_dir, f"{s.name}_{name}.nii.gz"))
            csv_text = report.to_csv().splitlines()
            if not lines:
                lines.append("subject," + csv_text[0])
            lines.extend(f"{s.name},{row}" for row in csv_text[1:])
        with open(os.path.join(out_dir, "report.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return summary, model, history
