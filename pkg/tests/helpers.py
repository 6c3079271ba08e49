"""Shared test oracles."""

import numpy as np
import torch

from lfiqt.srnet import SrModel, SrModelConfig, loss_mse
from lfiqt.srnet import model as model_mod

TINY = dict(k=2, levels=1, base_channels=2)


def tiny_problem(seed):
    rng = np.random.default_rng(seed)
    model = SrModel(SrModelConfig(**TINY), seed=seed, dtype=torch.float64)
    # bias the weights away from zero so every layer is exercised
    model.set_flat(model.get_flat() + 0.05 * rng.normal(size=model.parameter_count))
    x = rng.normal(size=(1, 1, 8, 8, 2))
    y = rng.normal(size=(1, 1, 8, 8, 4))
    return model, x, y


def _signs(model, x):
    """Pre-activation sign pattern of every hidden layer."""
    out = []
    hooks = [layer.register_forward_hook(lambda m, i, o: out.append(o.detach() > 0)) for layer in model.net.layers()[:-1]]
    try:
        with torch.no_grad():
            model.apply(model_mod.as_tensor(model, x))
    finally:
        for h in hooks:
            h.remove()
    return out


def fd_check(model, x, y, n_coords=200, h=1e-4, seed=0, max_draws=5000):
    """Central differences on random coordinates whose stencil stays on one side of every kink.

    Returns (max relative error, number of coordinates skipped).
    """
    grad = model_mod.gradient(model, x, y)
    theta = model.get_flat()
    rng = np.random.default_rng(seed)

    def loss_at(t):
        model.set_flat(t)
        return loss_mse(model_mod.forward(model, x), y)

    worst, used, skipped = 0.0, 0, 0
    for _ in range(max_draws):
        if used == n_coords:
            break
        i = int(rng.integers(theta.size))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        model.set_flat(tp)
        sp = _signs(model, x)
        model.set_flat(tm)
        sm = _signs(model, x)
        if any(bool((a != b).any()) for a, b in zip(sp, sm)):
            skipped += 1
            continue
        fd = (loss_at(tp) - loss_at(tm)) / (2 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / denom)
        used += 1
    model.set_flat(theta)
    if used < n_coords:
        raise RuntimeError(f"only {used} usable coordinates")
    return worst, skipped
