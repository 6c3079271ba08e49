"""Anisotropic U-Net: in-plane encoder/decoder, x``k`` slice-axis head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import NumericError, ParameterError, ShapeError

STANDARDIZE_MODES = ("scale", "affine", "none")


@dataclass(frozen=True)
class SrModelConfig:
    """Architecture of the super-resolution network.

    ``standardize`` controls per-patch input normalisation: ``scale`` divides
    by the patch RMS and multiplies the output back; ``affine`` also removes
    and restores the patch mean; ``none`` feeds raw intensities.
    """

    k: int
    levels: int = 3
    base_channels: int = 16
    kernel: tuple = (3, 3, 3)
    leaky_slope: float = 0.01
    standardize: str = "scale"
    residual: bool = False

    def __post_init__(self):
        if int(self.k) < 2:
            raise ParameterError(f"upsampling factor k must be >= 2, got {self.k}")
        if self.levels < 1 or self.base_channels < 1:
            raise ParameterError("levels and base_channels must be >= 1")
        if any(int(c) % 2 == 0 for c in self.kernel):
            raise ParameterError("conv kernel sizes must be odd")
        if self.standardize not in STANDARDIZE_MODES:
            raise ParameterError(f"standardize must be one of {STANDARDIZE_MODES}")
        object.__setattr__(self, "kernel", tuple(int(c) for c in self.kernel))

    @property
    def in_plane_multiple(self):
        return 2**self.levels

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["kernel"] = tuple(d.get("kernel", (3, 3, 3)))
        return cls(**d)


class AnisoUNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        pad = tuple(c // 2 for c in cfg.kernel)
        chans = [cfg.base_channels * 2**level for level in range(cfg.levels + 1)]

        def conv(cin, cout):
            return nn.Conv3d(cin, cout, cfg.kernel, padding=pad)

        self.enc = nn.ModuleList()
        cin = 1
        for c in chans:
            self.enc.append(nn.ModuleList([conv(cin, c), conv(c, c)]))
            cin = c
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for level in range(cfg.levels - 1, -1, -1):
            c = chans[level]
            self.up.append(nn.ConvTranspose3d(chans[level + 1], c, (2, 2, 1), stride=(2, 2, 1)))
            self.dec.append(nn.ModuleList([conv(2 * c, c), conv(c, c)]))
        c0 = chans[0]
        self.head_up = nn.ConvTranspose3d(c0, c0, (1, 1, cfg.k), stride=(1, 1, cfg.k))
        self.head_conv = conv(c0, c0)
        self.out = nn.Conv3d(c0, 1, 1)

    def layers(self):
        """Parameterised layers in execution order (indices used in diagnostics)."""
        seq = []
        for pair in self.enc:
            seq.extend(pair)
        for up, pair in zip(self.up, self.dec):
            seq.append(up)
            seq.extend(pair)
        seq.extend([self.head_up, self.head_conv, self.out])
        return seq

    def forward(self, x, check=False):
        slope = self.cfg.leaky_slope
        index = [0]

        def run(layer, h, act=True):
            h = layer(h)
            if check and not torch.isfinite(h).all():
                raise NumericError(f"non-finite activation after layer {index[0]}", layer=index[0])
            index[0] += 1
            return F.leaky_relu(h, slope) if act else h

        skips = []
        h = x
        for level, (c1, c2) in enumerate(self.enc):
            if level > 0:
                h = F.avg_pool3d(h, (2, 2, 1))
            h = run(c2, run(c1, h))
            skips.append(h)
        h = skips.pop()
        for up, (c1, c2) in zip(self.up, self.dec):
            h = run(up, h)
            h = torch.cat([h, skips.pop()], dim=1)
            h = run(c2, run(c1, h))
        h = run(self.head_up, h)
        h = run(self.head_conv, h)
        return run(self.out, h, act=False)


def _fan_in(layer):
    w = layer.weight
    if isinstance(layer, nn.ConvTranspose3d):
        return w.shape[0] * math.prod(w.shape[2:]) / math.prod(layer.stride)
    return w.shape[1] * math.prod(w.shape[2:])


class SrModel:
    """Network plus configuration; parameters also viewable as one flat vector."""

    def __init__(self, config, seed=0, dtype=torch.float32, init="uniform"):
        self.config = config
        self.dtype = dtype
        self.best_epoch = None
        self.net = AnisoUNet(config).to(dtype)
        self.initialize(seed, init)

    def initialize(self, seed, init="uniform"):
        """Fan-in-scaled uniform weights (or all zeros); biases zero."""
        gen = torch.Generator().manual_seed(int(seed))
        layers = self.net.layers()
        with torch.no_grad():
            for i, layer in enumerate(layers):
                layer.bias.zero_()
                if init == "zero":
                    layer.weight.zero_()
                    continue
                gain = 1.0 if i == len(layers) - 1 else 2.0 / (1.0 + self.config.leaky_slope**2)
                bound = math.sqrt(3.0 * gain / _fan_in(layer))
                w = torch.rand(layer.weight.shape, generator=gen, dtype=torch.float64)
                layer.weight.copy_((2.0 * w - 1.0) * bound)
        if init not in ("uniform", "zero"):
            raise ParameterError(f"unknown init {init!r}")

    @property
    def parameter_count(self):
        return sum(p.numel() for p in self.net.parameters())

    def get_flat(self):
        return nn.utils.parameters_to_vector(self.net.parameters()).detach().cpu().numpy().astype(np.float64)

    def set_flat(self, vec):
        vec = np.asarray(vec)
        if vec.shape != (self.parameter_count,):
            raise ShapeError(f"expected {self.parameter_count} parameters, got {vec.shape}")
        with torch.no_grad():
            nn.utils.vector_to_parameters(torch.as_tensor(vec, dtype=self.dtype), self.net.parameters())

    def copy(self):
        clone = SrModel(self.config, dtype=self.dtype, init="zero")
        clone.net.load_state_dict(self.net.state_dict())
        clone.best_epoch = self.best_epoch
        return clone

    def check_input(self, shape):
        if len(shape) != 5 or shape[1] != 1:
            raise ShapeError(f"expected input (batch, 1, x, y, z), got {tuple(shape)}")
        m = self.config.in_plane_multiple
        if shape[2] % m or shape[3] % m:
            raise ShapeError(f"in-plane dims {tuple(shape[2:4])} must be divisible by {m}")

    def apply(self, x, check=False):
        """Torch forward including per-patch standardisation."""
        cfg = self.config
        dims = (1, 2, 3, 4)
        if cfg.standardize == "none":
            shift, scale = 0.0, 1.0
        else:
            if cfg.standardize == "affine":
                shift = x.mean(dim=dims, keepdim=True)
                centred = x - shift
            else:
                shift, centred = 0.0, x
            rms = torch.sqrt((centred**2).mean(dim=dims, keepdim=True))
            scale = torch.where(rms > 1e-12, rms, torch.ones_like(rms))
        z = (x - shift) / scale
        y = self.net(z, check=check)
        if cfg.residual:
            y = y + torch.repeat_interleave(z, cfg.k, dim=4)
        return y * scale + shift


def as_tensor(model, x):
    return torch.as_tensor(np.asarray(x), dtype=model.dtype)


def forward(model, x):
    """Predict HF patches for a (batch, 1, x, y, z) array of LF patches."""
    x = np.asarray(x)
    model.check_input(x.shape)
    with torch.no_grad():
        return model.apply(as_tensor(model, x)).cpu().numpy()


def loss_mse(pred, target):
    """Mean squared voxel error."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    return float(np.mean((pred - target) ** 2))


def _loss_and_grad(model, x, y, check=False):
    model.net.zero_grad(set_to_none=False)
    pred = model.apply(x, check=check)
    if pred.shape != y.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(y.shape)} differ")
    loss = torch.mean((pred - y) ** 2)
    loss.backward()
    return loss


def gradient(model, x, y):
    """Reverse-mode gradient of the MSE loss w.r.t. the flat parameter vector."""
    x = np.asarray(x)
    model.check_input(x.shape)
    _loss_and_grad(model, as_tensor(model, x), as_tensor(model, y), check=True)
    grads = []
    for i, layer in enumerate(model.net.layers()):
        for p in (layer.weight, layer.bias):
            if not torch.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient in layer {i}", layer=i)
    for p in model.net.parameters():
        grads.append(p.grad.reshape(-1))
    return torch.cat(grads).detach().cpu().numpy().astype(np.float64)
