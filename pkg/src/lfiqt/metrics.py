"""SSIM / PSNR / MSE and paired enhanced-vs-baseline reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class SsimParams:
    """Box window of ``window``^3 voxels; ``data_range`` None means max-min of the reference."""

    window: int = 7
    k1: float = 0.01
    k2: float = 0.03
    data_range: Optional[float] = None
    mask: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ParameterError(f"SSIM window must be odd and >= 3, got {self.window}")


def _arrays(a, b, what):
    a = getattr(a, "data", a)
    b = getattr(b, "data", b)
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: dims {np.shape(a)} vs {np.shape(b)}")
    return np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)


def resolve_range(ref, p):
    L = p.data_range
    if L is None:
        L = float(ref.max() - ref.min())
    if not (L > 0 and math.isfinite(L)):
        raise ParameterError(f"SSIM data range must be > 0, got {L}")
    return L


def ssim_map(a, b, p=SsimParams()):
    """Per-voxel SSIM from box-window local statistics (mirror padding)."""
    a, b = _arrays(a, b, "ssim")
    L = resolve_range(b, p)
    c1 = (p.k1 * L) ** 2
    c2 = (p.k2 * L) ** 2

    def mean(x):
        return ndimage.uniform_filter(x, size=p.window, mode="mirror")

    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a * mu_a
    var_b = mean(b * b) - mu_b * mu_b
    cov = mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, p=SsimParams()):
    """Mean local SSIM over the mask (or all voxels). ``b`` is the reference."""
    m = ssim_map(a, b, p)
    if p.mask is not None:
        mask = np.asarray(p.mask, dtype=bool)
        if mask.shape != m.shape:
            raise ShapeError(f"ssim mask dims {mask.shape} vs {m.shape}")
        m = m[mask]
        if m.size == 0:
            raise ParameterError("ssim mask is empty")
    return float(np.mean(m))


def mse(a, b):
    a, b = _arrays(a, b, "mse")
    return float(np.mean((a - b) ** 2))


def psnr(a, ref, L):
    """PSNR in dB; ``math.inf`` when the volumes are identical."""
    if not (L > 0):
        raise ParameterError(f"PSNR data range must be > 0, got {L}")
    err = mse(a, ref)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(L * L / err)


@dataclass
class PairMetrics:
    pair: str
    ssim: float
    psnr: float
    mse: float
    n_voxels: int

    @property
    def identical(self):
        return math.isinf(self.psnr)


@dataclass
class MetricsReport:
    enhanced: PairMetrics
    baseline: PairMetrics
    window: int
    k1: float
    k2: float
    data_range: float

    @property
    def ssim_difference(self):
        return self.enhanced.ssim - self.baseline.ssim

    def rows(self):
        out = []
        for r in (self.enhanced, self.baseline):
            out.append(
                {
                    "pair": r.pair,
                    "ssim": r.ssim,
                    "psnr_db": "identical" if r.identical else r.psnr,
                    "mse": r.mse,
                    "n_voxels": r.n_voxels,
                    "window": self.window,
                    "k1": self.k1,
                    "k2": self.k2,
                    "L": self.data_range,
                }
            )
        return out

    def to_csv(self):
        buf = io.StringIO()
        rows = self.rows()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"pairs": self.rows(), "ssim_difference": self.ssim_difference}, indent=2)


def evaluate_pair(enhanced, baseline, reference, mask=None, p=SsimParams()):
    """SSIM/PSNR/MSE of enhanced and baseline volumes against a reference."""
    ref = getattr(reference, "data", reference)
    for name, v in (("enhanced", enhanced), ("baseline", baseline)):
        if np.shape(getattr(v, "data", v)) != np.shape(ref):
            raise ShapeError(f"{name} vs reference: dims {np.shape(getattr(v, 'data', v))} vs {np.shape(ref)}")
    if mask is not None:
        mask = np.asarray(getattr(mask, "data", mask)) > 0
        p = SsimParams(p.window, p.k1, p.k2, p.data_range, mask)
    L = resolve_range(np.asarray(ref, dtype=np.float64), p)
    p = SsimParams(p.window, p.k1, p.k2, L, p.mask)
    sel = np.ones(np.shape(ref), dtype=bool) if p.mask is None else p.mask

    def one(name, v):
        a, r = _arrays(v, ref, name)
        return PairMetrics(
            name,
            ssim(a, r, p),
            psnr(a[sel], r[sel], L),
            mse(a[sel], r[sel]),
            int(sel.sum()),
        )

    return MetricsReport(one("enhanced", enhanced), one("baseline", baseline), p.window, p.k1, p.k2, L)
