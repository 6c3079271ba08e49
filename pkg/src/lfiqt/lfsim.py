"""Low-field simulation: SNR estimation, contrast change, noise, full pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, IqtError, ParameterError, ShapeError, SimulationError
from .resample import SliceGeometry, gaussian_blur_axis, sample_slices
from .rng import gaussian_field
from .segment import skull_strip
from .volume import MembershipMaps, check_same_shape

PURE = 0.9
MIN_REGION_VOXELS = 500
NORMALIZATIONS = ("wm-anchored", "mean-preserving")


@dataclass(frozen=True)
class SnrTarget:
    snr_gm: float
    snr_wm: float

    def __post_init__(self):
        for name in ("snr_gm", "snr_wm"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ParameterError(f"{name} must be positive and finite, got {val}")


@dataclass(frozen=True)
class Multipliers:
    m_gm: float
    m_wm: float

    def __post_init__(self):
        for name in ("m_gm", "m_wm"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ParameterError(f"{name} must be positive and finite, got {val}")


@dataclass(frozen=True)
class SimParams:
    target: SnrTarget
    geometry: SliceGeometry
    seed: int = 0
    membership_threshold: float = 1e-3
    normalization: str = "wm-anchored"

    def __post_init__(self):
        if not (0 <= self.membership_threshold < 0.5):
            raise ParameterError("membership_threshold must lie in [0, 0.5)")
        if self.normalization not in NORMALIZATIONS:
            raise ParameterError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class SnrEstimate:
    snr_gm: float
    snr_wm: float
    mean_gm: float
    mean_wm: float
    sigma_noise: float
    n_gm: int
    n_wm: int
    n_bg: int


def _region(values, mask, name):
    n = int(np.count_nonzero(mask))
    if n < MIN_REGION_VOXELS:
        raise DataError(f"{name} region has {n} voxels; need >= {MIN_REGION_VOXELS}")
    return values[mask], n


def estimate_snr(v, maps, background_mask):
    """Tissue SNR = mean over pure tissue / std over background."""
    check_same_shape(v, maps, "volume and membership maps")
    background_mask = np.asarray(background_mask, dtype=bool)
    check_same_shape(v.data, background_mask, "volume and background mask")
    gm, n_gm = _region(v.data, maps.gm.data >= PURE, "GM")
    wm, n_wm = _region(v.data, maps.wm.data >= PURE, "WM")
    bg, n_bg = _region(v.data, background_mask, "background")
    sigma = float(bg.std(ddof=1))
    if sigma < 1e-12:
        raise DataError("zero noise in background region")
    mean_gm, mean_wm = float(gm.mean()), float(wm.mean())
    return SnrEstimate(mean_gm / sigma, mean_wm / sigma, mean_gm, mean_wm, sigma, n_gm, n_wm, n_bg)


def aggregate_snr(estimates, how="mean"):
    """Combine per-image SNRs into one target (``mean`` or ``median``)."""
    if not estimates:
        raise DataError("no SNR estimates to aggregate")
    fn = {"mean": np.mean, "median": np.median}.get(how)
    if fn is None:
        raise ParameterError(f"unknown aggregation {how!r}")
    return SnrTarget(
        float(fn([e.snr_gm for e in estimates])),
        float(fn([e.snr_wm for e in estimates])),
    )


def derive_multipliers(mean_gm_hf, mean_wm_hf, target):
    """WM-anchored multipliers giving a GM/WM mean ratio of snr_gm/snr_wm."""
    if not (mean_gm_hf > 0 and mean_wm_hf > 0):
        raise ParameterError("HF tissue means must be positive")
    ratio = target.snr_gm / target.snr_wm
    return Multipliers(ratio * mean_wm_hf / mean_gm_hf, 1.0)


def apply_contrast(v, maps, m, eps=1e-3):
    """Scale each voxel by the GM/WM-membership-weighted multiplier.

    Voxels with gm + wm below ``eps`` (CSF, background) pass through.
    """
    check_same_shape(v, maps, "volume and membership maps")
    gm, wm = maps.gm.data, maps.wm.data
    w = gm + wm
    keep = w >= eps
    factor = np.ones_like(w)
    factor[keep] = (gm[keep] * m.m_gm + wm[keep] * m.m_wm) / w[keep]
    return v.with_data(v.data * factor)


def mean_preserving(v, maps, m, eps=1e-3):
    """Rescale ``m`` so the brain's total signal is unchanged by the contrast step."""
    brain = maps.total() > 0
    before = v.data[brain].sum()
    after = apply_contrast(v, maps, m, eps).data[brain].sum()
    if before <= 0 or after <= 0:
        raise DataError("cannot preserve mean of a non-positive brain signal")
    c = before / after
    return Multipliers(m.m_gm * c, m.m_wm * c)


def derive_noise_sigma(v_contrast, maps, target):
    """Noise std that gives pure GM the target SNR."""
    check_same_shape(v_contrast, maps, "volume and membership maps")
    gm, _ = _region(v_contrast.data, maps.gm.data >= PURE, "GM")
    return float(gm.mean()) / target.snr_gm


def add_noise(v, sigma, seed):
    """Add i.i.d. N(0, sigma^2) noise from the counter-based stream for ``seed``."""
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ParameterError(f"noise sigma must be > 0, got {sigma}")
    return v.with_data(v.data + sigma * gaussian_field(seed, v.shape))


def degrade(v, geometry):
    """Through-plane blur at FWHM = slice thickness, then gapped sampling."""
    return sample_slices(gaussian_blur_axis(v, geometry.axis, geometry.st), geometry)


def degrade_maps(maps, geometry):
    def one(m):
        d = degrade(m, geometry)
        return d.with_data(np.clip(d.data, 0.0, 1.0))

    return maps.map(one)


def simulate_lf(hf, maps, p):
    """Simulate a low-field acquisition from a high-field volume.

    Runs skull-stripping, through-plane degradation, contrast change and noise
    addition in that order. The membership maps go through the same
    degradation so that contrast weights and noise level are computed on the
    LF grid.

    Returns:
        (lf, provenance) where provenance is a JSON-ready dict.
    """
    if maps is None:
        raise SimulationError(1, DataError("membership maps are required"))
    if not isinstance(maps, MembershipMaps):
        raise SimulationError(1, DataError("maps must be MembershipMaps"))
    if hf.shape != maps.shape:
        raise SimulationError(1, ShapeError(f"HF dims {hf.shape} differ from membership dims {maps.shape}"))
    g = p.geometry

    def step(n, fn, *args):
        try:
            return fn(*args)
        except IqtError as exc:
            raise SimulationError(n, exc) from exc

    stripped = step(2, skull_strip, hf, maps)
    lf_clean = step(3, degrade, stripped, g)
    lf_maps = step(3, degrade_maps, maps, g)

    def multipliers():
        gm, _ = _region(lf_clean.data, lf_maps.gm.data >= PURE, "GM")
        wm, _ = _region(lf_clean.data, lf_maps.wm.data >= PURE, "WM")
        m = derive_multipliers(float(gm.mean()), float(wm.mean()), p.target)
        if p.normalization == "mean-preserving":
            m = mean_preserving(lf_clean, lf_maps, m, p.membership_threshold)
        return m

    m = step(4, multipliers)
    contrasted = step(4, apply_contrast, lf_clean, lf_maps, m, p.membership_threshold)
    sigma = step(5, derive_noise_sigma, contrasted, lf_maps, p.target)
    lf = step(5, add_noise, contrasted, sigma, p.seed)

    lf = replace(lf, slice_axis=g.axis)
    provenance = {
        "m_gm": m.m_gm,
        "m_wm": m.m_wm,
        "sigma": sigma,
        "st_mm": g.st,
        "gap_mm": g.gap,
        "axis": g.axis,
        "offset_mm": g.offset,
        "seed": p.seed,
        "snr_gm_target": p.target.snr_gm,
        "snr_wm_target": p.target.snr_wm,
        "normalization": p.normalization,
        "membership_degradation": "maps blurred and sampled with the image geometry",
    }
    return lf, provenance


def lf_maps_and_background(maps, geometry):
    """LF-grid memberships and the complementary background mask."""
    lf_maps = degrade_maps(maps, geometry)
    return lf_maps, lf_maps.total() == 0
