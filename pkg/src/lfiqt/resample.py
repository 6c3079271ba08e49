"""Through-plane degradation and the cubic B-spline upsampling baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GeometryError, ParameterError, ShapeError

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
BSPLINE_POLE = math.sqrt(3.0) - 2.0


@dataclass(frozen=True)
class SliceGeometry:
    """Slice thickness and gap in mm; ``offset`` defaults to half a period."""

    st: float
    gap: float = 0.0
    axis: int = 2
    offset: Optional[float] = None

    def __post_init__(self):
        if not (self.st > 0 and math.isfinite(self.st)):
            raise GeometryError(f"slice thickness must be > 0, got {self.st}")
        if not (self.gap >= 0 and math.isfinite(self.gap)):
            raise GeometryError(f"gap must be >= 0, got {self.gap}")
        if self.axis not in (0, 1, 2):
            raise GeometryError(f"invalid slice axis {self.axis}")
        if self.offset is None:
            object.__setattr__(self, "offset", self.period / 2)
        if not (0 <= self.offset < self.period):
            raise GeometryError(f"offset {self.offset} outside [0, {self.period})")

    @property
    def period(self):
        return self.st + self.gap


def gaussian_kernel(sigma_vox):
    radius = int(math.floor(4.0 * sigma_vox + 1e-9))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma_vox) ** 2)
    return k / k.sum()


def _shifted(a, axis, shift):
    """View of ``a`` shifted by ``shift`` along ``axis`` with zero fill."""
    out = np.zeros_like(a)
    n = a.shape[axis]
    if abs(shift) >= n:
        return out
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if shift >= 0:
        src[axis], dst[axis] = slice(0, n - shift), slice(shift, n)
    else:
        src[axis], dst[axis] = slice(-shift, n), slice(0, n + shift)
    out[tuple(dst)] = a[tuple(src)]
    return out


def gaussian_blur_axis(v, axis, fwhm_mm):
    """Blur along one axis with a Gaussian of the given FWHM (mm).

    The kernel is truncated at +/-4 sigma. Near the volume edge the weights
    that fall outside are dropped and the rest renormalized.
    """
    if not (fwhm_mm > 0 and math.isfinite(fwhm_mm)):
        raise ParameterError(f"fwhm must be > 0, got {fwhm_mm}")
    sigma = fwhm_mm * FWHM_TO_SIGMA / v.spacing[axis]
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    if radius == 0:
        return v

    data = v.data
    shape1 = [1, 1, 1]
    shape1[axis] = data.shape[axis]
    ones = np.ones(shape1)
    acc = np.zeros_like(data)
    norm = np.zeros(shape1)
    for i, w in enumerate(kernel):
        shift = i - radius
        acc += w * _shifted(data, axis, shift)
        norm += w * _shifted(ones, axis, shift)
    return v.with_data(acc / norm)


def slice_indices(n, spacing, g):
    """Source indices selected by ``g`` along an axis of ``n`` voxels."""
    if g.period < spacing * (1 - 1e-9):
        raise GeometryError(f"sampling period {g.period} mm is finer than source spacing {spacing} mm")
    extent = (n - 1) * spacing
    count = int(math.floor((extent - g.offset) / g.period + 1e-9)) + 1 if extent >= g.offset else 0
    if count < 2:
        raise GeometryError(f"only {count} slice(s) fit; need at least 2")
    pos = g.offset + g.period * np.arange(count)
    idx = np.floor(pos / spacing + 0.5 + 1e-9).astype(int)
    return np.minimum(idx, n - 1)


def sample_slices(v, g):
    """Keep the source slices nearest to ``offset + i * (st + gap)`` mm.

    Pure selection, no averaging; the output spacing along the axis is the
    sampling period.
    """
    idx = slice_indices(v.shape[g.axis], v.spacing[g.axis], g)
    spacing = list(v.spacing)
    spacing[g.axis] = g.period
    return v.with_data(np.take(v.data, idx, axis=g.axis), spacing=tuple(spacing))


def bspline_prefilter(s, axis=0):
    """Cubic B-spline coefficients interpolating ``s`` along ``axis``.

    Exact causal/anti-causal recursion with mirror (whole-sample symmetric)
    boundaries.
    """
    z = BSPLINE_POLE
    c = np.moveaxis(np.asarray(s, dtype=np.float64), axis, 0) * 6.0
    n = c.shape[0]
    if n == 1:
        return np.moveaxis(c / 6.0, 0, axis)
    out = np.empty_like(c)

    # causal init: exact sum over the mirrored period 2n-2
    z2n = z ** (2 * n - 2)
    acc = c[0] + z ** (n - 1) * c[n - 1]
    zk = z
    for k in range(1, n - 1):
        acc = acc + (zk + z2n / zk) * c[k]
        zk *= z
    out[0] = acc / (1.0 - z2n)
    for k in range(1, n):
        out[k] = c[k] + z * out[k - 1]

    last = out[n - 1].copy()
    out[n - 1] = (z / (z * z - 1.0)) * (last + z * out[n - 2])
    for k in range(n - 2, -1, -1):
        out[k] = z * (out[k + 1] - out[k])
    return np.moveaxis(out, 0, axis)


def _mirror_index(i, n):
    if n == 1:
        return np.zeros_like(i)
    period = 2 * n - 2
    i = np.mod(i, period)
    return np.where(i >= n, period - i, i)


def _cubic_bspline(t):
    t = np.abs(t)
    return np.where(
        t < 1,
        2.0 / 3.0 - t**2 + 0.5 * t**3,
        np.where(t < 2, (2.0 - t) ** 3 / 6.0, 0.0),
    )


def bspline_evaluate(coeffs, positions, axis=0):
    """Evaluate a cubic B-spline with mirror-extended coefficients."""
    c = np.moveaxis(coeffs, axis, 0)
    n = c.shape[0]
    positions = np.asarray(positions, dtype=np.float64)
    base = np.floor(positions).astype(int)
    out = np.zeros((len(positions),) + c.shape[1:])
    bshape = (len(positions),) + (1,) * (c.ndim - 1)
    for d in (-1, 0, 1, 2):
        k = base + d
        w = _cubic_bspline(positions - k).reshape(bshape)
        out += w * c[_mirror_index(k, n)]
    return np.moveaxis(out, 0, axis)


def bspline_upsample(v, axis, k, phase=0.0):
    """Cubic B-spline interpolation with ``k`` output samples per input slice.

    Output sample ``j`` sits at input coordinate ``(j - phase) / k``; with the
    default phase 0, samples ``j = 0, k, 2k, ...`` land on the original
    slices. A non-zero phase aligns the output with a finer reference grid.
    """
    k = int(k)
    if k < 2:
        raise ParameterError(f"upsampling factor must be >= 2, got {k}")
    n = v.shape[axis]
    if n < 4:
        raise ShapeError(f"need at least 4 slices along axis {axis}, got {n}")
    coeffs = bspline_prefilter(v.data, axis)
    positions = (np.arange(k * n) - phase) / k
    spacing = list(v.spacing)
    spacing[axis] = spacing[axis] / k
    return v.with_data(bspline_evaluate(coeffs, positions, axis), spacing=tuple(spacing))
