import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import map_coordinates

from lfiqt.errors import GeometryError, ParameterError, ShapeError
from lfiqt.resample import (
    SliceGeometry,
    bspline_upsample,
    gaussian_blur_axis,
    sample_slices,
)
from lfiqt.volume import Volume


def impulse(n=65, spacing=1.0):
    d = np.zeros((1, 1, n))
    d[0, 0, n // 2] = 1.0
    return Volume(d, (1.0, 1.0, spacing))


def brute_force_blur(line, sigma):
    """Direct O(n * taps) convolution with explicit edge renormalisation."""
    r = int(math.floor(4 * sigma + 1e-9))
    out = np.empty_like(line)
    for i in range(len(line)):
        num = den = 0.0
        for j in range(i - r, i + r + 1):
            if 0 <= j < len(line):
                w = math.exp(-0.5 * ((j - i) / sigma) ** 2)
                num += w * line[j]
                den += w
        out[i] = num / den
    return out


def half_max_width(y, spacing):
    peak = y.max()
    half = peak / 2
    above = np.nonzero(y >= half)[0]
    lo, hi = above[0], above[-1]
    left = lo - 1 + (half - y[lo - 1]) / (y[lo] - y[lo - 1])
    right = hi + (y[hi] - half) / (y[hi] - y[hi + 1])
    return (right - left) * spacing


def test_blur_preserves_constant():
    v = Volume(np.full((4, 5, 30), 3.7), (1, 1, 0.7))
    out = gaussian_blur_axis(v, 2, 6.0)
    assert np.max(np.abs(out.data - 3.7)) <= 1e-12
    assert out.spacing == v.spacing


def test_impulse_response_matches_gaussian():
    out = gaussian_blur_axis(impulse(), 2, 6.0).data[0, 0]
    sigma = 6.0 / (2 * math.sqrt(2 * math.log(2)))
    assert sigma == pytest.approx(2.5480, abs=1e-4)
    x = np.arange(65) - 32
    expected = np.where(np.abs(x) <= 4 * sigma, np.exp(-0.5 * (x / sigma) ** 2), 0.0)
    expected /= expected.sum()
    assert np.allclose(out, expected, rtol=0, atol=1e-14)
    assert out[32] == pytest.approx(1 / (sigma * math.sqrt(2 * math.pi)), rel=1e-3)


@pytest.mark.parametrize("spacing", [1.0, 0.7, 0.5])
def test_impulse_fwhm(spacing):
    n = int(60 / spacing) | 1
    out = gaussian_blur_axis(impulse(n, spacing), 2, 6.0).data[0, 0]
    assert half_max_width(out, spacing) == pytest.approx(6.0, abs=0.15)


def test_blur_matches_brute_force_near_edges(rng):
    line = rng.normal(size=40)
    v = Volume(line.reshape(1, 1, 40), (1, 1, 1.5))
    sigma = 6.0 / (2 * math.sqrt(2 * math.log(2))) / 1.5
    assert np.allclose(gaussian_blur_axis(v, 2, 6.0).data[0, 0], brute_force_blur(line, sigma), atol=1e-13)


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_blur_axis_selection(rng, axis):
    d = rng.normal(size=(12, 13, 14))
    out = gaussian_blur_axis(Volume(d, (1, 1, 1)), axis, 3.0).data
    sigma = 3.0 / (2 * math.sqrt(2 * math.log(2)))
    line = np.moveaxis(d, axis, -1)[5, 6]
    got = np.moveaxis(out, axis, -1)[5, 6]
    assert np.allclose(got, brute_force_blur(line, sigma), atol=1e-13)


def test_blur_rejects_bad_fwhm():
    with pytest.raises(ParameterError):
        gaussian_blur_axis(impulse(), 2, 0.0)


@settings(max_examples=25, deadline=None)
@given(
    alpha=st.floats(-10, 10),
    beta=st.floats(-10, 10),
    seed=st.integers(0, 2**16),
)
def test_blur_linearity(alpha, beta, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(3, 3, 20)), r.normal(size=(3, 3, 20))
    blur = lambda d: gaussian_blur_axis(Volume(d, (1, 1, 1)), 2, 4.0).data
    lhs = blur(alpha * a + beta * b)
    rhs = alpha * blur(a) + beta * blur(b)
    scale = max(1.0, np.abs(lhs).max())
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_blur_mass_preserved_away_from_edges(rng):
    d = np.zeros((2, 2, 80))
    d[:, :, 30:50] = rng.uniform(1, 2, size=(2, 2, 20))
    out = gaussian_blur_axis(Volume(d, (1, 1, 1)), 2, 6.0).data
    assert out.sum() == pytest.approx(d.sum(), rel=1e-9)


def test_low_field_09x09x72_geometry():
    v = Volume(np.zeros((2, 2, 160)), (0.9, 0.9, 0.9))
    out = sample_slices(v, SliceGeometry(6.0, 1.2))
    assert out.shape[2] == 20
    assert out.spacing == (0.9, 0.9, pytest.approx(7.2))


def test_identity_geometry(rng):
    d = rng.normal(size=(3, 3, 9))
    out = sample_slices(Volume(d, (1, 1, 1)), SliceGeometry(1.0, 0.0, offset=0.0))
    assert np.array_equal(out.data, d)


def test_ramp_sampling():
    n, s = 160, 0.9
    d = np.broadcast_to(np.arange(n) * s, (1, 1, n))
    out = sample_slices(Volume(d, (1, 1, s)), SliceGeometry(6.0, 1.2, offset=0.0)).data[0, 0]
    expected = 7.2 * np.arange(len(out))
    assert np.all(np.abs(out - expected) <= s)
    # positions are exact multiples here, so selection lands on 8 * i
    assert np.allclose(out, 8 * 0.9 * np.arange(len(out)))


def test_default_offset_centres_first_slice():
    g = SliceGeometry(6.0, 2.0)
    assert g.offset == 4.0
    d = np.broadcast_to(np.arange(64.0), (1, 1, 64))
    out = sample_slices(Volume(d, (1, 1, 1)), g).data[0, 0]
    assert np.array_equal(out, 4.0 + 8.0 * np.arange(8))


def test_too_few_slices():
    with pytest.raises(GeometryError):
        sample_slices(Volume(np.zeros((1, 1, 8)), (1, 1, 1)), SliceGeometry(6.0, 2.0))


def test_period_finer_than_spacing():
    with pytest.raises(GeometryError):
        sample_slices(Volume(np.zeros((1, 1, 40)), (1, 1, 2.0)), SliceGeometry(1.0, 0.0))


@pytest.mark.parametrize("bad", [dict(st=0.0), dict(st=6.0, gap=-1.0), dict(st=6.0, gap=2.0, offset=8.0)])
def test_invalid_geometry(bad):
    with pytest.raises(GeometryError):
        SliceGeometry(**bad)


def test_sampling_commutes_with_selection(rng):
    d = rng.normal(size=(4, 4, 64))
    v = Volume(d, (1, 1, 1))
    g = SliceGeometry(6.0, 2.0)
    blurred = gaussian_blur_axis(v, 2, 6.0)
    sampled = sample_slices(blurred, g)
    rows = [int(np.floor(p + 0.5)) for p in g.offset + g.period * np.arange(sampled.shape[2])]
    assert np.array_equal(sampled.data, blurred.data[:, :, rows])


def test_bspline_constant():
    v = Volume(np.full((2, 3, 6), 4.25), (1, 1, 8))
    out = bspline_upsample(v, 2, 8)
    assert out.shape == (2, 3, 48)
    assert out.spacing == (1, 1, 1)
    assert np.allclose(out.data, 4.25, rtol=1e-12)


@pytest.mark.parametrize("k", [2, 6, 8])
def test_bspline_interpolation_condition(rng, k):
    d = rng.uniform(1, 10, size=(3, 2, 11))
    out = bspline_upsample(Volume(d, (1, 1, 1)), 2, k).data
    assert np.max(np.abs(out[:, :, ::k] - d) / np.abs(d)) <= 1e-9


def test_bspline_cubic_reproduction():
    p = lambda z: 0.02 * z**3 - 0.5 * z**2 + 3 * z + 40
    n, k = 40, 8
    d = np.broadcast_to(p(np.arange(n, dtype=float)), (1, 1, n))
    out = bspline_upsample(Volume(d, (1, 1, 1)), 2, k).data[0, 0]
    z = np.arange(k * n) / k
    interior = (z >= 14) & (z <= 25)
    assert np.max(np.abs(out[interior] - p(z[interior])) / np.abs(p(z[interior]))) <= 1e-6


def test_bspline_matches_scipy_mirror(rng):
    # scipy's spline filter is an independent implementation of the same interpolant
    d = rng.normal(size=(2, 2, 9))
    k, phase = 4, 1.5
    out = bspline_upsample(Volume(d, (1, 1, 1)), 2, k, phase=phase).data
    pos = (np.arange(k * 9) - phase) / k
    ref = np.array([[map_coordinates(d[i, j], [pos], order=3, mode="mirror") for j in range(2)] for i in range(2)])
    assert np.allclose(out, ref, atol=1e-12)


@pytest.mark.parametrize("axis", [0, 1])
def test_bspline_other_axes(rng, axis):
    d = rng.normal(size=(6, 7, 5))
    out = bspline_upsample(Volume(d, (2, 2, 2)), axis, 3).data
    assert out.shape[axis] == 3 * d.shape[axis]
    assert np.allclose(np.take(out, np.arange(0, out.shape[axis], 3), axis=axis), d, atol=1e-12)


def test_bspline_needs_four_slices():
    with pytest.raises(ShapeError):
        bspline_upsample(Volume(np.zeros((2, 2, 3)), (1, 1, 1)), 2, 2)


def test_bspline_rejects_k1():
    with pytest.raises(ParameterError):
        bspline_upsample(Volume(np.zeros((2, 2, 8)), (1, 1, 1)), 2, 1)


def test_upsample_of_downsampled_constant_is_constant():
    v = Volume(np.full((4, 4, 64), 12.0), (1, 1, 1))
    g = SliceGeometry(6.0, 2.0)
    lf = sample_slices(gaussian_blur_axis(v, 2, g.st), g)
    up = bspline_upsample(lf, 2, 8, phase=4)
    assert np.allclose(up.data, 12.0, rtol=1e-12)
