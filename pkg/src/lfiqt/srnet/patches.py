"""Paired patch extraction and overlap-blended stitching."""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import ShapeError


def infer_factor(hf_len, lf_len, k=None):
    if k is None:
        if lf_len == 0 or hf_len % lf_len:
            raise ShapeError(f"slice counts {hf_len} (HF) and {lf_len} (LF) are not an integer ratio")
        return hf_len // lf_len
    if hf_len != k * lf_len:
        raise ShapeError(f"HF has {hf_len} slices but LF has {lf_len}; expected factor k = {k}")
    return k


def crop_to_lf(hf, lf_len, k, axis=2):
    """Keep the first ``k * lf_len`` HF slices (the blocks the LF slices summarise)."""
    need = k * lf_len
    if hf.shape[axis] < need:
        raise ShapeError(f"HF has {hf.shape[axis]} slices along axis {axis}; need {need}")
    return hf.with_data(np.take(hf.data, np.arange(need), axis=axis))


def _origins(n, size, stride):
    return list(range(0, n - size + 1, stride))


def extract_patches(
    hf,
    lf,
    maps,
    patch_xy,
    patch_z_lf,
    stride,
    min_brain_fraction=0.0,
    k=None,
    levels=None,
):
    """Cut aligned (LF, HF) training patches.

    LF patches are (patch_xy, patch_xy, patch_z_lf); HF partners cover the same
    in-plane area and ``k * patch_z_lf`` slices. Patches whose HF brain
    fraction (from ``maps``, on the HF grid) is below ``min_brain_fraction``
    are dropped. Origins are visited in lexicographic order.

    Returns:
        list of ``(lf_patch, hf_patch)`` arrays shaped (1, 1, x, y, z).
    """
    axis = lf.slice_axis
    lf_d = np.moveaxis(lf.data, axis, 2)
    hf_d = np.moveaxis(hf.data, axis, 2)
    if lf_d.shape[:2] != hf_d.shape[:2]:
        raise ShapeError(f"in-plane dims differ: LF {lf_d.shape[:2]} vs HF {hf_d.shape[:2]}")
    k = infer_factor(hf_d.shape[2], lf_d.shape[2], k)
    if levels is not None and patch_xy % 2**levels:
        raise ShapeError(f"patch_xy {patch_xy} must be divisible by {2 ** levels}")
    if min(lf_d.shape[:2]) < patch_xy or lf_d.shape[2] < patch_z_lf:
        raise ShapeError(f"volume {lf_d.shape} smaller than patch ({patch_xy}, {patch_xy}, {patch_z_lf})")
    brain = np.moveaxis(maps.total() > 0, axis, 2)
    if brain.shape != hf_d.shape:
        raise ShapeError(f"membership dims {brain.shape} do not match HF {hf_d.shape}")

    sx, sy, sz = stride
    pairs = []
    for ox, oy, oz in itertools.product(
        _origins(lf_d.shape[0], patch_xy, sx),
        _origins(lf_d.shape[1], patch_xy, sy),
        _origins(lf_d.shape[2], patch_z_lf, sz),
    ):
        xs, ys = slice(ox, ox + patch_xy), slice(oy, oy + patch_xy)
        hz = slice(k * oz, k * (oz + patch_z_lf))
        if brain[xs, ys, hz].mean() < min_brain_fraction:
            continue
        lp = lf_d[xs, ys, oz : oz + patch_z_lf][None, None]
        hp = hf_d[xs, ys, hz][None, None]
        pairs.append((lp.copy(), hp.copy()))
    return pairs


def taper(n):
    """Hann-shaped window, strictly positive on every sample."""
    i = np.arange(n)
    return np.sin(np.pi * (i + 0.5) / n) ** 2


def tile_origins(n, size, stride):
    if n < size:
        raise ShapeError(f"axis of length {n} is smaller than patch size {size}")
    origins = _origins(n, size, max(1, stride))
    if origins[-1] != n - size:
        origins.append(n - size)
    return origins


def tile_grid(lf_shape, patch, stride):
    """All LF patch origins covering a volume with the given (x, y, z) shape."""
    return list(
        itertools.product(*(tile_origins(n, p, s) for n, p, s in zip(lf_shape, patch, stride)))
    )


def blend_weights(patch_shape):
    tx, ty, tz = (taper(n) for n in patch_shape)
    return tx[:, None, None] * ty[None, :, None] * tz[None, None, :]


def stitch(predictions, origins, out_shape):
    """Blend overlapping HF patch predictions into one volume.

    Each prediction is weighted by a Hann taper; dividing by the accumulated
    weight makes the effective weights sum to one at every voxel.
    """
    acc = np.zeros(out_shape)
    wsum = np.zeros(out_shape)
    for pred, (ox, oy, oz) in zip(predictions, origins):
        w = blend_weights(pred.shape)
        sl = (slice(ox, ox + pred.shape[0]), slice(oy, oy + pred.shape[1]), slice(oz, oz + pred.shape[2]))
        acc[sl] += w * pred
        wsum[sl] += w
    if np.any(wsum == 0):
        raise ShapeError("patch grid does not cover the output volume")
    return acc / wsum, wsum


def weight_partition(origins, patch_shape, out_shape):
    """Sum of normalised blending weights per voxel (1 wherever covered)."""
    _, wsum = stitch([np.zeros(patch_shape)] * len(origins), origins, out_shape)
    w = blend_weights(patch_shape)
    total = np.zeros(out_shape)
    for ox, oy, oz in origins:
        sl = (slice(ox, ox + patch_shape[0]), slice(oy, oy + patch_shape[1]), slice(oz, oz + patch_shape[2]))
        total[sl] += w / wsum[sl]
    return total
