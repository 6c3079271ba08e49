"""Volume and membership-map containers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DataError, ShapeError

MEMBERSHIP_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar image indexed (x, y, z) with voxel spacing in mm.

    ``data`` is stored as a read-only float64 array. ``orientation`` holds the
    qform/sform header fields of the file the volume came from; they are
    written back on save but never used for resampling.
    """

    data: np.ndarray
    spacing: tuple
    slice_axis: int = 2
    orientation: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ShapeError(f"volume must be 3D, got {data.ndim}D")
        if min(data.shape) < 1:
            raise ShapeError(f"volume dims must be >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("volume contains non-finite values")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise DataError(f"spacing must be three positive finite values, got {self.spacing}")
        if self.slice_axis not in (0, 1, 2):
            raise DataError(f"slice_axis must be 0, 1 or 2, got {self.slice_axis}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data, spacing=None):
        """Return a copy with new voxel values (and optionally new spacing)."""
        return replace(self, data=data, spacing=self.spacing if spacing is None else spacing)

    def same_grid(self, other, tol=1e-4):
        return self.shape == other.shape and np.allclose(self.spacing, other.spacing, rtol=0, atol=tol)


@dataclass(frozen=True, eq=False)
class MembershipMaps:
    """Per-voxel GM/WM/CSF probabilities on a common grid."""

    gm: Volume
    wm: Volume
    csf: Volume

    def __post_init__(self):
        for name in ("wm", "csf"):
            if not self.gm.same_grid(getattr(self, name), tol=1e-9):
                raise ShapeError(f"membership map {name} does not match gm grid")
        for name in ("gm", "wm", "csf"):
            d = getattr(self, name).data
            if d.min() < 0 or d.max() > 1:
                raise DataError(f"membership map {name} has values outside [0, 1]")
        if np.any(self.total() > 1 + MEMBERSHIP_EPS):
            raise DataError("gm + wm + csf exceeds 1")

    @property
    def shape(self):
        return self.gm.shape

    @property
    def spacing(self):
        return self.gm.spacing

    def total(self):
        return self.gm.data + self.wm.data + self.csf.data

    def brain_mask(self):
        return self.total() > 0

    def map(self, fn):
        """Apply a Volume -> Volume function to each map."""
        return MembershipMaps(fn(self.gm), fn(self.wm), fn(self.csf))


def check_same_shape(a, b, what="volumes"):
    sa = a.shape if hasattr(a, "shape") else np.shape(a)
    sb = b.shape if hasattr(b, "shape") else np.shape(b)
    if tuple(sa) != tuple(sb):
        raise ShapeError(f"{what} have different dims: {tuple(sa)} vs {tuple(sb)}")
