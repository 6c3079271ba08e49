"""Nested-ellipsoid brain phantoms with known tissue memberships."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import SpecError
from .volume import MembershipMaps, Volume


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and intensities of a synthetic T1w-like head.

    Semi-axes are in mm. The brain ellipsoid has a hard edge; the GM/WM and
    WM/CSF interfaces ramp linearly over ``boundary_softness`` mm so that
    partial-volume voxels exist.
    """

    dims: tuple = (64, 64, 64)
    spacing: tuple = (1.0, 1.0, 1.0)
    brain_axes: tuple = (27.0, 29.0, 25.0)
    wm_axes: tuple = (19.0, 21.0, 17.0)
    csf_axes: tuple = (6.0, 9.0, 5.0)
    tissue_means: tuple = (100.0, 150.0, 30.0)  # GM, WM, CSF
    boundary_softness: float = 2.0
    max_tilt_deg: float = 20.0

    def validate(self):
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise SpecError(f"dims must be three positive integers, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise SpecError("spacing must be positive")
        if any(m <= 0 for m in self.tissue_means):
            raise SpecError("tissue means must be positive")
        if self.boundary_softness < 0:
            raise SpecError("boundary_softness must be >= 0")
        margin = self.boundary_softness / 2
        for inner, outer, what in (
            (self.wm_axes, self.brain_axes, "WM inside brain"),
            (self.csf_axes, self.wm_axes, "CSF inside WM"),
        ):
            if any(i <= 0 for i in inner) or any(i + margin >= o - margin for i, o in zip(inner, outer)):
                raise SpecError(f"ellipsoids are not strictly nested ({what})")
        half_extent = min((n - 1) * s / 2 for n, s in zip(self.dims, self.spacing))
        if max(self.brain_axes) > half_extent:
            raise SpecError("brain ellipsoid does not fit inside the volume under rotation")


def _fraction_inside(u, axes, softness):
    """Fraction of a voxel inside the ellipsoid with semi-axes ``axes``.

    Uses the first-order signed distance (rho - 1) / |grad rho|.
    """
    a = np.asarray(axes, dtype=np.float64).reshape(3, 1, 1, 1)
    rho = np.sqrt(np.sum((u / a) ** 2, axis=0))
    if softness == 0:
        return (rho <= 1.0).astype(np.float64)
    grad = np.sqrt(np.sum((u / a**2) ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.where(rho > 0, (rho - 1.0) * rho / grad, -np.inf)
    return np.clip(0.5 - dist / softness, 0.0, 1.0)


def make_phantom(spec, seed):
    """Build a noiseless HF-like volume and the exact memberships behind it.

    The seed only selects a rigid rotation of the ellipsoid stack.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(spec.max_tilt_deg) * rng.uniform()
    rot = Rotation.from_rotvec(axis * angle).as_matrix()

    grids = np.meshgrid(
        *[(np.arange(n) - (n - 1) / 2) * s for n, s in zip(spec.dims, spec.spacing)],
        indexing="ij",
    )
    pos = np.stack(grids)
    u = np.einsum("ij,j...->i...", rot.T, pos)  # body-frame coordinates

    brain = _fraction_inside(u, spec.brain_axes, 0.0)
    f_wm = _fraction_inside(u, spec.wm_axes, spec.boundary_softness) * brain
    f_csf = np.minimum(_fraction_inside(u, spec.csf_axes, spec.boundary_softness), f_wm)

    gm = brain - f_wm
    wm = f_wm - f_csf
    csf = f_csf
    mu_gm, mu_wm, mu_csf = spec.tissue_means
    value = gm * mu_gm + wm * mu_wm + csf * mu_csf

    maps = MembershipMaps(Volume(gm, spec.spacing), Volume(wm, spec.spacing), Volume(csf, spec.spacing))
    return Volume(value, spec.spacing), maps


def scaled_spec(dims, spacing=(1.0, 1.0, 1.0), jitter=None, **overrides):
    """Default phantom geometry rescaled to a grid.

    ``jitter`` (a numpy Generator) perturbs each semi-axis by up to +/-8%, which
    the desk pipeline uses to vary anatomy between subjects.
    """
    base = PhantomSpec()
    ref_half = min((n - 1) * s / 2 for n, s in zip(base.dims, base.spacing))
    half = min((n - 1) * s / 2 for n, s in zip(dims, spacing))
    scale = half / ref_half

    def axes(a):
        a = np.asarray(a) * scale
        if jitter is not None:
            a = a * jitter.uniform(0.92, 1.0, size=3)
        return tuple(float(x) for x in a)

    fields = dict(
        dims=tuple(int(n) for n in dims),
        spacing=tuple(float(s) for s in spacing),
        brain_axes=axes(base.brain_axes),
        wm_axes=axes(base.wm_axes),
        csf_axes=axes(base.csf_axes),
    )
    fields.update(overrides)
    return PhantomSpec(**fields)
