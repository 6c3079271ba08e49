"""GM/WM/CSF membership maps: external ingestion or a 3-class EM mixture."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import logsumexp

from .errors import CollapseError, DataError, ParameterError, ShapeError
from .nifti import load_volume
from .volume import MembershipMaps, Volume, check_same_shape

TISSUES = ("csf", "gm", "wm")  # ascending T1w intensity
MIN_MASK_VOXELS = 1000


def load_memberships(gm_path, wm_path, csf_path, reference):
    """Read three membership maps and check them against ``reference``."""
    maps = {}
    for name, path in (("gm", gm_path), ("wm", wm_path), ("csf", csf_path)):
        v = load_volume(path)
        if v.shape != reference.shape:
            raise ShapeError(f"{name} map dims {v.shape} differ from reference {reference.shape}")
        if not v.same_grid(reference, tol=1e-4):
            raise ShapeError(f"{name} map spacing {v.spacing} differs from reference {reference.spacing}")
        d = v.data
        bad = np.count_nonzero((d < -0.01) | (d > 1.01))
        if bad > 0.01 * d.size:
            raise DataError(f"{name} map: {bad} voxels lie outside [0, 1]")
        maps[name] = Volume(np.clip(d, 0.0, 1.0), reference.spacing, reference.slice_axis)
    total = maps["gm"].data + maps["wm"].data + maps["csf"].data
    over = total > 1.0
    if np.any(over):
        # clamping can leave sums a hair above 1; rescale those voxels only
        scale = np.where(over, 1.0 / np.where(over, total, 1.0), 1.0)
        maps = {k: v.with_data(v.data * scale) for k, v in maps.items()}
    return MembershipMaps(maps["gm"], maps["wm"], maps["csf"])


def default_brain_mask(v, fraction=0.05, percentile=99.0):
    """Voxels above ``fraction`` of the 99th percentile, largest 6-connected blob."""
    thresh = fraction * np.percentile(v.data, percentile)
    mask = v.data > thresh
    labels, n = ndimage.label(mask, structure=ndimage.generate_binary_structure(3, 1))
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == np.argmax(sizes)


@dataclass
class GmmModel:
    """Three-component 1D Gaussian mixture, components ordered CSF, GM, WM."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    labels: tuple = TISSUES
    log_likelihood: list = field(default_factory=list, repr=False)
    n_iter: int = 0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.validate()

    @property
    def K(self):
        return len(self.means)

    def validate(self):
        if not (len(self.means) == len(self.variances) == len(self.weights) == len(self.labels) == 3):
            raise ParameterError("GMM must have exactly 3 components")
        if not np.all(np.isfinite(self.means)):
            raise ParameterError("GMM means must be finite")
        if not np.all(self.variances > 0):
            raise ParameterError("GMM variances must be positive")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ParameterError("GMM weights must be non-negative and sum to 1")

    def component(self, tissue):
        return self.labels.index(tissue)

    def log_joint(self, x):
        """log(pi_k N(x | mu_k, var_k)) with shape (len(x), K)."""
        x = np.asarray(x, dtype=np.float64)[:, None]
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return (
            logw
            - 0.5 * np.log(2.0 * np.pi * self.variances)
            - 0.5 * (x - self.means) ** 2 / self.variances
        )

    def to_json(self):
        return json.dumps(
            {
                "means": self.means.tolist(),
                "variances": self.variances.tolist(),
                "weights": self.weights.tolist(),
                "labels": list(self.labels),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["means"], d["variances"], d["weights"], tuple(d["labels"]))


def _kmeanspp_1d(x, k, rng):
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min((x[:, None] - np.array(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total == 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.sort(np.array(centers))


def _sorted_model(means, variances, weights, history, n_iter):
    order = np.lexsort((variances, means))
    return GmmModel(means[order], variances[order], weights[order] / weights[order].sum(), TISSUES, history, n_iter)


def fit_gmm(v, brain_mask=None, seed=0, max_iter=200, tol=1e-6, var_floor=1e-6):
    """Fit a 3-class Gaussian mixture to the masked intensities by EM.

    Args:
        v: intensity volume.
        brain_mask: boolean array; defaults to :func:`default_brain_mask`.
        seed: seeds the k-means++ initialisation.
        max_iter: EM iteration cap.
        tol: stop when the mean log-likelihood improves by less than this.
        var_floor: lower bound on each variance, as a fraction of the data
            variance. The constrained M-step keeps EM monotone. Pass 0 to
            disable; a shrinking component then raises :class:`CollapseError`.

    Returns:
        GmmModel with components labelled by ascending mean (CSF, GM, WM).
    """
    if brain_mask is None:
        brain_mask = default_brain_mask(v)
    brain_mask = np.asarray(brain_mask, dtype=bool)
    check_same_shape(v.data, brain_mask, "volume and brain mask")
    x = v.data[brain_mask]
    if x.size < MIN_MASK_VOXELS:
        raise DataError(f"brain mask selects {x.size} voxels; need >= {MIN_MASK_VOXELS}")
    data_var = x.var()
    if data_var == 0:
        raise DataError("masked intensities are all equal")

    rng = np.random.default_rng(seed)
    sample = x if x.size <= 20000 else rng.choice(x, 20000, replace=False)
    centers = _kmeanspp_1d(sample, 3, rng)
    assign = np.argmin(np.abs(x[:, None] - centers[None, :]), axis=1)
    means = centers.astype(np.float64)
    variances = np.full(3, data_var)
    weights = np.full(3, 1.0 / 3.0)
    for j in range(3):
        sel = x[assign == j]
        if sel.size > 1:
            means[j] = sel.mean()
            variances[j] = max(sel.var(), var_floor * data_var, 1e-12 * data_var)
            weights[j] = sel.size / x.size

    floor = var_floor * data_var
    history = []
    prev = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        # E-step
        logw = np.log(weights)
        lj = logw - 0.5 * np.log(2 * np.pi * variances) - 0.5 * (x[:, None] - means) ** 2 / variances
        norm = logsumexp(lj, axis=1)
        ll = float(norm.mean())
        history.append(ll)
        if ll - prev < tol and it > 1:
            break
        prev = ll
        resp = np.exp(lj - norm[:, None])
        # M-step
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-12 * x.size):
            raise CollapseError(f"component emptied at iteration {it}", it)
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / nk
        variances = np.maximum(variances, floor)
        if np.any(variances < 1e-12 * data_var):
            raise CollapseError(f"component variance collapsed at iteration {it}", it)
        weights = nk / nk.sum()
    return _sorted_model(means, variances, weights, history, it)


def memberships(model, v, brain_mask):
    """Posterior class probabilities inside ``brain_mask``, zero outside."""
    model.validate()
    brain_mask = np.asarray(brain_mask, dtype=bool)
    check_same_shape(v.data, brain_mask, "volume and brain mask")
    lj = model.log_joint(v.data[brain_mask])
    post = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    out = {}
    for tissue in ("gm", "wm", "csf"):
        m = np.zeros(v.shape)
        m[brain_mask] = post[:, model.component(tissue)]
        out[tissue] = Volume(m, v.spacing, v.slice_axis)
    return MembershipMaps(out["gm"], out["wm"], out["csf"])


def skull_strip(v, maps):
    """Zero every voxel with no GM, WM or CSF membership."""
    check_same_shape(v, maps, "volume and membership maps")
    keep = maps.total() > 0
    return v.with_data(np.where(keep, v.data, 0.0))
