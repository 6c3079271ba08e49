import json

import numpy as np
import pytest

from lfiqt.errors import CollapseError, DataError, ShapeError
from lfiqt.nifti import save_volume
from lfiqt.phantom import PhantomSpec, make_phantom
from lfiqt.segment import (
    GmmModel,
    default_brain_mask,
    fit_gmm,
    load_memberships,
    memberships,
    skull_strip,
)
from lfiqt.volume import MembershipMaps, Volume


def mixture_volume(rng, n=100_000):
    comp = rng.choice(3, size=n, p=[0.2, 0.45, 0.35])
    x = np.array([30.0, 100.0, 150.0])[comp] + np.array([2.0, 5.0, 5.0])[comp] * rng.normal(size=n)
    return Volume(x.reshape(100, -1, 10), (1, 1, 1))


def test_recovers_synthetic_mixture(rng):
    v = mixture_volume(rng)
    model = fit_gmm(v, np.ones(v.shape, bool), seed=0)
    assert np.all(np.abs(model.means - [30, 100, 150]) <= 0.02 * np.array([30, 100, 150]))
    assert np.all(np.abs(model.weights - [0.2, 0.45, 0.35]) <= 0.02)
    assert model.labels == ("csf", "gm", "wm")


def test_agrees_with_sklearn(rng):
    from sklearn.mixture import GaussianMixture

    v = mixture_volume(rng, 30_000)
    ours = fit_gmm(v, np.ones(v.shape, bool), seed=1)
    ref = GaussianMixture(3, random_state=0).fit(v.data.reshape(-1, 1))
    order = np.argsort(ref.means_.ravel())
    assert np.allclose(ours.means, ref.means_.ravel()[order], rtol=1e-3)
    assert np.allclose(ours.weights, ref.weights_[order], atol=1e-3)


def test_loglikelihood_monotone(rng):
    # heavily overlapping components make EM crawl
    comp = rng.choice(3, size=20_000, p=[0.3, 0.4, 0.3])
    x = np.array([90.0, 100.0, 112.0])[comp] + 8.0 * rng.normal(size=20_000)
    v = Volume(x.reshape(100, -1, 10), (1, 1, 1))
    model = fit_gmm(v, np.ones(v.shape, bool), seed=4, tol=1e-12, max_iter=100)
    ll = np.array(model.log_likelihood)
    assert len(ll) > 2
    assert np.all(np.diff(ll) >= -1e-9)


def test_all_equal_rejected():
    v = Volume(np.full((20, 20, 10), 5.0), (1, 1, 1))
    with pytest.raises(DataError):
        fit_gmm(v, np.ones(v.shape, bool))


def test_small_mask_rejected(rng):
    v = mixture_volume(rng, 10_000)
    mask = np.zeros(v.shape, bool)
    mask[:5, :5, :5] = True
    with pytest.raises(DataError):
        fit_gmm(v, mask)


def test_phantom_means(hard_phantom):
    v, _ = hard_phantom
    model = fit_gmm(v, seed=0)
    assert np.allclose(model.means, [30, 100, 150], rtol=0.01)


def test_collapse_without_variance_floor(hard_phantom):
    v, _ = hard_phantom
    with pytest.raises(CollapseError) as info:
        fit_gmm(v, seed=0, var_floor=0.0)
    assert info.value.iteration >= 1


@pytest.mark.parametrize("seed", range(10))
def test_label_stability(seed):
    v, _ = make_phantom(PhantomSpec(), seed)
    model = fit_gmm(v, seed=seed)
    wm = model.component("wm")
    assert wm == int(np.argmin(np.abs(model.means - 150.0)))


def test_default_mask_keeps_largest_component():
    d = np.zeros((30, 30, 30))
    d[5:20, 5:20, 5:20] = 100.0
    d[25:27, 25:27, 25:27] = 100.0  # detached blob
    mask = default_brain_mask(Volume(d, (1, 1, 1)))
    assert mask[10, 10, 10] and not mask[26, 26, 26]


def test_posterior_at_isolated_mean():
    model = GmmModel([30.0, 100.0, 150.0], [4.0, 25.0, 25.0], [0.2, 0.45, 0.35])
    v = Volume(np.full((1, 1, 1), 30.0), (1, 1, 1))
    maps = memberships(model, v, np.ones((1, 1, 1), bool))
    assert maps.csf.data[0, 0, 0] > 0.999
    # hand evaluation of the posterior
    x = 30.0
    joint = [w * np.exp(-0.5 * (x - m) ** 2 / s) / np.sqrt(2 * np.pi * s)
             for m, s, w in zip(model.means, model.variances, model.weights)]
    assert maps.csf.data[0, 0, 0] == pytest.approx(joint[0] / sum(joint), rel=1e-12)


def test_posteriors_normalised_and_masked(rng, hard_phantom):
    v, _ = hard_phantom
    noisy = v.with_data(v.data + rng.normal(scale=3.0, size=v.shape))
    mask = default_brain_mask(v)
    model = fit_gmm(noisy, mask, seed=0)
    maps = memberships(model, noisy, mask)
    total = maps.total()
    assert np.all(np.abs(total[mask] - 1) <= 1e-9)
    assert np.all(total[~mask] == 0)


def test_symmetric_components_split_evenly():
    model = GmmModel([30.0, 100.0, 100.0], [4.0, 25.0, 25.0], [0.2, 0.4, 0.4])
    v = Volume(np.full((1, 1, 1), 97.0), (1, 1, 1))
    maps = memberships(model, v, np.ones((1, 1, 1), bool))
    assert maps.gm.data[0, 0, 0] == maps.wm.data[0, 0, 0]
    assert maps.gm.data[0, 0, 0] == pytest.approx(0.5, abs=1e-6)


def test_gmm_json_roundtrip():
    model = GmmModel([30.0, 100.0, 150.0], [4.0, 25.0, 25.0], [0.2, 0.45, 0.35])
    back = GmmModel.from_json(model.to_json())
    assert np.array_equal(back.means, model.means)
    assert set(json.loads(model.to_json())) == {"means", "variances", "weights", "labels"}


def _maps_from(gm, wm, csf):
    return MembershipMaps(*(Volume(np.asarray(a, float), (1, 1, 1)) for a in (gm, wm, csf)))


def test_skull_strip_contract():
    v = Volume(np.full((1, 1, 3), 80.0), (1, 1, 1))
    maps = _maps_from([[[0, 1e-9, 0.5]]], [[[0, 0, 0.5]]], [[[0, 0, 0]]])
    out = skull_strip(v, maps)
    assert out.data.tolist() == [[[0.0, 80.0, 80.0]]]


def test_skull_strip_all_zero_and_idempotent(hard_phantom):
    v, maps = hard_phantom
    zero = maps.map(lambda m: m.with_data(np.zeros(m.shape)))
    assert np.all(skull_strip(v, zero).data == 0)
    noisy = v.with_data(v.data + 1.0)
    once = skull_strip(noisy, maps)
    assert np.array_equal(skull_strip(once, maps).data, once.data)


def test_skull_strip_shape_mismatch(hard_phantom):
    _, maps = hard_phantom
    with pytest.raises(ShapeError):
        skull_strip(Volume(np.zeros((2, 2, 2)), (1, 1, 1)), maps)


def _write_maps(tmp_path, arrays, spacing=(1, 1, 1)):
    paths = []
    for name, a in zip(("gm", "wm", "csf"), arrays):
        p = tmp_path / f"{name}.nii"
        save_volume(Volume(np.asarray(a, float), spacing), p)
        paths.append(p)
    return paths


def test_load_memberships_unchanged(tmp_path):
    gm = np.zeros((4, 4, 4)); gm[0] = 1.0; gm[1] = 0.5
    wm = np.zeros((4, 4, 4)); wm[1] = 0.5
    csf = np.zeros((4, 4, 4)); csf[2] = 1.0
    ref = Volume(np.zeros((4, 4, 4)), (1, 1, 1))
    maps = load_memberships(*_write_maps(tmp_path, (gm, wm, csf)), ref)
    assert np.array_equal(maps.gm.data, gm)
    assert np.array_equal(maps.wm.data, wm)


def test_load_memberships_clamps(tmp_path):
    gm = np.zeros((4, 4, 4)); gm[0, 0, 0] = 1.0000004
    z = np.zeros((4, 4, 4))
    maps = load_memberships(*_write_maps(tmp_path, (gm, z, z)), Volume(z, (1, 1, 1)))
    assert maps.gm.data[0, 0, 0] == 1.0


def test_load_memberships_dim_mismatch(tmp_path):
    z = np.zeros((8, 8, 8))
    with pytest.raises(ShapeError):
        load_memberships(*_write_maps(tmp_path, (z, z, z)), Volume(np.zeros((8, 8, 6)), (1, 1, 1)))


def test_load_memberships_out_of_range(tmp_path):
    bad = np.full((10, 10, 10), 0.5); bad[:2] = 1.5
    z = np.zeros((10, 10, 10))
    with pytest.raises(DataError):
        load_memberships(*_write_maps(tmp_path, (bad, z, z)), Volume(z, (1, 1, 1)))
