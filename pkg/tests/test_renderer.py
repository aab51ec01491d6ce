import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from rgbdsurf.geometry import Ray
from rgbdsurf.renderer import (EPS_FINE, coarse_weights, composite, deltas, fine_weights, render_ray,
                               render_samples, sdf_to_density, volume_density)
from rgbdsurf.sampler import SamplerConfig

from conftest import AnalyticField

LN2 = math.log(2)
pos = st.floats(0, 50)
# no subnormals: their products lose relative precision
normal_pos = st.one_of(st.just(0.0), st.floats(1e-200, 50))


def test_sdf_to_density_examples():
    assert sdf_to_density(0.0, 7.0).item() == 0.5
    assert sdf_to_density(-1.0, math.log(3)).item() == pytest.approx(0.75, abs=1e-15)
    assert sdf_to_density(1e6, 10.0).item() == 0.0
    # flipped convention
    assert sdf_to_density(-1.0, math.log(3), sdf_positive_outside=False).item() == pytest.approx(0.25, abs=1e-15)
    assert volume_density(0.0, 40.0).item() == 20.0


def test_coarse_weight_examples():
    np.testing.assert_allclose(coarse_weights([LN2], [1.0]).numpy(), [0.5], atol=1e-15)
    w = coarse_weights([LN2, LN2], [1.0, 1.0]).numpy()
    np.testing.assert_allclose(w, [0.5, 0.25], atol=1e-15)
    assert w.sum() == pytest.approx(0.75, abs=1e-15)
    assert torch.count_nonzero(coarse_weights([0.0] * 4, [0.1] * 4)) == 0
    with pytest.raises(ValueError):
        coarse_weights([1.0, 2.0], [1.0])


def test_coarse_weights_telescope_random():
    rng = np.random.default_rng(0)
    sigma = rng.exponential(2.0, (10_000, 24)) * (rng.uniform(size=(10_000, 24)) < 0.7)
    dz = rng.uniform(1e-3, 0.5, (10_000, 24))
    w = coarse_weights(sigma, dz).numpy()
    expected = -np.expm1(-(sigma * dz).sum(-1))
    assert np.max(np.abs(w.sum(-1) - expected)) <= 1e-12
    assert np.all(w >= 0)


@given(arrays(np.float64, 6, elements=pos), arrays(np.float64, 6, elements=st.floats(1e-3, 1)),
       st.integers(0, 5))
def test_split_invariance(sigma, dz, k):
    # splitting sample k into two halves leaves every other weight unchanged
    w = coarse_weights(sigma, dz).numpy()
    s2 = np.insert(sigma, k, sigma[k])
    d2 = np.insert(dz, k, dz[k] / 2)
    d2[k + 1] = dz[k] / 2
    w2 = coarse_weights(s2, d2).numpy()
    merged = np.concatenate([w2[:k], [w2[k] + w2[k + 1]], w2[k + 2:]])
    np.testing.assert_allclose(merged, w, atol=1e-12)


def test_deltas_repeats_last_spacing():
    np.testing.assert_allclose(deltas([1.0, 1.5, 2.5]).numpy(), [0.5, 1.0, 1.0])


def test_fine_weight_examples():
    sig = torch.tensor([LN2, LN2], dtype=torch.float64)
    dz = torch.ones(2, dtype=torch.float64)
    raw = fine_weights(torch.tensor([0.5, 0.25], dtype=torch.float64), sig, dz, 1.0, normalize=False)
    assert raw[0].item() == pytest.approx(0.5, abs=1e-15)
    assert torch.count_nonzero(fine_weights([0.5, 0.25], sig, dz, beta=0.0)) == 0


def test_fine_weights_guarded():
    w = fine_weights([0.3, 0.2, 0.0], [5.0, 0.0, 0.0], [0.1, 0.1, 0.1], normalize=False)
    assert torch.all(torch.isfinite(w))
    assert w[1].item() == pytest.approx(0.2 / EPS_FINE, rel=1e-12)


@given(arrays(np.float64, 8, elements=normal_pos), arrays(np.float64, 8, elements=st.floats(1e-3, 1)),
       st.floats(1e-3, 1e3))
def test_fine_weights_beta_invariant(sigma, dz, beta):
    wc = coarse_weights(sigma, dz)
    a = fine_weights(wc, sigma, dz, 1.0)
    b = fine_weights(wc, sigma, dz, beta)
    raw1 = fine_weights(wc, sigma, dz, 1.0, normalize=False)
    rawb = fine_weights(wc, sigma, dz, beta, normalize=False)
    assert torch.all(torch.isfinite(b))
    torch.testing.assert_close(rawb, beta * raw1, rtol=1e-12, atol=0)
    torch.testing.assert_close(a, b, rtol=1e-12, atol=1e-300)
    assert b.sum().item() <= min(wc.sum().item(), 1.0) + 1e-12


def test_composite_examples():
    r = composite([0.5, 0.5], [[1, 0, 0], [0, 0, 1.0]], [[0, 1, 0], [0, 1, 0.0]], [1.0, 3.0])
    np.testing.assert_allclose(r.color.numpy(), [0.5, 0, 0.5])
    assert r.depth.item() == 2.0 and r.weight_sum.item() == 1.0
    r = composite([0.0, 1.0], [[1, 0, 0], [0.2, 0.3, 0.4]], [[0, 0, 0], [1, 1, 1.0]], [1.0, 3.0])
    np.testing.assert_allclose(r.color.numpy(), [0.2, 0.3, 0.4])
    assert r.depth.item() == 3.0
    r = composite([0.0, 0.0], [[1, 1, 1]] * 2, [[1, 1, 1]] * 2, [1.0, 2.0])
    assert r.color.abs().sum().item() == 0 and r.depth.item() == 0 and r.weight_sum.item() == 0
    with pytest.raises(ValueError):
        composite([1.0], [[1, 1, 1]] * 2, [[1, 1, 1]] * 2, [1.0, 2.0])


@given(arrays(np.float64, 5, elements=pos), arrays(np.float64, (5, 3), elements=st.floats(0, 1)))
def test_composite_in_hull(sigma, colors):
    w = coarse_weights(sigma, np.full(5, 0.1))
    r = composite(w, colors, colors, np.arange(1.0, 6.0))
    c = r.color.numpy()
    assert np.all(c >= -1e-15) and np.all(c <= colors.max(0) + 1e-12)


def _plane_at(depth):
    # surface z = depth, ray along +z from the origin, positive outside
    return AnalyticField(lambda x: depth - x[:, 2], lo=(-1, -1, 0), hi=(1, 1, 2), voxel=0.03, inv_s=200.0)


@pytest.mark.parametrize("stage", ["coarse", "fine"])
def test_render_ray_plane_depth(stage):
    ray = Ray(np.zeros(3), np.array([0, 0, 1.0]), 0.05, 2.0)
    r = render_ray(_plane_at(1.0), ray, stage, SamplerConfig(n_initial=64, n_per_layer=32, seed=1))
    assert abs(r.depth.item() - 1.0) < 0.03
    assert r.weight_sum.item() <= 1 + 1e-9 and torch.all(r.weights >= 0)


def test_render_ray_miss():
    # plane behind the far bound: the ray only crosses free space
    ray = Ray(np.zeros(3), np.array([0, 0, 1.0]), 0.05, 2.0)
    r = render_ray(_plane_at(5.0), ray, "coarse", SamplerConfig(n_initial=64, n_per_layer=32))
    assert r.weight_sum.item() < 0.05


def test_render_samples_modes():
    f = _plane_at(1.0)
    z = torch.linspace(0.5, 1.5, 64, dtype=torch.float64)[None]
    o, d = np.zeros((1, 3)), np.array([[0, 0, 1.0]])
    a, sdf = render_samples(f, o, d, z, "coarse")
    b, _ = render_samples(f, o, d, z, "coarse", weight_mode="neus_standard")
    torch.testing.assert_close(a.weights, b.weights)
    c, _ = render_samples(f, o, d, z, "fine")
    e, _ = render_samples(f, o, d, z, "coarse", weight_mode="fine_reweighted")
    torch.testing.assert_close(c.weights, e.weights)
    assert sdf.shape == (1, 64)
    with pytest.raises(ValueError):
        render_samples(f, o, d, z, "coarse", weight_mode="nope")
