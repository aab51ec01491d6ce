import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from rgbdsurf.losses import (SEM_TERMS, SG_TERMS, LossWeights, loss_depth, loss_eikonal, loss_fs, loss_pr, loss_rgb,
                             loss_sdf, loss_smooth, loss_smooth_at, partition, total_loss)
from rgbdsurf.field import sdf_gradient

from conftest import AnalyticField, sphere_sdf

T = lambda *a: torch.tensor(a, dtype=torch.float64)  # noqa: E731


def test_loss_pr_examples():
    assert loss_pr(T(1.0, 2.0), T(1.0, 2.0), T(3, 1)).item() == 0
    assert loss_pr(T(0.9), T(1.0), T(1)).item() == pytest.approx(0.01, abs=1e-15)
    a = loss_pr(T(0.9, 1.5), T(1.0, 2.0), T(2, 3)).item()
    b = loss_pr(T(0.8, 1.0), T(1.0, 2.0), T(2, 3)).item()
    assert b == pytest.approx(4 * a, rel=1e-12)
    assert loss_pr(T(0.5), T(1.0), T(0)).item() == 0


def test_loss_rgb_examples():
    assert loss_rgb(T(0.2, 0.3, 0.4)[None], T(0.2, 0.3, 0.4)[None]).item() == 0
    assert loss_rgb(T(1, 0, 0)[None], T(0, 0, 0)[None]).item() == 1.0
    rng = np.random.default_rng(0)
    p, t = torch.as_tensor(rng.uniform(size=(9, 3))), torch.as_tensor(rng.uniform(size=(9, 3)))
    perm = torch.as_tensor(rng.permutation(9))
    assert loss_rgb(p[perm], t[perm]).item() == pytest.approx(loss_rgb(p, t).item(), rel=1e-14)


def test_loss_depth_examples():
    assert loss_depth(T(1.0, 2.0), T(1.0, 2.0)).item() == 0
    assert loss_depth(T(1.05), T(1.0)).item() == pytest.approx(0.0025, rel=1e-12)
    assert loss_depth(T(1.05, 9.0), T(1.0, 0.0)).item() == pytest.approx(0.0025, rel=1e-12)
    assert loss_depth(T(3.0), T(0.0)).item() == 0


def test_loss_sdf_examples():
    tr = 0.05
    z = T(0.98, 1.0, 1.02)[None]
    depth = T(1.0)
    s_tr, _ = partition(z, depth, tr)
    exact = torch.clamp(depth[:, None] - z, -tr, tr)
    assert loss_sdf(exact, z, depth, s_tr, tr).item() == pytest.approx(0, abs=1e-28)
    on = T(1.0)[None]
    assert loss_sdf(T(0.0)[None], on, depth, torch.ones(1, 1, dtype=torch.bool), tr).item() == 0
    # b = 0.5 at z = D - tr / 2, prediction sdf / tr = 0.2
    z1 = T(1.0 - tr / 2)[None]
    val = loss_sdf(T(0.2 * tr)[None], z1, depth, torch.ones(1, 1, dtype=torch.bool), tr).item()
    assert val == pytest.approx(0.09, rel=1e-12)


def test_loss_fs_examples():
    tr = 0.05
    m = torch.ones(1, 3, dtype=torch.bool)
    assert loss_fs(torch.full((1, 3), tr, dtype=torch.float64), m, tr).item() == 0
    assert loss_fs(torch.zeros(1, 3, dtype=torch.float64), m, tr).item() == 1.0
    assert loss_fs(torch.zeros(1, 3, dtype=torch.float64), ~m, tr).item() == 0


def test_loss_eikonal_examples(plane_field):
    x = np.random.default_rng(1).uniform(-0.9, 0.9, (20, 3))
    g = sdf_gradient(plane_field, x)
    assert loss_eikonal(g).item() == pytest.approx(0, abs=1e-18)
    assert loss_eikonal(2 * g).item() == pytest.approx(1.0, rel=1e-12)
    assert loss_eikonal(torch.zeros(5, 3, dtype=torch.float64)).item() == 1.0


def test_partition_disjoint_and_invalid():
    rng = np.random.default_rng(2)
    z = torch.as_tensor(np.sort(rng.uniform(0, 4, (50, 40)), -1))
    depth = torch.as_tensor(rng.uniform(0.5, 3.5, 50))
    depth[::7] = 0
    s_tr, s_fs = partition(z, depth, 0.05)
    assert not bool((s_tr & s_fs).any())
    assert not bool(s_tr[::7].any() or s_fs[::7].any())


def test_loss_smooth_plane_zero(plane_field):
    assert loss_smooth(plane_field, np.random.default_rng(0), 64, 0.05).item() == pytest.approx(0, abs=1e-18)


def test_loss_smooth_no_surface():
    f = AnalyticField(lambda x: torch.full((x.shape[0],), 0.5, dtype=x.dtype))
    assert loss_smooth(f, np.random.default_rng(0), 16, 0.05).item() == 0


def test_loss_smooth_sphere_tangential():
    r, delta = 0.5, 0.03
    f = AnalyticField(sphere_sdf(r), voxel=0.01)
    x = np.array([[r, 0, 0], [0, r, 0], [0, 0, -r]])
    off = np.array([[0, delta, 0], [0, 0, delta], [delta, 0, 0]])
    val = loss_smooth_at(f, x, off).item()
    assert val == pytest.approx(delta ** 2 / r ** 2, rel=0.02)


def test_loss_smooth_seeded(sphere_field):
    a = loss_smooth(sphere_field, np.random.default_rng(4), 32, 0.05).item()
    b = loss_smooth(sphere_field, np.random.default_rng(4), 32, 0.05).item()
    assert a == b and a > 0


def test_total_loss_published_weights():
    w = LossWeights()
    assert (w.sg, w.sem, w.model) == (4.0, 1.0, 5.0)
    ones = {k: torch.tensor(1.0, dtype=torch.float64) for k in SG_TERMS + SEM_TERMS}
    unit = LossWeights(pr=1, rgb=1, d=1, sdf=1, fs=1, eik=1, smooth=1)
    total, bd = total_loss(ones, unit)
    assert total.item() == 4 * 7 + 1 * (1 + 0.1)
    assert bd["total"] == total.item() and bd["rgb"] == 1.0
    assert total_loss({}, w)[0].item() == 0


def test_total_loss_fine_model_factor():
    ones = {k: torch.tensor(1.0, dtype=torch.float64) for k in ("rgb", "d")}
    w = LossWeights()
    c = total_loss(ones, w, "coarse")[0].item()
    f = total_loss(ones, w, "fine")[0].item()
    assert f == pytest.approx(w.model * c, rel=1e-15)


@given(st.sampled_from(SG_TERMS + SEM_TERMS), st.floats(0, 100), st.sampled_from(["coarse", "fine"]))
def test_total_loss_linear(term, value, stage):
    w = LossWeights()
    coef = getattr(w, term) * (w.sg if term in SG_TERMS else w.sem)
    if stage == "fine" and term in ("rgb", "d"):
        coef *= w.model
    total = total_loss({term: torch.tensor(value, dtype=torch.float64)}, w, stage)[0].item()
    assert total == pytest.approx(coef * value, rel=1e-14, abs=1e-300)


def test_no_semantic_objective():
    w = LossWeights(sem=0.0)
    t = {k: torch.tensor(2.0, dtype=torch.float64) for k in SEM_TERMS}
    assert total_loss(t, w)[0].item() == 0


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(rgb=-1)
    with pytest.raises(ValueError):
        LossWeights(tr=0)
