import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from rgbdsurf.dataio import SceneSpec, generate_synthetic
from rgbdsurf.field import load_checkpoint
from rgbdsurf.trainer import (HISTORY_COLUMNS, AdamMoment, ConfigError, GradCheckConfig, NumericalError,
                              TrainConfig, adam_step, build_ray_table, frame_rays, gradient_check,
                              grids_for_stage, load_config, make_field, read_history, render_image, stage_for,
                              switch_to_fine, train)

SMALL = dict(total_iters=8, rays_per_batch=64, sampler=dict(n_initial=8, n_per_layer=4, n_layers=1),
             eik_points=32, smooth_points=16, log_every=0)


def test_stage_for_examples():
    assert stage_for(0, 2000) == "coarse"
    assert stage_for(999, 2000) == "coarse" and stage_for(1000, 2000) == "fine"
    assert stage_for(1999, 2000) == "fine"
    for bad in (-1, 2000):
        with pytest.raises(ValueError):
            stage_for(bad, 2000)


@given(st.integers(1, 2000))
def test_single_switch_at_half(half):
    total = 2 * half
    stages = [stage_for(i, total) for i in range(total)]
    assert stages.count("coarse") == half
    switches = [i for i in range(1, total) if stages[i] != stages[i - 1]]
    assert switches == [half]


def test_grids_for_stage_examples():
    cfg = TrainConfig()
    b = ((0, 0, 0), (4.0, 4.0, 4.0))
    assert grids_for_stage(b, cfg, "fine").voxel_sizes == (0.03, 0.06, 0.24, 0.96)
    coarse = grids_for_stage(b, cfg, "coarse").voxel_sizes
    np.testing.assert_allclose(coarse, (0.3, 0.6, 2.4, 9.6), rtol=1e-15)
    assert min(grids_for_stage(b, cfg, "fine").dims[0]) >= 134
    spec = grids_for_stage(((-1.1,) * 3, (1.1,) * 3), cfg, "coarse")
    assert spec.collapsed == [False, False, True, True] and spec.dims[3] == (2, 2, 2)
    one = TrainConfig(coarse_factor=1.0)
    assert grids_for_stage(b, one, "coarse") == grids_for_stage(b, one, "fine")


def test_adam_examples():
    p = {"w": torch.tensor([0.5], dtype=torch.float64)}
    adam_step(p, {"w": torch.zeros(1, dtype=torch.float64)}, {}, 1e-3)
    assert p["w"].item() == 0.5
    p = {"w": torch.tensor([0.0], dtype=torch.float64)}
    adam_step(p, {"w": torch.tensor([0.2], dtype=torch.float64)}, {}, 1e-3, t=1)
    assert p["w"].item() == pytest.approx(-0.001 * 0.2 / (0.2 + 1e-8), rel=1e-12)
    p = {"a": np.array([1.0, 1.0]), "b": np.array([1.0])}
    g = {"a": np.array([0.3, 0.3]), "b": np.array([0.3])}
    moms = {}
    for _ in range(3):
        adam_step(p, g, moms, 1e-2)
    assert p["a"][0] == p["a"][1] == p["b"][0]
    assert isinstance(moms["a"], AdamMoment) and moms["a"].t == 3


def test_adam_fails_on_nan_naming_block():
    p = {"grid.0": torch.zeros(2, dtype=torch.float64)}
    with pytest.raises(NumericalError, match="grid.0"):
        adam_step(p, {"grid.0": torch.tensor([1.0, float("nan")], dtype=torch.float64)}, {}, 1e-3)
    with pytest.raises(ValueError):
        adam_step(p, {"grid.0": torch.ones(2, dtype=torch.float64)}, {}, 1e-3, t=0)


def test_config_validation(tmp_path):
    for bad in (dict(total_iters=3), dict(total_iters=0), dict(lr_field=0), dict(coarse_factor=0.5),
                dict(weight_mode="x"), dict(field={"nope": 1})):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)
    (tmp_path / "c.yaml").write_text("total_iters: 10\nbogus: 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        load_config(tmp_path / "c.yaml")
    (tmp_path / "c.yaml").write_text("total_iters: 10\nsampler: {n_initial: 7}\n")
    cfg = load_config(tmp_path / "c.yaml", seed=3)
    assert cfg.sampler.n_initial == 7 and cfg.seed == 3 and cfg.total_iters == 10
    assert TrainConfig(**cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    ref = load_config(root / "reference.yaml")
    assert ref.total_iters == 2000 and ref.weights.sg == 4.0 and ref.lr_field == 1e-3


def test_switch_preserves_sdf():
    b = ((-1.1, -1.1, -0.1), (1.1, 1.1, 2.1))
    cfg = TrainConfig(field={"dtype": "float64"})
    f = make_field(b, cfg, "coarse")
    gen = torch.Generator().manual_seed(0)
    with torch.no_grad():
        for g in f.grid.features:
            g.copy_(torch.randn(g.shape, generator=gen, dtype=g.dtype) * 0.1)
    nodes = f.grid.node_positions(0).reshape(-1, 3)
    # the last coarse nodes overhang the box, where both lattices clamp
    nodes = nodes[np.all(nodes <= np.asarray(b[1]), axis=1)]
    pts = np.concatenate([nodes, np.random.default_rng(1).uniform(b[0], b[1], (500, 3))])
    with torch.no_grad():
        before = f.sdf(pts).numpy()
    switch_to_fine(f, b, cfg)
    assert tuple(f.grid.voxel_sizes) == (0.03, 0.06, 0.24, 0.96)
    with torch.no_grad():
        after = f.sdf(pts).numpy()
    assert np.max(np.abs(after - before)) <= 1e-6


def test_ray_depth_is_distance_along_ray(tiny_scene):
    _, _, ds = tiny_scene
    table = build_ray_table(ds)
    fr = ds.frames[0]
    o, d, near, far, cos = frame_rays(ds.intrinsics, fr.pose, ds.bounds)
    n = ds.intrinsics.width * ds.intrinsics.height
    D = table.depth[:n]
    ok = D > 0
    pts = o[ok] + D[ok, None] * d[ok]
    cam = (pts - fr.pose.translation) @ fr.pose.rotation
    np.testing.assert_allclose(cam[:, 2], fr.depth.ravel()[ok], rtol=1e-12)
    assert np.all(near >= 0.05) and np.all(far > near)


def test_train_smoke_and_history(tmp_path, tiny_scene):
    _, _, ds = tiny_scene
    cfg = TrainConfig(**SMALL)
    res = train(ds, cfg, out=tmp_path / "a.ckpt", history_path=tmp_path / "a.csv")
    assert len(res.history) == cfg.total_iters
    assert [h["stage"] for h in res.history] == ["coarse"] * 4 + ["fine"] * 4
    assert all(math.isfinite(h[k]) for h in res.history for k in HISTORY_COLUMNS[2:])
    hist = read_history(tmp_path / "a.csv")
    assert [h["total"] for h in hist] == [h["total"] for h in res.history]
    field, meta = load_checkpoint(tmp_path / "a.ckpt")
    assert meta["iteration"] == cfg.total_iters and meta["train_config"]["seed"] == 0
    col, sem, dep = render_image(field, ds.intrinsics, ds.frames[0].pose, ds.bounds,
                                 TrainConfig(**meta["train_config"]))
    assert col.shape == (ds.intrinsics.height, ds.intrinsics.width, 3) and np.all(np.isfinite(dep))


def test_train_deterministic(tmp_path, tiny_scene):
    _, _, ds = tiny_scene
    cfg = TrainConfig(**SMALL)
    a = train(ds, cfg, out=tmp_path / "a.ckpt")
    b = train(ds, cfg, out=tmp_path / "b.ckpt")
    assert [h["total"] for h in a.history] == [h["total"] for h in b.history]
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_no_semantic_zero_terms(tiny_scene):
    _, _, ds = tiny_scene
    res = train(ds, TrainConfig(**SMALL, no_semantic=True))
    assert all(h["sem_rgb"] == 0 and h["sem_d"] == 0 for h in res.history)


def test_no_sg_mlp_skips_pr(tiny_scene):
    _, _, ds = tiny_scene
    res = train(ds, TrainConfig(**SMALL, no_sg_mlp=True))
    assert all(h["pr"] == 0 for h in res.history)
    assert all(math.isfinite(h["total"]) for h in res.history)


def test_nan_aborts_with_last_good_checkpoint(tmp_path, tiny_scene):
    _, _, ds = tiny_scene
    cfg = TrainConfig(**dict(SMALL, snapshot_every=2))

    def poison(it, field, _):
        if it == 4:
            with torch.no_grad():
                field.rgb_mlp[0].weight[0, 0] = float("nan")

    with pytest.raises(NumericalError, match="rgb_mlp.0.weight"):
        train(ds, cfg, out=tmp_path / "x.ckpt", callback=poison)
    field, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta["iteration"] == 4 and meta["aborted_at"] == 5
    field.check_finite()


def test_empty_dataset_rejected(tiny_scene):
    from dataclasses import replace

    _, _, ds = tiny_scene
    with pytest.raises(ValueError):
        train(replace(ds, frames=[]), TrainConfig(**SMALL))


def test_gradient_check_passes():
    rep = gradient_check(GradCheckConfig())
    assert rep.passed, rep.table()
    assert set(rep.max_rel_err) == {"pr", "rgb", "d", "sdf", "fs", "eik", "smooth", "sem_rgb", "sem_d",
                                    "rgb_fine", "d_fine"}
    assert rep.seconds < 60


@pytest.mark.slow
def test_plane_scene_converges(tmp_path):
    # raised floor inside the room; defaults except the iteration count
    spec = SceneSpec(primitives=[{"type": "plane", "normal": (0, 0, 1), "offset": 0.3, "color": (0.6, 0.5, 0.3),
                                  "class_id": 2}], n_frames=8, width=40, height=30, gt_resolution=0.05)
    ds = generate_synthetic(spec, tmp_path, 0)
    res = train(ds, TrainConfig(total_iters=500, log_every=0))
    assert res.history[-1]["total"] < 0.1 * res.history[10]["total"]
