"""Progressive coarse-to-fine training.

The first half of the iterations renders with feature grids whose voxels are
``coarse_factor`` times larger; at the half-way point the coarse features are
resampled trilinearly onto the fine lattices and training continues there.
Decoders and their optimiser state carry over unchanged.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field as dc_field, fields, replace
from pathlib import Path

import numpy as np
import torch
import yaml

from .field import FieldConfig, FieldError, NeuralField, MultiResFeatureGrid, _grid_dims, save_checkpoint, sdf_gradient
from .geometry import pixels_to_rays, ray_box_interval
from .losses import (SEM_TERMS, SG_TERMS, LossWeights, depth_mask, loss_depth, loss_eikonal, loss_fs, loss_pr,
                     loss_rgb, loss_sdf, loss_smooth, loss_smooth_at, near_surface_points, partition,
                     smooth_offsets, total_loss)
from .renderer import coarse_weights, deltas, render_samples, volume_density
from .sampler import SamplerConfig, hierarchical_sample, weight_resample
from .geometry import stratified_samples

log = logging.getLogger(__name__)

STAGES = ("coarse", "fine")
HISTORY_COLUMNS = ("iteration", "stage") + SG_TERMS + SEM_TERMS + ("total",)


class ConfigError(ValueError):
    pass


class NumericalError(FieldError):
    pass


@dataclass
class TrainConfig:
    total_iters: int = 2000
    rays_per_batch: int = 1024
    lr_field: float = 1e-3
    lr_pr: float = 1e-3
    lr_semantic: float = 1e-3
    fine_voxel_sizes: tuple = (0.03, 0.06, 0.24, 0.96)
    coarse_factor: float = 10.0
    beta: float = 1.0
    # "auto": standard weights while coarse, reweighted once fine
    weight_mode: str = "auto"
    sampler: SamplerConfig = dc_field(default_factory=SamplerConfig)
    weights: LossWeights = dc_field(default_factory=LossWeights)
    field: dict = dc_field(default_factory=dict)
    seed: int = 0
    no_semantic: bool = False
    no_sg_mlp: bool = False
    near: float = 0.05
    min_weight: float = 0.5
    eik_points: int = 1024
    smooth_points: int = 256
    log_every: int = 100
    snapshot_every: int = 25

    def __post_init__(self):
        if isinstance(self.sampler, dict):
            self.sampler = SamplerConfig(**self.sampler)
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        self.fine_voxel_sizes = tuple(float(v) for v in self.fine_voxel_sizes)
        if self.total_iters < 2 or self.total_iters % 2:
            raise ConfigError("total_iters must be even and >= 2")
        if self.coarse_factor < 1:
            raise ConfigError("coarse_factor must be >= 1")
        if min(self.lr_field, self.lr_pr, self.lr_semantic) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.rays_per_batch < 1:
            raise ConfigError("rays_per_batch must be >= 1")
        if self.weight_mode not in ("auto", "neus_standard", "fine_reweighted"):
            raise ConfigError(f"unknown weight_mode {self.weight_mode!r}")
        known = {f.name for f in fields(FieldConfig)} - {"bounds_min", "bounds_max", "voxel_sizes"}
        bad = set(self.field) - known
        if bad:
            raise ConfigError(f"unknown field option(s): {', '.join(sorted(bad))}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fine_voxel_sizes"] = list(self.fine_voxel_sizes)
        return d


def load_config(path=None, **overrides) -> TrainConfig:
    """TrainConfig from a YAML mapping; nested ``sampler``, ``weights`` and ``field`` sections."""
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in fields(TrainConfig)}
    bad = set(data) - names
    if bad:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(bad))}")
    try:
        return TrainConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# schedule -------------------------------------------------------------------

def stage_for(iteration: int, total: int) -> str:
    if not 0 <= iteration < total:
        raise ValueError(f"iteration {iteration} outside [0, {total})")
    return "coarse" if iteration < total // 2 else "fine"


@dataclass
class GridSpec:
    voxel_sizes: tuple
    dims: list
    collapsed: list


def grids_for_stage(bounds, cfg: TrainConfig, stage: str) -> GridSpec:
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    factor = cfg.coarse_factor if stage == "coarse" else 1.0
    sizes = tuple(v * factor for v in cfg.fine_voxel_sizes)
    extent = np.asarray(bounds[1], float) - np.asarray(bounds[0], float)
    dims = [_grid_dims(extent, v) for v in sizes]
    collapsed = [bool(np.any(v > extent)) for v in sizes]
    return GridSpec(sizes, dims, collapsed)


# optimiser ------------------------------------------------------------------

@dataclass
class AdamMoment:
    m: object
    v: object
    t: int = 0


def adam_step(params: dict, grads: dict, moments: dict, lr: float, t: int | None = None,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam, in place on tensors or arrays.

    ``moments`` maps block name to :class:`AdamMoment`; missing entries are
    created. Each block keeps its own step count unless ``t`` is given.
    Blocks without a gradient are skipped. Returns ``(params, moments)``.
    """
    if t is not None and t < 1:
        raise ValueError("step count must be >= 1")
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        finite = torch.isfinite(g).all() if torch.is_tensor(g) else np.isfinite(g).all()
        if not finite:
            raise NumericalError(f"non-finite gradient in block '{name}'")
        mom = moments.get(name)
        if mom is None:
            zero = torch.zeros_like(p) if torch.is_tensor(p) else np.zeros_like(p)
            mom = moments[name] = AdamMoment(zero, zero.clone() if torch.is_tensor(zero) else zero.copy())
        if mom.m.shape != p.shape:
            raise ValueError(f"moment shape mismatch for block '{name}'")
        mom.t = t if t is not None else mom.t + 1
        with torch.no_grad():
            mom.m *= beta1
            mom.m += (1 - beta1) * g
            mom.v *= beta2
            mom.v += (1 - beta2) * g * g
            m_hat = mom.m / (1 - beta1 ** mom.t)
            v_hat = mom.v / (1 - beta2 ** mom.t)
            p -= lr * m_hat / (v_hat ** 0.5 + eps)
    return params, moments


# rays -----------------------------------------------------------------------

@dataclass
class RayTable:
    """Every pixel of every frame as a world ray with its targets."""
    origins: np.ndarray
    dirs: np.ndarray
    near: np.ndarray
    far: np.ndarray
    depth: np.ndarray  # distance along the ray, 0 = invalid
    color: np.ndarray
    semantic: np.ndarray | None

    def __len__(self):
        return len(self.origins)


def frame_rays(intr, pose, bounds, near: float = 0.05):
    """Rays through every pixel centre (row-major) with box-clipped near/far."""
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    o, d = pixels_to_rays(intr, pose, u.ravel().astype(float), v.ravel().astype(float))
    t0, t1 = ray_box_interval(o, d, bounds[0], bounds[1])
    nr = np.maximum(t0, near)
    fr = np.maximum(t1, nr + 1e-3)
    # z-depth to distance along the unit ray
    cos = d @ pose.rotation[:, 2]
    return o, d, nr, fr, cos


def build_ray_table(dataset, near: float = 0.05, use_semantic: bool = True) -> RayTable:
    parts = {k: [] for k in ("o", "d", "n", "f", "D", "c", "s")}
    sem = use_semantic and dataset.has_semantics
    for fr in dataset.frames:
        o, d, n, f, cos = frame_rays(dataset.intrinsics, fr.pose, dataset.bounds, near)
        z = fr.depth.ravel()
        parts["o"].append(o)
        parts["d"].append(d)
        parts["n"].append(n)
        parts["f"].append(f)
        parts["D"].append(np.where(z > 0, z / cos, 0.0))
        parts["c"].append(fr.color.reshape(-1, 3))
        if sem:
            parts["s"].append(fr.semantic.reshape(-1, 3))
    cat = {k: np.concatenate(v, 0) for k, v in parts.items() if v}
    return RayTable(cat["o"], cat["d"], cat["n"], cat["f"], cat["D"], cat["c"], cat.get("s"))


# sampling -------------------------------------------------------------------

def _np_density(field, pts, fn):
    with torch.no_grad():
        return fn(torch.as_tensor(pts, dtype=field.dtype)).double().numpy()


def draw_depths(field, origins, dirs, near, far, cfg: TrainConfig, rng, sampler: SamplerConfig | None = None):
    """Sample depths per ray (no gradient). Returns ``(final depths, layer-0 depths or None)``.

    With ``no_sg_mlp`` the pre-rendering pass is replaced by plain stratified
    sampling followed by inverse-CDF resampling on the current SDF weights.
    """
    sc = sampler or cfg.sampler

    def sdf_sigma(p):
        return _np_density(field, p, lambda x: volume_density(field.sdf(x), field.inv_s))

    if not cfg.no_sg_mlp:
        layer = hierarchical_sample(origins, dirs, near, far, lambda p: _np_density(field, p, field.pr_density),
                                    sdf_sigma, sc, rng)
        return layer.depths, layer.initial_depths
    z = stratified_samples(near, sc.n_initial, rng, jitter=sc.jitter, far=far)
    for _ in range(sc.n_layers):
        pts = origins[:, None, :] + z[..., None] * dirs[:, None, :]
        sigma = sdf_sigma(pts.reshape(-1, 3)).reshape(z.shape)
        w = coarse_weights(torch.as_tensor(sigma), deltas(torch.as_tensor(z))).numpy()
        z = weight_resample(z, w, sc.n_per_layer, rng, near, far)
    return z, None


def pr_depth(field, origins, dirs, z):
    """Depth rendered from pre-rendering densities with the transmittance weights."""
    zt = torch.as_tensor(z, dtype=field.dtype)
    o = torch.as_tensor(origins, dtype=field.dtype)
    d = torch.as_tensor(dirs, dtype=field.dtype)
    pts = o[:, None, :] + zt[..., None] * d[:, None, :]
    sigma = field.pr_density(pts.reshape(-1, 3)).reshape(zt.shape)
    w = coarse_weights(sigma, deltas(zt))
    return (w * zt).sum(-1)


# loss assembly --------------------------------------------------------------

@dataclass
class Batch:
    origins: np.ndarray
    dirs: np.ndarray
    depth: np.ndarray
    color: np.ndarray
    semantic: np.ndarray | None
    z: np.ndarray
    z_initial: np.ndarray | None


def batch_terms(field, batch: Batch, cfg: TrainConfig, stage: str, rng, eik_idx=None, smooth_pts=None):
    """Every loss term for one batch, as differentiable scalars.

    ``eik_idx`` (indices into the free-space samples) and ``smooth_pts``
    (points, offsets) may be fixed by the caller; otherwise they are drawn
    from ``rng``.
    """
    w = cfg.weights
    dt = field.dtype
    D = torch.as_tensor(batch.depth, dtype=dt)
    z = torch.as_tensor(batch.z, dtype=dt)
    r, sdf = render_samples(field, batch.origins, batch.dirs, z, stage, cfg.weight_mode, cfg.beta)
    s_tr, s_fs = partition(z, D, w.tr)
    terms = {}
    if batch.z_initial is not None:
        n_tr = s_tr.sum(-1).to(dt)
        terms["pr"] = loss_pr(pr_depth(field, batch.origins, batch.dirs, batch.z_initial), D, n_tr)
    terms["rgb"] = loss_rgb(r.color, torch.as_tensor(batch.color, dtype=dt))
    dmask = depth_mask(D, r.weight_sum, cfg.min_weight)
    terms["d"] = loss_depth(r.depth, D, dmask)
    terms["sdf"] = loss_sdf(sdf, z, D, s_tr, w.tr)
    terms["fs"] = loss_fs(sdf, s_fs, w.tr)
    # eikonal on a subset of the free-space samples
    fs_idx = np.flatnonzero(s_fs.numpy().ravel())
    if eik_idx is None and len(fs_idx):
        eik_idx = fs_idx if len(fs_idx) <= cfg.eik_points else np.sort(
            rng.choice(fs_idx, cfg.eik_points, replace=False))
    if eik_idx is not None and len(eik_idx):
        pts = (torch.as_tensor(batch.origins, dtype=dt)[:, None, :]
               + z[..., None] * torch.as_tensor(batch.dirs, dtype=dt)[:, None, :]).reshape(-1, 3)
        terms["eik"] = loss_eikonal(sdf_gradient(field, pts[torch.as_tensor(eik_idx)]))
    if smooth_pts is None:
        terms["smooth"] = loss_smooth(field, rng, cfg.smooth_points, w.tr)
    elif len(smooth_pts[0]):
        terms["smooth"] = loss_smooth_at(field, smooth_pts[0], smooth_pts[1])
    if batch.semantic is not None and not cfg.no_semantic:
        terms["sem_rgb"] = loss_rgb(r.semantic_color, torch.as_tensor(batch.semantic, dtype=dt))
        terms["sem_d"] = loss_depth(r.depth, D, dmask)
    return terms, r


# training loop --------------------------------------------------------------

@dataclass
class TrainResult:
    field: NeuralField
    history: list
    meta: dict
    seconds: float


def make_field(bounds, cfg: TrainConfig, stage: str = "coarse") -> NeuralField:
    spec = grids_for_stage(bounds, cfg, stage)
    fc = FieldConfig(bounds_min=tuple(float(v) for v in bounds[0]), bounds_max=tuple(float(v) for v in bounds[1]),
                     voxel_sizes=spec.voxel_sizes, seed=cfg.seed, **cfg.field)
    return NeuralField(fc)


def switch_to_fine(field: NeuralField, bounds, cfg: TrainConfig) -> None:
    """Replace the coarse grids by fine ones carrying the resampled features."""
    spec = grids_for_stage(bounds, cfg, "fine")
    old = field.grid
    new = MultiResFeatureGrid(old.lo, old.hi, spec.voxel_sizes, old.feat_dim, 0.0, None, field.dtype)
    new.resample_from(old)
    field.grid = new
    field.cfg = replace(field.cfg, voxel_sizes=spec.voxel_sizes)


def _lr_for(cfg: TrainConfig, group: str) -> float:
    return {"field": cfg.lr_field, "pr": cfg.lr_pr, "semantic": cfg.lr_semantic}[group]


def write_history(path, history: list) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(HISTORY_COLUMNS)
        for h in history:
            wr.writerow([h["iteration"], h["stage"]] + [repr(float(h[k])) for k in HISTORY_COLUMNS[2:]])


def read_history(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {k: float(v) for k, v in r.items() if k not in ("iteration", "stage")}
        d["iteration"] = int(r["iteration"])
        d["stage"] = r["stage"]
        out.append(d)
    return out


def dataset_meta(dataset) -> dict:
    intr = dataset.intrinsics
    return {
        "intrinsics": [intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, intr.depth_scale],
        "poses": [f.pose.matrix().ravel().tolist() for f in dataset.frames],
        "bounds": [list(dataset.bounds[0]), list(dataset.bounds[1])],
        "data": str(dataset.root) if dataset.root is not None else None,
    }


def train(dataset, cfg: TrainConfig, out=None, history_path=None, callback=None) -> TrainResult:
    """Run ``cfg.total_iters`` iterations; optionally write a checkpoint and CSV history.

    On a non-finite loss or gradient the last good parameters are written to
    ``out`` (if given) and :class:`NumericalError` is raised.
    """
    if not dataset.frames:
        raise ValueError("dataset has no frames")
    t_start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    use_sem = not cfg.no_semantic and dataset.has_semantics
    table = build_ray_table(dataset, cfg.near, use_sem)
    n_rays = len(table)
    field = make_field(dataset.bounds, cfg, "coarse")
    moments: dict = {}
    history: list = []
    meta = dataset_meta(dataset)
    meta["train_config"] = cfg.to_dict()
    snapshot = copy.deepcopy(field.state_dict())
    snap_iter = 0
    half = cfg.total_iters // 2

    def abort(it, why):
        field.load_state_dict(snapshot)
        if out is not None:
            save_checkpoint(out, field, dict(meta, iteration=snap_iter, aborted_at=it))
        raise NumericalError(f"iteration {it}: {why}; last good state from iteration {snap_iter}"
                             + (f" saved to {out}" if out is not None else ""))

    for it in range(cfg.total_iters):
        stage = stage_for(it, cfg.total_iters)
        if it == half:
            switch_to_fine(field, dataset.bounds, cfg)
            for k in [k for k in moments if k.startswith("grid.")]:
                del moments[k]
            snapshot = copy.deepcopy(field.state_dict())
            snap_iter = it
        idx = np.sort(rng.choice(n_rays, cfg.rays_per_batch, replace=False))
        o, d = table.origins[idx], table.dirs[idx]
        try:
            z, z0 = draw_depths(field, o, d, table.near[idx], table.far[idx], cfg, rng)
            batch = Batch(o, d, table.depth[idx], table.color[idx],
                          None if table.semantic is None else table.semantic[idx], z, z0)
            terms, _ = batch_terms(field, batch, cfg, stage, rng)
        except FieldError as exc:
            abort(it, str(exc))
        total, breakdown = total_loss(terms, cfg.weights, stage)
        if not math.isfinite(breakdown["total"]):
            try:
                field.check_finite()
            except FieldError as exc:
                abort(it, f"non-finite loss ({exc})")
            abort(it, "non-finite loss")
        blocks = field.param_blocks()
        for p in blocks.values():
            p.grad = None
        total.backward()
        grads = {k: p.grad for k, p in blocks.items() if p.grad is not None}
        try:
            for group in ("field", "pr", "semantic"):
                names = [k for k in blocks if field.group_of(k) == group]
                adam_step({k: blocks[k] for k in names}, grads, moments, _lr_for(cfg, group))
            field.check_finite()
        except FieldError as exc:
            abort(it, str(exc))
        history.append(dict(iteration=it, stage=stage, **breakdown))
        if cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0:
            snapshot = copy.deepcopy(field.state_dict())
            snap_iter = it + 1
        if cfg.log_every and (it % cfg.log_every == 0 or it == cfg.total_iters - 1):
            log.info("it %d %s %s", it, stage, " ".join(f"{k}={v:.4g}" for k, v in breakdown.items()))
        if callback is not None:
            callback(it, field, breakdown)
    meta["iteration"] = cfg.total_iters
    if out is not None:
        save_checkpoint(out, field, meta)
    if history_path is not None:
        write_history(history_path, history)
    return TrainResult(field, history, meta, time.perf_counter() - t_start)


# rendering whole images -------------------------------------------------------

def render_image(field, intr, pose, bounds, cfg: TrainConfig, stage: str = "fine", chunk: int = 2048,
                 seed: int = 0):
    """Colour, semantic colour (H, W, 3) and ray depth (H, W) for one camera."""
    o, d, near, far, _ = frame_rays(intr, pose, bounds, cfg.near)
    sc = replace(cfg.sampler, jitter=False)
    rng = np.random.default_rng(seed)
    cols, sems, deps = [], [], []
    for s in range(0, len(o), chunk):
        sl = slice(s, s + chunk)
        z, _ = draw_depths(field, o[sl], d[sl], near[sl], far[sl], cfg, rng, sc)
        with torch.no_grad():
            r, _ = render_samples(field, o[sl], d[sl], z, stage, cfg.weight_mode, cfg.beta)
        cols.append(r.color.double().numpy())
        sems.append(r.semantic_color.double().numpy())
        deps.append(r.depth.double().numpy())
    h, w = intr.height, intr.width
    return (np.concatenate(cols).reshape(h, w, 3), np.concatenate(sems).reshape(h, w, 3),
            np.concatenate(deps).reshape(h, w))


# gradient check ---------------------------------------------------------------

GRADCHECK_TOL = {"eik": 1e-3, "smooth": 1e-3}


@dataclass
class GradCheckConfig:
    grid_nodes: int = 8
    width: int = 16
    n_params: int = 64
    n_rays: int = 16
    seed: int = 0
    # step of the five-point stencil
    h: float = 3e-4
    tol: float = 1e-4
    # relative error denominator floor, guards entries whose true gradient is ~0
    floor: float = 1e-6


@dataclass
class GradCheckReport:
    max_rel_err: dict
    tolerance: dict
    n_params: int
    seconds: float

    @property
    def passed(self) -> bool:
        return all(self.max_rel_err[k] <= self.tolerance[k] for k in self.max_rel_err)

    def table(self) -> str:
        lines = [f"{'term':<10s} {'max rel err':>12s} {'tol':>8s}  ok"]
        for k, v in self.max_rel_err.items():
            lines.append(f"{k:<10s} {v:12.3e} {self.tolerance[k]:8.0e}  {'yes' if v <= self.tolerance[k] else 'NO'}")
        return "\n".join(lines)


def _tiny_problem(gc: GradCheckConfig):
    """A small random field and a fixed batch around a sphere."""
    rng = np.random.default_rng(gc.seed)
    v0 = 2.0 / (gc.grid_nodes - 1)
    fc = FieldConfig(voxel_sizes=(v0, 2 * v0), feat_dim=2, geo_dim=4, sdf_hidden=gc.width, sdf_layers=2,
                     rgb_hidden=gc.width, rgb_layers=1, pr_hidden=gc.width, pr_layers=1, sem_hidden=gc.width,
                     pe_octaves=2, dir_octaves=1, prior="sphere", prior_radius=0.5, inv_s_init=8.0,
                     feature_init_std=0.1, seed=gc.seed)
    field = NeuralField(fc)
    with torch.no_grad():
        field.sdf_mlp[-1].weight[:1].normal_(0.0, 0.05, generator=torch.Generator().manual_seed(gc.seed))
    # rays from outside the sphere towards it
    o = rng.uniform(-0.9, 0.9, size=(gc.n_rays, 3))
    o /= np.linalg.norm(o, axis=-1, keepdims=True)
    o *= 0.95
    tgt = rng.normal(size=(gc.n_rays, 3)) * 0.1
    d = tgt - o
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    depth = 0.45 + rng.uniform(-0.05, 0.05, gc.n_rays)
    depth[0] = 0.0  # one invalid ray
    near, far = np.full(gc.n_rays, 0.05), np.full(gc.n_rays, 1.2)
    z0 = stratified_samples(near, 16, rng, far=far)
    z = np.sort(np.concatenate([z0, depth[:, None] + rng.uniform(-0.06, 0.06, (gc.n_rays, 8))], -1), -1)
    color = rng.uniform(size=(gc.n_rays, 3))
    sem = rng.uniform(size=(gc.n_rays, 3))
    batch = Batch(o, d, depth, color, sem, z, z0)
    pts = rng.uniform(-0.6, 0.6, size=(32, 3))
    offs = smooth_offsets(rng, 32, v0)
    return field, batch, (pts, offs), rng


def gradient_check(gc: GradCheckConfig | None = None) -> GradCheckReport:
    """Central finite differences against autograd for every loss term.

    Each term uses a fixed sample set and a fixed validity mask, so the loss is
    a smooth function of the parameters being perturbed.
    """
    gc = gc or GradCheckConfig()
    t0 = time.perf_counter()
    field, batch, smooth_pts, rng = _tiny_problem(gc)
    cfg = TrainConfig(total_iters=2, min_weight=0.0)
    blocks = field.param_blocks()
    names = list(blocks)
    sizes = np.array([blocks[k].numel() for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    # fixed eikonal subset of the free-space samples
    s_tr, s_fs = partition(torch.as_tensor(batch.z), torch.as_tensor(batch.depth), cfg.weights.tr)
    eik_idx = np.flatnonzero(s_fs.numpy().ravel())[:48]

    def term_fn(name, stage):
        def f():
            terms, _ = batch_terms(field, batch, cfg, stage, rng, eik_idx=eik_idx, smooth_pts=smooth_pts)
            return terms[name]
        return f

    checks = {k: term_fn(k, "coarse") for k in SG_TERMS + SEM_TERMS}
    checks["rgb_fine"] = term_fn("rgb", "fine")
    checks["d_fine"] = term_fn("d", "fine")

    def flat_get(i):
        b = int(np.searchsorted(offsets, i, side="right") - 1)
        return blocks[names[b]].view(-1), i - offsets[b]

    report = {}
    tols = {}
    for key, f in checks.items():
        for p in blocks.values():
            p.grad = None
        f().backward()
        g = torch.cat([(p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in blocks.values()])
        g = g.detach().numpy()
        nz = np.flatnonzero(np.abs(g) > 0)
        k_nz = min(len(nz), gc.n_params * 3 // 4)
        pick = rng.choice(nz, k_nz, replace=False) if k_nz else np.array([], dtype=int)
        pick = np.concatenate([pick, rng.choice(offsets[-1], gc.n_params - k_nz, replace=False)])
        worst = 0.0
        for i in pick:
            flat, j = flat_get(int(i))
            vals = []
            with torch.no_grad():
                orig = flat[j].item()
                for step in (-2, -1, 1, 2):
                    flat[j] = orig + step * gc.h
                    vals.append(float(f()))
                flat[j] = orig
            # fourth-order central difference
            num = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * gc.h)
            err = abs(num - g[i]) / max(abs(num), abs(g[i]), gc.floor)
            worst = max(worst, err)
        report[key] = worst
        tols[key] = GRADCHECK_TOL.get(key, gc.tol)
    return GradCheckReport(report, tols, gc.n_params, time.perf_counter() - t0)
