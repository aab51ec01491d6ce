"""Training objective: rendering, truncated-SDF, regularisation and semantic terms.

Every term is a pure function of tensors (or of a field plus fixed query
points) and returns a scalar tensor; a term whose support is empty returns 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .field import sdf_gradient

SG_TERMS = ("pr", "rgb", "d", "sdf", "fs", "eik", "smooth")
SEM_TERMS = ("sem_rgb", "sem_d")


@dataclass
class LossWeights:
    sg: float = 4.0
    sem: float = 1.0
    pr: float = 1.0
    rgb: float = 10.0
    d: float = 1.0
    sdf: float = 10.0
    fs: float = 1.0
    eik: float = 0.1
    smooth: float = 0.01
    sem_rgb: float = 1.0
    sem_d: float = 0.1
    # extra factor on the fine-stage colour and depth pair
    model: float = 5.0
    tr: float = 0.05

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be >= 0")
        if self.tr <= 0:
            raise ValueError("truncation must be positive")


def _zero(like=None):
    dt = like.dtype if torch.is_tensor(like) else torch.float64
    return torch.zeros((), dtype=dt)


def partition(z, depth, tr):
    """Truncation-region and free-space masks for samples ``z`` (R, S) given sensor depth (R,)."""
    valid = (depth > 0)[:, None]
    d = depth[:, None]
    s_tr = valid & ((z - d).abs() < tr)
    s_fs = valid & (z < d - tr)
    return s_tr, s_fs


def _ray_mean_of_means(per_point, mask):
    mask = mask.to(per_point.dtype)
    n = mask.sum(-1)
    has = n > 0
    if not bool(has.any()):
        return _zero(per_point)
    per_ray = (per_point * mask).sum(-1)[has] / n[has]
    return per_ray.mean()


def loss_pr(pr_depth, depth, n_tr):
    """Squared PR-rendered depth error, one copy per truncation-region sample of the ray."""
    n_tr = torch.as_tensor(n_tr, dtype=pr_depth.dtype)
    total = n_tr.sum()
    if total <= 0:
        return _zero(pr_depth)
    return (n_tr * (depth - pr_depth) ** 2).sum() / total


def loss_rgb(pred, target, mask=None):
    err = ((pred - target) ** 2).sum(-1)
    if mask is not None:
        if not bool(mask.any()):
            return _zero(pred)
        err = err[mask]
    if err.numel() == 0:
        return _zero(pred)
    return err.mean()


def depth_mask(depth, weight_sum=None, min_weight=0.5):
    m = depth > 0
    if weight_sum is not None:
        m = m & (weight_sum.detach() >= min_weight)
    return m


def loss_depth(pred, depth, mask=None):
    if mask is None:
        mask = depth > 0
    if not bool(mask.any()):
        return _zero(pred)
    return ((pred[mask] - depth[mask]) ** 2).mean()


def loss_sdf(sdf, z, depth, s_tr, tr):
    """Truncation-normalised SDF regression towards the clamped ray distance."""
    target = torch.clamp((depth[:, None] - z) / tr, -1.0, 1.0)
    return _ray_mean_of_means((sdf / tr - target) ** 2, s_tr)


def loss_fs(sdf, s_fs, tr):
    return _ray_mean_of_means((sdf / tr - 1.0) ** 2, s_fs)


def loss_eikonal(grads, ray_mask=None):
    """``(|grad| - 1)^2`` averaged over points (grads ``(P, 3)``) or per ray (``(R, S, 3)`` + mask)."""
    pen = (torch.linalg.norm(grads, dim=-1) - 1.0) ** 2
    if ray_mask is not None:
        return _ray_mean_of_means(pen, ray_mask)
    if pen.numel() == 0:
        return _zero(grads)
    return pen.mean()


def near_surface_points(field, rng: np.random.Generator, n_points: int, tr: float,
                        budget: int = 16, chunk: int = 4096):
    """Rejection-sample up to ``n_points`` positions with ``|sdf| < tr`` inside the field bounds."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    lo, hi = field.bounds
    found = []
    count = 0
    for _ in range(budget):
        x = rng.uniform(lo, hi, size=(chunk, 3))
        with torch.no_grad():
            s = field.sdf(x).numpy()
        keep = x[np.abs(s) < tr]
        found.append(keep)
        count += len(keep)
        if count >= n_points:
            break
    pts = np.concatenate(found, 0)[:n_points] if found else np.zeros((0, 3))
    return pts


def smooth_offsets(rng: np.random.Generator, n: int, magnitude: float):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d * magnitude


def loss_smooth_at(field, x, offsets, h=None):
    """Mean of ``|grad(x + delta) - grad(x)|^2`` at fixed points."""
    x = torch.as_tensor(np.asarray(x, dtype=np.float64)) if not torch.is_tensor(x) else x
    if x.shape[0] == 0:
        return _zero()
    offsets = torch.as_tensor(np.asarray(offsets), dtype=x.dtype)
    lo, hi = (torch.as_tensor(b, dtype=x.dtype) for b in field.bounds)
    xd = torch.minimum(torch.maximum(x + offsets, lo), hi)
    g = sdf_gradient(field, torch.cat([x, xd], 0), h)
    n = x.shape[0]
    return ((g[n:] - g[:n]) ** 2).sum(-1).mean()


def loss_smooth(field, rng: np.random.Generator, n_points: int, tr: float, h=None):
    """Gradient-difference smoothness on near-surface points; 0 when none are found."""
    pts = near_surface_points(field, rng, n_points, tr)
    if len(pts) == 0:
        return _zero()
    offs = smooth_offsets(rng, len(pts), field.finest_voxel)
    return loss_smooth_at(field, pts, offs, h)


def total_loss(terms: dict, w: LossWeights, stage: str = "coarse"):
    """Weighted sum; missing terms count as zero. Returns ``(total, breakdown)``."""
    def get(k):
        v = terms.get(k)
        return _zero() if v is None else v

    model = w.model if stage == "fine" else 1.0
    sg = (w.pr * get("pr") + model * (w.rgb * get("rgb") + w.d * get("d")) + w.sdf * get("sdf")
          + w.fs * get("fs") + w.eik * get("eik") + w.smooth * get("smooth"))
    sem = w.sem_rgb * get("sem_rgb") + w.sem_d * get("sem_d")
    total = w.sg * sg + w.sem * sem
    breakdown = {k: float(get(k).detach()) for k in SG_TERMS + SEM_TERMS}
    breakdown["total"] = float(total.detach())
    return total, breakdown
