"""SDF-to-density conversion, ray weights and compositing.

Weight functions work on torch tensors of shape ``(R, S)`` (or ``(S,)``) and
keep the autograd graph; plain sequences are converted to float64 tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

EPS_FINE = 1e-6


def _t(x):
    return x if torch.is_tensor(x) else torch.as_tensor(np.asarray(x, dtype=np.float64))


@dataclass
class RayRender:
    color: torch.Tensor
    semantic_color: torch.Tensor
    depth: torch.Tensor
    weights: torch.Tensor
    weight_sum: torch.Tensor
    stage: str


def sdf_to_density(sdf, inv_s, sdf_positive_outside: bool = True):
    """Logistic sigmoid of the scaled SDF, oriented so density grows inside surfaces."""
    sdf = _t(sdf)
    inv_s = _t(inv_s)
    sign = -1.0 if sdf_positive_outside else 1.0
    return torch.sigmoid(sign * sdf * inv_s)


def volume_density(sdf, inv_s, sdf_positive_outside: bool = True):
    """Density in 1/m used for compositing: ``inv_s * sigmoid(-sdf * inv_s)``.

    For a ray crossing a plane the resulting weights follow the logistic pdf
    centred on the crossing, so the expected depth is the true surface depth.
    """
    return _t(inv_s) * sdf_to_density(sdf, inv_s, sdf_positive_outside)


def deltas(z):
    """Forward spacing ``z[k+1] - z[k]``; the last sample repeats the previous spacing."""
    z = _t(z)
    d = z[..., 1:] - z[..., :-1]
    if d.shape[-1] == 0:
        return torch.ones_like(z)
    return torch.cat([d, d[..., -1:]], -1)


def coarse_weights(sigma, dz):
    """``w_k = exp(-sum_{j<k} sigma_j dz_j) * (1 - exp(-sigma_k dz_k))``."""
    sigma = _t(sigma)
    dz = _t(dz)
    if sigma.shape != dz.shape:
        raise ValueError(f"length mismatch: {tuple(sigma.shape)} vs {tuple(dz.shape)}")
    tau = sigma * dz
    acc = torch.cumsum(tau, -1)
    before = torch.cat([torch.zeros_like(acc[..., :1]), acc[..., :-1]], -1)
    return torch.exp(-before) * -torch.expm1(-tau)


def fine_weights(w_coarse, sigma, dz, beta: float = 1.0, normalize: bool = True):
    """Reweight coarse weights by ``beta * exp(-sigma_k dz_k) / (1 - exp(-sigma_{k+1} dz_{k+1}))``.

    The last sample uses itself as successor; the denominator is clamped at
    1e-6. With ``normalize`` the result is rescaled so its sum equals
    ``min(sum(w_coarse), 1)``.
    """
    w_coarse, sigma, dz = _t(w_coarse), _t(sigma), _t(dz)
    tau = sigma * dz
    succ = torch.cat([tau[..., 1:], tau[..., -1:]], -1)
    denom = torch.clamp(-torch.expm1(-succ), min=EPS_FINE)
    w = beta * w_coarse * torch.exp(-tau) / denom
    if not normalize:
        return w
    target = torch.clamp(w_coarse.sum(-1, keepdim=True), max=1.0)
    total = w.sum(-1, keepdim=True)
    scale = torch.where(total > 0, target / torch.where(total > 0, total, torch.ones_like(total)),
                        torch.zeros_like(total))
    return w * scale


def composite(weights, colors, semantic_colors, z, stage: str = "coarse") -> RayRender:
    w, c, s, z = _t(weights), _t(colors), _t(semantic_colors), _t(z)
    if not (w.shape == z.shape and c.shape[:-1] == w.shape and s.shape[:-1] == w.shape):
        raise ValueError("weights, colours and depths must align")
    return RayRender(
        color=(w[..., None] * c).sum(-2),
        semantic_color=(w[..., None] * s).sum(-2),
        depth=(w * z).sum(-1),
        weights=w,
        weight_sum=w.sum(-1),
        stage=stage,
    )


def render_samples(field, origins, dirs, z, stage: str, weight_mode: str = "auto",
                   beta: float = 1.0, sdf_positive_outside: bool = True):
    """Decode a fixed set of samples and composite; differentiable in the field.

    ``weight_mode``: ``neus_standard`` uses the transmittance weights only,
    ``fine_reweighted`` applies the fine reweighting on top, ``auto`` picks the
    latter for the fine stage.
    Returns ``(RayRender, per-sample sdf)``.
    """
    origins, dirs, z = _t(origins), _t(dirs), _t(z)
    R, S = z.shape
    pts = origins[:, None, :] + z[..., None] * dirs[:, None, :]
    view = dirs[:, None, :].expand(R, S, 3).reshape(-1, 3)
    out = field.decode(pts.reshape(-1, 3), view)
    sdf = out.sdf.reshape(R, S)
    sigma = volume_density(sdf, field.inv_s, sdf_positive_outside)
    dz = deltas(z)
    w = coarse_weights(sigma, dz)
    mode = weight_mode
    if mode == "auto":
        mode = "fine_reweighted" if stage == "fine" else "neus_standard"
    if mode == "fine_reweighted":
        w = fine_weights(w, sigma, dz, beta)
    elif mode != "neus_standard":
        raise ValueError(f"unknown weight mode {weight_mode!r}")
    r = composite(w, out.color.reshape(R, S, 3), out.semantic_color.reshape(R, S, 3), z, stage)
    return r, sdf


def render_ray(field, ray, stage: str, sampler_cfg, weight_mode: str = "auto", beta: float = 1.0,
               ray_id: int = 0) -> RayRender:
    """Sample one ray hierarchically, then render it."""
    from .sampler import sample_ray

    def pr_fn(p):
        with torch.no_grad():
            return field.pr_density(p).numpy()

    def sdf_fn(p):
        with torch.no_grad():
            return volume_density(field.sdf(p), field.inv_s).numpy()

    layer = sample_ray(ray, pr_fn, sdf_fn, sampler_cfg, ray_id)
    with torch.no_grad():
        r, _ = render_samples(field, ray.origin[None], ray.direction[None], layer.depths[None],
                              stage, weight_mode, beta)
    return RayRender(r.color[0], r.semantic_color[0], r.depth[0], r.weights[0], r.weight_sum[0], stage)
