"""Density-guided hierarchical sampling along rays.

Layer 0 is a stratified set scored by the pre-rendering MLP. Each further
layer thresholds the current densities at a blend of their mean and max,
keeps the points strictly above it, and draws new depths from the kept points
in proportion to their density. New depths are uniform inside the anchor's
stratum, the interval between the midpoints to its neighbouring samples.

All functions are batched over rays: depth arrays have shape ``(R, N)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import Ray, stratified_samples

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    n_initial: int = 64
    n_per_layer: int = 32
    n_layers: int = 2
    lam: float = 0.5
    seed: int = 0
    jitter: bool = True

    def __post_init__(self):
        if self.n_initial < 1 or self.n_per_layer < 1 or self.n_layers < 0:
            raise ValueError("sample counts must be >= 1 (n_layers >= 0)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @property
    def total(self) -> int:
        return self.n_initial + self.n_layers * self.n_per_layer


@dataclass
class SampleLayer:
    depths: np.ndarray
    densities: np.ndarray
    layer_index: int
    positions: np.ndarray | None = None
    # depths of the stratified layer 0 that seeded the refinement
    initial_depths: np.ndarray | None = None


def ray_rng(seed: int, ray_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, ray_id])


def _points(origins, dirs, depths):
    return origins[:, None, :] + depths[..., None] * dirs[:, None, :]


def presample(origins, dirs, near, far, density_fn, cfg: SamplerConfig, rng) -> SampleLayer:
    depths = stratified_samples(near, cfg.n_initial, rng, jitter=cfg.jitter, far=far)
    pts = _points(origins, dirs, depths)
    sigma = np.asarray(density_fn(pts.reshape(-1, 3)), dtype=np.float64).reshape(depths.shape)
    return SampleLayer(depths, sigma, 0, pts)


def dynamic_threshold(densities, lam: float):
    """``lam * mean + (1 - lam) * max`` along the last axis."""
    s = np.asarray(densities, dtype=np.float64)
    if s.shape[-1] == 0:
        raise ValueError("empty density list")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    tau = lam * s.mean(-1) + (1.0 - lam) * s.max(-1)
    # rounding can push the blend a hair outside [mean, max]
    return np.clip(tau, s.mean(-1), s.max(-1))


def filter_and_pdf(densities, tau):
    """Keep ``sigma > tau``; pdf over the kept set (zeros elsewhere).

    A row with nothing above the threshold keeps its single argmax with pdf 1.
    Returns ``(kept mask, pdf, fallback rows)``.
    """
    s = np.asarray(densities, dtype=np.float64)
    squeeze = s.ndim == 1
    s2 = np.atleast_2d(s)
    tau = np.asarray(tau, dtype=np.float64).reshape(-1, 1)
    kept = s2 > tau
    empty = ~kept.any(-1)
    if empty.any():
        log.debug("threshold removed every sample on %d rays; keeping argmax", int(empty.sum()))
        kept[empty, np.argmax(s2[empty], -1)] = True
    mass = np.where(kept, s2, 0.0)
    total = mass.sum(-1, keepdims=True)
    # all-zero kept mass (possible in the fallback) becomes uniform over kept
    pdf = np.where(total > 0, mass / np.where(total > 0, total, 1.0), kept / kept.sum(-1, keepdims=True))
    if squeeze:
        return kept[0], pdf[0], bool(empty[0])
    return kept, pdf, empty


def strata(depths, near, far):
    """Per-sample interval between the midpoints to its neighbours, clipped to ``[near, far]``."""
    z = np.atleast_2d(depths)
    near = np.broadcast_to(np.asarray(near, float).reshape(-1, 1), (z.shape[0], 1))
    far = np.broadcast_to(np.asarray(far, float).reshape(-1, 1), (z.shape[0], 1))
    mid = 0.5 * (z[:, 1:] + z[:, :-1])
    lo = np.concatenate([near, mid], -1)
    hi = np.concatenate([mid, far], -1)
    return lo, hi


def importance_resample(layer: SampleLayer, pdf, m: int, rng, near, far) -> np.ndarray:
    """Draw ``m`` new depths per ray; returns the merged, sorted depths."""
    if m < 1:
        raise ValueError("need at least one new sample")
    z = np.atleast_2d(layer.depths)
    p = np.atleast_2d(pdf)
    lo, hi = strata(z, near, far)
    cdf = np.cumsum(p, -1)
    cdf /= cdf[:, -1:]
    u = rng.uniform(size=(z.shape[0], m))
    anchor = np.minimum((cdf[:, None, :] <= u[:, :, None]).sum(-1), z.shape[1] - 1)
    # first index whose cdf exceeds u, so zero-pdf samples are never anchors
    rows = np.arange(z.shape[0])[:, None]
    a_lo = lo[rows, anchor]
    a_hi = hi[rows, anchor]
    v = rng.uniform(size=(z.shape[0], m))
    new = a_lo + v * (a_hi - a_lo)
    return np.sort(np.concatenate([z, new], -1), -1)


def hierarchical_sample(origins, dirs, near, far, pr_density_fn, sdf_density_fn,
                        cfg: SamplerConfig, rng) -> SampleLayer:
    """Layer 1 is guided by the pre-rendering densities, later layers by the SDF density."""
    origins = np.atleast_2d(origins)
    dirs = np.atleast_2d(dirs)
    near = np.atleast_1d(np.asarray(near, float))
    far = np.atleast_1d(np.asarray(far, float))
    layer = presample(origins, dirs, near, far, pr_density_fn, cfg, rng)
    initial = layer.depths
    for k in range(1, cfg.n_layers + 1):
        if k > 1:
            pts = _points(origins, dirs, layer.depths)
            sigma = np.asarray(sdf_density_fn(pts.reshape(-1, 3)), float).reshape(layer.depths.shape)
            layer = SampleLayer(layer.depths, sigma, k - 1, pts)
        tau = dynamic_threshold(layer.densities, cfg.lam)
        _, pdf, _ = filter_and_pdf(layer.densities, tau)
        depths = importance_resample(layer, pdf, cfg.n_per_layer, rng, near, far)
        layer = SampleLayer(depths, np.full(depths.shape, np.nan), k, None)
    layer.positions = _points(origins, dirs, layer.depths)
    layer.initial_depths = initial
    return layer


def weight_resample(depths, weights, m: int, rng, near, far) -> np.ndarray:
    """Inverse-CDF resampling on piecewise-constant weights (the plain NeRF scheme)."""
    z = np.atleast_2d(depths)
    w = np.atleast_2d(weights) + 1e-5
    lo, hi = strata(z, near, far)
    edges = np.concatenate([lo, hi[:, -1:]], -1)
    pdf = w / w.sum(-1, keepdims=True)
    cdf = np.concatenate([np.zeros((z.shape[0], 1)), np.cumsum(pdf, -1)], -1)
    u = rng.uniform(size=(z.shape[0], m))
    idx = np.clip((cdf[:, None, :] <= u[:, :, None]).sum(-1) - 1, 0, z.shape[1] - 1)
    rows = np.arange(z.shape[0])[:, None]
    c0 = cdf[rows, idx]
    c1 = cdf[rows, idx + 1]
    t = (u - c0) / np.maximum(c1 - c0, 1e-12)
    new = edges[rows, idx] + t * (edges[rows, idx + 1] - edges[rows, idx])
    return np.sort(np.concatenate([z, new], -1), -1)


def sample_ray(ray: Ray, pr_density_fn, sdf_density_fn, cfg: SamplerConfig, ray_id: int = 0) -> SampleLayer:
    """Single-ray convenience wrapper; the rng is derived from ``(cfg.seed, ray_id)``."""
    layer = hierarchical_sample(ray.origin[None], ray.direction[None], [ray.near], [ray.far],
                                pr_density_fn, sdf_density_fn, cfg, ray_rng(cfg.seed, ray_id))
    return SampleLayer(layer.depths[0], layer.densities[0], layer.layer_index, layer.positions[0],
                       layer.initial_depths[0])
