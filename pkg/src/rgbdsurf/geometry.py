"""Camera model, rays, frequency encoding and stratified depth sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_scale: float = 1000.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")
        if not self.depth_scale > 0:
            raise ValueError("depth_scale must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform (OpenCV axes: x right, y down, z forward)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts) - self.translation) @ self.rotation


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        if not 0 <= self.near < self.far:
            raise ValueError(f"invalid ray interval [{self.near}, {self.far}]")

    def at(self, t):
        return self.origin + np.multiply.outer(np.asarray(t, dtype=np.float64), self.direction)


@dataclass(frozen=True)
class EncodedPoint:
    raw: np.ndarray
    encoding: np.ndarray


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose at ``eye`` whose optical axis points at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def pixel_to_ray(intr: CameraIntrinsics, pose: Pose, px: float, py: float,
                 near: float = 0.0, far: float = 10.0) -> Ray:
    # integer pixel coordinates are pixel centers
    if not (0 <= px < intr.width and 0 <= py < intr.height):
        raise ValueError(f"pixel ({px}, {py}) outside {intr.width}x{intr.height} image")
    o, d = pixels_to_rays(intr, pose, np.array([px], float), np.array([py], float))
    return Ray(o[0], d[0], near, far)


def pixels_to_rays(intr: CameraIntrinsics, pose: Pose, px: np.ndarray, py: np.ndarray):
    """Vectorised :func:`pixel_to_ray`; returns ``(origins, unit directions)`` in world frame."""
    cam = np.stack([(px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, np.ones_like(px, dtype=np.float64)], -1)
    d = cam @ pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return o, d


def project(intr: CameraIntrinsics, pose: Pose, pts: np.ndarray):
    """World points to ``(px, py, z_cam)``."""
    c = pose.world_to_camera(pts)
    z = c[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = intr.fx * c[..., 0] / z + intr.cx
        py = intr.fy * c[..., 1] / z + intr.cy
    return px, py, z


def positional_encode(x, L: int, include_raw: bool = True) -> EncodedPoint:
    """``[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]``."""
    if L < 0:
        raise ValueError("octave count must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    parts = [x] if include_raw else []
    for k in range(L):
        parts.append(np.sin((2.0 ** k) * np.pi * x))
        parts.append(np.cos((2.0 ** k) * np.pi * x))
    enc = np.concatenate(parts, axis=-1) if parts else np.zeros(x.shape[:-1] + (0,))
    return EncodedPoint(x, enc)


def ray_box_interval(origins: np.ndarray, dirs: np.ndarray, lo, hi):
    """Slab test; returns (t_enter, t_exit) per ray (t_exit < t_enter on a miss)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    tmin = np.nan_to_num(np.minimum(t0, t1), nan=-np.inf).max(axis=-1)
    tmax = np.nan_to_num(np.maximum(t0, t1), nan=np.inf).min(axis=-1)
    return tmin, tmax


def stratified_samples(ray_or_near, n: int, rng: np.random.Generator | None = None,
                       jitter: bool = True, far=None) -> np.ndarray:
    """One depth per equal-width bin of ``[near, far]``.

    Accepts a :class:`Ray` or arrays of near/far (shape ``(R,)``), in which case
    the result has shape ``(R, n)``. With ``jitter=False`` bin midpoints are returned.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if isinstance(ray_or_near, Ray):
        near, far = np.array([ray_or_near.near]), np.array([ray_or_near.far])
        single = True
    else:
        near, far = np.atleast_1d(np.asarray(ray_or_near, float)), np.atleast_1d(np.asarray(far, float))
        single = False
    width = (far - near) / n
    base = near[:, None] + width[:, None] * np.arange(n)[None, :]
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        # open interval keeps the depths strictly increasing
        u = rng.uniform(0.0, 1.0, size=base.shape)
        u = np.clip(u, 1e-9, 1 - 1e-9)
    else:
        u = 0.5
    z = base + width[:, None] * u
    return z[0] if single else z
