"""Iso-surface extraction from SDF fields."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from . import _kernels
from .field import sdf_gradient

log = logging.getLogger(__name__)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")

    @property
    def empty(self) -> bool:
        return len(self.faces) == 0

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def face_areas_normals(self):
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        a = 0.5 * np.linalg.norm(n, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = n / (2 * a[:, None])
        return a, unit

    def edge_face_counts(self) -> np.ndarray:
        """Number of faces sharing each undirected edge."""
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return not self.empty and bool(np.all(self.edge_face_counts() == 2))

    def submesh(self, keep_vertex: np.ndarray) -> "TriangleMesh":
        keep_face = keep_vertex[self.faces].all(-1)
        used = np.zeros(len(self.vertices), dtype=bool)
        used[self.faces[keep_face].ravel()] = True
        remap = -np.ones(len(self.vertices), dtype=np.int64)
        remap[used] = np.arange(used.sum())
        return TriangleMesh(self.vertices[used], remap[self.faces[keep_face]],
                            None if self.normals is None else self.normals[used])


def marching_cubes(values: np.ndarray, origin, spacing, iso: float = 0.0) -> TriangleMesh:
    """Mesh of ``{values == iso}`` on a regular lattice.

    Vertices are ordered by lattice-edge id, faces by cell, so the result does
    not depend on traversal order. Zero-area faces are dropped.
    """
    values = np.asarray(values, dtype=np.float64)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,))
    origin = np.asarray(origin, dtype=np.float64)
    edge_tris = _kernels.mc_triangles(values, iso)
    if len(edge_tris) == 0:
        log.info("no sign change in the lattice; mesh is empty")
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    edges, faces = np.unique(edge_tris, return_inverse=True)
    faces = faces.reshape(-1, 3)
    nx, ny, nz = values.shape
    axis = edges % 3
    node = edges // 3
    i, j, k = node // (ny * nz), (node // nz) % ny, node % nz
    step = np.eye(3, dtype=np.int64)[axis]
    i2, j2, k2 = i + step[:, 0], j + step[:, 1], k + step[:, 2]
    v0 = values[i, j, k]
    v1 = values[i2, j2, k2]
    t = (iso - v0) / (v1 - v0)
    p0 = np.stack([i, j, k], -1).astype(np.float64)
    verts = origin + (p0 + t[:, None] * step) * spacing
    mesh = TriangleMesh(verts, faces)
    area, _ = mesh.face_areas_normals()
    if np.any(area <= 1e-12):
        mesh = TriangleMesh(verts, faces[area > 1e-12])
    return mesh


def evaluate_lattice(sdf_fn, lo, hi, resolution: int, chunk: int = 1 << 16):
    """Sample ``sdf_fn`` on a ``resolution``-per-axis node lattice spanning ``[lo, hi]``."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    axes = [np.linspace(lo[a], hi[a], resolution) for a in range(3)]
    spacing = (hi - lo) / (resolution - 1)
    out = np.empty((resolution,) * 3)
    # slab by slab along x
    for i, x in enumerate(axes[0]):
        yz = np.stack(np.meshgrid(axes[1], axes[2], indexing="ij"), -1).reshape(-1, 2)
        pts = np.concatenate([np.full((len(yz), 1), x), yz], 1)
        vals = [np.asarray(sdf_fn(pts[s: s + chunk])) for s in range(0, len(pts), chunk)]
        out[i] = np.concatenate(vals).reshape(resolution, resolution)
    return out, spacing


def extract_mesh(field, resolution: int | None = None, iso: float = 0.0, max_resolution: int = 512,
                 normals: bool = True) -> TriangleMesh:
    """Marching cubes on the decoded SDF over the field bounds.

    The default lattice pitch is the finest grid voxel, capped at ``max_resolution``.
    """
    lo, hi = field.bounds
    if resolution is None:
        resolution = int(np.ceil(np.max(hi - lo) / field.finest_voxel)) + 1
        resolution = min(resolution, max_resolution)
    if resolution < 8:
        raise ValueError("resolution must be >= 8")

    def sdf_fn(p):
        with torch.no_grad():
            return field.sdf(p).numpy()

    vals, spacing = evaluate_lattice(sdf_fn, lo, hi, resolution)
    mesh = marching_cubes(vals, lo, spacing, iso)
    if normals and not mesh.empty:
        mesh.normals = vertex_normals(field, mesh.vertices)
    return mesh


def vertex_normals(field, verts: np.ndarray, chunk: int = 1 << 14) -> np.ndarray:
    out = []
    for s in range(0, len(verts), chunk):
        with torch.no_grad():
            g = sdf_gradient(field, torch.as_tensor(verts[s: s + chunk])).numpy()
        out.append(g)
    g = np.concatenate(out, 0)
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(n > 0, g / np.where(n > 0, n, 1.0), np.array([0.0, 0.0, 1.0]))


def cull_to_frustums(mesh: TriangleMesh, intrinsics, poses, depths=None, margin: float = 0.05,
                     near: float = 0.0) -> TriangleMesh:
    """Keep vertices seen by at least one camera.

    A vertex is seen when it projects inside an image with positive depth; if
    depth maps are given it must also lie no more than ``margin`` behind the
    observed depth at that pixel.
    """
    from .geometry import project

    if mesh.empty:
        return mesh
    seen = np.zeros(len(mesh.vertices), dtype=bool)
    for f, pose in enumerate(poses):
        px, py, z = project(intrinsics, pose, mesh.vertices)
        px, py = (np.nan_to_num(a, nan=-1.0, posinf=-1.0, neginf=-1.0) for a in (px, py))
        ok = (z > near) & (px >= -0.5) & (px < intrinsics.width - 0.5) & (py >= -0.5) & (py < intrinsics.height - 0.5)
        if depths is not None:
            u = np.clip(np.round(px).astype(np.int64), 0, intrinsics.width - 1)
            v = np.clip(np.round(py).astype(np.int64), 0, intrinsics.height - 1)
            d = depths[f][v, u]
            ok &= (d > 0) & (z <= d + margin)
        seen |= ok
    return mesh.submesh(seen)
