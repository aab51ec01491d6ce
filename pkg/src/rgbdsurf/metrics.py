"""Mesh-to-mesh geometry metrics: accuracy, completion, Chamfer-L1, normal
consistency, F-score and surface-voxel IoU."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .mesher import TriangleMesh

log = logging.getLogger(__name__)

COLUMNS = ("acc", "comp", "c_l1", "nc", "f_score", "iou")


class MetricsError(ValueError):
    pass


@dataclass
class SampledCloud:
    points: np.ndarray
    normals: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise MetricsError("empty point cloud")
        if self.normals.shape != self.points.shape:
            raise MetricsError("normals must align with points")

    @property
    def count(self) -> int:
        return len(self.points)


@dataclass
class MetricsConfig:
    n_samples: int = 200_000
    tau: float = 0.05
    voxel: float = 0.05
    seed: int = 0


@dataclass
class MetricsReport:
    c_l1: float
    nc: float
    f_score: float
    iou: float
    acc: float
    comp: float
    tau: float
    voxel: float
    n_pred: int
    n_gt: int
    seed: int
    iou_empty: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def table(self) -> str:
        head = " ".join(f"{c:>9s}" for c in ("Acc", "Comp", "C-L1", "NC", "F-score", "IoU"))
        row = " ".join(f"{getattr(self, c):9.4f}" for c in COLUMNS)
        return head + "\n" + row


def sample_surface(mesh: TriangleMesh, n: int, rng: np.random.Generator, source: str = "") -> SampledCloud:
    """``n`` points area-proportionally over faces, uniform within each; face normals."""
    if n < 1:
        raise MetricsError("n must be >= 1")
    if mesh.empty:
        raise MetricsError(f"cannot sample an empty mesh {source}".strip())
    area, normal = mesh.face_areas_normals()
    good = area > 0
    if not good.any():
        raise MetricsError("mesh has zero surface area")
    idx_good = np.nonzero(good)[0]
    p = area[good] / area[good].sum()
    face = idx_good[rng.choice(len(idx_good), size=n, p=p)]
    # uniform barycentrics by folding the unit square
    u = rng.uniform(size=(n, 2))
    flip = u.sum(-1) > 1
    u[flip] = 1 - u[flip]
    t = mesh.triangles()[face]
    pts = t[:, 0] + u[:, :1] * (t[:, 1] - t[:, 0]) + u[:, 1:] * (t[:, 2] - t[:, 0])
    return SampledCloud(pts, normal[face], source)


def nearest(src: np.ndarray, dst: np.ndarray):
    """Distance and index of the nearest ``dst`` point for each ``src`` point."""
    d, i = cKDTree(dst).query(src, k=1)
    return d, i


def chamfer(pred: SampledCloud, gt: SampledCloud):
    """Returns ``(acc, comp, c_l1)``."""
    d_pg, _ = nearest(pred.points, gt.points)
    d_gp, _ = nearest(gt.points, pred.points)
    acc = float(d_pg.mean())
    comp = float(d_gp.mean())
    return acc, comp, (acc + comp) / 2


def normal_consistency(pred: SampledCloud, gt: SampledCloud) -> float:
    _, i_pg = nearest(pred.points, gt.points)
    _, i_gp = nearest(gt.points, pred.points)
    a = np.abs((pred.normals * gt.normals[i_pg]).sum(-1)).mean()
    b = np.abs((gt.normals * pred.normals[i_gp]).sum(-1)).mean()
    return float(np.clip((a + b) / 2, 0.0, 1.0))


def precision_recall(pred: SampledCloud, gt: SampledCloud, tau: float):
    if tau <= 0:
        raise MetricsError("tau must be positive")
    d_pg, _ = nearest(pred.points, gt.points)
    d_gp, _ = nearest(gt.points, pred.points)
    return float((d_pg <= tau).mean()), float((d_gp <= tau).mean())


def f_score(pred: SampledCloud, gt: SampledCloud, tau: float) -> float:
    p, r = precision_recall(pred, gt, tau)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def voxelize(mesh: TriangleMesh, origin, voxel: float, dims) -> np.ndarray:
    """Boolean surface occupancy of closed cells on the given lattice."""
    if mesh.empty:
        return np.zeros(tuple(dims), dtype=bool)
    return _kernels.voxelize_triangles(mesh.triangles(), origin, voxel, dims).astype(bool)


def iou(pred: TriangleMesh, gt: TriangleMesh, voxel: float, return_flag: bool = False):
    """Surface-voxel IoU on a lattice spanning the union bounding box.

    Two empty meshes give 1.0 with the empty flag set.
    """
    if voxel <= 0:
        raise MetricsError("voxel must be positive")
    verts = [m.vertices[np.unique(m.faces)] for m in (pred, gt) if not m.empty]
    if not verts:
        return (1.0, True) if return_flag else 1.0
    allv = np.concatenate(verts, 0)
    origin = allv.min(0)
    dims = np.floor((allv.max(0) - origin) / voxel).astype(np.int64) + 1
    a = voxelize(pred, origin, voxel, dims)
    b = voxelize(gt, origin, voxel, dims)
    union = np.logical_or(a, b).sum()
    val = float(np.logical_and(a, b).sum() / union) if union else 1.0
    return (val, union == 0) if return_flag else val


def evaluate(pred: TriangleMesh, gt: TriangleMesh, cfg: MetricsConfig | None = None) -> MetricsReport:
    cfg = cfg or MetricsConfig()
    if pred.empty or gt.empty:
        raise MetricsError("evaluation needs two non-empty meshes")
    # same stream for both meshes, so identical meshes give identical clouds
    pc = sample_surface(pred, cfg.n_samples, np.random.default_rng(cfg.seed), "pred")
    gc = sample_surface(gt, cfg.n_samples, np.random.default_rng(cfg.seed), "gt")
    d_pg, i_pg = nearest(pc.points, gc.points)
    d_gp, i_gp = nearest(gc.points, pc.points)
    acc, comp = float(d_pg.mean()), float(d_gp.mean())
    nc_a = np.abs((pc.normals * gc.normals[i_pg]).sum(-1)).mean()
    nc_b = np.abs((gc.normals * pc.normals[i_gp]).sum(-1)).mean()
    prec, rec = float((d_pg <= cfg.tau).mean()), float((d_gp <= cfg.tau).mean())
    fs = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    val, empty = iou(pred, gt, cfg.voxel, return_flag=True)
    return MetricsReport(
        c_l1=(acc + comp) / 2, nc=float(np.clip((nc_a + nc_b) / 2, 0, 1)), f_score=fs, iou=val,
        acc=acc, comp=comp, tau=cfg.tau, voxel=cfg.voxel, n_pred=pc.count, n_gt=gc.count,
        seed=cfg.seed, iou_empty=bool(empty))
