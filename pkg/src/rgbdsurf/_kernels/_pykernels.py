"""Vectorised numpy implementations of the hot kernels (fallback backend)."""

from __future__ import annotations

import numpy as np

from .tables import CORNERS, EDGE_AXIS, EDGE_BASE, N_TRIS, TRI_TABLE


def mc_triangles(values: np.ndarray, iso: float = 0.0) -> np.ndarray:
    """Triangles of the iso-surface as triples of global lattice-edge ids.

    Edge id of the lattice edge leaving node ``(i, j, k)`` along ``axis`` is
    ``((i * ny + j) * nz + k) * 3 + axis``. Triangles are ordered by cell
    (C order) and then by table position.
    """
    v = np.ascontiguousarray(values, dtype=np.float64)
    nx, ny, nz = v.shape
    inside = v < iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(CORNERS):
        case |= inside[dx: nx - 1 + dx, dy: ny - 1 + dy, dz: nz - 1 + dz].astype(np.int64) << c
    flat = case.ravel()
    cells = np.nonzero(N_TRIS[flat] > 0)[0]
    if len(cells) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    cc = flat[cells]
    ntri = N_TRIS[cc]
    cell_rep = np.repeat(cells, ntri)
    case_rep = np.repeat(cc, ntri)
    # triangle index within its cell
    starts = np.cumsum(ntri) - ntri
    tri_in_cell = np.arange(len(cell_rep)) - np.repeat(starts, ntri)
    local = np.stack([TRI_TABLE[case_rep, 3 * tri_in_cell + q] for q in range(3)], -1)
    ci, cj, ck = np.unravel_index(cell_rep, case.shape)
    base = EDGE_BASE[local]
    node = ((ci[:, None] + base[..., 0]) * ny + (cj[:, None] + base[..., 1])) * nz + (ck[:, None] + base[..., 2])
    return node * 3 + EDGE_AXIS[local]


def _tri_box_overlap(c, h, tri, eps):
    """SAT test of cubes (centres ``c``, scalar half size ``h``) against triangles ``tri`` (N, 3, 3)."""
    v = tri - c[:, None, :]
    e = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], 1)
    ok = np.ones(len(v), dtype=bool)
    # box face normals
    ok &= (v.min(1) <= h + eps).all(-1) & (v.max(1) >= -h - eps).all(-1)
    # triangle plane
    n = np.cross(e[:, 0], e[:, 1])
    r = h * np.abs(n).sum(-1)
    d = (n * v[:, 0]).sum(-1)
    ok &= np.abs(d) <= r + eps * np.abs(n).sum(-1)
    # edge cross products
    for i in range(3):
        for j in range(3):
            a = np.cross(np.broadcast_to(np.eye(3)[j], e[:, i].shape), e[:, i])
            p = (v * a[:, None, :]).sum(-1)
            r = h * np.abs(a).sum(-1)
            ok &= (p.min(-1) <= r + eps * np.abs(a).sum(-1)) & (p.max(-1) >= -r - eps * np.abs(a).sum(-1))
    return ok


def voxelize_triangles(tris: np.ndarray, origin, voxel: float, dims, eps: float = 1e-9) -> np.ndarray:
    """Occupancy (uint8) of closed cells touched by any triangle."""
    tris = np.asarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    origin = np.asarray(origin, dtype=np.float64)
    dims = np.asarray(dims, dtype=np.int64)
    occ = np.zeros(tuple(dims), dtype=np.uint8)
    if len(tris) == 0:
        return occ
    lo = np.clip(np.floor((tris.min(1) - origin - eps) / voxel).astype(np.int64), 0, dims - 1)
    hi = np.clip(np.floor((tris.max(1) - origin + eps) / voxel).astype(np.int64), 0, dims - 1)
    span = hi - lo + 1
    counts = span.prod(-1)
    h = voxel / 2
    chunk = 1 << 18
    order = np.arange(len(tris))
    start = 0
    while start < len(tris):
        stop = start
        total = 0
        while stop < len(tris) and (total + counts[stop] <= chunk or stop == start):
            total += counts[stop]
            stop += 1
        idx = order[start:stop]
        rep = np.repeat(idx, counts[idx])
        offs = np.arange(len(rep)) - np.repeat(np.cumsum(counts[idx]) - counts[idx], counts[idx])
        sp = span[rep]
        ix = offs // (sp[:, 1] * sp[:, 2])
        iy = (offs // sp[:, 2]) % sp[:, 1]
        iz = offs % sp[:, 2]
        cell = lo[rep] + np.stack([ix, iy, iz], -1)
        centre = origin + (cell + 0.5) * voxel
        hit = _tri_box_overlap(centre, h, tris[rep], eps)
        c = cell[hit]
        occ[c[:, 0], c[:, 1], c[:, 2]] = 1
        start = stop
    return occ
