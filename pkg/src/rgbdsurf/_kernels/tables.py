"""256-case marching cubes triangle table, built by walking the cube faces.

Corner ``i`` is *inside* when its value is below the iso level (bit ``i`` of
the case index). On every face the inside corners are enclosed by segments
joining the crossed edges; on an ambiguous face (two diagonal inside corners)
each inside corner is cut off separately. The rule depends on the face's four
signs only, so neighbouring cubes always agree and the mesh has no cracks.
Segments chain into closed loops that are fan-triangulated with normals
pointing from inside to outside.
"""

from __future__ import annotations

import numpy as np

CORNERS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    dtype=np.int64,
)
EDGES = np.array(
    [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)],
    dtype=np.int64,
)
MAX_TRIS = 6

_FACES = [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4), (3, 2, 6, 7), (0, 3, 7, 4), (1, 2, 6, 5)]


def _edge_id(a, b):
    for i, (p, q) in enumerate(EDGES):
        if {p, q} == {a, b}:
            return i
    raise KeyError((a, b))


def _oriented_faces():
    centre = np.full(3, 0.5)
    faces = []
    for f in _FACES:
        p = CORNERS[list(f)].astype(float)
        n = np.cross(p[1] - p[0], p[2] - p[0])
        if np.dot(n, p.mean(0) - centre) < 0:
            f = tuple(reversed(f))
        faces.append(f)
    return faces


def _case_triangles(case: int):
    inside = [(case >> i) & 1 == 1 for i in range(8)]
    nxt = {}
    for f in _oriented_faces():
        for i in range(4):
            a, b, c = f[i - 1], f[i], f[(i + 1) % 4]
            n_in = sum(inside[v] for v in f)
            if not inside[b]:
                continue
            if n_in == 2 and inside[f[(i + 2) % 4]]:
                # ambiguous face: isolate each inside corner
                nxt[_edge_id(a, b)] = _edge_id(b, c)
                continue
            if inside[a]:
                continue
            # b starts an inside arc; walk to its end
            j = i
            while inside[f[(j + 1) % 4]]:
                j += 1
            nxt[_edge_id(a, b)] = _edge_id(f[j % 4], f[(j + 1) % 4])
    tris = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        for k in range(1, len(loop) - 1):
            tris.append((loop[0], loop[k + 1], loop[k]))
    return tris


def _orientation_sign():
    (e0, e1, e2), = _case_triangles(1)
    mid = lambda e: CORNERS[EDGES[e]].mean(0)
    n = np.cross(mid(e1) - mid(e0), mid(e2) - mid(e0))
    # corner 0 inside: outward normal points into the cube
    return 1 if np.dot(n, np.ones(3)) > 0 else -1


def build_table() -> np.ndarray:
    flip = _orientation_sign() < 0
    table = -np.ones((256, 3 * MAX_TRIS), dtype=np.int64)
    for case in range(256):
        tris = _case_triangles(case)
        if len(tris) > MAX_TRIS:
            raise AssertionError(f"case {case} needs {len(tris)} triangles")
        flat = [e for t in tris for e in ((t[0], t[2], t[1]) if flip else t)]
        table[case, : len(flat)] = flat
    return table


TRI_TABLE = build_table()
N_TRIS = (TRI_TABLE >= 0).sum(1) // 3
# for each local edge: lower corner offset and axis of the lattice edge
EDGE_BASE = np.array([np.minimum(CORNERS[a], CORNERS[b]) for a, b in EDGES], dtype=np.int64)
EDGE_AXIS = np.array([int(np.argmax(np.abs(CORNERS[b] - CORNERS[a]))) for a, b in EDGES], dtype=np.int64)
