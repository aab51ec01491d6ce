"""Compiled vs numpy kernels: marching-cubes triangle extraction and surface voxelization.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Both backends are timed on the same inputs and their outputs compared for
equality before any timing is reported.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from rgbdsurf._kernels import _pykernels

try:
    from rgbdsurf._kernels import _ckernels
except ImportError:
    _ckernels = None


def sphere_lattice(n: int) -> np.ndarray:
    g = np.linspace(-1, 1, n)
    x, y, z = np.meshgrid(g, g, g, indexing="ij")
    return np.sqrt(x * x + y * y + z * z) - 0.5 + 0.02 * np.sin(9 * x) * np.cos(7 * y)


def sphere_triangles(n: int) -> np.ndarray:
    vals = sphere_lattice(n)
    tris = _pykernels.mc_triangles(vals)
    # edge ids to edge midpoints; exact vertex positions do not matter for timing
    node, axis = tris // 3, tris % 3
    ijk = np.stack([node // (n * n), (node // n) % n, node % n], -1).astype(np.float64)
    ijk += 0.5 * np.eye(3)[axis]
    return ijk * (2.0 / (n - 1)) - 1.0


def bench(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="write the timings here")
    a = p.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    rows = []
    for n in (64, 128):
        vals = sphere_lattice(n)
        ref = _pykernels.mc_triangles(vals)
        assert np.array_equal(ref, _ckernels.mc_triangles(vals))
        rows.append(("mc_triangles", f"{n}^3", bench(lambda: _pykernels.mc_triangles(vals), a.repeat),
                     bench(lambda: _ckernels.mc_triangles(vals), a.repeat)))
    for n, voxel in ((64, 0.05), (128, 0.02)):
        tris = sphere_triangles(n)
        dims = np.full(3, int(np.ceil(2.2 / voxel)) + 1)
        origin = np.full(3, -1.1)
        ref = _pykernels.voxelize_triangles(tris, origin, voxel, dims)
        assert np.array_equal(ref, _ckernels.voxelize_triangles(tris, origin, voxel, dims))
        rows.append(("voxelize_triangles", f"{len(tris)} tris @ {voxel} m",
                     bench(lambda: _pykernels.voxelize_triangles(tris, origin, voxel, dims), a.repeat),
                     bench(lambda: _ckernels.voxelize_triangles(tris, origin, voxel, dims), a.repeat)))
    print(f"{'kernel':<20s} {'input':<22s} {'numpy s':>9s} {'cython s':>9s} {'speedup':>8s}")
    for name, inp, t_py, t_c in rows:
        print(f"{name:<20s} {inp:<22s} {t_py:9.4f} {t_c:9.4f} {t_py / t_c:7.1f}x")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump([dict(kernel=r[0], input=r[1], numpy_s=r[2], cython_s=r[3]) for r in rows], fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
