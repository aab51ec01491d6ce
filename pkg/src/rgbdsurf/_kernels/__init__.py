"""Hot kernels: compiled Cython when built, vectorised numpy otherwise.

Set ``RGBDSURF_PURE_PYTHON=1`` to force the numpy backend.
"""

import os

from . import _pykernels

BACKEND = "python"
if not os.environ.get("RGBDSURF_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

mc_triangles = _impl.mc_triangles
voxelize_triangles = _impl.voxelize_triangles

__all__ = ["BACKEND", "mc_triangles", "voxelize_triangles"]
