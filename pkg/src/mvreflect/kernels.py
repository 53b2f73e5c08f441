"""Kernel backend selection.

The compiled extension ``mvreflect._core`` is used when it imports; otherwise
(or when ``MVREFLECT_PURE=1``) the numpy versions in ``_kernels_py`` run.
"""
import os

from . import _kernels_py as fallback
from ._kernels_py import BALL, FAIL_BRACKET, FAIL_ITERS, OK, RBOX  # noqa: F401

compiled = None
if not os.environ.get("MVREFLECT_PURE"):
    try:
        from . import _core as compiled
    except ImportError:  # pragma: no cover - depends on the build
        compiled = None

BACKEND = "compiled" if compiled is not None else "numpy"
_impl = compiled if compiled is not None else fallback

section_distance = _impl.section_distance
project = _impl.project
w2_sq_1d = _impl.w2_sq_1d
# normals are only needed off the hot path
section_nearest = fallback.section_nearest
oblique_direction = fallback.oblique_direction
