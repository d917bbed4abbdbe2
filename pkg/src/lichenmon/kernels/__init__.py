"""Hot kernels with a compiled core and a numpy fallback.

The Cython extension is used when it was built and ``LICHENMON_PURE_PYTHON``
is not set to a truthy value. Both backends return identical results.
"""
import os

from . import _pykernels as python

_FORCE_PURE = os.environ.get("LICHENMON_PURE_PYTHON", "").lower() in ("1", "true", "yes")

try:
    from . import _ckernels as cython
except ImportError:  # extension not built
    cython = None

_impl = python if (_FORCE_PURE or cython is None) else cython

BACKEND = _impl.BACKEND
rasterize_polygon = _impl.rasterize_polygon
rle_encode = _impl.rle_encode
rle_decode = _impl.rle_decode
rle_intersection_area = _impl.rle_intersection_area
rle_iou_matrix = _impl.rle_iou_matrix
laplacian_variance = _impl.laplacian_variance


def available_backends():
    """Names of the backends importable in this environment."""
    return ["python"] + (["cython"] if cython is not None else [])


def get_backend(name):
    if name == "python":
        return python
    if name == "cython":
        if cython is None:
            raise ImportError("compiled kernels are not built")
        return cython
    raise ValueError(f"unknown backend {name!r}")
