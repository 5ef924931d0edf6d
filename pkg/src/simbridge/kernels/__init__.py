"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it was built; otherwise the numpy
versions are used. Both backends return identical results.
"""
from . import _pykernels as python_backend
from ._pykernels import HIT_GROUND, HIT_NONE, KIND_CUBOID, KIND_CYLINDER

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

_impl = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

raycast = _impl.raycast
featurize_cells = _impl.featurize_cells

__all__ = [
    "BACKEND", "HIT_GROUND", "HIT_NONE", "KIND_CUBOID", "KIND_CYLINDER",
    "compiled_backend", "featurize_cells", "python_backend", "raycast",
]
