"""Hot-loop kernels.

The compiled extension is used when it was built; otherwise, or when
``PCAT_PURE_PYTHON=1`` is set, the numpy implementations are used.
"""
import os

from . import _pykernels as python

compiled = None
if os.environ.get("PCAT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

nearest_segment = _impl.nearest_segment
best_split = _impl.best_split

__all__ = ["BACKEND", "best_split", "compiled", "nearest_segment", "python"]
