"""Kernel selection: the compiled grid search when importable, else numpy.

Set ``MIXALLOC_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py as fallback

compiled = None
if not os.environ.get("MIXALLOC_PURE_PYTHON"):
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else fallback

IMPLEMENTATION = _impl.IMPLEMENTATION
mean_kl = fallback.mean_kl  # vectorized numpy log beats a scalar loop
grid_best = _impl.grid_best
