"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the per-pixel and per-point loops; the
numpy backend is a pure-vectorized fallback with identical semantics.
Selection happens once at import time:

* ``CAMNET_NUMBA=0`` (or ``false``/``no``/``off``) forces the numpy backend.
* Otherwise numba is used when importable, numpy when not.

``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os


def numba_wanted() -> bool:
    value = os.environ.get("CAMNET_NUMBA", "1").strip().lower()
    return value not in ("0", "false", "no", "off")


BACKEND = "numpy"
if numba_wanted():
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl
else:
    from . import numpy_impl as _impl

motion_feature_count = _impl.motion_feature_count
change_fraction = _impl.change_fraction
mercator_cells = _impl.mercator_cells
aggregate_cells = _impl.aggregate_cells
warmup = _impl.warmup
