"""Hot-kernel backend selection.

The attention and layer-norm inner loops exist twice: a numba-jitted
version (``numba_ops``) and a pure-numpy reference (``numpy_ops``).
The active backend is chosen once at import time from the environment
variable ``VIDEO_DIT_BACKEND``:

    auto   (default)  numba if importable, else numpy
    numba             require numba, raise if unavailable
    numpy             force the pure-numpy path

``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import numpy_ops

_requested = os.environ.get("VIDEO_DIT_BACKEND", "auto").lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"VIDEO_DIT_BACKEND must be one of auto/numba/numpy, got {_requested!r}"
    )

if _requested == "numpy":
    _impl = numpy_ops
    BACKEND = "numpy"
else:
    try:
        from . import numba_ops as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = numpy_ops
        BACKEND = "numpy"

sdpa_fwd = _impl.sdpa_fwd
sdpa_bwd = _impl.sdpa_bwd
layernorm_fwd = _impl.layernorm_fwd
layernorm_bwd = _impl.layernorm_bwd


def backend_name() -> str:
    return BACKEND
