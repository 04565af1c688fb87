"""Backend selection for the hot numeric kernels.

``GAITSCREEN_BACKEND=numpy`` forces the pure-numpy fallback,
``GAITSCREEN_BACKEND=numba`` insists on the jitted kernels (import error if
numba is missing). Unset, numba is used when available. The active choice is
exposed as ``BACKEND``; both implementation modules stay importable directly
for side-by-side benchmarking (see benchmarks/bench_kernels.py).
"""

import os
import warnings

_requested = os.environ.get("GAITSCREEN_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ValueError(
        f"GAITSCREEN_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

if _requested == "numpy":
    from . import numpy_impl as _impl
elif _requested == "numba":
    from . import numba_impl as _impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError:
        warnings.warn("numba unavailable, falling back to pure-numpy kernels")
        from . import numpy_impl as _impl

BACKEND = _impl.BACKEND_NAME

conv2d_forward = _impl.conv2d_forward
conv2d_backward_x = _impl.conv2d_backward_x
conv2d_backward_w = _impl.conv2d_backward_w
maxpool2x2_forward = _impl.maxpool2x2_forward
maxpool2x2_backward = _impl.maxpool2x2_backward
dtw_pair = _impl.dtw_pair
dtw_matrix = _impl.dtw_matrix
