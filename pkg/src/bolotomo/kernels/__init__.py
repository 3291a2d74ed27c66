"""Hot-kernel backend selection.

The numba-compiled kernels are the default; set BOLOTOMO_KERNELS=numpy to
force the pure-numpy fallback (used automatically when numba is absent).
Both backends implement identical contracts; benchmarks/bench_kernels.py
compares them.
"""

import os

# the TBB build shipped with this numba is too old; omp is always present here
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

_requested = os.environ.get("BOLOTOMO_KERNELS", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ValueError(
        f"BOLOTOMO_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numba":
    try:
        from . import _numba as _impl
        _active = "numba"
    except ImportError:
        from . import _numpy as _impl
        _active = "numpy"
else:
    from . import _numpy as _impl
    _active = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_input_grad = _impl.conv2d_input_grad
conv2d_param_grad = _impl.conv2d_param_grad
sgd_update = _impl.sgd_update
siddon_trace = _impl.siddon_trace


def backend() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _active
