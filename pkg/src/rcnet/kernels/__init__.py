"""Hot-kernel backend selection.

RCNET_BACKEND picks the implementation: "numba" (jitted loops), "numpy"
(vectorized fallback), or "auto" (numba when importable, else numpy — the
default).  RCNET_THREADS caps the numba threading layer.  Both backends
export the same six functions with identical contracts; see _numpy.py for
the layout conventions.
"""

import os

_requested = os.environ.get("RCNET_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"RCNET_BACKEND={_requested!r}: expected 'auto', 'numba' or 'numpy'"
    )

if _requested == "numpy":
    from . import _numpy as _impl
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        from . import _numpy as _impl
        BACKEND = "numpy"

if BACKEND == "numba":
    _threads = os.environ.get("RCNET_THREADS", "")
    if _threads.isdigit() and int(_threads) > 0:
        import numba

        numba.set_num_threads(min(int(_threads), numba.config.NUMBA_NUM_THREADS))

conv2d_forward = _impl.conv2d_forward
conv2d_backward_kernel = _impl.conv2d_backward_kernel
conv2d_backward_input = _impl.conv2d_backward_input
maxpool2d_forward = _impl.maxpool2d_forward
scatter_by_index = _impl.scatter_by_index
gather_by_index = _impl.gather_by_index
