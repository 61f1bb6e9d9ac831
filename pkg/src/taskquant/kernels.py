"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
implementations are used. Set ``TASKQUANT_PURE_PYTHON=1`` to force the
fallback.

The soft-quantizer kernels always run on numpy: its vectorized ``tanh``
beats the compiled scalar loop (see ``benchmarks/bench_kernels.py``). The
compiled versions stay available in ``_kernels`` for comparison.
"""

import os

from taskquant import _kernels_py

if os.environ.get("TASKQUANT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from taskquant import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

soft_quantize_forward = _kernels_py.soft_quantize_forward
soft_quantize_backward = _kernels_py.soft_quantize_backward
cell_loglik = _impl.cell_loglik
nearest_candidate = _impl.nearest_candidate
LOG_FLOOR = _kernels_py.LOG_FLOOR

__all__ = [
    "BACKEND",
    "LOG_FLOOR",
    "cell_loglik",
    "nearest_candidate",
    "soft_quantize_backward",
    "soft_quantize_forward",
]
