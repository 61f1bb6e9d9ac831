"""Deep task-based quantization with scalar ADCs."""

from taskquant.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
