"""Pure numpy implementations of the hot kernels.

Every function here has an identically named counterpart in ``_kernels.pyx``;
``taskquant.kernels`` picks one of the two at import time.
"""

import numpy as np
from scipy.special import erfc

_SQRT1_2 = 0.7071067811865476
LOG_FLOOR = -745.0


def soft_quantize_forward(z, a, b, c):
    """Sum of shifted tanh steps, applied elementwise to ``z``."""
    z = np.asarray(z, dtype=np.float64)
    arg = c * z[..., None] - b
    return np.tanh(arg) @ a


def soft_quantize_backward(z, g, a, b, c):
    """Chain ``g`` (upstream gradient, same shape as ``z``) through the soft quantizer.

    Returns the input gradient and the amplitude/shift gradients summed over
    every element of ``z``.
    """
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    t = np.tanh(c * z[..., None] - b)
    sech2 = 1.0 - t * t
    dz = g * (sech2 @ (a * c))
    gf = g.reshape(-1)
    da = gf @ t.reshape(-1, a.shape[0])
    db = -a * (gf @ sech2.reshape(-1, a.shape[0]))
    return dz, da, db


def _log_cell_probability(lo, hi):
    """log(Phi(hi) - Phi(lo)) for standardized limits, floored at ``LOG_FLOOR``."""
    upper = lo > 0
    # tail-aware differencing keeps precision when both limits sit in the upper tail
    p_upper = 0.5 * (erfc(lo * _SQRT1_2) - erfc(hi * _SQRT1_2))
    p_lower = 0.5 * (erfc(-hi * _SQRT1_2) - erfc(-lo * _SQRT1_2))
    p = np.where(upper, p_upper, p_lower)
    with np.errstate(divide="ignore"):
        out = np.log(p)
    return np.maximum(np.nan_to_num(out, nan=LOG_FLOOR, neginf=LOG_FLOOR), LOG_FLOOR)


def cell_loglik(lower, upper, means, sigma):
    """Log-likelihood of cell observations under each candidate mean.

    ``lower``/``upper`` are (trials, n) cell limits (may be infinite),
    ``means`` is (candidates, n). Returns (trials, candidates).
    """
    lo = (lower[:, None, :] - means[None, :, :]) / sigma
    hi = (upper[:, None, :] - means[None, :, :]) / sigma
    return _log_cell_probability(lo, hi).sum(axis=-1)


def nearest_candidate(x, means):
    """Index of the closest row of ``means`` for each row of ``x`` (first on ties)."""
    d = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d, axis=1)
