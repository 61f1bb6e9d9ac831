"""Analytic bounds and model-based detectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from taskquant import kernels
from taskquant.hybrid import all_symbol_vectors
from taskquant.quantizer import HardQuantizer, uniform_quantizer

MAX_USERS = 24


def mmse_bound(snr: float, pilots: int) -> float:
    """Per-real-component MMSE of the channel estimate without quantization."""
    if snr < 0:
        raise ValueError("snr must be non-negative")
    return 1.0 / (2.0 * (1.0 + snr * pilots))


def fundamental_limit(snr: float, pilots: int, rho: float, rate: float) -> float:
    """Indirect rate-distortion limit for quantized channel estimation.

    MMSE plus the estimate's variance scaled by ``2 ** (-2 rho R)``.
    """
    if rate < 0 or rho < 1 or pilots < 1:
        raise ValueError("need rate >= 0, rho >= 1, pilots >= 1")
    gain = snr * pilots
    return mmse_bound(snr, pilots) + gain / (2.0 * (1.0 + gain)) * 2.0 ** (-2.0 * rho * rate)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@dataclass(frozen=True)
class CellObservation:
    """Per-dimension decision-region limits of a quantized observation (possibly infinite)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ValueError("lower and upper limits differ in shape")
        if np.any(~(hi > lo)):
            raise ValueError("empty cell: upper limit must exceed lower limit")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_quantizer(cls, q: HardQuantizer, x) -> "CellObservation":
        lo, hi = q.cells(x)
        return cls(lo, hi)


def _check_users(h) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if h.shape[1] > MAX_USERS:
        raise ValueError(f"exhaustive search over 2^{h.shape[1]} hypotheses refused (limit {MAX_USERS} users)")
    return h


def map_detect(x, h, sigma: float) -> np.ndarray:
    """Exhaustive MAP over BPSK vectors with a uniform prior.

    Equivalent to the closest noise-free output ``H s``; ties go to the
    lowest enumeration index. ``x`` may be one observation or a batch.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    h = _check_users(h)
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    symbols = all_symbol_vectors(h.shape[1])
    idx = kernels.nearest_candidate(batch, symbols @ h.T)
    out = symbols[idx]
    return out[0] if x.ndim == 1 else out


def map_detect_mismatched(x, h_estimates, sigma: float) -> np.ndarray:
    """MAP using a separate channel estimate per observation (``h_estimates``: trials x n x n_u)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n_u = h_estimates.shape[-1]
    if n_u > MAX_USERS:
        raise ValueError("too many users for exhaustive search")
    symbols = all_symbol_vectors(n_u)
    means = np.einsum("tij,kj->tki", h_estimates, symbols)
    d = ((x[:, None, :] - means) ** 2).sum(axis=-1)
    return symbols[np.argmin(d, axis=1)]


def quantized_loglik(cells: CellObservation, h, sigma: float) -> np.ndarray:
    """Log-probability of the observed cells under every hypothesis (trials x classes)."""
    h = _check_users(h)
    lo = np.atleast_2d(cells.lower)
    hi = np.atleast_2d(cells.upper)
    means = all_symbol_vectors(h.shape[1]) @ h.T
    return kernels.cell_loglik(lo, hi, means, sigma)


def quantized_map_detect(cells: CellObservation, h, sigma: float) -> np.ndarray:
    """MAP from elementwise-quantized observations.

    Independent Gaussian noise makes the likelihood factor into per-dimension
    cell probabilities, accumulated in the log domain with a per-factor
    floor of -745.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    ll = quantized_loglik(cells, h, sigma)
    symbols = all_symbol_vectors(np.atleast_2d(h).shape[1])
    out = symbols[np.argmax(ll, axis=1)]
    return out[0] if np.ndim(cells.lower) == 1 else out


def quantized_map_rate(x, h, sigma: float, rate: float, support=(-2.0, 2.0)) -> np.ndarray:
    """Quantize ``x`` uniformly with ``floor(2 ** rate)`` cells per entry, then detect."""
    q = uniform_quantizer(support[0], support[1], max(1, math.floor(2.0 ** rate + 1e-9)))
    return quantized_map_detect(CellObservation.from_quantizer(q, x), h, sigma)
