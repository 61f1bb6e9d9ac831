"""Scalar quantization layers.

The trainable activation is a sum of shifted hyperbolic tangents,

    q(x) = sum_i a_i * tanh(c_i * x - b_i),

with ``M - 1`` terms for a resolution-``M`` quantizer. Amplitudes ``a`` and
shifts ``b`` are learned; slopes ``c`` are fixed or annealed upward. After
training, :func:`harden` turns the activation into a piecewise-constant
quantizer with thresholds ``b_i / c_i``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from taskquant import kernels

MODES = ("soft", "hard", "passing")


@dataclass(frozen=True)
class SoftQuantizerParams:
    amplitudes: np.ndarray
    shifts: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.shifts, dtype=np.float64))
        c = np.atleast_1d(np.asarray(self.slopes, dtype=np.float64))
        if not (a.ndim == b.ndim == c.ndim == 1) or not (a.size == b.size == c.size):
            raise ValueError("amplitudes, shifts and slopes must be 1-D of equal length")
        if a.size < 1:
            raise ValueError("a soft quantizer needs at least one tanh term")
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            raise ValueError("slopes must be positive and finite")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "shifts", b)
        object.__setattr__(self, "slopes", c)

    @property
    def resolution(self) -> int:
        return self.amplitudes.size + 1

    @property
    def thresholds(self) -> np.ndarray:
        """Zero crossings ``b_i / c_i`` in parameter order (unsorted)."""
        return self.shifts / self.slopes


@dataclass(frozen=True)
class HardQuantizer:
    """Piecewise-constant quantizer.

    ``x <= thresholds[0]`` maps to ``levels[0]``, ``thresholds[k-1] < x <=
    thresholds[k]`` maps to ``levels[k]``, and anything above the last
    threshold maps to ``levels[-1]``.
    """

    thresholds: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.thresholds, dtype=np.float64)).reshape(-1)
        lv = np.atleast_1d(np.asarray(self.levels, dtype=np.float64)).reshape(-1)
        if lv.size != t.size + 1:
            raise ValueError(f"{t.size} thresholds need {t.size + 1} levels, got {lv.size}")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "levels", lv)

    @property
    def resolution(self) -> int:
        return self.levels.size

    @property
    def cell_width(self) -> float | None:
        """Common interior cell width, or ``None`` if cells are not uniform."""
        t = self.thresholds
        if t.size == 0:
            return None
        if t.size == 1:
            # a single threshold: take the level spacing as the cell width
            return float(self.levels[1] - self.levels[0])
        d = np.diff(t)
        if np.allclose(d, d[0], rtol=1e-9, atol=0.0):
            return float(d[0])
        return None

    def cells(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper limits of the decision region containing each ``x``."""
        x = np.asarray(x, dtype=np.float64)
        k = np.searchsorted(self.thresholds, x, side="left")
        lo = np.concatenate(([-np.inf], self.thresholds))[k]
        hi = np.concatenate((self.thresholds, [np.inf]))[k]
        return lo, hi


def soft_quantize(x, params: SoftQuantizerParams):
    """Evaluate the tanh-sum activation elementwise."""
    out = kernels.soft_quantize_forward(np.asarray(x, dtype=np.float64),
                                        params.amplitudes, params.shifts, params.slopes)
    return float(out) if np.ndim(x) == 0 else out


def soft_quantize_grads(x: float, params: SoftQuantizerParams):
    """Pointwise derivatives ``(d/dx, d/da, d/db)`` at a scalar ``x``."""
    a, b, c = params.amplitudes, params.shifts, params.slopes
    t = np.tanh(c * float(x) - b)
    sech2 = 1.0 - t * t
    return float(np.sum(a * c * sech2)), t, -a * sech2


def soft_quantize_backward(z, upstream, params: SoftQuantizerParams):
    """Batched chain rule through the activation.

    Returns the gradient w.r.t. ``z`` and the amplitude/shift gradients summed
    over every element (all lanes share one parameter set).
    """
    return kernels.soft_quantize_backward(z, upstream, params.amplitudes,
                                          params.shifts, params.slopes)


def harden(params: SoftQuantizerParams) -> HardQuantizer:
    """Replace the smooth activation with the quantizer it approximates."""
    order = np.argsort(params.thresholds, kind="stable")
    p = SoftQuantizerParams(params.amplitudes[order], params.shifts[order], params.slopes[order])
    t = p.thresholds
    total = float(np.sum(p.amplitudes))
    keep = np.concatenate(([True], np.diff(t) > 0))
    if not np.all(keep):
        warnings.warn(f"{int(np.sum(~keep))} duplicate thresholds merged; quantizer has "
                      f"{int(np.sum(keep)) + 1} levels instead of {p.resolution}",
                      RuntimeWarning, stacklevel=2)
        t = t[keep]
    mids = 0.5 * (t[:-1] + t[1:])
    interior = np.atleast_1d(soft_quantize(mids, p)) if mids.size else np.empty(0)
    levels = np.concatenate(([-total], interior, [total]))
    return HardQuantizer(t, levels)


def hard_apply(q: HardQuantizer, x):
    k = np.searchsorted(q.thresholds, np.asarray(x, dtype=np.float64), side="left")
    out = q.levels[k]
    return float(out) if np.ndim(x) == 0 else out


def uniform_quantizer(support_low: float, support_high: float, levels: int) -> HardQuantizer:
    """``levels`` equal cells over the support, each represented by its midpoint.

    Inputs outside the support fall into the extreme cells.
    """
    if levels < 1:
        raise ValueError("need at least one level")
    if not support_low < support_high:
        raise ValueError("support_low must be below support_high")
    edges = np.linspace(support_low, support_high, levels + 1)
    return HardQuantizer(edges[1:-1], 0.5 * (edges[:-1] + edges[1:]))


def init_soft_params(resolution: int, support: tuple[float, float] = (-2.0, 2.0),
                     slope_factor: float = 8.0) -> SoftQuantizerParams:
    """Start from a uniform staircase over ``support``.

    Thresholds split the support into equal cells of width ``delta``, each
    amplitude is ``(high - low) / 2 / (M - 1)`` so the output spans the
    support, and every slope is ``slope_factor / delta``.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    lo, hi = support
    delta = (hi - lo) / resolution
    t = lo + delta * np.arange(1, resolution)
    c = np.full(resolution - 1, slope_factor / delta)
    a = np.full(resolution - 1, 0.5 * (hi - lo) / (resolution - 1))
    return SoftQuantizerParams(a, c * t, c)


def anneal(params: SoftQuantizerParams, epoch: int, gamma: float,
           co_scale: bool = True) -> SoftQuantizerParams:
    """Scale the slopes by ``gamma ** epoch``.

    With ``co_scale`` the shifts are scaled too so the thresholds stay put.
    """
    if gamma < 1:
        raise ValueError("annealing factor must be >= 1")
    if gamma == 1 or epoch == 0:
        return params
    f = gamma ** epoch
    b = params.shifts * f if co_scale else params.shifts
    return SoftQuantizerParams(params.amplitudes, b, params.slopes * f)


def dither_noise(q: HardQuantizer, rng: np.random.Generator, shape=()) -> np.ndarray:
    """Additive noise uniform over one decision cell, ``U[-delta/2, delta/2]``."""
    delta = q.cell_width
    if delta is None:
        raise ValueError("passing-gradient noise needs a uniform quantizer")
    return rng.uniform(-0.5 * delta, 0.5 * delta, size=shape)


class LanePlan(NamedTuple):
    lanes: int
    resolution: int
    effective_rate: float


def lane_plan(n: int, n_s: int, rate: float, task: str) -> LanePlan:
    """Split a budget of ``n * rate`` bits over identical scalar quantizers.

    Estimation uses one lane per target component; detection uses
    ``floor(n_s * rate)`` lanes. Each lane gets ``floor(2 ** (n * rate / p))``
    levels, never fewer than two; the resulting rate is reported since the
    clamp can exceed the nominal budget.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if task == "estimation":
        p = n_s
    elif task == "detection":
        p = math.floor(n_s * rate + 1e-9)
    else:
        raise ValueError(f"unknown task {task!r}")
    if p < 1:
        raise ValueError(f"rate {rate} leaves no quantizer lanes")
    # tolerance guards exact powers of two against round-off (e.g. 2**2.9999999)
    m = max(2, math.floor(2.0 ** (n * rate / p) * (1 + 1e-12)))
    return LanePlan(p, m, p * math.log2(m) / n)


@dataclass(frozen=True)
class QuantizerBank:
    """``lanes`` identical scalar quantizers sharing one parameter set.

    ``soft`` holds :class:`SoftQuantizerParams`; ``hard`` and ``passing`` hold
    a :class:`HardQuantizer` (``passing`` requires uniform cells). With
    ``trainable=False`` the soft parameters are frozen during training.
    """

    lanes: int
    quantizer: SoftQuantizerParams | HardQuantizer
    mode: str = "soft"
    trainable: bool = True

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError("a bank needs at least one lane")
        if self.mode not in MODES:
            raise ValueError(f"unknown bank mode {self.mode!r}")
        if self.mode == "soft" and not isinstance(self.quantizer, SoftQuantizerParams):
            raise TypeError("soft mode needs SoftQuantizerParams")
        if self.mode in ("hard", "passing") and not isinstance(self.quantizer, HardQuantizer):
            raise TypeError(f"{self.mode} mode needs a HardQuantizer")
        if self.mode == "passing" and self.quantizer.cell_width is None:
            raise ValueError("passing-gradient mode needs a uniform quantizer")

    @property
    def resolution(self) -> int:
        return self.quantizer.resolution

    def bits(self) -> float:
        return self.lanes * math.log2(self.resolution)

    def check_budget(self, total_levels: float) -> None:
        """Raise if the bank spends more than ``log2(total_levels)`` bits."""
        if self.bits() > math.log2(total_levels) + 1e-9:
            raise ValueError(f"bank uses {self.bits():.3f} bits, budget is {math.log2(total_levels):.3f}")
