"""Data generators for pilot-based channel estimation and BPSK multi-user detection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from taskquant.hybrid import all_symbol_vectors


def dft_pilots(tau: int, n_users: int) -> np.ndarray:
    """First ``n_users`` columns of the unnormalized ``tau``-point DFT matrix."""
    if tau < n_users:
        raise ValueError("pilot length must be at least the number of users")
    k = np.arange(tau)[:, None]
    l = np.arange(n_users)[None, :]
    return np.exp(-2j * np.pi * k * l / tau)


def real_embed(v) -> np.ndarray:
    """Stack real and imaginary parts along the last axis."""
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1).astype(np.float64)


def real_unembed(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    half = r.shape[-1] // 2
    return r[..., :half] + 1j * r[..., half:]


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Zero-mean, unit-variance circular complex normal samples."""
    scale = np.sqrt(0.5)
    return scale * rng.standard_normal(shape) + 1j * scale * rng.standard_normal(shape)


@dataclass(frozen=True)
class SampleSet:
    """Targets ``s`` (count x n_s) and observations ``x`` (count x n)."""

    s: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        if self.s.shape[0] != self.x.shape[0]:
            raise ValueError("targets and observations differ in count")

    def __len__(self):
        return self.s.shape[0]

    def __iter__(self):
        return zip(self.s, self.x)


@dataclass(frozen=True)
class ChannelEstScenario:
    n_users: int = 4
    n_antennas: int = 10
    pilots: int = 12
    snr: float = 4.0
    pilot_matrix: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        phi = self.pilot_matrix
        if phi is None:
            phi = dft_pilots(self.pilots, self.n_users)
        phi = np.asarray(phi, dtype=np.complex128)
        if phi.shape != (self.pilots, self.n_users):
            raise ValueError(f"pilot matrix must be {self.pilots} x {self.n_users}")
        gram = phi.conj().T @ phi
        if np.max(np.abs(gram - self.pilots * np.eye(self.n_users))) > 1e-9:
            raise ValueError("pilot columns must be orthogonal with squared norm equal to the pilot length")
        if self.snr < 0:
            raise ValueError("snr must be non-negative")
        object.__setattr__(self, "pilot_matrix", phi)

    @property
    def n(self) -> int:
        return 2 * self.pilots * self.n_antennas

    @property
    def n_s(self) -> int:
        return 2 * self.n_users * self.n_antennas

    @property
    def rho(self) -> float:
        return self.pilots / self.n_users

    def observation_matrix(self) -> np.ndarray:
        """Kronecker product of the pilot matrix with the antenna identity."""
        return np.kron(self.pilot_matrix, np.eye(self.n_antennas))


def gen_channel_est(scenario: ChannelEstScenario, count: int, rng: np.random.Generator,
                    snr_mode: str = "fixed", noise: bool = True) -> SampleSet:
    """Draw ``(real(h), real(y))`` pairs for ``y = sqrt(P) (Phi kron I) h + w``.

    ``snr_mode="uniform"`` redraws ``P`` from U[1, 10] for every realization.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    a = scenario.observation_matrix()
    h = complex_normal(rng, (count, a.shape[1]))
    if snr_mode == "fixed":
        gain = np.full((count, 1), np.sqrt(scenario.snr))
    elif snr_mode == "uniform":
        gain = np.sqrt(rng.uniform(1.0, 10.0, size=(count, 1)))
    else:
        raise ValueError(f"unknown snr mode {snr_mode!r}")
    y = gain * (h @ a.T)
    if noise:
        y = y + complex_normal(rng, y.shape)
    return SampleSet(real_embed(h), real_embed(y))


def random_channel(n_antennas: int, n_users: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((n_antennas, n_users))


def normalize_columns(h: np.ndarray) -> np.ndarray:
    """Scale each user's channel column to unit Euclidean norm."""
    return h / np.linalg.norm(h, axis=0, keepdims=True)


@dataclass(frozen=True)
class DetectionScenario:
    channel: np.ndarray
    noise_var: float

    def __post_init__(self):
        h = np.asarray(self.channel, dtype=np.float64)
        if h.ndim != 2:
            raise ValueError("channel must be a matrix")
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")
        object.__setattr__(self, "channel", h)

    @classmethod
    def from_snr_db(cls, channel, snr_db: float) -> "DetectionScenario":
        """SNR is ``1 / noise_var`` in dB."""
        return cls(channel, 10.0 ** (-snr_db / 10.0))

    @property
    def n_antennas(self) -> int:
        return self.channel.shape[0]

    @property
    def n_users(self) -> int:
        return self.channel.shape[1]

    @property
    def n(self) -> int:
        return self.n_antennas

    @property
    def n_s(self) -> int:
        return self.n_users

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.noise_var))

    @property
    def snr_db(self) -> float:
        return float(-10.0 * np.log10(self.noise_var))


def perturb_channel(h: np.ndarray, rng: np.random.Generator, fraction: float = 0.2,
                    rule: str = "linear", size=None) -> np.ndarray:
    """Add Gaussian errors to each entry of ``h``.

    ``rule="linear"`` gives each error variance ``fraction * |h_ij|``;
    ``rule="squared"`` gives variance ``(fraction * |h_ij|) ** 2``. With
    ``size`` a stack of independent perturbed copies is returned.
    """
    if rule == "linear":
        std = np.sqrt(fraction * np.abs(h))
    elif rule == "squared":
        std = fraction * np.abs(h)
    else:
        raise ValueError(f"unknown perturbation rule {rule!r}")
    shape = h.shape if size is None else (size,) + h.shape
    return h + std * rng.standard_normal(shape)


def gen_detection(scenario: DetectionScenario, count: int, rng: np.random.Generator,
                  csi_mode: str = "exact", perturbation: str = "linear",
                  noise: bool = True) -> SampleSet:
    """Draw BPSK vectors and channel outputs ``x = H s + w``.

    In ``perturbed`` mode a single perturbed channel is drawn for the whole
    call, so every call is one batch sharing one channel error.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    h = scenario.channel
    if csi_mode == "perturbed":
        h = perturb_channel(h, rng, rule=perturbation)
    elif csi_mode != "exact":
        raise ValueError(f"unknown csi mode {csi_mode!r}")
    s = rng.choice(np.array([-1.0, 1.0]), size=(count, scenario.n_users))
    x = s @ h.T
    if noise:
        x = x + scenario.sigma * rng.standard_normal(x.shape)
    return SampleSet(s, x)


def gen_detection_blocks(scenario: DetectionScenario, count: int, rng: np.random.Generator,
                         block: int, csi_mode: str = "exact",
                         perturbation: str = "linear") -> SampleSet:
    """Concatenate :func:`gen_detection` batches of at most ``block`` samples."""
    parts = [gen_detection(scenario, min(block, count - start), rng, csi_mode, perturbation)
             for start in range(0, count, block)]
    return SampleSet(np.concatenate([p.s for p in parts]), np.concatenate([p.x for p in parts]))


def candidate_means(h: np.ndarray) -> np.ndarray:
    """Noise-free outputs ``H s`` for every class, row ``k`` for class ``k``."""
    return all_symbol_vectors(h.shape[1]) @ h.T


def write_dataset_csv(samples: SampleSet, path_or_file) -> None:
    """Write ``s_*`` then ``x_*`` columns to a path or an open text file."""
    if hasattr(path_or_file, "write"):
        _write_rows(samples, path_or_file)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_rows(samples, fh)


def _write_rows(samples: SampleSet, fh) -> None:
    n_s, n = samples.s.shape[1], samples.x.shape[1]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([f"s_{i}" for i in range(n_s)] + [f"x_{i}" for i in range(n)])
    for s, x in samples:
        w.writerow([format(v, ".17g") for v in np.concatenate([s, x])])


def read_dataset_csv(path) -> SampleSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_s = sum(1 for name in header if name.startswith("s_"))
    data = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    return SampleSet(data[:, :n_s], data[:, n_s:])
