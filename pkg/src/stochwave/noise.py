"""Translation-invariant covariance kernels and correlated Wiener increments.

Fourier convention: f^(k) = int f(x) exp(-ikx) dx.  Under it the normalised
Gaussian kernel (1/(2 zeta)) exp(-pi x^2 / (4 zeta^2)) has
q^(k) = exp(-zeta^2 k^2 / pi).

All lag-space arrays live on a periodic embedding grid of M = 2N points with
spacing dx, which is long enough that circular convolution of two N-point
profiles equals linear convolution.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sp_fft

from .grid import Grid


class NotPositiveSemidefinite(ValueError):
    pass


@dataclass(frozen=True)
class CovarianceKernel:
    """Stationary covariance q on a grid.

    kind is one of ``gaussian`` (param zeta), ``exponential`` (param decay),
    ``tent`` (param width) or ``tabulated`` (lags, values).
    """
    kind: str
    grid: Grid
    param: float = 1.0
    table: tuple | None = None
    q_values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("gaussian", "exponential", "tent", "tabulated"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "tabulated" and self.table is None:
            raise ValueError("tabulated kernel needs (lags, values)")
        if self.kind != "tabulated" and self.param <= 0:
            raise ValueError("kernel parameter must be positive")
        M = self.embedding_size
        j = np.arange(M)
        lags = np.minimum(j, M - j) * self.grid.dx
        qv = self.q(lags)
        if not np.all(np.isfinite(qv)):
            raise ValueError("kernel values are not finite")
        qv.setflags(write=False)
        object.__setattr__(self, "q_values", qv)

    @classmethod
    def gaussian(cls, grid, zeta=1.0):
        return cls("gaussian", grid, float(zeta))

    @classmethod
    def from_file(cls, grid, path):
        """Two-column text file: lag, value (lags >= 0)."""
        data = np.loadtxt(path, ndmin=2)
        return cls("tabulated", grid, 1.0, (tuple(data[:, 0]), tuple(data[:, 1])))

    @property
    def embedding_size(self) -> int:
        """Circulant length: at least 2N and 5-smooth so the FFTs are fast."""
        return sp_fft.next_fast_len(2 * self.grid.N, real=True)

    def q(self, lag) -> np.ndarray:
        s = np.abs(np.asarray(lag, dtype=float))
        if self.kind == "gaussian":
            z = self.param
            return np.exp(-np.pi * s**2 / (4 * z**2)) / (2 * z)
        if self.kind == "exponential":
            return np.exp(-s / self.param) / (2 * self.param)
        if self.kind == "tent":
            w = self.param
            return np.clip(1 - s / w, 0, None) / w
        lags, vals = (np.asarray(t, dtype=float) for t in self.table)
        return np.interp(s, lags, vals, right=0.0)

    @property
    def q_at_zero(self) -> float:
        return float(self.q(0.0))

    def q_hat_continuum(self, k) -> np.ndarray:
        """Closed-form transform where one exists, else the discrete one."""
        k = np.asarray(k, dtype=float)
        if self.kind == "gaussian":
            return np.exp(-self.param**2 * k**2 / np.pi)
        if self.kind == "exponential":
            return 1.0 / (1.0 + (self.param * k) ** 2)
        if self.kind == "tent":
            return np.sinc(k * self.param / (2 * np.pi)) ** 2
        kk, qh = self.wavenumbers(), kernel_fourier(self)
        order = np.argsort(kk)
        return np.interp(np.abs(k), kk[order], qh[order], right=0.0)

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * sp_fft.fftfreq(self.embedding_size, d=self.grid.dx)

    def describe(self) -> dict:
        d = {"kind": self.kind, "param": self.param, "L": self.grid.L, "N": self.grid.N}
        if self.table is not None:
            d["table_sha1"] = hashlib.sha1(json.dumps(self.table).encode()).hexdigest()
        return d


def kernel_fourier(kernel: CovarianceKernel, tol=1e-12) -> np.ndarray:
    """q^ on the embedding wavenumbers (``kernel.wavenumbers()``)."""
    full = sp_fft.fft(kernel.q_values) * kernel.grid.dx
    scale = np.max(np.abs(full.real))
    if np.max(np.abs(full.imag)) > 1e-10 * scale:
        raise ValueError("kernel transform is not real; kernel is not symmetric")
    qh = full.real
    if qh.min() < -tol * scale:
        raise NotPositiveSemidefinite(f"q^ has negative entries down to {qh.min():.3e}")
    return np.clip(qh, 0.0, None)


def sqrt_kernel(kernel: CovarianceKernel) -> np.ndarray:
    """Lag-space kernel p with p * p = q (both on the embedding grid)."""
    ph = np.sqrt(kernel_fourier(kernel))
    return sp_fft.ifft(ph).real / kernel.grid.dx


def circular_convolve(kernel_values, v, dx) -> np.ndarray:
    """dx * sum_j k(i - j) v_j on the embedding grid (v of length M)."""
    return sp_fft.ifft(sp_fft.fft(kernel_values) * sp_fft.fft(v)).real * dx


class Convolver:
    """Applies Q v = q * v to N-point profiles via a zero-padded FFT."""

    def __init__(self, kernel: CovarianceKernel):
        self.N = kernel.grid.N
        self.M = kernel.embedding_size
        self._qh = sp_fft.rfft(kernel.q_values) * kernel.grid.dx

    def __call__(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return sp_fft.irfft(sp_fft.rfft(v, self.M, axis=-1) * self._qh, self.M, axis=-1)[..., :self.N]


def convolve_q(kernel: CovarianceKernel, v) -> np.ndarray:
    return Convolver(kernel)(v)


def kmax_for(L: float, zeta: float, floor: int = 150, tail: float = 1e-8) -> int:
    """Smallest truncation with lambda_kmax <= tail for a Gaussian kernel."""
    need = int(np.ceil(L / zeta * np.sqrt(np.log(1 / tail) / np.pi)))
    return max(floor, need)


def basis_eigendata(grid: Grid, kernel: CovarianceKernel, k_max: int):
    """Cosine/sine basis of L^2([-L, L]) and approximate eigenvalues of Q.

    Returns (E, lam, labels): E has one basis function per row.  The k=0 row
    is the constant 1/sqrt(2L) so that the family is orthonormal.
    """
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    x, L = grid.x, grid.L
    rows, lam, labels = [np.full(grid.N, 1 / np.sqrt(2 * L))], [1.0], [(0, "c")]
    for k in range(1, k_max + 1):
        rows += [np.cos(np.pi * k * x / L) / np.sqrt(L), np.sin(np.pi * k * x / L) / np.sqrt(L)]
        lam += [None, None]
        labels += [(k, "c"), (k, "s")]
    ks = np.array([lb[0] for lb in labels], dtype=float)
    lam = np.asarray(kernel.q_hat_continuum(np.pi * ks / L), dtype=float)
    return np.array(rows), lam, labels


class NoiseSampler:
    """Spatially correlated, temporally white increments by circulant embedding.

    Holds one RNG stream per realization; ``sample_increment`` returns an
    array of shape (R, m, N), or (m, N) when constructed with a single seed.
    Each complex FFT yields two independent fields (real and imaginary
    parts), which are handed out on consecutive calls, so a stream is fully
    determined by its seed and the call index.
    """

    def __init__(self, kernel: CovarianceKernel, seeds, m_components: int = 1):
        self.kernel = kernel
        self.m = m_components
        self.single = np.isscalar(seeds) or isinstance(seeds, (tuple, np.random.SeedSequence))
        seeds = [seeds] if self.single else list(seeds)
        self.seeds = seeds
        self.rngs = [np.random.default_rng(_seed_sequence(s)) for s in seeds]
        lam = kernel_fourier(kernel) / kernel.grid.dx   # eigenvalues of the circulant
        M = kernel.embedding_size
        self._scale = np.sqrt(lam / M)
        self.p_hat = np.sqrt(kernel_fourier(kernel))
        self._pending = None
        self.calls = 0

    @property
    def R(self) -> int:
        return len(self.rngs)

    def _draw_pair(self):
        M = self.kernel.embedding_size
        z = np.empty((self.R, self.m, M), dtype=complex)
        for r, rng in enumerate(self.rngs):
            z[r] = rng.standard_normal((self.m, M)) + 1j * rng.standard_normal((self.m, M))
        w = sp_fft.fft(z * self._scale, axis=-1)[..., :self.kernel.grid.N]
        return w.real, w.imag

    def sample_increment(self, dt: float) -> np.ndarray:
        if dt <= 0:
            raise ValueError("dt must be positive")
        if self._pending is None:
            first, self._pending = self._draw_pair()
        else:
            first, self._pending = self._pending, None
        self.calls += 1
        out = first * np.sqrt(dt)
        return out[0] if self.single else out


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, tuple):
        return np.random.SeedSequence(list(seed))
    return np.random.SeedSequence(int(seed))


def realization_seed(base_seed: int, index: int) -> tuple:
    """Seed for realization ``index`` of an ensemble, distinct by construction."""
    return (int(base_seed), int(index))


def warn_clamped(kernel: CovarianceKernel):
    full = sp_fft.fft(kernel.q_values).real
    if full.min() < 0:
        warnings.warn("circulant embedding had small negative eigenvalues; clamped to zero")


class CoarsenedNoise:
    """Sums ``factor`` consecutive fine increments into one coarse increment.

    Paths driven by a sampler and by its coarsening see the same Brownian
    motion, which is what shared-noise time-step refinement studies need.
    """

    def __init__(self, fine: NoiseSampler, factor: int):
        if factor < 1:
            raise ValueError("factor must be a positive integer")
        self.fine = fine
        self.factor = int(factor)

    @property
    def R(self) -> int:
        return self.fine.R

    @property
    def single(self) -> bool:
        return self.fine.single

    @property
    def seeds(self):
        return self.fine.seeds

    def sample_increment(self, dt: float) -> np.ndarray:
        h = dt / self.factor
        return sum(self.fine.sample_increment(h) for _ in range(self.factor))
