"""Noisy acquisition: direct additive noise or Hadamard multiplexed excitation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_model import ParameterError
from .forward import ResponseMatrix

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-trial seed, independent of the order trials are executed in."""
    return splitmix64((int(seed) & _MASK64) ^ splitmix64(int(index) & _MASK64))


@dataclass(frozen=True)
class NoiseSpec:
    """Noise level as a fraction of the largest noiseless singular value.

    ``reference`` chooses which sigma_1 the fraction refers to: the matrix
    actually measured (``"measured"``) or the complete-data matrix
    (``"complete"``), which only differs for incomplete sensing sets.
    """

    fraction: float = 0.0
    seed: int = 0
    scheme: str = "direct"
    reference: str = "measured"

    def __post_init__(self):
        if not self.fraction >= 0:
            raise ParameterError(f"noise fraction must be >= 0, got {self.fraction}")
        if self.scheme not in ("direct", "hadamard"):
            raise ParameterError(f"unknown acquisition scheme {self.scheme!r}")
        if self.reference not in ("measured", "complete"):
            raise ParameterError(f"unknown noise reference {self.reference!r}")


@dataclass(frozen=True)
class HadamardExcitation:
    matrix: np.ndarray

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    def inverse(self) -> np.ndarray:
        return self.matrix.conj().T / self.M


def make_complex_hadamard(M: int) -> HadamardExcitation:
    """Fourier-type complex Hadamard matrix J[m, n] = exp(2 pi i m n / M)."""
    if M < 1:
        raise ParameterError("M must be >= 1")
    m = np.arange(M)
    # reduce m*n modulo M before scaling to keep the phases exact for large M
    J = np.exp(2j * np.pi * (np.outer(m, m) % M) / M)
    return HadamardExcitation(J)


def hadamard_excite(D: np.ndarray) -> np.ndarray:
    """D @ J for the Fourier Hadamard matrix, via FFT along rows."""
    M = D.shape[1]
    return M * np.fft.ifft(D, axis=1)


def hadamard_decode(X: np.ndarray) -> np.ndarray:
    """X @ J^{-1} for the Fourier Hadamard matrix, via FFT along rows."""
    return np.fft.fft(X, axis=1) / X.shape[1]


def synthesize_noise(M: int, sigma: float, seed=None, dtype=np.complex128) -> np.ndarray:
    """M x M i.i.d. complex Gaussian noise with entry standard deviation sigma/sqrt(M).

    ``seed`` may be an int or an existing ``numpy.random.Generator``.
    """
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    real = np.float32 if np.dtype(dtype) == np.complex64 else np.float64
    W = rng.standard_normal((M, 2 * M), dtype=real).view(dtype)
    W *= real(sigma / np.sqrt(2.0 * M))
    return W


def noise_sigma(fraction: float, sigma1: float) -> float:
    return float(fraction) * float(sigma1)


def acquire(noiseless: ResponseMatrix, spec: NoiseSpec, sigma1: Optional[float] = None,
            rng=None) -> ResponseMatrix:
    """Noisy version of ``noiseless`` according to ``spec``.

    ``sigma1`` is the reference largest singular value; computed from the
    input when omitted. Both schemes leave effective noise of standard
    deviation sigma/sqrt(M) per entry.
    """
    D = noiseless.data
    M = noiseless.M
    if spec.fraction == 0:
        return ResponseMatrix(D.copy(), noiseless.sensing, noisy=True)
    if sigma1 is None:
        if spec.reference == "complete" and not noiseless.complete:
            raise ParameterError("complete-data reference needs sigma1 from the complete matrix")
        sigma1 = float(np.linalg.svd(D, compute_uv=False)[0])
    sigma = noise_sigma(spec.fraction, sigma1)
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if spec.scheme == "direct":
        out = D + synthesize_noise(M, sigma, rng)
    else:
        # raw recordings carry noise of std sigma per entry before decoding
        raw = hadamard_excite(D) + synthesize_noise(M, sigma * np.sqrt(M), rng)
        out = hadamard_decode(raw)
    return ResponseMatrix(out, noiseless.sensing, noisy=True)
