"""Random-matrix statistics for spiked complex Gaussian models.

Tracy-Widom (beta = 2) law from the Hastings-McLeod solution of Painleve II,
asymptotic singular value / vector predictions, noise-level estimation,
effective-rank detection and the corresponding spectrum corrections.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special
from scipy.interpolate import PchipInterpolator
from scipy.sparse.linalg import LinearOperator, eigsh

from .core_model import ParameterError

TW2_CACHE_VERSION = 1


class TracyWidom2:
    """Tabulated type-2 Tracy-Widom distribution.

    The table stores ``I(z) = int_z^inf (x - z) q(x)^2 dx`` so that
    ``cdf(z) = exp(-I(z))``, and the density ``cdf(z) * int_z^inf q^2``.
    """

    def __init__(self, z: np.ndarray, tail: np.ndarray, tail_slope: np.ndarray,
                 params: dict):
        self.z = np.asarray(z, float)
        self.tail = np.maximum(np.asarray(tail, float), 0.0)
        # -dI/dz = int_z^inf q^2 >= 0
        self.tail_slope = np.asarray(tail_slope, float)
        self.params = dict(params)
        self._interp = PchipInterpolator(self.z, self.tail, extrapolate=False)

    @classmethod
    def build(cls, x0: float = 8.0, zmin: float = -10.0, zmax: float = 6.0,
              n: int = 3201, rtol: float = 1e-12, method: str = "DOP853") -> "TracyWidom2":
        """Integrate Painleve II backward from ``x0`` with Airy initial data."""
        ai, aip, _, _ = special.airy(x0)
        # tail integrals of the Airy solution beyond x0
        j0 = aip**2 - x0 * ai**2
        i0 = integrate.quad(lambda x: (x - x0) * special.airy(x)[0] ** 2, x0, np.inf,
                            epsabs=0.0, epsrel=1e-12)[0]

        def rhs(x, y):
            q, dq, _, di = y
            return [dq, x * q + 2.0 * q**3, di, q * q]

        z = np.linspace(zmin, zmax, n)
        sol = integrate.solve_ivp(rhs, (x0, zmin), [ai, aip, i0, -j0], method=method,
                                  rtol=rtol, atol=1e-300, t_eval=z[::-1], dense_output=False)
        if not sol.success:
            raise ArithmeticError(f"Painleve II integration failed: {sol.message}")
        y = sol.y[:, ::-1]
        params = dict(x0=x0, zmin=zmin, zmax=zmax, n=n, rtol=rtol, method=method,
                      version=TW2_CACHE_VERSION)
        return cls(z, y[2], -y[3], params)

    # -- caching -------------------------------------------------------------

    @staticmethod
    def cache_key(params: dict) -> str:
        blob = json.dumps(params, sort_keys=True).encode()
        return hashlib.sha1(blob).hexdigest()[:12]

    def save(self, path) -> None:
        np.savez(path, z=self.z, tail=self.tail, tail_slope=self.tail_slope,
                 params=json.dumps(self.params))

    @classmethod
    def load(cls, path) -> "TracyWidom2":
        with np.load(path) as f:
            return cls(f["z"], f["tail"], f["tail_slope"], json.loads(str(f["params"])))

    # -- distribution functions ---------------------------------------------

    def cdf(self, z):
        z = np.asarray(z, float)
        inside = np.clip(z, self.z[0], self.z[-1])
        out = np.exp(-self._interp(inside))
        out = np.where(z < self.z[0], 0.0, out)
        out = np.where(z > self.z[-1], 1.0, out)
        return out if out.ndim else float(out)

    def pdf(self, z):
        z = np.asarray(z, float)
        f = np.exp(-self.tail) * self.tail_slope
        out = np.interp(z, self.z, f, left=0.0, right=0.0)
        return out if out.ndim else float(out)

    def quantile(self, q: float) -> float:
        if not 0.0 < q < 1.0:
            raise ParameterError(f"quantile level must be in (0, 1), got {q}")
        lo, hi = self.z[0], self.z[-1]
        if q <= self.cdf(lo):
            return float(lo)
        if q >= self.cdf(hi):
            return float(hi)
        return float(optimize.brentq(lambda t: self.cdf(t) - q, lo, hi, xtol=1e-14, rtol=1e-15))

    def moment(self, k: int) -> float:
        f = np.exp(-self.tail) * self.tail_slope
        return float(integrate.simpson(self.z**k * f, x=self.z))

    def mean(self) -> float:
        return self.moment(1)

    def var(self) -> float:
        return self.moment(2) - self.moment(1) ** 2


def _cache_dir() -> Path:
    root = os.environ.get("EMIMAGING_CACHE")
    if root:
        return Path(root)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "emimaging"


@functools.lru_cache(maxsize=None)
def tracy_widom2(use_disk_cache: bool = True) -> TracyWidom2:
    """Shared TW2 table, built once per process and cached on disk."""
    defaults = dict(x0=8.0, zmin=-10.0, zmax=6.0, n=3201, rtol=1e-12, method="DOP853",
                    version=TW2_CACHE_VERSION)
    path = _cache_dir() / f"tw2_v{TW2_CACHE_VERSION}_{TracyWidom2.cache_key(defaults)}.npz"
    if use_disk_cache and path.exists():
        try:
            return TracyWidom2.load(path)
        except (OSError, ValueError, KeyError):
            pass
    tw = TracyWidom2.build()
    if use_disk_cache:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tw.save(path)
        except OSError:
            pass
    return tw


def tw2_cdf(z):
    return tracy_widom2().cdf(z)


def tw2_quantile(q: float) -> float:
    return tracy_widom2().quantile(q)


# -- spiked-model predictions ----------------------------------------------

def predict_singular_value(sigma_j: float, sigma: float) -> float:
    """Asymptotic mean of a perturbed singular value."""
    if sigma < 0:
        raise ParameterError("sigma must be >= 0")
    if sigma_j > sigma:
        return sigma_j * (1.0 + sigma**2 / sigma_j**2)
    return 2.0 * sigma


def predict_singular_value_std(sigma_j: float, sigma: float, M: int) -> float:
    """Asymptotic standard deviation of a perturbed singular value."""
    if sigma < 0 or M < 1:
        raise ParameterError("need sigma >= 0 and M >= 1")
    if sigma_j > sigma:
        return sigma * np.sqrt((1.0 - sigma**2 / sigma_j**2) / (2.0 * M))
    return sigma * np.sqrt(tracy_widom2().var()) / (2.0 ** (2.0 / 3.0) * M ** (2.0 / 3.0))


def predict_cos2(sigma_j: float, sigma: float) -> float:
    """Asymptotic squared cosine between perturbed and unperturbed singular vectors."""
    if not sigma_j > sigma:
        raise ParameterError("prediction undefined for sigma_j <= sigma")
    return 1.0 - sigma**2 / sigma_j**2


def detection_threshold(M: int, theta: float) -> float:
    """Ratio r_theta: singular values above r_theta * sigma are signal."""
    if not 0.0 < theta < 1.0:
        raise ParameterError(f"false-alarm rate must be in (0, 1), got {theta}")
    return 2.0 + tw2_quantile(1.0 - theta) / (2.0 * M) ** (2.0 / 3.0)


def estimate_noise_level(spectrum, R_assumed: int, M: Optional[int] = None,
                         total_energy: Optional[float] = None) -> float:
    """Noise level from the energy outside the ``R_assumed`` leading values.

    ``spectrum`` is the descending list of singular values. When only the
    leading ones are available, pass the squared Frobenius norm of the matrix
    as ``total_energy`` together with ``M``.
    """
    s = np.asarray(spectrum, float)
    M = len(s) if M is None else int(M)
    R = int(R_assumed)
    if R < 0 or M - 4 * R <= 0:
        raise ParameterError(f"need 0 <= R and M - 4R > 0 (M={M}, R={R})")
    if total_energy is None:
        if len(s) != M:
            raise ParameterError("partial spectrum needs total_energy")
        tail = float(np.sum(s[R:] ** 2))
    else:
        if len(s) < R:
            raise ParameterError("not enough leading singular values for R_assumed")
        tail = float(total_energy) - float(np.sum(s[:R] ** 2))
    return float(np.sqrt(max(tail, 0.0) / (M - 4 * R)))


def effective_rank(spectrum, sigma_e: float, M: int, theta: float = 0.01) -> int:
    """Number of singular values above the Tracy-Widom detection threshold."""
    r = detection_threshold(M, theta)
    s = np.asarray(spectrum, float)
    above = np.nonzero(s > sigma_e * r)[0]
    return int(above[-1] + 1) if len(above) else 0


def estimate_noise_and_rank(spectrum, M: int, theta: float = 0.01,
                            total_energy: Optional[float] = None,
                            R_start: int = 0, max_iter: int = 5) -> tuple[float, int]:
    """Alternate noise estimation and rank detection until the rank settles."""
    R = int(R_start)
    sigma_e = estimate_noise_level(spectrum, R, M, total_energy)
    for _ in range(max_iter):
        R_new = effective_rank(spectrum, sigma_e, M, theta)
        R_new = min(R_new, (M - 1) // 4, len(spectrum))
        if R_new == R:
            break
        R = R_new
        sigma_e = estimate_noise_level(spectrum, R, M, total_energy)
    return sigma_e, effective_rank(spectrum, sigma_e, M, theta)


# -- spectral data ------------------------------------------------------------

@dataclass(frozen=True)
class SpectralData:
    """Leading singular triplets of a noisy matrix and derived estimates."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    M: int
    total_energy: float
    sigma_e: float = float("nan")
    rank: int = 0
    theta: float = 0.01
    sigma_corrected: Optional[np.ndarray] = None
    cos2: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None

    @property
    def U(self) -> np.ndarray:
        """Leading ``rank`` left singular vectors."""
        return self.left_vectors[:, : self.rank]


def correct_singular_values(s, sigma_e: float):
    """Invert the spike map: unperturbed values, squared cosines and weights."""
    s = np.asarray(s, float)
    if sigma_e == 0:
        return s.copy(), np.ones_like(s), np.ones_like(s)
    rad = np.sqrt(np.maximum(s**2 - 4.0 * sigma_e**2, 0.0))
    sig = 0.5 * (s + rad)
    sig = np.maximum(sig, sigma_e)
    cos2 = np.clip(1.0 - (sigma_e / sig) ** 2, 0.0, 1.0)
    gamma = np.minimum(1.0, 3.0 * (sig - sigma_e) / sigma_e)
    return sig, cos2, gamma


def correct_spectrum(spectral: SpectralData) -> SpectralData:
    R = spectral.rank
    sig, cos2, gamma = correct_singular_values(spectral.singular_values[:R], spectral.sigma_e)
    return replace(spectral, sigma_corrected=sig, cos2=cos2, gamma=gamma)


def leading_svd(A: np.ndarray, k: int, dtype=None, tol: float = 1e-6, seed: int = 0):
    """``k`` leading singular values and left vectors via Lanczos on A A^H.

    Optionally runs in reduced precision (``dtype=np.complex64``).
    """
    M = A.shape[0]
    if k >= M - 1:
        U, s, _ = np.linalg.svd(A)
        return s[:k], U[:, :k]
    if dtype is not None:
        A = A.astype(dtype, copy=False)
    AH = np.ascontiguousarray(A.conj().T)
    op = LinearOperator((M, M), matvec=lambda v: A @ (AH @ v), dtype=A.dtype)
    v0 = np.random.default_rng(seed).standard_normal(M).astype(A.dtype)
    w, v = eigsh(op, k=k, tol=tol, v0=v0)
    order = np.argsort(w)[::-1]
    return np.sqrt(np.maximum(w[order], 0.0)).astype(float), v[:, order].astype(complex)


def spectral_analysis(A: np.ndarray, theta: float = 0.01, R_assumed: Optional[int] = None,
                      k: Optional[int] = None, dtype=None) -> SpectralData:
    """SVD, noise level, effective rank and corrections for a noisy matrix.

    With ``k`` only the ``k`` leading triplets are computed (Lanczos); the
    tail energy then comes from the Frobenius norm. ``R_assumed`` fixes the
    number of signal values used for the noise estimate; otherwise it is
    found iteratively from the detected rank.
    """
    A = np.asarray(A)
    M = A.shape[0]
    total = float(np.vdot(A, A).real)
    if k is None:
        U, s, _ = np.linalg.svd(A)
    else:
        s, U = leading_svd(A, k, dtype=dtype)
    if R_assumed is not None:
        sigma_e = estimate_noise_level(s, R_assumed, M, total)
        rank = effective_rank(s, sigma_e, M, theta)
    else:
        sigma_e, rank = estimate_noise_and_rank(s, M, theta, total)
    if k is not None and rank >= len(s) and len(s) < M - 1:
        # all computed values are signal: widen the window and retry
        return spectral_analysis(A, theta, R_assumed, min(2 * len(s), M - 2), dtype)
    return correct_spectrum(SpectralData(s, U, M, total, sigma_e, rank, theta))
