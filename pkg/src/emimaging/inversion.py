"""Imaging functions, peak extraction and reflectivity estimation.

Three imaging functions are provided: the MUSIC baseline, the robust
single-inclusion function that compares the projector sandwich
``U^H H H^H U`` with the predicted squared cosines, and the multiple-inclusion
function built from the leading left singular vector of the Green's matrix.
Sweeps are vectorised over chunks of grid points and, optionally, over many
noisy spectra at once so that each Green's matrix is formed only once.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core_model import ArrayGeometry, NumericalError, ParameterError, SearchGrid, SensingMatrix
from .forward import TWO_PI, greens_column, greens_columns, thin_svd
from .rmt import SpectralData

IMAGE_CAP = 1e8
BRACKET_FLOOR = 1e-6
KINDS = ("music", "single", "multi")
COMPONENTS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
COMPONENT_NAMES = ("rho11", "rho22", "rho33", "rho12", "rho13", "rho23")


class DetectionError(NumericalError):
    """Nothing was detected above the noise level."""


class ConditioningError(NumericalError):
    """Green's matrix too ill-conditioned for reflectivity estimation."""


@dataclass(frozen=True)
class ImageVolume:
    grid: SearchGrid
    values: np.ndarray
    kind: str
    rank: int = 0
    sigma_e: float = float("nan")
    theta: float = float("nan")

    def __post_init__(self):
        v = np.asarray(self.values, float).ravel()
        if v.size != self.grid.size:
            raise ParameterError("image value count does not match the grid")
        object.__setattr__(self, "values", v)

    def as_array(self) -> np.ndarray:
        """Values reshaped to (n3, n2, n1)."""
        return self.values.reshape(self.grid.shape)

    def argmax_point(self) -> np.ndarray:
        return self.grid.points()[int(np.argmax(self.values))]

    def peak_to_median(self) -> float:
        return float(np.max(self.values) / np.median(self.values))

    def slice(self, axis: int, value: float):
        """Plane of fixed y_axis nearest ``value`` (axis 1 for y2, 2 for y3).

        Returns the two in-plane coordinate vectors and the 2-D image with
        rows along the second of them.
        """
        arr = self.as_array()
        if axis == 2:
            i = int(np.argmin(np.abs(self.grid.axis(2) - value)))
            return self.grid.axis(0), self.grid.axis(1), arr[i]
        if axis == 1:
            i = int(np.argmin(np.abs(self.grid.axis(1) - value)))
            return self.grid.axis(0), self.grid.axis(2), arr[:, i, :]
        if axis == 0:
            i = int(np.argmin(np.abs(self.grid.axis(0) - value)))
            return self.grid.axis(1), self.grid.axis(2), arr[:, :, i]
        raise ParameterError("axis must be 0, 1 or 2")

    def to_csv(self, path) -> None:
        pts = self.grid.points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y1", "y2", "y3", "value"])
            for p, v in zip(pts, self.values):
                w.writerow([f"{p[0]:.6g}", f"{p[1]:.6g}", f"{p[2]:.6g}", repr(float(v))])

    def slice_to_csv(self, path, axis: int, value: float) -> None:
        names = [n for i, n in enumerate(("y1", "y2", "y3")) if i != axis]
        a, b, img = self.slice(axis, value)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([names[0], names[1], "value"])
            for jb, vb in enumerate(b):
                for ja, va in enumerate(a):
                    w.writerow([f"{va:.6g}", f"{vb:.6g}", repr(float(img[jb, ja]))])


# -- imaging kernels ----------------------------------------------------------

def _check_spectral(sd: SpectralData, kind: str) -> None:
    if sd.rank < 1:
        raise DetectionError("effective rank is zero: nothing above the noise level")
    if kind != "music" and (sd.cos2 is None or sd.gamma is None):
        raise ParameterError("spectrum corrections missing; call correct_spectrum first")
    if kind == "single" and not np.any(sd.gamma[: sd.rank] > 0):
        raise DetectionError("all imaging weights vanish: nothing above the noise level")


def _chunk_values(spectra, U_all, offsets, G, kind):
    """Imaging values for one chunk of points and every spectrum."""
    P, M, _ = G.shape
    out = np.empty((len(spectra), P))
    if kind == "music":
        g1 = G[:, :, 0].T                                   # (M, P)
        B = U_all.conj().T @ g1
        for i, sd in enumerate(spectra):
            U = U_all[:, offsets[i]:offsets[i + 1]]
            res = np.linalg.norm(g1 - U @ B[offsets[i]:offsets[i + 1]], axis=0)
            with np.errstate(divide="ignore"):
                out[i] = np.minimum(1.0 / res, IMAGE_CAP)
        return out
    H, _, _ = thin_svd(G)
    if kind == "multi":
        A = U_all.conj().T @ H[:, :, 0].T                   # (sum R, P)
        for i, sd in enumerate(spectra):
            R = sd.rank
            cos2 = np.maximum(sd.cos2[:R], 1e-300)
            proj = np.sum(np.abs(A[offsets[i]:offsets[i + 1]]) ** 2 / cos2[:, None], axis=0)
            out[i] = np.maximum(1.0 - proj, BRACKET_FLOOR) ** -0.5
        return out
    Hm = H.transpose(1, 0, 2).reshape(M, 3 * P)
    A = (U_all.conj().T @ Hm).reshape(-1, P, 3)             # (sum R, P, 3)
    for i, sd in enumerate(spectra):
        R = sd.rank
        Ai = A[offsets[i]:offsets[i + 1]]
        T = np.einsum("jpa,qpa->pjq", Ai, Ai.conj())
        T[:, np.arange(R), np.arange(R)] -= sd.cos2[:R]
        w = sd.gamma[:R] ** 2
        s = np.einsum("j,pjq->p", w, np.abs(T) ** 2)
        with np.errstate(divide="ignore"):
            out[i] = np.minimum(s ** -0.5, IMAGE_CAP)
    return out


def image_values(spectra: Sequence[SpectralData], points: np.ndarray, geometry: ArrayGeometry,
                 sensing: Optional[SensingMatrix] = None, kind: str = "single",
                 chunk: int = 256, workers: int = 1, k: float = TWO_PI,
                 far_field: bool = False) -> np.ndarray:
    """Imaging function of ``kind`` for each spectrum at each point, shape (S, P)."""
    if kind not in KINDS:
        raise ParameterError(f"unknown imaging kind {kind!r}; expected one of {KINDS}")
    spectra = list(spectra)
    for sd in spectra:
        _check_spectral(sd, kind)
    sensing = sensing or SensingMatrix()
    M = sensing.size * geometry.n_sensors
    if any(sd.left_vectors.shape[0] != M for sd in spectra):
        raise ParameterError("spectral data dimension does not match geometry and sensing set")
    U_all = np.concatenate([sd.U for sd in spectra], axis=1)
    offsets = np.concatenate([[0], np.cumsum([sd.rank for sd in spectra])])
    points = np.atleast_2d(np.asarray(points, float))
    out = np.empty((len(spectra), len(points)))
    bounds = [(a, min(a + chunk, len(points))) for a in range(0, len(points), chunk)]

    def work(b):
        G = greens_columns(geometry, points[b[0]:b[1]], sensing, k, far_field)
        out[:, b[0]:b[1]] = _chunk_values(spectra, U_all, offsets, G, kind)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            list(ex.map(work, bounds))
    else:
        for b in bounds:
            work(b)
    return out


def image_many(spectra: Sequence[SpectralData], grid: SearchGrid, geometry: ArrayGeometry,
               sensing: Optional[SensingMatrix] = None, kind: str = "single",
               **kwargs) -> list[ImageVolume]:
    vals = image_values(spectra, grid.points(), geometry, sensing, kind, **kwargs)
    return [ImageVolume(grid, v, kind, sd.rank, sd.sigma_e, sd.theta)
            for v, sd in zip(vals, spectra)]


def music_image(spectral: SpectralData, grid: SearchGrid, geometry: ArrayGeometry,
                sensing: Optional[SensingMatrix] = None, **kwargs) -> ImageVolume:
    """Reciprocal distance of G(y) e1 to the estimated signal subspace."""
    return image_many([spectral], grid, geometry, sensing, "music", **kwargs)[0]


def robust_image_single(spectral: SpectralData, grid: SearchGrid, geometry: ArrayGeometry,
                        sensing: Optional[SensingMatrix] = None, **kwargs) -> ImageVolume:
    """Weighted misfit of U^H H H^H U against the predicted squared cosines."""
    return image_many([spectral], grid, geometry, sensing, "single", **kwargs)[0]


def robust_image_multi(spectral: SpectralData, grid: SearchGrid, geometry: ArrayGeometry,
                       sensing: Optional[SensingMatrix] = None, **kwargs) -> ImageVolume:
    """Angle-corrected projection of h1(y) on the estimated signal subspace."""
    return image_many([spectral], grid, geometry, sensing, "multi", **kwargs)[0]


def image_cap(kind: str) -> float:
    """Largest value an imaging function of ``kind`` can return."""
    return BRACKET_FLOOR ** -0.5 if kind == "multi" else IMAGE_CAP


# -- localization -------------------------------------------------------------

def resolution_lengths(geometry: ArrayGeometry, multiplier: float = 1.0) -> tuple[float, float]:
    return (multiplier * geometry.cross_range_resolution, multiplier * geometry.range_resolution)


def well_separated(y_a, y_b, geometry: ArrayGeometry, multiplier: float = 1.0) -> bool:
    """Whether two points are resolved apart in cross-range or in range."""
    d = np.asarray(y_a, float) - np.asarray(y_b, float)
    s_cross, s_range = resolution_lengths(geometry, multiplier)
    return bool(np.hypot(d[0], d[1]) >= s_cross or abs(d[2]) >= s_range)


@dataclass(frozen=True)
class LocalizationResult:
    locations: np.ndarray
    values: np.ndarray
    requested: int
    min_separation: tuple[float, float]

    @property
    def complete(self) -> bool:
        """False when fewer peaks than requested were found."""
        return len(self.locations) >= self.requested

    def to_dict(self) -> dict:
        return {
            "locations": np.asarray(self.locations).tolist(),
            "values": np.asarray(self.values).tolist(),
            "requested": self.requested,
            "found": len(self.locations),
            "complete": self.complete,
            "min_separation": list(self.min_separation),
        }


def extract_peaks(volume: ImageVolume, count: int = 1,
                  min_separation: Optional[tuple[float, float]] = None,
                  geometry: Optional[ArrayGeometry] = None, multiplier: float = 1.0
                  ) -> LocalizationResult:
    """Greedy selection of local maxima, strongest first.

    A candidate is rejected when it lies within ``min_separation`` =
    (cross-range, range) of an already accepted peak in both directions.
    By default the separation is the resolution lengths of ``geometry``.
    Ties are broken by grid order.
    """
    if count < 1:
        raise ParameterError("count must be >= 1")
    if min_separation is None:
        if geometry is None:
            raise ParameterError("need min_separation or geometry")
        min_separation = resolution_lengths(geometry, multiplier)
    s_cross, s_range = (float(v) for v in min_separation)
    arr = volume.as_array()
    local = ndimage.maximum_filter(arr, size=3, mode="nearest") == arr
    idx = np.flatnonzero(local.ravel())
    vals = volume.values[idx]
    order = np.lexsort((idx, -vals))
    pts = volume.grid.points()
    chosen: list[int] = []
    for i in idx[order]:
        y = pts[i]
        clash = False
        for j in chosen:
            d = y - pts[j]
            if np.hypot(d[0], d[1]) < s_cross and abs(d[2]) < s_range:
                clash = True
                break
        if not clash:
            chosen.append(int(i))
            if len(chosen) == count:
                break
    return LocalizationResult(pts[chosen], volume.values[chosen], int(count), (s_cross, s_range))


# -- reflectivity ---------------------------------------------------------------

@dataclass(frozen=True)
class ReflectivityEstimate:
    location: np.ndarray
    raw: np.ndarray
    truth: Optional[np.ndarray] = None
    condition: float = float("nan")

    @property
    def symmetric(self) -> np.ndarray:
        return 0.5 * (self.raw + self.raw.T)

    @property
    def tensor(self) -> np.ndarray:
        """Real symmetric estimate."""
        return self.symmetric.real

    @property
    def imaginary_residual(self) -> float:
        """Relative size of the imaginary part, a consistency diagnostic."""
        return float(np.linalg.norm(self.symmetric.imag) / np.linalg.norm(self.symmetric.real))

    def relative_errors(self, truth=None, mode: str = "modulus") -> np.ndarray:
        """Percent errors for (11, 22, 33, 12, 13, 23).

        ``mode="modulus"`` compares the complex symmetrized estimate,
        ``mode="real"`` only its real part.
        """
        truth = self.truth if truth is None else np.asarray(truth, float)
        if truth is None:
            raise ParameterError("no ground truth available")
        est = self.symmetric if mode == "modulus" else self.tensor
        if mode not in ("modulus", "real"):
            raise ParameterError(f"unknown error mode {mode!r}")
        return np.array([100.0 * abs(est[i] - truth[i]) / abs(truth[i]) for i in COMPONENTS])

    def to_dict(self) -> dict:
        out = {
            "location": np.asarray(self.location).tolist(),
            "tensor": self.tensor.tolist(),
            "raw_real": self.raw.real.tolist(),
            "raw_imag": self.raw.imag.tolist(),
            "imaginary_residual": self.imaginary_residual,
            "condition": self.condition,
        }
        if self.truth is not None:
            out["relative_errors_percent"] = dict(zip(COMPONENT_NAMES, self.relative_errors().tolist()))
        return out


def estimate_reflectivity(data, y_estimate, geometry: ArrayGeometry,
                          sensing: Optional[SensingMatrix] = None, truth=None,
                          k: float = TWO_PI, far_field: bool = False) -> ReflectivityEstimate:
    """Reflectivity at ``y_estimate`` from ``H^H D H^conj`` and ``Gamma = V Sigma^-1``."""
    D = getattr(data, "data", data)
    if sensing is None:
        sensing = getattr(data, "sensing", None) or SensingMatrix()
    G = greens_column(geometry, y_estimate, sensing, k, far_field)
    if G.shape[0] != D.shape[0]:
        raise ParameterError(f"data size {D.shape[0]} does not match Green's matrix rows {G.shape[0]}")
    H, s, V = thin_svd(G)
    ratio = s[-1] / s[0] if len(s) == 3 else 0.0
    if not ratio > 1e-14:
        raise ConditioningError(f"Green's matrix is rank deficient: Sigma3/Sigma1 = {ratio:.3e}")
    Rt = H.conj().T @ D @ H.conj()
    Gam = V / s
    rho = Gam @ Rt @ Gam.T
    return ReflectivityEstimate(np.asarray(y_estimate, float), rho,
                                None if truth is None else np.asarray(truth, float), float(ratio))


def write_json(path, record) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
