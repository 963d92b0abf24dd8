"""Geometry, inclusion descriptions, sensing selectors and search grids.

All lengths are expressed in units of the wavelength, so the wavenumber is
``2*pi`` unless a :class:`PhysicalConfig` says otherwise. Every type here is
immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate


class ParameterError(ValueError):
    """Invalid input parameter."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed (non-convergence, singular system, ...)."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PhysicalConfig:
    wavelength: float = 1.0

    def __post_init__(self):
        if not self.wavelength > 0:
            raise ParameterError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength


@dataclass(frozen=True)
class ArrayGeometry:
    """Planar sensor array in the (e1, e2) plane; e3 points into the medium."""

    positions: np.ndarray
    aperture: float
    range_scale: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) == 0:
            raise ParameterError("positions must be an (N, 3) array")
        if np.any(pos[:, 2] != 0.0):
            raise ParameterError("sensors must lie in the plane x3 = 0")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ParameterError("sensor positions must be distinct")
        object.__setattr__(self, "positions", _frozen(pos))

    @property
    def n_sensors(self) -> int:
        return len(self.positions)

    @property
    def cross_range_resolution(self) -> float:
        """lambda*L/a in wavelength units."""
        return self.range_scale / self.aperture

    @property
    def range_resolution(self) -> float:
        """lambda*L**2/a**2 in wavelength units."""
        return self.range_scale**2 / self.aperture**2


def build_square_array(side_count: int, spacing: float, L: float) -> ArrayGeometry:
    """Regular ``side_count x side_count`` array centred on the origin."""
    if int(side_count) != side_count or side_count < 2:
        raise ParameterError(f"side_count must be an integer >= 2, got {side_count}")
    if not spacing > 0:
        raise ParameterError(f"spacing must be positive, got {spacing}")
    side_count = int(side_count)
    c = (np.arange(side_count) - (side_count - 1) / 2.0) * spacing
    # e1 index varies slowest: sensor r = i*side_count + j sits at (c[i], c[j], 0)
    x1, x2 = np.meshgrid(c, c, indexing="ij")
    pos = np.column_stack([x1.ravel(), x2.ravel(), np.zeros(side_count**2)])
    return ArrayGeometry(pos, aperture=(side_count - 1) * spacing, range_scale=float(L))


@dataclass(frozen=True)
class SensingMatrix:
    """Selector of the measured field components, 1-based like e1, e2, e3."""

    components: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self):
        comps = tuple(int(c) for c in self.components)
        if not 1 <= len(comps) <= 3:
            raise ParameterError("sensing set must have 1 to 3 components")
        if any(c not in (1, 2, 3) for c in comps):
            raise ParameterError(f"components must be in {{1,2,3}}, got {comps}")
        if any(b <= a for a, b in zip(comps, comps[1:])):
            raise ParameterError("components must be strictly increasing")
        object.__setattr__(self, "components", comps)

    @classmethod
    def parse(cls, text: str | Iterable[int]) -> "SensingMatrix":
        """Accept ``"123"``, ``"1"``, ``[1, 2]`` ..."""
        if isinstance(text, str):
            return cls(tuple(int(ch) for ch in text.strip()))
        return cls(tuple(text))

    @property
    def size(self) -> int:
        return len(self.components)

    @property
    def index(self) -> list[int]:
        return [c - 1 for c in self.components]

    @property
    def matrix(self) -> np.ndarray:
        return np.eye(3)[:, self.index]

    @property
    def complete(self) -> bool:
        return self.size == 3

    @property
    def label(self) -> str:
        return "".join(str(c) for c in self.components)


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoidal inclusion with semiaxes scaled by the small size parameter."""

    semiaxes: tuple[float, float, float]
    contrast: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        ax = tuple(float(a) for a in self.semiaxes)
        if len(ax) != 3 or min(ax) <= 0:
            raise ParameterError(f"semiaxes must be three positive numbers, got {ax}")
        if not self.contrast > 0:
            raise ParameterError(f"relative permittivity must be positive, got {self.contrast}")
        R = np.asarray(self.rotation, dtype=float)
        if R.shape != (3, 3) or np.max(np.abs(R.T @ R - np.eye(3))) > 1e-12:
            raise ParameterError("rotation must be a 3x3 orthogonal matrix")
        if np.linalg.det(R) < 0:
            raise ParameterError("rotation must have determinant +1")
        object.__setattr__(self, "semiaxes", ax)
        object.__setattr__(self, "rotation", _frozen(R))

    @property
    def volume(self) -> float:
        return 4.0 * np.pi / 3.0 * float(np.prod(self.semiaxes))


@dataclass(frozen=True)
class Inclusion:
    """Point-like inclusion: centre and real symmetric reflectivity tensor."""

    center: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.center, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if y.shape != (3,):
            raise ParameterError("center must be a 3-vector")
        if rho.shape != (3, 3):
            raise ParameterError("rho must be 3x3")
        scale = max(np.max(np.abs(rho)), 1e-300)
        if np.max(np.abs(rho - rho.T)) > 1e-9 * scale:
            raise ParameterError("rho must be symmetric")
        object.__setattr__(self, "center", _frozen(y))
        object.__setattr__(self, "rho", _frozen(0.5 * (rho + rho.T)))

    @classmethod
    def from_ellipsoid(cls, center: Sequence[float], ellipsoid: Ellipsoid) -> "Inclusion":
        return cls(np.asarray(center, float), reflectivity_from_ellipsoid(ellipsoid))


@dataclass(frozen=True)
class SearchGrid:
    """Axis-aligned box sampled with a fixed step per axis.

    Points are enumerated with y3 outermost, then y2, then y1 fastest.
    """

    lower: tuple[float, float, float]
    upper: tuple[float, float, float]
    step: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        st = self.step
        st = tuple(float(v) for v in (st if np.ndim(st) else (st, st, st)))
        if len(lo) != 3 or len(hi) != 3 or len(st) != 3:
            raise ParameterError("grid bounds and step need three components")
        if min(st) <= 0:
            raise ParameterError("grid steps must be positive")
        if any(h < l for l, h in zip(lo, hi)):
            raise ParameterError("upper bounds must not be below lower bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "step", st)

    @classmethod
    def centered(cls, center: Sequence[float], half_widths: Sequence[float],
                 step: float = 0.5) -> "SearchGrid":
        c = np.asarray(center, float)
        w = np.asarray(half_widths, float)
        return cls(tuple(c - w), tuple(c + w), (step, step, step))

    def axis(self, i: int) -> np.ndarray:
        n = int(np.floor((self.upper[i] - self.lower[i]) / self.step[i] + 1e-9)) + 1
        return self.lower[i] + self.step[i] * np.arange(n)

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape (n3, n2, n1) matching the enumeration order."""
        return (len(self.axis(2)), len(self.axis(1)), len(self.axis(0)))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def points(self) -> np.ndarray:
        y3, y2, y1 = np.meshgrid(self.axis(2), self.axis(1), self.axis(0), indexing="ij")
        return np.column_stack([y1.ravel(), y2.ravel(), y3.ravel()])

    def nearest_index(self, y: Sequence[float]) -> int:
        idx = []
        for i in (2, 1, 0):
            ax = self.axis(i)
            idx.append(int(np.argmin(np.abs(ax - y[i]))))
        return int(np.ravel_multi_index(tuple(idx), self.shape))


def depolarization_factors(ellipsoid: Ellipsoid, rtol: float = 1e-10) -> np.ndarray:
    """Depolarization factors of an ellipsoid, one per semiaxis.

    D_q = (a1 a2 a3 / 2) * int_0^inf ds / ((s + a_q^2) sqrt(prod_l (s + a_l^2))),
    evaluated after the substitution s = tan(t)**2. They sum to one.
    """
    a2 = np.square(ellipsoid.semiaxes)
    pref = 0.5 * float(np.prod(ellipsoid.semiaxes))
    out = np.empty(3)
    for q in range(3):
        def f(t, q=q):
            c = np.cos(t)
            if c == 0.0:
                return 0.0
            s = np.tan(t) ** 2
            jac = 2.0 * np.tan(t) / c**2
            return jac / ((s + a2[q]) * np.sqrt(np.prod(s + a2)))

        val, err = integrate.quad(f, 0.0, np.pi / 2, epsabs=0.0, epsrel=rtol, limit=200)
        if not np.isfinite(val) or err > 1e3 * rtol * abs(val) + 1e-14:
            raise NumericalError(f"depolarization quadrature did not converge (q={q + 1})")
        out[q] = pref * val
    return out


def polarization_tensor(ellipsoid: Ellipsoid) -> np.ndarray:
    """Polarization tensor |Omega| R diag(1/(1 + (eps_r - 1) D_q)) R^T."""
    d = depolarization_factors(ellipsoid)
    denom = 1.0 + (ellipsoid.contrast - 1.0) * d
    if np.any(np.abs(denom) < 1e-14):
        raise NumericalError("degenerate contrast: 1 + (eps_r - 1) D_q vanishes")
    R = ellipsoid.rotation
    M = ellipsoid.volume * (R * (1.0 / denom)) @ R.T
    return 0.5 * (M + M.T)


def reflectivity_from_ellipsoid(ellipsoid: Ellipsoid) -> np.ndarray:
    """Reflectivity tensor with the cube of the size parameter factored out."""
    return (ellipsoid.contrast - 1.0) * polarization_tensor(ellipsoid)
