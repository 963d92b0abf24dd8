"""Dyadic Green's tensor and noiseless response-matrix synthesis."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core_model import (
    ArrayGeometry,
    Inclusion,
    NumericalError,
    ParameterError,
    SensingMatrix,
)

TWO_PI = 2.0 * np.pi


class SingularityError(NumericalError):
    """Green's tensor requested at coincident points."""


def greens_tensor(x, z, k: float = TWO_PI, far_field: bool = False) -> np.ndarray:
    """Dyadic Green's tensor (I + grad grad^T / k^2) exp(ikr) / (4 pi r).

    ``x`` and ``z`` broadcast against each other over leading axes; the result
    has shape ``broadcast(x, z).shape[:-1] + (3, 3)``. With ``far_field`` the
    near-field terms in 1/(kr) are dropped, leaving the transverse projector.
    """
    d = np.asarray(x, float) - np.asarray(z, float)
    r = np.linalg.norm(d, axis=-1)
    if np.any(r == 0.0):
        raise SingularityError("Green's tensor is singular at coincident points")
    rhat = d / r[..., None]
    kr = k * r
    if far_field:
        a = np.ones_like(kr, dtype=complex)
        b = a
    else:
        a = 1.0 + 1j / kr - 1.0 / kr**2
        b = 1.0 + 3j / kr - 3.0 / kr**2
    g = np.exp(1j * kr) / (4.0 * np.pi * r)
    outer = rhat[..., :, None] * rhat[..., None, :]
    return (g * a)[..., None, None] * np.eye(3) - (g * b)[..., None, None] * outer


def greens_columns(geometry: ArrayGeometry, points, sensing: SensingMatrix | None = None,
                   k: float = TWO_PI, far_field: bool = False) -> np.ndarray:
    """Stacked Green's matrices for many search points, shape (P, |S| N, 3)."""
    sensing = sensing or SensingMatrix()
    ys = np.atleast_2d(np.asarray(points, float))
    G = greens_tensor(geometry.positions[None, :, :], ys[:, None, :], k, far_field)
    G = G[:, :, sensing.index, :]
    return G.reshape(len(ys), -1, 3)


def greens_column(geometry: ArrayGeometry, y, sensing: SensingMatrix | None = None,
                  k: float = TWO_PI, far_field: bool = False) -> np.ndarray:
    """|S| N x 3 matrix whose r-th block is S^T G(x_r, y)."""
    return greens_columns(geometry, np.asarray(y, float)[None], sensing, k, far_field)[0]


def thin_svd(G: np.ndarray):
    """Thin SVD ``G = H diag(s) V^H`` with singular values descending.

    Works on a single matrix or a stack of them.
    """
    H, s, Vh = np.linalg.svd(G, full_matrices=False)
    return H, s, np.conj(np.swapaxes(Vh, -1, -2))


@dataclass(frozen=True)
class ResponseMatrix:
    data: np.ndarray
    sensing: SensingMatrix = SensingMatrix()
    noisy: bool = False

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ParameterError("response matrix must be square")
        if a.shape[0] % self.sensing.size:
            raise ParameterError("matrix size is not a multiple of the sensing set size")

    @property
    def M(self) -> int:
        return self.data.shape[0]

    @property
    def complete(self) -> bool:
        return self.sensing.complete

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.data, compute_uv=False)


def forward_response(geometry: ArrayGeometry, inclusions: Sequence[Inclusion],
                     sensing: SensingMatrix | None = None, k: float = TWO_PI,
                     far_field: bool = False) -> ResponseMatrix:
    """Single-scattering response matrix sum_p G(y_p) rho_p G(y_p)^T."""
    sensing = sensing or SensingMatrix()
    if len(inclusions) == 0:
        raise ParameterError("at least one inclusion is required")
    centers = np.array([inc.center for inc in inclusions])
    if len(np.unique(centers, axis=0)) != len(centers):
        raise ParameterError("inclusion centers must be distinct")
    if np.any(centers[:, 2] == 0.0):
        raise ParameterError("inclusions must lie off the array plane")
    Gs = greens_columns(geometry, centers, sensing, k, far_field)
    D = np.zeros((Gs.shape[1], Gs.shape[1]), dtype=complex)
    for G, inc in zip(Gs, inclusions):
        D += (G @ inc.rho) @ G.T
    return ResponseMatrix(D, sensing)


def conditioning_diagnostics(geometry: ArrayGeometry, y, sensing: SensingMatrix | None = None,
                             k: float = TWO_PI, far_field: bool = False) -> np.ndarray:
    """Singular values (descending) of the Green's matrix at ``y``."""
    return np.linalg.svd(greens_column(geometry, y, sensing, k, far_field), compute_uv=False)


# -- serialization ---------------------------------------------------------

_MAGIC = b"EMRM"
_VERSION = 1
_HEADER = struct.Struct("<4sHHQ3sB")  # magic, version, flags, M, sensing label, n_sensing


def save_response(path, response: ResponseMatrix) -> None:
    """Binary container: fixed header then row-major little-endian complex128."""
    label = response.sensing.label.encode().ljust(3, b"\0")
    flags = int(response.noisy)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, flags, response.M, label, response.sensing.size))
        fh.write(np.ascontiguousarray(response.data, dtype="<c16").tobytes())


def load_response(path) -> ResponseMatrix:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParameterError(f"{path}: truncated header")
    magic, version, flags, M, label, n = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ParameterError(f"{path}: not a response-matrix file")
    body = raw[_HEADER.size:]
    if len(body) != 16 * M * M:
        raise ParameterError(f"{path}: expected {M}x{M} complex entries")
    data = np.frombuffer(body, dtype="<c16").reshape(M, M).astype(complex)
    sensing = SensingMatrix.parse(label[:n].decode())
    return ResponseMatrix(data, sensing, noisy=bool(flags & 1))


def write_response_csv(path, response: ResponseMatrix) -> None:
    """One CSV row per matrix row, columns ``re_j, im_j`` for each column j."""
    M = response.M
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{p}_{j}" for j in range(M) for p in ("re", "im")])
        for row in response.data:
            w.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])


def read_response_csv(path, sensing: SensingMatrix | None = None) -> ResponseMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    a = np.array(rows, dtype=float)
    return ResponseMatrix(a[:, 0::2] + 1j * a[:, 1::2], sensing or SensingMatrix())
