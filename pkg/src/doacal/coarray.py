"""Coarray signal construction: covariance vectorization, the coarray
manifold, its Gram (projection) matrix, and the coarray beamformer.

Stacking the columns of an M x M covariance gives a length-M^2 signal
that behaves like a measurement on a virtual array whose manifold
columns are vec(a a^H).  The coarray beamformer on that signal equals
the element-space beamformer exactly, which is enforced as a test
property.  The spectrum together with the Gram matrix P = A~^H A~ casts
direction finding as a linear inverse problem on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .estimators import CovarianceMatrix, SpatialSpectrum
from .simulate import ArrayGeometry, DirectionGrid, manifold


@dataclass(frozen=True)
class CoarraySignal:
    """Column-stacked covariance, length M^2, with its source reference."""

    y: np.ndarray
    num_elements: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.complex128)
        object.__setattr__(self, "y", y)
        if y.shape != (self.num_elements ** 2,):
            raise ValueError("coarray signal must have length M^2")


@dataclass(frozen=True)
class ProjectionMatrix:
    """Gram matrix of the coarray manifold, real symmetric PSD (L, L)."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        object.__setattr__(self, "p", p)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError("projection matrix must be square")
        scale = max(np.max(np.abs(p)), 1.0)
        if np.max(np.abs(p - p.T)) > 1e-10 * scale:
            raise ValueError("projection matrix is not symmetric")


def vectorize_covariance(cov: CovarianceMatrix) -> CoarraySignal:
    """Stack covariance columns: y = [r_1; ...; r_M] (column-major)."""
    m = cov.r.shape[0]
    return CoarraySignal(cov.r.reshape(-1, order="F"), m)


def devectorize(signal: CoarraySignal) -> np.ndarray:
    """Inverse of ``vectorize_covariance``."""
    m = signal.num_elements
    return signal.y.reshape((m, m), order="F")


def coarray_manifold(grid: DirectionGrid, geometry: ArrayGeometry) -> np.ndarray:
    """Virtual-array steering matrix (M^2, L).

    Column l is vec(a_l a_l^H) under the same column-major stacking as
    ``vectorize_covariance``; equivalently conj(a_l) kron a_l.
    """
    a = manifold(grid, geometry)
    # (M, M, L) outer products, stacked column-major per direction.
    outer = a[:, None, :] * a.conj()[None, :, :]
    m, _, l = outer.shape
    return outer.reshape(m * m, l, order="F")


def projection(coarray_manifold_matrix: np.ndarray) -> ProjectionMatrix:
    """Gram matrix P = A~^H A~ of the coarray manifold.

    The entries are |a_i^H a_j|^2, real and nonnegative; diagonal
    entries all equal M^2.  The small imaginary rounding residual is
    asserted and dropped.
    """
    at = coarray_manifold_matrix
    p = at.conj().T @ at
    scale = max(np.max(np.abs(p)), 1.0)
    if np.max(np.abs(p.imag)) > 1e-10 * scale:
        raise ValueError("coarray Gram matrix has a non-negligible imaginary part")
    p = p.real
    return ProjectionMatrix(0.5 * (p + p.T))


@lru_cache(maxsize=32)
def _cached_projection(angle_key: tuple, m: int, d: float, f0: float) -> ProjectionMatrix:
    grid = DirectionGrid(np.array(angle_key))
    geom = ArrayGeometry(m, d, f0)
    return projection(coarray_manifold(grid, geom))


def cached_projection(grid: DirectionGrid, geometry: ArrayGeometry) -> ProjectionMatrix:
    """Projection matrix memoized per (grid, geometry).

    The returned matrix is shared; treat it as immutable.
    """
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return _cached_projection(tuple(grid.angles.tolist()),
                                  geometry.num_elements, geometry.spacing,
                                  geometry.carrier)


def coarray_dbf(signal: CoarraySignal, coarray_manifold_matrix: np.ndarray,
                grid: DirectionGrid) -> SpatialSpectrum:
    """Coarray beamformer: real part of A~^H y.

    For a Hermitian source covariance this equals the element-space
    beamformer value a^H R a at every grid angle; the imaginary residual
    is asserted small and dropped.
    """
    at = coarray_manifold_matrix
    if at.shape[0] != signal.y.shape[0]:
        raise ValueError("coarray manifold and signal dimensions differ")
    vals = at.conj().T @ signal.y
    scale = max(np.max(np.abs(vals)), 1.0)
    if np.max(np.abs(vals.imag)) > 1e-9 * scale:
        raise ValueError("coarray spectrum has a non-negligible imaginary part")
    return SpatialSpectrum(vals.real, grid)


def hpbw(spectrum: SpatialSpectrum) -> float:
    """Half-power (-3 dB) width of the main lobe around the global max.

    Walks outward from the argmax to the first crossings below half the
    peak value and interpolates linearly between grid points.  Raises if
    either crossing is not found within the grid.
    """
    v = spectrum.values
    ang = spectrum.grid.angles
    peak_idx = int(np.argmax(v))
    half = v[peak_idx] / 2.0

    left = peak_idx
    while left > 0 and v[left] >= half:
        left -= 1
    if v[left] >= half:
        raise ValueError("no half-power crossing on the left side of the lobe")
    t = (half - v[left]) / (v[left + 1] - v[left])
    theta_left = ang[left] + t * (ang[left + 1] - ang[left])

    right = peak_idx
    n = v.size
    while right < n - 1 and v[right] >= half:
        right += 1
    if v[right] >= half:
        raise ValueError("no half-power crossing on the right side of the lobe")
    t = (half - v[right - 1]) / (v[right] - v[right - 1])
    theta_right = ang[right - 1] + t * (ang[right] - ang[right - 1])

    return float(theta_right - theta_left)
