"""Classical grid-scan direction estimators: DBF and MUSIC.

Both consume the sample covariance of a CFR set and score every angle
on a direction grid; the estimate is the grid argmax.  Spectra are
reported in linear power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import ArrayGeometry, CfrSet, DirectionGrid, manifold

# Floor for the MUSIC denominator: keeps the spectrum finite when a
# steering vector is numerically orthogonal to the noise subspace.
_MUSIC_DENOM_FLOOR = 1e-30


@dataclass(frozen=True)
class CovarianceMatrix:
    """Hermitian (M, M) sample covariance with its snapshot count."""

    r: np.ndarray
    num_snapshots: int

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.complex128)
        object.__setattr__(self, "r", r)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("covariance must be a square matrix")
        scale = max(np.max(np.abs(r)), 1.0)
        if np.max(np.abs(r - r.conj().T)) > 1e-10 * scale:
            raise ValueError("covariance is not Hermitian")


@dataclass(frozen=True)
class SpatialSpectrum:
    """Real-valued score per grid angle."""

    values: np.ndarray
    grid: DirectionGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.shape != (len(self.grid),):
            raise ValueError("spectrum length does not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrum contains non-finite values")

    def normalized(self) -> "SpatialSpectrum":
        """Spectrum scaled to unit maximum (no-op on an all-zero input)."""
        peak = np.max(self.values)
        if peak <= 0:
            return self
        return SpatialSpectrum(self.values / peak, self.grid)


def sample_covariance(cfr: CfrSet) -> CovarianceMatrix:
    """Sum of per-subcarrier outer products h(k) h(k)^H (no 1/K).

    The unnormalized sum matches the estimators' convention; argmax
    based estimates are unaffected by the constant factor.
    """
    h = cfr.h
    if h.shape[1] < 1:
        raise ValueError("empty CFR set")
    r = h @ h.conj().T
    r = 0.5 * (r + r.conj().T)
    return CovarianceMatrix(r, num_snapshots=h.shape[1])


def dbf_spectrum(cov: CovarianceMatrix, grid: DirectionGrid,
                 geometry: ArrayGeometry) -> SpatialSpectrum:
    """Beamformer scan: value_l = a(theta_l)^H R a(theta_l)."""
    a = manifold(grid, geometry)
    vals = np.einsum("ml,mn,nl->l", a.conj(), cov.r, a)
    scale = max(np.max(np.abs(vals)), 1.0)
    if np.max(np.abs(vals.imag)) > 1e-9 * scale:
        raise ValueError("DBF spectrum has a non-negligible imaginary part")
    return SpatialSpectrum(vals.real, grid)


def music_spectrum(cov: CovarianceMatrix, num_sources: int,
                   grid: DirectionGrid, geometry: ArrayGeometry) -> SpatialSpectrum:
    """Noise-subspace scan: 1 / ||U_N^H a(theta)||^2.

    The noise subspace spans the M - num_sources eigenvectors with the
    smallest eigenvalues of the Hermitian eigendecomposition (ascending
    order, deterministic).
    """
    m = cov.r.shape[0]
    if not 1 <= num_sources < m:
        raise ValueError("num_sources must satisfy 1 <= n < M")
    try:
        _, vecs = np.linalg.eigh(cov.r)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed on covariance: {exc}") from exc
    noise = vecs[:, : m - num_sources]
    a = manifold(grid, geometry)
    proj = noise.conj().T @ a
    denom = np.sum(np.abs(proj) ** 2, axis=0)
    vals = 1.0 / np.maximum(denom, _MUSIC_DENOM_FLOOR)
    return SpatialSpectrum(vals, grid)


def pick_aoa(spectrum: SpatialSpectrum) -> float:
    """Grid angle of the global maximum; ties go to the smaller angle."""
    if spectrum.values.size == 0:
        raise ValueError("empty spectrum")
    if np.any(np.isnan(spectrum.values)):
        raise ValueError("spectrum contains NaN")
    return float(spectrum.grid.angles[int(np.argmax(spectrum.values))])
