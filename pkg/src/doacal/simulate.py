"""Synthetic uplink CSI generation for a uniform linear array.

Produces channel frequency response (CFR) snapshots for single- or
multi-source scenes, optionally distorted by per-antenna hardware
impairments.  Two impairment families are supported:

* the classical coupling / gain-phase / position-error model, and
* angular-dependent complex gain tables indexed by (antenna,
  subcarrier, direction), which subsume the classical model.

All generators are pure functions of their inputs and a seed, so
datasets can be regenerated bit-exactly and generation parallelises by
partitioning the seed space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299792458.0


class SpatialAliasingWarning(UserWarning):
    """Element spacing exceeds half a wavelength; grating lobes possible."""


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: element count, spacing (m), carrier (Hz)."""

    num_elements: int
    spacing: float
    carrier: float

    def __post_init__(self):
        if self.num_elements < 2:
            raise ValueError("need at least two array elements")
        if self.spacing <= 0 or self.carrier <= 0:
            raise ValueError("spacing and carrier must be positive")
        if self.spacing > SPEED_OF_LIGHT / (2.0 * self.carrier):
            warnings.warn(
                "element spacing exceeds half a wavelength; spatial aliasing "
                "(grating lobes) possible within a wide field of view",
                SpatialAliasingWarning,
                stacklevel=2,
            )

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier

    @classmethod
    def half_wavelength(cls, num_elements: int, carrier: float) -> "ArrayGeometry":
        """Standard d = lambda/2 array at the given carrier."""
        return cls(num_elements, SPEED_OF_LIGHT / (2.0 * carrier), carrier)


@dataclass(frozen=True)
class DirectionGrid:
    """Uniform discrete direction set, degrees, strictly inside (-90, 90)."""

    angles: np.ndarray

    def __post_init__(self):
        ang = np.asarray(self.angles, dtype=np.float64)
        object.__setattr__(self, "angles", ang)
        if ang.ndim != 1 or ang.size < 1:
            raise ValueError("grid must be a 1-D list of angles")
        if ang.size > 1:
            steps = np.diff(ang)
            if np.any(steps <= 0):
                raise ValueError("grid angles must be strictly increasing")
            if np.max(np.abs(steps - steps[0])) > 1e-9:
                raise ValueError("grid spacing must be uniform within 1e-9 deg")
        if ang[0] <= -90.0 or ang[-1] >= 90.0:
            raise ValueError("grid must lie strictly inside (-90, 90) degrees")

    @classmethod
    def from_spacing(cls, start: float, stop: float, step: float) -> "DirectionGrid":
        n = int(round((stop - start) / step)) + 1
        return cls(start + step * np.arange(n))

    def __len__(self) -> int:
        return self.angles.size

    @property
    def spacing(self) -> float:
        if self.angles.size < 2:
            return 0.0
        return float(self.angles[1] - self.angles[0])

    def index_of(self, angle_deg: float, tol: float = 1e-9) -> int:
        """Index of an on-grid angle; raises if off grid by more than tol."""
        idx = int(np.argmin(np.abs(self.angles - angle_deg)))
        if abs(self.angles[idx] - angle_deg) > tol:
            raise ValueError(f"angle {angle_deg} deg is not on the grid")
        return idx

    def nearest_index(self, angle_deg: float) -> int:
        """Index of the closest grid angle (snapping, error <= spacing/2)."""
        return int(np.argmin(np.abs(self.angles - angle_deg)))


@dataclass(frozen=True)
class WaveformConfig:
    """Sounding-signal layout: subcarrier count/spacing and time slots."""

    num_subcarriers: int
    subcarrier_spacing: float
    snapshots: int = 1

    def __post_init__(self):
        if self.num_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier spacing must be positive")
        if self.snapshots < 1:
            raise ValueError("snapshots must be positive")

    def check_narrowband(self, geometry: ArrayGeometry) -> None:
        """Warn when the occupied bandwidth is not small vs the carrier."""
        ratio = self.num_subcarriers * self.subcarrier_spacing / geometry.carrier
        if ratio >= 0.1:
            warnings.warn(
                f"bandwidth/carrier ratio {ratio:.3f} violates the narrowband "
                "assumption of the signal model",
                UserWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class Source:
    """One emitter: direction (deg), linear power, range (m).

    The range is carried for scene bookkeeping only; under the
    narrowband model it does not affect the generated CFR.
    """

    aoa: float
    power: float = 1.0
    range_m: float = 10.0

    def __post_init__(self):
        if self.power <= 0:
            raise ValueError("source power must be positive")


@dataclass(frozen=True)
class SourceScene:
    """A set of sources plus the per-entry SNR in dB (None = noiseless)."""

    sources: tuple
    snr_db: float | None = None

    def __post_init__(self):
        srcs = tuple(self.sources)
        object.__setattr__(self, "sources", srcs)
        if len(srcs) == 0:
            raise ValueError("scene needs at least one source")

    @classmethod
    def single(cls, aoa: float, snr_db: float | None = None,
               power: float = 1.0) -> "SourceScene":
        return cls((Source(aoa, power),), snr_db)


@dataclass(frozen=True)
class ImpairmentProfile:
    """Per-(antenna, subcarrier, direction) complex gain table.

    ``gains`` has shape (M, K, L) aligned with ``grid``.  Profiles are
    phase-only by default: every entry must have unit magnitude within
    1e-9 unless ``allow_amplitude_errors`` is set.
    """

    gains: np.ndarray
    grid: DirectionGrid
    description: str = ""
    allow_amplitude_errors: bool = False

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.complex128)
        object.__setattr__(self, "gains", g)
        if g.ndim != 3:
            raise ValueError("gains must have shape (M, K, L)")
        if g.shape[2] != len(self.grid):
            raise ValueError("gain table length does not match the grid")
        if not self.allow_amplitude_errors:
            if np.max(np.abs(np.abs(g) - 1.0)) > 1e-9:
                raise ValueError("phase-only profile has non-unit magnitudes")

    @property
    def shape(self) -> tuple:
        return self.gains.shape

    @classmethod
    def identity(cls, num_elements: int, num_subcarriers: int,
                 grid: DirectionGrid) -> "ImpairmentProfile":
        g = np.ones((num_elements, num_subcarriers, len(grid)), dtype=np.complex128)
        return cls(g, grid, description="identity")


@dataclass(frozen=True)
class ClassicalImpairment:
    """Coupling matrix C (Toeplitz, unit diagonal), per-antenna complex
    gains, and a common element-position offset in metres."""

    coupling: np.ndarray
    gain_phase: np.ndarray
    position_error: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coupling, dtype=np.complex128)
        g = np.asarray(self.gain_phase, dtype=np.complex128)
        object.__setattr__(self, "coupling", c)
        object.__setattr__(self, "gain_phase", g)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("coupling matrix must be square")
        m = c.shape[0]
        if g.shape != (m,):
            raise ValueError("gain_phase must be a length-M vector")
        for k in range(-m + 1, m):
            diag = np.diagonal(c, offset=k)
            if np.max(np.abs(diag - diag[0])) > 1e-12:
                raise ValueError("coupling matrix is not Toeplitz")
        if np.max(np.abs(np.diagonal(c) - 1.0)) > 1e-12:
            raise ValueError("coupling matrix diagonal must be 1")

    @classmethod
    def identity(cls, num_elements: int) -> "ClassicalImpairment":
        return cls(np.eye(num_elements), np.ones(num_elements), 0.0)


@dataclass(frozen=True)
class CfrSet:
    """One channel-frequency-response realization: complex (M, K) matrix."""

    h: np.ndarray
    geometry: ArrayGeometry
    waveform: WaveformConfig
    seed: int

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.complex128)
        object.__setattr__(self, "h", h)
        if h.ndim != 2:
            raise ValueError("CFR must be an (M, K) matrix")
        if h.shape != (self.geometry.num_elements, self.waveform.num_subcarriers):
            raise ValueError("CFR dimensions do not match geometry/waveform")
        if not (np.all(np.isfinite(h.real)) and np.all(np.isfinite(h.imag))):
            raise ValueError("CFR contains non-finite entries")


def steering_vector(theta_deg: float, geometry: ArrayGeometry) -> np.ndarray:
    """Array response to a plane wave from ``theta_deg``.

    Element m (0-based) equals exp(+j 2 pi f0 m d sin(theta) / c); the
    first element is the phase reference and is always 1.
    """
    if not -90.0 < theta_deg < 90.0:
        raise ValueError("direction must lie strictly inside (-90, 90) degrees")
    m = np.arange(geometry.num_elements)
    phase = (2.0 * np.pi * geometry.carrier * geometry.spacing
             * np.sin(np.deg2rad(theta_deg)) / SPEED_OF_LIGHT)
    return np.exp(1j * phase * m)


def manifold(grid: DirectionGrid, geometry: ArrayGeometry) -> np.ndarray:
    """Steering matrix (M, L): column l is the response to grid angle l."""
    m = np.arange(geometry.num_elements)[:, None]
    phase = (2.0 * np.pi * geometry.carrier * geometry.spacing
             * np.sin(np.deg2rad(grid.angles))[None, :] / SPEED_OF_LIGHT)
    return np.exp(1j * phase * m)


def _draw_symbols(rng: np.random.Generator, num_sources: int, k: int,
                  powers: np.ndarray) -> np.ndarray:
    """Unit-power circular complex symbols scaled by per-source amplitude."""
    z = rng.standard_normal((num_sources, k)) + 1j * rng.standard_normal((num_sources, k))
    return np.sqrt(powers)[:, None] * z / np.sqrt(2.0)


def _draw_noise(rng: np.random.Generator, shape: tuple, variance: float) -> np.ndarray:
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return np.sqrt(variance / 2.0) * z


def _noise_variance(scene: SourceScene) -> float | None:
    """Per-entry complex noise variance for the scene SNR.

    The aggregate signal power per (antenna, subcarrier) entry is the
    sum of source powers because steering entries and phase-only gains
    have unit magnitude and symbols are independent.
    """
    if scene.snr_db is None or np.isinf(scene.snr_db):
        return None
    total = sum(s.power for s in scene.sources)
    return total / (10.0 ** (scene.snr_db / 10.0))


def generate_cfr(scene: SourceScene, geometry: ArrayGeometry,
                 waveform: WaveformConfig,
                 profile: ImpairmentProfile | None = None,
                 seed: int = 0) -> CfrSet:
    """Generate one CFR realization h(k), k = 1..K.

    h(k) = sum_l gamma_k(theta_l) * a(theta_l) s_l(k) + n(k).  Without a
    profile the gains are identically one (ideal model).  With a profile
    every source direction must sit on the profile's grid, because the
    gain table is indexed by grid angle.  Symbols are drawn before
    noise, so a noiseless run with the same seed reproduces the signal
    part bit-exactly.
    """
    waveform.check_narrowband(geometry)
    m, k = geometry.num_elements, waveform.num_subcarriers
    if profile is not None and profile.shape[:2] != (m, k):
        raise ValueError("profile dimensions do not match geometry/waveform")

    rng = np.random.default_rng(seed)
    powers = np.array([s.power for s in scene.sources])
    symbols = _draw_symbols(rng, len(scene.sources), k, powers)

    h = np.zeros((m, k), dtype=np.complex128)
    for i, src in enumerate(scene.sources):
        a = steering_vector(src.aoa, geometry)
        if profile is None:
            gain = np.ones((m, k))
        else:
            gain = profile.gains[:, :, profile.grid.index_of(src.aoa)]
        h += gain * a[:, None] * symbols[i][None, :]

    var = _noise_variance(scene)
    if var is not None:
        h += _draw_noise(rng, (m, k), var)
    return CfrSet(h, geometry, waveform, seed)


def apply_classical_impairment(scene: SourceScene, geometry: ArrayGeometry,
                               waveform: WaveformConfig,
                               impairment: ClassicalImpairment,
                               seed: int = 0) -> CfrSet:
    """Generate a CFR under the coupling/gain-phase/position-error model.

    The manifold is built with spacing d + position_error, premultiplied
    by the diagonal gains and then the coupling matrix, before noise is
    added.  With identity impairments this reproduces ``generate_cfr``
    bit-exactly for the same seed.
    """
    m, k = geometry.num_elements, waveform.num_subcarriers
    if impairment.coupling.shape[0] != m:
        raise ValueError("impairment dimensions do not match the array")

    perturbed = ArrayGeometry(m, geometry.spacing + impairment.position_error,
                              geometry.carrier)
    rng = np.random.default_rng(seed)
    powers = np.array([s.power for s in scene.sources])
    symbols = _draw_symbols(rng, len(scene.sources), k, powers)

    h = np.zeros((m, k), dtype=np.complex128)
    for i, src in enumerate(scene.sources):
        a = steering_vector(src.aoa, perturbed)
        h += a[:, None] * symbols[i][None, :]
    h = impairment.coupling @ (impairment.gain_phase[:, None] * h)

    var = _noise_variance(scene)
    if var is not None:
        h += _draw_noise(rng, (m, k), var)
    return CfrSet(h, geometry, waveform, seed)


def scale_profile(profile: ImpairmentProfile, rho: float) -> ImpairmentProfile:
    """Scale the impairment severity by rho in [0, 1].

    Phase errors scale linearly (principal branch); magnitudes
    interpolate geometrically, so rho = 0 yields the identity profile
    and rho = 1 returns the input unchanged.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    mag = np.abs(profile.gains) ** rho
    ph = rho * np.angle(profile.gains)
    return ImpairmentProfile(mag * np.exp(1j * ph), profile.grid,
                             description=f"{profile.description} (rho={rho})",
                             allow_amplitude_errors=profile.allow_amplitude_errors)


@dataclass(frozen=True)
class ProfileSynthParams:
    """Controls for synthetic angular-dependent phase-error curves.

    Inside ``inner_bounds`` the per-antenna phase error stays below
    ``max_inner_error_deg``; outside, it grows with an approximately
    constant per-antenna slope of magnitude ``outer_slope``
    (degrees of error per degree of direction).  ``smoothness`` in
    [0, 1] controls how similar the curves are across subcarriers
    (1 = identical on all subcarriers).
    """

    max_inner_error_deg: float = 20.0
    outer_slope: float = 1.0
    inner_bounds: tuple = (-30.0, 30.0)
    smoothness: float = 0.9
    num_harmonics: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.max_inner_error_deg < 0:
            raise ValueError("max_inner_error_deg must be nonnegative")
        if not 0.0 <= self.smoothness <= 1.0:
            raise ValueError("smoothness must lie in [0, 1]")

    def slope_bound(self) -> float:
        """Loose bound on |d psi / d theta| anywhere on the grid, deg/deg."""
        lo, hi = self.inner_bounds
        inner = (self.max_inner_error_deg * np.pi * self.num_harmonics
                 / max(hi - lo, 1e-9))
        return 1.2 * self.outer_slope + 2.0 * inner


def _harmonic_curve(rng: np.random.Generator, u: np.ndarray, q: int,
                    max_abs: float) -> np.ndarray:
    """Smooth random curve on u in [0, 1] with peak magnitude max_abs."""
    coeff = rng.standard_normal(q)
    phase = rng.uniform(0.0, 2.0 * np.pi, q)
    curve = np.zeros_like(u)
    for i in range(q):
        curve += coeff[i] * np.cos((i + 1) * np.pi * u + phase[i])
    peak = np.max(np.abs(curve))
    if peak == 0.0 or max_abs == 0.0:
        return np.zeros_like(u)
    return curve * (max_abs / peak)


def synth_profile(geometry: ArrayGeometry, grid: DirectionGrid,
                  waveform: WaveformConfig,
                  params: ProfileSynthParams) -> ImpairmentProfile:
    """Draw a random angular-dependent phase-error profile.

    Antenna 0 is the phase reference (zero error).  Each other antenna
    gets a smooth bounded curve inside ``inner_bounds`` that continues
    linearly outside.  Per-subcarrier deviations share the structure and
    shrink as ``smoothness`` approaches 1.  Deterministic in
    ``params.seed``.
    """
    m, k, l = geometry.num_elements, waveform.num_subcarriers, len(grid)
    rng = np.random.default_rng(params.seed)
    lo, hi = params.inner_bounds
    theta = grid.angles
    inner = np.clip(theta, lo, hi)
    u = (inner - lo) / max(hi - lo, 1e-9)
    below = np.minimum(theta - lo, 0.0)   # negative extent past the left bound
    above = np.maximum(theta - hi, 0.0)   # positive extent past the right bound

    psi = np.zeros((m, k, l))
    base_amp = params.smoothness * params.max_inner_error_deg
    dev_amp = (1.0 - params.smoothness) * params.max_inner_error_deg
    for ant in range(1, m):
        base = _harmonic_curve(rng, u, params.num_harmonics, base_amp)
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        slope = sign * params.outer_slope * (1.0 + 0.2 * rng.uniform(-1.0, 1.0))
        for sub in range(k):
            dev = _harmonic_curve(rng, u, params.num_harmonics, dev_amp)
            psi[ant, sub] = base + dev + slope * (above + below)

    gains = np.exp(1j * np.deg2rad(psi))
    return ImpairmentProfile(gains, grid, description="synthetic phase errors")


def phase_error_curves(profile: ImpairmentProfile) -> np.ndarray:
    """Phase errors in degrees, shape (M, K, L), antenna 0 as reference.

    The reference row is identically zero; other rows carry the phase of
    each gain relative to antenna 0 at the same (subcarrier, direction).
    """
    ph = np.angle(profile.gains)
    return np.rad2deg(ph - ph[0:1, :, :])
