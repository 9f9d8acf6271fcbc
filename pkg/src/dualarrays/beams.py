"""Gaussian drive/detection modes and per-emitter drive amplitudes.

The mode is normalized so that the transverse integral of |f|^2 is
z-independent; the dipole moment and field amplitude never appear
separately — their product is folded into the scalar drive strength
omega0 (gamma units), and all output fields are reported in units of the
input-mode amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import TWO_PI, AtomSet
from .errors import ConfigurationError


@dataclass(frozen=True)
class GaussianBeam:
    waist: float
    wavelength: float = 1.0

    def __post_init__(self):
        if self.waist <= 0:
            raise ConfigurationError("waist must be positive")

    @property
    def k(self) -> float:
        return TWO_PI / self.wavelength

    @property
    def z_r(self) -> float:
        # Rayleigh range pi w^2 / lambda
        return np.pi * self.waist**2 / self.wavelength


@dataclass(frozen=True)
class PlaneWave:
    """Unit-amplitude plane wave propagating along +z."""
    wavelength: float = 1.0

    @property
    def k(self) -> float:
        return TWO_PI / self.wavelength


@dataclass(eq=False)
class DriveVector:
    omega: np.ndarray  # (N,) complex per-atom Rabi amplitudes
    omega0: float      # scalar drive strength (gamma units)


def mode_value(beam: GaussianBeam, point) -> complex | np.ndarray:
    """f(R) for a focused Gaussian with waist at z = 0.

    Accepts a single 3-vector or an (..., 3) array.  The wavefront
    curvature enters through C(z) = z/(z^2 + z_R^2), which is regular at
    the focus.
    """
    p = np.asarray(point, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r_sq = x * x + y * y
    k, z_r, w0 = beam.k, beam.z_r, beam.waist
    wz = w0 * np.sqrt(1.0 + (z / z_r) ** 2)
    curv = z / (z * z + z_r * z_r)
    phase = k * z + 0.5 * k * r_sq * curv - np.arctan(z / z_r)
    amp = np.sqrt(2.0 / np.pi) * (w0 / wz) * np.exp(-r_sq / wz**2)
    out = amp * np.exp(1j * phase)
    return complex(out) if out.ndim == 0 else out


def mode_fourier(beam: GaussianBeam, k_perp, z: float = 0.0) -> complex | np.ndarray:
    """Transverse Fourier transform g~(k_perp) e^{i k_z z} in the paraxial
    form k_z ~ k (1 - k_perp^2 / 2k^2)."""
    kp = np.asarray(k_perp, dtype=float)
    kp_sq = np.sum(kp * kp, axis=-1) if kp.shape[-1:] == (2,) else kp * kp
    k, w0 = beam.k, beam.waist
    out = (np.sqrt(2.0 * np.pi) * w0**2 * np.exp(-kp_sq * w0**2 / 4.0)
           * np.exp(1j * k * (1.0 - kp_sq / (2.0 * k * k)) * z))
    return complex(out) if np.ndim(out) == 0 else out


def paraxial_tail_fraction(beam: GaussianBeam, epsilon: float) -> float:
    """Fraction of the mode's transverse momentum weight beyond the
    paraxial-validity cutoff k_eps = sqrt(2 eps) k; closed form of the
    radial Gaussian integral."""
    if not 0.0 < epsilon < 0.5:
        raise ConfigurationError("epsilon must lie in (0, 1/2)")
    k_eps_sq = 2.0 * epsilon * beam.k**2
    return float(np.exp(-k_eps_sq * beam.waist**2 / 2.0))


def mode_norm(beam: GaussianBeam, z: float = 0.0) -> float:
    """eta = integral of |f|^2 over a transverse plane, numerically.

    Kept numerical on purpose: tests assert the value instead of the code
    hard-coding it.
    """
    from scipy.integrate import quad

    w0, z_r = beam.waist, beam.z_r
    wz = w0 * np.sqrt(1.0 + (z / z_r) ** 2)

    def prof(r):
        return ((2.0 / np.pi) * (w0 / wz) ** 2
                * np.exp(-2.0 * r * r / wz**2) * 2.0 * np.pi * r)

    val, err = quad(prof, 0.0, 10.0 * wz, epsabs=1e-13, epsrel=1e-13)
    return float(val)


def drive_vector(atoms: AtomSet, mode, omega0: float) -> DriveVector:
    """Per-atom Rabi amplitudes Omega_n = omega0 * f(R_n); plane waves give
    Omega_n = omega0 * e^{i k z_n}."""
    if omega0 < 0:
        raise ConfigurationError("omega0 must be >= 0")
    if isinstance(mode, PlaneWave):
        amp = np.exp(1j * mode.k * atoms.positions[:, 2])
    else:
        amp = mode_value(mode, atoms.positions)
    return DriveVector(omega=omega0 * np.asarray(amp, dtype=complex), omega0=omega0)
