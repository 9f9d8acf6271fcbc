"""Units, physical parameters and lattice construction.

Conventions used throughout the package: lengths in units of the wavelength
(lambda = 1 so k = 2*pi), rates and detunings in units of the single-emitter
amplitude decay rate gamma.  Excited-state population therefore decays as
exp(-2*gamma*t).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError, NumericalError

TWO_PI = 2.0 * np.pi

# fixed circular polarization, unit norm
E_PLUS = np.array([1.0, 1.0j, 0.0]) / np.sqrt(2.0)


@dataclass(frozen=True)
class PhysicalParams:
    gamma: float = 1.0       # amplitude decay rate (rate unit)
    wavelength: float = 1.0  # length unit

    def __post_init__(self):
        if self.gamma <= 0 or self.wavelength <= 0:
            raise ConfigurationError("gamma and wavelength must be positive")

    @property
    def k(self) -> float:
        return TWO_PI / self.wavelength


@dataclass(frozen=True)
class LatticeSpec:
    nx: int
    ny: int
    a: float                 # lattice spacing (wavelength units)
    L: float = 0.0           # layer separation along z
    geometry: str = "flat"   # "flat" | "curved"

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError("nx, ny must be >= 1")
        if self.a <= 0:
            raise ConfigurationError("lattice spacing must be positive")
        if self.L < 0:
            raise ConfigurationError("layer separation must be >= 0")
        if self.geometry not in ("flat", "curved"):
            raise ConfigurationError(f"unknown geometry {self.geometry!r}")


@dataclass(eq=False)
class AtomSet:
    positions: np.ndarray  # (N, 3)
    array_id: np.ndarray   # (N,), values 1 or 2

    @property
    def n_total(self) -> int:
        return self.positions.shape[0]


def _grid_xy(nx: int, ny: int, a: float) -> np.ndarray:
    """In-plane square grid centered on the beam axis (middle atom at the
    origin for odd counts, plaquette-centered for even)."""
    xs = (np.arange(nx) - (nx - 1) / 2.0) * a
    ys = (np.arange(ny) - (ny - 1) / 2.0) * a
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_single_array(nx: int, ny: int, a: float) -> AtomSet:
    """One flat layer at z = 0."""
    xy = _grid_xy(nx, ny, a)
    pos = np.column_stack([xy, np.zeros(len(xy))])
    return AtomSet(positions=pos, array_id=np.ones(len(xy), dtype=int))


def build_dual_array(spec: LatticeSpec, beam=None) -> AtomSet:
    """Two layers at nominal z = -L/2 (array 1) and z = +L/2 (array 2).

    For curved geometry each site is moved along z onto the surface of
    constant drive phase through (r=0, z=L/2): the axial position solves

        k z + k r^2 C(z)/2 - psi(z) = k L/2 - psi(L/2)

    with C(z) = z/(z^2 + z_R^2) the inverse wavefront radius and psi the
    Gouy phase of the beam, by bisection on z in [0, L/2].
    """
    if spec.geometry == "curved" and beam is None:
        raise ConfigurationError("curved geometry requires a beam")
    xy = _grid_xy(spec.nx, spec.ny, spec.a)
    half = spec.L / 2.0

    if spec.geometry == "flat" or half == 0.0:
        z2 = np.full(len(xy), half)
    else:
        z2 = np.array([_curved_z(r2, half, beam) for r2 in np.sum(xy**2, axis=1)])

    pos = np.vstack([
        np.column_stack([xy, -z2]),
        np.column_stack([xy, +z2]),
    ])
    ids = np.concatenate([np.ones(len(xy), dtype=int), np.full(len(xy), 2, dtype=int)])
    return AtomSet(positions=pos, array_id=ids)


def _curved_z(r_sq: float, half: float, beam) -> float:
    if r_sq == 0.0:
        return half  # phase equation reduces to an identity on axis
    k = beam.k
    z_r = beam.z_r

    def phase(z):
        curv = z / (z * z + z_r * z_r)  # 1/R(z), regular at z = 0
        return k * z + 0.5 * k * r_sq * curv - np.arctan(z / z_r)

    target = phase(half) - 0.5 * k * r_sq * half / (half**2 + z_r**2)
    # equivalently k*half - gouy(half); bracket: phase(0) = 0 < target <= phase(half)
    try:
        z = brentq(lambda zz: phase(zz) - target, 0.0, half, xtol=1e-15, rtol=8.9e-16,
                   maxiter=200)
    except Exception as exc:  # pragma: no cover - brentq converges for paraxial beams
        raise NumericalError(f"curved placement failed at r^2={r_sq}: {exc}") from exc
    resid = abs(phase(z) - target)
    if resid > 1e-12:
        raise NumericalError(
            f"curved placement residual {resid:.2e} at r^2={r_sq} exceeds 1e-12")
    return z
