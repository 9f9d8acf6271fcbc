"""Mode-projected field observables for finite arrays.

Detected amplitudes are reported in units of the input-mode amplitude:
an empty forward port reads exactly 1, an empty backward port 0.  The
scattered part of every port operator is a linear combination of the
site lowering operators; each coefficient carries a factor 1/omega0
because the emitter amplitudes themselves scale linearly with the
drive, which makes the detected field drive-independent in the weak
limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .beams import GaussianBeam, PlaneWave, mode_fourier, mode_norm, mode_value
from .core import AtomSet
from .dynamics import (EffectiveHamiltonian, TruncatedState, apply_lowering,
                       evolve)
from .errors import ConfigurationError, UndefinedDelayError, UndefinedG2Error

__all__ = [
    "FieldCoeffs", "detection_coeffs", "momentum_coeffs", "apply_field",
    "field_expectation", "transmission_finite", "g2_curve",
    "delay_time_finite", "momentum_density", "momentum_map",
    "momentum_grid",
]


@dataclass(eq=False)
class FieldCoeffs:
    """One detected port: the operator  input_amp*1 + sum_n scatter[n] s_n.

    input_amp is the amplitude the port reads with no atoms present
    (1 for the forward port, 0 for a backward or momentum-resolved
    port away from the input direction).
    """

    input_amp: complex
    scatter: np.ndarray

    def __post_init__(self):
        self.scatter = np.asarray(self.scatter, dtype=complex)
        if self.scatter.ndim != 1:
            raise ConfigurationError("scatter coefficients must be a vector")


def _omega0_checked(omega0: float) -> float:
    if omega0 <= 0:
        raise ConfigurationError("omega0 must be positive")
    return float(omega0)


def detection_coeffs(atoms: AtomSet, mode, omega0: float,
                     direction: str = "forward",
                     eta: float | None = None) -> FieldCoeffs:
    """Port coefficients for mode-projected detection behind (forward) or
    in front of (backward) the arrays.

    The backward port detects the time-reversed copy of the input mode,
    i.e. the natural reflection channel; it carries no input amplitude.
    eta (the transverse mode norm) is computed for Gaussian modes and
    must be given explicitly for plane waves, where the natural choice
    is N * a^2 per layer sheet.
    """
    omega0 = _omega0_checked(omega0)
    if isinstance(mode, PlaneWave):
        if eta is None:
            raise ConfigurationError("plane-wave detection needs an explicit eta")
        f = np.exp(1j * mode.k * atoms.positions[:, 2])
        k = mode.k
    elif isinstance(mode, GaussianBeam):
        if eta is None:
            eta = mode_norm(mode)
        f = mode_value(mode, atoms.positions)
        k = mode.k
    else:
        raise ConfigurationError(f"unsupported mode type {type(mode).__name__}")
    if eta <= 0:
        raise ConfigurationError("eta must be positive")

    pref = 1j * 3.0 * np.pi / (k * k * eta * omega0)
    if direction == "forward":
        return FieldCoeffs(1.0 + 0.0j, pref * np.conj(f))
    if direction == "backward":
        # time reversal conjugates the mode, so conj(f_back) = f
        return FieldCoeffs(0.0j, pref * f)
    raise ConfigurationError("direction must be 'forward' or 'backward'")


def momentum_coeffs(atoms: AtomSet, mode: GaussianBeam, omega0: float,
                    k_perp) -> FieldCoeffs:
    """Port coefficients for one transverse-momentum detection channel.

    Amplitudes are reported per unit input amplitude and per w^2, which
    keeps the empty-port reading of order one.  Only propagating
    channels |k_perp| < k are defined.
    """
    omega0 = _omega0_checked(omega0)
    if not isinstance(mode, GaussianBeam):
        raise ConfigurationError("momentum detection expects a Gaussian input")
    kp = np.asarray(k_perp, dtype=float)
    if kp.shape != (2,):
        raise ConfigurationError("k_perp must be a 2-vector")
    k = mode.k
    kp_sq = float(kp @ kp)
    if kp_sq >= k * k:
        raise ConfigurationError(
            f"|k_perp|={np.sqrt(kp_sq):.4f} is not a propagating channel (k={k:.4f})")
    kz = np.sqrt(k * k - kp_sq)
    w_sq = mode.waist ** 2

    pos = atoms.positions
    phases = np.exp(-1j * (pos[:, 0] * kp[0] + pos[:, 1] * kp[1] + pos[:, 2] * kz))
    pref = 1j * 3.0 * np.pi * (2.0 * k * k - kp_sq) / (2.0 * k ** 3 * kz * omega0 * w_sq)
    amp_in = mode_fourier(mode, kp, z=0.0) / w_sq
    return FieldCoeffs(complex(amp_in), pref * phases)


def apply_field(coeffs: FieldCoeffs, state: TruncatedState) -> TruncatedState:
    if coeffs.scatter.shape != (state.basis.n_atoms,):
        raise ConfigurationError("coefficient length does not match the basis")
    low = apply_lowering(coeffs.scatter, state)
    a = coeffs.input_amp
    c2 = None
    if state.basis.max_exc == 2:
        z = np.zeros((state.basis.n_atoms,) * 2, dtype=complex)
        c2 = a * (state.c2 if state.c2 is not None else z) \
            + (low.c2 if low.c2 is not None else z)
    return TruncatedState(state.basis, a * state.c0 + low.c0,
                          a * state.c1 + low.c1, c2)


def field_expectation(coeffs: FieldCoeffs, state: TruncatedState) -> complex:
    n_sq = state.norm() ** 2
    if n_sq <= 0.0:
        raise ConfigurationError("expectation of a null state")
    return complex(state.inner(apply_field(coeffs, state)) / n_sq)


def transmission_finite(state: TruncatedState, coeffs: FieldCoeffs) -> complex:
    """Detected amplitude of a port in units of the input amplitude.

    With forward coefficients this is the transmission T; with backward
    ones the reflection r (no input term, scattered field only).
    """
    return field_expectation(coeffs, state)


def _scaled(state: TruncatedState, factor: complex) -> TruncatedState:
    return TruncatedState(state.basis, factor * state.c0, factor * state.c1,
                          None if state.c2 is None else factor * state.c2)


def g2_curve(t_grid, steady: TruncatedState, ham: EffectiveHamiltonian,
             coeffs: FieldCoeffs, tol: float = 1e-8,
             method: str = "auto") -> np.ndarray:
    """Normalized two-time coincidence rate of one detected port.

    The first detection projects the (normalized) stationary state with
    the port operator; the conditional state then evolves under the
    driven non-Hermitian generator, and the instantaneous port intensity
    is referenced to its stationary value.  Between detections no
    renormalization is applied -- the norm decay is part of the
    correlator, and the ratio tends to 1 on its own as the conditional
    state relaxes back.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ConfigurationError("t_grid must be a non-empty 1-d array")
    if t[0] < 0 or np.any(np.diff(t) <= 0):
        raise ConfigurationError("t_grid must be increasing and non-negative")

    psi = steady.normalized()
    first = apply_field(coeffs, psi)
    den = first.norm() ** 2
    if den <= 1e-30:
        raise UndefinedG2Error(
            "stationary port intensity vanishes; g2 is undefined")

    bar = _scaled(first, 1.0 / np.sqrt(den))
    out = np.empty(t.size)
    t_prev = 0.0
    for i, ti in enumerate(t):
        if ti > t_prev:
            bar = evolve(bar, ham, ti - t_prev, tol=tol, method=method)
            t_prev = ti
        out[i] = apply_field(coeffs, bar).norm() ** 2 / den
    return out


def delay_time_finite(transmission, deltas, step: float) -> np.ndarray:
    """Group delay tau(delta) = Im[T'(delta)/T(delta)] of a port amplitude.

    transmission: callable delta -> complex amplitude.  Central
    differences with the given absolute step; pick it well below the
    local linewidth (1e-3 of it is a good default).  Points where the
    amplitude nearly vanishes have no meaningful phase derivative.
    """
    d = np.atleast_1d(np.asarray(deltas, dtype=float))
    if step <= 0:
        raise ConfigurationError("step must be positive")
    out = np.empty(d.size)
    for i, di in enumerate(d):
        t0 = transmission(di)
        if abs(t0) <= 1e-6:
            raise UndefinedDelayError(
                f"|T|={abs(t0):.2e} at delta={di:.6f}: delay undefined")
        tp = transmission(di + step)
        tm = transmission(di - step)
        out[i] = float(np.imag((tp - tm) / (2.0 * step * t0)))
    return out


def momentum_grid(k: float, n: int = 41, cutoff: float = 0.95):
    """Square (n, n) grid of transverse momenta with a propagating-disk
    mask |k_perp| <= cutoff * k."""
    if not 0 < cutoff < 1:
        raise ConfigurationError("cutoff must lie in (0, 1)")
    ax = np.linspace(-cutoff * k, cutoff * k, n)
    kx, ky = np.meshgrid(ax, ax, indexing="ij")
    mask = kx * kx + ky * ky <= (cutoff * k) ** 2
    return ax, kx, ky, mask


def _momentum_table(atoms: AtomSet, mode: GaussianBeam, omega0: float,
                    kxs, kys):
    """Vectorized port coefficients for many momentum channels at once:
    returns (input_amps (G,), scatter (G, N)) for the flattened grid."""
    omega0 = _omega0_checked(omega0)
    k = mode.k
    kx = np.asarray(kxs, dtype=float).ravel()
    ky = np.asarray(kys, dtype=float).ravel()
    kp_sq = kx * kx + ky * ky
    if np.any(kp_sq >= k * k):
        raise ConfigurationError("momentum grid contains evanescent channels")
    kz = np.sqrt(k * k - kp_sq)
    w_sq = mode.waist ** 2
    pos = atoms.positions
    phases = np.exp(-1j * (np.outer(kx, pos[:, 0]) + np.outer(ky, pos[:, 1])
                           + np.outer(kz, pos[:, 2])))
    pref = 1j * 3.0 * np.pi * (2.0 * k * k - kp_sq) / (2.0 * k ** 3 * kz * omega0 * w_sq)
    amps = mode_fourier(mode, np.column_stack([kx, ky]), z=0.0) / w_sq
    return np.asarray(amps, dtype=complex), pref[:, None] * phases


def _pair_intensity(amps: np.ndarray, scatter: np.ndarray,
                    state: TruncatedState) -> np.ndarray:
    """||(amps[g] + sum_n scatter[g,n] s_n) state||^2 for every row g."""
    c0 = amps * state.c0 + scatter @ state.c1
    out = np.abs(c0) ** 2
    c1 = amps[:, None] * state.c1[None, :]
    if state.c2 is not None:
        c1 = c1 + scatter @ state.c2
        out = out + 0.5 * np.abs(amps) ** 2 * np.sum(np.abs(state.c2) ** 2)
    out = out + np.sum(np.abs(c1) ** 2, axis=1)
    return out


def momentum_density(k1, k2, t: float, steady: TruncatedState,
                     ham: EffectiveHamiltonian, atoms: AtomSet,
                     mode: GaussianBeam, omega0: float,
                     tol: float = 1e-8, method: str = "auto") -> float:
    """Two-photon momentum density: first detection in channel k1, the
    second a time t later in channel k2.

    Reported in units of |E_in|^4 w^4.  At t = 0 the density is
    symmetric under k1 <-> k2 (the channel operators commute), and the
    arguments are ordered canonically so the symmetry holds exactly.
    """
    if t < 0:
        raise ConfigurationError("t must be non-negative")
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    if t == 0.0 and tuple(k2) < tuple(k1):
        k1, k2 = k2, k1
    psi = steady.normalized()
    phi = apply_field(momentum_coeffs(atoms, mode, omega0, k1), psi)
    if t > 0:
        phi = evolve(phi, ham, t, tol=tol, method=method)
    w4 = mode.waist ** 4
    return float(apply_field(momentum_coeffs(atoms, mode, omega0, k2),
                             phi).norm() ** 2 * w4)


def momentum_map(k1, t: float, steady: TruncatedState,
                 ham: EffectiveHamiltonian, atoms: AtomSet,
                 mode: GaussianBeam, omega0: float, kxs, kys,
                 tol: float = 1e-8, method: str = "auto") -> np.ndarray:
    """Density of the second photon over a grid of k2 channels, given a
    first detection in channel k1 a time t earlier.

    kxs/kys are broadcastable coordinate arrays (e.g. from momentum_grid);
    the result has their broadcast shape.  Evanescent grid points are
    rejected -- mask them out before calling.
    """
    if t < 0:
        raise ConfigurationError("t must be non-negative")
    kx = np.asarray(kxs, dtype=float)
    ky = np.asarray(kys, dtype=float)
    kx, ky = np.broadcast_arrays(kx, ky)
    psi = steady.normalized()
    phi = apply_field(momentum_coeffs(atoms, mode, omega0, k1), psi)
    if t > 0:
        phi = evolve(phi, ham, t, tol=tol, method=method)
    amps, scatter = _momentum_table(atoms, mode, omega0, kx, ky)
    dens = _pair_intensity(amps, scatter, phi) * mode.waist ** 4
    return dens.reshape(kx.shape)
