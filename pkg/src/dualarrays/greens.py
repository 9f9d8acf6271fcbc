"""Free-space dyadic Green's function and pairwise coupling assembly.

The complex coupling of a pair is G_nm = J_nm + i*Gamma_nm with J the
coherent exchange and Gamma the collective decay (gamma units).
Diagonal convention: J_nn = 0 (the single-atom Lamb shift is absorbed in
the detuning), Gamma_nn = gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import E_PLUS, AtomSet, PhysicalParams
from .errors import ConfigurationError, NumericalError

_PSD_TOL = 1e-10


@dataclass(eq=False)
class CouplingMatrices:
    G: np.ndarray      # N x N complex, diag = i*gamma
    gamma: float

    @property
    def J(self) -> np.ndarray:
        return self.G.real

    @property
    def Gamma(self) -> np.ndarray:
        return self.G.imag


def green_tensor(R, wavelength: float = 1.0) -> np.ndarray:
    """Cartesian dyadic Green's tensor at displacement R != 0.

    G_ij = (e^{ikR}/4 pi R) [ (1 + (ikR-1)/(kR)^2) d_ij
                              - (1 + 3(ikR-1)/(kR)^2) R_i R_j / R^2 ].
    Vectorized over leading axes of R.
    """
    R = np.asarray(R, dtype=float)
    single = R.ndim == 1
    if single:
        R = R[None, :]
    dist = np.sqrt(np.sum(R * R, axis=-1))
    if np.any(dist == 0.0):
        raise ConfigurationError("green_tensor undefined at R = 0")
    k = 2.0 * np.pi / wavelength
    kr = k * dist
    pre = np.exp(1j * kr) / (4.0 * np.pi * dist)
    u = (1j * kr - 1.0) / kr**2
    hat = R / dist[..., None]
    outer = hat[..., :, None] * hat[..., None, :]
    eye = np.eye(3)
    out = pre[..., None, None] * ((1.0 + u)[..., None, None] * eye
                                  - (1.0 + 3.0 * u)[..., None, None] * outer)
    return out[0] if single else out


def _planar_coupling(rho_sq, ell, gamma: float, k: float):
    """Projected coupling for a pair with in-plane separation^2 rho_sq and
    axial separation ell.  Exact for the fixed circular polarization: the
    azimuthal dependence of the projected outer product cancels, leaving
    rho^2/(2 R^2)."""
    big_sq = rho_sq + ell * ell
    big = np.sqrt(big_sq)
    kr = k * big
    u = (1j * kr - 1.0) / kr**2
    return (1.5 * gamma * np.exp(1j * kr) / kr
            * (1.0 + u - (1.0 + 3.0 * u) * rho_sq / (2.0 * big_sq)))


def pair_coupling(r_n, r_m, params: PhysicalParams = PhysicalParams()) -> complex:
    """G_nm = (6 pi gamma / k) e+^dag . G(r_n - r_m) . e+ for r_n != r_m."""
    d = np.asarray(r_n, dtype=float) - np.asarray(r_m, dtype=float)
    if np.all(d == 0.0):
        raise ConfigurationError("pair_coupling undefined for coincident points")
    rho_sq = d[0] * d[0] + d[1] * d[1]
    return complex(_planar_coupling(rho_sq, d[2], params.gamma, params.k))


def pair_coupling_tensor(r_n, r_m, params: PhysicalParams = PhysicalParams()) -> complex:
    """Same quantity through the full tensor route; used as an independent
    cross-check of the planar reduction."""
    d = np.asarray(r_n, dtype=float) - np.asarray(r_m, dtype=float)
    g = green_tensor(d, params.wavelength)
    return complex(6.0 * np.pi * params.gamma / params.k
                   * (np.conj(E_PLUS) @ g @ E_PLUS))


def assemble_couplings(atoms: AtomSet,
                       params: PhysicalParams = PhysicalParams()) -> CouplingMatrices:
    """All-pairs coupling matrix; O(N^2), computed once per unordered pair
    by symmetry of the formula under n <-> m."""
    pos = atoms.positions
    n = len(pos)
    diff = pos[:, None, :] - pos[None, :, :]
    dist_sq = np.sum(diff * diff, axis=-1)
    off = ~np.eye(n, dtype=bool)
    if np.any(dist_sq[off] == 0.0):
        raise ConfigurationError("duplicate atom positions")
    g = np.full((n, n), 1j * params.gamma, dtype=complex)
    rho_sq = diff[..., 0] ** 2 + diff[..., 1] ** 2
    g[off] = _planar_coupling(rho_sq[off], diff[..., 2][off], params.gamma, params.k)
    mats = CouplingMatrices(G=g, gamma=params.gamma)
    lam = np.linalg.eigvalsh(mats.Gamma)
    if lam.min() < -_PSD_TOL * params.gamma:
        raise NumericalError(
            f"decay matrix has negative eigenvalue {lam.min():.3e}, beyond tolerance")
    return mats


def decay_eigenmodes(mats: CouplingMatrices):
    """Eigendecomposition of Gamma with small negatives clipped to zero;
    the channels used to build collective jump operators."""
    lam, vec = np.linalg.eigh(mats.Gamma)
    lam = np.clip(lam, 0.0, None)
    return lam, vec


def couplings_to_csv(mats: CouplingMatrices, path, header: str = "") -> None:
    """Debug dump: row-major J then Gamma blocks with a size header."""
    n = mats.G.shape[0]
    with open(path, "w") as fh:
        fh.write(f"# N={n} {header}\n# J block then Gamma block, row-major\n")
        for block in (mats.J, mats.Gamma):
            for row in block:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
