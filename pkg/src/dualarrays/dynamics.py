"""Driven-array dynamics in a two-excitation truncated space.

A weak coherent drive fills excitation sectors hierarchically (the
k-quantum amplitudes scale as the k-th power of the drive), so states are
stored as (vacuum, singles, pairs).  Pair amplitudes live in a symmetric
zero-diagonal N x N matrix and every sector operation is a dense matrix
product; nothing in this module loops over pair indices.

Rate convention: gamma is an amplitude rate, excited-state population
decays as exp(-2*gamma*t), and jump operators carry the factor 2
explicitly.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from .errors import (ConfigurationError, ExtractionAmbiguityWarning,
                     FitFailureError, NearDarkStateError, NumericalError,
                     StiffnessError)
from .greens import CouplingMatrices, decay_eigenmodes

_WEAK_DRIVE_MAX = 1e-2   # peak |Omega_n| above this invalidates the expansion
_DENSE_DIM = 512         # below this, propagators are dense matrix exponentials
_COND_LIMIT = 1e12
_LADDER_DEPTH = 46       # dyadic tick grid: 2**46 ticks per segment
_JUMP_TICKS = 1 << 18    # stop bisecting below this hop; jump-time
                         # resolution is dt * 2**-28 of a segment
_PAIR_SOLVE_MAX = 220    # the diagonal-response table is N^3 in memory


@dataclass(frozen=True)
class TruncatedBasis:
    """Index layout: vacuum, then singles 0..N-1, then pairs (n<m) in
    lexicographic order of numpy's upper-triangle enumeration."""
    n_atoms: int
    max_exc: int = 2

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ConfigurationError("need at least one atom")
        if self.max_exc not in (1, 2):
            raise ConfigurationError("max_exc must be 1 or 2")

    @property
    def n_pairs(self) -> int:
        if self.max_exc < 2:
            return 0
        return self.n_atoms * (self.n_atoms - 1) // 2

    @property
    def dim(self) -> int:
        return 1 + self.n_atoms + self.n_pairs

    @property
    def sector_slices(self):
        n = self.n_atoms
        return (slice(0, 1), slice(1, 1 + n), slice(1 + n, self.dim))

    def pair_rows(self):
        return np.triu_indices(self.n_atoms, k=1)


@dataclass(eq=False)
class TruncatedState:
    basis: TruncatedBasis
    c0: complex
    c1: np.ndarray
    c2: np.ndarray | None = None   # symmetric, zero diagonal; None means zero

    def __post_init__(self):
        n = self.basis.n_atoms
        self.c1 = np.asarray(self.c1, dtype=complex)
        if self.c1.shape != (n,):
            raise ConfigurationError("singles block has wrong shape")
        if self.c2 is not None:
            self.c2 = np.asarray(self.c2, dtype=complex)
            if self.basis.max_exc < 2:
                raise ConfigurationError("pair block present in a 1-excitation basis")
            if self.c2.shape != (n, n):
                raise ConfigurationError("pair block has wrong shape")

    def norm(self) -> float:
        out = abs(self.c0) ** 2 + float(np.sum(np.abs(self.c1) ** 2))
        if self.c2 is not None:
            out += 0.5 * float(np.sum(np.abs(self.c2) ** 2))
        return float(np.sqrt(out))

    def sector_norms(self):
        """(vacuum, singles, pairs) squared weights."""
        w2 = 0.0
        if self.c2 is not None:
            w2 = 0.5 * float(np.sum(np.abs(self.c2) ** 2))
        return (abs(self.c0) ** 2, float(np.sum(np.abs(self.c1) ** 2)), w2)

    def normalized(self) -> "TruncatedState":
        n = self.norm()
        if n <= 0.0:
            raise NumericalError("cannot normalize a null state")
        return TruncatedState(self.basis, self.c0 / n, self.c1 / n,
                              None if self.c2 is None else self.c2 / n)

    def copy(self) -> "TruncatedState":
        return TruncatedState(self.basis, self.c0, self.c1.copy(),
                              None if self.c2 is None else self.c2.copy())

    def to_vector(self) -> np.ndarray:
        b = self.basis
        vec = np.empty(b.dim, dtype=complex)
        vec[0] = self.c0
        vec[1:1 + b.n_atoms] = self.c1
        if b.max_exc == 2:
            rows, cols = b.pair_rows()
            vec[1 + b.n_atoms:] = 0.0 if self.c2 is None else self.c2[rows, cols]
        return vec

    @classmethod
    def from_vector(cls, basis: TruncatedBasis, vec) -> "TruncatedState":
        vec = np.asarray(vec, dtype=complex)
        if vec.shape != (basis.dim,):
            raise ConfigurationError("vector length does not match basis")
        c2 = None
        if basis.max_exc == 2:
            n = basis.n_atoms
            c2 = np.zeros((n, n), dtype=complex)
            rows, cols = basis.pair_rows()
            c2[rows, cols] = vec[1 + n:]
            c2[cols, rows] = vec[1 + n:]
        return cls(basis, complex(vec[0]), vec[1:1 + basis.n_atoms], c2)

    @classmethod
    def vacuum(cls, basis: TruncatedBasis) -> "TruncatedState":
        return cls(basis, 1.0 + 0.0j, np.zeros(basis.n_atoms, dtype=complex))

    def inner(self, other: "TruncatedState") -> complex:
        """<self|other> with the pair sector counted once per unordered pair."""
        out = np.conj(self.c0) * other.c0 + np.vdot(self.c1, other.c1)
        if self.c2 is not None and other.c2 is not None:
            out += 0.5 * np.vdot(self.c2, other.c2)
        return complex(out)


def mean_excitation(state: TruncatedState) -> float:
    _, p1, p2 = state.sector_norms()
    return p1 + 2.0 * p2


def site_populations(state: TruncatedState) -> np.ndarray:
    pop = np.abs(state.c1) ** 2
    if state.c2 is not None:
        pop = pop + np.sum(np.abs(state.c2) ** 2, axis=1)
    return pop


@dataclass(eq=False)
class EffectiveHamiltonian:
    """Non-Hermitian generator on the truncated basis.

    coupling holds the pairwise exchange-plus-decay matrix (diagonal
    i*gamma); omega is the per-atom drive amplitude vector, zeros when
    undriven.  Instances are immutable by convention: expensive
    factorizations are cached on first use and shared read-only.
    """
    basis: TruncatedBasis
    coupling: np.ndarray
    omega: np.ndarray
    delta: float
    gamma: float
    _props: dict = field(default_factory=dict, repr=False)
    _pair_tables: dict = field(default_factory=dict, repr=False)

    @property
    def driven(self) -> bool:
        return bool(np.any(self.omega != 0.0))

    @property
    def drive_strength(self) -> float:
        return float(np.max(np.abs(self.omega))) if self.omega.size else 0.0

    @cached_property
    def coupling_eig(self):
        lam, vec = np.linalg.eig(self.coupling)
        return lam, vec, np.linalg.inv(vec)

    @cached_property
    def dense(self) -> np.ndarray:
        d = self.basis.dim
        if d > 4096:
            raise NumericalError(f"dense build refused at dim {d}")
        out = np.empty((d, d), dtype=complex)
        probe = np.zeros(d, dtype=complex)
        for j in range(d):
            probe[j] = 1.0
            out[:, j] = self.apply_vector(probe)
            probe[j] = 0.0
        return out

    def propagator(self, t: float) -> np.ndarray:
        if t not in self._props:
            if len(self._props) >= 64:
                self._props.clear()
            self._props[t] = scipy.linalg.expm(-1j * t * self.dense)
        return self._props[t]

    def apply(self, state: TruncatedState) -> TruncatedState:
        om, k = self.omega, self.coupling
        h0 = -np.vdot(om, state.c1)
        h1 = -(self.delta * state.c1 + k @ state.c1 + om * state.c0)
        h2 = None
        if self.basis.max_exc == 2:
            if state.c2 is not None:
                h1 = h1 - state.c2 @ np.conj(om)
                m = k @ state.c2
                h2 = -(2.0 * self.delta * state.c2 + m + m.T)
            else:
                h2 = np.zeros((self.basis.n_atoms,) * 2, dtype=complex)
            if self.driven:
                d = np.outer(om, state.c1)
                h2 = h2 - d - d.T
            np.fill_diagonal(h2, 0.0)
        return TruncatedState(self.basis, h0, h1, h2)

    def apply_vector(self, vec: np.ndarray) -> np.ndarray:
        return self.apply(TruncatedState.from_vector(self.basis, vec)).to_vector()


def build_hamiltonian(atoms, couplings: CouplingMatrices, drive, delta: float,
                      max_exc: int = 2) -> EffectiveHamiltonian:
    """Assemble the truncated-space generator.

    drive may be None (undriven), a DriveVector, or a plain complex array
    of per-atom amplitudes."""
    n = couplings.G.shape[0]
    if atoms is not None and atoms.n_total != n:
        raise ConfigurationError("atom set and coupling matrix disagree on N")
    if drive is None:
        om = np.zeros(n, dtype=complex)
    else:
        om = np.asarray(getattr(drive, "omega", drive), dtype=complex)
    if om.shape != (n,):
        raise ConfigurationError("drive vector has wrong length")
    return EffectiveHamiltonian(TruncatedBasis(n, max_exc), couplings.G, om,
                                float(delta), couplings.gamma)


# ---------------------------------------------------------------------------
# steady state

def _sylvester_eig(ham: EffectiveHamiltonian, delta: float, rhs: np.ndarray):
    """Particular solution of A C + C A = rhs with A = delta*I + coupling,
    in the cached eigenbasis of the coupling matrix."""
    lam, vec, inv = ham.coupling_eig
    denom = 2.0 * delta + lam[:, None] + lam[None, :]
    small = np.abs(denom).min()
    if small * _COND_LIMIT < np.abs(denom).max():
        i, j = np.unravel_index(np.argmin(np.abs(denom)), denom.shape)
        raise NearDarkStateError(
            f"pair sector resonant: 2*delta + lambda_i + lambda_j = "
            f"{denom[i, j]:.3e} for eigenvalues {lam[i]:.6g}, {lam[j]:.6g}")
    return vec @ ((inv @ rhs @ vec) / denom) @ inv


def _pair_diag_lu(ham: EffectiveHamiltonian, delta: float):
    """LU factors of the map from a diagonal source to the diagonal of the
    unconstrained pair solution; used to zero the hard-core diagonal."""
    key = float(delta)
    if key in ham._pair_tables:
        return ham._pair_tables[key]
    n = ham.basis.n_atoms
    if n > _PAIR_SOLVE_MAX:
        raise NumericalError(f"pair solve too large at N={n}")
    lam, vec, inv = ham.coupling_eig
    denom = 2.0 * delta + lam[:, None] + lam[None, :]
    left = (vec[:, :, None] * inv.T[:, None, :]).reshape(n, n * n)
    right = ((inv.T[:, :, None] * vec[:, None, :]) / denom[None, :, :]
             ).reshape(n, n * n)
    table = scipy.linalg.lu_factor(left @ right.T)
    if len(ham._pair_tables) >= 8:
        ham._pair_tables.clear()
    ham._pair_tables[key] = table
    return table


def _masked_pair_solve(ham: EffectiveHamiltonian, delta: float,
                       rhs: np.ndarray) -> np.ndarray:
    """Solve the pair-sector fixed point: off-diagonal part of A C + C A
    equals rhs, diag(C) = 0, C symmetric.  The unconstrained Sylvester
    solution is corrected by a diagonal source chosen to cancel diag(C)."""
    table = _pair_diag_lu(ham, delta)

    def solve_once(q):
        cp = _sylvester_eig(ham, delta, q)
        phi = scipy.linalg.lu_solve(table, -np.diagonal(cp))
        c = cp + _sylvester_eig(ham, delta, np.diag(phi))
        np.fill_diagonal(c, 0.0)
        return 0.5 * (c + c.T)

    a = delta * np.eye(ham.basis.n_atoms) + ham.coupling
    scale = np.linalg.norm(rhs)
    c = solve_once(rhs)
    for _ in range(2):
        res = a @ c + c @ a - rhs
        np.fill_diagonal(res, 0.0)
        if np.linalg.norm(res) <= 1e-12 * scale:
            break
        c = c - solve_once(res)
    res = a @ c + c @ a - rhs
    np.fill_diagonal(res, 0.0)
    if np.linalg.norm(res) > 1e-8 * scale:
        raise NumericalError("pair-sector solve did not reach tolerance")
    return c


def steady_state_weak_drive(ham: EffectiveHamiltonian) -> TruncatedState:
    """Perturbative fixed point of the driven non-Hermitian evolution,
    solved sector by sector with the vacuum amplitude pinned to 1."""
    if not ham.driven:
        raise ConfigurationError("steady state needs a drive")
    if ham.drive_strength > _WEAK_DRIVE_MAX * ham.gamma:
        raise ConfigurationError(
            f"drive {ham.drive_strength:.3g} too strong for the weak-drive "
            f"expansion (limit {_WEAK_DRIVE_MAX:g} gamma)")
    n = ham.basis.n_atoms
    a = ham.delta * np.eye(n) + ham.coupling
    if np.linalg.cond(a) > _COND_LIMIT:
        lam = ham.coupling_eig[0]
        worst = lam[np.argmin(np.abs(ham.delta + lam))]
        raise NearDarkStateError(
            f"single-excitation sector singular near eigenvalue {worst:.6g}")
    c1 = np.linalg.solve(a, -ham.omega)
    c2 = None
    if ham.basis.max_exc == 2:
        src = np.outer(ham.omega, c1)
        src = src + src.T
        np.fill_diagonal(src, 0.0)
        c2 = _masked_pair_solve(ham, ham.delta, -src)
    return TruncatedState(ham.basis, 1.0 + 0.0j, c1, c2)


# ---------------------------------------------------------------------------
# propagation

def _rhs_factory(ham: EffectiveHamiltonian):
    def rhs(_t, y):
        vec = y.view(complex)
        return (-1j * ham.apply_vector(vec)).view(float)
    return rhs


def evolve(state: TruncatedState, ham: EffectiveHamiltonian, t: float,
           tol: float = 1e-8, method: str = "auto") -> TruncatedState:
    """Propagate by exp(-i H t).

    method: "expm" forces the dense matrix exponential, "ode" the
    step-controlled integrator, "auto" picks by dimension."""
    if t < 0:
        raise ConfigurationError("propagation time must be >= 0")
    if t == 0:
        return state.copy()
    if method == "auto":
        method = "expm" if ham.basis.dim <= _DENSE_DIM else "ode"
    if method == "expm":
        return TruncatedState.from_vector(
            ham.basis, ham.propagator(t) @ state.to_vector())
    if method != "ode":
        raise ConfigurationError(f"unknown method {method!r}")
    y0 = state.to_vector().view(float)
    sol = solve_ivp(_rhs_factory(ham), (0.0, t), y0, method="DOP853",
                    rtol=tol, atol=tol * max(state.norm(), 1e-12) * 1e-3)
    if not sol.success:
        raise StiffnessError(f"integrator failed: {sol.message}")
    return TruncatedState.from_vector(ham.basis,
                                      sol.y[:, -1].copy().view(complex))


# ---------------------------------------------------------------------------
# jumps and trajectories

@dataclass(eq=False)
class JumpOperators:
    """Collective decay channels from the eigendecomposition of the decay
    matrix; channel k lowers along mode k at rate rates[k]."""
    rates: np.ndarray    # 2 * eigenvalue, clipped nonnegative
    modes: np.ndarray    # (N, n_channels)


def build_jump_operators(mats: CouplingMatrices) -> JumpOperators:
    lam, vec = decay_eigenmodes(mats)
    return JumpOperators(rates=2.0 * lam, modes=vec)


def apply_lowering(coeffs: np.ndarray, state: TruncatedState) -> TruncatedState:
    """Apply sum_n coeffs[n] * (lowering at site n)."""
    coeffs = np.asarray(coeffs, dtype=complex)
    c0 = coeffs @ state.c1
    c1 = np.zeros_like(state.c1)
    if state.c2 is not None:
        c1 = state.c2 @ coeffs
    c2 = None
    if state.basis.max_exc == 2:
        c2 = np.zeros((state.basis.n_atoms,) * 2, dtype=complex)
    return TruncatedState(state.basis, c0, c1, c2)


def _channel_weights(jumps: JumpOperators, state: TruncatedState) -> np.ndarray:
    amp = jumps.modes.conj().T @ state.c1
    w = np.abs(amp) ** 2
    if state.c2 is not None:
        w = w + np.sum(np.abs(state.c2 @ jumps.modes.conj()) ** 2, axis=0)
    return jumps.rates * w


def _do_jump(jumps: JumpOperators, state: TruncatedState,
             rng: np.random.Generator):
    w = _channel_weights(jumps, state)
    total = w.sum()
    if total <= 0.0:
        raise NumericalError("jump requested from a non-decaying state")
    channel = int(np.searchsorted(np.cumsum(w / total), rng.random()))
    channel = min(channel, len(w) - 1)
    coeffs = np.sqrt(jumps.rates[channel]) * np.conj(jumps.modes[:, channel])
    return apply_lowering(coeffs, state).normalized(), channel


@dataclass(eq=False)
class TrajectoryRecord:
    jump_times: np.ndarray
    channels: np.ndarray
    snap_times: np.ndarray
    snapshots: np.ndarray   # (n_snaps, dim), renormalized states


class _JumpLog:
    def __init__(self, stream):
        self.times, self.channels, self.stream = [], [], stream

    def add(self, t, channel, norm):
        self.times.append(t)
        self.channels.append(channel)
        if self.stream is not None:
            self.stream.write(f"{t:.17g},{channel},{norm:.17g}\n")


def _advance_ticks(ham, jumps, basis, vec, r, t0, dt, rng, log):
    """March vec across one segment of length dt on a dyadic tick grid,
    resolving norm-threshold crossings (jumps) to dt * 2**-_JUMP_BITS.
    Relies on the norm being non-increasing between jumps."""
    remaining = 1 << _LADDER_DEPTH
    ticks = 0
    # doubling/halving cursor: halve into a crossing, double back out after
    # accepts, so locating each crossing costs O(log) hops rather than a
    # fresh top-down descent per tick
    step = remaining
    while remaining:
        while step > remaining:
            step >>= 1
        prop = ham.propagator(dt * (step / (1 << _LADDER_DEPTH)))
        trial = prop @ vec
        n2 = float(np.real(np.vdot(trial, trial)))
        if n2 >= r:
            vec = trial
            ticks += step
            remaining -= step
            step <<= 1
        elif step > _JUMP_TICKS:
            step >>= 1
        else:
            # Crossing bracketed to <= _JUMP_TICKS ticks: jump at the far
            # edge of the bracket.  Refining further is pointless -- the
            # per-tick norm loss can round to zero ulps, leaving a plateau
            # where sub-bracket hops report n2 == r indefinitely.
            ticks += step
            remaining -= step
            t_jump = t0 + dt * (ticks / (1 << _LADDER_DEPTH))
            state = TruncatedState.from_vector(basis, trial)
            state, channel = _do_jump(jumps, state, rng)
            log.add(t_jump, channel, float(np.sqrt(n2)))
            vec = state.to_vector()
            r = rng.random()
            if remaining:
                # fresh threshold: ramp back up (power-of-two hops only,
                # so every propagator comes from the cached ladder)
                step = 1 << (int(remaining).bit_length() - 1)
    return vec, r


def _mcwf_dense(ham, jumps, t_max, streams, n_snap, state0, log_streams):
    basis = ham.basis
    n_traj = len(streams)
    bounds = np.linspace(0.0, t_max, max(n_snap, 1) + 1)
    dt = bounds[1] - bounds[0]
    psi = np.tile(state0.to_vector(), (n_traj, 1))
    thresholds = np.array([rng.random() for rng in streams])
    logs = [_JumpLog(s) for s in log_streams]
    take_snaps = n_snap > 0
    snaps = None
    if take_snaps:
        snaps = np.empty((n_traj, n_snap + 1, basis.dim), dtype=complex)
        snaps[:, 0] = psi / np.linalg.norm(psi, axis=1, keepdims=True)
    prop = ham.propagator(dt)
    for seg in range(len(bounds) - 1):
        cand = psi @ prop.T
        n2 = np.sum(np.abs(cand) ** 2, axis=1)
        ok = n2 >= thresholds
        psi[ok] = cand[ok]
        for i in np.flatnonzero(~ok):
            psi[i], thresholds[i] = _advance_ticks(
                ham, jumps, basis, psi[i], thresholds[i], bounds[seg], dt,
                streams[i], logs[i])
        if take_snaps:
            snaps[:, seg + 1] = psi / np.linalg.norm(psi, axis=1, keepdims=True)
    out = []
    for i in range(n_traj):
        rec_snaps = snaps[i] if take_snaps else np.empty((0, basis.dim), complex)
        rec_times = bounds if take_snaps else np.empty(0)
        out.append(TrajectoryRecord(np.array(logs[i].times),
                                    np.array(logs[i].channels, dtype=int),
                                    rec_times, rec_snaps))
    return out


def _mcwf_adaptive(ham, jumps, t_max, rng, n_snap, state0, log_stream, tol):
    basis = ham.basis
    bounds = np.linspace(0.0, t_max, max(n_snap, 1) + 1)
    rhs = _rhs_factory(ham)
    vec = state0.to_vector()
    r = rng.random()
    log = _JumpLog(log_stream)
    take_snaps = n_snap > 0
    snaps = [vec / np.linalg.norm(vec)] if take_snaps else []
    for seg in range(len(bounds) - 1):
        t = bounds[seg]
        while True:
            def crossing(_t, y, thr=r):
                return float(np.sum(y * y)) - thr
            crossing.terminal = True
            crossing.direction = -1
            sol = solve_ivp(rhs, (t, bounds[seg + 1]), vec.view(float),
                            method="DOP853", rtol=tol, atol=tol * 1e-3,
                            events=crossing)
            if not sol.success:
                raise StiffnessError(f"trajectory integrator failed: {sol.message}")
            if sol.t_events[0].size == 0:
                vec = sol.y[:, -1].copy().view(complex)
                break
            t = float(sol.t_events[0][0])
            hit = sol.y_events[0][0].copy().view(complex)
            state = TruncatedState.from_vector(basis, hit)
            norm_before = state.norm()
            state, channel = _do_jump(jumps, state, rng)
            log.add(t, channel, norm_before)
            vec = state.to_vector()
            r = rng.random()
        if take_snaps:
            snaps.append(vec / np.linalg.norm(vec))
    return TrajectoryRecord(np.array(log.times), np.array(log.channels, int),
                            bounds if take_snaps else np.empty(0),
                            np.array(snaps) if take_snaps
                            else np.empty((0, basis.dim), complex))


def mcwf_run(ham: EffectiveHamiltonian, jumps: JumpOperators, t_max: float,
             seed, n_traj: int = 1, n_snap: int = 0, state0=None,
             record=None, tol: float = 1e-10, method: str = "auto"):
    """Unravel the dissipative dynamics into n_traj wavefunction
    trajectories.

    Trajectory i draws from an independent stream spawned from (seed, i),
    so results are reproducible and independent of batching.  Snapshots
    (renormalized) are taken on a uniform grid of n_snap intervals; jump
    events can be streamed to `record` as "time,channel,norm" lines.
    """
    if t_max <= 0:
        raise ConfigurationError("t_max must be positive")
    if n_traj < 1:
        raise ConfigurationError("need at least one trajectory")
    if state0 is None:
        state0 = TruncatedState.vacuum(ham.basis)
    streams = [np.random.default_rng(s)
               for s in np.random.SeedSequence(seed).spawn(n_traj)]
    close_me = None
    if record is not None and not hasattr(record, "write"):
        close_me = open(record, "w")
        record = close_me
    log_streams = [record] * n_traj
    try:
        if method == "auto":
            method = "expm" if ham.basis.dim <= _DENSE_DIM else "ode"
        if method == "expm":
            return _mcwf_dense(ham, jumps, t_max, streams, n_snap, state0,
                               log_streams)
        if method != "ode":
            raise ConfigurationError(f"unknown method {method!r}")
        return [_mcwf_adaptive(ham, jumps, t_max, streams[i], n_snap, state0,
                               log_streams[i], tol) for i in range(n_traj)]
    finally:
        if close_me is not None:
            close_me.close()


def ensemble_mean(records, observable, basis: TruncatedBasis):
    """Mean and standard error of observable(state) over trajectory
    snapshots; observable sees renormalized TruncatedStates."""
    if not records:
        raise ConfigurationError("no trajectories given")
    n_snaps = records[0].snapshots.shape[0]
    vals = np.empty((len(records), n_snaps))
    for i, rec in enumerate(records):
        for j in range(n_snaps):
            vals[i, j] = observable(
                TruncatedState.from_vector(basis, rec.snapshots[j]))
    mean = vals.mean(axis=0)
    stderr = vals.std(axis=0, ddof=1) / np.sqrt(len(records)) \
        if len(records) > 1 else np.zeros(n_snaps)
    return records[0].snap_times, mean, stderr


# ---------------------------------------------------------------------------
# mode extraction and fitting

def extract_modes(ham: EffectiveHamiltonian, state: TruncatedState,
                  filter_time: float | None = None,
                  weight_floor: float = 1e-4):
    """Split a single-excitation state into its long-lived direction and
    the orthogonal fast remainder.

    The singles component is propagated (drive off) until every faster
    collective mode it overlaps has decayed away; the survivor is the
    first mode, and the second is the part of the initial state
    orthogonal to it.
    """
    c0 = np.asarray(state.c1, dtype=complex)
    scale = np.linalg.norm(c0)
    if scale < 1e-14:
        raise ConfigurationError("state has no single-excitation component")
    c0 = c0 / scale
    lam, vec, inv = ham.coupling_eig
    rates = np.maximum(lam.imag, 0.0)
    alpha = inv @ c0
    weight = np.abs(alpha) * np.linalg.norm(vec, axis=0)
    active = weight > weight_floor * weight.max()
    act_rates = rates[active]
    slow = act_rates.min()
    if slow <= 0.0:
        raise NumericalError("non-decaying mode in the active set")
    faster = act_rates[act_rates > slow * (1.0 + 1e-9)]
    if faster.size == 0 or faster.min() / slow < 3.0:
        warnings.warn("decay timescales separated by less than a factor 3; "
                      "extracted modes may mix", ExtractionAmbiguityWarning)
    t_star = 10.0 / slow if filter_time is None else filter_time
    lam_safe = lam.real + 1j * rates
    evolved = vec @ (np.exp(1j * lam_safe * t_star) * alpha)
    n_ev = np.linalg.norm(evolved)
    if n_ev <= 0.0:
        raise NumericalError("filtered state vanished; filter_time too large")
    minus = evolved / n_ev
    residue = c0 - np.vdot(minus, c0) * minus
    n_res = np.linalg.norm(residue)
    if n_res < 1e-8:
        raise NumericalError("initial state is parallel to the slow mode")
    return minus, residue / n_res


@dataclass(frozen=True)
class ModeFit:
    detuning: float
    decay: float
    drive: complex
    plateau: complex
    residual: float


def fit_mode_parameters(times, values, guess=None) -> ModeFit:
    """Least-squares fit of a driven one-pole relaxation,
    c(t) = (c(0) - B) exp((i*detuning - decay) t) + B, with the plateau B
    eliminated analytically at each step (the drive is i*(i*detuning -
    decay)*B).  Raises FitFailureError above 1% relative residual."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=complex)
    if times.shape != values.shape or times.size < 5:
        raise ConfigurationError("need matching time/value series, >= 5 points")
    c_init = values[0]
    signal = np.linalg.norm(values)

    def split(z):
        env = np.exp(z * times)
        u = 1.0 - env
        d = values - c_init * env
        uu = np.vdot(u, u)
        plateau = np.vdot(u, d) / uu if abs(uu) > 0 else 0.0
        return d - plateau * u, plateau

    def fun(x):
        res, _ = split(1j * x[0] - x[1])
        return np.concatenate([res.real, res.imag])

    if guess is None:
        tail = values[-1]
        w = values - tail
        aw = np.abs(w)
        # slope of log|w| and of the unwrapped phase on the early window,
        # before the envelope decays into the noise floor (complex polyfit
        # of log(w) would see the phase wrap)
        below = np.flatnonzero(aw < 0.05 * aw.max()) if aw.max() > 0 else np.array([0])
        stop = below[0] if below.size else aw.size
        live = aw[:stop] > 0
        if live.sum() >= 3:
            tw, ww = times[:stop][live], w[:stop][live]
            mag = np.polyfit(tw, np.log(np.abs(ww)), 1)[0]
            ang = np.polyfit(tw, np.unwrap(np.angle(ww)), 1)[0]
            guess = (float(ang), max(float(-mag), 1e-6))
        else:
            guess = (0.0, 1.0)
    fit = least_squares(fun, x0=list(guess),
                        bounds=([-np.inf, 0.0], [np.inf, np.inf]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15)
    z = 1j * fit.x[0] - fit.x[1]
    res, plateau = split(z)
    rel = np.linalg.norm(res) / signal if signal > 0 else np.inf
    if rel > 1e-2:
        raise FitFailureError(f"relaxation fit residual {rel:.3g} exceeds 1%")
    return ModeFit(detuning=float(fit.x[0]), decay=float(fit.x[1]),
                   drive=complex(1j * z * plateau), plateau=complex(plateau),
                   residual=float(rel))
