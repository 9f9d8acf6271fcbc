"""Truncated two-excitation dynamics, checked against an independent
full-Hilbert-space route: every operator is rebuilt from Kronecker
products over occupation bits and projected onto the hard-core basis,
so the two implementations share no code."""

import io
import warnings

import numpy as np
import pytest
import scipy.linalg
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from dualarrays.core import AtomSet, LatticeSpec, build_dual_array, build_single_array
from dualarrays.errors import (ConfigurationError, ExtractionAmbiguityWarning,
                               FitFailureError, NearDarkStateError,
                               NumericalError)
from dualarrays.greens import CouplingMatrices, assemble_couplings
from dualarrays.linear_response import (collective_linewidth, coupling_fourier,
                                        intralayer_shift, resonance_curve)
from dualarrays import dynamics as dyn

K = 2.0 * np.pi


# ---------------------------------------------------------------------------
# full-space oracle: occupation-bit bookkeeping, no shared code with dynamics

def _kron_lowering(n):
    sm = np.array([[0, 1], [0, 0]], dtype=complex)  # |g><e|, site 0 leftmost
    eye = np.eye(2, dtype=complex)
    ops = []
    for i in range(n):
        mats = [eye] * n
        mats[i] = sm
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        ops.append(out)
    return ops


def _occ_index(bits):
    idx = 0
    for b in bits:
        idx = 2 * idx + b
    return idx


def _full_h(G, omega, delta):
    """Non-Hermitian generator on the full 2^N space; diagonal of G is
    i*gamma, off-diagonal entries are J + i*Gamma."""
    n = G.shape[0]
    ops = _kron_lowering(n)
    h = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for a in range(n):
        na = ops[a].conj().T @ ops[a]
        h -= delta * na
        if omega is not None:
            h -= omega[a] * ops[a].conj().T + np.conj(omega[a]) * ops[a]
        for b in range(n):
            h -= (1j * G[a, a].imag * na if a == b
                  else G[a, b] * ops[a].conj().T @ ops[b])
    return h


def _gamma_quadratic(G):
    """2 * sum_nm Gamma_nm sigma_n^dag sigma_m on the full space."""
    n = G.shape[0]
    ops = _kron_lowering(n)
    out = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for a in range(n):
        for b in range(n):
            gab = G[a, a].imag if a == b else G[a, b].imag
            out += 2.0 * gab * ops[a].conj().T @ ops[b]
    return out


def _liouvillian(G, omega, delta):
    """Column-major vec() superoperator of the full master equation."""
    n = G.shape[0]
    ops = _kron_lowering(n)
    dim = 2 ** n
    h = np.zeros((dim, dim), dtype=complex)
    for a in range(n):
        h -= delta * ops[a].conj().T @ ops[a]
        if omega is not None:
            h -= omega[a] * ops[a].conj().T + np.conj(omega[a]) * ops[a]
        for b in range(n):
            if a != b:
                h -= G[a, b].real * ops[a].conj().T @ ops[b]
    eye = np.eye(dim)
    sup = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for a in range(n):
        for b in range(n):
            gab = G[a, b].imag if a == b else G[a, b].imag
            la, lb = ops[a], ops[b]
            sup += gab * (2.0 * np.kron(lb.conj(), la)
                          - np.kron(eye, lb.conj().T @ la)
                          - np.kron((lb.conj().T @ la).T, eye))
    return sup


def _embed(state):
    n = state.basis.n_atoms
    vec = np.zeros(2 ** n, dtype=complex)
    vec[0] = state.c0
    for a in range(n):
        bits = [0] * n
        bits[a] = 1
        vec[_occ_index(bits)] = state.c1[a]
    if state.c2 is not None:
        for a in range(n):
            for b in range(a + 1, n):
                bits = [0] * n
                bits[a] = bits[b] = 1
                vec[_occ_index(bits)] = state.c2[a, b]
    return vec


def _project(vec, basis):
    n = basis.n_atoms
    c1 = np.array([vec[_occ_index([1 if i == a else 0 for i in range(n)])]
                   for a in range(n)])
    c2 = None
    if basis.max_exc == 2:
        c2 = np.zeros((n, n), dtype=complex)
        for a in range(n):
            for b in range(a + 1, n):
                bits = [0] * n
                bits[a] = bits[b] = 1
                c2[a, b] = c2[b, a] = vec[_occ_index(bits)]
    return dyn.TruncatedState(basis, complex(vec[0]), c1, c2)


def _embedding_matrix(basis):
    emb = np.zeros((2 ** basis.n_atoms, basis.dim), dtype=complex)
    for j in range(basis.dim):
        unit = np.zeros(basis.dim)
        unit[j] = 1.0
        emb[:, j] = _embed(dyn.TruncatedState.from_vector(basis, unit))
    return emb


# shared little systems

TRIO_POS = np.array([[0.0, 0.0, 0.0], [0.55, 0.1, 0.0], [0.2, 0.5, 0.3]])
TRIO_OM = np.array([2e-3, 1e-3j, -1.5e-3 + 0.5e-3j])
DIMER_POS = np.array([[0.0, 0.0, 0.0], [0.4, 0.15, 0.1]])
DIMER_OM = np.array([0.5, 0.3 - 0.2j])  # strong drive: fine, N=2 is exact


@pytest.fixture(scope="module")
def trio():
    atoms = AtomSet(positions=TRIO_POS, array_id=np.array([1, 1, 1]))
    mats = assemble_couplings(atoms)
    ham = dyn.build_hamiltonian(atoms, mats, TRIO_OM, delta=-0.4)
    return atoms, mats, ham


@pytest.fixture(scope="module")
def dimer():
    atoms = AtomSet(positions=DIMER_POS, array_id=np.array([1, 1]))
    mats = assemble_couplings(atoms)
    ham = dyn.build_hamiltonian(atoms, mats, DIMER_OM, delta=0.2)
    return atoms, mats, ham


# ---------------------------------------------------------------------------
# basis and state bookkeeping

def test_basis_dimensions():
    for n in range(1, 7):
        b2 = dyn.TruncatedBasis(n)
        assert b2.n_pairs == n * (n - 1) // 2
        assert b2.dim == 1 + n + n * (n - 1) // 2
        b1 = dyn.TruncatedBasis(n, max_exc=1)
        assert b1.n_pairs == 0 and b1.dim == 1 + n


def test_basis_validation():
    with pytest.raises(ConfigurationError):
        dyn.TruncatedBasis(0)
    with pytest.raises(ConfigurationError):
        dyn.TruncatedBasis(3, max_exc=3)


def test_pair_index_order_has_no_same_site_entries():
    rows, cols = dyn.TruncatedBasis(5).pair_rows()
    assert np.all(rows < cols)
    assert len(rows) == 10


@given(n=st.integers(1, 6), seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_vector_round_trip_and_norm(n, seed):
    rng = np.random.default_rng(seed)
    basis = dyn.TruncatedBasis(n)
    c2 = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    c2 = c2 + c2.T
    np.fill_diagonal(c2, 0.0)
    state = dyn.TruncatedState(basis, complex(rng.normal(), rng.normal()),
                               rng.normal(size=n) + 1j * rng.normal(size=n), c2)
    vec = state.to_vector()
    assert vec.shape == (basis.dim,)
    back = dyn.TruncatedState.from_vector(basis, vec)
    assert back.c0 == state.c0
    assert np.array_equal(back.c1, state.c1)
    assert np.array_equal(back.c2, state.c2)
    # the 1/2 double-count factor makes the sector norm match the packed one
    assert state.norm() == pytest.approx(np.linalg.norm(vec), rel=1e-12)
    assert sum(state.sector_norms()) == pytest.approx(state.norm() ** 2, rel=1e-12)


def test_state_validation():
    basis = dyn.TruncatedBasis(3)
    with pytest.raises(ConfigurationError):
        dyn.TruncatedState(basis, 1.0, np.zeros(2))
    with pytest.raises(ConfigurationError):
        dyn.TruncatedState(basis, 1.0, np.zeros(3), np.zeros((2, 2)))
    with pytest.raises(ConfigurationError):
        dyn.TruncatedState(dyn.TruncatedBasis(3, max_exc=1), 1.0, np.zeros(3),
                           np.zeros((3, 3)))
    with pytest.raises(ConfigurationError):
        dyn.TruncatedState.from_vector(basis, np.zeros(5))


def test_vacuum_and_normalization():
    basis = dyn.TruncatedBasis(2)
    vac = dyn.TruncatedState.vacuum(basis)
    assert vac.norm() == 1.0
    scaled = dyn.TruncatedState(basis, 0.6, np.array([0.0, 0.8j]))
    assert scaled.normalized().norm() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(NumericalError):
        dyn.TruncatedState(basis, 0.0, np.zeros(2)).normalized()


def test_inner_product_matches_embedding():
    rng = np.random.default_rng(3)
    basis = dyn.TruncatedBasis(3)
    draw = lambda: dyn.TruncatedState.from_vector(
        basis, rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim))
    a, b = draw(), draw()
    assert a.inner(b) == pytest.approx(np.vdot(_embed(a), _embed(b)), rel=1e-13)


def test_population_observables_match_embedding():
    rng = np.random.default_rng(4)
    basis = dyn.TruncatedBasis(3)
    state = dyn.TruncatedState.from_vector(
        basis, rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim))
    state = state.normalized()
    vec = _embed(state)
    ops = _kron_lowering(3)
    pops = [np.vdot(vec, op.conj().T @ op @ vec).real for op in ops]
    assert dyn.site_populations(state) == pytest.approx(pops, rel=1e-12)
    assert dyn.mean_excitation(state) == pytest.approx(sum(pops), rel=1e-12)


# ---------------------------------------------------------------------------
# effective Hamiltonian assembly

def test_single_atom_matrix():
    mats = assemble_couplings(build_single_array(1, 1, 0.6))
    om = 0.03 - 0.01j
    ham = dyn.build_hamiltonian(None, mats, np.array([om]), delta=0.7)
    want = np.array([[0.0, -np.conj(om)], [-om, -0.7 - 1.0j]])
    assert np.allclose(ham.dense, want, atol=1e-15)


@pytest.mark.parametrize("n", [2, 3])
def test_dense_matches_full_space_projection(n):
    rng = np.random.default_rng(10 + n)
    pos = rng.uniform(-0.4, 0.4, size=(n, 3)) + np.arange(n)[:, None] * [0.45, 0, 0]
    atoms = AtomSet(positions=pos, array_id=np.ones(n, dtype=int))
    mats = assemble_couplings(atoms)
    om = rng.normal(size=n) * 0.1 + 1j * rng.normal(size=n) * 0.1
    ham = dyn.build_hamiltonian(atoms, mats, om, delta=0.35)
    emb = _embedding_matrix(ham.basis)
    hproj = emb.conj().T @ _full_h(mats.G, om, 0.35) @ emb
    assert np.abs(ham.dense - hproj).max() < 1e-12


def test_drive_off_block_diagonal(trio):
    atoms, mats, _ = trio
    ham = dyn.build_hamiltonian(atoms, mats, None, delta=-0.4)
    h = ham.dense
    s0, s1, s2 = ham.basis.sector_slices
    assert not ham.driven
    assert np.all(h[s0, s1] == 0) and np.all(h[s1, s0] == 0)
    assert np.all(h[s1, s2] == 0) and np.all(h[s2, s1] == 0)
    assert np.all(h[s0, s2] == 0) and np.all(h[s2, s0] == 0)


def test_anti_hermitian_part_negative_semidefinite(trio):
    _, _, ham = trio
    h = ham.dense
    decay_form = (h - h.conj().T) / 2j
    assert np.linalg.eigvalsh(decay_form).max() < 1e-10


def test_decay_part_matches_dissipator_quadratic_form(trio):
    # i(H - H^dag) must equal the projected 2 sum Gamma_nm s^dag s
    atoms, mats, ham = trio
    h = ham.dense
    emb = _embedding_matrix(ham.basis)
    want = emb.conj().T @ _gamma_quadratic(mats.G) @ emb
    assert np.abs(1j * (h - h.conj().T) - want).max() < 1e-12


def test_drive_length_mismatch_rejected(trio):
    atoms, mats, _ = trio
    with pytest.raises(ConfigurationError):
        dyn.build_hamiltonian(atoms, mats, np.array([1e-3, 1e-3]), delta=0.0)


def test_apply_agrees_with_dense_matrix(trio):
    _, _, ham = trio
    rng = np.random.default_rng(5)
    vec = rng.normal(size=ham.basis.dim) + 1j * rng.normal(size=ham.basis.dim)
    state = dyn.TruncatedState.from_vector(ham.basis, vec)
    out = ham.apply(state).to_vector()
    assert np.abs(out - ham.dense @ vec).max() < 1e-12


def test_least_damped_eigenvalue_tracks_interlayer_phase():
    """Sweep the layer distance of a 10x10 pair of sheets: the decay rate
    of the layer-antisymmetric collective mode follows the closed-form
    two-mode rate (1 - cos kL) * linewidth to a few percent."""
    gt = collective_linewidth(0.6)
    rates = []
    preds = []
    for L in (0.15, 0.25, 0.35):
        atoms = build_dual_array(LatticeSpec(nx=10, ny=10, a=0.6, L=L))
        mats = assemble_couplings(atoms)
        ham = dyn.build_hamiltonian(atoms, mats, None, delta=0.0, max_exc=1)
        lam, vec, _ = ham.coupling_eig
        n = atoms.n_total
        u_anti = np.where(atoms.array_id == 1, 1.0, -1.0) / np.sqrt(n)
        overlap = np.abs(vec.conj().T @ u_anti) / np.linalg.norm(vec, axis=0)
        mode = np.argmax(overlap)
        assert overlap[mode] > 0.8
        rates.append(lam[mode].imag)
        preds.append(gt * (1.0 - np.cos(K * L)))
    rates, preds = np.array(rates), np.array(preds)
    assert np.all(np.abs(rates / preds - 1.0) < 0.05)
    assert np.all(np.diff(rates) > 0)   # monotone with phase, like the model


# ---------------------------------------------------------------------------
# jump operators

def test_jump_completeness_against_decay_part(trio):
    atoms, mats, _ = trio
    ham = dyn.build_hamiltonian(atoms, mats, None, delta=-0.4)
    jumps = dyn.build_jump_operators(mats)
    assert np.all(jumps.rates >= 0.0)
    dim = ham.basis.dim
    total = np.zeros((dim, dim), dtype=complex)
    for k in range(jumps.rates.size):
        coeff = np.sqrt(jumps.rates[k]) * np.conj(jumps.modes[:, k])
        lk = np.zeros((dim, dim), dtype=complex)
        for j in range(dim):
            unit = np.zeros(dim)
            unit[j] = 1.0
            st_j = dyn.TruncatedState.from_vector(ham.basis, unit)
            lk[:, j] = dyn.apply_lowering(coeff, st_j).to_vector()
        total += lk.conj().T @ lk
    h = ham.dense
    assert np.abs(total - 1j * (h - h.conj().T)).max() < 1e-10


def test_apply_lowering_matches_full_space(trio):
    _, _, ham = trio
    rng = np.random.default_rng(6)
    basis = ham.basis
    state = dyn.TruncatedState.from_vector(
        basis, rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim))
    coeff = rng.normal(size=3) + 1j * rng.normal(size=3)
    got = dyn.apply_lowering(coeff, state)
    ops = _kron_lowering(3)
    collective = sum(c * op for c, op in zip(coeff, ops))
    want = _project(collective @ _embed(state), basis)
    assert np.abs(got.to_vector() - want.to_vector()).max() < 1e-13


def test_lowering_moves_one_sector_down():
    basis = dyn.TruncatedBasis(3)
    c2 = np.zeros((3, 3), complex)
    c2[0, 1] = c2[1, 0] = 1.0
    pair = dyn.TruncatedState(basis, 0.0, np.zeros(3, complex), c2)
    coeff = np.array([0.3, -0.2j, 0.7])
    out = dyn.apply_lowering(coeff, pair)
    assert out.c0 == 0.0
    assert np.any(out.c1 != 0)
    assert np.all(out.c2 == 0)
    again = dyn.apply_lowering(coeff, out)
    assert again.c0 != 0.0
    assert np.all(again.c1 == 0)


# ---------------------------------------------------------------------------
# weak-drive steady state

def test_single_atom_steady_state_lorentzian():
    mats = assemble_couplings(build_single_array(1, 1, 0.6))
    om = np.array([1e-3])
    amps = []
    deltas = np.linspace(-3.0, 3.0, 13)
    for d in deltas:
        ham = dyn.build_hamiltonian(None, mats, om, delta=float(d))
        ss = dyn.steady_state_weak_drive(ham)
        assert ss.c0 == 1.0
        assert ss.c1[0] == pytest.approx(-om[0] / (d + 1j), rel=1e-12)
        amps.append(abs(ss.c1[0]) ** 2)
    amps = np.array(amps)
    peak = amps[np.abs(deltas).argmin()]
    # half width at half maximum = gamma
    assert np.interp(1.0, deltas, amps) == pytest.approx(peak / 2, rel=1e-12)


def test_pair_block_fixed_point(trio):
    atoms, mats, _ = trio
    ham = dyn.build_hamiltonian(atoms, mats, TRIO_OM / 10.0, delta=-0.3)
    ss = dyn.steady_state_weak_drive(ham)
    a = -0.3 * np.eye(3) + mats.G
    resid = a @ ss.c2 + ss.c2 @ a
    src = np.outer(TRIO_OM / 10.0, ss.c1)
    src = src + src.T
    np.fill_diagonal(src, 0.0)
    resid = resid + src
    np.fill_diagonal(resid, 0.0)
    assert np.abs(resid).max() < 1e-8 * np.abs(src).max()
    assert np.all(np.diagonal(ss.c2) == 0.0)
    assert np.abs(ss.c2 - ss.c2.T).max() == 0.0


def test_steady_state_matches_liouvillian_null_space(dimer):
    atoms, mats, _ = dimer
    om = np.array([1e-3, 0.6e-3 - 0.3e-3j])
    ham = dyn.build_hamiltonian(atoms, mats, om, delta=0.2)
    ss = dyn.steady_state_weak_drive(ham)
    psi = _embed(ss)
    rho_t = np.outer(psi, psi.conj())
    rho_t /= np.trace(rho_t).real
    sup = _liouvillian(mats.G, om, 0.2)
    w, v = np.linalg.eig(sup)
    rho_e = v[:, np.abs(w).argmin()].reshape(4, 4, order="F")
    rho_e /= np.trace(rho_e)
    scale = np.abs(rho_e - np.diag([1.0, 0, 0, 0])).max()  # leading response
    assert np.abs(rho_t - rho_e).max() < 1e-4 * scale


def test_steady_state_equals_long_time_evolution(trio):
    atoms, mats, _ = trio
    ham = dyn.build_hamiltonian(atoms, mats, TRIO_OM / 10.0, delta=-0.3)
    ss = dyn.steady_state_weak_drive(ham)
    ev = dyn.evolve(dyn.TruncatedState.vacuum(ham.basis), ham, 40.0)
    a = ss.to_vector()
    b = ev.to_vector()
    b = b / b[0]          # same gauge: unit vacuum amplitude
    assert np.abs(a - b).max() < 1e-6


def test_steady_state_scales_linearly_per_sector(trio):
    atoms, mats, _ = trio
    ham1 = dyn.build_hamiltonian(atoms, mats, TRIO_OM, delta=-0.4)
    ham2 = dyn.build_hamiltonian(atoms, mats, TRIO_OM / 10.0, delta=-0.4)
    s1, s2 = dyn.steady_state_weak_drive(ham1), dyn.steady_state_weak_drive(ham2)
    assert np.abs(s1.c1 - 10.0 * s2.c1).max() < 1e-10 * np.abs(s1.c1).max()
    assert np.abs(s1.c2 - 100.0 * s2.c2).max() < 1e-10 * np.abs(s1.c2).max()


def test_drive_preconditions(trio):
    atoms, mats, ham_nodrive = trio
    strong = dyn.build_hamiltonian(atoms, mats, np.array([0.05, 0.0, 0.0]),
                                   delta=0.0)
    with pytest.raises(ConfigurationError):
        dyn.steady_state_weak_drive(strong)
    undriven = dyn.build_hamiltonian(atoms, mats, None, delta=0.0)
    with pytest.raises(ConfigurationError):
        dyn.steady_state_weak_drive(undriven)


def test_near_dark_state_reported():
    # two atoms a thousandth of a wavelength apart: driving exactly on the
    # dark resonance makes the singles block numerically singular
    d = 1e-3 / K
    atoms = AtomSet(positions=np.array([[0, 0, 0], [0, 0, d]]),
                    array_id=np.array([1, 1]))
    mats = assemble_couplings(atoms)
    lam = np.linalg.eigvals(mats.G)
    dark = lam[np.argmin(lam.imag)]
    ham = dyn.build_hamiltonian(atoms, mats, np.array([1e-3, -1e-3]),
                                delta=-dark.real)
    with pytest.raises(NearDarkStateError):
        dyn.steady_state_weak_drive(ham)


# ---------------------------------------------------------------------------
# propagation

def test_excited_atom_survival():
    mats = assemble_couplings(build_single_array(1, 1, 0.6))
    ham = dyn.build_hamiltonian(None, mats, None, delta=0.0)
    exc = dyn.TruncatedState(ham.basis, 0.0, np.array([1.0 + 0j]))
    for t in (0.3, 1.0, 2.5):
        out = dyn.evolve(exc, ham, t)
        assert abs(out.c1[0]) ** 2 == pytest.approx(np.exp(-2.0 * t), rel=1e-12)


def test_evolve_semigroup(dimer):
    _, _, ham = dimer
    vac = dyn.TruncatedState.vacuum(ham.basis)
    one = dyn.evolve(vac, ham, 2.3)
    two = dyn.evolve(dyn.evolve(vac, ham, 1.5), ham, 0.8)
    assert np.abs(one.to_vector() - two.to_vector()).max() < 1e-10


def test_evolve_matches_full_space_exponential(dimer):
    atoms, mats, ham = dimer
    psi0 = dyn.TruncatedState.vacuum(ham.basis)
    t = 1.7
    ref = _project(scipy.linalg.expm(-1j * _full_h(mats.G, DIMER_OM, 0.2) * t)
                   @ _embed(psi0), ham.basis)
    got = dyn.evolve(psi0, ham, t)
    assert np.abs(got.to_vector() - ref.to_vector()).max() < 1e-8
    # independent integrator route must land on the same state
    ode = dyn.evolve(psi0, ham, t, tol=1e-12, method="ode")
    assert np.abs(ode.to_vector() - ref.to_vector()).max() < 1e-9


def test_evolve_auto_dispatch_consistency():
    # 32 atoms with pairs: dim 529 pushes the auto path onto the integrator
    rng = np.random.default_rng(12)
    pos = rng.uniform(0, 3.0, size=(32, 3))
    atoms = AtomSet(positions=pos, array_id=np.ones(32, dtype=int))
    mats = assemble_couplings(atoms)
    ham = dyn.build_hamiltonian(atoms, mats, None, delta=0.1)
    assert ham.basis.dim == 529
    state = dyn.TruncatedState(ham.basis, 0.0,
                               rng.normal(size=32) + 1j * rng.normal(size=32))
    state = state.normalized()
    auto = dyn.evolve(state, ham, 0.8, tol=1e-10)
    expm = dyn.evolve(state, ham, 0.8, method="expm")
    assert np.abs(auto.to_vector() - expm.to_vector()).max() < 1e-8


def test_norm_never_increases_without_drive(trio):
    atoms, mats, _ = trio
    ham = dyn.build_hamiltonian(atoms, mats, None, delta=-0.4)
    rng = np.random.default_rng(9)
    state = dyn.TruncatedState.from_vector(
        ham.basis, rng.normal(size=ham.basis.dim)
        + 1j * rng.normal(size=ham.basis.dim)).normalized()
    norms = [dyn.evolve(state, ham, t).norm()
             for t in (0.0, 0.2, 0.5, 1.1, 2.0, 4.0)]
    assert norms[0] <= 1.0 + 1e-10
    assert np.all(np.diff(norms) <= 1e-12)


def test_negative_time_rejected(dimer):
    _, _, ham = dimer
    with pytest.raises(ConfigurationError):
        dyn.evolve(dyn.TruncatedState.vacuum(ham.basis), ham, -0.1)


# ---------------------------------------------------------------------------
# trajectory unraveling

def test_jump_times_exponential_single_atom():
    mats = assemble_couplings(build_single_array(1, 1, 0.6))
    ham = dyn.build_hamiltonian(None, mats, None, delta=0.0)
    jumps = dyn.build_jump_operators(mats)
    exc = dyn.TruncatedState(ham.basis, 0.0, np.array([1.0 + 0j]))
    recs = dyn.mcwf_run(ham, jumps, t_max=12.0, seed=7, n_traj=10000,
                        state0=exc)
    times = np.concatenate([r.jump_times for r in recs])
    assert times.size == 10000          # e^{-24} censoring is negligible
    ks = kstest(times, lambda t: 1.0 - np.exp(-2.0 * t))
    assert ks.pvalue > 0.01


@pytest.mark.slow
def test_ensemble_mean_matches_lindblad_oracle(dimer):
    atoms, mats, ham = dimer
    jumps = dyn.build_jump_operators(mats)
    tgrid = np.linspace(0.0, 8.0, 41)
    sup = _liouvillian(mats.G, DIMER_OM, 0.2)
    prop = scipy.linalg.expm(sup * (tgrid[1] - tgrid[0]))
    num_op = sum(op.conj().T @ op for op in _kron_lowering(2))
    rho = np.zeros(16, dtype=complex)
    rho[0] = 1.0
    exact = []
    for i in range(41):
        if i:
            rho = prop @ rho
        exact.append(np.real(np.trace(num_op @ rho.reshape(4, 4, order="F"))))
    exact = np.array(exact)
    recs = dyn.mcwf_run(ham, jumps, t_max=8.0, seed=42, n_traj=10000, n_snap=40)
    times, mean, se = dyn.ensemble_mean(recs, dyn.mean_excitation, ham.basis)
    assert np.array_equal(times, tgrid)
    dev = np.abs(mean - exact)
    assert np.all(dev <= 3.0 * se + 1e-12)


def test_trajectories_deterministic_and_batch_invariant(dimer):
    _, mats, ham = dimer
    jumps = dyn.build_jump_operators(mats)
    big = dyn.mcwf_run(ham, jumps, t_max=4.0, seed=123, n_traj=4, n_snap=5)
    small = dyn.mcwf_run(ham, jumps, t_max=4.0, seed=123, n_traj=2, n_snap=5)
    for i in range(2):
        assert np.array_equal(big[i].jump_times, small[i].jump_times)
        assert np.array_equal(big[i].channels, small[i].channels)
        assert np.array_equal(big[i].snapshots, small[i].snapshots)
    again = dyn.mcwf_run(ham, jumps, t_max=4.0, seed=123, n_traj=4, n_snap=5)
    for a, b in zip(big, again):
        assert np.array_equal(a.jump_times, b.jump_times)
        assert np.array_equal(a.snapshots, b.snapshots)


def test_trajectory_methods_agree(dimer):
    _, mats, ham = dimer
    jumps = dyn.build_jump_operators(mats)
    fast = dyn.mcwf_run(ham, jumps, t_max=3.0, seed=31, n_traj=4, n_snap=6)
    slow = dyn.mcwf_run(ham, jumps, t_max=3.0, seed=31, n_traj=4, n_snap=6,
                        method="ode", tol=1e-12)
    assert sum(a.jump_times.size for a in fast) > 0
    for a, b in zip(fast, slow):
        assert a.jump_times.size == b.jump_times.size
        assert np.array_equal(a.channels, b.channels)
        if a.jump_times.size:
            assert np.abs(a.jump_times - b.jump_times).max() < 1e-6
        assert np.abs(a.snapshots - b.snapshots).max() < 1e-6


def test_sector_flow_without_drive(trio):
    atoms, mats, _ = trio
    ham = dyn.build_hamiltonian(atoms, mats, None, delta=-0.4)
    jumps = dyn.build_jump_operators(mats)
    basis = ham.basis
    c2 = np.zeros((3, 3), complex)
    c2[0, 2] = c2[2, 0] = 1.0
    start = dyn.TruncatedState(basis, 0.0, np.zeros(3, complex), c2)
    recs = dyn.mcwf_run(ham, jumps, t_max=30.0, seed=99, n_traj=50, n_snap=6,
                        state0=start)
    for rec in recs:
        assert rec.jump_times.size == 2          # two quanta, no re-pumping
        assert np.all(np.diff(rec.jump_times) > 0)
        final = dyn.TruncatedState.from_vector(basis, rec.snapshots[-1])
        assert abs(final.c0) == pytest.approx(1.0, abs=1e-9)


def test_jump_record_streaming(tmp_path, dimer):
    _, mats, ham = dimer
    jumps = dyn.build_jump_operators(mats)
    path = tmp_path / "events.csv"
    recs = dyn.mcwf_run(ham, jumps, t_max=4.0, seed=5, n_traj=3, n_snap=4,
                        record=str(path))
    logged = []
    for line in path.read_text().strip().splitlines():
        t, ch, nrm = line.split(",")
        logged.append((float(t), int(ch), float(nrm)))
        assert 0.0 < float(nrm) <= 1.0
    want = sorted((t, c) for rec in recs
                  for t, c in zip(rec.jump_times, rec.channels))
    assert sorted((t, c) for t, c, _ in logged) == want   # %.17g round-trips
    # a writable handle works the same way
    buf = io.StringIO()
    dyn.mcwf_run(ham, jumps, t_max=4.0, seed=5, n_traj=3, n_snap=4, record=buf)
    assert buf.getvalue() == path.read_text()


def test_vacuum_is_absorbing_without_drive(trio):
    atoms, mats, _ = trio
    ham = dyn.build_hamiltonian(atoms, mats, None, delta=-0.4)
    jumps = dyn.build_jump_operators(mats)
    recs = dyn.mcwf_run(ham, jumps, t_max=5.0, seed=1, n_traj=3, n_snap=3)
    for rec in recs:
        assert rec.jump_times.size == 0
        assert np.abs(rec.snapshots - rec.snapshots[0]).max() < 1e-12


def test_mcwf_input_validation(dimer):
    _, mats, ham = dimer
    jumps = dyn.build_jump_operators(mats)
    with pytest.raises(ConfigurationError):
        dyn.mcwf_run(ham, jumps, t_max=0.0, seed=1)
    with pytest.raises(ConfigurationError):
        dyn.mcwf_run(ham, jumps, t_max=1.0, seed=1, n_traj=0)
    with pytest.raises(ConfigurationError):
        dyn.mcwf_run(ham, jumps, t_max=1.0, seed=1, method="leapfrog")


# ---------------------------------------------------------------------------
# mode extraction and relaxation fits

def _bloch_dimer(L, delta, a=0.6, om0=1e-3):
    """Two-site stand-in for a laterally infinite pair of sheets driven at
    normal incidence: renormalized on-site pole plus the k=0 interlayer
    coupling."""
    g0 = intralayer_shift(a).value + 1j * collective_linewidth(a)
    gl = coupling_fourier(0.0, L, a).value
    g2 = np.array([[g0, gl], [gl, g0]])
    atoms = AtomSet(positions=np.array([[0, 0, 0], [0, 0, L]]),
                    array_id=np.array([1, 2]))
    mats = CouplingMatrices(G=g2, gamma=1.0)
    om = om0 * np.exp(1j * K * atoms.positions[:, 2])
    ham = dyn.build_hamiltonian(atoms, mats, om, delta=delta, max_exc=1)
    return ham, g2


def test_two_sheet_surrogate_modes_recovered():
    ham, _ = _bloch_dimer(L=0.1, delta=0.3)
    ss = dyn.steady_state_weak_drive(ham)
    with warnings.catch_warnings():
        warnings.simplefilter("error")      # clean separation: no warning
        minus, plus = dyn.extract_modes(ham, ss)
    anti = np.array([1.0, -1.0]) / np.sqrt(2)
    sym = np.array([1.0, 1.0]) / np.sqrt(2)
    assert abs(np.vdot(anti, minus)) > 0.99
    assert abs(np.vdot(sym, plus)) > 0.99
    assert abs(np.vdot(minus, plus)) < 1e-12
    assert np.linalg.norm(minus) == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(plus) == pytest.approx(1.0, abs=1e-12)


def test_fit_recovers_surrogate_eigenvalues():
    delta = 0.3
    ham, g2 = _bloch_dimer(L=0.1, delta=delta)
    ss = dyn.steady_state_weak_drive(ham)
    minus, plus = dyn.extract_modes(ham, ss)
    lam = np.linalg.eigvals(g2)
    lam_m = lam[np.argmin(lam.imag)]
    lam_p = lam[np.argmax(lam.imag)]
    ts = np.linspace(0.0, 60.0, 400)
    psi0 = dyn.TruncatedState.vacuum(ham.basis)
    cm = np.empty(ts.size, complex)
    cp = np.empty(ts.size, complex)
    for i, t in enumerate(ts):
        state = dyn.evolve(psi0, ham, float(t)) if i else psi0
        cm[i] = np.vdot(minus, state.c1)
        cp[i] = np.vdot(plus, state.c1)
    fit_m = dyn.fit_mode_parameters(ts, cm)
    fit_p = dyn.fit_mode_parameters(ts, cp)
    assert fit_m.detuning == pytest.approx(delta + lam_m.real, abs=1e-3)
    assert fit_m.decay == pytest.approx(lam_m.imag, abs=1e-3)
    assert fit_p.detuning == pytest.approx(delta + lam_p.real, abs=1e-3)
    assert fit_p.decay == pytest.approx(lam_p.imag, abs=1e-3)
    assert fit_m.residual < 1e-3 and fit_p.residual < 1e-3
    # late samples sit on the fitted plateau
    assert abs(cm[-1] - fit_m.plateau) < 5e-2 * abs(fit_m.plateau)


def test_dual_array_extraction_is_layer_antisymmetric():
    L = 0.2
    dstar, _ = resonance_curve(L, 0.6)
    atoms = build_dual_array(LatticeSpec(nx=9, ny=9, a=0.6, L=L))
    mats = assemble_couplings(atoms)
    om = 1e-3 * np.exp(1j * K * atoms.positions[:, 2])
    ham = dyn.build_hamiltonian(atoms, mats, om, delta=dstar, max_exc=1)
    ss = dyn.steady_state_weak_drive(ham)
    minus, plus = dyn.extract_modes(ham, ss)
    half = atoms.n_total // 2
    swap = lambda v: np.concatenate([v[half:], v[:half]])
    assert np.vdot(swap(minus), minus).real < -0.99
    assert abs(np.vdot(minus, plus)) < 1e-12
    rate = lambda v: np.vdot(v, mats.G @ v).imag
    assert rate(plus) / rate(minus) > 10.0   # long- vs short-lived branch


def test_extraction_warns_on_merged_timescales():
    # rates gamma(1 +- 0.3): ratio 1.86 < 3
    g2 = np.array([[0.1 + 1.0j, 0.05 + 0.3j], [0.05 + 0.3j, 0.1 + 1.0j]])
    atoms = AtomSet(positions=np.array([[0, 0, 0], [0, 0, 0.3]]),
                    array_id=np.array([1, 2]))
    mats = CouplingMatrices(G=g2, gamma=1.0)
    om = np.array([1e-3, 0.4e-3])
    ham = dyn.build_hamiltonian(atoms, mats, om, delta=0.0, max_exc=1)
    state = dyn.TruncatedState(ham.basis, 0.0, np.array([1.0, 0.2j]))
    with pytest.warns(ExtractionAmbiguityWarning):
        dyn.extract_modes(ham, state)


def test_extraction_requires_singles_component():
    ham, _ = _bloch_dimer(L=0.1, delta=0.0)
    with pytest.raises(ConfigurationError):
        dyn.extract_modes(ham, dyn.TruncatedState.vacuum(ham.basis))


@given(det=st.floats(-4.0, 4.0), dec=st.floats(0.05, 2.5),
       gr=st.floats(-0.05, 0.05), gi=st.floats(-0.05, 0.05))
@settings(max_examples=25, deadline=None)
def test_fit_synthetic_recovery(det, dec, gr, gi):
    g = gr + 1j * gi
    assume(abs(g) > 1e-3)       # a null drive leaves nothing to fit
    z = 1j * det - dec
    plateau = -1j * g / z
    ts = np.linspace(0.0, 12.0 / dec, 600)
    vals = (0.0 - plateau) * np.exp(z * ts) + plateau
    fit = dyn.fit_mode_parameters(ts, vals)
    scale = max(abs(det), abs(dec), 1.0)
    assert abs(fit.detuning - det) < 1e-6 * scale
    assert abs(fit.decay - dec) < 1e-6 * scale
    assert abs(fit.drive - g) < 1e-5 * max(abs(g), 1e-3)
    assert abs(fit.plateau - plateau) < 1e-6 * max(abs(plateau), 1e-6)


def test_fit_plateau_is_long_time_limit():
    ts = np.linspace(0.0, 40.0, 500)
    z = 1j * 0.8 - 0.6
    plateau = 0.02 - 0.05j
    vals = (0.1 + 0.0j - plateau) * np.exp(z * ts) + plateau
    fit = dyn.fit_mode_parameters(ts, vals)
    assert fit.plateau == pytest.approx(plateau, abs=1e-9)
    assert vals[-1] == pytest.approx(fit.plateau, abs=1e-8)


def test_fit_rejects_structureless_series():
    rng = np.random.default_rng(0)
    ts = np.linspace(0.0, 10.0, 200)
    vals = rng.normal(size=200) + 1j * rng.normal(size=200)
    with pytest.raises(FitFailureError):
        dyn.fit_mode_parameters(ts, vals)


def test_fit_input_validation():
    with pytest.raises(ConfigurationError):
        dyn.fit_mode_parameters(np.arange(3.0), np.zeros(3, complex))
    with pytest.raises(ConfigurationError):
        dyn.fit_mode_parameters(np.arange(6.0), np.zeros(5, complex))


def test_extracted_pair_feeds_fit_pipeline():
    """End to end: extract on the surrogate, evolve drive-free from the
    fast mode, and the fitted decay matches the superradiant eigenvalue."""
    ham, g2 = _bloch_dimer(L=0.1, delta=0.0)
    ss = dyn.steady_state_weak_drive(ham)
    minus, plus = dyn.extract_modes(ham, ss)
    ham_free = dyn.build_hamiltonian(
        AtomSet(positions=np.array([[0, 0, 0], [0, 0, 0.1]]),
                array_id=np.array([1, 2])),
        CouplingMatrices(G=g2, gamma=1.0), None, delta=0.0, max_exc=1)
    start = dyn.TruncatedState(ham_free.basis, 0.0, plus.astype(complex))
    ts = np.linspace(0.0, 6.0, 250)
    vals = np.array([np.vdot(plus, dyn.evolve(start, ham_free, float(t)).c1)
                     for t in ts])
    fit = dyn.fit_mode_parameters(ts, vals)
    lam_p = np.linalg.eigvals(g2).imag.max()
    assert fit.decay == pytest.approx(lam_p, rel=1e-4)
    assert abs(fit.plateau) < 1e-8
