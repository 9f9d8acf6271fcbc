"""Batch experiment kinds: measurement protocols wired onto the response,
dynamics and observable layers, with flat-file configs and a fixed artifact
schema per kind.

Kinds and their tables
  spectrum-infinite   plane wave: tmap, resonance; Gaussian drive (waist > 0):
                      gspectrum, dispersionmap
  shift-vs-L          shift (interlayer shift/width with near- and far-field
                      model overlays)
  spectrum-finite     spectrum (forward and backward port amplitudes)
  g2                  g2curve, g2summary (locked detuning, group delay)
  momentum-density    pairmap (fixed first detection), axiscut (k_x = 0 line)
  modes-fit           modes (two-mode surrogate: analytic vs fitted params)
  delay-scan          delayscan (locked resonance and group delay per L)
  paraxial-check      modeprofile, tailfraction

Units in all artifacts: lengths in wavelengths, detunings and rates in
gamma, times in 1/gamma, transverse momenta in 1/wavelength.
"""
from __future__ import annotations

import dataclasses
from configparser import ConfigParser, Error as ConfigParserError
from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from . import __version__, artifacts
from .artifacts import Table
from .beams import GaussianBeam, PlaneWave, drive_vector, mode_fourier, \
    paraxial_tail_fraction
from .core import AtomSet, LatticeSpec, PhysicalParams, build_dual_array, \
    build_single_array
from .dynamics import TruncatedState, build_hamiltonian, evolve, \
    extract_modes, fit_mode_parameters, steady_state_weak_drive
from .errors import ConfigurationError, FitFailureError, PoleError, \
    UndefinedG2Error
from .greens import CouplingMatrices, assemble_couplings
from .linear_response import collective_linewidth, coupling_fourier, \
    dimer_model, dispersion_shift, dual_transmission, \
    gaussian_transmission_infinite, intralayer_shift, resonance_curve
from .observables import apply_field, delay_time_finite, detection_coeffs, \
    momentum_grid, momentum_map, transmission_finite

KINDS = ("spectrum-infinite", "shift-vs-L", "spectrum-finite", "g2",
         "momentum-density", "modes-fit", "delay-scan", "paraxial-check")

_WEAK_DRIVE_LIMIT = 1e-2   # keep in step with the steady-state solver


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one batch run; round-trips through to_text."""
    kind: str
    # [run]
    seed: int = 20240817
    threads: int = 1
    out: str = "runs/out"
    # [lattice]
    layers: int = 2
    nx: int = 9
    ny: int = 9
    spacing: float = 0.6
    separation: float = 1.55
    geometry: str = "curved"
    # [drive]  waist = 0 selects a plane wave
    waist: float = 1.5
    strength: float = 1e-3
    detuning: float = 0.472
    lock: bool = True
    max_exc: int = 2
    # [scan]
    delta_min: float = -1.0
    delta_max: float = 1.0
    n_delta: int = 161
    l_min: float = 0.05
    l_max: float = 3.0
    n_l: int = 120
    t_max: float = 30.0
    n_t: int = 241
    t_stretch: float = 3.0
    delta_step: float = 1e-4
    # [momentum]
    k1x: float = 1.33
    k1y: float = -1.84
    n_k: int = 41
    k_cutoff: float = 0.95
    times: tuple = (0.0, 10.0)
    # [numerics]
    tol: float = 1e-8
    epsilon: float = 0.05
    w_min: float = 0.5
    w_max: float = 3.0
    n_w: int = 101

    def to_text(self) -> str:
        lines = []
        for section, names in _SECTIONS:
            lines.append(f"[{section}]")
            lines.extend(f"{n} = {_render_value(getattr(self, n))}"
                         for n in names)
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str, base: "ExperimentConfig | None" = None
                  ) -> "ExperimentConfig":
        parser = ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except ConfigParserError as exc:
            raise ConfigurationError(f"config parse error: {exc}") from None
        values = {} if base is None else dataclasses.asdict(base)
        for section in parser.sections():
            for key, raw in parser.items(section):
                home = _FIELD_SECTION.get(key)
                if home is None:
                    raise ConfigurationError(
                        f"unknown config key {key!r} in [{section}]")
                if home != section:
                    raise ConfigurationError(
                        f"config key {key!r} belongs in [{home}], "
                        f"found in [{section}]")
                values[key] = coerce_value(key, raw)
        if base is not None and parser.has_option("run", "kind") \
                and values["kind"] != base.kind:
            raise ConfigurationError(
                f"config names kind {values['kind']!r} but "
                f"{base.kind!r} was requested")
        if not values.get("kind"):
            raise ConfigurationError("config must name an experiment kind")
        values["times"] = tuple(values["times"])
        return cls(**values)


_SECTIONS = (
    ("run", ("kind", "seed", "threads", "out")),
    ("lattice", ("layers", "nx", "ny", "spacing", "separation", "geometry")),
    ("drive", ("waist", "strength", "detuning", "lock", "max_exc")),
    ("scan", ("delta_min", "delta_max", "n_delta", "l_min", "l_max", "n_l",
              "t_max", "n_t", "t_stretch", "delta_step")),
    ("momentum", ("k1x", "k1y", "n_k", "k_cutoff", "times")),
    ("numerics", ("tol", "epsilon", "w_min", "w_max", "n_w")),
)
_FIELD_SECTION = {name: sec for sec, names in _SECTIONS for name in names}
_PROTOTYPES = dataclasses.asdict(ExperimentConfig(kind=""))


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)   # shortest exact round-trip
    if isinstance(v, (tuple, list)):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


def coerce_value(name: str, raw: str):
    """Parse one config value with the type of the matching field."""
    if name not in _FIELD_SECTION:
        raise ConfigurationError(f"unknown config key {name!r}")
    proto = _PROTOTYPES[name]
    raw = raw.strip()
    try:
        if isinstance(proto, bool):
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if isinstance(proto, int):
            return int(raw)
        if isinstance(proto, float):
            return float(raw)
        if isinstance(proto, (tuple, list)):
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(
            f"config key {name!r}: cannot parse {raw!r}") from None
    return raw   # strings pass through


_CI_LATTICE = dict(nx=6, ny=6)

_PRESETS = {
    "spectrum-infinite": {
        "full": dict(waist=0.0, delta_min=-3.0, delta_max=3.0, n_delta=241,
                      l_min=0.05, l_max=3.0, n_l=240),
        "ci": dict(waist=0.0, delta_min=-3.0, delta_max=3.0, n_delta=81,
                   l_min=0.05, l_max=3.0, n_l=60),
    },
    "shift-vs-L": {
        "full": dict(l_min=0.05, l_max=6.0, n_l=400),
        "ci": dict(l_min=0.05, l_max=6.0, n_l=80),
    },
    "spectrum-finite": {
        "full": dict(delta_min=0.35, delta_max=0.60, n_delta=201),
        "ci": dict(**_CI_LATTICE, delta_min=0.38, delta_max=0.56, n_delta=61),
    },
    "g2": {
        "full": dict(t_max=3000.0, n_t=401, t_stretch=3.0),
        "ci": dict(**_CI_LATTICE, t_max=30.0, n_t=161, t_stretch=2.0),
    },
    "momentum-density": {
        "full": dict(n_k=41),
        "ci": dict(**_CI_LATTICE, n_k=21),
    },
    "modes-fit": {
        "full": dict(l_min=0.05, l_max=2.95, n_l=120, t_max=60.0, n_t=400),
        "ci": dict(l_min=0.05, l_max=2.95, n_l=30, t_max=60.0, n_t=400),
    },
    "delay-scan": {
        # the subradiant branch goes dark at L = 1.5 exactly; start off it
        "full": dict(l_min=1.51, l_max=1.60, n_l=10),
        # 6x6 edge effects darken the branch near L = 1.54; scan above it
        "ci": dict(**_CI_LATTICE, l_min=1.55, l_max=1.59, n_l=5),
    },
    "paraxial-check": {
        "full": dict(n_w=126),
        "ci": dict(n_w=51),
    },
}


def preset(kind: str, name: str = "ci") -> ExperimentConfig:
    if kind not in KINDS:
        raise ConfigurationError(f"unknown experiment kind {kind!r}")
    if name not in ("ci", "full"):
        raise ConfigurationError(f"unknown preset {name!r} (ci or full)")
    over = dict(_PRESETS[kind][name])
    over.setdefault("out", f"runs/{kind}-{name}")
    return ExperimentConfig(kind=kind, **over)


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class ValidationReport:
    kind: str
    problems: tuple
    n_atoms: int
    max_exc: int
    n_pairs: int
    dim: int
    est_memory_mb: float
    est_solves: int
    est_seconds: float

    @property
    def ok(self) -> bool:
        return not self.problems

    def render(self) -> str:
        lines = [f"kind: {self.kind}",
                 f"atoms: {self.n_atoms}",
                 f"basis (max_exc = {self.max_exc}): dim = 1 + "
                 f"{self.n_atoms} + {self.n_pairs} = {self.dim}"
                 if self.max_exc == 2 else
                 f"basis (max_exc = {self.max_exc}): dim = 1 + "
                 f"{self.n_atoms} = {self.dim}",
                 f"estimated memory: ~{self.est_memory_mb:.0f} MB",
                 f"estimated steady-state solves: {self.est_solves}",
                 f"estimated runtime: ~{self.est_seconds:.0f} s"]
        if self.ok:
            lines.append("preconditions: OK")
        else:
            lines.append(f"preconditions: {len(self.problems)} problem(s)")
            lines.extend(f"  - {p}" for p in self.problems)
        return "\n".join(lines)


def validate_config(cfg: ExperimentConfig) -> ValidationReport:
    """Check every module precondition without running; always returns."""
    p = []
    if cfg.kind not in KINDS:
        p.append(f"unknown experiment kind {cfg.kind!r}")
    if cfg.spacing <= 0:
        p.append("lattice spacing must be positive")
    elif cfg.spacing >= 1.0:
        p.append(f"lattice spacing a = {cfg.spacing:g} >= lambda opens "
                 "diffraction orders (need a < lambda)")
    if cfg.layers not in (1, 2):
        p.append("layers must be 1 or 2")
    if cfg.nx < 1 or cfg.ny < 1:
        p.append("nx and ny must be >= 1")
    finite = cfg.kind in ("spectrum-finite", "g2", "momentum-density",
                          "delay-scan")
    if finite or (cfg.kind == "spectrum-infinite" and cfg.waist > 0):
        if cfg.layers == 2 and cfg.separation <= 0:
            p.append("layer separation must be positive for a dual array")
    if finite:
        if cfg.geometry not in ("flat", "curved"):
            p.append(f"unknown geometry {cfg.geometry!r}")
        elif cfg.geometry == "curved":
            if cfg.waist <= 0:
                p.append("curved geometry without a beam waist: wavefront "
                         "matching needs w > 0")
            if cfg.layers != 2:
                p.append("curved wavefront matching is defined for the "
                         "dual array (layers = 2)")
    if cfg.waist < 0:
        p.append("beam waist must be >= 0 (0 selects a plane wave)")
    if cfg.strength <= 0:
        p.append("drive strength must be positive")
    elif cfg.strength > _WEAK_DRIVE_LIMIT:
        p.append(f"drive strength {cfg.strength:g} gamma exceeds the "
                 f"weak-drive expansion limit {_WEAK_DRIVE_LIMIT:g} gamma")
    if cfg.max_exc not in (1, 2):
        p.append("max_exc must be 1 or 2")
    if cfg.tol <= 0:
        p.append("tol must be positive")
    if cfg.seed < 0:
        p.append("seed must be >= 0")
    if cfg.threads < 1:
        p.append("threads must be >= 1")
    if not cfg.out:
        p.append("output directory must be non-empty")
    if cfg.delta_step <= 0:
        p.append("delta_step must be positive")

    kind = cfg.kind
    if kind in ("spectrum-infinite", "spectrum-finite"):
        if cfg.n_delta < 2:
            p.append("spectra need n_delta >= 2")
        if cfg.delta_max <= cfg.delta_min:
            p.append("delta_max must exceed delta_min")
    if kind == "spectrum-infinite":
        if cfg.layers != 2:
            p.append("the infinite-array spectrum is the dual-layer "
                     "response (layers = 2)")
        if cfg.waist == 0 and (cfg.n_l < 2 or cfg.l_min <= 0
                               or cfg.l_max <= cfg.l_min):
            p.append("the separation scan needs 0 < l_min < l_max, n_l >= 2")
    if kind in ("shift-vs-L", "modes-fit"):
        if cfg.n_l < 2 or cfg.l_min <= 0 or cfg.l_max <= cfg.l_min:
            p.append("the separation scan needs 0 < l_min < l_max, n_l >= 2")
    if kind == "delay-scan":
        if cfg.n_l < 1 or cfg.l_min <= 0 or cfg.l_max < cfg.l_min:
            p.append("the separation scan needs 0 < l_min <= l_max, n_l >= 1")
        if cfg.layers != 2:
            p.append("the resonator delay scan needs the dual array "
                     "(layers = 2)")
    if kind in ("g2", "momentum-density"):
        if cfg.max_exc != 2:
            p.append("two-photon observables need the doubly excited "
                     "sector (max_exc = 2)")
    if kind == "g2":
        if cfg.t_max <= 0 or cfg.n_t < 2 or cfg.t_stretch <= 0:
            p.append("the correlation grid needs t_max > 0, n_t >= 2, "
                     "t_stretch > 0")
    if kind == "momentum-density" or (kind == "spectrum-infinite"
                                      and cfg.waist > 0):
        if cfg.n_k < 3:
            p.append("the momentum grid needs n_k >= 3")
        if not 0 < cfg.k_cutoff < 1:
            p.append("k_cutoff must lie in (0, 1): only propagating "
                     "channels reach the detector")
    if kind == "momentum-density":
        if cfg.waist <= 0:
            p.append("momentum-space detection is defined for a Gaussian "
                     "drive (w > 0)")
        k = PhysicalParams().k
        if np.hypot(cfg.k1x, cfg.k1y) >= cfg.k_cutoff * k:
            p.append(f"first detection momentum |k1| = "
                     f"{np.hypot(cfg.k1x, cfg.k1y):.3f} lies outside the "
                     f"propagating disk (< {cfg.k_cutoff * k:.3f})")
        if len(cfg.times) == 0 or any(t < 0 for t in cfg.times) \
                or np.any(np.diff(cfg.times) <= 0):
            p.append("detection times must be non-negative and strictly "
                     "increasing")
    if kind == "paraxial-check":
        if not 0 < cfg.epsilon < 0.5:
            p.append("the paraxial cutoff epsilon must lie in (0, 1/2)")
        if cfg.n_w < 2 or cfg.w_min <= 0 or cfg.w_max <= cfg.w_min:
            p.append("the waist scan needs 0 < w_min < w_max, n_w >= 2")
        if cfg.waist <= 0:
            p.append("the mode profile needs a Gaussian beam (w > 0)")

    n = max(cfg.layers, 0) * max(cfg.nx, 0) * max(cfg.ny, 0)
    n_pairs = n * (n - 1) // 2 if cfg.max_exc == 2 else 0
    dim = 1 + n + n_pairs
    mem_mb = (48.0 * n * n + 160.0 * dim) / 1e6

    solves, steps = 0, 0
    lock_cost = 34 if cfg.lock else 1
    if kind == "spectrum-finite":
        solves = cfg.n_delta
    elif kind == "g2":
        solves = lock_cost + 3
        steps = cfg.n_t
    elif kind == "delay-scan":
        solves = cfg.n_l * (lock_cost + 3)
    elif kind == "momentum-density":
        solves = lock_cost + 1
        steps = sum(1 for t in cfg.times if t > 0) * (1 + cfg.n_k)
    t_solve = 3e-8 * dim * dim + 3e-3
    t_step = 1e-8 * dim * dim + 2e-3
    est = solves * t_solve + steps * t_step
    if kind in ("spectrum-infinite", "shift-vs-L", "modes-fit",
                "paraxial-check"):
        est = 0.05 * max(cfg.n_l, cfg.n_w, cfg.n_delta)

    return ValidationReport(cfg.kind, tuple(p), n, cfg.max_exc, n_pairs, dim,
                            mem_mb, solves, est)


# ---------------------------------------------------------------------------
# shared machinery

def _mode(cfg):
    return GaussianBeam(waist=cfg.waist) if cfg.waist > 0 else PlaneWave()


def _atoms(cfg, mode):
    if cfg.layers == 1:
        return build_single_array(cfg.nx, cfg.ny, cfg.spacing)
    spec = LatticeSpec(nx=cfg.nx, ny=cfg.ny, a=cfg.spacing,
                       L=cfg.separation, geometry=cfg.geometry)
    return build_dual_array(spec, mode if cfg.geometry == "curved" else None)


def _port_eta(cfg):
    # plane-wave ports need the quantization area; one transverse cell
    # per lattice site
    return None if cfg.waist > 0 else cfg.nx * cfg.ny * cfg.spacing ** 2


def _transmission_solver(atoms, mats, drive, coeffs, max_exc):
    def t_of(delta):
        ham = build_hamiltonian(atoms, mats, drive, float(delta), max_exc)
        return transmission_finite(steady_state_weak_drive(ham), coeffs)
    return t_of


@dataclass(frozen=True)
class LockResult:
    detuning: float          # locked operating point
    requested: float
    transmission: complex    # port amplitude at the lock
    mode_detuning: float     # resonance of the tracked collective mode
    mode_rate: float         # its amplitude decay rate


def lock_to_transmission_max(atoms, mats, drive, coeffs, requested,
                             max_exc=2, window=0.2):
    """Pin the working detuning to the transmission maximum nearest the
    requested value.

    Candidates come from the collective modes (a mode resonates at
    detuning -Re lambda), ranked by their transmission pole residue
    |(beta . v_j)(V^-1 Omega)_j| / rate -- a peak needs the mode coupled
    to the drive AND the detection port.  The winner inside the search
    window seeds a two-level scan of |T| finished by a parabolic vertex;
    without a candidate the requested value seeds the scan.
    """
    probe = build_hamiltonian(atoms, mats, drive, float(requested), max_exc=1)
    lam, vec, inv = probe.coupling_eig
    residue = np.abs((coeffs.scatter @ vec) * (inv @ probe.omega))
    res_det = -lam.real
    rate = lam.imag
    ok = (rate > 1e-9) & (rate < 0.9) & (np.abs(res_det - requested) <= window)
    if np.any(ok):
        idx = np.flatnonzero(ok)
        j = idx[np.argmax(residue[idx] / rate[idx])]
        seed, width = float(res_det[j]), float(max(rate[j], 1e-4))
        mode_det, mode_rate = float(res_det[j]), float(rate[j])
    else:
        seed, width = float(requested), 1e-2
        mode_det, mode_rate = float(requested), 0.0

    t_of = _transmission_solver(atoms, mats, drive, coeffs, max_exc)
    half = min(max(4.0 * width, 4e-3), 0.2)
    best = seed
    for n_pts in (21, 11):
        grid = np.linspace(best - half, best + half, n_pts)
        vals = np.array([abs(t_of(d)) ** 2 for d in grid])
        i = int(np.argmax(vals))
        best = float(grid[i])
        if 0 < i < n_pts - 1:
            y0, y1, y2 = vals[i - 1], vals[i], vals[i + 1]
            denom = y0 - 2.0 * y1 + y2
            if denom < 0:
                step = grid[1] - grid[0]
                best = float(grid[i] + 0.5 * step * (y0 - y2) / denom)
        half /= 5.0
    return LockResult(best, float(requested), complex(t_of(best)),
                      mode_det, mode_rate)


def _stretched_grid(t_max, n, power):
    return t_max * np.linspace(0.0, 1.0, n) ** power


def _rescale(state, factor):
    return TruncatedState.from_vector(state.basis,
                                      state.to_vector() * factor)


def _conditional_march(steady, ham, coeffs, t_grid, probes, tol):
    """g2 plus mode populations of the conditional (post-detection) state.

    Same contract as observables.g2_curve; the probes are singles-sector
    unit vectors whose unnormalized conditional weight |<v|c1(t)>|^2 is
    recorded alongside.
    """
    psi = steady.normalized()
    first = apply_field(coeffs, psi)
    den = first.norm() ** 2
    if den <= 1e-30:
        raise UndefinedG2Error("stationary port intensity vanishes")
    bar = _rescale(first, 1.0 / np.sqrt(den))
    g2 = np.empty(t_grid.size)
    pops = np.empty((t_grid.size, len(probes)))
    t_prev = 0.0
    for i, ti in enumerate(t_grid):
        if ti > t_prev:
            bar = evolve(bar, ham, float(ti - t_prev), tol=tol)
            t_prev = ti
        g2[i] = apply_field(coeffs, bar).norm() ** 2 / den
        for j, v in enumerate(probes):
            pops[i, j] = abs(np.vdot(v, bar.c1)) ** 2
    return g2, pops


# ---------------------------------------------------------------------------
# runners

def _run_spectrum_infinite(cfg):
    a = cfg.spacing
    deltas = np.linspace(cfg.delta_min, cfg.delta_max, cfg.n_delta)
    if cfg.waist == 0:
        ls = np.linspace(cfg.l_min, cfg.l_max, cfg.n_l)
        rows, res_rows = [], []
        for L in ls:
            t = dual_transmission(deltas, float(L), a)
            rows.extend((L, d, tv.real, tv.imag, abs(tv) ** 2)
                        for d, tv in zip(deltas, t))
            try:
                dstar, t_res = resonance_curve(float(L), a)
                res_rows.append((L, dstar, t_res.real, t_res.imag))
            except PoleError:
                continue
        tables = [
            Table("tmap",
                  ("separation", "detuning", "t_re", "t_im", "t_abs2"),
                  ("lambda", "gamma", "", "", ""), np.array(rows)),
            Table("resonance",
                  ("separation", "delta_star", "t_res_re", "t_res_im"),
                  ("lambda", "gamma", "", ""), np.array(res_rows)),
        ]
        return tables, {"separations": int(ls.size),
                        "resonance_rows": len(res_rows)}

    beam = GaussianBeam(waist=cfg.waist)
    t = np.atleast_1d(gaussian_transmission_infinite(
        beam, deltas, cfg.separation, a))
    grows = [(d, tv.real, tv.imag, abs(tv) ** 2)
             for d, tv in zip(deltas, t)]
    k = PhysicalParams().k
    _, kx, ky, mask = momentum_grid(k, cfg.n_k, cfg.k_cutoff)
    drows = [(x, y, dispersion_shift((x, y), a).value)
             for x, y in zip(kx[mask], ky[mask])]
    tables = [
        Table("gspectrum", ("detuning", "t_re", "t_im", "t_abs2"),
              ("gamma", "", "", ""), np.array(grows)),
        Table("dispersionmap", ("kx", "ky", "shift"),
              ("1/lambda", "1/lambda", "gamma"), np.array(drows)),
    ]
    i = int(np.argmax(np.abs(t)))
    return tables, {"peak_detuning": float(deltas[i]),
                    "peak_t_abs": float(abs(t[i]))}


def _run_shift_vs_l(cfg):
    a = cfg.spacing
    k = PhysicalParams().k
    width = collective_linewidth(a)
    ls = np.linspace(cfg.l_min, cfg.l_max, cfg.n_l)
    rows = []
    for L in ls:
        mc = coupling_fourier(0.0, float(L), a)
        kl = k * L
        rows.append((L, mc.shift, mc.linewidth,
                     1.5 / kl ** 3, width * np.sin(kl)))
    table = Table("shift",
                  ("separation", "shift", "width", "dipole_model",
                   "sine_model"),
                  ("lambda", "gamma", "gamma", "gamma", "gamma"),
                  np.array(rows))
    return [table], {"separations": int(ls.size)}


def _run_spectrum_finite(cfg):
    mode = _mode(cfg)
    atoms = _atoms(cfg, mode)
    mats = assemble_couplings(atoms)
    drive = drive_vector(atoms, mode, cfg.strength)
    eta = _port_eta(cfg)
    fwd = detection_coeffs(atoms, mode, cfg.strength, "forward", eta=eta)
    bwd = detection_coeffs(atoms, mode, cfg.strength, "backward", eta=eta)
    deltas = np.linspace(cfg.delta_min, cfg.delta_max, cfg.n_delta)
    rows = []
    for d in deltas:
        ham = build_hamiltonian(atoms, mats, drive, float(d), cfg.max_exc)
        ss = steady_state_weak_drive(ham)
        t = transmission_finite(ss, fwd)
        r = transmission_finite(ss, bwd)
        rows.append((d, t.real, t.imag, abs(t) ** 2,
                     r.real, r.imag, abs(r) ** 2))
    rows = np.array(rows)
    table = Table("spectrum",
                  ("detuning", "t_re", "t_im", "t_abs2",
                   "r_re", "r_im", "r_abs2"),
                  ("gamma", "", "", "", "", "", ""), rows)
    i_t = int(np.argmax(rows[:, 3]))
    i_r = int(np.argmax(rows[:, 6]))
    summary = {"peak_t_detuning": float(deltas[i_t]),
               "peak_t_abs2": float(rows[i_t, 3]),
               "peak_r_detuning": float(deltas[i_r]),
               "peak_r_abs2": float(rows[i_r, 6])}
    return [table], summary


def _locked_point(cfg, atoms, mats, drive, fwd):
    if cfg.lock:
        return lock_to_transmission_max(atoms, mats, drive, fwd,
                                        cfg.detuning, cfg.max_exc)
    t_of = _transmission_solver(atoms, mats, drive, fwd, cfg.max_exc)
    return LockResult(cfg.detuning, cfg.detuning, complex(t_of(cfg.detuning)),
                      cfg.detuning, 0.0)


def _run_g2(cfg):
    mode = _mode(cfg)
    atoms = _atoms(cfg, mode)
    mats = assemble_couplings(atoms)
    drive = drive_vector(atoms, mode, cfg.strength)
    fwd = detection_coeffs(atoms, mode, cfg.strength, "forward",
                           eta=_port_eta(cfg))
    locked = _locked_point(cfg, atoms, mats, drive, fwd)

    ham = build_hamiltonian(atoms, mats, drive, locked.detuning, cfg.max_exc)
    ss = steady_state_weak_drive(ham)
    slow, fast = extract_modes(ham, ss)
    t_grid = _stretched_grid(cfg.t_max, cfg.n_t, cfg.t_stretch)
    g2, pops = _conditional_march(ss, ham, fwd, t_grid, (slow, fast), cfg.tol)

    t_of = _transmission_solver(atoms, mats, drive, fwd, cfg.max_exc)
    delay = float(delay_time_finite(t_of, [locked.detuning],
                                    cfg.delta_step)[0])

    curve = Table("g2curve", ("time", "g2", "pop_slow", "pop_fast"),
                  ("1/gamma", "", "", ""),
                  np.column_stack([t_grid, g2, pops]))
    i_min = int(np.argmin(g2))
    srow = (locked.detuning, locked.requested, cfg.separation,
            abs(locked.transmission) ** 2, delay,
            float(g2[i_min]), float(t_grid[i_min]), float(g2[-1]))
    summary_tab = Table(
        "g2summary",
        ("locked_detuning", "requested_detuning", "separation", "t_abs2",
         "delay", "g2_min", "t_at_min", "g2_final"),
        ("gamma", "gamma", "lambda", "", "1/gamma", "", "1/gamma", ""),
        np.array([srow]))
    summary = {"locked_detuning": locked.detuning,
               "requested_detuning": locked.requested,
               "t_abs2": abs(locked.transmission) ** 2,
               "delay": delay,
               "g2_min": float(g2[i_min]),
               "t_at_min": float(t_grid[i_min]),
               "g2_final": float(g2[-1])}
    return [curve, summary_tab], summary


def _run_momentum(cfg):
    mode = _mode(cfg)
    atoms = _atoms(cfg, mode)
    mats = assemble_couplings(atoms)
    drive = drive_vector(atoms, mode, cfg.strength)
    fwd = detection_coeffs(atoms, mode, cfg.strength, "forward")
    locked = _locked_point(cfg, atoms, mats, drive, fwd)
    ham = build_hamiltonian(atoms, mats, drive, locked.detuning, cfg.max_exc)
    ss = steady_state_weak_drive(ham)

    k = PhysicalParams().k
    ax, kx, ky, mask = momentum_grid(k, cfg.n_k, cfg.k_cutoff)
    kx_in, ky_in = kx[mask], ky[mask]
    k1 = (cfg.k1x, cfg.k1y)

    pair_rows = []
    for t in cfg.times:
        dens = momentum_map(k1, float(t), ss, ham, atoms, mode, cfg.strength,
                            kx_in, ky_in, tol=cfg.tol)
        pair_rows.extend((t, cfg.k1x, cfg.k1y, x, y, dv)
                         for x, y, dv in zip(kx_in, ky_in, dens))

    cut_rows = []
    zeros = np.zeros_like(ax)
    for k1y in ax:
        for t in cfg.times:
            dens = momentum_map((0.0, float(k1y)), float(t), ss, ham, atoms,
                                mode, cfg.strength, zeros, ax, tol=cfg.tol)
            cut_rows.extend((t, k1y, k2y, dv) for k2y, dv in zip(ax, dens))

    tables = [
        Table("pairmap",
              ("time", "k1x", "k1y", "k2x", "k2y", "density"),
              ("1/gamma", "1/lambda", "1/lambda", "1/lambda", "1/lambda",
               ""), np.array(pair_rows)),
        Table("axiscut", ("time", "k1y", "k2y", "density"),
              ("1/gamma", "1/lambda", "1/lambda", ""), np.array(cut_rows)),
    ]
    first = np.array(pair_rows)
    sel = first[:, 0] == cfg.times[0]
    j = int(np.argmax(first[sel, 5]))
    summary = {"locked_detuning": locked.detuning,
               "argmax_k2x": float(first[sel][j, 3]),
               "argmax_k2y": float(first[sel][j, 4]),
               "argmax_density": float(first[sel][j, 5])}
    return tables, summary


def _run_modes_fit(cfg):
    a = cfg.spacing
    k = PhysicalParams().k
    om0 = cfg.strength
    onsite = intralayer_shift(a).value
    width0 = collective_linewidth(a)
    sym = np.array([1.0, 1.0]) / np.sqrt(2.0)
    anti = np.array([1.0, -1.0]) / np.sqrt(2.0)
    ls = np.linspace(cfg.l_min, cfg.l_max, cfg.n_l)
    rows, failures = [], 0
    for L in ls:
        dm = dimer_model(float(L), a, omega=om0)
        gl = coupling_fourier(0.0, float(L), a).value
        g0 = onsite + 1j * width0
        mats = CouplingMatrices(G=np.array([[g0, gl], [gl, g0]]), gamma=1.0)
        atoms = AtomSet(positions=np.array([[0.0, 0.0, 0.0],
                                            [0.0, 0.0, float(L)]]),
                        array_id=np.array([1, 2]))
        om = om0 * np.exp(1j * k * atoms.positions[:, 2])
        ham = build_hamiltonian(atoms, mats, om, cfg.detuning, max_exc=1)
        det_p = cfg.detuning + (g0 + gl).real
        det_m = cfg.detuning + (g0 - gl).real
        try:
            fits = [_fit_projection(ham, v, w, d, cfg)
                    for v, w, d in ((sym, dm.width_plus, det_p),
                                    (anti, dm.width_minus, det_m))]
        except FitFailureError:
            failures += 1
            continue
        fit_p, fit_m = fits
        rows.append((
            L,
            dm.shift_plus, dm.width_plus, abs(dm.drive_plus),
            cfg.detuning - fit_p.detuning + onsite, fit_p.decay,
            abs(fit_p.drive),
            dm.shift_minus, dm.width_minus, abs(dm.drive_minus),
            cfg.detuning - fit_m.detuning + onsite, fit_m.decay,
            abs(fit_m.drive),
        ))
    table = Table(
        "modes",
        ("separation",
         "shift_plus", "width_plus", "drive_plus",
         "fit_shift_plus", "fit_width_plus", "fit_drive_plus",
         "shift_minus", "width_minus", "drive_minus",
         "fit_shift_minus", "fit_width_minus", "fit_drive_minus"),
        ("lambda",) + ("gamma",) * 12,
        np.array(rows) if rows else np.empty((0, 13)))
    return [table], {"rows": len(rows), "fit_failures": failures}


def _fit_projection(ham, vector, width_hint, det_hint, cfg):
    # window long enough to resolve the decay, sampling dense enough to
    # resolve the oscillation (aliasing wrecks the frequency estimate)
    t_end = min(8.0 / max(width_hint, 2e-3), 4000.0)
    n_osc = int(np.ceil(4.0 * t_end * abs(det_hint) / (2.0 * np.pi))) + 1
    n = max(cfg.n_t, min(20000, n_osc))
    ts = np.linspace(0.0, t_end, n)
    prop = ham.propagator(float(ts[1] - ts[0]))
    vec = TruncatedState.vacuum(ham.basis).to_vector()
    series = np.empty(ts.size, dtype=complex)
    for i in range(ts.size):
        if i:
            vec = prop @ vec
        series[i] = np.vdot(vector, vec[1:1 + ham.basis.n_atoms])
    return fit_mode_parameters(ts, series)


def _run_delay_scan(cfg):
    rows = []
    requested = cfg.detuning
    ls = np.linspace(cfg.l_min, cfg.l_max, cfg.n_l)
    mode = _mode(cfg)
    for L in ls:
        sub = dataclasses.replace(cfg, separation=float(L))
        atoms = _atoms(sub, mode)
        mats = assemble_couplings(atoms)
        drive = drive_vector(atoms, mode, cfg.strength)
        fwd = detection_coeffs(atoms, mode, cfg.strength, "forward",
                               eta=_port_eta(cfg))
        locked = lock_to_transmission_max(atoms, mats, drive, fwd,
                                          requested, cfg.max_exc)
        t_of = _transmission_solver(atoms, mats, drive, fwd, cfg.max_exc)
        delay = float(delay_time_finite(t_of, [locked.detuning],
                                        cfg.delta_step)[0])
        rows.append((L, locked.detuning, abs(locked.transmission) ** 2,
                     delay, locked.mode_rate))
        requested = locked.detuning   # follow the branch continuously
    rows = np.array(rows)
    table = Table("delayscan",
                  ("separation", "locked_detuning", "t_abs2", "delay",
                   "mode_rate"),
                  ("lambda", "gamma", "", "1/gamma", "gamma"), rows)
    i = int(np.argmax(rows[:, 3]))
    summary = {"max_delay": float(rows[i, 3]),
               "separation_at_max": float(rows[i, 0]),
               "detuning_at_max": float(rows[i, 1])}
    return [table], summary


def _run_paraxial(cfg):
    beam = GaussianBeam(waist=cfg.waist)
    k = PhysicalParams().k
    k_eps = np.sqrt(2.0 * cfg.epsilon) * k
    kps = np.linspace(0.0, 3.0 * k_eps, 201)
    amp = np.sqrt(2.0 * np.pi) * np.abs(mode_fourier(beam, kps)) \
        / cfg.waist ** 2
    profile = Table("modeprofile", ("k_perp", "amplitude"),
                    ("1/lambda", ""), np.column_stack([kps, amp]))
    ws = np.linspace(cfg.w_min, cfg.w_max, cfg.n_w)
    frac = [paraxial_tail_fraction(GaussianBeam(waist=float(w)), cfg.epsilon)
            for w in ws]
    tail = Table("tailfraction", ("waist", "epsilon", "fraction"),
                 ("lambda", "", ""),
                 np.column_stack([ws, np.full(ws.size, cfg.epsilon), frac]))
    at_waist = paraxial_tail_fraction(beam, cfg.epsilon)
    return [profile, tail], {"fraction_at_waist": float(at_waist)}


_RUNNERS = {
    "spectrum-infinite": _run_spectrum_infinite,
    "shift-vs-L": _run_shift_vs_l,
    "spectrum-finite": _run_spectrum_finite,
    "g2": _run_g2,
    "momentum-density": _run_momentum,
    "modes-fit": _run_modes_fit,
    "delay-scan": _run_delay_scan,
    "paraxial-check": _run_paraxial,
}


# ---------------------------------------------------------------------------
# orchestration

@dataclass(frozen=True)
class RunResult:
    config: ExperimentConfig
    tables: tuple
    summary: dict


def _thread_cap(n):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return nullcontext()
    return threadpool_limits(limits=max(1, int(n)))


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigurationError("; ".join(report.problems))
    with _thread_cap(cfg.threads):
        tables, summary = _RUNNERS[cfg.kind](cfg)
    return RunResult(cfg, tuple(tables), dict(summary))


def write_run(result: RunResult, out_dir=None):
    """Resolved config, CSV tables with sidecars, and a run-level manifest."""
    from pathlib import Path
    import json

    cfg = result.config
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    text = cfg.to_text()
    (out / "config.ini").write_text(text)
    cfg_hash = artifacts.config_hash(text)
    stamp = artifacts.utc_stamp()
    paths = [out / "config.ini"]
    for tab in result.tables:
        paths.append(artifacts.write_table(
            tab, out, kind=cfg.kind, cfg_hash=cfg_hash, seed=cfg.seed,
            code_version=__version__, stamp=stamp))
    manifest = {"kind": cfg.kind, "code_version": __version__,
                "config_hash": cfg_hash, "seed": cfg.seed, "created": stamp,
                "artifacts": sorted(p.name for p in paths
                                    if p.suffix == ".csv"),
                "summary": result.summary}
    (out / "run.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    paths.append(out / "run.json")
    return paths
