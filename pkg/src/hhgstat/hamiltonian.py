"""Intraband interaction Hamiltonian for the H3/H5 pair and its time evolution.

Units: energies in eV, times in fs, hbar = 1 internally, so a generator
callable returns H/hbar in rad/fs. The classical vector potential enters only
through the phase ``theta(t) = pi * a_tilde(t) / k_c``; ``a_tilde`` and ``k_c``
must share a unit (1/nm when built from lab parameters).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy import constants as C

from .errors import (
    NonHermitian,
    NonPositiveInput,
    StepTooLarge,
    TruncationOverflow,
    ZeroIntensity,
)
from .fock import (
    TRUNCATION_TOL,
    ModeLabel,
    TwoModeState,
    g2_cross,
    g2_single,
    mean_photon,
    mode_operators,
)

HBAR_EV_FS = C.hbar / C.e * 1e15
SPEED_OF_LIGHT_NM_FS = C.c * 1e-6
HERMITIAN_TOL = 1e-12


class Term(str, enum.Enum):
    CONSTANT = "constant"
    LINEAR = "linear"
    SINGLE_MODE = "single_mode"
    TWO_MODE = "two_mode"  # a3 a5 + a3^+ a5^+ part of the cross term
    MIXING = "mixing"  # a3 a5^+ + a3^+ a5 part of the cross term


# the vacuum-energy shift is a pure phase and is dropped unless asked for
DEFAULT_TERMS = frozenset({Term.LINEAR, Term.SINGLE_MODE, Term.TWO_MODE, Term.MIXING})
SQUEEZING_TERMS = frozenset({Term.SINGLE_MODE, Term.TWO_MODE, Term.MIXING})


def carrier_omega(wavelength_nm: float) -> float:
    """Angular frequency in rad/fs."""
    return 2 * np.pi * SPEED_OF_LIGHT_NM_FS / wavelength_nm


@dataclass(frozen=True)
class HamiltonianParams:
    n_e: float
    e_g_halfwidth_ev: float
    k_c: float
    omega3: float
    omega5: float
    c3: float
    c5: float
    volume_nm3: float | None = None

    def __post_init__(self):
        if self.n_e < 0 or self.e_g_halfwidth_ev < 0:
            raise NonPositiveInput("n_e and the band half-width must be non-negative")
        if not (self.k_c > 0 and self.omega3 > 0):
            raise NonPositiveInput("k_c and omega3 must be positive")
        if abs(self.omega5 / self.omega3 - 5 / 3) > 1e-12:
            raise ValueError("omega5/omega3 must equal 5/3")
        if self.c3 < 0 or self.c5 < 0:
            raise NonPositiveInput("couplings must be non-negative")
        if self.c3 > 0 and self.c5 > 0:
            if abs(self.c3 / self.c5 - np.sqrt(self.omega5 / self.omega3)) > 1e-12:
                raise ValueError("c3/c5 must equal sqrt(omega5/omega3)")
        elif (self.c3 > 0) != (self.c5 > 0):
            raise ValueError("c3 and c5 must vanish together")

    @classmethod
    def from_coupling(cls, n_e: float, e_g_halfwidth_ev: float, k_c: float,
                      omega_l: float, c3: float) -> HamiltonianParams:
        """Build from the H3 coupling; c5 follows from c_j ~ omega_j^(-1/2)."""
        return cls(n_e, e_g_halfwidth_ev, k_c, 3 * omega_l, 5 * omega_l, c3, c3 * np.sqrt(3 / 5))

    @classmethod
    def from_lattice(cls, n_e: float, e_g_halfwidth_ev: float, lattice_nm: float,
                     wavelength_nm: float, volume_nm3: float) -> HamiltonianParams:
        """Couplings c_j = (pi/K_c) sqrt(pi e^2 / (omega_j V)) in Gaussian natural units.

        With hbar = c = 1, e^2 is the fine-structure constant and omega_j is
        taken as a wavenumber (rad/nm); K_c = pi / a is the zone-edge momentum.
        """
        if not (lattice_nm > 0 and wavelength_nm > 0 and volume_nm3 > 0):
            raise NonPositiveInput("lattice constant, wavelength and volume must be positive")
        k_c = np.pi / lattice_nm
        w = carrier_omega(wavelength_nm)
        c = [(np.pi / k_c) * np.sqrt(np.pi * C.fine_structure / (j * w / SPEED_OF_LIGHT_NM_FS * volume_nm3))
             for j in (3, 5)]
        return cls(n_e, e_g_halfwidth_ev, k_c, 3 * w, 5 * w, c[0], c[1], volume_nm3)

    def replace(self, **kw) -> HamiltonianParams:
        from dataclasses import replace
        return replace(self, **kw)


@dataclass(frozen=True)
class PulseSpec:
    """Classical drive a_tilde(t) = peak * envelope(t - center) * cos(omega_l (t - center) + phase)."""

    peak_a_tilde: float
    omega_l: float = carrier_omega(2100.0)
    duration_fwhm: float = 80.0
    envelope: str = "gaussian"
    phase: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        if not self.duration_fwhm > 0:
            raise NonPositiveInput("pulse duration must be positive")
        if self.envelope not in ("gaussian", "flat"):
            raise ValueError(f"unknown envelope {self.envelope!r}")

    def envelope_at(self, t):
        x = (np.asarray(t, dtype=float) - self.center) / self.duration_fwhm
        if self.envelope == "gaussian":
            # field envelope whose intensity has the stated FWHM
            return np.exp(-2 * np.log(2) * x**2)
        return (np.abs(x) <= 0.5).astype(float)

    def a_tilde(self, t):
        tt = np.asarray(t, dtype=float) - self.center
        return self.peak_a_tilde * self.envelope_at(t) * np.cos(self.omega_l * tt + self.phase)

    def support(self, width: float = 2.0) -> tuple[float, float]:
        half = width * self.duration_fwhm if self.envelope == "gaussian" else 0.5 * self.duration_fwhm
        return self.center - half, self.center + half


def pulse_from_laser(intensity_tw_cm2: float, wavelength_nm: float = 2100.0,
                     duration_fs: float = 80.0, **kw) -> PulseSpec:
    """Pulse whose peak a_tilde = e E0 / (hbar omega_L) is in 1/nm (vacuum field)."""
    if intensity_tw_cm2 < 0:
        raise NonPositiveInput("intensity must be non-negative")
    e0 = np.sqrt(2 * intensity_tw_cm2 * 1e16 / (C.epsilon_0 * C.c))  # V/m
    omega = 2 * np.pi * C.c / (wavelength_nm * 1e-9)
    peak = C.e * e0 / (C.hbar * omega) * 1e-9
    return PulseSpec(peak_a_tilde=float(peak), omega_l=carrier_omega(wavelength_nm),
                     duration_fwhm=duration_fs, **kw)


class _AlignedBasis:
    """Sparse matrices re-expressed on one shared CSR sparsity pattern.

    Evaluating sum_k coef_k M_k is then a single dense contraction over the
    stored entries.
    """

    def __init__(self, mats: Sequence[sp.spmatrix]):
        n = mats[0].shape[0]
        pattern = sum(abs(m) for m in mats).tocsr()
        pattern.sort_indices()
        self.shape = (n, n)
        self.indptr = pattern.indptr.copy()
        self.indices = pattern.indices.copy()
        rows = np.repeat(np.arange(n), np.diff(pattern.indptr))
        lin = rows.astype(np.int64) * n + pattern.indices
        self.data = np.zeros((len(mats), lin.size), dtype=complex)
        for k, m in enumerate(mats):
            m = m.tocoo()
            pos = np.searchsorted(lin, m.row.astype(np.int64) * n + m.col)
            np.add.at(self.data[k], pos, m.data)

    def combine(self, coefs: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((coefs @ self.data, self.indices, self.indptr), shape=self.shape)


class HHGHamiltonian:
    """Time-dependent interaction-picture generator for one pulse.

    Calling the object returns H(t)/hbar in rad/fs; :meth:`energy` returns H(t) in eV.
    ``linear_scale`` and ``quadratic_scale`` multiply the coherent-displacement
    and squeezing couplings independently.
    """

    def __init__(self, params: HamiltonianParams, pulse: PulseSpec, cutoffs=(8, 8), *,
                 terms: Iterable[Term | str] = DEFAULT_TERMS,
                 linear_scale: float = 1.0, quadratic_scale: float = 1.0):
        self.params = params
        self.pulse = pulse
        self.terms = frozenset(Term(t) for t in terms)
        self.linear_scale = float(linear_scale)
        self.quadratic_scale = float(quadratic_scale)
        ops = mode_operators(cutoffs)
        self.cutoffs = tuple(int(c) for c in (cutoffs if not np.isscalar(cutoffs) else (cutoffs, cutoffs)))
        a3, a5, n3, n5, eye = ops["a3"], ops["a5"], ops["n3"], ops["n5"], ops["I"]
        a3d, a5d = a3.conj().T.tocsr(), a5.conj().T.tocsr()
        self._basis = _AlignedBasis([
            eye,                               # 0  constant shift
            a3, a3d, a5, a5d,                  # 1-4 linear
            a3 @ a3, a3d @ a3d, eye + 2 * n3,  # 5-7 (a3 + a3^+)^2 pieces
            a5 @ a5, a5d @ a5d, eye + 2 * n5,  # 8-10
            a3 @ a5, a3d @ a5d,                # 11-12 pair creation/annihilation
            a3 @ a5d, a3d @ a5,                # 13-14 mode mixing
        ])
        self._basis_norms = np.array([_one_norm(sp.csr_matrix((d, self._basis.indices, self._basis.indptr),
                                                              shape=self._basis.shape))
                                      for d in self._basis.data])

    def coefficients(self, t: float) -> np.ndarray:
        """Coefficients (eV) of the fixed operator basis at time t."""
        theta = np.pi * float(self.pulse.a_tilde(t)) / self.params.k_c
        c = np.cos(theta)
        return self._assemble(t, np.sin(theta), c, 1.0 - c)

    def _assemble(self, t, s, c, shift) -> np.ndarray:
        p = self.params
        pre = p.n_e * p.e_g_halfwidth_ev
        e3, e5 = np.exp(-1j * p.omega3 * t), np.exp(-1j * p.omega5 * t)
        k = np.zeros(15, dtype=complex)
        if Term.CONSTANT in self.terms:
            k[0] = shift
        if Term.LINEAR in self.terms:
            lin = s * self.linear_scale
            k[1], k[2] = lin * p.c3 * e3, lin * p.c3 * np.conj(e3)
            k[3], k[4] = lin * p.c5 * e5, lin * p.c5 * np.conj(e5)
        q = 0.5 * c * self.quadratic_scale
        if Term.SINGLE_MODE in self.terms:
            k[5], k[6], k[7] = q * p.c3**2 * e3**2, q * p.c3**2 * np.conj(e3) ** 2, q * p.c3**2
            k[8], k[9], k[10] = q * p.c5**2 * e5**2, q * p.c5**2 * np.conj(e5) ** 2, q * p.c5**2
        if Term.TWO_MODE in self.terms:
            k[11] = 2 * q * p.c3 * p.c5 * e3 * e5
            k[12] = np.conj(k[11])
        if Term.MIXING in self.terms:
            k[13] = 2 * q * p.c3 * p.c5 * e3 * np.conj(e5)
            k[14] = np.conj(k[13])
        return pre * k

    def norm_bound(self) -> float:
        """Upper bound on the 1-norm of H(t)/hbar over all t (|sin|, |cos| <= 1)."""
        mags = np.abs(self._assemble(0.0, 1.0, 1.0, 2.0))
        return float(mags @ self._basis_norms) / HBAR_EV_FS

    def energy(self, t: float) -> sp.csr_matrix:
        return self._basis.combine(self.coefficients(t))

    def __call__(self, t: float) -> sp.csr_matrix:
        return self._basis.combine(self.coefficients(t) / HBAR_EV_FS)


def check_hermitian(h, tol: float = HERMITIAN_TOL) -> None:
    h = sp.csr_matrix(h)
    scale = max(abs(h).max(), 1e-300) if h.nnz else 1.0
    diff = h - h.conj().T
    dev = abs(diff).max() if diff.nnz else 0.0
    if dev > tol * scale:
        raise NonHermitian(f"|H - H^+| = {dev:.3g} exceeds {tol:g} relative")


def build_generator(params: HamiltonianParams, pulse: PulseSpec, t: float, cutoffs=(8, 8),
                    **kw) -> sp.csr_matrix:
    """H_I(t) in eV as a sparse matrix on the flattened two-mode space."""
    h = HHGHamiltonian(params, pulse, cutoffs, **kw).energy(t)
    check_hermitian(h)
    return h


# ---------------------------------------------------------------------------
# propagation

# fourth-order commutator-free Magnus (two exponentials, Gauss-Legendre nodes)
_GAUSS = (0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6)
_A1 = (3 - 2 * np.sqrt(3)) / 12
_A2 = (3 + 2 * np.sqrt(3)) / 12


def _one_norm(m) -> float:
    if sp.issparse(m):
        return float(abs(m).sum(axis=0).max()) if m.nnz else 0.0
    return float(np.abs(m).sum(axis=0).max())


def _expm_action(omega, psi: np.ndarray, tol: float = 1e-17) -> np.ndarray:
    # Taylor series of exp(omega) psi; callers keep ||omega|| small
    out = psi.copy()
    term = psi
    scale = np.linalg.norm(psi)
    for k in range(1, 60):
        term = (omega @ term) / k
        out = out + term
        if np.linalg.norm(term) <= tol * scale:
            return out
    raise StepTooLarge("Taylor series of the step propagator did not converge")


@dataclass
class EvolutionResult:
    final_state: TwoModeState
    trajectory: list[tuple[float, TwoModeState]] | None
    diagnostics: dict = field(default_factory=dict)


def _boundary_mass(psi: np.ndarray, shape: tuple[int, int]) -> float:
    p = np.abs(psi.reshape(shape)) ** 2
    return float(max(p[-2:, :].sum(), p[:, -2:].sum()))


def evolve(initial: TwoModeState, hamiltonian: Callable[[float], object], t_grid, *,
           method: str = "magnus4", max_norm_step: float = 0.1,
           truncation_tol: float = TRUNCATION_TOL, store_every: int | None = None,
           norm_tol: float = 1e-8) -> EvolutionResult:
    """Propagate ``initial`` over ``t_grid`` under ``hamiltonian(t)`` (rad/fs).

    ``method`` is ``magnus4`` (commutator-free fourth order, sparse exponential
    action) or ``piecewise`` (H frozen at each step midpoint, dense
    scaling-and-squaring exponential). Every step must satisfy
    ``||H|| dt < max_norm_step`` with ||.|| the matrix 1-norm.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if method not in ("magnus4", "piecewise"):
        raise ValueError(f"unknown method {method!r}")
    shape = initial.amplitudes.shape
    psi = initial.flat().copy()
    traj = [] if store_every else None
    if traj is not None:
        traj.append((float(t_grid[0]), initial))
    worst = 0.0
    for i in range(t_grid.size - 1):
        t0, dt = t_grid[i], t_grid[i + 1] - t_grid[i]
        if method == "magnus4":
            h1 = hamiltonian(t0 + _GAUSS[0] * dt)
            h2 = hamiltonian(t0 + _GAUSS[1] * dt)
            nrm = max(_one_norm(h1), _one_norm(h2)) * dt
            worst = max(worst, nrm)
            if nrm >= max_norm_step:
                raise StepTooLarge(f"||H|| dt = {nrm:.3g} at t = {t0:g} exceeds {max_norm_step:g}")
            psi = _expm_action(-1j * dt * (_A2 * h1 + _A1 * h2), psi)
            psi = _expm_action(-1j * dt * (_A1 * h1 + _A2 * h2), psi)
        else:
            h = hamiltonian(t0 + 0.5 * dt)
            nrm = _one_norm(h) * dt
            worst = max(worst, nrm)
            if nrm >= max_norm_step:
                raise StepTooLarge(f"||H|| dt = {nrm:.3g} at t = {t0:g} exceeds {max_norm_step:g}")
            h = h.toarray() if sp.issparse(h) else np.asarray(h)
            psi = scipy.linalg.expm(-1j * dt * h) @ psi
        edge = _boundary_mass(psi, shape)
        if edge > truncation_tol:
            raise TruncationOverflow(f"population {edge:.3g} at the Fock cutoff by t = {t_grid[i + 1]:g}")
        if traj is not None and (i + 1) % store_every == 0:
            traj.append((float(t_grid[i + 1]), TwoModeState.normalized(psi.reshape(shape))))
    norm2 = float(np.vdot(psi, psi).real)
    if abs(norm2 - 1) > norm_tol:
        raise TruncationOverflow(f"norm drifted to {norm2!r}")
    final = TwoModeState.normalized(psi.reshape(shape))
    diag = {"steps": int(t_grid.size - 1), "method": method, "max_norm_dt": worst,
            "norm_deviation": abs(norm2 - 1)}
    return EvolutionResult(final, traj, diag)


def step_grid(t0: float, t1: float, hamiltonian: Callable[[float], object], *,
              max_norm_step: float = 0.1, samples: int = 64, safety: float = 0.5,
              max_period: float | None = None) -> np.ndarray:
    """Uniform grid on [t0, t1] whose step keeps ||H|| dt below the bound.

    Uses ``hamiltonian.norm_bound()`` when available, otherwise samples the
    norm at ``samples`` points; ``max_period`` additionally caps
    the step (e.g. a fraction of the fastest rotating-frame period).
    """
    bound = getattr(hamiltonian, "norm_bound", None)
    if bound is not None:
        hmax = bound()
    else:
        hmax = max(_one_norm(hamiltonian(t)) for t in np.linspace(t0, t1, samples))
    dt = (t1 - t0) if hmax == 0 else safety * max_norm_step / hmax
    if max_period is not None:
        dt = min(dt, max_period)
    n = max(1, int(np.ceil((t1 - t0) / dt)))
    return np.linspace(t0, t1, n + 1)


def convergence_check(initial: TwoModeState, hamiltonian, t_grid, **kw) -> dict:
    """Fidelity deficits at step h and h/2 against an h/4 reference, and the implied order."""
    grids = [np.asarray(t_grid, dtype=float)]
    for _ in range(2):
        g = grids[-1]
        grids.append(np.sort(np.concatenate([g, 0.5 * (g[1:] + g[:-1])])))
    states = [evolve(initial, hamiltonian, g, **kw).final_state for g in grids]
    ref = states[-1].flat()
    err = [np.linalg.norm(s.flat() - ref * np.vdot(ref, s.flat()) / abs(np.vdot(ref, s.flat())))
           for s in states[:2]]
    order = float(np.log2(err[0] / err[1])) if err[1] > 0 and err[0] > 0 else float("inf")
    deficit = [1 - abs(np.vdot(ref, s.flat())) ** 2 for s in states[:2]]
    return {"error_h": float(err[0]), "error_h2": float(err[1]), "observed_order": order,
            "fidelity_deficit_h": float(deficit[0]), "fidelity_deficit_h2": float(deficit[1])}


# ---------------------------------------------------------------------------
# CSI parameter and intensity scans

def r_parameter(g33: float, g55: float, g35: float) -> float:
    """R = g35^2 / (g33 g55); R > 1 violates the classical Cauchy-Schwarz bound."""
    if not (g33 > 0 and g55 > 0 and g35 > 0):
        raise NonPositiveInput(f"g2 values must be positive, got ({g33}, {g55}, {g35})")
    return g35**2 / (g33 * g55)


@dataclass(frozen=True)
class ScanRecord:
    intensity: float
    g33: float | None
    g55: float | None
    g35: float | None
    r: float | None
    n3: float | None = None
    n5: float | None = None
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def scan_intensity(params: HamiltonianParams, pulse_family: Callable[[float], PulseSpec],
                   initial: TwoModeState, intensities, *, cutoffs=None,
                   terms: Iterable[Term | str] = DEFAULT_TERMS, linear_scale: float = 1.0,
                   quadratic_scale: float = 1.0, n_e_exponent: float | None = None,
                   reference_intensity: float | None = None, window: float = 2.0,
                   steps_per_period: int = 40, method: str = "magnus4",
                   min_photons: float = 1e-14, **evolve_kw) -> list[ScanRecord]:
    """Evolve ``initial`` through one pulse per intensity and collect g2 values and R.

    Failing points are recorded with ``status`` set to the error class name
    and the scan continues. With ``n_e_exponent`` set, the electron number
    scales as (I / reference_intensity)^n_e_exponent.
    """
    grid_i = np.asarray(intensities, dtype=float)
    if np.any(np.diff(grid_i) <= 0):
        raise ValueError("intensity grid must be strictly increasing")
    cutoffs = cutoffs or initial.cutoffs
    i_ref = reference_intensity or (grid_i[-1] if grid_i.size and grid_i[-1] > 0 else 1.0)
    out = []
    for inten in grid_i:
        if inten <= 0:
            out.append(ScanRecord(float(inten), None, None, None, None, 0.0, 0.0, "ZeroIntensity"))
            continue
        p = params
        if n_e_exponent is not None:
            p = params.replace(n_e=params.n_e * (inten / i_ref) ** n_e_exponent)
        pulse = pulse_family(float(inten))
        ham = HHGHamiltonian(p, pulse, cutoffs, terms=terms, linear_scale=linear_scale,
                             quadratic_scale=quadratic_scale)
        t0, t1 = pulse.support(window)
        fastest = max(p.omega3 + p.omega5, 2 * p.omega5, pulse.omega_l)
        try:
            grid = step_grid(t0, t1, ham, max_period=2 * np.pi / fastest / steps_per_period,
                             max_norm_step=evolve_kw.get("max_norm_step", 0.1))
            res = evolve(initial, ham, grid, method=method, **evolve_kw)
            st = res.final_state
            n3, n5 = mean_photon(st, ModeLabel.H3), mean_photon(st, ModeLabel.H5)
            if n3 < min_photons or n5 < min_photons:
                raise ZeroIntensity(f"no harmonic photons (n3={n3:.3g}, n5={n5:.3g})")
            g33, g55, g35 = g2_single(st, ModeLabel.H3), g2_single(st, ModeLabel.H5), g2_cross(st)
            out.append(ScanRecord(float(inten), g33, g55, g35, r_parameter(g33, g55, g35), n3, n5))
        except (ZeroIntensity, TruncationOverflow, StepTooLarge, NonHermitian) as exc:
            out.append(ScanRecord(float(inten), None, None, None, None, None, None, type(exc).__name__))
    return out
