"""Strong-field regime classifiers and harmonic-yield scaling fits.

SI internally; inputs use the lab units carried in the field names
(nm, TW/cm^2, um, fs, MHz, eV).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants as C
from scipy import stats

from .errors import (
    DegenerateFit,
    MissingLatticeConstant,
    NoCrossover,
    NonPositiveData,
    NonPositiveInput,
)

TW_CM2 = 1e16  # W/m^2
C_ATOMIC = 1.0 / C.fine_structure  # speed of light in atomic units
DIPOLE_THRESHOLD = 1e-2
RELATIVISTIC_THRESHOLD = 1e-2


@dataclass(frozen=True)
class MaterialParams:
    name: str
    m_star: float  # reduced mass / m_e
    e_gap_ev: float
    lattice_nm: float | None = None

    def __post_init__(self):
        if not (self.m_star > 0 and self.e_gap_ev > 0):
            raise NonPositiveInput(f"{self.name}: m_star and e_gap_ev must be positive")
        if self.lattice_nm is not None and not self.lattice_nm > 0:
            raise NonPositiveInput(f"{self.name}: lattice_nm must be positive")


@dataclass(frozen=True)
class LaserParams:
    wavelength_nm: float = 2100.0
    intensity_tw_cm2: float = 0.15
    waist_um: float | None = 5.0
    duration_fs: float | None = 80.0
    rep_rate_mhz: float | None = 18.66
    avg_power_mw: float | None = None

    def __post_init__(self):
        if not self.wavelength_nm > 0:
            raise NonPositiveInput("wavelength_nm must be positive")
        if not self.intensity_tw_cm2 >= 0:
            raise NonPositiveInput("intensity_tw_cm2 must be non-negative")
        for name in ("waist_um", "duration_fs", "rep_rate_mhz", "avg_power_mw"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise NonPositiveInput(f"{name} must be positive")

    @property
    def omega(self) -> float:
        """Carrier angular frequency in rad/s."""
        return 2 * np.pi * C.c / (self.wavelength_nm * 1e-9)

    @property
    def photon_energy_ev(self) -> float:
        return C.hbar * self.omega / C.e


# GaAs values as quoted with the gamma_K = 0.616 estimate; the lattice constant
# is the standard zincblende value. Si and ZnO constants must be supplied by
# the caller.
MATERIALS = {
    "GaAs": MaterialParams("GaAs", m_star=0.067, e_gap_ev=1.424, lattice_nm=0.565),
}


def peak_field(laser: LaserParams, convention: str = "vacuum", refractive_index: float = 1.0) -> float:
    """Peak electric field in V/m from the peak intensity.

    ``vacuum`` uses I = eps0 c E^2 / 2; ``medium`` divides by the refractive index.
    """
    intensity = laser.intensity_tw_cm2 * TW_CM2
    if convention == "vacuum":
        n = 1.0
    elif convention == "medium":
        if not refractive_index > 0:
            raise NonPositiveInput("refractive_index must be positive")
        n = refractive_index
    else:
        raise ValueError(f"unknown field convention {convention!r}")
    return float(np.sqrt(2 * intensity / (n * C.epsilon_0 * C.c)))


def peak_intensity_from_power(avg_power_mw: float, waist_um: float, rep_rate_mhz: float,
                              duration_fs: float) -> float:
    """Peak intensity (TW/cm^2) of a Gaussian beam and Gaussian pulse train."""
    for v in (avg_power_mw, waist_um, rep_rate_mhz, duration_fs):
        if not v > 0:
            raise NonPositiveInput("average power, waist, rep rate and duration must be positive")
    tau_eff = duration_fs * 1e-15 * np.sqrt(np.pi / (4 * np.log(2)))
    w = waist_um * 1e-6
    peak = 2 * avg_power_mw * 1e-3 / (np.pi * w**2 * rep_rate_mhz * 1e6 * tau_eff)
    return float(peak / TW_CM2)


def _field_positive(laser: LaserParams, **kw) -> float:
    field = peak_field(laser, **kw)
    if not field > 0:
        raise NonPositiveInput("peak field is zero; intensity must be positive")
    return field


def keldysh(material: MaterialParams, laser: LaserParams, **field_kw) -> float:
    """gamma_K = omega_L sqrt(m* E_g) / (e E)."""
    field = _field_positive(laser, **field_kw)
    mass = material.m_star * C.m_e
    return float(laser.omega * np.sqrt(mass * material.e_gap_ev * C.e) / (C.e * field))


def ponderomotive(laser: LaserParams, m_star: float, **field_kw) -> float:
    """U_p = e^2 E^2 / (4 m omega^2) in eV, with m = m_star * m_e."""
    if not m_star > 0:
        raise NonPositiveInput("m_star must be positive")
    field = peak_field(laser, **field_kw)
    up = C.e**2 * field**2 / (4 * m_star * C.m_e * laser.omega**2)
    return float(up / C.e)


def dipole_check(up_ev: float, omega: float, threshold: float = DIPOLE_THRESHOLD) -> tuple[float, bool]:
    """Return z = U_p / (hbar omega) and whether z / 2c is below ``threshold``.

    z and c are taken in atomic units, so c = 1/alpha.
    """
    if up_ev < 0 or not omega > 0:
        raise NonPositiveInput("U_p must be >= 0 and omega > 0")
    z = up_ev * C.e / (C.hbar * omega)
    return float(z), bool(z / (2 * C_ATOMIC) < threshold)


def relativistic_check(up_ev: float, threshold: float = RELATIVISTIC_THRESHOLD) -> tuple[float, bool]:
    """Return z_f = 2 U_p / (m_e c^2) and whether it is below ``threshold``."""
    if up_ev < 0:
        raise NonPositiveInput("U_p must be >= 0")
    zf = 2 * up_ev * C.e / (C.m_e * C.c**2)
    return float(zf), bool(zf < threshold)


def bloch_parameter(material: MaterialParams, laser: LaserParams, **field_kw) -> float:
    """beta = omega_B / omega_L with omega_B = e E a / hbar."""
    if material.lattice_nm is None:
        raise MissingLatticeConstant(f"{material.name} has no lattice constant")
    field = _field_positive(laser, **field_kw)
    omega_b = C.e * field * material.lattice_nm * 1e-9 / C.hbar
    return float(omega_b / laser.omega)


@dataclass(frozen=True)
class RegimeReport:
    material: str
    gamma_k: float
    up_ev: float
    z: float
    z_f: float
    beta_bloch: float | None
    photon_energy_ev: float
    dipole_ok: bool
    nonrelativistic_ok: bool
    regime: str  # "tunneling" (gamma_K < 1) or "multiphoton"

    def rows(self) -> list[tuple[str, object]]:
        return [
            ("material", self.material),
            ("gamma_k", self.gamma_k),
            ("up_ev", self.up_ev),
            ("z", self.z),
            ("z_f", self.z_f),
            ("beta_bloch", "" if self.beta_bloch is None else self.beta_bloch),
            ("photon_energy_ev", self.photon_energy_ev),
            ("dipole_ok", self.dipole_ok),
            ("nonrelativistic_ok", self.nonrelativistic_ok),
            ("regime", self.regime),
        ]


def regime_report(material: MaterialParams, laser: LaserParams, **field_kw) -> RegimeReport:
    gamma = keldysh(material, laser, **field_kw)
    up = ponderomotive(laser, material.m_star, **field_kw)
    z, dip_ok = dipole_check(up, laser.omega)
    zf, rel_ok = relativistic_check(up)
    beta = bloch_parameter(material, laser, **field_kw) if material.lattice_nm is not None else None
    return RegimeReport(
        material=material.name, gamma_k=gamma, up_ev=up, z=z, z_f=zf, beta_bloch=beta,
        photon_energy_ev=laser.photon_energy_ev, dipole_ok=dip_ok, nonrelativistic_ok=rel_ok,
        regime="tunneling" if gamma < 1.0 else "multiphoton",
    )


# ---------------------------------------------------------------------------
# yield scaling

@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    exponent_stderr: float
    prefactor: float
    r2: float


def _log_xy(intensities, yields, min_points: int):
    x = np.asarray(intensities, dtype=float)
    y = np.asarray(yields, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("intensities and yields must be 1-D arrays of equal length")
    if x.size < min_points:
        raise DegenerateFit(f"need at least {min_points} points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise NonPositiveData("power-law fits need strictly positive data")
    return np.log(x), np.log(y)


def power_law_fit(intensities, yields) -> PowerLawFit:
    """Least-squares fit of log(yield) = log(prefactor) + exponent * log(intensity)."""
    lx, ly = _log_xy(intensities, yields, 3)
    if np.ptp(lx) == 0:
        raise DegenerateFit("all intensities are equal")
    res = stats.linregress(lx, ly)
    return PowerLawFit(float(res.slope), float(res.stderr), float(np.exp(res.intercept)),
                       float(res.rvalue**2) if np.ptp(ly) > 0 else 1.0)


@dataclass(frozen=True)
class Crossover:
    intensity: float
    high_exponent: float
    low_prefactor: float
    high_prefactor: float
    split: int  # number of points assigned to the perturbative segment
    residual: float


def crossover_detect(intensities, yields, perturbative_order: int, *,
                     min_slope_change: float = 0.1) -> Crossover:
    """Intersection of a fixed-order I^q law (low I) with a free power law (high I).

    The split point minimizes the total squared log residual over all splits
    that leave at least two points in each segment.
    """
    lx, ly = _log_xy(intensities, yields, 4)
    order = np.argsort(lx)
    lx, ly = lx[order], ly[order]
    q = float(perturbative_order)
    best = None
    for s in range(2, lx.size - 1):
        lo_b = float(np.mean(ly[:s] - q * lx[:s]))
        res_lo = np.sum((ly[:s] - lo_b - q * lx[:s]) ** 2)
        xh, yh = lx[s:], ly[s:]
        if np.ptp(xh) == 0:
            continue
        p, b = np.polyfit(xh, yh, 1)
        res_hi = np.sum((yh - b - p * xh) ** 2)
        total = float(res_lo + res_hi)
        if best is None or total < best[0] - 1e-15:
            best = (total, s, lo_b, float(p), float(b))
    if best is None:
        raise DegenerateFit("no admissible split")
    total, s, lo_b, p, hi_b = best
    if abs(p - q) < min_slope_change:
        raise NoCrossover(f"high-intensity exponent {p:.3f} does not depart from order {q:g}")
    lx_cross = (hi_b - lo_b) / (q - p)
    if not (lx[0] <= lx_cross <= lx[-1]):
        raise NoCrossover("fitted laws intersect outside the measured intensity range")
    return Crossover(float(np.exp(lx_cross)), p, float(np.exp(lo_b)), float(np.exp(hi_b)), s, total)
