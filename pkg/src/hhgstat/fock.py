"""Truncated two-mode Fock space for the (H3, H5) harmonic pair.

Amplitudes live on a dense ``(cutoff3 + 1, cutoff5 + 1)`` grid indexed by the
photon numbers ``(n3, n5)``. Normalized states are :class:`TwoModeState`;
the image of a state under a ladder operator is a plain :class:`FockVector`
and is never renormalized, so expectation values can be written literally as
squared norms of operator images.
"""
from __future__ import annotations

import enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InvalidState, TruncationOverflow, ZeroIntensity

DEFAULT_CUTOFF = 32
NORM_TOL = 1e-10
TRUNCATION_TOL = 1e-10


class ModeLabel(enum.Enum):
    H3 = 0
    H5 = 1

    @property
    def axis(self) -> int:
        return self.value

    @property
    def order(self) -> int:
        return 3 if self is ModeLabel.H3 else 5


class FockVector:
    """Unnormalized vector on the truncated two-mode space (read-only)."""

    __slots__ = ("amplitudes",)

    def __init__(self, amplitudes):
        amps = np.array(amplitudes, dtype=complex)
        if amps.ndim != 2 or min(amps.shape) < 1:
            raise InvalidState(f"amplitudes must be a non-empty 2-D array, got shape {amps.shape}")
        amps.setflags(write=False)
        self.amplitudes = amps

    @property
    def cutoffs(self) -> tuple[int, int]:
        return self.amplitudes.shape[0] - 1, self.amplitudes.shape[1] - 1

    @property
    def norm_squared(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def flat(self) -> np.ndarray:
        """Amplitudes as a 1-D vector, index ``n3 * (cutoff5 + 1) + n5``."""
        return self.amplitudes.reshape(-1)

    def vdot(self, other: FockVector) -> complex:
        if self.amplitudes.shape != other.amplitudes.shape:
            raise InvalidState("cutoff mismatch")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def __repr__(self):
        return f"{type(self).__name__}(cutoffs={self.cutoffs}, norm2={self.norm_squared:.12g})"


class TwoModeState(FockVector):
    """Normalized pure state |psi>_35.

    Construction checks ``sum |c|^2 = 1`` within ``tol``; use
    :meth:`normalized` to rescale an arbitrary nonzero vector.
    """

    __slots__ = ()

    def __init__(self, amplitudes, *, tol: float = NORM_TOL):
        super().__init__(amplitudes)
        n2 = self.norm_squared
        if not abs(n2 - 1.0) <= tol:
            raise InvalidState(f"state norm^2 = {n2!r} deviates from 1 by more than {tol:g}")

    @classmethod
    def normalized(cls, amplitudes) -> TwoModeState:
        amps = np.asarray(amplitudes, dtype=complex)
        n2 = float(np.sum(np.abs(amps) ** 2))
        if not n2 > 0.0 or not np.isfinite(n2):
            raise InvalidState("cannot normalize a zero or non-finite vector")
        return cls(amps / np.sqrt(n2))


def _require_state(state: FockVector) -> None:
    if not isinstance(state, TwoModeState):
        # an operator image is acceptable only if it still has unit norm
        if abs(state.norm_squared - 1.0) > NORM_TOL:
            raise InvalidState("a normalized state is required")


def _cutoff_pair(cutoffs) -> tuple[int, int]:
    if cutoffs is None:
        return DEFAULT_CUTOFF, DEFAULT_CUTOFF
    if np.isscalar(cutoffs):
        c3 = c5 = int(cutoffs)
    else:
        c3, c5 = (int(c) for c in cutoffs)
    if c3 < 0 or c5 < 0:
        raise ValueError("cutoffs must be non-negative")
    return c3, c5


# ---------------------------------------------------------------------------
# ladder action

def apply_ladder(state: FockVector, mode: ModeLabel, kind: str, *,
                 tol: float = TRUNCATION_TOL) -> FockVector:
    """Apply a or a^dagger of ``mode``; the result is not renormalized."""
    amps = state.amplitudes
    ax = mode.axis
    moved = np.moveaxis(amps, ax, 0)
    out = np.zeros_like(moved)
    n = np.arange(moved.shape[0], dtype=float)
    if kind == "annihilate":
        out[:-1] = np.sqrt(n[1:])[:, None] * moved[1:]
    elif kind == "create":
        top = float(np.sum(np.abs(moved[-1]) ** 2))
        if top > tol:
            raise TruncationOverflow(
                f"creation on {mode.name} pushes {top:.3g} of weight past the cutoff")
        out[1:] = np.sqrt(n[1:])[:, None] * moved[:-1]
    else:
        raise ValueError(f"kind must be 'annihilate' or 'create', got {kind!r}")
    return FockVector(np.moveaxis(out, 0, ax))


def _annihilate(state: FockVector, mode: ModeLabel, times: int = 1) -> FockVector:
    for _ in range(times):
        state = apply_ladder(state, mode, "annihilate")
    return state


# ---------------------------------------------------------------------------
# photon statistics functionals

def mean_photon(state: FockVector, mode: ModeLabel) -> float:
    _require_state(state)
    return _annihilate(state, mode).norm_squared


def g2_single(state: FockVector, mode: ModeLabel) -> float:
    """<a^+ a^+ a a> / <a^+ a>^2 for one mode at zero delay."""
    _require_state(state)
    n = _annihilate(state, mode).norm_squared
    if n <= 0.0:
        raise ZeroIntensity(f"<n> = 0 in mode {mode.name}")
    return _annihilate(state, mode, 2).norm_squared / n**2


def g2_cross(state: FockVector) -> float:
    """<a3^+ a5^+ a3 a5> / (<n3><n5>)."""
    _require_state(state)
    n3 = _annihilate(state, ModeLabel.H3).norm_squared
    n5 = _annihilate(state, ModeLabel.H5).norm_squared
    if n3 <= 0.0 or n5 <= 0.0:
        raise ZeroIntensity(f"mean photon numbers ({n3:g}, {n5:g}) must both be positive")
    both = _annihilate(_annihilate(state, ModeLabel.H3), ModeLabel.H5)
    return both.norm_squared / (n3 * n5)


def photon_number_distribution(state: FockVector, mode: ModeLabel) -> np.ndarray:
    _require_state(state)
    probs = np.abs(state.amplitudes) ** 2
    other = 1 - mode.axis
    return probs.sum(axis=other)


def joint_photon_distribution(state: FockVector) -> np.ndarray:
    _require_state(state)
    return np.abs(state.amplitudes) ** 2


def tail_mass(state: FockVector, mode: ModeLabel, levels: int = 2) -> float:
    """Probability held in the top ``levels`` Fock levels of ``mode``."""
    pmf = np.sum(np.abs(np.moveaxis(state.amplitudes, mode.axis, 0)) ** 2, axis=1)
    return float(pmf[-levels:].sum())


def fidelity(a: FockVector, b: FockVector) -> float:
    return abs(a.vdot(b)) ** 2


# ---------------------------------------------------------------------------
# reference states

def _truncate_checked(amps: np.ndarray, tol: float, what: str) -> TwoModeState:
    # closed-form amplitudes are normalized on the infinite space, so whatever
    # is missing from the truncated grid is the truncation tail
    tail = 1.0 - float(np.sum(np.abs(amps) ** 2))
    if tail > tol:
        raise TruncationOverflow(f"{what}: truncation tail {tail:.3g} exceeds {tol:g}; raise the cutoff")
    return TwoModeState.normalized(amps)


def vacuum(cutoffs=None) -> TwoModeState:
    return fock_state(0, 0, cutoffs)


def fock_state(n3: int, n5: int, cutoffs=None) -> TwoModeState:
    c3, c5 = _cutoff_pair(cutoffs)
    if not (0 <= n3 <= c3 and 0 <= n5 <= c5):
        raise TruncationOverflow(f"|{n3},{n5}> does not fit cutoffs ({c3},{c5})")
    amps = np.zeros((c3 + 1, c5 + 1), dtype=complex)
    amps[n3, n5] = 1.0
    return TwoModeState(amps)


def coherent_amplitudes(alpha: complex, cutoff: int) -> np.ndarray:
    out = np.empty(cutoff + 1, dtype=complex)
    out[0] = np.exp(-abs(alpha) ** 2 / 2)
    for n in range(cutoff):
        out[n + 1] = out[n] * alpha / np.sqrt(n + 1)
    return out


def squeezed_vacuum_amplitudes(r: float, cutoff: int) -> np.ndarray:
    """Single-mode squeezed vacuum amplitudes (real squeezing, even levels only)."""
    out = np.zeros(cutoff + 1, dtype=complex)
    t = np.tanh(r)
    out[0] = 1.0 / np.sqrt(np.cosh(r))
    for n in range(0, cutoff - 1, 2):
        out[n + 2] = -t * out[n] * np.sqrt((n + 1) / (n + 2))
    return out


def two_mode_squeezed_vacuum(r: float, cutoffs=None, *, tol: float = TRUNCATION_TOL) -> TwoModeState:
    """sum_n tanh^n(r)/cosh(r) |n, n>."""
    if r < 0:
        raise ValueError("squeezing parameter r must be >= 0")
    c3, c5 = _cutoff_pair(cutoffs)
    m = min(c3, c5)
    amps = np.zeros((c3 + 1, c5 + 1), dtype=complex)
    n = np.arange(m + 1)
    amps[n, n] = np.tanh(r) ** n / np.cosh(r)
    return _truncate_checked(amps, tol, f"TMSV(r={r})")


def single_mode_squeezed_vacuum(r: float, mode: ModeLabel = ModeLabel.H3, cutoffs=None,
                                *, tol: float = TRUNCATION_TOL) -> TwoModeState:
    if r < 0:
        raise ValueError("squeezing parameter r must be >= 0")
    c3, c5 = _cutoff_pair(cutoffs)
    cut = (c3, c5)[mode.axis]
    vac = np.zeros((c3, c5)[1 - mode.axis] + 1, dtype=complex)
    vac[0] = 1.0
    sq = squeezed_vacuum_amplitudes(r, cut)
    amps = np.outer(sq, vac) if mode is ModeLabel.H3 else np.outer(vac, sq)
    return _truncate_checked(amps, tol, f"SMSV(r={r})")


def coherent_state(alpha: complex, mode: ModeLabel = ModeLabel.H3, cutoffs=None,
                   *, tol: float = TRUNCATION_TOL) -> TwoModeState:
    c3, c5 = _cutoff_pair(cutoffs)
    cut = (c3, c5)[mode.axis]
    vac = np.zeros((c3, c5)[1 - mode.axis] + 1, dtype=complex)
    vac[0] = 1.0
    coh = coherent_amplitudes(alpha, cut)
    amps = np.outer(coh, vac) if mode is ModeLabel.H3 else np.outer(vac, coh)
    return _truncate_checked(amps, tol, f"coherent(alpha={alpha})")


def product_state(amps3: Sequence[complex], amps5: Sequence[complex],
                  *, tol: float = TRUNCATION_TOL) -> TwoModeState:
    """Tensor product of two single-mode amplitude vectors."""
    amps = np.outer(np.asarray(amps3, dtype=complex), np.asarray(amps5, dtype=complex))
    return _truncate_checked(amps, tol, "product state")


def product_coherent_state(alpha3: complex, alpha5: complex, cutoffs=None,
                           *, tol: float = TRUNCATION_TOL) -> TwoModeState:
    c3, c5 = _cutoff_pair(cutoffs)
    return product_state(coherent_amplitudes(alpha3, c3), coherent_amplitudes(alpha5, c5), tol=tol)


def required_cutoff(kind: str, param: float, tol: float = TRUNCATION_TOL, start: int = 4) -> int:
    """Smallest cutoff whose truncation tail for a reference family is below ``tol``.

    ``kind`` is one of ``tmsv``, ``smsv`` (param = r) or ``coherent`` (param = |alpha|).
    """
    cut = start
    while cut < 4096:
        if kind == "tmsv":
            amps = np.tanh(param) ** np.arange(cut + 1) / np.cosh(param)
        elif kind == "smsv":
            amps = squeezed_vacuum_amplitudes(param, cut)
        elif kind == "coherent":
            amps = coherent_amplitudes(param, cut)
        else:
            raise ValueError(f"unknown family {kind!r}")
        if 1.0 - np.sum(np.abs(amps) ** 2) <= tol:
            return cut
        cut += 1
    raise TruncationOverflow(f"no cutoff below 4096 reaches tail {tol:g} for {kind}({param})")


# ---------------------------------------------------------------------------
# sparse operators on the flattened space

def _single_mode_lowering(cutoff: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), 1, format="csr")


def mode_operators(cutoffs) -> dict[str, sp.csr_matrix]:
    """Sparse a3, a5, n3, n5 and identity on the flattened two-mode space.

    The flattening matches :meth:`FockVector.flat`.
    """
    c3, c5 = _cutoff_pair(cutoffs)
    i3 = sp.identity(c3 + 1, format="csr")
    i5 = sp.identity(c5 + 1, format="csr")
    a3 = sp.kron(_single_mode_lowering(c3), i5, format="csr")
    a5 = sp.kron(i3, _single_mode_lowering(c5), format="csr")
    n3 = sp.kron(sp.diags(np.arange(c3 + 1, dtype=float)), i5, format="csr")
    n5 = sp.kron(i3, sp.diags(np.arange(c5 + 1, dtype=float)), format="csr")
    eye = sp.identity((c3 + 1) * (c5 + 1), format="csr")
    return {"a3": a3.astype(complex), "a5": a5.astype(complex),
            "n3": n3.astype(complex), "n5": n5.astype(complex), "I": eye.astype(complex)}
