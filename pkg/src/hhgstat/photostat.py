"""Closed-form photon statistics: canonical g2 values and the multimode twin-beam model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySpectrum, InvalidK, ZeroGain, ZeroIntensity

WEIGHT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class SqueezerSpectrum:
    """Schmidt-mode weights ``lambda_k`` (sum of squares = 1) and optical gain ``B``."""

    weights: tuple[float, ...]
    gain: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or not np.any(w > 0):
            raise EmptySpectrum("spectrum needs at least one positive weight")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and non-negative")
        if abs(np.sum(w**2) - 1.0) > WEIGHT_NORM_TOL:
            raise ValueError(f"sum of squared weights is {np.sum(w**2)!r}, expected 1")
        if self.gain < 0:
            raise ValueError("gain must be non-negative")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def from_weights(cls, weights, gain: float) -> SqueezerSpectrum:
        """Normalize arbitrary non-negative weights so that sum(lambda^2) = 1."""
        w = np.asarray(weights, dtype=float)
        if w.size == 0 or not np.any(w > 0):
            raise EmptySpectrum("spectrum needs at least one positive weight")
        return cls(tuple(w / np.sqrt(np.sum(w**2))), gain)

    @classmethod
    def from_squared_weights(cls, lam2, gain: float) -> SqueezerSpectrum:
        lam2 = np.asarray(lam2, dtype=float)
        if lam2.size == 0 or not np.any(lam2 > 0):
            raise EmptySpectrum("spectrum needs at least one positive weight")
        return cls.from_weights(np.sqrt(np.clip(lam2, 0, None)), gain)

    @classmethod
    def uniform(cls, n_modes: int, gain: float) -> SqueezerSpectrum:
        if n_modes < 1:
            raise EmptySpectrum("need at least one mode")
        return cls((1.0 / np.sqrt(n_modes),) * n_modes, gain)


def _log_sinh(x: np.ndarray) -> np.ndarray:
    # log(sinh x) without overflow for large x; -inf for x = 0
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, -np.inf)
    small = (x > 0) & (x < 1.0)
    big = x >= 1.0
    out[small] = np.log(np.sinh(x[small]))
    out[big] = x[big] + np.log1p(-np.exp(-2 * x[big])) - np.log(2.0)
    return out


def g2_multimode_twin_beam(spec: SqueezerSpectrum) -> float:
    """1 + sum sinh^4(lambda_k B) / (sum sinh^2(lambda_k B))^2."""
    if spec.gain <= 0:
        raise ZeroGain("g2 is 0/0 at zero gain")
    ls = _log_sinh(np.asarray(spec.weights) * spec.gain)
    m = np.max(ls)
    s2 = np.exp(2 * (ls - m))
    return float(1.0 + np.sum(s2 * s2) / np.sum(s2) ** 2)


def schmidt_number(spec: SqueezerSpectrum) -> float:
    w = np.asarray(spec.weights)
    return float(1.0 / np.sum(w**4))


def g2_low_gain(K: float) -> float:
    if not K >= 1.0:
        raise InvalidK(f"Schmidt number must be >= 1, got {K!r}")
    return 1.0 + 1.0 / K


_NEEDS_PHOTONS = {"smsv", "tmsv_cross"}


def canonical_g2(kind: str, n_mean: float | None = None) -> float:
    """Zero-delay g2 of the textbook reference states.

    ``tmsv_auto`` is the single-arm value of a two-mode squeezed vacuum (its
    marginal is thermal); ``tmsv_cross`` correlates the two arms.
    """
    if kind in _NEEDS_PHOTONS and (n_mean is None or not n_mean > 0):
        raise ZeroIntensity(f"{kind} needs a positive mean photon number")
    if kind == "coherent":
        return 1.0
    if kind in ("thermal", "tmsv_auto"):
        return 2.0
    if kind == "smsv":
        return 3.0 + 1.0 / n_mean
    if kind == "tmsv_cross":
        return 2.0 + 1.0 / n_mean
    raise ValueError(f"unknown state kind {kind!r}")
