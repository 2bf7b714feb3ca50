"""HBT analysis: start-stop histograms, satellite-peak normalization, g2(0) and CSI.

Histogram bins are centred on integer multiples of the bin width, so a delay
d (ps) lands in bin round(d / bin_width) and all bookkeeping stays in
integers. Peaks are fitted by unweighted least squares with a Gaussian
(no offset); parameter errors use the sandwich covariance with Poisson
variance equal to the fitted model.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .detector import TimeTagStream
from .errors import (
    EmptyChannel,
    FitFailure,
    InsufficientCounts,
    InvalidEfficiency,
    RejectedFit,
    RejectedInput,
    TooFewRuns,
    UnsortedStream,
    ZeroRate,
)

MIN_BIN_WIDTH_PS = 5
DEFAULT_BIN_WIDTH_PS = 100
DEFAULT_N_SATELLITES = 4
DEFAULT_HALF_WINDOW_PS = 2000
R2_MIN = 0.95
COINCIDENCE_FLAG = 2e-2
COUNT_FLOOR = 5

H33_PAIRS = ((0, 1),)
H55_PAIRS = ((2, 3),)
H35_PAIRS = ((0, 2), (0, 3), (1, 2), (1, 3))


def rep_period_ps(rep_rate_hz: float) -> float:
    return 1e12 / rep_rate_hz


def default_max_delay_ps(rep_rate_hz: float, n_satellites: int = DEFAULT_N_SATELLITES) -> int:
    # half a period beyond the last fitted satellite
    return int(math.ceil((n_satellites + 0.5) * rep_period_ps(rep_rate_hz)))


@dataclass
class Histogram:
    bin_width: int  # ps
    max_delay: int  # ps, bins cover [-max_delay, +max_delay]
    counts: np.ndarray
    total_starts: int = 0
    total_stops: int = 0

    @property
    def n_half(self) -> int:
        return self.max_delay // self.bin_width

    @property
    def delays(self) -> np.ndarray:
        return np.arange(-self.n_half, self.n_half + 1, dtype=np.int64) * self.bin_width

    def __add__(self, other: Histogram) -> Histogram:
        if (self.bin_width, self.max_delay) != (other.bin_width, other.max_delay):
            raise ValueError("histograms have different binning")
        return Histogram(self.bin_width, self.max_delay, self.counts + other.counts,
                         self.total_starts + other.total_starts, self.total_stops + other.total_stops)

    def bin_of(self, delay_ps: float) -> int:
        return int(np.floor(delay_ps / self.bin_width + 0.5)) + self.n_half


def _check_binning(bin_width: int, max_delay: int) -> tuple[int, int]:
    bw = int(bin_width)
    if bw != bin_width or bw < MIN_BIN_WIDTH_PS:
        raise ValueError(f"bin width must be an integer >= {MIN_BIN_WIDTH_PS} ps")
    md = int(max_delay)
    if md < bw:
        raise ValueError("max delay must cover at least one bin")
    return bw, md


def start_stop_histogram(stream: TimeTagStream, ch_start: int, ch_stop: int,
                         bin_width: int = DEFAULT_BIN_WIDTH_PS, max_delay: int | None = None,
                         *, chunk_size: int = 1 << 18) -> Histogram:
    """Multi-stop delay histogram of ``ch_stop`` clicks relative to each ``ch_start`` click.

    Every stop within +-max_delay (ps) of a start is binned. ``chunk_size``
    only bounds memory; results do not depend on it.
    """
    if max_delay is None:
        max_delay = default_max_delay_ps(stream.rep_rate_hz)
    bw, md = _check_binning(bin_width, max_delay)
    for ch in (ch_start, ch_stop):
        if not 0 <= ch < stream.n_channels:
            raise EmptyChannel(f"channel {ch} not in a {stream.n_channels}-channel stream")
    if not stream.is_sorted:
        raise UnsortedStream("time tags must be sorted by timestamp")
    n_half = md // bw
    counts = np.zeros(2 * n_half + 1, dtype=np.int64)
    starts = stream.channel(ch_start).astype(np.int64)
    stops = stream.channel(ch_stop).astype(np.int64)
    hist = Histogram(bw, md, counts, int(starts.size), int(stops.size))
    if starts.size == 0 or stops.size == 0:
        return hist
    half = bw // 2
    for c0 in range(0, starts.size, chunk_size):
        t = starts[c0:c0 + chunk_size]
        lo = np.searchsorted(stops, t - md, side="left")
        hi = np.searchsorted(stops, t + md, side="right")
        n = hi - lo
        total = int(n.sum())
        if total == 0:
            continue
        owner = np.repeat(np.arange(t.size), n)
        offs = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
        d = stops[lo[owner] + offs] - t[owner]
        # bin k holds delays in [k*bw - bw/2, k*bw + bw/2)
        if bw % 2 == 0:
            k = np.floor_divide(d + half, bw)
        else:
            k = np.floor_divide(2 * d + bw, 2 * bw)
        keep = np.abs(k) <= n_half
        counts += np.bincount(k[keep] + n_half, minlength=counts.size)
    return hist


def combined_histogram(stream: TimeTagStream, pairs: Iterable[tuple[int, int]],
                       bin_width: int = DEFAULT_BIN_WIDTH_PS, max_delay: int | None = None) -> Histogram:
    """Sum of start-stop histograms over several channel pairs."""
    hists = [start_stop_histogram(stream, a, b, bin_width, max_delay) for a, b in pairs]
    if not hists:
        raise ValueError("need at least one channel pair")
    out = hists[0]
    for h in hists[1:]:
        out = out + h
    return out


# ---------------------------------------------------------------------------
# Gaussian peak fits


def gaussian(x, amplitude, center, sigma):
    return amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


@dataclass(frozen=True)
class PeakFit:
    order: int  # k for the peak near k * rep_period
    amplitude: float
    amplitude_err: float
    center: float  # ps
    sigma: float  # ps
    r2: float
    ssr: float
    sst: float
    counts: float


def _window(hist: Histogram, data: np.ndarray, center: float, half_window: float):
    x = hist.delays
    sel = np.abs(x - center) <= half_window
    return x[sel].astype(float), data[sel].astype(float)


def fit_peak(hist: Histogram, center: float, *, half_window: float = DEFAULT_HALF_WINDOW_PS,
             data: np.ndarray | None = None, order: int = 0, floor: float = COUNT_FLOOR) -> PeakFit:
    """Least-squares Gaussian fit to the bins within ``half_window`` of ``center``."""
    y_all = hist.counts if data is None else data
    x, y = _window(hist, y_all, center, half_window)
    if x.size < 4:
        raise InsufficientCounts("fit window holds fewer than four bins")
    if y.max(initial=0) < floor:
        raise InsufficientCounts(f"peak near {center:.0f} ps has fewer than {floor} counts per bin")
    bw = hist.bin_width
    p0 = (float(y.max()), float(x[np.argmax(y)]), max(2.0 * bw, 200.0))
    lower = (0.0, center - half_window / 2, bw / 4)
    upper = (np.inf, center + half_window / 2, half_window)
    p0 = (p0[0], float(np.clip(p0[1], lower[1], upper[1])), float(np.clip(p0[2], lower[2], upper[2])))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(gaussian, x, y, p0=p0, bounds=(lower, upper), max_nfev=2000)
    except (RuntimeError, ValueError) as exc:
        raise FitFailure(f"Gaussian fit near {center:.0f} ps did not converge: {exc}") from exc
    model = gaussian(x, *popt)
    ssr = float(np.sum((y - model) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0
    return PeakFit(order, float(popt[0]), _amplitude_error(x, popt, model), float(popt[1]),
                   float(popt[2]), r2, ssr, sst, float(y.sum()))


def _amplitude_error(x, popt, model) -> float:
    # unweighted LS with Poisson noise: Cov = (J'J)^-1 J' diag(mu) J (J'J)^-1
    a, c, s = popt
    g = np.exp(-0.5 * ((x - c) / s) ** 2)
    jac = np.column_stack([g, a * g * (x - c) / s**2, a * g * (x - c) ** 2 / s**3])
    jtj = jac.T @ jac
    try:
        inv = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return float("inf")
    mu = np.maximum(model, 0.0)
    cov = inv @ (jac.T * mu) @ jac @ inv
    return float(np.sqrt(max(cov[0, 0], 0.0)))


@dataclass(frozen=True)
class SatelliteFit:
    peaks: tuple[PeakFit, ...]
    amplitude: float  # mean satellite amplitude
    amplitude_err: float
    r2: float  # aggregate 1 - sum(SSR) / sum(SST)
    rep_period: float

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.peaks])


def fit_satellite_peaks(hist: Histogram, rep_period: float, *, n_satellites: int = DEFAULT_N_SATELLITES,
                        half_window: float = DEFAULT_HALF_WINDOW_PS, data: np.ndarray | None = None,
                        floor: float = COUNT_FLOOR) -> SatelliteFit:
    """Fit the satellites at +-k * rep_period (k = 1..n_satellites) that fit inside the histogram."""
    peaks = []
    for k in range(1, n_satellites + 1):
        for sign in (-1, 1):
            c = sign * k * rep_period
            if abs(c) + half_window > hist.max_delay:
                continue
            try:
                peaks.append(fit_peak(hist, c, half_window=half_window, data=data, order=sign * k, floor=floor))
            except InsufficientCounts:
                continue
    if not peaks:
        raise InsufficientCounts("no satellite window holds enough counts to fit")
    amps = np.array([p.amplitude for p in peaks])
    errs = np.array([p.amplitude_err for p in peaks])
    ssr = sum(p.ssr for p in peaks)
    sst = sum(p.sst for p in peaks)
    r2 = 1.0 - ssr / sst if sst > 0 else 0.0
    return SatelliteFit(tuple(sorted(peaks, key=lambda p: p.order)), float(amps.mean()),
                        float(np.sqrt(np.sum(errs**2)) / amps.size), r2, float(rep_period))


@dataclass(frozen=True)
class G2Estimate:
    value: float
    std_error: float
    fit_r2: float
    n_repetitions: int = 1
    accepted: bool = True

    def __post_init__(self):
        if not (self.std_error >= 0 or math.isnan(self.std_error)):
            raise ValueError("std_error must be >= 0")

    @classmethod
    def rejected(cls, fit_r2: float = 0.0) -> G2Estimate:
        return cls(float("nan"), float("nan"), fit_r2, 1, False)

    @classmethod
    def gated(cls, value: float, std_error: float, fit_r2: float, r2_min: float = R2_MIN,
              n_repetitions: int = 1) -> G2Estimate:
        return cls(value, std_error, fit_r2, n_repetitions, bool(fit_r2 >= r2_min))


@dataclass(frozen=True)
class G2Result:
    histogram: Histogram
    delays: np.ndarray
    g2_curve: np.ndarray
    estimate: G2Estimate
    satellites: SatelliteFit | None = None
    central: PeakFit | None = None
    background: float = 0.0
    note: str = ""


def valley_background(hist: Histogram, rep_period: float, *, half_width: float | None = None) -> float:
    """Mean counts per bin midway between peaks (flat dark/background floor)."""
    half_width = half_width if half_width is not None else 0.1 * rep_period
    x = hist.delays
    k = np.floor(x / rep_period)
    mid = (k + 0.5) * rep_period
    sel = np.abs(x - mid) <= half_width
    if not sel.any():
        return 0.0
    return float(hist.counts[sel].mean())


def normalize_g2(hist: Histogram, satellite_fit: SatelliteFit, *, r2_min: float = R2_MIN,
                 half_window: float = DEFAULT_HALF_WINDOW_PS, background: float = 0.0,
                 floor: float = COUNT_FLOOR) -> G2Result:
    """g2(tau) = counts / satellite amplitude; g2(0) from the fitted central-peak amplitude."""
    if satellite_fit.r2 < r2_min:
        raise RejectedFit(f"satellite fit R^2 = {satellite_fit.r2:.3f} below {r2_min}")
    data = hist.counts - background
    ref = satellite_fit.amplitude
    if not ref > 0:
        raise RejectedFit("satellite reference amplitude is zero")
    curve = data / ref
    try:
        central = fit_peak(hist, 0.0, half_window=half_window, data=data, order=0, floor=floor)
    except InsufficientCounts:
        # no central peak at all: g2(0) ~ 0 with the satellite error only
        est = G2Estimate.gated(0.0, float(np.sqrt(max(data[hist.n_half], 1.0))) / ref,
                               satellite_fit.r2, r2_min)
        return G2Result(hist, hist.delays, curve, est, satellite_fit, None, background, "no central peak")
    g = central.amplitude / ref
    rel = math.hypot(central.amplitude_err / central.amplitude if central.amplitude > 0 else math.inf,
                     satellite_fit.amplitude_err / ref)
    r2 = min(satellite_fit.r2, central.r2)
    est = G2Estimate.gated(g, g * rel, r2, r2_min)
    return G2Result(hist, hist.delays, curve, est, satellite_fit, central, background)


def estimate_g2(stream: TimeTagStream, pairs: Sequence[tuple[int, int]], *,
                bin_width: int = DEFAULT_BIN_WIDTH_PS, max_delay: int | None = None,
                r2_min: float = R2_MIN, n_satellites: int = DEFAULT_N_SATELLITES,
                half_window: float = DEFAULT_HALF_WINDOW_PS, dark_correct: bool = False) -> G2Result:
    """Histogram the channel pairs, normalize to the satellites, gate on R^2.

    Fit failures yield a rejected estimate instead of raising.
    """
    if max_delay is None:
        max_delay = default_max_delay_ps(stream.rep_rate_hz, n_satellites)
    hist = combined_histogram(stream, pairs, bin_width, max_delay)
    period = rep_period_ps(stream.rep_rate_hz)
    bg = valley_background(hist, period) if dark_correct else 0.0
    data = hist.counts - bg
    try:
        sat = fit_satellite_peaks(hist, period, n_satellites=n_satellites, half_window=half_window, data=data)
    except (InsufficientCounts, FitFailure) as exc:
        return G2Result(hist, hist.delays, np.full(hist.counts.size, np.nan), G2Estimate.rejected(),
                        None, None, bg, str(exc))
    try:
        return normalize_g2(hist, sat, r2_min=r2_min, half_window=half_window, background=bg)
    except (RejectedFit, FitFailure) as exc:
        curve = data / sat.amplitude if sat.amplitude > 0 else np.full(hist.counts.size, np.nan)
        return G2Result(hist, hist.delays, curve, G2Estimate.rejected(sat.r2), sat, None, bg, str(exc))


# ---------------------------------------------------------------------------
# rate estimators and aggregation


def mean_photon_number(n_h: float, rep_rate_hz: float, efficiency: float) -> float:
    """mu = N_H / (R_p * eta) with N_H the dark-corrected harmonic count rate."""
    if not 0 < efficiency <= 1:
        raise InvalidEfficiency(f"efficiency must lie in (0, 1], got {efficiency!r}")
    if not rep_rate_hz > 0:
        raise ZeroRate("repetition rate must be positive")
    if n_h < 0:
        raise ValueError("count rate must be >= 0")
    return n_h / (rep_rate_hz * efficiency)


def count_rates(stream: TimeTagStream, n_pulses: int | None = None) -> np.ndarray:
    """Per-channel count rates (1/s) over the run duration."""
    if n_pulses is not None:
        duration = n_pulses / stream.rep_rate_hz
    else:
        duration = stream.duration_s
    if not duration > 0:
        raise ZeroRate("run duration is zero")
    return stream.counts() / duration


def coincidence_ratio(n_c: float, n_h: float, threshold: float = COINCIDENCE_FLAG) -> tuple[float, bool]:
    """N_C / N_H and whether it exceeds the multi-event threshold."""
    if not n_h > 0:
        raise ZeroRate("harmonic count rate must be positive")
    ratio = n_c / n_h
    return ratio, bool(ratio > threshold)


def aggregate_runs(estimates: Sequence[G2Estimate]) -> G2Estimate:
    """Mean and standard error of the mean over accepted repetitions."""
    ok = [e for e in estimates if e.accepted]
    if len(ok) < 2:
        raise TooFewRuns(f"need at least two accepted runs, got {len(ok)}")
    vals = np.array([e.value for e in ok])
    sem = float(vals.std(ddof=1) / np.sqrt(vals.size))
    return G2Estimate(float(vals.mean()), sem, min(e.fit_r2 for e in ok), len(ok), True)


@dataclass(frozen=True)
class RParamEstimate:
    value: float
    std_error: float
    violated: bool


def csi_test(g33: G2Estimate, g55: G2Estimate, g35: G2Estimate) -> RParamEstimate:
    """R = g35^2 / (g33 g55) with first-order error propagation; violated if R - sigma_R > 1."""
    for name, e in (("g33", g33), ("g55", g55), ("g35", g35)):
        if not e.accepted:
            raise RejectedInput(f"{name} estimate was rejected")
        if not e.value > 0:
            raise RejectedInput(f"{name} must be positive")
    r = g35.value**2 / (g33.value * g55.value)
    rel = math.sqrt(4 * (g35.std_error / g35.value) ** 2 + (g33.std_error / g33.value) ** 2
                    + (g55.std_error / g55.value) ** 2)
    sigma = r * rel
    return RParamEstimate(r, sigma, bool(r - sigma > 1))


@dataclass
class HBTReport:
    """g2 estimates for the standard channel layout and the CSI verdict when available."""

    results: dict = field(default_factory=dict)
    r_param: RParamEstimate | None = None


def analyze_stream(stream: TimeTagStream, **kw) -> HBTReport:
    """Run the standard pair set: g33 (and g55, g35, R for four-channel streams)."""
    rep = HBTReport()
    layout = {"g33": H33_PAIRS}
    if stream.n_channels >= 4:
        layout.update(g55=H55_PAIRS, g35=H35_PAIRS)
    for name, pairs in layout.items():
        rep.results[name] = estimate_g2(stream, pairs, **kw)
    if stream.n_channels >= 4:
        ests = [rep.results[k].estimate for k in ("g33", "g55", "g35")]
        try:
            rep.r_param = csi_test(*ests)
        except RejectedInput:
            rep.r_param = None
    return rep
