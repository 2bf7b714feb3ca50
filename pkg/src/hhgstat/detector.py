"""Monte-Carlo SPAD time-tag generation for pulsed photon-pair sources.

Pipeline per pulse: draw (n3, n5) from the source, thin by any extra
attenuation, split each harmonic on a 50/50 beamsplitter, thin by quantum
efficiency. A channel that detects k >= 1 photons fires once (Geiger mode); the
click time is the pulse time plus Gaussian jitter plus the earliest of the
photons' diffusion delays. Dark counts are merged in, then dead time and
afterpulsing are applied sequentially per channel over the whole run.

Timestamps are integer picoseconds.
"""
from __future__ import annotations

import heapq
import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .fock import TwoModeState, joint_photon_distribution

PMF_TOL = 1e-10
CHUNK_PULSES = 1 << 20
DEFAULT_REP_RATE_HZ = 18.66e6
START_OFFSET_PS = 10_000

# ---------------------------------------------------------------------------
# sources


@dataclass(frozen=True)
class SourceModel:
    """Per-pulse photon-number source for the H3/H5 pair.

    ``kind`` is one of coherent, thermal, tmsv or pmf; use the classmethods.
    """

    kind: str
    mu3: float = 0.0
    mu5: float = 0.0
    table: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("coherent", "thermal", "tmsv", "pmf"):
            raise ConfigError(f"unknown source kind {self.kind!r}")
        if self.mu3 < 0 or self.mu5 < 0:
            raise ConfigError("mean photon numbers must be non-negative")
        if self.kind == "pmf":
            t = np.asarray(self.table, dtype=float)
            if t.ndim != 2 or np.any(t < 0) or abs(t.sum() - 1) > PMF_TOL:
                raise ConfigError("joint pmf must be a non-negative 2-D table summing to 1")
            object.__setattr__(self, "table", t)

    @classmethod
    def coherent(cls, mu3: float, mu5: float = 0.0) -> SourceModel:
        return cls("coherent", mu3, mu5)

    @classmethod
    def thermal(cls, mu3: float, mu5: float = 0.0) -> SourceModel:
        return cls("thermal", mu3, mu5)

    @classmethod
    def tmsv(cls, n_mean: float) -> SourceModel:
        return cls("tmsv", n_mean, n_mean)

    @classmethod
    def from_pmf(cls, table) -> SourceModel:
        t = np.asarray(table, dtype=float)
        return cls("pmf", *_pmf_means(t), table=t)

    @classmethod
    def from_state(cls, state: TwoModeState) -> SourceModel:
        return cls.from_pmf(joint_photon_distribution(state))

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``n`` pulses; returns integer arrays (n3, n5)."""
        if self.kind == "coherent":
            return rng.poisson(self.mu3, n), rng.poisson(self.mu5, n)
        if self.kind == "thermal":
            return _bose(self.mu3, n, rng), _bose(self.mu5, n, rng)
        if self.kind == "tmsv":
            k = _bose(self.mu3, n, rng)
            return k, k.copy()
        flat = np.cumsum(self.table.ravel())
        idx = np.searchsorted(flat, rng.random(n) * flat[-1], side="right")
        idx = np.minimum(idx, flat.size - 1)
        return np.divmod(idx, self.table.shape[1])

    def pmf(self, tol: float = 1e-14) -> np.ndarray:
        """Joint probability table, truncated where the dropped mass is below ``tol``."""
        if self.kind == "pmf":
            return self.table
        if self.kind == "tmsv":
            p = _marginal("thermal", self.mu3, tol)
            return np.diag(p)
        return np.outer(_marginal(self.kind, self.mu3, tol), _marginal(self.kind, self.mu5, tol))


def _bose(mu: float, n: int, rng) -> np.ndarray:
    if mu == 0:
        return np.zeros(n, dtype=np.int64)
    # numpy's geometric counts trials (>= 1); P(k) = (1-q) q^k with q = mu/(1+mu)
    return rng.geometric(1.0 / (1.0 + mu), n) - 1


def _marginal(kind: str, mu: float, tol: float) -> np.ndarray:
    from scipy import stats
    dist = stats.poisson(mu) if kind == "coherent" else stats.geom(1 / (1 + mu), loc=-1)
    if mu == 0:
        return np.array([1.0])
    top = int(dist.isf(tol)) + 2
    return dist.pmf(np.arange(top + 1))


def _pmf_means(t: np.ndarray) -> tuple[float, float]:
    n3 = np.arange(t.shape[0])[:, None]
    n5 = np.arange(t.shape[1])[None, :]
    return float((t * n3).sum()), float((t * n5).sum())


# ---------------------------------------------------------------------------
# detector and run configuration


@dataclass(frozen=True)
class DetectorParams:
    quantum_efficiency: float = 0.6
    dark_rate: float = 100.0  # counts/s
    dead_time_ns: float = 22.0
    afterpulse_prob: float = 0.01
    afterpulse_mean_ns: float = 10.0
    diffusion_tail_prob: float = 0.1
    diffusion_tail_tau_ns: float = 2.0
    jitter_sigma_ps: float = 150.0

    def __post_init__(self):
        checks = [
            (0 <= self.quantum_efficiency <= 1, "quantum_efficiency must lie in [0, 1]"),
            (self.dark_rate >= 0, "dark_rate must be >= 0"),
            (self.dead_time_ns >= 0, "dead_time_ns must be >= 0"),
            (0 <= self.afterpulse_prob < 1, "afterpulse_prob must lie in [0, 1)"),
            (self.afterpulse_mean_ns >= 0, "afterpulse_mean_ns must be >= 0"),
            (0 <= self.diffusion_tail_prob < 1, "diffusion_tail_prob must lie in [0, 1)"),
            (self.diffusion_tail_tau_ns >= 0, "diffusion_tail_tau_ns must be >= 0"),
            (self.jitter_sigma_ps >= 0, "jitter_sigma_ps must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def ideal(cls, quantum_efficiency: float = 1.0, **kw) -> DetectorParams:
        """Noise-free detector: no darks, dead time, afterpulses, tail or jitter."""
        base = dict(dark_rate=0.0, dead_time_ns=0.0, afterpulse_prob=0.0,
                    diffusion_tail_prob=0.0, jitter_sigma_ps=0.0)
        base.update(kw)
        return cls(quantum_efficiency, **base)


TOPOLOGIES = {"single_beam_hbt": 2, "double_beam": 4}


@dataclass(frozen=True)
class RunConfig:
    """One simulated measurement.

    ``single_beam_hbt`` sends ``mode`` (H3 or H5) to channels 0 and 1;
    ``double_beam`` sends H3 to channels 0/1 and H5 to channels 2/3.
    ``attenuation`` is an extra per-photon survival probability before the
    beamsplitters.
    """

    source: SourceModel
    n_pulses: int
    rng_seed: int = 0
    topology: str = "single_beam_hbt"
    detectors: DetectorParams | Sequence[DetectorParams] = DetectorParams()
    rep_rate_hz: float = DEFAULT_REP_RATE_HZ
    attenuation: float = 1.0
    mode: str = "H3"
    allow_long_dead_time: bool = False

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.n_pulses < 0:
            raise ConfigError("n_pulses must be >= 0")
        if not self.rep_rate_hz > 0:
            raise ConfigError("rep_rate_hz must be positive")
        if not 0 <= self.attenuation <= 1:
            raise ConfigError("attenuation must lie in [0, 1]")
        if self.mode not in ("H3", "H5"):
            raise ConfigError("mode must be H3 or H5")
        if self.rng_seed < 0:
            raise ConfigError("rng_seed must be non-negative")
        dets = self.detectors
        if isinstance(dets, DetectorParams):
            dets = (dets,) * self.n_channels
        dets = tuple(dets)
        if len(dets) != self.n_channels:
            raise ConfigError(f"{self.topology} needs {self.n_channels} detectors, got {len(dets)}")
        object.__setattr__(self, "detectors", dets)
        period_ns = 1e9 / self.rep_rate_hz
        if not self.allow_long_dead_time and any(d.dead_time_ns >= period_ns for d in dets):
            raise ConfigError(f"dead time reaches the pulse period ({period_ns:.2f} ns)")

    @property
    def n_channels(self) -> int:
        return TOPOLOGIES[self.topology]

    @property
    def period_ps(self) -> float:
        return 1e12 / self.rep_rate_hz

    def channel_modes(self) -> tuple[int, ...]:
        """Harmonic feeding each channel: 0 for H3, 1 for H5."""
        if self.topology == "double_beam":
            return (0, 0, 1, 1)
        m = 0 if self.mode == "H3" else 1
        return (m, m)

    def with_(self, **kw) -> RunConfig:
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# streams


class TimeTagRecord(NamedTuple):
    channel: int
    timestamp: int


@dataclass
class TimeTagStream:
    channels: np.ndarray
    timestamps: np.ndarray
    rep_rate_hz: float = DEFAULT_REP_RATE_HZ
    n_channels: int = 2
    seed: int = 0

    def __post_init__(self):
        self.channels = np.ascontiguousarray(self.channels, dtype=np.uint8)
        self.timestamps = np.ascontiguousarray(self.timestamps, dtype=np.uint64)
        if self.channels.shape != self.timestamps.shape or self.channels.ndim != 1:
            raise ValueError("channels and timestamps must be 1-D arrays of equal length")

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __iter__(self):
        for c, t in zip(self.channels.tolist(), self.timestamps.tolist()):
            yield TimeTagRecord(c, t)

    @property
    def is_sorted(self) -> bool:
        return bool(np.all(self.timestamps[1:] >= self.timestamps[:-1]))

    def channel(self, ch: int) -> np.ndarray:
        return self.timestamps[self.channels == ch]

    def counts(self) -> np.ndarray:
        return np.bincount(self.channels, minlength=self.n_channels)

    @property
    def duration_s(self) -> float:
        return float(self.timestamps[-1]) * 1e-12 if len(self) else 0.0

    @classmethod
    def from_arrays(cls, channels, timestamps, **kw) -> TimeTagStream:
        """Build a time-sorted stream (ties ordered by channel)."""
        channels = np.asarray(channels, dtype=np.uint8)
        timestamps = np.asarray(timestamps, dtype=np.uint64)
        order = np.lexsort((channels, timestamps))
        return cls(channels[order], timestamps[order], **kw)

    def __eq__(self, other) -> bool:
        return (isinstance(other, TimeTagStream)
                and np.array_equal(self.channels, other.channels)
                and np.array_equal(self.timestamps, other.timestamps)
                and self.rep_rate_hz == other.rep_rate_hz
                and self.n_channels == other.n_channels and self.seed == other.seed)


# ---------------------------------------------------------------------------
# physics steps


def sample_pulse_photons(source: SourceModel, rng: np.random.Generator) -> tuple[int, int]:
    n3, n5 = source.sample(1, rng)
    return int(n3[0]), int(n5[0])


def beamsplit(n, rng: np.random.Generator, transmission: float = 0.5):
    """Split photon counts on a lossless beamsplitter; returns (n_a, n_b)."""
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ValueError("photon number must be >= 0")
    a = rng.binomial(n_arr, transmission)
    if n_arr.ndim == 0:
        return int(a), int(n_arr - a)
    return a, n_arr - a


def _first_click_offsets(k: np.ndarray, params: DetectorParams, rng) -> np.ndarray:
    """Click delay (ps, float) for channels that detected k >= 1 photons."""
    out = np.zeros(k.size)
    if params.jitter_sigma_ps > 0:
        out += rng.normal(0.0, params.jitter_sigma_ps, k.size)
    if params.diffusion_tail_prob > 0 and params.diffusion_tail_tau_ns > 0:
        # the avalanche starts with the earliest photon: delayed only if all are,
        # and the minimum of k exponentials has mean tau / k
        all_tail = rng.random(k.size) < params.diffusion_tail_prob ** k
        out[all_tail] += rng.exponential(params.diffusion_tail_tau_ns * 1e3, all_tail.sum()) / k[all_tail]
    return out


def _register(candidates: np.ndarray, params: DetectorParams, rng) -> np.ndarray:
    """Apply non-paralyzable dead time and afterpulsing to sorted candidate times (ps)."""
    dead = params.dead_time_ns * 1e3
    ap_p, ap_mean = params.afterpulse_prob, params.afterpulse_mean_ns * 1e3
    if candidates.size == 0:
        return candidates
    if ap_p == 0 and (dead == 0 or np.all(np.diff(candidates) >= dead)):
        return candidates
    cand = candidates.tolist()
    out = []
    pending: list[float] = []
    last = -np.inf
    i, n = 0, len(cand)
    block = 4096
    u = rng.random(block)
    d = rng.exponential(1.0, block)
    j = 0
    while i < n or pending:
        if pending and (i >= n or pending[0] < cand[i]):
            t = heapq.heappop(pending)
        else:
            t = cand[i]
            i += 1
        if t < last + dead:
            continue
        out.append(t)
        last = t
        if ap_p > 0:
            if j == block:
                u = rng.random(block)
                d = rng.exponential(1.0, block)
                j = 0
            if u[j] < ap_p:
                # the detector re-arms after the dead time; the trapped carrier releases later
                heapq.heappush(pending, t + dead + ap_mean * d[j])
            j += 1
    return np.asarray(out)


def detect(n_photons: int, pulse_time_ps: float, params: DetectorParams,
           rng: np.random.Generator, *, window_ps: float = 0.0, channel: int = 0) -> list[TimeTagRecord]:
    """Clicks of one detector for one pulse; dark counts are drawn over ``window_ps`` after the pulse."""
    if n_photons < 0:
        raise ValueError("photon number must be >= 0")
    k = rng.binomial(n_photons, params.quantum_efficiency)
    times = []
    if k > 0:
        times.append(pulse_time_ps + _first_click_offsets(np.array([k]), params, rng)[0])
    n_dark = rng.poisson(params.dark_rate * window_ps * 1e-12) if window_ps > 0 else 0
    if n_dark:
        times.extend(pulse_time_ps + rng.random(n_dark) * window_ps)
    regs = _register(np.sort(np.asarray(times, dtype=float)), params, rng)
    return [TimeTagRecord(channel, max(0, int(round(t)))) for t in regs]


def simulate_run(config: RunConfig) -> TimeTagStream:
    """Simulate ``config.n_pulses`` pulses and return the merged, sorted tag stream."""
    n_ch = config.n_channels
    meta = dict(rep_rate_hz=config.rep_rate_hz, n_channels=n_ch, seed=config.rng_seed)
    if config.n_pulses == 0:
        return TimeTagStream(np.zeros(0, np.uint8), np.zeros(0, np.uint64), **meta)
    root = np.random.SeedSequence(config.rng_seed)
    src_seq, reg_seq = root.spawn(2)
    n_chunks = -(-config.n_pulses // CHUNK_PULSES)
    chunk_seqs = src_seq.spawn(n_chunks)
    period = config.period_ps
    modes = config.channel_modes()
    dets = config.detectors
    cand: list[list[np.ndarray]] = [[] for _ in range(n_ch)]
    for c, seq in enumerate(chunk_seqs):
        rng = np.random.default_rng(seq)
        first = c * CHUNK_PULSES
        size = min(CHUNK_PULSES, config.n_pulses - first)
        n3, n5 = config.source.sample(size, rng)
        busy = np.flatnonzero((n3 > 0) | (n5 > 0))
        if busy.size == 0:
            continue
        per_mode = [n3[busy], n5[busy]]
        if config.attenuation < 1:
            per_mode = [rng.binomial(m, config.attenuation) for m in per_mode]
        pulse_t = START_OFFSET_PS + (first + busy) * period
        # each harmonic arm is one 50/50 split between a channel pair
        arm_split = {}
        for m in sorted(set(modes)):
            arm_split[m] = beamsplit(per_mode[m], rng)
        seen = {m: 0 for m in arm_split}
        for ch in range(n_ch):
            m = modes[ch]
            photons = arm_split[m][seen[m]]
            seen[m] += 1
            k = rng.binomial(photons, dets[ch].quantum_efficiency)
            hit = k > 0
            if hit.any():
                cand[ch].append(pulse_t[hit] + _first_click_offsets(k[hit], dets[ch], rng))
    total_ps = START_OFFSET_PS + config.n_pulses * period
    chans, stamps = [], []
    for ch, seq in enumerate(reg_seq.spawn(n_ch)):
        rng = np.random.default_rng(seq)
        p = dets[ch]
        n_dark = rng.poisson(p.dark_rate * total_ps * 1e-12)
        parts = cand[ch] + [rng.random(n_dark) * total_ps]
        times = np.sort(np.concatenate(parts))
        times = _register(times, p, rng)
        ts = np.maximum(np.rint(times), 0).astype(np.uint64)
        chans.append(np.full(ts.size, ch, np.uint8))
        stamps.append(ts)
    return TimeTagStream.from_arrays(np.concatenate(chans), np.concatenate(stamps), **meta)


# ---------------------------------------------------------------------------
# exact click-level expectations (no dead time, darks or afterpulses)


def click_probabilities(source: SourceModel, config: RunConfig, pairs: Sequence[tuple[int, int]]):
    """Per-pulse singles and same-pulse coincidence probabilities of binary detectors.

    Returns (p_single per channel, p_joint per pair), evaluated exactly on the
    source pmf with per-photon detection probability att * eta / 2.
    """
    pmf = source.pmf()
    n3 = np.arange(pmf.shape[0])[:, None]
    n5 = np.arange(pmf.shape[1])[None, :]
    modes = config.channel_modes()
    q = [config.attenuation * d.quantum_efficiency / 2 for d in config.detectors]

    def miss(chs):
        # probability that every channel in ``chs`` stays dark, per (n3, n5)
        x = [1.0, 1.0]
        for ch in chs:
            x[modes[ch]] -= q[ch]
        return np.clip(x[0], 0, None) ** n3 * np.clip(x[1], 0, None) ** n5

    singles = np.array([1 - np.sum(pmf * miss([ch])) for ch in range(config.n_channels)])
    joint = []
    for a, b in pairs:
        joint.append(1 - np.sum(pmf * miss([a])) - np.sum(pmf * miss([b])) + np.sum(pmf * miss([a, b])))
    return singles, np.array(joint)


def expected_click_g2(config: RunConfig, pairs: Sequence[tuple[int, int]]) -> float:
    """Zero-delay g2 that ideal binary detectors would report for the summed pairs."""
    singles, joint = click_probabilities(config.source, config, pairs)
    ref = sum(singles[a] * singles[b] for a, b in pairs)
    return float(joint.sum() / ref)


# ---------------------------------------------------------------------------
# binary tag files

MAGIC = b"HHGT"
VERSION = 1
HEADER = struct.Struct("<4sHdHQ")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("reserved", "V7"), ("timestamp", "<u8")])


def encode_tags(stream: TimeTagStream) -> bytes:
    rec = np.zeros(len(stream), dtype=RECORD_DTYPE)
    rec["channel"] = stream.channels
    rec["timestamp"] = stream.timestamps
    head = HEADER.pack(MAGIC, VERSION, float(stream.rep_rate_hz), int(stream.n_channels), int(stream.seed))
    return head + rec.tobytes()


def decode_tags(data: bytes) -> TimeTagStream:
    if len(data) < HEADER.size:
        raise FormatError("file shorter than the tag header")
    magic, version, rate, n_ch, seed = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    body = memoryview(data)[HEADER.size:]
    if len(body) % RECORD_DTYPE.itemsize:
        raise FormatError("truncated record body")
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    chans = rec["channel"].copy()
    if chans.size and chans.max() >= n_ch:
        raise FormatError("record channel outside the declared channel count")
    return TimeTagStream(chans, rec["timestamp"].copy(), rep_rate_hz=rate, n_channels=n_ch, seed=seed)


def write_tags(path, stream: TimeTagStream) -> str:
    """Write atomically; returns the SHA-256 of the file bytes."""
    data = encode_tags(stream)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def read_tags(path) -> TimeTagStream:
    return decode_tags(Path(path).read_bytes())
