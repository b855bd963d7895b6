"""Seeded generators for emitter, background and laser-leak photon streams."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import stats

from .errors import InactiveEmitter, NonPositiveDuration, NonPositiveInput, ValidationError

# channel / source tags stored per event
EMITTER, BACKGROUND, DARK, LASER = 0, 1, 2, 3
SOURCE_NAMES = {EMITTER: "emitter", BACKGROUND: "background", DARK: "dark", LASER: "laser"}

PS = 1e12  # picoseconds per second
_CHUNK = 4_000_000


@dataclass
class PhotonStream:
    """Sorted, strictly increasing timestamps (ps) with a per-event channel tag."""
    timestamps_ps: np.ndarray
    channels: np.ndarray
    duration_s: float

    def __post_init__(self):
        self.timestamps_ps = np.asarray(self.timestamps_ps, dtype=np.uint64)
        ch = np.asarray(self.channels, dtype=np.uint8)
        if ch.ndim == 0:
            ch = np.full(self.timestamps_ps.size, ch, dtype=np.uint8)
        self.channels = ch
        if self.channels.shape != self.timestamps_ps.shape:
            raise ValidationError("timestamps and channels differ in length")

    def __len__(self):
        return int(self.timestamps_ps.size)

    @classmethod
    def empty(cls, duration_s: float) -> "PhotonStream":
        return cls(np.zeros(0, np.uint64), np.zeros(0, np.uint8), duration_s)

    @property
    def rate_cps(self) -> float:
        return len(self) / self.duration_s

    def validate(self) -> "PhotonStream":
        t = self.timestamps_ps
        if t.size and np.any(np.diff(t.astype(np.int64)) <= 0):
            raise ValidationError("timestamps are not strictly increasing")
        if t.size and t[-1] >= round(self.duration_s * PS):
            raise ValidationError("timestamp beyond acquisition duration")
        return self

    def select(self, mask) -> "PhotonStream":
        return PhotonStream(self.timestamps_ps[mask], self.channels[mask], self.duration_s)

    def equals(self, other: "PhotonStream") -> bool:
        return (self.duration_s == other.duration_s
                and np.array_equal(self.timestamps_ps, other.timestamps_ps)
                and np.array_equal(self.channels, other.channels))


def merge(*streams: PhotonStream) -> PhotonStream:
    """Union of streams; events landing on the same picosecond keep the first."""
    if not streams:
        raise ValueError("nothing to merge")
    duration = max(s.duration_s for s in streams)
    t = np.concatenate([s.timestamps_ps for s in streams])
    ch = np.concatenate([s.channels for s in streams])
    order = np.argsort(t, kind="stable")
    t, ch = t[order], ch[order]
    keep = np.ones(t.size, bool)
    keep[1:] = t[1:] != t[:-1]
    return PhotonStream(t[keep], ch[keep], duration)


def _finalize(times_ps: np.ndarray, tag: int, duration_s: float) -> PhotonStream:
    """Round float ps times, drop out-of-window events and duplicates."""
    t = np.round(times_ps)
    t = t[(t >= 0) & (t < round(duration_s * PS))].astype(np.uint64)
    t.sort()
    if t.size:
        keep = np.ones(t.size, bool)
        keep[1:] = t[1:] != t[:-1]
        t = t[keep]
    return PhotonStream(t, np.full(t.size, tag, np.uint8), duration_s)


# ---------------------------------------------------------------------------
# emitters


@dataclass
class EmitterSpec:
    zpl_nm: float = 1278.7
    lifetime_ns: float = 8.21
    p_sat_uw: float = 7.6
    i_inf_cps: float = 4753.0
    depth_nm: float = 110.0
    trim: object | None = None
    active: bool = True
    p_sat_pulsed_uw: float = 3.1

    def __post_init__(self):
        if not 1250 <= self.zpl_nm <= 1300:
            raise ValidationError(f"zpl_nm = {self.zpl_nm} outside [1250, 1300]")
        if self.lifetime_ns <= 0 or self.p_sat_uw <= 0 or self.p_sat_pulsed_uw <= 0:
            raise ValidationError("lifetime and saturation powers must be positive")
        if self.i_inf_cps < 0:
            raise ValidationError("i_inf_cps must be non-negative")

    @property
    def is_active(self) -> bool:
        if self.trim is not None and not getattr(self.trim, "active", True):
            return False
        return self.active


@dataclass
class ExcitationSpec:
    mode: Literal["cw", "pulsed"] = "cw"
    power_uw: float = 10.0
    wavelength_nm: float = 532.0
    rep_rate_hz: float | None = None
    na: float = 0.55

    def __post_init__(self):
        if self.mode not in ("cw", "pulsed"):
            raise ValidationError(f"unknown excitation mode {self.mode!r}")
        if self.power_uw < 0:
            raise ValidationError("power_uw must be >= 0")
        if not 0 < self.na <= 1:
            raise ValidationError("na must be in (0, 1]")
        if self.mode == "pulsed" and not (self.rep_rate_hz and self.rep_rate_hz > 0):
            raise ValidationError("pulsed excitation needs rep_rate_hz > 0")


@dataclass
class DepthDistribution:
    range_nm: float = 113.3
    straggle_nm: float = 41.3
    skewness: float = -0.259
    kurtosis: float = 2.6411  # carried for reference, not matched by the sampler

    def __post_init__(self):
        if self.straggle_nm <= 0:
            raise ValidationError("straggle_nm must be positive")

    def skewnorm_params(self) -> tuple[float, float, float]:
        """(shape, loc, scale) of the skew-normal with matching mean, std, skewness."""
        g = abs(self.skewness)
        if g >= 0.995:
            raise ValidationError("skewness outside the skew-normal range")
        g23 = g ** (2 / 3)
        delta = math.sqrt(math.pi / 2 * g23 / (g23 + ((4 - math.pi) / 2) ** (2 / 3)))
        delta = math.copysign(delta, self.skewness)
        shape = delta / math.sqrt(1 - delta ** 2)
        scale = self.straggle_nm / math.sqrt(1 - 2 * delta ** 2 / math.pi)
        loc = self.range_nm - scale * delta * math.sqrt(2 / math.pi)
        return shape, loc, scale

    def sample(self, n: int, rng: np.random.Generator, clip: tuple[float, float] | None = (0.0, 220.0)):
        shape, loc, scale = self.skewnorm_params()
        d = stats.skewnorm.rvs(shape, loc=loc, scale=scale, size=n, random_state=rng)
        return np.clip(d, *clip) if clip is not None else d


def power_density(power_uw: float, wavelength_nm: float, na: float) -> float:
    """Excitation density in kW/cm^2 over a diffraction-limited disk of radius lambda/(4 NA)."""
    if power_uw <= 0 or wavelength_nm <= 0 or na <= 0:
        raise NonPositiveInput("power, wavelength and NA must be positive")
    radius_cm = wavelength_nm * 1e-7 / (4 * na)
    return power_uw * 1e-6 / (math.pi * radius_cm ** 2) / 1e3


def saturation_rate(emitter: EmitterSpec, power_uw: float) -> float:
    if not emitter.is_active:
        raise InactiveEmitter("emitter is deactivated")
    if power_uw < 0:
        raise ValidationError("power_uw must be >= 0")
    return emitter.i_inf_cps * power_uw / (power_uw + emitter.p_sat_uw)


def simulate_emission(emitter: EmitterSpec, exc: ExcitationSpec, duration_s: float, seed: int,
                      collection: float = 1.0) -> PhotonStream:
    """Photon stream emitted into the collected mode.

    ``collection`` keeps each photon independently with that probability,
    applied while generating so weakly collected pulsed streams stay small.

    CW: renewal process, each cycle an exponential re-excitation wait plus an
    exponential decay with the emitter lifetime; the re-excitation rate is set
    so the mean photon rate equals :func:`saturation_rate`.
    Pulsed: at most one photon per pulse, emitted with probability
    P / (P + P_sat_pulsed) at an exponential delay after the pulse.
    """
    if not emitter.is_active:
        raise InactiveEmitter("emitter is deactivated")
    if duration_s <= 0:
        raise NonPositiveDuration("duration_s must be positive")
    if not 0 < collection <= 1:
        raise ValidationError("collection must be in (0, 1]")
    rng = np.random.default_rng(seed)
    tau_ps = emitter.lifetime_ns * 1e3
    if exc.mode == "cw":
        rate = saturation_rate(emitter, exc.power_uw)
        if rate <= 0:
            return PhotonStream.empty(duration_s)
        wait_ps = PS / rate - tau_ps
        if wait_ps <= 0:
            raise ValidationError("requested rate exceeds the lifetime-limited cycle rate")
        out = _renewal(rng, wait_ps, tau_ps, duration_s)
        return out if collection == 1 else out.select(rng.random(len(out)) < collection)
    p_emit = collection * exc.power_uw / (exc.power_uw + emitter.p_sat_pulsed_uw)
    return _pulsed(rng, exc.rep_rate_hz, p_emit, tau_ps, duration_s, EMITTER)


def _renewal(rng, wait_ps, tau_ps, duration_s) -> PhotonStream:
    end = round(duration_s * PS)
    mean_n = duration_s * PS / (wait_ps + tau_ps)
    chunk = int(min(_CHUNK, mean_n + 10 * math.sqrt(mean_n) + 100))
    pieces = []
    last = 0
    while True:
        # integer intervals >= 1 ps keep consecutive photons distinct
        gaps = np.maximum(1, np.round(rng.exponential(wait_ps, chunk) + rng.exponential(tau_ps, chunk)))
        t = last + np.cumsum(gaps.astype(np.uint64))
        if t[-1] >= end:
            pieces.append(t[t < end])
            break
        pieces.append(t)
        last = int(t[-1])
    t = np.concatenate(pieces)
    return PhotonStream(t, np.full(t.size, EMITTER, np.uint8), duration_s)


def _pulsed(rng, rep_rate_hz, p_emit, decay_ps, duration_s, tag) -> PhotonStream:
    n_pulses = int(math.floor(duration_s * rep_rate_hz))
    period_ps = PS / rep_rate_hz
    pieces = []
    for start in range(0, n_pulses, _CHUNK):
        n = min(_CHUNK, n_pulses - start)
        k = start + np.flatnonzero(rng.random(n) < p_emit)
        pieces.append(k * period_ps + rng.exponential(decay_ps, k.size))
    times = np.concatenate(pieces) if pieces else np.zeros(0)
    return _finalize(times, tag, duration_s)


def simulate_background(power_uw: float, coeff_cps_per_uw: float, duration_s: float, seed: int,
                        tag: int = BACKGROUND) -> PhotonStream:
    """Homogeneous Poisson stream at rate ``coeff * power``."""
    if power_uw < 0 or coeff_cps_per_uw < 0:
        raise ValidationError("power and background coefficient must be >= 0")
    if duration_s <= 0:
        raise NonPositiveDuration("duration_s must be positive")
    return poisson_stream(coeff_cps_per_uw * power_uw, duration_s, seed, tag)


def poisson_stream(rate_cps: float, duration_s: float, seed: int, tag: int) -> PhotonStream:
    rng = np.random.default_rng(seed)
    n = rng.poisson(rate_cps * duration_s) if rate_cps > 0 else 0
    return _finalize(rng.uniform(0, duration_s * PS, n), tag, duration_s)


def simulate_laser_leak(rep_rate_hz: float, prob_per_pulse: float, duration_s: float, seed: int,
                        decay_ns: float = 0.3) -> PhotonStream:
    """Pulse-synchronous leakage counts decaying with the laser time constant."""
    if not 0 <= prob_per_pulse <= 1:
        raise ValidationError("prob_per_pulse must be in [0, 1]")
    rng = np.random.default_rng(seed)
    return _pulsed(rng, rep_rate_hz, prob_per_pulse, decay_ns * 1e3, duration_s, LASER)


def sample_emitters(n: int, seed: int, zpl_mu_nm: float = 1278.7, zpl_sigma_nm: float = 1.1,
                    lt_mu_ns: float = 8.33, lt_sigma_ns: float = 0.68,
                    depth: DepthDistribution | None = None, **emitter_kw) -> list[EmitterSpec]:
    if n < 0:
        raise ValidationError("n must be >= 0")
    if zpl_sigma_nm <= 0 or lt_sigma_ns <= 0:
        raise ValidationError("sigmas must be positive")
    if n == 0:
        return []
    depth = depth or DepthDistribution()
    rng = np.random.default_rng(seed)
    zpl = rng.normal(zpl_mu_nm, zpl_sigma_nm, n)
    lt = rng.normal(lt_mu_ns, lt_sigma_ns, n)
    while np.any(bad := lt <= 0):
        lt[bad] = rng.normal(lt_mu_ns, lt_sigma_ns, bad.sum())
    depths = depth.sample(n, rng)
    return [EmitterSpec(zpl_nm=float(z), lifetime_ns=float(t), depth_nm=float(d), **emitter_kw)
            for z, t, d in zip(zpl, lt, depths)]


# ---------------------------------------------------------------------------
# file formats

_MAGIC = b"PHST"
_VERSION = 1
_HEADER = struct.Struct("<4sBdQ")
_RECORD = np.dtype([("t", "<u8"), ("ch", "u1")])


def write_stream(path, stream: PhotonStream) -> None:
    rec = np.empty(len(stream), dtype=_RECORD)
    rec["t"] = stream.timestamps_ps
    rec["ch"] = stream.channels
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, float(stream.duration_s), len(stream)))
        fh.write(rec.tobytes())


def read_stream(path) -> PhotonStream:
    data = Path(path).read_bytes()
    magic, version, duration, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValidationError(f"{path}: not a photon stream file")
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=_HEADER.size)
    return PhotonStream(rec["t"].copy(), rec["ch"].copy(), duration)


def write_stream_csv(path, stream: PhotonStream) -> None:
    with open(path, "w") as fh:
        fh.write(f"# duration_s={stream.duration_s!r}\n")
        fh.write("timestamp_ps,channel\n")
        for t, c in zip(stream.timestamps_ps.tolist(), stream.channels.tolist()):
            fh.write(f"{t},{c}\n")


def read_stream_csv(path) -> PhotonStream:
    with open(path) as fh:
        first = fh.readline()
        duration = float(first.split("=", 1)[1])
        fh.readline()
        arr = np.loadtxt(fh, delimiter=",", dtype=np.uint64, ndmin=2)
    if arr.size == 0:
        return PhotonStream.empty(duration)
    return PhotonStream(arr[:, 0], arr[:, 1].astype(np.uint8), duration)
