"""Detection-chain models and timetag processing."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import voigt_profile

from .errors import FactorOutOfRange, NonPositiveInput, RatioOutOfRange, UnsortedInput, ValidationError
from .photonsim import DARK, PS, PhotonStream, merge, poisson_stream

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
C_LIGHT = 299_792_458.0


# ---------------------------------------------------------------------------
# efficiency budget


@dataclass
class EfficiencyBudget:
    factors: list[tuple[str, float]] = field(default_factory=list)

    def __post_init__(self):
        self.factors = [(str(n), float(f)) for n, f in self.factors]
        names = [n for n, _ in self.factors]
        if len(set(names)) != len(names):
            raise ValidationError("budget factor names must be unique")
        for name, f in self.factors:
            if not 0 < f <= 1:
                raise FactorOutOfRange(f"{name} = {f} outside (0, 1]")

    def __add__(self, other: "EfficiencyBudget") -> "EfficiencyBudget":
        return EfficiencyBudget(self.factors + other.factors)

    def to_json(self) -> str:
        return json.dumps([{"name": n, "factor": f} for n, f in self.factors])

    @classmethod
    def from_json(cls, text: str) -> "EfficiencyBudget":
        return cls([(d["name"], d["factor"]) for d in json.loads(text)])


def compose_budget(budget: EfficiencyBudget) -> float:
    return float(math.prod(f for _, f in budget.factors))


_COMMON = [("edge_coupling", 0.0825), ("filtering", 0.513)]
# dipole-to-waveguide coupling (0.40) is needed to reach the quoted totals
DET1_BUDGET = EfficiencyBudget(_COMMON + [("fiber", 0.906), ("splitter", 0.92),
                                          ("detector", 0.24), ("dipole_waveguide", 0.40)])
DET2_BUDGET = EfficiencyBudget(_COMMON + [("fiber", 0.948), ("splitter", 0.92),
                                          ("detector", 0.21), ("dipole_waveguide", 0.40)])


def quantum_efficiency_bound(count_rate_cps: float, rep_rate_hz: float, eta_total: float) -> float:
    if count_rate_cps < 0 or rep_rate_hz <= 0 or eta_total <= 0:
        raise NonPositiveInput("rate must be >= 0; repetition rate and efficiency > 0")
    if eta_total > 1:
        raise ValidationError("eta_total must be <= 1")
    return count_rate_cps / (rep_rate_hz * eta_total)


# ---------------------------------------------------------------------------
# detectors and beamsplitter


@dataclass
class DetectorSpec:
    efficiency: float = 1.0
    dark_rate_cps: float = 0.0
    jitter_sigma_ps: float = 0.0
    dead_time_ps: float = 0.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValidationError("efficiency must be in [0, 1]")
        if min(self.dark_rate_cps, self.jitter_sigma_ps, self.dead_time_ps) < 0:
            raise ValidationError("dark rate, jitter and dead time must be >= 0")

    @classmethod
    def from_jitter_fwhm(cls, efficiency, jitter_fwhm_ps, dark_rate_cps=0.0, dead_time_ps=0.0):
        return cls(efficiency, dark_rate_cps, jitter_fwhm_ps / FWHM_PER_SIGMA, dead_time_ps)


# Dark rates are not quoted; 100 cps is a typical SNSPD figure.
DET1 = DetectorSpec.from_jitter_fwhm(0.24, 165.0, dark_rate_cps=100.0)
DET2 = DetectorSpec.from_jitter_fwhm(0.21, 172.0, dark_rate_cps=100.0)


def _apply_dead_time(t: np.ndarray, dead_ps: float) -> np.ndarray:
    """Mask of events kept by a non-paralyzable dead time."""
    keep = np.ones(t.size, bool)
    if dead_ps <= 0 or t.size < 2:
        return keep
    ti = t.astype(np.int64)
    close = np.flatnonzero(np.diff(ti) < dead_ps) + 1
    # an event far from its predecessor is always accepted, so only the
    # close ones need the sequential pass
    last_acc = 0
    prev = -2
    for i in close.tolist():
        if i - 1 != prev:
            last_acc = ti[i - 1]
        if ti[i] - last_acc < dead_ps:
            keep[i] = False
        else:
            last_acc = ti[i]
        prev = i
    return keep


def detect(stream: PhotonStream, det: DetectorSpec, duration_s: float, seed: int) -> PhotonStream:
    """Thin by efficiency, add Gaussian jitter, merge dark counts, apply dead time."""
    if duration_s <= 0:
        raise ValidationError("duration_s must be positive")
    end = round(duration_s * PS)
    if len(stream) and int(stream.timestamps_ps[-1]) >= end:
        raise ValidationError("stream extends beyond duration")
    rng = np.random.default_rng(seed)
    if det.efficiency >= 1:
        out = stream
    else:
        out = stream.select(rng.random(len(stream)) < det.efficiency)
    if det.jitter_sigma_ps > 0 and len(out):
        t = out.timestamps_ps.astype(np.float64) + rng.normal(0, det.jitter_sigma_ps, len(out))
        t = np.round(t)
        ok = (t >= 0) & (t < end)
        t, ch = t[ok].astype(np.uint64), out.channels[ok]
        order = np.argsort(t, kind="stable")
        t, ch = t[order], ch[order]
        keep = np.ones(t.size, bool)
        keep[1:] = t[1:] != t[:-1]
        out = PhotonStream(t[keep], ch[keep], duration_s)
    else:
        out = PhotonStream(out.timestamps_ps, out.channels, duration_s)
    if det.dark_rate_cps > 0:
        dark_seed = int(rng.integers(2**63))
        out = merge(out, poisson_stream(det.dark_rate_cps, duration_s, dark_seed, DARK))
        out.duration_s = duration_s
    if det.dead_time_ps > 0:
        out = out.select(_apply_dead_time(out.timestamps_ps, det.dead_time_ps))
    return out


def hbt_split(stream: PhotonStream, ratio: float, seed: int) -> tuple[PhotonStream, PhotonStream]:
    """Route each photon to arm A with probability ``ratio``, else to arm B."""
    if not 0 < ratio < 1:
        raise RatioOutOfRange(f"ratio = {ratio} outside (0, 1)")
    rng = np.random.default_rng(seed)
    to_a = rng.random(len(stream)) < ratio
    return stream.select(to_a), stream.select(~to_a)


# ---------------------------------------------------------------------------
# coincidence histograms


@dataclass
class CoincidenceHistogram:
    bin_width_ps: float
    centers_ps: np.ndarray
    counts: np.ndarray

    def mirrored(self) -> "CoincidenceHistogram":
        return CoincidenceHistogram(self.bin_width_ps, -self.centers_ps[::-1], self.counts[::-1].copy())

    def baseline(self, lifetime_ns: float) -> float:
        """Mean of bins further than five lifetimes from zero delay."""
        far = np.abs(self.centers_ps) > 5 * lifetime_ns * 1e3
        if not far.any():
            raise ValidationError("histogram too narrow for a baseline estimate")
        return float(self.counts[far].mean())

    def normalized(self, lifetime_ns: float) -> np.ndarray:
        return self.counts / self.baseline(lifetime_ns)


def _check_sorted(t: np.ndarray, name: str):
    if t.size > 1 and np.any(t[1:] < t[:-1]):
        raise UnsortedInput(f"stream {name} is not sorted")


def coincidence_histogram(a: PhotonStream, b: PhotonStream, bin_width_ps: float = 300.0,
                          max_delay_ps: float = 100_000.0) -> CoincidenceHistogram:
    """Histogram of all delays t_b - t_a within +-max_delay.

    Bin k collects delays that round (half away from zero) to k * bin_width,
    which keeps hist(a, b) an exact mirror of hist(b, a).
    """
    if bin_width_ps <= 0:
        raise ValidationError("bin_width_ps must be positive")
    ta = np.asarray(a.timestamps_ps, dtype=np.int64)
    tb = np.asarray(b.timestamps_ps, dtype=np.int64)
    _check_sorted(ta, "a")
    _check_sorted(tb, "b")
    k_max = int(round(max_delay_ps / bin_width_ps))
    reach = (k_max + 0.5) * bin_width_ps
    counts = np.zeros(2 * k_max + 1, dtype=np.int64)
    # sliding window over b for each event in a, done in vectorized chunks
    step = 200_000
    for s in range(0, ta.size, step):
        ca = ta[s:s + step]
        lo = np.searchsorted(tb, ca - reach, side="left")
        hi = np.searchsorted(tb, ca + reach, side="right")
        n = hi - lo
        total = int(n.sum())
        if total == 0:
            continue
        offs = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
        d = tb[np.repeat(lo, n) + offs] - np.repeat(ca, n)
        k = np.sign(d) * np.floor((np.abs(d) + bin_width_ps / 2) / bin_width_ps)
        k = k[np.abs(k) <= k_max].astype(np.int64) + k_max
        counts += np.bincount(k, minlength=counts.size)
    centers = (np.arange(-k_max, k_max + 1) * bin_width_ps).astype(float)
    return CoincidenceHistogram(float(bin_width_ps), centers, counts)


def decay_histogram(stream: PhotonStream, rep_rate_hz: float, bin_ps: float = 100.0,
                    trigger_offset_ps: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of arrival time modulo the laser period: (bin centers in ns, counts)."""
    period_ps = PS / rep_rate_hz
    phase = np.mod(stream.timestamps_ps.astype(np.float64) - trigger_offset_ps, period_ps)
    n_bins = int(period_ps // bin_ps)
    counts, edges = np.histogram(phase, bins=n_bins, range=(0, n_bins * bin_ps))
    return 0.5 * (edges[1:] + edges[:-1]) / 1e3, counts


# ---------------------------------------------------------------------------
# spectrometer


@dataclass
class Spectrum:
    wavelengths_nm: np.ndarray
    counts: np.ndarray
    resolution_pm: float

    def __post_init__(self):
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=float)
        self.counts = np.asarray(self.counts)
        if np.any(np.diff(self.wavelengths_nm) <= 0):
            raise ValidationError("wavelength grid must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValidationError("counts must be >= 0")


def line_profile(wl_nm, center_nm, natural_fwhm_nm, resolution_nm):
    """Area-normalized Voigt: Lorentzian line convolved with a Gaussian instrument response."""
    return voigt_profile(np.asarray(wl_nm) - center_nm, resolution_nm / FWHM_PER_SIGMA, natural_fwhm_nm / 2)


def spectrometer(lines: Sequence[tuple[float, float, float]], resolution_pm: float, integration_s: float,
                 grid, seed: int | None = 0, noise: bool = True, dark_per_pixel: float = 0.0) -> Spectrum:
    """Simulated spectrum of Lorentzian ``lines`` (center_nm, natural_fwhm_nm, rate_cps).

    Expected counts are integrated over each pixel (Simpson rule on 11 subsamples)
    before Poisson sampling.
    """
    if resolution_pm <= 0:
        raise ValidationError("resolution_pm must be positive")
    if integration_s < 0:
        raise ValidationError("integration_s must be >= 0")
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be strictly increasing with >= 2 pixels")
    pitch = np.diff(grid).mean()
    sub = np.linspace(-0.5, 0.5, 11)
    simpson = np.array([1, 4, 2, 4, 2, 4, 2, 4, 2, 4, 1], float) / 30.0
    pts = grid[:, None] + sub[None, :] * pitch
    expected = np.full(grid.size, dark_per_pixel * integration_s, dtype=float)
    for center, fwhm, rate in lines:
        prof = line_profile(pts, center, fwhm, resolution_pm * 1e-3)
        expected += rate * integration_s * pitch * (prof @ simpson)
    if not noise:
        return Spectrum(grid, expected, resolution_pm)
    rng = np.random.default_rng(seed)
    return Spectrum(grid, rng.poisson(expected), resolution_pm)


def natural_linewidth_nm(lifetime_ns: float, wavelength_nm: float) -> float:
    """Transform-limited FWHM 1/(2 pi tau) expressed in wavelength."""
    dnu = 1.0 / (2 * math.pi * lifetime_ns * 1e-9)
    return (wavelength_nm * 1e-9) ** 2 * dnu / C_LIGHT * 1e9


# ---------------------------------------------------------------------------
# CSV formats


def write_histogram_csv(path, hist: CoincidenceHistogram) -> None:
    with open(path, "w") as fh:
        fh.write(f"# bin_width_ps={hist.bin_width_ps!r}\n")
        fh.write("delay_ps,counts\n")
        for c, n in zip(hist.centers_ps.tolist(), hist.counts.tolist()):
            fh.write(f"{c!r},{n}\n")


def read_histogram_csv(path) -> CoincidenceHistogram:
    with open(path) as fh:
        bw = float(fh.readline().split("=", 1)[1])
        fh.readline()
        arr = np.loadtxt(fh, delimiter=",", ndmin=2)
    return CoincidenceHistogram(bw, arr[:, 0], arr[:, 1].astype(np.int64))


def write_spectrum_csv(path, spec: Spectrum) -> None:
    with open(path, "w") as fh:
        fh.write(f"# resolution_pm={spec.resolution_pm!r}\n")
        fh.write("wavelength_nm,counts\n")
        for w, n in zip(spec.wavelengths_nm.tolist(), spec.counts.tolist()):
            fh.write(f"{w!r},{n!r}\n")


def read_spectrum_csv(path) -> Spectrum:
    with open(path) as fh:
        res = float(fh.readline().split("=", 1)[1])
        fh.readline()
        arr = np.loadtxt(fh, delimiter=",", ndmin=2)
    counts = arr[:, 1]
    if np.all(counts == np.round(counts)):
        counts = counts.astype(np.int64)
    return Spectrum(arr[:, 0], counts, res)
