"""Spectral trimming: Stark-shift estimate, synthetic dose response, closed-loop
controller and channel assignment on a frequency grid.

Sign convention: ``direction = -1`` shifts the ZPL to shorter wavelength
(blue, higher frequency), ``+1`` to longer wavelength (red).

The dose response is a labeled synthetic model.  The shift depends only on the
largest power ever applied (a ratchet), rising linearly from 0 at 0.1 mW to
``max_shift_pm`` at 0.9 mW.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .detchain import natural_linewidth_nm, spectrometer
from .errors import (EmitterDeactivated, NonPositiveDuration, PeakCountInfeasible, Unreachable,
                     ValidationError)
from .fitkit.fits import fit_lorentzian_peaks
from .photonsim import EmitterSpec

E_CHARGE = 1.602176634e-19
EPS0 = 8.8541878128e-12
C_LIGHT = 299792458.0

PROBE_THRESHOLD_MW = 0.1
FULL_DOSE_MW = 0.9


# Stark estimate ----------------------------------------------------------

@dataclass(frozen=True)
class StarkModel:
    trap_density_per_cm2: float = 1e13
    relative_permittivity: float = 3.9
    tuning_rate_ghz_per_mv_m: float = 10.0

    def __post_init__(self):
        if self.trap_density_per_cm2 < 0:
            raise ValidationError("trap density must be >= 0")
        if self.relative_permittivity <= 0 or self.tuning_rate_ghz_per_mv_m <= 0:
            raise ValidationError("permittivity and tuning rate must be positive")


def stark_shift_estimate(model: StarkModel) -> dict:
    """Field of a charged sheet E = e·σ/(2·ε_r·ε0) and the linear shift R·E."""
    sigma_m2 = model.trap_density_per_cm2 * 1e4
    field_v_m = E_CHARGE * sigma_m2 / (2 * model.relative_permittivity * EPS0)
    field_mv_m = field_v_m / 1e6
    return {"field_mv_per_m": field_mv_m,
            "shift_ghz": stark_shift_from_field(field_mv_m, model.tuning_rate_ghz_per_mv_m)}


def stark_shift_from_field(field_mv_per_m: float, tuning_rate_ghz_per_mv_m: float = 10.0) -> float:
    return tuning_rate_ghz_per_mv_m * field_mv_per_m


# Unit helpers ------------------------------------------------------------

def wavelength_shift_to_ghz(delta_pm: float, lambda0_nm: float) -> float:
    """Δν = c·Δλ/λ0² (magnitude convention: sign follows Δλ)."""
    if lambda0_nm <= 0:
        raise ValidationError("lambda0_nm must be positive")
    return C_LIGHT * (delta_pm * 1e-12) / (lambda0_nm * 1e-9) ** 2 / 1e9


def frequency_ghz(wavelength_nm: float) -> float:
    return C_LIGHT / wavelength_nm


def wavelength_nm(frequency_ghz: float) -> float:
    return C_LIGHT / frequency_ghz


# Dose response -----------------------------------------------------------

def dose_fraction(power_mw: float) -> float:
    return min(max((power_mw - PROBE_THRESHOLD_MW) / (FULL_DOSE_MW - PROBE_THRESHOLD_MW), 0.0), 1.0)


@dataclass(frozen=True)
class TrimState:
    direction: int = -1
    max_shift_pm: float = 300.0
    deactivation_threshold_mw: float = 0.95
    max_power_applied_mw: float = 0.0
    cumulative_shift_pm: float = 0.0
    active: bool = True
    # optional partial return towards the original line at high power
    reversal: bool = False
    reversal_power_mw: float = 0.85
    reversal_fraction: float = 0.5

    def __post_init__(self):
        if self.direction not in (-1, 1):
            raise ValidationError("direction must be +1 or -1")
        if self.max_shift_pm < 0:
            raise ValidationError("max_shift_pm must be >= 0")
        if self.deactivation_threshold_mw <= 0:
            raise ValidationError("deactivation threshold must be positive")


def apply_irradiation(state: TrimState, power_mw: float, duration_s: float) -> TrimState:
    """Return the state after irradiating at ``power_mw`` for ``duration_s``.

    Probing powers (< 0.1 mW), powers not above the running maximum and any
    irradiation of a deactivated emitter return ``state`` itself.
    """
    if not math.isfinite(power_mw) or power_mw < 0:
        raise ValidationError("power must be finite and >= 0")
    if not duration_s > 0:
        raise NonPositiveDuration(f"duration_s = {duration_s} must be > 0")
    if not state.active:
        return state
    if power_mw >= state.deactivation_threshold_mw:
        return dataclasses.replace(state, active=False,
                                   max_power_applied_mw=max(power_mw, state.max_power_applied_mw))
    if power_mw < PROBE_THRESHOLD_MW or power_mw <= state.max_power_applied_mw:
        return state
    increment = state.direction * state.max_shift_pm * (
        dose_fraction(power_mw) - dose_fraction(state.max_power_applied_mw))
    shift = state.cumulative_shift_pm + increment
    if state.reversal and power_mw >= state.reversal_power_mw > state.max_power_applied_mw:
        shift *= 1.0 - state.reversal_fraction
    cap = state.max_shift_pm
    shift = min(max(shift, -cap), cap)
    return dataclasses.replace(state, max_power_applied_mw=power_mw, cumulative_shift_pm=shift)


# Frequency grid ----------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    anchor_thz: float = 193.1
    spacing_ghz: float = 25.0
    tolerance_ghz: float | None = None
    resolution_pm: float = 40.0
    reference_nm: float = 1278.0

    def __post_init__(self):
        if self.spacing_ghz <= 0:
            raise ValidationError("spacing must be positive")
        if self.tolerance_ghz is None:
            tol = max(5.0, wavelength_shift_to_ghz(self.resolution_pm, self.reference_nm))
            object.__setattr__(self, "tolerance_ghz", tol)
        if not 0 < self.tolerance_ghz <= self.spacing_ghz / 2:
            raise ValidationError("tolerance must lie in (0, spacing/2]")

    def channel_ghz(self, k: int) -> float:
        return self.anchor_thz * 1e3 + k * self.spacing_ghz

    def nearest_channel(self, freq_ghz: float) -> int:
        return int(round((freq_ghz - self.anchor_thz * 1e3) / self.spacing_ghz))

    def offset_ghz(self, freq_ghz: float) -> float:
        return freq_ghz - self.channel_ghz(self.nearest_channel(freq_ghz))

    def aligned(self, freq_ghz: float) -> bool:
        return abs(self.offset_ghz(freq_ghz)) <= self.tolerance_ghz


# Synthetic bench ---------------------------------------------------------

@dataclass
class TrimmableEmitter:
    """Emitter plus its trim state; ``irradiate`` is the only mutator."""
    spec: EmitterSpec
    state: TrimState = field(default_factory=TrimState)

    @property
    def zpl_nm(self) -> float:
        return self.spec.zpl_nm + self.state.cumulative_shift_pm * 1e-3

    @property
    def active(self) -> bool:
        return self.state.active and self.spec.active

    def irradiate(self, power_mw: float, duration_s: float) -> None:
        self.state = apply_irradiation(self.state, power_mw, duration_s)


@dataclass
class SpectrometerProbe:
    """Simulated spectrum around the current line followed by a Lorentzian fit.

    Probing excites at ``probe_power_mw`` (below the trimming threshold) and
    goes through :func:`apply_irradiation` like any other exposure.
    """
    seed: int
    resolution_pm: float = 40.0
    integration_s: float = 10.0
    rate_cps: float = 2000.0
    pitch_pm: float = 10.0
    window_nm: float = 2.0
    probe_power_mw: float = 0.01
    calls: int = 0

    def __call__(self, emitter: TrimmableEmitter) -> float:
        emitter.irradiate(self.probe_power_mw, self.integration_s)
        self.calls += 1
        centre = emitter.spec.zpl_nm
        grid = np.arange(centre - self.window_nm / 2, centre + self.window_nm / 2, self.pitch_pm * 1e-3)
        lines = []
        if emitter.active:
            fwhm = natural_linewidth_nm(emitter.spec.lifetime_ns, emitter.zpl_nm)
            lines.append((emitter.zpl_nm, fwhm, self.rate_cps))
        spec = spectrometer(lines, self.resolution_pm, self.integration_s, grid,
                            seed=[self.seed, self.calls], dark_per_pixel=1.0)
        try:
            return fit_lorentzian_peaks(spec, 1)[0].params["center"]
        except PeakCountInfeasible:
            raise EmitterDeactivated("no emission line found while probing") from None


@dataclass
class TrimReport:
    initial_zpl_nm: float
    schedule: list[tuple[float, float]] = field(default_factory=list)
    probes_nm: list[float] = field(default_factory=list)
    target_channel: int | None = None
    final_offset_ghz: float | None = None
    status: str = "pending"

    def to_dict(self) -> dict:
        return {"initial_zpl_nm": self.initial_zpl_nm,
                "schedule": [{"power_mw": p, "duration_s": d} for p, d in self.schedule],
                "probes_nm": list(self.probes_nm),
                "target_channel": self.target_channel,
                "final_offset_ghz": self.final_offset_ghz,
                "status": self.status}


def _next_channel(grid: GridSpec, freq: float, direction: int) -> int:
    """Nearest channel at or beyond ``freq`` in the frequency sense of ``direction``."""
    k = grid.nearest_channel(freq)
    if abs(freq - grid.channel_ghz(k)) <= grid.tolerance_ghz:
        return k
    # blue shift raises the frequency
    up = direction < 0
    if up:
        return k if grid.channel_ghz(k) > freq else k + 1
    return k if grid.channel_ghz(k) < freq else k - 1


def trim_to_channel(emitter: TrimmableEmitter, grid: GridSpec, probe: Callable[[TrimmableEmitter], float],
                    max_power_mw: float = 0.6, step_s: float = 15.0, start_mw: float = 0.1,
                    increment_mw: float = 0.025, detect_pm: float = 15.0) -> TrimReport:
    """Closed-loop trimming onto the nearest reachable grid channel.

    Power starts at ``start_mw`` and rises by ``increment_mw`` until a shift
    larger than ``detect_pm`` reveals the trim direction; after that each step
    aims at the channel centre using the observed shift per mW.  Every step is
    an irradiation of ``step_s`` followed by a probe.

    Raises :class:`Unreachable` (cap on power or on shift) and
    :class:`EmitterDeactivated`; both carry the partial report as ``.report``.
    """
    lam0 = probe(emitter)
    report = TrimReport(initial_zpl_nm=lam0, probes_nm=[lam0])
    nu0 = frequency_ghz(lam0)
    if grid.aligned(nu0):
        report.target_channel = grid.nearest_channel(nu0)
        report.final_offset_ghz = grid.offset_ghz(nu0)
        report.status = "aligned"
        return report

    def fail(exc_type, status, msg):
        report.status = status
        exc = exc_type(msg)
        exc.report = report
        return exc

    power = start_mw
    direction = 0
    while True:
        if power >= max_power_mw:
            raise fail(Unreachable, "unreachable", f"next power {power:.3f} mW reaches the {max_power_mw} mW cap")
        emitter.irradiate(power, step_s)
        report.schedule.append((power, step_s))
        try:
            lam = probe(emitter)
        except EmitterDeactivated as exc:
            raise fail(EmitterDeactivated, "deactivated", str(exc)) from None
        report.probes_nm.append(lam)
        nu = frequency_ghz(lam)
        shift_pm = (lam - lam0) * 1e3
        if direction == 0 and abs(shift_pm) > detect_pm:
            direction = 1 if shift_pm > 0 else -1
            report.target_channel = _next_channel(grid, nu, direction)
        if direction != 0:
            target = grid.channel_ghz(report.target_channel)
            off = nu - target
            report.final_offset_ghz = off
            if abs(off) <= grid.tolerance_ghz:
                report.status = "aligned"
                return report
            passed = (off > 0) if direction < 0 else (off < 0)
            if passed:
                report.target_channel = _next_channel(grid, nu, direction)
                target = grid.channel_ghz(report.target_channel)
            # a saturated shift pushes the next power past the cap
            slope = abs(shift_pm) / max(power - start_mw, 1e-9)   # pm per mW above threshold
            remaining_pm = abs(wavelength_nm(target) - lam) * 1e3
            step = max(remaining_pm / slope, increment_mw / 5) if slope > 0 else increment_mw
            power = round(power + step, 4)
        else:
            power = round(power + increment_mw, 4)


# Assignment --------------------------------------------------------------

@dataclass(frozen=True)
class EmitterLine:
    zpl_nm: float
    direction: int = -1
    reach_pm: float = 300.0


def _cost(em: EmitterLine, grid: GridSpec, k: int) -> float | None:
    """Frequency shift (GHz) needed to put ``em`` on channel ``k``; None if unreachable."""
    nu = frequency_ghz(em.zpl_nm)
    target = grid.channel_ghz(k)
    if abs(target - nu) <= grid.tolerance_ghz:
        return abs(target - nu)
    dlam_pm = (wavelength_nm(target) - em.zpl_nm) * 1e3
    if np.sign(dlam_pm) != em.direction or abs(dlam_pm) > em.reach_pm:
        return None
    return abs(target - nu)


def candidate_channels(emitters: Sequence[EmitterLine], grid: GridSpec) -> list[int]:
    ks = set()
    for em in emitters:
        lo = frequency_ghz(em.zpl_nm + em.reach_pm * 1e-3)
        hi = frequency_ghz(em.zpl_nm - em.reach_pm * 1e-3)
        for k in range(grid.nearest_channel(lo) - 1, grid.nearest_channel(hi) + 2):
            if _cost(em, grid, k) is not None:
                ks.add(k)
    return sorted(ks)


def cost_matrix(emitters: Sequence[EmitterLine], grid: GridSpec, channels: Sequence[int]) -> np.ndarray:
    """Shift cost per (emitter, channel); ``inf`` marks unreachable pairs."""
    c = np.full((len(emitters), len(channels)), np.inf)
    for i, em in enumerate(emitters):
        for j, k in enumerate(channels):
            v = _cost(em, grid, k)
            if v is not None:
                c[i, j] = v
    return c


@dataclass
class Assignment:
    channels: dict[int, int]          # emitter index -> channel index
    unassigned: list[int]
    total_cost_ghz: float

    def to_dict(self) -> dict:
        return {"channels": {str(k): v for k, v in self.channels.items()},
                "unassigned": self.unassigned, "total_cost_ghz": self.total_cost_ghz}


def solve_assignment(cost: np.ndarray) -> tuple[dict[int, int], float]:
    """Maximum number of feasible pairs, then minimum total cost.

    Feasible entries are offset by a constant larger than any possible total,
    so the rectangular assignment solver prefers one more pair over any cost
    saving; infeasible entries get 0 and are discarded afterwards.
    """
    if cost.size == 0:
        return {}, 0.0
    feasible = np.isfinite(cost)
    big = 1.0 + float(np.sum(np.where(feasible, cost, 0.0))) * 2
    work = np.where(feasible, cost - big, 0.0)
    rows, cols = linear_sum_assignment(work)
    pairs = {int(r): int(c) for r, c in zip(rows, cols) if feasible[r, c]}
    return pairs, float(sum(cost[r, c] for r, c in pairs.items()))


def assign_channels(emitters: Sequence[EmitterLine], grid: GridSpec,
                    channels: Sequence[int] | None = None) -> Assignment:
    if len(emitters) < 1:
        raise ValidationError("need at least one emitter")
    chans = list(channels) if channels is not None else candidate_channels(emitters, grid)
    pairs, total = solve_assignment(cost_matrix(emitters, grid, chans))
    mapping = {i: chans[j] for i, j in sorted(pairs.items())}
    unassigned = [i for i in range(len(emitters)) if i not in mapping]
    return Assignment(mapping, unassigned, total)


# Cohort and campaign -----------------------------------------------------

def make_cohort(n: int = 12, n_trimmable: int = 11, seed: int = 0, p_blue: float = 9 / 11,
                zpl_mu_nm: float = 1278.7, zpl_sigma_nm: float = 1.1,
                max_shift_pm: float = 300.0) -> list[TrimmableEmitter]:
    """Synthetic cohort; the non-trimmable emitters have zero reach."""
    rng = np.random.default_rng(seed)
    zpls = rng.normal(zpl_mu_nm, zpl_sigma_nm, n)
    dirs = np.where(rng.random(n) < p_blue, -1, 1)
    trimmable = np.zeros(n, bool)
    trimmable[rng.permutation(n)[:n_trimmable]] = True
    out = []
    for z, d, t in zip(zpls, dirs, trimmable):
        state = TrimState(direction=int(d), max_shift_pm=max_shift_pm if t else 0.0)
        out.append(TrimmableEmitter(EmitterSpec(zpl_nm=float(np.clip(z, 1250, 1300))), state))
    return out


def run_campaign(cohort: Sequence[TrimmableEmitter], grid: GridSpec, seed: int,
                 max_power_mw: float = 0.6, step_s: float = 15.0, **probe_kw) -> dict:
    """Trim every emitter; report per-emitter schedules and outcomes as a JSON-ready dict."""
    rows = []
    for i, em in enumerate(cohort):
        probe = SpectrometerProbe(seed=seed * 1000 + i, **probe_kw)
        try:
            rep = trim_to_channel(em, grid, probe, max_power_mw=max_power_mw, step_s=step_s)
        except (Unreachable, EmitterDeactivated) as exc:
            rep = exc.report
        row = rep.to_dict()
        row["true_zpl_nm"] = em.zpl_nm
        row["true_offset_ghz"] = grid.offset_ghz(frequency_ghz(em.zpl_nm))
        rows.append(row)
    return {"grid": dataclasses.asdict(grid), "max_power_mw": max_power_mw, "emitters": rows,
            "aligned": sum(r["status"] == "aligned" for r in rows),
            "max_scheduled_power_mw": max((s["power_mw"] for r in rows for s in r["schedule"]), default=0.0)}


def campaign_json(report: dict) -> str:
    return json.dumps(report, indent=2)
