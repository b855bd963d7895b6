"""Model fits used in the photophysics analysis.

All fits go through :func:`gcenter.fitkit.lsq.least_squares`; counts are
weighted by their Poisson standard deviation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import find_peaks, peak_widths

from ..errors import (MaxIterations, NoCurvature, NoDecay, PeakCountInfeasible, PowerGridMismatch,
                      SingularNormalEquations, ValidationError, WindowOutOfRange)
from .lsq import FitResult, LSQOptions, least_squares

# ---------------------------------------------------------------------------
# saturation


@dataclass
class SaturationData:
    """Rows of (power_uw, emitter_cps, background_cps, dwell_s)."""
    rows: list[tuple[float, float, float, float]]

    def __post_init__(self):
        self.rows = [tuple(float(v) for v in r) for r in self.rows]
        powers = [r[0] for r in self.rows]
        if len(set(powers)) != len(powers):
            raise ValidationError("powers must be distinct")
        for p, e, b, d in self.rows:
            if p < 0 or e < 0 or b < 0:
                raise ValidationError("powers and counts must be >= 0")
            if d <= 0:
                raise ValidationError("dwell must be positive")

    @classmethod
    def from_series(cls, emitter: Sequence[tuple[float, float]], background: Sequence[tuple[float, float]],
                    dwell_s: float) -> "SaturationData":
        pe = [p for p, _ in emitter]
        pb = [p for p, _ in background]
        if pe != pb:
            raise PowerGridMismatch("emitter and background were measured at different powers")
        return cls([(p, e, b, dwell_s) for (p, e), (_, b) in zip(emitter, background)])


@dataclass
class CorrectedCurve:
    powers: np.ndarray
    rates: np.ndarray
    sigmas: np.ndarray | None = None
    clamped: np.ndarray | None = None

    def as_pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.powers.tolist(), self.rates.tolist()))


def subtract_background(data: SaturationData) -> CorrectedCurve:
    """Emitter minus background rate per power; negatives clamp to zero and are flagged."""
    arr = np.array(data.rows, dtype=float).reshape(-1, 4)
    p, e, b, dwell = arr.T
    diff = e - b
    clamped = diff <= 0
    # Poisson variance of a difference of two rates, floored at one count
    sig = np.sqrt(np.maximum((e + b) * dwell, 1.0)) / dwell
    return CorrectedCurve(p, np.where(clamped, 0.0, diff), sig, clamped)


def _model_weighted_refit(model, x, y, first: FitResult, counts_per_unit: float = 1.0, **kw) -> FitResult:
    """Second pass with Poisson errors taken from the fitted model.

    Weighting by the observed counts biases amplitudes low by about one count
    per bin; model-based weights remove that bias.  ``counts_per_unit``
    converts ``y`` back to counts for normalized data.
    """
    p = np.array(list(first.params.values()))
    mu = np.maximum(np.asarray(model(x, p), dtype=float) * counts_per_unit, 1.0)
    try:
        res = least_squares(model, x, y, p, sigma=np.sqrt(mu) / counts_per_unit, names=list(first.params),
                            model_name=first.model, **kw)
    except (MaxIterations, SingularNormalEquations):
        return first
    return res


def saturation_model(p, params):
    i_inf, p_sat = params
    return i_inf * p / (p + p_sat)


def fit_saturation(corrected, weighted: bool = True) -> FitResult:
    """Fit I(P) = I_inf P / (P + P_sat) to a background-corrected curve."""
    if isinstance(corrected, CorrectedCurve):
        p, y = corrected.powers, corrected.rates
        sig = corrected.sigmas if weighted else None
    else:
        arr = np.asarray(corrected, dtype=float).reshape(-1, 2)
        p, y = arr[:, 0], arr[:, 1]
        sig = None
    if np.unique(p).size < 3:
        raise ValidationError("need at least 3 distinct powers")
    if np.ptp(y) <= 1e-12 * max(np.max(np.abs(y)), 1e-300):
        raise NoCurvature("counts do not depend on power")
    i0 = float(np.max(y))
    p0 = float(p[np.argmin(np.abs(y - i0 / 2))])
    if p0 <= 0:
        p0 = float(np.min(p[p > 0]))
    res = least_squares(saturation_model, p, y, [i0, p0], sigma=sig, names=("i_inf", "p_sat"),
                        model_name="saturation")
    pos = p[p > 0]
    if res["p_sat"] > 1e3 * pos.max() or res["p_sat"] < 1e-3 * pos.min():
        raise NoCurvature(f"fitted P_sat = {res['p_sat']:.3g} outside the measured range")
    return res


# ---------------------------------------------------------------------------
# lifetime


def fit_lifetime(decay_histogram, period_ns: float, clip: tuple[float, float] = (1.0, 12.5)) -> FitResult:
    """Mono-exponential fit a * exp(-(t - b) / tau) inside the clip window.

    ``decay_histogram`` is (bin centers in ns, counts).  The time offset b is
    degenerate with the amplitude, so it is pinned to the window start and
    reported with zero uncertainty.
    """
    t, counts = (np.asarray(v, dtype=float) for v in decay_histogram)
    lo, hi = clip
    if not 0 <= lo < hi or hi > period_ns:
        raise WindowOutOfRange(f"clip window {clip} does not fit in the {period_ns} ns period")
    if t.min() > lo or t.max() < hi:
        raise WindowOutOfRange(f"histogram [{t.min()}, {t.max()}] ns does not cover {clip}")
    m = (t >= lo) & (t <= hi)
    x, y = t[m], counts[m]
    if x.size < 3:
        raise WindowOutOfRange("fewer than 3 bins inside the clip window")
    third = max(1, x.size // 3)
    head, tail = y[:third].sum(), y[-third:].sum()
    if head - tail < 3 * np.sqrt(max(head + tail, 1.0)):
        raise NoDecay("no significant decay inside the window")
    pos = y > 0
    slope = np.polyfit(x[pos] - lo, np.log(y[pos]), 1)[0]
    tau0 = -1.0 / slope if slope < 0 else (hi - lo)
    sig = np.sqrt(np.maximum(y, 1.0))
    a0 = float(np.exp(np.polyfit(x[pos] - lo, np.log(y[pos]), 1)[1]))
    decay = lambda xx, pp: pp[0] * np.exp(-(xx - lo) / pp[1])
    res = least_squares(decay, x, y, [a0, tau0], sigma=sig, names=("a", "tau"), model_name="lifetime")
    res = _model_weighted_refit(decay, x, y, res)
    if res["tau"] <= 0:
        raise NoDecay("fitted lifetime is not positive")
    res.params = {"a": res.params["a"], "b": float(lo), "tau": res.params["tau"]}
    res.sigmas = {"a": res.sigmas["a"], "b": 0.0, "tau": res.sigmas["tau"]}
    return res


# ---------------------------------------------------------------------------
# second-order correlation


def g2_2ls(t, params):
    a, b, tau = params
    return b * (1 - (1 - a) * np.exp(-np.abs(t) / tau))


def g2_3ls(t, params):
    a, b, tau1, tau2, t_shift = params
    dt = np.abs(t - t_shift)
    return a * (1 - (1 - b) * np.exp(-dt / tau1) + b * np.exp(-dt / tau2))


def _hist_xy(hist, normalize: bool, lifetime_ns: float):
    x = np.asarray(hist.centers_ps, dtype=float) / 1e3
    counts = np.asarray(hist.counts, dtype=float)
    sig = np.sqrt(np.maximum(counts, 1.0))
    if normalize:
        base = hist.baseline(lifetime_ns)
        return x, counts / base, sig / base, base
    return x, counts, sig, 1.0


def _initial_2ls(x, y):
    ax = np.abs(x)
    outer = ax >= np.quantile(ax, 0.8)
    b0 = float(np.mean(y[outer]))
    center = ax <= max(np.min(ax) + 1e-9, 1.0)
    a0 = float(np.clip(np.mean(y[center]) / b0, 0.0, 0.95))
    # delay where the dip has recovered halfway
    order = np.argsort(ax)
    level = b0 * (1 + a0) / 2
    rec = ax[order][y[order] >= level]
    t_half = float(rec[0]) if rec.size else 8.0 * np.log(2)
    tau0 = max(t_half / np.log(2), 0.5)
    return a0, b0, tau0


def fit_g2_2ls(hist, normalize: bool = False, lifetime_ns: float = 8.0) -> FitResult:
    """Two-level antibunching fit b (1 - (1 - a) exp(-|t| / tau)), t in ns.

    Raw counts are fitted by default, with b absorbing the normalization.
    ``extras['g2_zero']`` is the model at zero delay divided by the uncorrelated
    level (a for raw histograms, b*a for normalized ones).
    """
    x, y, sig, scale = _hist_xy(hist, normalize, lifetime_ns)
    a0, b0, tau0 = _initial_2ls(x, y)
    if -np.min(x) < 10 * tau0 or np.max(x) < 10 * tau0:
        raise ValidationError("histogram must span at least 10 lifetimes on each side")
    res = least_squares(g2_2ls, x, y, [a0, b0, tau0], sigma=sig, names=("a", "b", "tau"),
                        model_name="g2_2ls")
    res = _model_weighted_refit(g2_2ls, x, y, res, scale)
    a, b = res["a"], res["b"]
    cov = res.covariance
    if normalize:
        g0 = a * b
        var = (b ** 2 * cov[0, 0] + a ** 2 * cov[1, 1] + 2 * a * b * cov[0, 1]) if cov is not None else np.inf
    else:
        g0 = a
        var = cov[0, 0] if cov is not None else np.inf
    res.extras["g2_zero"] = float(g0)
    res.extras["g2_zero_sigma"] = float(np.sqrt(max(var, 0.0)))
    return res


def fit_g2_3ls(hist, normalize: bool = False, lifetime_ns: float = 8.0,
               tau2_factors: Sequence[float] = (3.0, 10.0, 30.0)) -> FitResult:
    """Three-level fit a (1 - (1 - b) e^{-|t - t0|/tau1} + b e^{-|t - t0|/tau2}).

    Seeded from a two-level fit (tau1) and the far-delay level (a); tau2 is
    started from each multiple of tau1 in ``tau2_factors`` and the lowest-cost
    solution is returned.
    """
    x, y, sig, scale = _hist_xy(hist, normalize, lifetime_ns)
    ax = np.abs(x)
    a0 = float(np.mean(y[ax >= np.quantile(ax, 0.9)]))
    try:
        two = least_squares(g2_2ls, x, y, list(_initial_2ls(x, y)), sigma=sig, names=("a", "b", "tau"))
        tau1 = abs(two["tau"])
    except Exception:
        tau1 = _initial_2ls(x, y)[2]
    best = None
    for f in tau2_factors:
        tau2 = f * tau1
        win = (ax > 2 * tau1) & (ax < 2 * tau1 + tau2)
        bump = float(np.mean(y[win]) / a0 - 1) if win.any() else 0.1
        b0 = float(np.clip(bump * np.exp(2 * tau1 / tau2), 0.01, 2.0))
        try:
            res = least_squares(g2_3ls, x, y, [a0, b0, tau1, tau2, 0.0], sigma=sig,
                                names=("a", "b", "tau1", "tau2", "t_shift"), model_name="g2_3ls",
                                options=LSQOptions(max_iter=1000))
        except Exception:
            continue
        if res["tau1"] <= 0 or res["tau2"] <= 0:
            continue
        if best is None or res.residual < best.residual:
            best = res
    if best is None:
        raise NoCurvature("three-level fit did not converge from any initializer")
    refit = _model_weighted_refit(g2_3ls, x, y, best, scale, options=LSQOptions(max_iter=1000))
    if refit["tau1"] > 0 and refit["tau2"] > 0:
        best = refit
    p = best.params
    best.extras["g2_zero"] = float(g2_3ls(0.0, [1.0, p["b"], p["tau1"], p["tau2"], p["t_shift"]]))
    return best


# ---------------------------------------------------------------------------
# Lorentzian peaks


def lorentzians(x, params):
    base = params[0]
    out = np.full_like(x, base, dtype=float)
    for amp, c, w in params[1:].reshape(-1, 3):
        out += amp / (1 + ((x - c) / (w / 2)) ** 2)
    return out


def fit_lorentzian_peaks(spec, n_peaks: int, min_prominence_sigma: float = 5.0,
                         core_widths: float = 1.25) -> list[FitResult]:
    """Multi-Lorentzian fit with a shared flat baseline.

    Peaks are seeded at the ``n_peaks`` most prominent local maxima and the fit
    uses points within ``core_widths`` half-maximum widths of a seed.  Internally
    wavelengths are offsets in pm from the grid mean so finite-difference steps
    stay well below the line widths.  Returned per peak: center and fwhm in nm,
    amplitude (peak height above baseline) and the shared baseline.
    """
    if n_peaks < 1:
        raise PeakCountInfeasible("n_peaks must be >= 1")
    wl = np.asarray(spec.wavelengths_nm, dtype=float)
    y = np.asarray(spec.counts, dtype=float)
    if wl.size < 5 * n_peaks:
        raise PeakCountInfeasible(f"{wl.size} points cannot resolve {n_peaks} peaks")
    ref = float(wl.mean())
    x = (wl - ref) * 1e3
    base0 = float(np.percentile(y, 10))
    floor = min_prominence_sigma * np.sqrt(max(base0, 1.0))
    idx, props = find_peaks(y, prominence=max(floor, 1e-12))
    if idx.size < n_peaks:
        raise PeakCountInfeasible(f"found {idx.size} significant maxima, need {n_peaks}")
    top = idx[np.argsort(props["prominences"])[::-1][:n_peaks]]
    top.sort()
    widths = peak_widths(y, top, rel_height=0.5)[0] * np.mean(np.diff(x))
    p0 = [base0]
    for i, w in zip(top, widths):
        p0 += [y[i] - base0, x[i], max(w, 2 * np.mean(np.diff(x)))]
    # Fit only the line cores: instrument-broadened lines have Gaussian tails
    # that a Lorentzian cannot follow and would otherwise dominate the fit.
    core = np.zeros(x.size, bool)
    for i, w in zip(top, widths):
        core |= np.abs(x - x[i]) <= core_widths * max(w, 2 * np.mean(np.diff(x)))
    if core.sum() < 3 * n_peaks + 2:
        core[:] = True
    sig = np.sqrt(np.maximum(y[core], 1.0))
    names = ["baseline"] + [f"{k}{j}" for j in range(n_peaks) for k in ("amplitude", "center", "fwhm")]
    res = least_squares(lorentzians, x[core], y[core], p0, sigma=sig, names=names, model_name="lorentzian",
                        options=LSQOptions(max_iter=1000))
    res = _model_weighted_refit(lorentzians, x[core], y[core], res, options=LSQOptions(max_iter=1000))
    out = []
    for j in range(n_peaks):
        c = res[f"center{j}"]
        out.append(FitResult(
            model="lorentzian",
            params={"center": ref + c / 1e3, "fwhm": abs(res[f"fwhm{j}"]) / 1e3,
                    "amplitude": res[f"amplitude{j}"], "baseline": res["baseline"]},
            sigmas={"center": res.sigmas[f"center{j}"] / 1e3, "fwhm": res.sigmas[f"fwhm{j}"] / 1e3,
                    "amplitude": res.sigmas[f"amplitude{j}"], "baseline": res.sigmas["baseline"]},
            residual=res.residual, converged=res.converged, iterations=res.iterations,
        ))
    out.sort(key=lambda r: r["center"])
    return out
