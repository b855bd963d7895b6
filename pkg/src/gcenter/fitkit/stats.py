"""Distribution statistics: Gaussian population fits and Poisson stability."""
from __future__ import annotations

import numpy as np
from scipy import stats

from ..errors import TooFewBins, TooFewValues
from .lsq import FitResult


def fit_gaussian_distribution(values) -> FitResult:
    """Sample mean and unbiased standard deviation with their standard errors."""
    v = np.asarray(values, dtype=float)
    n = v.size
    if n < 3:
        raise TooFewValues(f"need >= 3 values, got {n}")
    mu = float(v.mean())
    sd = float(v.std(ddof=1))
    return FitResult(
        model="gaussian",
        params={"mu": mu, "sigma": sd},
        sigmas={"mu": sd / np.sqrt(n), "sigma": sd / np.sqrt(2 * (n - 1))},
        residual=float("nan"),
        converged=True,
        iterations=0,
    )


def poisson_stability_test(binned_counts, alpha: float = 0.01) -> dict:
    """Index-of-dispersion test of binned photon counts against a Poisson law.

    (n - 1) * variance / mean follows chi-square with n - 1 degrees of freedom
    under the Poisson hypothesis; the p-value is two-sided.
    """
    c = np.asarray(binned_counts, dtype=float)
    if c.size < 50:
        raise TooFewBins(f"need >= 50 bins, got {c.size}")
    mean = c.mean()
    if mean == 0:
        return {"dispersion": 0.0, "p_value": float("nan"), "pass": False, "degenerate": True}
    disp = float(c.var(ddof=1) / mean)
    stat = (c.size - 1) * disp
    dof = c.size - 1
    p = float(min(1.0, 2 * min(stats.chi2.cdf(stat, dof), stats.chi2.sf(stat, dof))))
    return {"dispersion": disp, "p_value": p, "pass": p >= alpha, "degenerate": False}


def bin_counts(timestamps_ps, duration_s: float, bin_s: float = 0.01) -> np.ndarray:
    """Counts per time bin (10 ms default) over the full acquisition."""
    n_bins = int(duration_s / bin_s)
    t = np.asarray(timestamps_ps, dtype=np.float64) / 1e12
    counts, _ = np.histogram(t, bins=n_bins, range=(0, n_bins * bin_s))
    return counts
