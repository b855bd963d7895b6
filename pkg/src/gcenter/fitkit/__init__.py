from .fits import (CorrectedCurve, SaturationData, fit_g2_2ls, fit_g2_3ls, fit_lifetime,
                   fit_lorentzian_peaks, fit_saturation, g2_2ls, g2_3ls, lorentzians,
                   saturation_model, subtract_background)
from .lsq import FitFailed, FitResult, LSQOptions, least_squares, numeric_jacobian
from .stats import bin_counts, fit_gaussian_distribution, poisson_stability_test

__all__ = [
    "CorrectedCurve", "SaturationData", "fit_g2_2ls", "fit_g2_3ls", "fit_lifetime",
    "fit_lorentzian_peaks", "fit_saturation", "g2_2ls", "g2_3ls", "lorentzians",
    "saturation_model", "subtract_background", "FitFailed", "FitResult", "LSQOptions",
    "least_squares", "numeric_jacobian", "bin_counts", "fit_gaussian_distribution",
    "poisson_stability_test",
]
