"""Four-level rate-equation dynamics of a G-center.

Levels are A1 (ground / valence band), A2 (emitting excited state),
A3 (metastable shelving state) and A4 (conduction band).  ``gamma_ij`` is
the rate from A_i to A_j in 1/s.  Populations evolve as dN/dt = G N with the
generator ``G`` built by :func:`build_generator`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .errors import DegenerateNullspace, NegativeRate, NegativeTime, NoDecay, NonFinite
from .fitkit.lsq import least_squares

POSITIVITY_FLOOR = -1e-12


@dataclass(frozen=True)
class RateSet:
    gamma_14: float = 0.0
    gamma_21: float = 0.0
    gamma_23: float = 0.0
    gamma_24: float = 0.0
    gamma_31: float = 0.0
    gamma_32: float = 0.0
    gamma_34: float = 0.0
    gamma_42: float = 0.0

    def validate(self) -> "RateSet":
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise NonFinite(f"{f.name} = {v} is not finite")
            if v < 0:
                raise NegativeRate(f"{f.name} = {v} < 0")
        return self

    def pump_off(self) -> "RateSet":
        """Same rates with all pumping into the conduction band switched off."""
        return RateSet(**{**asdict(self), "gamma_14": 0.0, "gamma_24": 0.0, "gamma_34": 0.0})

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RateSet":
        data = json.loads(text)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise KeyError(f"unknown rate keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()}).validate()


@dataclass(frozen=True)
class RateGenerator:
    matrix: np.ndarray

    def scaled(self, factor: float) -> "RateGenerator":
        return RateGenerator(self.matrix * factor)


@dataclass(frozen=True)
class Occupation:
    n1: float
    n2: float
    n3: float
    n4: float

    @classmethod
    def from_array(cls, arr) -> "Occupation":
        a = np.asarray(arr, dtype=float)
        return cls(*(float(x) for x in a))

    @property
    def array(self) -> np.ndarray:
        return np.array([self.n1, self.n2, self.n3, self.n4])

    @property
    def total(self) -> float:
        return self.n1 + self.n2 + self.n3 + self.n4


GROUND = Occupation(1.0, 0.0, 0.0, 0.0)
# Pulsed excitation is modeled as moving all carriers to the conduction band.
CONDUCTION_BAND = Occupation(0.0, 0.0, 0.0, 1.0)


def build_generator(rates: RateSet) -> RateGenerator:
    rates.validate()
    g = rates
    m = np.array([
        [-g.gamma_14, g.gamma_21, g.gamma_31, 0.0],
        [0.0, -(g.gamma_24 + g.gamma_23 + g.gamma_21), g.gamma_32, g.gamma_42],
        [0.0, g.gamma_23, -(g.gamma_31 + g.gamma_32 + g.gamma_34), 0.0],
        [g.gamma_14, g.gamma_24, g.gamma_34, -g.gamma_42],
    ])
    return RateGenerator(m)


def _clamp(vec: np.ndarray) -> np.ndarray:
    out = vec.copy()
    out[(out < 0) & (out >= POSITIVITY_FLOOR)] = 0.0
    return out


def propagator(gen: RateGenerator, t: float) -> np.ndarray:
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    return expm(gen.matrix * t)


def evolve(occ0: Occupation, gen: RateGenerator, t: float) -> Occupation:
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    if t == 0:
        return occ0
    return Occupation.from_array(_clamp(propagator(gen, t) @ occ0.array))


def decay_curve(gen: RateGenerator, occ0: Occupation, t_grid: Sequence[float]) -> list[tuple[float, float]]:
    """Excited-state population n2(t) on ``t_grid`` (seconds)."""
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0:
        return []
    if np.any(t < 0):
        raise NegativeTime("t_grid contains negative times")
    if np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be sorted ascending")
    return [(float(ti), evolve(occ0, gen, float(ti)).n2) for ti in t]


def effective_lifetime(gen: RateGenerator, occ0: Occupation,
                       window: tuple[float, float], n_points: int = 256) -> float:
    """Decay constant of a mono-exponential fit to n2(t) over ``window``.

    The fit is unweighted and uses the window start as the time origin, so the
    result is the usual "fitted lifetime" of the simulated decay.
    """
    t_lo, t_hi = window
    if not t_lo < t_hi:
        raise ValueError("window must satisfy t_lo < t_hi")
    t = np.linspace(t_lo, t_hi, n_points)
    n2 = np.array([v for _, v in decay_curve(gen, occ0, t)])
    if np.ptp(n2) < 1e-12:
        raise NoDecay(f"n2 varies by {np.ptp(n2):.3g} over the window")
    # scale to O(1) so absolute engine tolerances are meaningful
    scale = np.max(np.abs(n2))
    y = n2 / scale
    x = (t - t_lo) / (t_hi - t_lo)
    pos = y > 0
    slope = np.polyfit(x[pos], np.log(y[pos]), 1)[0] if pos.sum() > 2 else -1.0
    if slope >= 0:
        raise NoDecay("n2 does not decay over the window")
    res = least_squares(lambda xx, p: p[0] * np.exp(-xx / p[1]), x, y,
                        [y[0], -1.0 / slope], names=("a", "tau"))
    tau = res.params["tau"] * (t_hi - t_lo)
    if tau <= 0:
        raise NoDecay("fitted decay constant is not positive")
    return float(tau)


def steady_state(gen: RateGenerator, tol: float = 1e-8) -> Occupation:
    """Normalized stationary occupation.

    Levels with no incoming and no outgoing rate are decoupled from the
    dynamics; they are dropped before the nullspace test and get zero
    occupation.
    """
    m = gen.matrix
    off = m - np.diag(np.diag(m))
    linked = (np.abs(off).sum(axis=0) > 0) | (np.abs(off).sum(axis=1) > 0)
    out = np.zeros(4)
    if not linked.any():
        raise DegenerateNullspace("generator has no transitions")
    idx = np.flatnonzero(linked)
    sub = m[np.ix_(idx, idx)]
    _, s, vt = np.linalg.svd(sub)
    null_dim = int(np.sum(s <= tol * s[0]))
    if null_dim != 1:
        raise DegenerateNullspace(f"nullspace dimension {null_dim} != 1")
    v = vt[-1]
    v = v / v.sum()
    out[idx] = v
    out = _clamp(out)
    return Occupation.from_array(out)


def random_rate_set(rng: np.random.Generator, max_rate: float = 1e10,
                    pump_off: bool = False) -> RateSet:
    """Log-uniform rates in [1e5, max_rate] 1/s; synthetic, not measured values."""
    vals = 10 ** rng.uniform(5, np.log10(max_rate), size=8)
    rs = RateSet(*vals)
    return rs.pump_off() if pump_off else rs


# Synthetic example rates (the measured total decay is the only anchor: 8.21 ns).
EXAMPLE_RATES = RateSet(gamma_42=5e8, gamma_21=1.0 / 8.21e-9, gamma_23=1e7, gamma_31=1e6)
