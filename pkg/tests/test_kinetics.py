import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcenter import kinetics as kn
from gcenter.errors import DegenerateNullspace, NegativeRate, NegativeTime, NoDecay, NonFinite
from oracles import rk4_batch, rk4_trajectory

TAU = 8.21e-9
G21 = 1 / TAU

rates = st.floats(min_value=0.0, max_value=1e10, allow_nan=False)
rate_sets = st.builds(kn.RateSet, *([rates] * 8))
occupations = st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4).filter(lambda v: sum(v) > 1e-3)


def test_single_channel_generator_layout():
    m = kn.build_generator(kn.RateSet(gamma_21=1.218e8)).matrix
    expected = np.zeros((4, 4))
    expected[1, 1] = -1.218e8
    expected[0, 1] = 1.218e8
    np.testing.assert_array_equal(m, expected)


def test_full_generator_sign_pattern():
    r = kn.RateSet(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0)
    m = kn.build_generator(r).matrix
    assert m[1, 1] == -(r.gamma_24 + r.gamma_23 + r.gamma_21)
    assert m[2, 2] == -(r.gamma_31 + r.gamma_32 + r.gamma_34)
    assert m[0, 0] == -r.gamma_14 and m[3, 3] == -r.gamma_42
    assert m[1, 3] == r.gamma_42 and m[0, 2] == r.gamma_31 and m[3, 2] == r.gamma_34
    off = m - np.diag(np.diag(m))
    assert np.all(off >= 0) and np.all(np.diag(m) <= 0)


@pytest.mark.parametrize("bad,err", [(-1.0, NegativeRate), (math.nan, NonFinite), (math.inf, NonFinite)])
def test_invalid_rates_rejected(bad, err):
    with pytest.raises(err):
        kn.build_generator(kn.RateSet(gamma_23=bad))


@given(rate_sets)
def test_columns_sum_to_zero(rs):
    m = kn.build_generator(rs).matrix
    scale = max(np.abs(m).max(), 1.0)
    assert np.all(np.abs(m.sum(axis=0)) <= 1e-9 * scale)


def test_rateset_json_round_trip():
    r = kn.EXAMPLE_RATES
    assert kn.RateSet.from_json(r.to_json()) == r
    with pytest.raises(KeyError):
        kn.RateSet.from_json('{"gamma_99": 1}')


def test_evolve_identity_at_zero():
    occ = kn.Occupation(0.1, 0.2, 0.3, 0.4)
    assert kn.evolve(occ, kn.build_generator(kn.EXAMPLE_RATES), 0.0) == occ


def test_pure_exponential_one_lifetime():
    gen = kn.build_generator(kn.RateSet(gamma_21=G21))
    out = kn.evolve(kn.Occupation(0, 1, 0, 0), gen, TAU)
    assert abs(out.n2 - math.exp(-1)) < 1e-9


def test_negative_time_rejected():
    with pytest.raises(NegativeTime):
        kn.evolve(kn.GROUND, kn.build_generator(kn.EXAMPLE_RATES), -1e-9)


def test_evolve_matches_rk4_example_rates():
    rs = kn.RateSet(gamma_42=5e8, gamma_21=1.2e8, gamma_23=1e7, gamma_31=1e6)
    gen = kn.build_generator(rs)
    got = kn.evolve(kn.CONDUCTION_BAND, gen, 20e-9).array
    ref = rk4_batch(gen.matrix[None], kn.CONDUCTION_BAND.array[None], 20e-9, 0.1e-12)[0]
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-8)


def test_evolve_matches_rk4_random_sets():
    rng = np.random.default_rng(11)
    sets = [kn.random_rate_set(rng) for _ in range(20)]
    gens = np.array([kn.build_generator(r).matrix for r in sets])
    occ0 = rng.dirichlet(np.ones(4), size=len(sets))
    ref = rk4_batch(gens, occ0, 20e-9, 0.5e-12)
    got = np.array([kn.evolve(kn.Occupation.from_array(o), kn.build_generator(r), 20e-9).array
                    for o, r in zip(occ0, sets)])
    assert np.max(np.abs(got - ref)) < 1e-8


def test_decay_curve_pure_exponential_and_empty():
    gen = kn.build_generator(kn.RateSet(gamma_21=G21))
    curve = kn.decay_curve(gen, kn.Occupation(0, 1, 0, 0), [0, TAU, 2 * TAU])
    np.testing.assert_allclose([v for _, v in curve], [1, math.exp(-1), math.exp(-2)], atol=1e-12)
    assert kn.decay_curve(gen, kn.GROUND, []) == []


def test_decay_curve_matches_rk4():
    gen = kn.build_generator(kn.EXAMPLE_RATES)
    grid = np.linspace(0, 30e-9, 7)
    got = np.array([v for _, v in kn.decay_curve(gen, kn.CONDUCTION_BAND, grid)])
    ref = rk4_trajectory(gen.matrix, kn.CONDUCTION_BAND.array, grid, 0.1e-12)[:, 1]
    np.testing.assert_allclose(got, ref, atol=1e-8)


def test_effective_lifetime_two_level():
    gen = kn.build_generator(kn.RateSet(gamma_21=G21))
    tau = kn.effective_lifetime(gen, kn.Occupation(0, 1, 0, 0), (1e-9, 12.5e-9))
    assert abs(tau - TAU) < 0.01e-9


def test_effective_lifetime_matches_curve_fit_on_rk4_curve():
    from scipy.optimize import curve_fit

    gen = kn.build_generator(kn.EXAMPLE_RATES)
    window = (50e-9, 300e-9)
    tau = kn.effective_lifetime(gen, kn.CONDUCTION_BAND, window)
    t = np.linspace(*window, 64)
    n2 = rk4_trajectory(gen.matrix, kn.CONDUCTION_BAND.array, t, 0.5e-12)[:, 1]
    popt, _ = curve_fit(lambda x, a, tt: a * np.exp(-(x - t[0]) / tt), t, n2, p0=[n2[0], 1e-8])
    assert abs(tau - popt[1]) / popt[1] < 5e-3


def test_effective_lifetime_decreases_with_capture_rate():
    taus = []
    for g42 in (1e7, 1e8, 1e9):
        rs = kn.RateSet(gamma_42=g42, gamma_21=G21, gamma_23=1e7, gamma_31=1e6)
        taus.append(kn.effective_lifetime(kn.build_generator(rs), kn.CONDUCTION_BAND, (50e-9, 300e-9)))
    assert taus[0] > taus[1] > taus[2]


def test_no_decay_raises():
    gen = kn.build_generator(kn.RateSet(gamma_21=G21))
    with pytest.raises(NoDecay):
        kn.effective_lifetime(gen, kn.GROUND, (1e-9, 10e-9))


def test_steady_state_examples():
    gen = kn.build_generator(kn.RateSet(gamma_21=G21))
    np.testing.assert_allclose(kn.steady_state(gen).array, [1, 0, 0, 0], atol=1e-12)

    r = 3e8
    cyc = kn.build_generator(kn.RateSet(gamma_14=r, gamma_42=r, gamma_21=r))
    ss = kn.steady_state(cyc)
    assert np.linalg.norm(cyc.matrix @ ss.array) < 1e-10 * r
    np.testing.assert_allclose(ss.array[[0, 1, 3]], 1 / 3, atol=1e-12)

    full = kn.build_generator(kn.EXAMPLE_RATES)
    np.testing.assert_allclose(kn.steady_state(full.scaled(10.0)).array, kn.steady_state(full).array,
                               atol=1e-12)


def test_steady_state_degenerate():
    # 2 -> 1 and 3 -> 4 are two separate absorbing chains: two stationary states
    gen = kn.build_generator(kn.RateSet(gamma_21=1e8, gamma_34=1e8))
    with pytest.raises(DegenerateNullspace):
        kn.steady_state(gen)


@given(rate_sets, occupations, st.floats(0.0, 1e-6))
def test_conservation_and_positivity(rs, occ, t):
    gen = kn.build_generator(rs)
    o = kn.Occupation(*occ)
    out = kn.evolve(o, gen, t)
    assert abs(out.total - o.total) < 1e-10 * max(o.total, 1.0)
    assert min(out.array) >= kn.POSITIVITY_FLOOR


@given(rate_sets, occupations, st.floats(0.0, 5e-7), st.floats(0.0, 5e-7))
def test_semigroup(rs, occ, t1, t2):
    gen = kn.build_generator(rs)
    o = kn.Occupation(*occ)
    a = kn.evolve(kn.evolve(o, gen, t1), gen, t2).array
    b = kn.evolve(o, gen, t1 + t2).array
    np.testing.assert_allclose(a, b, atol=1e-9)


@given(st.floats(1e5, 1e9), st.floats(2.0, 10.0))
def test_effective_lifetime_monotone_in_capture(g42, factor):
    base = dict(gamma_21=G21, gamma_23=1e7, gamma_31=1e6)
    window = (50e-9, 300e-9)
    lo = kn.effective_lifetime(kn.build_generator(kn.RateSet(gamma_42=g42, **base)), kn.CONDUCTION_BAND, window)
    hi = kn.effective_lifetime(kn.build_generator(kn.RateSet(gamma_42=g42 * factor, **base)),
                               kn.CONDUCTION_BAND, window)
    assert hi <= lo * (1 + 1e-6)
