import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcenter import trimlab as tl
from gcenter.errors import NonPositiveDuration, Unreachable, ValidationError
from gcenter.photonsim import EmitterSpec
from oracles import brute_assignment

C = 299792458.0


def ideal_probe(em: tl.TrimmableEmitter) -> float:
    """Noise-free readout that still counts as a low-power exposure."""
    em.irradiate(0.01, 1.0)
    return em.zpl_nm


# ---------------------------------------------------------------- Stark and units

def test_stark_estimate_constants():
    out = tl.stark_shift_estimate(tl.StarkModel())
    e_field = 1.602176634e-19 * 1e17 / (2 * 3.9 * 8.8541878128e-12) / 1e6
    assert out["field_mv_per_m"] == pytest.approx(e_field, rel=1e-12)
    assert out["field_mv_per_m"] == pytest.approx(232, abs=0.5)
    assert out["shift_ghz"] == pytest.approx(2320, abs=3)


def test_stark_rounded_field_and_zero_density():
    assert tl.stark_shift_from_field(100.0, 10.0) == 1000.0
    assert tl.stark_shift_estimate(tl.StarkModel(trap_density_per_cm2=0))["shift_ghz"] == 0.0
    with pytest.raises(ValidationError):
        tl.StarkModel(relative_permittivity=0)


@pytest.mark.parametrize("pm,ghz", [(150, 27.5), (300, 55.0), (0, 0.0)])
def test_wavelength_shift_to_ghz(pm, ghz):
    assert tl.wavelength_shift_to_ghz(pm, 1278) == pytest.approx(ghz, rel=5e-3, abs=1e-12)


def test_wavelength_shift_matches_exact_difference():
    lam = 1278e-9
    exact = (C / (lam - 150e-12) - C / lam) / 1e9
    assert tl.wavelength_shift_to_ghz(150, 1278) == pytest.approx(exact, rel=2e-4)


# ---------------------------------------------------------------- dose response

def test_probe_power_leaves_state_identical():
    s = tl.TrimState(max_power_applied_mw=0.3, cumulative_shift_pm=-75.0)
    assert tl.apply_irradiation(s, 0.05, 10.0) is s


def test_escalation_is_monotone_and_capped():
    s = tl.TrimState(max_shift_pm=300.0)
    shifts = []
    for p in (0.2, 0.4, 0.8, 0.9, 0.94):
        s = tl.apply_irradiation(s, p, 15.0)
        shifts.append(abs(s.cumulative_shift_pm))
    assert shifts == sorted(shifts)
    assert shifts[-1] == pytest.approx(300.0)
    assert shifts[1] == pytest.approx(300 * (0.4 - 0.1) / 0.8)


def test_deactivation_is_absorbing():
    s = tl.apply_irradiation(tl.TrimState(deactivation_threshold_mw=0.95), 1.0, 1.0)
    assert not s.active
    for p in (0.2, 0.5, 0.99, 0.01):
        assert tl.apply_irradiation(s, p, 1.0) is s


def test_irradiation_argument_checks():
    with pytest.raises(NonPositiveDuration):
        tl.apply_irradiation(tl.TrimState(), 0.3, 0.0)
    with pytest.raises(ValidationError):
        tl.apply_irradiation(tl.TrimState(), -0.1, 1.0)
    with pytest.raises(ValidationError):
        tl.TrimState(direction=0)


powers = st.lists(st.floats(0.0, 0.94), min_size=1, max_size=12)


@given(powers, st.randoms(use_true_random=False), st.sampled_from([-1, 1]))
def test_ratchet_depends_only_on_max_power(seq, rnd, direction):
    start = tl.TrimState(direction=direction)
    a = start
    for p in seq:
        a = tl.apply_irradiation(a, p, 1.0)
    shuffled = list(seq)
    rnd.shuffle(shuffled)
    b = start
    for p in shuffled:
        b = tl.apply_irradiation(b, p, 1.0)
    expected = direction * 300.0 * tl.dose_fraction(max(seq))
    assert a.cumulative_shift_pm == pytest.approx(expected, abs=1e-9)
    assert b.cumulative_shift_pm == pytest.approx(expected, abs=1e-9)


@given(st.lists(st.floats(0.0, 1.2), max_size=15), st.booleans())
def test_shift_never_exceeds_cap(seq, reversal):
    s = tl.TrimState(max_shift_pm=120.0, reversal=reversal)
    for p in seq:
        was_active = s.active
        s = tl.apply_irradiation(s, p, 1.0)
        assert abs(s.cumulative_shift_pm) <= 120.0
        assert was_active or not s.active


@given(st.lists(st.floats(0.0, 0.0999), max_size=20))
def test_probe_sequences_are_bit_identical(seq):
    s = tl.TrimState(max_power_applied_mw=0.42, cumulative_shift_pm=-120.0)
    out = s
    for p in seq:
        out = tl.apply_irradiation(out, p, 10.0)
    assert out == s and out.cumulative_shift_pm.hex() == s.cumulative_shift_pm.hex()


def test_spectrometer_probe_reads_line_without_mutation():
    em = tl.TrimmableEmitter(EmitterSpec(zpl_nm=1278.3),
                             tl.TrimState(max_power_applied_mw=0.3, cumulative_shift_pm=-60.0))
    before = em.state
    probe = tl.SpectrometerProbe(seed=7)
    readings = [probe(em) for _ in range(5)]
    assert em.state is before
    assert np.std(readings) < 0.01
    assert abs(np.mean(readings) - em.zpl_nm) < 0.01


# ---------------------------------------------------------------- grid and controller

def test_grid_channels_and_tolerance():
    g = tl.GridSpec()
    assert g.channel_ghz(0) == 193100.0
    assert g.channel_ghz(-3) == 193025.0
    assert g.tolerance_ghz == pytest.approx(max(5.0, tl.wavelength_shift_to_ghz(40, 1278)))
    with pytest.raises(ValidationError):
        tl.GridSpec(tolerance_ghz=13.0)


def test_already_aligned_needs_no_irradiation():
    g = tl.GridSpec()
    lam = tl.wavelength_nm(g.channel_ghz(g.nearest_channel(tl.frequency_ghz(1278.4))))
    em = tl.TrimmableEmitter(EmitterSpec(zpl_nm=lam))
    rep = tl.trim_to_channel(em, g, ideal_probe)
    assert rep.status == "aligned" and rep.schedule == []


@pytest.mark.parametrize("direction", [-1, 1])
@pytest.mark.parametrize("zpl", [1277.31, 1278.05, 1279.47])
def test_controller_aligns_and_respects_power_cap(zpl, direction):
    g = tl.GridSpec()
    em = tl.TrimmableEmitter(EmitterSpec(zpl_nm=zpl), tl.TrimState(direction=direction))
    rep = tl.trim_to_channel(em, g, ideal_probe, max_power_mw=0.6)
    assert rep.status == "aligned"
    assert all(p < 0.6 and d == 15.0 for p, d in rep.schedule)
    assert abs(g.offset_ghz(tl.frequency_ghz(em.zpl_nm))) <= g.tolerance_ghz
    # shift happened in the emitter's own direction
    assert np.sign(em.zpl_nm - zpl) in (0, direction)


def test_unreachable_channel():
    # channels 100 GHz apart; the next blue channel is about 400 pm away
    g = tl.GridSpec(spacing_ghz=100.0, tolerance_ghz=5.0)
    k = g.nearest_channel(tl.frequency_ghz(1278.0))
    lam_channel = tl.wavelength_nm(g.channel_ghz(k))
    em = tl.TrimmableEmitter(EmitterSpec(zpl_nm=lam_channel + 0.4), tl.TrimState(direction=-1))
    with pytest.raises(Unreachable) as info:
        tl.trim_to_channel(em, g, ideal_probe, max_power_mw=0.94)
    rep = info.value.report
    assert rep.status == "unreachable"
    assert abs(em.state.cumulative_shift_pm) <= 300.0
    assert all(p < 0.94 for p, _ in rep.schedule)


# ---------------------------------------------------------------- assignment

def test_emitters_on_distinct_channels():
    g = tl.GridSpec()
    ks = [-180, -178, -175]
    ems = [tl.EmitterLine(tl.wavelength_nm(g.channel_ghz(k))) for k in ks]
    a = tl.assign_channels(ems, g, channels=ks)
    assert a.channels == {0: -180, 1: -178, 2: -175}
    assert a.total_cost_ghz == pytest.approx(0.0, abs=1e-6)


def test_shared_single_channel():
    cost = np.array([[3.0, np.inf], [4.0, np.inf]])
    pairs, total = tl.solve_assignment(cost)
    assert len(pairs) == 1 and total == 3.0


def test_assignment_prefers_more_pairs_over_lower_cost():
    cost = np.array([[1.0, 50.0], [2.0, np.inf]])
    pairs, total = tl.solve_assignment(cost)
    assert pairs == {0: 1, 1: 0} and total == 52.0


def test_four_emitters_six_channels_against_enumeration():
    rng = np.random.default_rng(3)
    cost = rng.uniform(0, 50, (4, 6))
    best = min(sum(cost[i, p[i]] for i in range(4)) for p in itertools.permutations(range(6), 4))
    _, total = tl.solve_assignment(cost)
    assert total == pytest.approx(best, rel=1e-12)


@settings(max_examples=100)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**32 - 1), st.floats(0.0, 0.7))
def test_assignment_matches_brute_force(n, m, seed, p_inf):
    rng = np.random.default_rng(seed)
    cost = rng.uniform(0, 60, (n, m))
    cost[rng.random((n, m)) < p_inf] = np.inf
    pairs, total = tl.solve_assignment(cost)
    n_best, c_best = brute_assignment(cost)
    assert len(pairs) == n_best
    assert total == pytest.approx(c_best, abs=1e-9)
    assert len(set(pairs.values())) == len(pairs)


def test_assignment_on_emitter_lines_respects_direction_and_reach():
    g = tl.GridSpec()
    ems = [tl.EmitterLine(1278.1, -1), tl.EmitterLine(1278.1, 1), tl.EmitterLine(1279.3, -1, reach_pm=0.0)]
    a = tl.assign_channels(ems, g)
    for i, k in a.channels.items():
        dlam = tl.wavelength_nm(g.channel_ghz(k)) - ems[i].zpl_nm
        ok_tol = abs(g.channel_ghz(k) - tl.frequency_ghz(ems[i].zpl_nm)) <= g.tolerance_ghz
        assert ok_tol or (np.sign(dlam) == ems[i].direction and abs(dlam) * 1e3 <= ems[i].reach_pm)
    with pytest.raises(ValidationError):
        tl.assign_channels([], g)


# ---------------------------------------------------------------- cohort and campaign

def test_cohort_is_seeded():
    a = tl.make_cohort(12, 11, seed=4)
    b = tl.make_cohort(12, 11, seed=4)
    assert [e.spec.zpl_nm for e in a] == [e.spec.zpl_nm for e in b]
    assert sum(e.state.max_shift_pm > 0 for e in a) == 11


def test_small_campaign_report_is_json():
    cohort = tl.make_cohort(3, 3, seed=2)
    rep = tl.run_campaign(cohort, tl.GridSpec(), seed=2)
    back = json.loads(tl.campaign_json(rep))
    assert len(back["emitters"]) == 3
    for row in back["emitters"]:
        assert set(row) >= {"initial_zpl_nm", "schedule", "probes_nm", "final_offset_ghz", "status"}
    assert back["max_scheduled_power_mw"] < 0.6
