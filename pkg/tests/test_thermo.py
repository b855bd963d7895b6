import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcenter import thermo as th
from gcenter.errors import NonConvergence, NoPeak, SchemaViolation, ValidationError
from gcenter.repro import ridge_thermal_config
from oracles import half_space_point_source


@pytest.fixture(scope="module")
def ridge():
    stack = th.build_stack(ridge_thermal_config())
    return stack, th.solve_steady_state(stack)


def small_config(spacing=(250.0, 250.0, 110.0), power_w=100e-6):
    return dataclasses.replace(
        ridge_thermal_config(), domain_um=(10.0, 10.0, 5.0), spacing_nm=spacing,
        layers=[th.Layer("si", 220, 10), th.Layer("box", 2000, 0.1), th.Layer("sub", 2780, 100)],
        source=th.SourceSpec(power_w=power_w))


def test_zero_source_returns_base_exactly():
    stack = th.build_stack(small_config(power_w=0.0))
    sol = th.solve_steady_state(stack)
    assert np.all(sol.temperature == stack.base_temperature_k)


def test_point_source_on_half_space():
    n, nz, h_nm, k, q = 64, 48, 100.0, 1.0, 1e-6
    h = h_nm * 1e-9
    src = np.zeros((n, n, nz))
    src[n // 2, n // 2, -1] = q
    x_src = (n // 2 + 0.5) * h - 0.5 * n * h
    z_top = nz * h

    def analytic(x, y, z):
        r = np.sqrt((x - x_src) ** 2 + (y - x_src) ** 2 + (z - z_top) ** 2)
        return 5.0 + half_space_point_source(q, k, r)

    stack = th.ThermalStack((h_nm,) * 3, np.full(src.shape, k), src, 5.0, analytic)
    sol = th.solve_steady_state(stack)
    d = np.arange(5, 21)
    r = np.hypot(d * h, 0.5 * h)  # top cell centres sit half a cell below the surface
    ratio = (sol.temperature[n // 2 + d, n // 2, -1] - 5.0) / half_space_point_source(q, k, r)
    assert np.max(np.abs(ratio - 1)) < 0.05


def test_ridge_peak_and_width(ridge):
    _, sol = ridge
    assert 50 <= sol.peak_k <= 200
    assert 2.5 <= th.profile_fwhm(sol, axis=0) <= 7.5


def test_energy_balance(ridge):
    stack, sol = ridge
    assert sol.boundary_flux_w == pytest.approx(stack.source_w.sum(), rel=1e-2)


def test_maximum_principle(ridge):
    stack, sol = ridge
    assert sol.temperature.min() >= stack.base_temperature_k - 1e-9
    hot = np.unravel_index(np.argmax(sol.temperature), sol.temperature.shape)
    assert stack.source_w[hot] > 0


def test_peak_rise_scales_linearly_with_power():
    a = th.solve_steady_state(th.build_stack(small_config(power_w=50e-6)))
    b = th.solve_steady_state(th.build_stack(small_config(power_w=100e-6)))
    assert b.rise.max() == pytest.approx(2 * a.rise.max(), rel=1e-6)


def test_grid_refinement_changes_peak_by_under_three_percent():
    coarse = th.solve_steady_state(th.build_stack(small_config()))
    fine = th.solve_steady_state(th.build_stack(small_config(spacing=(125.0, 125.0, 55.0))))
    assert abs(fine.rise.max() / coarse.rise.max() - 1) < 0.03


def test_integer_conductivities_are_not_truncated():
    cfg = small_config()
    stack = th.build_stack(cfg)
    assert stack.conductivity.min() == pytest.approx(cfg.ridge_cladding_conductivity)


def test_nonconvergence_reported(ridge):
    stack, _ = ridge
    with pytest.raises(NonConvergence):
        th.solve_steady_state(stack, max_iter=3)


def test_small_grid_rejected():
    with pytest.raises(ValidationError):
        th.solve_steady_state(th.ThermalStack((100.0,) * 3, np.ones((16, 32, 32)), np.ones((16, 32, 32))))


# ---------------------------------------------------------------- FWHM

def test_fwhm_of_sampled_gaussian():
    x = np.arange(-20, 20.001, 0.05)
    profile = np.exp(-0.5 * (x / 2.12) ** 2)
    # x in µm sampled every 50 nm; sigma 2.12 µm gives a 4.99 µm FWHM
    assert th.profile_fwhm(profile, spacing_nm=50.0) == pytest.approx(5.0, rel=1e-2)


@given(st.floats(0.5, 4.0), st.floats(-3.0, 3.0))
@settings(max_examples=25)
def test_fwhm_scales_with_width(sigma_um, shift_um):
    x = np.arange(-30, 30.0001, 0.02)
    y = np.exp(-0.5 * ((x - shift_um) / sigma_um) ** 2)
    expected = 2 * math.sqrt(2 * math.log(2)) * sigma_um
    assert th.profile_fwhm(y, spacing_nm=20.0) == pytest.approx(expected, rel=5e-3)


@pytest.mark.parametrize("profile", [np.ones(50), np.zeros(50), np.linspace(0, 1, 50)])
def test_fwhm_without_peak(profile):
    with pytest.raises(NoPeak):
        th.profile_fwhm(profile, spacing_nm=10.0)


# ---------------------------------------------------------------- config and files

def test_stack_config_json_round_trip():
    cfg = ridge_thermal_config()
    back = th.StackConfig.from_json(cfg.to_json())
    assert back == cfg


@pytest.mark.parametrize("patch,where", [
    ({"layers": [{"name": "a", "thickness_nm": 220, "conductivity": -1}]}, "layers[0].conductivity"),
    ({"source": {"power_w": -1e-6}}, "source.power_w"),
    ({"colour": "blue"}, "colour"),
    ({"layers": [{"thickness_nm": 220}]}, "layers[0].conductivity"),
])
def test_stack_config_schema_violations(patch, where):
    d = json.loads(ridge_thermal_config().to_json())
    d.update(patch)
    with pytest.raises(SchemaViolation) as info:
        th.StackConfig.from_dict(d)
    assert where in str(info.value)


def test_field_round_trip(tmp_path):
    sol = th.solve_steady_state(th.build_stack(small_config()))
    th.write_field(tmp_path / "t.bin", sol)
    back = th.read_field(tmp_path / "t.bin")
    np.testing.assert_array_equal(back.temperature, sol.temperature)
    assert back.spacing_nm == sol.spacing_nm
    header = json.loads((tmp_path / "t.json").read_text())
    assert header["shape"] == list(sol.temperature.shape) and header["dtype"] == "<f8"
