import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from photosynapse.device import (
    ELEMENTARY_CHARGE,
    DeviceParams,
    DeviceState,
    NoCrossing,
    ParamsError,
    carrier_densities,
    channel_current,
    current_from_densities,
    default_params,
    default_params_path,
    generation_rate,
    load_params,
    save_params,
    state_derivative,
    steady_photo_pools,
    steady_state,
    trap_capture_rate,
    trap_release_time,
    v_cross,
)


def oracle_current(p, v_g, n_photo=0.0, n_trap=0.0):
    # scalar re-derivation of the channel current with the math module
    n_raw = p.c_ox_over_e * (v_g - p.v_dirac0) + n_photo + n_trap
    n = p.n_clamp * math.tanh(n_raw / p.n_clamp)
    root = math.sqrt(p.n_residual ** 2 + n ** 2)
    n_e, n_h = (root + n) / 2, (root - n) / 2
    return p.width / p.length * ELEMENTARY_CHARGE * (p.mu_e * n_e + p.mu_h * n_h) * p.v_ds


def test_carrier_split_oracle():
    n_e, n_h = carrier_densities(3e15, 1e15)
    assert n_e == pytest.approx(3.0811388e15, rel=1e-7)
    assert n_h == pytest.approx(0.0811388e15, rel=1e-6)


def test_carrier_split_at_dirac_point():
    n_e, n_h = carrier_densities(0.0, 2e14)
    assert n_e == n_h == 1e14


@given(st.floats(-1e17, 1e17), st.floats(1e12, 1e16))
def test_carrier_split_invariants(n, r):
    n_e, n_h = carrier_densities(n, r)
    assert n_e > 0 and n_h > 0
    assert n_e - n_h == pytest.approx(n, rel=1e-12, abs=r * 1e-12)
    assert n_e * n_h == pytest.approx(r * r / 4, rel=1e-6)


def test_current_matches_oracle(params):
    for v in (-50.0, -3.0, params.v_dirac0, 7.0, 50.0):
        for n_photo in (0.0, 1e15, 4e15):
            got = current_from_densities(n_photo, 0.0, 0.0, v, params)
            assert got == pytest.approx(oracle_current(params, v, n_photo), rel=1e-12)


def test_current_minimum_at_dirac_point(params):
    v = np.linspace(-50, 50, 2001)
    i = current_from_densities(0.0, 0.0, 0.0, v, params)
    assert abs(v[np.argmin(i)] - params.v_dirac0) <= 0.05


def test_photo_carriers_shift_like_gate(params):
    # n_photo acts as a gate offset of n_photo / C
    n = 2e15
    a = current_from_densities(n, 0.0, 0.0, 3.0, params)
    b = current_from_densities(0.0, 0.0, 0.0, 3.0 + params.volts(n), params)
    assert a == pytest.approx(b, rel=1e-12)


def test_channel_current_from_state(params):
    s = DeviceState(1e15, 2e15, 5e14)
    assert channel_current(s, -10.0, params) == current_from_densities(1e15, 2e15, 5e14, -10.0, params)


def test_generation_is_linear_in_power(params):
    g1 = generation_rate({405: 1e-5}, params)
    g2 = generation_rate({405: 2e-5}, params)
    g3 = generation_rate({405: 1e-5, 532: 3e-5}, params)
    assert g2 == pytest.approx(2 * g1, rel=1e-15)
    assert g3 == pytest.approx(g1 + params.eta[532] * 3e-5, rel=1e-15)
    assert generation_rate({}, params) == 0.0


def test_generation_rejects_negative_and_unknown(params):
    with pytest.raises(ValueError):
        generation_rate({405: -1e-6}, params)
    with pytest.raises(ParamsError):
        generation_rate({633: 1e-6}, params)


def test_trap_gate_dependence(params):
    assert trap_capture_rate(0.0, params) == 0.0
    assert trap_capture_rate(10.0, params) == 0.0
    assert trap_capture_rate(-params.v_trap_ref, params) == pytest.approx(params.c_trap0)
    assert trap_release_time(params.v_reset_threshold, params) == params.tau_trap_hold
    assert trap_release_time(params.v_reset_threshold + 1, params) == params.tau_trap_reset


def test_dark_state_is_stationary(params):
    for v in (-30.0, 0.0, 30.0):
        assert state_derivative(DeviceState(), v, {}, params) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("v_g", [-30.0, -10.0, 0.0, 20.0])
@pytest.mark.parametrize("power", [1e-6, 5e-5, 1e-3])
def test_steady_state_is_a_fixed_point(params, v_g, power):
    light = {405: power}
    s = steady_state(params, v_g, light)
    d = state_derivative(s, v_g, light, params)
    g = generation_rate(light, params)
    assert abs(d[0]) <= 1e-9 * g and abs(d[1]) <= 1e-9 * g
    assert abs(d[2]) <= 1e-9 * max(s.n_trap / params.tau_trap_hold, g * 1e-6)


def test_steady_pools_closed_form(params):
    g = 1e18
    n_f, n_s = steady_photo_pools(g, params)
    tau_eff = params.alpha_fast * params.tau_fast + params.alpha_slow * params.tau_slow
    total = g * tau_eff * params.n_sat / (params.n_sat + g * tau_eff)
    assert n_f + n_s == pytest.approx(total, rel=1e-12)
    assert n_f / n_s == pytest.approx(
        params.alpha_fast * params.tau_fast / (params.alpha_slow * params.tau_slow), rel=1e-12)


def test_v_cross_against_brentq(params):
    light = {405: 10e-6}
    n_f, n_s = steady_photo_pools(generation_rate(light, params), params)
    f = lambda v: oracle_current(params, v, n_f + n_s) - oracle_current(params, v)  # noqa: E731
    expected = brentq(f, -50, 50, xtol=1e-12)
    assert v_cross(params, light) == pytest.approx(expected, abs=1e-6)


def test_v_cross_symmetric_closed_form(params):
    # equal mobilities make I depend on |n| only, so the curves cross where n_dark = -n_light
    p = params.with_(mu_e=0.1, mu_h=0.1, n_clamp=1e30)
    light = {405: 10e-6}
    dn = sum(steady_photo_pools(generation_rate(light, p), p))
    assert v_cross(p, light) == pytest.approx(p.v_dirac0 - dn / 2 / p.c_ox_over_e, abs=1e-7)


def test_v_cross_shipped_value(params):
    assert abs(v_cross(params, {405: 10e-6}) - 5.0) <= 2.0


def test_v_cross_no_crossing(params):
    with pytest.raises(NoCrossing):
        v_cross(params, {405: 10e-6}, bracket=(20.0, 50.0))
    with pytest.raises(NoCrossing):
        v_cross(params, {}, bracket=(-50.0, 50.0))


def test_params_round_trip(params, tmp_path):
    again = DeviceParams.from_dict(json.loads(json.dumps(params.to_dict())))
    assert again == params
    assert again.digest() == params.digest()
    path = tmp_path / "p.json"
    save_params(params, path, note="x")
    assert load_params(path) == params


def test_shipped_params_load():
    p = load_params(default_params_path())
    assert p.alpha_fast + p.alpha_slow == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("change, match", [
    ({"alpha_fast": 0.5}, "alpha"),
    ({"tau_fast": 0.1}, "tau_fast"),
    ({"tau_trap_hold": 1.0}, "tau_trap_hold"),
    ({"n_sat": -1.0}, "n_sat"),
    ({"c_trap0": -1.0}, "c_trap0"),
    ({"eta": {405: -1.0}}, "eta"),
])
def test_params_validation(params, change, match):
    with pytest.raises(ParamsError, match=match):
        params.with_(**change)


def test_params_schema_errors(params):
    d = params.to_dict()
    with pytest.raises(ParamsError, match="unknown"):
        DeviceParams.from_dict({**d, "bogus": 1})
    d.pop("width")
    with pytest.raises(ParamsError, match="missing"):
        DeviceParams.from_dict(d)


@settings(max_examples=50)
@given(st.floats(-50, 50), st.floats(0, 5e15), st.floats(0, 5e15))
def test_current_is_positive_and_finite(v, n_photo, n_trap):
    i = current_from_densities(n_photo, 0.0, n_trap, v, default_params())
    assert np.isfinite(i) and i > 0
