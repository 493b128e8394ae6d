import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photosynapse.metrics import (
    DivisionByNearZero,
    EmptyWindow,
    FitDiverged,
    MetricsError,
    baseline,
    classify,
    delta_psc,
    fit_double_exp,
    peak_deviation,
    ppf_index,
    report,
    truth_table,
    weight_change,
)
from photosynapse.device import v_cross
from photosynapse.simulator import CurrentTrace
from photosynapse.stimulus import LightPulse

DT = 1e-4


def trace(current):
    current = np.asarray(current, dtype=float)
    t = np.arange(len(current)) * DT
    return CurrentTrace(DT, t, current, np.zeros_like(t), {}, np.zeros((len(t), 3)))


def two_bumps(a1=-2e-6, a2=-3e-6, i0=1e-3):
    i = np.full(1000, i0)
    i[200] += a1
    i[600] += a2
    return trace(i)


def test_baseline_flat_is_exact():
    assert baseline(trace(np.full(100, 0.1 + 0.2)), (0, 0.005)) == 0.1 + 0.2


def test_baseline_mean():
    # the end index is half-open, so the last sample is excluded
    assert baseline(trace([1.0, 2.0, 3.0, 4.0, 9.0]), (0, 4 * DT)) == 2.5


def test_empty_window():
    with pytest.raises(EmptyWindow):
        baseline(trace(np.ones(10)), (5e-4, 5e-4))


def test_peak_keeps_sign():
    tr = two_bumps()
    d, k = peak_deviation(tr, (0.015, 0.025), 1e-3)
    assert k == 200 and d == pytest.approx(-2e-6)


@pytest.mark.parametrize("delta, label", [
    (-1e-9, "Inhibitory"), (1e-9, "Excitatory"), (0.0, "Null"), (5e-16, "Null"), (-1e-15, "Inhibitory"),
])
def test_classify(delta, label):
    assert classify(delta) == label


def test_delta_psc_and_weight():
    tr = two_bumps()
    assert delta_psc(tr, (0, 0.01), (0.015, 0.025)) == pytest.approx(-2e-6)
    assert weight_change(tr, (0, 0.01), (0.015, 0.025)) == pytest.approx(-2e-3)
    with pytest.raises(MetricsError):
        delta_psc(tr, (0.02, 0.03), (0.0, 0.01))


def test_ppf_index_oracle():
    tr = two_bumps(-2e-6, -3e-6)
    assert ppf_index(tr, (0.01, 0.03), (0.05, 0.07), (0, 0.01)) == pytest.approx(150.0)


def test_ppf_index_guards():
    flat = trace(np.full(1000, 1e-3))
    with pytest.raises(DivisionByNearZero):
        ppf_index(flat, (0.01, 0.03), (0.05, 0.07), (0, 0.01))
    with pytest.raises(MetricsError, match="ordered"):
        ppf_index(two_bumps(), (0.05, 0.07), (0.01, 0.03), (0, 0.01))


@settings(max_examples=50)
@given(st.floats(1e-9, 1e-3), st.floats(1e-9, 1e-3), st.sampled_from([-1.0, 1.0]))
def test_ppf_index_is_amplitude_ratio(a1, a2, sign):
    tr = two_bumps(sign * a1, sign * a2)
    assert ppf_index(tr, (0.01, 0.03), (0.05, 0.07), (0, 0.01)) == pytest.approx(100 * a2 / a1, rel=1e-6)


@pytest.mark.parametrize("truth", [
    (2e-6, 0.004, 1e-6, 0.05, 1e-3),
    (-3e-6, 0.002, -1e-6, 0.03, 5e-4),
])
def test_fit_recovers_double_exponential(truth):
    a1, t1, a2, t2, c = truth
    t = np.arange(3000) * DT
    y = a1 * np.exp(-t / t1) + a2 * np.exp(-t / t2) + c
    fit = fit_double_exp(t + 0.3, y)
    assert fit.tau1 == pytest.approx(t1, rel=1e-4)
    assert fit.tau2 == pytest.approx(t2, rel=1e-4)
    assert fit.a1 == pytest.approx(a1, rel=1e-4)
    assert fit.a2 == pytest.approx(a2, rel=1e-4)
    assert fit.c == pytest.approx(c, rel=1e-6)
    assert fit.r2 > 0.999999
    assert np.allclose(fit(t), y, rtol=1e-6)


def test_fit_rejects_noise():
    rng = np.random.default_rng(1)
    t = np.arange(500) * DT
    y = rng.normal(size=500)
    with pytest.raises(FitDiverged):
        fit_double_exp(t, y)


def test_fit_needs_samples():
    with pytest.raises(MetricsError, match="50 samples"):
        fit_double_exp(np.arange(10) * DT, np.ones(10))


def test_report_json():
    tr = two_bumps()
    rep = report(tr, (0, 0.01), (0.015, 0.025), fit_decay=False)
    doc = json.loads(rep.to_json())
    assert doc["classification"] == "Inhibitory"
    assert doc["windows"]["baseline"] == [0, 100]


def test_truth_table_and(params):
    # at the crossover gate one input cancels out; two inputs drive the pools into saturation
    a = LightPulse(405, 10e-6, 0.01, 1.0)
    v = v_cross(params, {405: 10e-6})
    rows = truth_table(params, {"v_g": v, "threshold_a": 5e-6}, a, a, observe=0.02)
    assert [(r["a"], r["b"]) for r in rows] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert [r["bit"] for r in rows] == [0, 0, 0, 1]
    assert rows[0]["delta_psc_a"] == 0.0


def test_truth_table_guards(params):
    a = LightPulse(405, 50e-6, 0.01, 0.005)
    with pytest.raises(MetricsError, match="threshold"):
        truth_table(params, {"v_g": 0.0, "threshold_a": 0.0}, a, a)
    early = LightPulse(405, 50e-6, 0.0, 0.005)
    with pytest.raises(MetricsError, match="after t=0"):
        truth_table(params, {"v_g": 0.0, "threshold_a": 1e-6}, early, a)
