"""Scalar metrics extracted from current traces."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from .device import DeviceParams
from .simulator import DEFAULT_DT, CurrentTrace, integrate
from .stimulus import LightPulse, StimulusProtocol

NOISE_FLOOR_A = 1e-15


class MetricsError(ValueError):
    pass


class EmptyWindow(MetricsError):
    pass


class DivisionByNearZero(MetricsError, ZeroDivisionError):
    pass


class FitDiverged(MetricsError, RuntimeError):
    pass


def _slice(trace: CurrentTrace, window) -> slice:
    i0, i1 = trace.window(*window)
    if i1 <= i0:
        raise EmptyWindow(f"window [{window[0]:g}, {window[1]:g}) s contains no samples")
    return slice(i0, i1)


def baseline(trace: CurrentTrace, window) -> float:
    values = trace.current[_slice(trace, window)]
    if values.min() == values.max():
        # keep the exact equilibrium value; np.mean may round it
        return float(values[0])
    return float(np.mean(values))


def peak_deviation(trace: CurrentTrace, window, reference: float) -> tuple[float, int]:
    """Signed extremum of ``I - reference`` over ``window`` and its index."""
    sl = _slice(trace, window)
    dev = trace.current[sl] - reference
    k = int(np.argmax(np.abs(dev)))
    return float(dev[k]), sl.start + k


def classify(delta: float, floor: float = NOISE_FLOOR_A) -> str:
    if abs(delta) < floor:
        return "Null"
    return "Inhibitory" if delta < 0 else "Excitatory"


def delta_psc(trace: CurrentTrace, baseline_window, response_window) -> float:
    if baseline_window[0] > response_window[0]:
        raise MetricsError("baseline window must precede the response window")
    ref = baseline(trace, baseline_window)
    return peak_deviation(trace, response_window, ref)[0]


def weight_change(trace: CurrentTrace, baseline_window, response_window) -> float:
    ref = baseline(trace, baseline_window)
    return peak_deviation(trace, response_window, ref)[0] / ref


def ppf_index(trace: CurrentTrace, pulse1_window, pulse2_window, baseline_window) -> float:
    """Paired-pulse index in percent, 100 * A2 / A1.

    Both amplitudes are measured from the common pre-first-pulse baseline.
    """
    if pulse2_window[0] < pulse1_window[1] - 1e-12:
        raise MetricsError("pulse windows must be ordered and non-overlapping")
    ref = baseline(trace, baseline_window)
    a1 = abs(peak_deviation(trace, pulse1_window, ref)[0])
    a2 = abs(peak_deviation(trace, pulse2_window, ref)[0])
    if a1 < NOISE_FLOOR_A:
        raise DivisionByNearZero(f"first-pulse amplitude {a1:.3e} A is below the noise floor")
    return 100.0 * a2 / a1


@dataclass
class DecayFit:
    a1: float
    tau1: float
    a2: float
    tau2: float
    c: float
    rms: float
    r2: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.a1 * np.exp(-t / self.tau1) + self.a2 * np.exp(-t / self.tau2) + self.c

    def as_tuple(self):
        return self.a1, self.tau1, self.a2, self.tau2, self.c


def _amplitudes(t, y, tau1, tau2):
    basis = np.column_stack([np.exp(-t / tau1), np.exp(-t / tau2), np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    resid = y - basis @ coef
    return coef, float(resid @ resid)


def _single_exp_seed(t, y):
    # log-linear fit of |y - C| with C taken from the tail
    tail = max(3, len(y) // 20)
    c = float(np.mean(y[-tail:]))
    z = np.abs(y - c)
    head = z > 0.05 * z.max()
    head &= np.arange(len(z)) < len(z) - tail
    if head.sum() < 3:
        return max(t[-1] - t[0], 1e-12) / 3
    slope = np.polyfit(t[head], np.log(z[head]), 1)[0]
    if not slope < 0:
        return max(t[-1] - t[0], 1e-12) / 3
    return -1.0 / slope


def fit_double_exp(t, y, max_rel_rms: float = 1e-2) -> DecayFit:
    """Least-squares fit of ``A1 exp(-t/tau1) + A2 exp(-t/tau2) + C``.

    The amplitudes and offset are solved linearly for each trial pair of
    time constants; the time constants themselves are searched with
    Nelder-Mead in log space, seeded from a single-exponential fit. ``t`` is
    shifted so the segment starts at zero.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(t) < 50:
        raise MetricsError(f"decay segment needs at least 50 samples, got {len(t)}")
    t = t - t[0]
    scale = float(np.max(np.abs(y - y[-1]))) or 1.0
    ys = y / scale
    tau0 = _single_exp_seed(t, ys)
    span = t[-1]
    lo, hi = math.log(t[1] / 20), math.log(span * 20)

    def cost(x):
        x = np.clip(x, lo, hi)
        return _amplitudes(t, ys, math.exp(x[0]), math.exp(x[1]))[1]

    best = None
    for f1, f2 in ((0.3, 3.0), (0.1, 1.0), (1.0, 10.0)):
        x0 = np.log([tau0 * f1, tau0 * f2])
        res = minimize(cost, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    x = np.clip(best.x, lo, hi)
    tau1, tau2 = sorted(math.exp(v) for v in x)
    coef, sse = _amplitudes(t, ys, tau1, tau2)
    a1, a2, c = (float(v) * scale for v in coef)
    sse *= scale * scale
    rms = math.sqrt(sse / len(t))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    amplitude = float(np.max(np.abs(y - c)))
    if amplitude > 0 and rms > max_rel_rms * amplitude:
        raise FitDiverged(f"fit residual RMS {rms:.3e} exceeds {max_rel_rms:g} of amplitude {amplitude:.3e}")
    return DecayFit(a1, tau1, a2, tau2, c, rms, r2)


@dataclass
class MetricsReport:
    delta_psc: float
    classification: str
    ppf_index: float | None = None
    weight_change: float | None = None
    decay_fit: tuple | None = None
    truth_table: list | None = None
    windows: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def report(trace: CurrentTrace, baseline_window, response_window, fit_decay: bool = True) -> MetricsReport:
    ref = baseline(trace, baseline_window)
    delta, k = peak_deviation(trace, response_window, ref)
    windows = {
        "baseline": list(trace.window(*baseline_window)),
        "response": list(trace.window(*response_window)),
    }
    fit = None
    if fit_decay:
        i1 = trace.window(*response_window)[1]
        if i1 - k >= 50:
            try:
                fit = fit_double_exp(trace.t[k:i1], trace.current[k:i1]).as_tuple()
                windows["decay"] = [k, i1]
            except MetricsError:
                fit = None
    return MetricsReport(
        delta_psc=delta,
        classification=classify(delta),
        weight_change=delta / ref,
        decay_fit=fit,
        windows=windows,
    )


def truth_table(
    params: DeviceParams,
    gate_cfg: dict,
    pulse_a: LightPulse,
    pulse_b: LightPulse,
    dt: float = DEFAULT_DT,
    observe: float = 0.2,
):
    """Run the 00/01/10/11 input combinations and threshold |dPSC|.

    |dPSC| is read at the shared trailing edge of the two input pulses,
    relative to the dark pre-pulse current.
    """
    v_g = float(gate_cfg["v_g"])
    threshold = float(gate_cfg["threshold_a"])
    if not threshold > 0:
        raise MetricsError("threshold_a must be > 0")
    edge = max(pulse_a.t_end, pulse_b.t_end)
    t0 = min(pulse_a.t_start, pulse_b.t_start)
    if t0 <= 0:
        raise MetricsError("input pulses must start after t=0 to leave a baseline")
    channels = tuple(sorted({405, 532, pulse_a.channel_nm, pulse_b.channel_nm}))
    rows = []
    for a in (0, 1):
        for b in (0, 1):
            pulses = [p for p, on in ((pulse_a, a), (pulse_b, b)) if on]
            proto = StimulusProtocol(pulses=pulses, default_v_g=v_g, v_ds=params.v_ds,
                                     t_end=edge + observe, channels=channels)
            tr = integrate(params, proto, dt)
            ref = baseline(tr, (0.0, t0))
            out = tr.value_at(edge)
            delta = out - ref
            rows.append({"a": a, "b": b, "current_a": out, "delta_psc_a": delta,
                         "bit": int(abs(delta) >= threshold)})
    return rows
