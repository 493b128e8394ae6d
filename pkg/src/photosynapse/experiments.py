"""Figure harnesses: build protocols, simulate, extract metrics, write tables."""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import __version__
from .device import DeviceParams, v_cross
from .metrics import MetricsError, baseline, peak_deviation, ppf_index, truth_table
from .simulator import DEFAULT_DT, integrate
from .stimulus import GateSegment, LightPulse, StimulusProtocol, pulse_train

T_PRE = 0.01            # dark lead-in before the first pulse, s
SPIKE_POWER = 50e-6     # W
SPIKE_DURATION = 5e-3   # s
LTP_DURATION = 0.1      # s
LTP_SPACING = 3.0       # s, start to start
GATE_SWEEP = tuple(float(v) for v in range(-50, 51, 10))
DURATIONS = (0.005, 0.01, 0.02, 0.05, 0.1)
PPF_INTERVALS = (0.006, 0.01, 0.02, 0.035, 0.055, 0.1, 0.2, 0.35, 0.5)
SUMMATION_DELAYS = (-0.1, -0.06, -0.03, -0.015, -0.01, -0.005, 0.0, 0.005, 0.01, 0.015, 0.03)

# Decision thresholds are configuration, not derived: the measured quantity is
# a current, and no source states where a logic "1" begins.
LOGIC_CONFIG = {
    "and": {"power_w": 10e-6, "duration": 1.0, "channel_nm": 405, "threshold_a": 5e-6},
    "or": {"power_w": 50e-6, "duration": 1.0, "channel_nm": 405, "v_g": 20.0, "threshold_a": 5e-6},
}


@dataclass
class Table:
    figure_id: str
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)

    def column(self, name) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_cell(v) for v in row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {"figure_id": self.figure_id, "columns": self.columns,
               "rows": [list(r) for r in self.rows], "meta": self.meta}
        return json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n"


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def update_manifest(out_dir, key: str, filename: str, params: DeviceParams, dt: float,
                    protocol_digest: str = "", **extra) -> Path:
    """Record one output file in ``<out_dir>/manifest.json`` under ``key``."""
    manifest_path = Path(out_dir) / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    manifest[key] = {
        "file": filename,
        "params_digest": params.digest(),
        "protocol_digest": protocol_digest,
        "dt": dt,
        "code_version": __version__,
        **extra,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def write_table(table: Table, out_dir, params: DeviceParams, dt: float, fmt: str = "csv") -> Path:
    """Write ``<figure_id>.<fmt>`` and record it in ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{table.figure_id}.{fmt}"
    path.write_text(table.to_csv() if fmt == "csv" else table.to_json())
    update_manifest(out_dir, table.figure_id, path.name, params, dt,
                    table.meta.get("protocol_digest", ""))
    return path


def _combined_digest(traces) -> str:
    h = hashlib.sha256()
    for tr in traces:
        h.update(tr.protocol_digest.encode())
    return h.hexdigest()


def simulate_many(params, protocols, dt=DEFAULT_DT, jobs=1):
    """Integrate independent protocols, optionally on a thread pool.

    Output order follows input order; each integration is independent, so the
    thread count has no effect on the numbers.
    """
    if jobs <= 1 or len(protocols) <= 1:
        return [integrate(params, p, dt) for p in protocols]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda p: integrate(params, p, dt), protocols))


def observe_time(params: DeviceParams) -> float:
    return 5.0 * params.tau_slow


def _protocol(pulses, v_g, t_end, params, gate=(), channels=None) -> StimulusProtocol:
    chans = sorted({405, 532} | {p.channel_nm for p in pulses}) if channels is None else channels
    return StimulusProtocol(pulses=pulses, gate=gate, default_v_g=float(v_g), v_ds=params.v_ds,
                            t_end=t_end, channels=chans)


def spike(power=SPIKE_POWER, duration=SPIKE_DURATION, t_start=T_PRE, channel_nm=405) -> LightPulse:
    return LightPulse(channel_nm, power, t_start, duration)


# -- protocol builders (also used to generate the shipped corpus) ---------

def single_pulse_protocol(params, v_g, pulse: LightPulse, observe=None) -> StimulusProtocol:
    observe = observe_time(params) if observe is None else observe
    return _protocol([pulse], v_g, pulse.t_end + observe, params)


def pair_protocol(params, v_g, interval, pulse: LightPulse, observe=None) -> StimulusProtocol:
    observe = observe_time(params) if observe is None else observe
    second = LightPulse(pulse.channel_nm, pulse.power_w, pulse.t_start + interval, pulse.duration)
    return _protocol([pulse, second], v_g, second.t_end + observe, params)


def train_protocol(params, v_g, n_pulses, pulse_s, gap_s, power, observe=None) -> StimulusProtocol:
    observe = observe_time(params) if observe is None else observe
    pulses = pulse_train(405, power, pulse_s, pulse_s + gap_s, n_pulses, T_PRE)
    return _protocol(pulses, v_g, pulses[-1].t_end + observe, params)


def ltp_protocol(params, v_g, n_pulses=1, spacing=LTP_SPACING, duration=LTP_DURATION,
                 power=SPIKE_POWER, observe_s=10.0, reset: GateSegment | None = None,
                 extra=0.0) -> StimulusProtocol:
    pulses = pulse_train(405, power, duration, spacing, n_pulses, T_PRE)
    t_end = pulses[-1].t_end + observe_s + extra
    gate = [reset] if reset is not None else []
    if reset is not None:
        t_end = max(t_end, reset.t_end + 1.0)
    return _protocol(pulses, v_g, t_end, params, gate=gate)


def summation_protocol(params, v_g, delay, p1, p2, duration=0.02, lead=None,
                       ch1=405, ch2=532, observe=None) -> StimulusProtocol:
    observe = observe_time(params) if observe is None else observe
    lead = T_PRE + max(0.0, -delay) if lead is None else lead
    first = LightPulse(ch1, p1, lead, duration)
    second = LightPulse(ch2, p2, lead + delay, duration)
    t_end = max(first.t_end, second.t_end) + observe
    return _protocol([first, second], v_g, t_end, params)


# -- harnesses -------------------------------------------------------------

def _response(tr, t0, t1):
    ref = baseline(tr, (0.0, t0))
    delta = peak_deviation(tr, (t0, t1), ref)[0]
    return delta, delta / ref


def run_gate_sweep(params, v_g_list=GATE_SWEEP, pulse: LightPulse | None = None,
                   dt=DEFAULT_DT, jobs=1) -> Table:
    if len(v_g_list) == 0:
        raise ValueError("v_g_list must be non-empty")
    pulse = spike() if pulse is None else pulse
    protos = [single_pulse_protocol(params, v, pulse) for v in v_g_list]
    traces = simulate_many(params, protos, dt, jobs)
    rows = []
    for v, tr in zip(v_g_list, traces):
        delta, w = _response(tr, pulse.t_start, tr.t_end)
        rows.append((float(v), delta, w))
    return Table("fig1b", ["v_g", "delta_psc_a", "weight"], rows,
                 {"protocol_digest": _combined_digest(traces)})


def run_duration_sweep(params, v_g, durations=DURATIONS, power=SPIKE_POWER,
                       dt=DEFAULT_DT, jobs=1) -> Table:
    protos = [single_pulse_protocol(params, v_g, spike(power, d)) for d in durations]
    traces = simulate_many(params, protos, dt, jobs)
    rows = []
    for d, tr in zip(durations, traces):
        delta, w = _response(tr, T_PRE, tr.t_end)
        rows.append((float(d), delta, w))
    return Table("fig1c", ["duration_s", "delta_psc_a", "weight"], rows,
                 {"protocol_digest": _combined_digest(traces), "v_g": v_g, "power_w": power})


def run_ppf_sweep(params, v_g=0.0, intervals=PPF_INTERVALS, pulse: LightPulse | None = None,
                  dt=DEFAULT_DT, jobs=1) -> Table:
    """Paired-pulse index versus start-to-start spike interval."""
    pulse = spike() if pulse is None else pulse
    for iv in intervals:
        if iv < pulse.duration:
            raise ValueError(f"interval {iv:g} s is shorter than the pulse ({pulse.duration:g} s)")
    protos = [pair_protocol(params, v_g, iv, pulse) for iv in intervals]
    traces = simulate_many(params, protos, dt, jobs)
    rows = []
    for iv, tr in zip(intervals, traces):
        t1, t2 = pulse.t_start, pulse.t_start + iv
        index = ppf_index(tr, (t1, t2), (t2, tr.t_end), (0.0, t1))
        a1, _ = _response(tr, t1, t2)
        rows.append((float(iv), index, a1))
    return Table("fig2c", ["dt_pre_s", "ppf_index_pct", "a1_a"], rows,
                 {"protocol_digest": _combined_digest(traces), "v_g": v_g})


def run_train(params, v_g, n_pulses=10, pulse_s=SPIKE_DURATION, gap_s=0.010,
              power=SPIKE_POWER, dt=DEFAULT_DT) -> Table:
    """Per-pulse peak weight change for a regular spike train."""
    proto = train_protocol(params, v_g, n_pulses, pulse_s, gap_s, power)
    tr = integrate(params, proto, dt)
    ref = baseline(tr, (0.0, T_PRE))
    period = pulse_s + gap_s
    rows = []
    for k in range(n_pulses):
        t0 = T_PRE + k * period
        t1 = t0 + period if k < n_pulses - 1 else tr.t_end
        delta = peak_deviation(tr, (t0, t1), ref)[0]
        rows.append((k + 1, delta / ref, delta))
    return Table("fig2d", ["pulse", "weight", "delta_psc_a"], rows,
                 {"protocol_digest": tr.protocol_digest, "v_g": v_g})


def run_ltp(params, v_g, n_pulses=1, spacing=LTP_SPACING, duration=LTP_DURATION,
            power=SPIKE_POWER, observe_s=10.0, sample_every=0.01, dt=DEFAULT_DT) -> Table:
    """Weight versus time after one pulse (fig3a) or a pulse train (fig3c).

    Times in the table are relative to the end of the last pulse.
    """
    proto = ltp_protocol(params, v_g, n_pulses, spacing, duration, power, observe_s)
    tr = integrate(params, proto, dt)
    ref = baseline(tr, (0.0, T_PRE))
    weight = (tr.current - ref) / ref
    t_last = proto.pulses[-1].t_end
    step = max(1, int(round(sample_every / dt)))
    idx = np.arange(0, len(tr), step)
    rows = [(float(tr.t[i] - t_last), float(weight[i])) for i in idx]
    w1 = float(weight[tr.index_at(t_last + 1.0)])
    w_end = float(weight[tr.index_at(t_last + observe_s)])
    meta = {
        "protocol_digest": tr.protocol_digest,
        "v_g": v_g,
        "n_pulses": n_pulses,
        "weight_peak": float(weight[np.argmax(np.abs(weight))]),
        "weight_1s": w1,
        "weight_end": w_end,
        "retention": w_end / w1 if w1 != 0 else float("nan"),
    }
    return Table("fig3a" if n_pulses == 1 else "fig3c", ["t_s", "weight"], rows, meta)


def run_reset(params, v_g=-20.0, v_reset=40.0, reset_duration=0.1, reset_at=None,
              power=SPIKE_POWER, duration=LTP_DURATION, sample_every=0.01, dt=DEFAULT_DT) -> Table:
    """LTP pulse followed by a gate reset segment (fig3d).

    ``reset_at`` defaults to 2 s after the light pulse. The post-reset weight
    is read ``10 * tau_trap_reset`` after the segment ends.
    """
    pulse_end = T_PRE + duration
    reset_at = pulse_end + 2.0 if reset_at is None else reset_at
    seg = GateSegment(v_reset, reset_at, reset_duration)
    proto = ltp_protocol(params, v_g, 1, LTP_SPACING, duration, power, observe_s=2.0, reset=seg)
    tr = integrate(params, proto, dt)
    if not reset_at > dt:
        raise ValueError("reset_at must leave at least one dark sample before it")
    ref = baseline(tr, (0.0, min(T_PRE, reset_at)))
    weight = (tr.current - ref) / ref
    before = float(weight[tr.index_at(reset_at) - 1])
    after = float(weight[tr.index_at(seg.t_end + 10 * params.tau_trap_reset)])
    step = max(1, int(round(sample_every / dt)))
    rows = [(float(tr.t[i]), float(weight[i])) for i in range(0, len(tr), step)]
    meta = {
        "protocol_digest": tr.protocol_digest,
        "v_g": v_g,
        "v_reset": v_reset,
        "weight_before_reset": before,
        "weight_after_reset": after,
        "weight_final": float(weight[-1]),
    }
    return Table("fig3d", ["t_s", "weight"], rows, meta)


def run_temporal_summation(params, p1, p2, v_g=0.0, delays=SUMMATION_DELAYS, duration=0.02,
                           dt=DEFAULT_DT, jobs=1) -> Table:
    """dPSC at the trailing edge of the 405 nm spike versus the 532 nm delay.

    ``p1`` and ``p2`` (W) are required: the per-channel powers are not
    fixed by the source measurements.
    """
    lead = T_PRE + max(0.0, -min(delays))
    protos = [summation_protocol(params, v_g, d, p1, p2, duration, lead) for d in delays]
    single = _protocol([LightPulse(405, p1, lead, duration)], v_g,
                       lead + duration + observe_time(params), params)
    traces = simulate_many(params, protos + [single], dt, jobs)
    edge = lead + duration
    rows = []
    for d, tr in zip(delays, traces):
        ref = baseline(tr, (0.0, min(lead, lead + d)))
        rows.append((float(d), tr.value_at(edge) - ref))
    ref = baseline(traces[-1], (0.0, lead))
    meta = {"protocol_digest": _combined_digest(traces), "v_g": v_g, "p1_w": p1, "p2_w": p2,
            "single_pulse_a": traces[-1].value_at(edge) - ref}
    return Table("fig4b", ["delay_s", "delta_psc_a"], rows, meta)


def _peak_response(params, v_g, pulses, dt):
    end = max(p.t_end for p in pulses)
    tr = integrate(params, _protocol(pulses, v_g, end + observe_time(params), params), dt)
    return _response(tr, T_PRE, tr.t_end)[0]


def run_power_summation(params, p1_list, p2_list, v_g=20.0, duration=SPIKE_DURATION,
                        dt=DEFAULT_DT, jobs=1) -> Table:
    """Simultaneous 405 nm + 532 nm spikes against the sum of separate responses."""
    def task(args):
        p1, p2 = args
        both = _peak_response(params, v_g, [LightPulse(405, p1, T_PRE, duration),
                                            LightPulse(532, p2, T_PRE, duration)], dt)
        one = _peak_response(params, v_g, [LightPulse(405, p1, T_PRE, duration)], dt)
        two = _peak_response(params, v_g, [LightPulse(532, p2, T_PRE, duration)], dt)
        return both, one + two

    grid = [(float(a), float(b)) for a in p1_list for b in p2_list]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(task, grid))
    else:
        results = [task(g) for g in grid]
    rows = []
    for (p1, p2), (both, total) in zip(grid, results):
        ratio = both / total if total != 0 else float("nan")
        rows.append((p1, p2, both, total, ratio))
    return Table("power_summation", ["p1_w", "p2_w", "measured_a", "arithmetic_sum_a", "ratio"],
                 rows, {"v_g": v_g, "duration_s": duration})


def find_saturation_knee(params, v_g=20.0, duration=SPIKE_DURATION, channel_nm=405,
                         p_ref=1e-9, dt=DEFAULT_DT) -> float:
    """Power (W) where the single-spike response falls to half its linear extrapolation."""
    slope = _peak_response(params, v_g, [LightPulse(channel_nm, p_ref, T_PRE, duration)], dt) / p_ref

    def f(log_p):
        p = 10.0 ** log_p
        resp = _peak_response(params, v_g, [LightPulse(channel_nm, p, T_PRE, duration)], dt)
        return resp / (slope * p) - 0.5

    lo, hi = math.log10(p_ref), math.log10(p_ref) + 1
    while f(hi) > 0:
        lo, hi = hi, hi + 1
        if hi > 0:
            raise MetricsError("no saturation knee below 1 W")
    return 10.0 ** brentq(f, lo, hi, xtol=1e-4)


def logic_operating_point(params, mode: str) -> float:
    cfg = LOGIC_CONFIG[mode]
    if mode == "and":
        return v_cross(params, {cfg["channel_nm"]: cfg["power_w"]})
    return cfg["v_g"]


def run_logic(params, mode: str, threshold_a: float | None = None, v_g: float | None = None,
              dt=DEFAULT_DT) -> Table:
    mode = mode.lower()
    if mode not in LOGIC_CONFIG:
        raise ValueError(f"mode must be 'and' or 'or', got {mode!r}")
    cfg = LOGIC_CONFIG[mode]
    threshold = cfg["threshold_a"] if threshold_a is None else threshold_a
    v = logic_operating_point(params, mode) if v_g is None else v_g
    pa = LightPulse(cfg["channel_nm"], cfg["power_w"], T_PRE, cfg["duration"])
    pb = LightPulse(cfg["channel_nm"], cfg["power_w"], T_PRE, cfg["duration"])
    rows = truth_table(params, {"v_g": v, "threshold_a": threshold}, pa, pb, dt)
    table_rows = [(r["a"], r["b"], r["current_a"], r["delta_psc_a"], r["bit"]) for r in rows]
    return Table("fig4c" if mode == "and" else "fig4d",
                 ["a", "b", "current_a", "delta_psc_a", "bit"], table_rows,
                 {"mode": mode, "v_g": v, "threshold_a": threshold})
