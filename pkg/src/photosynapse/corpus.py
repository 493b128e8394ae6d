"""Generator for the shipped protocol corpus (one file per figure experiment).

Each document is the harness builder's protocol for one representative
setting. Values that the harness sweeps are exposed as ``"$name"``
placeholders declared under ``parameters`` (``null`` = caller must supply).
"""
from __future__ import annotations

import json
from pathlib import Path

from .device import DeviceParams
from .experiments import (
    LOGIC_CONFIG,
    LTP_DURATION,
    SPIKE_DURATION,
    SPIKE_POWER,
    T_PRE,
    DURATIONS,
    _protocol,
    ltp_protocol,
    observe_time,
    pair_protocol,
    single_pulse_protocol,
    spike,
    summation_protocol,
    train_protocol,
)
from .stimulus import GateSegment, LightPulse

FIGURE_IDS = ("fig1b", "fig1c", "fig2b", "fig2c", "fig2d", "fig3a", "fig3c", "fig3d",
              "fig4b", "fig4c", "fig4d")


def corpus_dir() -> Path:
    return Path(__file__).parent / "data" / "protocols"


def _doc(protocol, description, parameters=None, placeholders=()):
    doc = {"description": description}
    if parameters:
        doc["parameters"] = parameters
    doc.update(protocol.to_dict())
    for path, name in placeholders:
        node = doc
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = f"${name}"
    return doc


def _logic_protocol(params, mode, v_g):
    cfg = LOGIC_CONFIG[mode]
    pulse = LightPulse(cfg["channel_nm"], cfg["power_w"], T_PRE, cfg["duration"])
    return _protocol([pulse, pulse], v_g, pulse.t_end + 0.2, params)


def build_corpus(params: DeviceParams) -> dict[str, dict]:
    docs = {}
    docs["fig1b"] = _doc(
        single_pulse_protocol(params, 0.0, spike()),
        "Single 405 nm spike (50 uW, 5 ms); gate-bias sweep point v_g (V).",
        {"v_g": 0.0}, [(("default_v_g",), "v_g")],
    )
    # t_end leaves room for the longest swept duration
    t_end = T_PRE + max(DURATIONS) + observe_time(params)
    docs["fig1c"] = _doc(
        _protocol([spike()], 0.0, t_end, params),
        "Single 405 nm 50 uW spike of variable duration_s (s, at most 0.1) at gate v_g (V).",
        {"v_g": 0.0, "duration_s": SPIKE_DURATION},
        [(("default_v_g",), "v_g"), (("pulses", 0, "duration"), "duration_s")],
    )
    docs["fig2b"] = _doc(
        pair_protocol(params, 0.0, 0.055, spike()),
        "Paired 405 nm spikes (50 uW, 5 ms), second starting 55 ms after the first, V_G = 0 V.",
    )
    docs["fig2c"] = _doc(
        pair_protocol(params, 0.0, 0.006, spike()),
        "Paired 405 nm spikes 6 ms apart (start to start); the ppf harness sweeps the interval.",
        {"v_g": 0.0}, [(("default_v_g",), "v_g")],
    )
    docs["fig2d"] = _doc(
        train_protocol(params, 0.0, 10, SPIKE_DURATION, 0.010, SPIKE_POWER),
        "Ten 405 nm spikes (50 uW, 5 ms on / 10 ms off) at gate v_g (V).",
        {"v_g": 0.0}, [(("default_v_g",), "v_g")],
    )
    docs["fig3a"] = _doc(
        ltp_protocol(params, -20.0),
        "One 405 nm pulse (50 uW, 100 ms) at negative gate v_g (V), observed for 10 s.",
        {"v_g": -20.0}, [(("default_v_g",), "v_g")],
    )
    docs["fig3c"] = _doc(
        ltp_protocol(params, -30.0, n_pulses=5),
        "Five 405 nm pulses (50 uW, 100 ms, 3 s apart) at gate v_g (V), observed for 10 s.",
        {"v_g": -30.0}, [(("default_v_g",), "v_g")],
    )
    pulse_end = T_PRE + LTP_DURATION
    reset = GateSegment(40.0, pulse_end + 2.0, 0.1)
    docs["fig3d"] = _doc(
        ltp_protocol(params, -20.0, observe_s=2.0, reset=reset),
        "LTP pulse at -20 V, then a 100 ms gate reset pulse to v_reset (V) 2 s later.",
        {"v_reset": 40.0}, [(("gate_segments", 0, "v_g"), "v_reset")],
    )
    docs["fig4b"] = _doc(
        summation_protocol(params, 0.0, 0.0, 1.0e-6, 1.0e-6),
        "Coincident 20 ms spikes on 405 nm (p1_w, W) and 532 nm (p2_w, W) at V_G = 0 V.",
        {"p1_w": None, "p2_w": None},
        [(("pulses", 0, "power_w"), "p1_w"), (("pulses", 1, "power_w"), "p2_w")],
    )
    docs["fig4c"] = _doc(
        _logic_protocol(params, "and", 5.0),
        "AND input 11: two 405 nm inputs (10 uW, 1 s each) at gate v_g (V), nominally V_cross.",
        {"v_g": 5.0}, [(("default_v_g",), "v_g")],
    )
    docs["fig4d"] = _doc(
        _logic_protocol(params, "or", LOGIC_CONFIG["or"]["v_g"]),
        "OR input 11: two 405 nm inputs (50 uW, 1 s each) at V_G = 20 V.",
    )
    return docs


def render(doc: dict) -> str:
    return json.dumps(doc, indent=2) + "\n"


def write_corpus(params: DeviceParams, out_dir=None) -> list[Path]:
    out_dir = corpus_dir() if out_dir is None else Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, doc in build_corpus(params).items():
        path = out_dir / f"{name}.json"
        path.write_text(render(doc))
        paths.append(path)
    return paths
