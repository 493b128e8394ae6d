import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photosynapse.stimulus import (
    GateSegment,
    LightPulse,
    SchemaError,
    StimulusProtocol,
    UnknownChannel,
    ValidationError,
    load_protocol,
    parse_protocol,
    pulse_train,
    serialize_protocol,
)

PPF_DOC = {
    "channels": [405],
    "pulses": [
        {"channel_nm": 405, "power_w": 50e-6, "t_start": 0.01, "duration": 0.005},
        {"channel_nm": 405, "power_w": 50e-6, "t_start": 0.065, "duration": 0.005},
    ],
    "gate_segments": [],
    "default_v_g": 0.0,
    "v_ds": 0.5,
    "t_end": 0.3,
}


def test_ppf_pair_document():
    p = parse_protocol(json.dumps(PPF_DOC))
    assert len(p.pulses) == 2
    assert p.pulses[1].t_start - p.pulses[0].t_start == pytest.approx(0.055)
    assert p.settle_time == 0.0


def test_half_open_pulse_windows():
    p = parse_protocol(json.dumps(PPF_DOC))
    assert p.power_at(405, 0.01) == 50e-6
    assert p.power_at(405, 0.015) == 0.0
    assert p.power_at(405, 0.0149999) == 50e-6
    assert p.power_at(405, 0.0) == 0.0


def test_overlapping_pulses_add():
    p = StimulusProtocol(pulses=[LightPulse(405, 1e-6, 0.0, 0.1), LightPulse(405, 2e-6, 0.05, 0.1)],
                         t_end=0.2)
    assert p.power_at(405, 0.07) == pytest.approx(3e-6)
    t = np.array([0.01, 0.07, 0.12, 0.19])
    assert np.allclose(p.power_array(405, t), [1e-6, 3e-6, 2e-6, 0.0])


def test_gate_segments():
    p = StimulusProtocol(gate=[GateSegment(40.0, 1.0, 0.1)], default_v_g=-20.0, t_end=2.0)
    assert p.gate_at(1.05) == 40.0
    assert p.gate_at(0.5) == -20.0
    assert p.gate_at(1.0) == 40.0
    assert p.gate_at(1.1) == -20.0
    assert np.array_equal(p.gate_array(np.array([0.5, 1.0, 1.1])), [-20.0, 40.0, -20.0])


def test_abutting_segments_boundary_goes_to_later():
    p = StimulusProtocol(gate=[GateSegment(1.0, 0.0, 0.5), GateSegment(2.0, 0.5, 0.5)], t_end=1.0)
    assert p.gate_at(0.5) == 2.0


def test_segments_sorted():
    p = StimulusProtocol(gate=[GateSegment(2.0, 0.5, 0.1), GateSegment(1.0, 0.1, 0.1)], t_end=1.0)
    assert [s.t_start for s in p.gate] == [0.1, 0.5]


@pytest.mark.parametrize("kwargs, match", [
    ({"pulses": [LightPulse(405, -1.0, 0.0, 0.1)]}, "power_w"),
    ({"pulses": [LightPulse(405, 1.0, 0.0, 0.0)]}, "duration"),
    ({"pulses": [LightPulse(405, 1.0, 0.95, 0.1)]}, "inside"),
    ({"pulses": [LightPulse(633, 1.0, 0.0, 0.1)]}, "not declared"),
    ({"gate": [GateSegment(1.0, 0.1, 0.2), GateSegment(2.0, 0.2, 0.2)]}, "overlaps"),
    ({"t_end": 0.0}, "t_end"),
])
def test_validation_errors(kwargs, match):
    with pytest.raises(ValidationError, match=match):
        StimulusProtocol(**{"t_end": 1.0, **kwargs})


def test_unknown_channel_query():
    with pytest.raises(UnknownChannel):
        StimulusProtocol(t_end=1.0).power_at(633, 0.1)


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.update(bogus=1), "unknown"),
    (lambda d: d.pop("t_end"), "missing"),
    (lambda d: d["pulses"][0].update(colour="blue"), "unknown"),
    (lambda d: d["pulses"][0].update(power_w="lots"), "power_w"),
    (lambda d: d.update(channels=[405.5]), "channels"),
])
def test_schema_errors(mutate, match):
    doc = json.loads(json.dumps(PPF_DOC))
    mutate(doc)
    with pytest.raises(SchemaError, match=match):
        parse_protocol(json.dumps(doc))


def test_invalid_json():
    with pytest.raises(SchemaError):
        parse_protocol("{not json")


def test_placeholders():
    doc = {**PPF_DOC, "parameters": {"p": None, "v": 5.0}, "default_v_g": "$v"}
    doc["pulses"] = [{**PPF_DOC["pulses"][0], "power_w": "$p"}]
    text = json.dumps(doc)
    with pytest.raises(SchemaError, match="no default"):
        parse_protocol(text)
    p = parse_protocol(text, {"p": 1e-6})
    assert p.pulses[0].power_w == 1e-6 and p.default_v_g == 5.0
    assert parse_protocol(text, {"p": 1e-6, "v": -3.0}).default_v_g == -3.0
    with pytest.raises(SchemaError, match="unknown override"):
        parse_protocol(text, {"p": 1e-6, "q": 1})


def test_breakpoints_and_events():
    p = parse_protocol(json.dumps(PPF_DOC))
    assert p.breakpoints() == [0.01, 0.015, 0.065, 0.07]
    labels = [e[1] for e in p.events()]
    assert labels[0].startswith("pulse_on 405nm")
    assert p.shortest_pulse() == 0.005


def test_pulse_train():
    train = pulse_train(405, 1e-6, 0.005, 0.015, 3, 0.01)
    assert [round(p.t_start, 6) for p in train] == [0.01, 0.025, 0.04]


def test_load_protocol(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps(PPF_DOC))
    assert len(load_protocol(path).pulses) == 2


pulses = st.builds(
    LightPulse,
    channel_nm=st.sampled_from([405, 532]),
    power_w=st.floats(0, 1e-3),
    t_start=st.floats(0, 0.5),
    duration=st.floats(1e-4, 0.4),
)


@settings(max_examples=100)
@given(st.lists(pulses, max_size=6), st.floats(-50, 50), st.floats(-1, 1))
def test_serialization_round_trip(ps, v_g, v_ds):
    proto = StimulusProtocol(pulses=ps, default_v_g=v_g, v_ds=v_ds, t_end=1.0,
                             gate=[GateSegment(40.0, 0.9, 0.05)])
    again = parse_protocol(serialize_protocol(proto))
    assert again == proto
    assert again.digest() == proto.digest()
