"""Stimulus protocols: light pulses per wavelength channel plus a stepped gate.

All intervals are half-open, ``[t_start, t_start + duration)``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .device import CHANNELS


class ProtocolError(ValueError):
    pass


class SchemaError(ProtocolError):
    """Unknown or missing field in a protocol document."""


class ValidationError(ProtocolError):
    """Well-formed document whose values break a protocol invariant."""


class UnknownChannel(KeyError):
    pass


@dataclass(frozen=True)
class LightPulse:
    channel_nm: int
    power_w: float
    t_start: float
    duration: float

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration


@dataclass(frozen=True)
class GateSegment:
    v_g: float
    t_start: float
    duration: float

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration


@dataclass(frozen=True)
class StimulusProtocol:
    pulses: tuple[LightPulse, ...] = ()
    gate: tuple[GateSegment, ...] = ()
    default_v_g: float = 0.0
    v_ds: float = 0.5
    t_end: float = 1.0
    settle_time: float = 0.0
    channels: tuple[int, ...] = CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        object.__setattr__(
            self, "gate", tuple(sorted(self.gate, key=lambda s: s.t_start))
        )
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        _validate(self)

    # -- queries ---------------------------------------------------------

    def power_at(self, channel_nm: int, t: float) -> float:
        if int(channel_nm) not in self.channels:
            raise UnknownChannel(f"channel {channel_nm} nm is not declared")
        total = 0.0
        for p in self.pulses:
            if p.channel_nm == channel_nm and p.t_start <= t < p.t_end:
                total += p.power_w
        return total

    def gate_at(self, t: float) -> float:
        for seg in self.gate:
            if seg.t_start <= t < seg.t_end:
                return seg.v_g
        return self.default_v_g

    def illumination_at(self, t: float) -> dict[int, float]:
        return {ch: self.power_at(ch, t) for ch in self.channels}

    def power_array(self, channel_nm: int, t: np.ndarray) -> np.ndarray:
        if int(channel_nm) not in self.channels:
            raise UnknownChannel(f"channel {channel_nm} nm is not declared")
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for p in self.pulses:
            if p.channel_nm == channel_nm:
                out += np.where((t >= p.t_start) & (t < p.t_end), p.power_w, 0.0)
        return out

    def gate_array(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, self.default_v_g)
        for seg in self.gate:
            out = np.where((t >= seg.t_start) & (t < seg.t_end), seg.v_g, out)
        return out

    def breakpoints(self) -> list[float]:
        """Sorted distinct times where any input may change value."""
        pts = set()
        for p in self.pulses:
            pts.update((p.t_start, p.t_end))
        for s in self.gate:
            pts.update((s.t_start, s.t_end))
        return sorted(pts)

    def events(self) -> list[tuple[float, str]]:
        ev = []
        for p in self.pulses:
            ev.append((p.t_start, f"pulse_on {p.channel_nm}nm {p.power_w:g}W"))
            ev.append((p.t_end, f"pulse_off {p.channel_nm}nm"))
        for s in self.gate:
            ev.append((s.t_start, f"gate {s.v_g:g}V"))
            ev.append((s.t_end, f"gate {self.default_v_g:g}V"))
        return sorted(ev)

    def shortest_pulse(self) -> float | None:
        if not self.pulses:
            return None
        return min(p.duration for p in self.pulses)

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "pulses": [
                {"channel_nm": p.channel_nm, "power_w": p.power_w, "t_start": p.t_start,
                 "duration": p.duration}
                for p in self.pulses
            ],
            "gate_segments": [
                {"v_g": s.v_g, "t_start": s.t_start, "duration": s.duration} for s in self.gate
            ],
            "default_v_g": self.default_v_g,
            "v_ds": self.v_ds,
            "t_end": self.t_end,
            "settle_time": self.settle_time,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _validate(p: StimulusProtocol) -> None:
    if not p.t_end > 0:
        raise ValidationError(f"t_end: must be > 0, got {p.t_end!r}")
    if p.settle_time < 0:
        raise ValidationError(f"settle_time: must be >= 0, got {p.settle_time!r}")
    for i, pulse in enumerate(p.pulses):
        where = f"pulses[{i}] [{pulse.t_start:g}, {pulse.t_end:g}) s"
        if pulse.channel_nm not in p.channels:
            raise ValidationError(f"{where}: channel_nm {pulse.channel_nm} is not declared")
        if not pulse.power_w >= 0:
            raise ValidationError(f"{where}: power_w must be >= 0, got {pulse.power_w!r}")
        if not pulse.duration > 0:
            raise ValidationError(f"{where}: duration must be > 0, got {pulse.duration!r}")
        if pulse.t_start < 0 or pulse.t_end > p.t_end * (1 + 1e-12):
            raise ValidationError(f"{where}: window must lie inside [0, t_end={p.t_end:g}]")
    prev = None
    for i, seg in enumerate(p.gate):
        where = f"gate_segments [{seg.t_start:g}, {seg.t_end:g}) s"
        if not seg.duration > 0:
            raise ValidationError(f"{where}: duration must be > 0, got {seg.duration!r}")
        if seg.t_start < 0 or seg.t_end > p.t_end * (1 + 1e-12):
            raise ValidationError(f"{where}: window must lie inside [0, t_end={p.t_end:g}]")
        if prev is not None and seg.t_start < prev.t_end:
            raise ValidationError(
                f"{where}: overlaps segment [{prev.t_start:g}, {prev.t_end:g}) s"
            )
        prev = seg


_TOP_REQUIRED = {"channels", "pulses", "gate_segments", "default_v_g", "v_ds", "t_end"}
_TOP_OPTIONAL = {"settle_time", "description"}
_PULSE_KEYS = {"channel_nm", "power_w", "t_start", "duration"}
_SEGMENT_KEYS = {"v_g", "t_start", "duration"}


def _check_keys(obj, required, optional, where):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = set(obj) - required - optional
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{where}: missing required field(s) {sorted(missing)}")


def _number(obj, key, where):
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}.{key}: expected a number, got {value!r}")
    return float(value)


def protocol_from_dict(doc: dict) -> StimulusProtocol:
    _check_keys(doc, _TOP_REQUIRED, _TOP_OPTIONAL, "protocol")
    channels = doc["channels"]
    if not isinstance(channels, list) or not all(
        isinstance(c, int) and not isinstance(c, bool) for c in channels
    ):
        raise SchemaError("protocol.channels: expected a list of integer wavelengths (nm)")
    pulses = []
    if not isinstance(doc["pulses"], list):
        raise SchemaError("protocol.pulses: expected a list")
    for i, raw in enumerate(doc["pulses"]):
        where = f"pulses[{i}]"
        _check_keys(raw, _PULSE_KEYS, set(), where)
        ch = raw["channel_nm"]
        if isinstance(ch, bool) or not isinstance(ch, int):
            raise SchemaError(f"{where}.channel_nm: expected an integer, got {ch!r}")
        pulses.append(LightPulse(ch, _number(raw, "power_w", where),
                                 _number(raw, "t_start", where), _number(raw, "duration", where)))
    segments = []
    if not isinstance(doc["gate_segments"], list):
        raise SchemaError("protocol.gate_segments: expected a list")
    for i, raw in enumerate(doc["gate_segments"]):
        where = f"gate_segments[{i}]"
        _check_keys(raw, _SEGMENT_KEYS, set(), where)
        segments.append(GateSegment(_number(raw, "v_g", where), _number(raw, "t_start", where),
                                    _number(raw, "duration", where)))
    return StimulusProtocol(
        pulses=pulses,
        gate=segments,
        default_v_g=_number(doc, "default_v_g", "protocol"),
        v_ds=_number(doc, "v_ds", "protocol"),
        t_end=_number(doc, "t_end", "protocol"),
        settle_time=_number(doc, "settle_time", "protocol") if "settle_time" in doc else 0.0,
        channels=channels,
    )


def resolve_parameters(doc: dict, overrides: dict | None = None) -> dict:
    """Substitute ``"$name"`` placeholders from the document's ``parameters``.

    ``parameters`` maps names to defaults; ``null`` marks a value the caller
    must supply through ``overrides``.
    """
    overrides = dict(overrides or {})
    declared = doc.get("parameters", {}) if isinstance(doc, dict) else {}
    if not isinstance(declared, dict):
        raise SchemaError("protocol.parameters: expected an object")
    unknown = set(overrides) - set(declared)
    if unknown:
        raise SchemaError(f"protocol.parameters: unknown override(s) {sorted(unknown)}")
    values = {**declared, **overrides}

    def sub(node, where):
        if isinstance(node, dict):
            return {k: sub(v, f"{where}.{k}") for k, v in node.items()}
        if isinstance(node, list):
            return [sub(v, f"{where}[{i}]") for i, v in enumerate(node)]
        if isinstance(node, str) and node.startswith("$"):
            name = node[1:]
            if name not in values:
                raise SchemaError(f"{where}: undeclared parameter {node!r}")
            if values[name] is None:
                raise SchemaError(f"{where}: parameter {name!r} has no default; supply a value")
            return values[name]
        return node

    body = {k: v for k, v in doc.items() if k != "parameters"}
    return sub(body, "protocol")


def parse_protocol(text: str, overrides: dict | None = None) -> StimulusProtocol:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"protocol is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("protocol: expected a JSON object")
    return protocol_from_dict(resolve_parameters(doc, overrides))


def serialize_protocol(protocol: StimulusProtocol) -> str:
    return protocol.to_json()


def load_protocol(path, overrides: dict | None = None) -> StimulusProtocol:
    return parse_protocol(Path(path).read_text(), overrides)


def pulse_train(channel_nm, power_w, duration, period, n, t0=0.0):
    return [LightPulse(channel_nm, power_w, t0 + k * period, duration) for k in range(n)]
