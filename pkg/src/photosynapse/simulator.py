"""Deterministic fixed-step integration of a device under a stimulus protocol."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .device import (
    DeviceParams,
    DeviceState,
    current_from_densities,
    steady_state,
)
from .stimulus import StimulusProtocol

DEFAULT_DT = 1e-4
# dt * (fastest local rate) above this is rejected; RK4 is stable to ~2.78
STIFFNESS_LIMIT = 0.5
_ALIGN_TOL = 1e-6


class SimulationError(RuntimeError):
    pass


class StepTooLarge(SimulationError, ValueError):
    pass


class NonFinite(SimulationError):
    pass


@dataclass
class CurrentTrace:
    dt: float
    t: np.ndarray
    current: np.ndarray
    v_g: np.ndarray
    power: dict
    states: np.ndarray
    events: list = field(default_factory=list)
    protocol_digest: str = ""

    def __len__(self):
        return len(self.t)

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    def index_at(self, t: float) -> int:
        """Index of the sample at time ``t`` (nearest grid point)."""
        return int(min(max(round(t / self.dt), 0), len(self.t) - 1))

    def window(self, t0: float, t1: float) -> tuple[int, int]:
        """Half-open sample index range covering ``[t0, t1)``."""
        return self.index_at(t0), self.index_at(t1)

    def value_at(self, t: float) -> float:
        return float(self.current[self.index_at(t)])

    def to_csv(self, path) -> None:
        channels = sorted(self.power)
        header = ["t_s", "i_a", "v_g"] + [f"power_{ch}_w" for ch in channels]
        cols = [self.t, self.current, self.v_g] + [self.power[ch] for ch in channels]
        lines = [",".join(header)]
        for row in zip(*cols):
            lines.append(",".join(_fmt(x) for x in row))
        Path(path).write_text("\n".join(lines) + "\n")

    def events_to_csv(self, path) -> None:
        lines = ["t_s,label"] + [f"{_fmt(t)},{label}" for t, label in self.events]
        Path(path).write_text("\n".join(lines) + "\n")


def _fmt(x) -> str:
    return repr(float(x))


def _trace_digest(params: DeviceParams, protocol: StimulusProtocol, dt: float) -> str:
    h = hashlib.sha256()
    h.update(protocol.digest().encode())
    h.update(params.digest().encode())
    h.update(repr(float(dt)).encode())
    return h.hexdigest()


def check_step(params: DeviceParams, protocol: StimulusProtocol, dt: float) -> None:
    if not (dt > 0 and math.isfinite(dt)):
        raise StepTooLarge(f"dt must be a positive finite number, got {dt!r}")
    if dt > params.tau_fast / 10 * (1 + 1e-9):
        raise StepTooLarge(
            f"dt={dt:g} s exceeds tau_fast/10 = {params.tau_fast / 10:g} s"
        )
    shortest = protocol.shortest_pulse()
    if shortest is not None and dt > shortest / 5 * (1 + 1e-9):
        raise StepTooLarge(
            f"dt={dt:g} s exceeds shortest pulse duration/5 = {shortest / 5:g} s"
        )


def build_steps(protocol: StimulusProtocol, dt: float):
    """Integration nodes: the uniform sample grid plus any unaligned breakpoint.

    Returns ``(t_grid, a, b, record)`` where step ``k`` spans ``[a[k], b[k]]``
    and ``record[k]`` is True when ``b[k]`` is a sample point.
    """
    n = max(1, int(math.ceil(protocol.t_end / dt - 1e-9)))
    t_grid = np.arange(n + 1) * dt
    extra = []
    for bp in protocol.breakpoints():
        if not 0.0 < bp < t_grid[-1]:
            continue
        k = bp / dt
        if abs(k - round(k)) > _ALIGN_TOL:
            extra.append(bp)
    if extra:
        nodes = np.concatenate([t_grid, np.asarray(extra)])
        is_grid = np.concatenate([np.ones(n + 1, bool), np.zeros(len(extra), bool)])
        order = np.argsort(nodes, kind="stable")
        nodes, is_grid = nodes[order], is_grid[order]
    else:
        nodes, is_grid = t_grid, np.ones(n + 1, bool)
    return t_grid, nodes[:-1], nodes[1:], is_grid[1:]


def step_inputs(params: DeviceParams, protocol: StimulusProtocol, a, b):
    """Per-step generation rate, capture coefficient and release time."""
    mid = 0.5 * (a + b)
    gen = np.zeros_like(mid)
    for ch in protocol.channels:
        if any(p.channel_nm == ch for p in protocol.pulses):
            gen = gen + params.eta_for(ch) * protocol.power_array(ch, mid)
    v_g = protocol.gate_array(mid)
    cap = params.c_trap0 * np.maximum(0.0, -v_g / params.v_trap_ref)
    trel = np.where(v_g > params.v_reset_threshold, params.tau_trap_reset, params.tau_trap_hold)
    return gen, cap, trel


def stiffness(params: DeviceParams, h, gen, cap, trel) -> float:
    rate = (
        gen / params.n_sat
        + 1.0 / params.tau_fast
        + cap * params.n_sat / params.n_traps_total
        + 1.0 / trel
    )
    return float(np.max(h * rate)) if len(h) else 0.0


def run_kernel(params, y0, h, seg, gen, cap, trel, record, backend=None):
    return kernels.rk4(
        y0, h, seg, gen, cap, trel, record,
        params.alpha_fast, params.alpha_slow, params.tau_fast, params.tau_slow,
        params.n_sat, params.n_traps_total, backend=backend,
    )


def integrate(
    params: DeviceParams,
    protocol: StimulusProtocol,
    dt: float = DEFAULT_DT,
    backend: str | None = None,
    initial: DeviceState | None = None,
) -> CurrentTrace:
    """Integrate the device ODE with classical RK4 on a uniform grid.

    Steps are split at any breakpoint that falls between grid points so
    inputs are constant within each step. The starting point is the dark
    equilibrium at ``protocol.default_v_g`` unless ``initial`` is given.
    """
    params = params.with_(v_ds=protocol.v_ds)
    check_step(params, protocol, dt)
    t_grid, a, b, record = build_steps(protocol, dt)
    h = b - a
    gen, cap, trel = step_inputs(params, protocol, a, b)
    stiff = stiffness(params, h, gen, cap, trel)
    if stiff > STIFFNESS_LIMIT:
        raise StepTooLarge(
            f"dt={dt:g} s is too large for the fastest local rate "
            f"(dt*rate = {stiff:.3g} > {STIFFNESS_LIMIT}); reduce dt"
        )
    if initial is None:
        initial = steady_state(params, protocol.default_v_g, {})
    y0 = initial.as_array()[None, :]
    seg = np.arange(len(h))
    states = run_kernel(params, y0, h, seg, gen[:, None], cap, trel, record, backend)[:, 0, :]
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise NonFinite(
            f"state left the finite range at t={t_grid[bad]:g} s; check the parameter set"
        )
    v_g = protocol.gate_array(t_grid)
    current = current_from_densities(states[:, 0], states[:, 1], states[:, 2], v_g, params)
    power = {ch: protocol.power_array(ch, t_grid) for ch in protocol.channels}
    return CurrentTrace(
        dt=dt,
        t=t_grid,
        current=current,
        v_g=v_g,
        power=power,
        states=states,
        events=protocol.events(),
        protocol_digest=_trace_digest(params, protocol, dt),
    )
