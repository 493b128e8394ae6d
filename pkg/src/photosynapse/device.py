"""Compact model of the graphene/nanotube synaptic phototransistor.

The channel is an ambipolar graphene sheet whose net carrier density is set
by the back gate plus two photo-carrier pools (fast and slow recovery) and a
pool of trapped charge at the oxide surface. All densities are sheet
densities in m^-2; voltages in V; powers in W; times in s.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.optimize import brentq

ELEMENTARY_CHARGE = 1.602176634e-19
CHANNELS = (405, 532)


class NoCrossing(ValueError):
    """Dark and illuminated transfer curves do not cross inside the bracket."""


class ParamsError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceParams:
    c_ox_over_e: float
    v_dirac0: float
    mu_e: float
    mu_h: float
    n_residual: float
    n_clamp: float
    eta: Mapping[int, float]
    alpha_fast: float
    alpha_slow: float
    tau_fast: float
    tau_slow: float
    n_sat: float
    n_traps_total: float
    c_trap0: float
    v_trap_ref: float
    tau_trap_hold: float
    tau_trap_reset: float
    v_reset_threshold: float
    width: float
    length: float
    v_ds: float

    def __post_init__(self):
        object.__setattr__(self, "eta", {int(k): float(v) for k, v in dict(self.eta).items()})
        self.validate()

    def validate(self):
        positive = (
            "c_ox_over_e", "mu_e", "mu_h", "n_residual", "n_clamp", "tau_fast",
            "tau_slow", "n_sat", "n_traps_total", "v_trap_ref", "tau_trap_hold",
            "tau_trap_reset", "width", "length",
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ParamsError(f"{name} must be finite and > 0, got {value!r}")
        for name in ("v_dirac0", "v_reset_threshold", "v_ds"):
            if not math.isfinite(getattr(self, name)):
                raise ParamsError(f"{name} must be finite")
        if self.c_trap0 < 0 or not math.isfinite(self.c_trap0):
            raise ParamsError(f"c_trap0 must be >= 0, got {self.c_trap0!r}")
        if not (0.0 <= self.alpha_fast <= 1.0 and 0.0 <= self.alpha_slow <= 1.0):
            raise ParamsError("alpha_fast and alpha_slow must lie in [0, 1]")
        if abs(self.alpha_fast + self.alpha_slow - 1.0) > 1e-12:
            raise ParamsError(
                f"alpha_fast + alpha_slow must equal 1, got {self.alpha_fast + self.alpha_slow!r}"
            )
        if not self.tau_fast < self.tau_slow:
            raise ParamsError("tau_fast must be smaller than tau_slow")
        if self.tau_trap_hold < 100 * self.tau_slow:
            raise ParamsError("tau_trap_hold must be at least 100 * tau_slow")
        for ch, value in self.eta.items():
            if not (math.isfinite(value) and value >= 0):
                raise ParamsError(f"eta[{ch}] must be >= 0, got {value!r}")

    # -- convenience -----------------------------------------------------

    def eta_for(self, channel_nm: int) -> float:
        try:
            return self.eta[int(channel_nm)]
        except KeyError:
            raise ParamsError(f"no generation coefficient for channel {channel_nm} nm") from None

    def volts(self, density):
        """Express a sheet density as the equivalent gate voltage."""
        return density / self.c_ox_over_e

    def with_(self, **changes) -> "DeviceParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eta"] = {str(k): v for k, v in sorted(self.eta.items())}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DeviceParams":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ParamsError(f"unknown parameter field(s): {sorted(unknown)}")
        missing = names - set(d)
        if missing:
            raise ParamsError(f"missing parameter field(s): {sorted(missing)}")
        kwargs = {k: (d[k] if k == "eta" else float(d[k])) for k in names}
        return cls(**kwargs)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_params(path) -> DeviceParams:
    """Read a parameter file. Calibrated files nest the values under ``params``."""
    with open(path) as fh:
        doc = json.load(fh)
    if "params" in doc and isinstance(doc["params"], dict):
        doc = doc["params"]
    return DeviceParams.from_dict(doc)


def save_params(params: DeviceParams, path, **meta) -> None:
    doc = dict(meta)
    doc["params"] = params.to_dict()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def default_params_path() -> Path:
    return Path(__file__).parent / "data" / "params" / "default.json"


def default_params() -> DeviceParams:
    return load_params(default_params_path())


@dataclass(frozen=True)
class DeviceState:
    n_fast: float = 0.0
    n_slow: float = 0.0
    n_trap: float = 0.0
    t: float = 0.0

    @property
    def n_photo(self) -> float:
        return self.n_fast + self.n_slow

    def as_array(self) -> np.ndarray:
        return np.array([self.n_fast, self.n_slow, self.n_trap])


DARK = DeviceState()

# illumination: {channel_nm: power_W}
Illumination = Mapping[int, float]


def generation_rate(light: Illumination, params: DeviceParams) -> float:
    """Total photocarrier generation rate, m^-2 s^-1. Channels add linearly."""
    total = 0.0
    for ch, power in sorted(light.items()):
        if power < 0:
            raise ValueError(f"negative power {power!r} on channel {ch} nm")
        total += params.eta_for(ch) * power
    return total


def carrier_densities(n_net, n_residual):
    """Split a signed net density into electron and hole densities.

    Both branches stay positive and ``n_e * n_h == n_residual**2 / 4``
    holds everywhere, so the Dirac point keeps a finite puddle floor.
    """
    # minority branch from the product rule; (root - |n|)/2 cancels badly
    root = np.hypot(n_residual, n_net)
    major = (root + np.abs(n_net)) / 2
    minor = (n_residual * n_residual / 4) / major
    pos = np.asarray(n_net) >= 0
    n_e = np.where(pos, major, minor)
    n_h = np.where(pos, minor, major)
    return n_e[()], n_h[()]


def effective_net_density(n_fast, n_slow, n_trap, v_g, params: DeviceParams):
    n_raw = params.c_ox_over_e * (v_g - params.v_dirac0) + (n_fast + n_slow) + n_trap
    return params.n_clamp * np.tanh(n_raw / params.n_clamp)


def channel_current(state: DeviceState, v_g, params: DeviceParams):
    return current_from_densities(state.n_fast, state.n_slow, state.n_trap, v_g, params)


def current_from_densities(n_fast, n_slow, n_trap, v_g, params: DeviceParams):
    n_net = effective_net_density(n_fast, n_slow, n_trap, v_g, params)
    n_e, n_h = carrier_densities(n_net, params.n_residual)
    sheet = ELEMENTARY_CHARGE * (params.mu_e * n_e + params.mu_h * n_h)
    return (params.width / params.length) * sheet * params.v_ds


def trap_capture_rate(v_g: float, params: DeviceParams) -> float:
    """Capture coefficient, s^-1; nonzero only under a negative gate."""
    return params.c_trap0 * max(0.0, -v_g / params.v_trap_ref)


def trap_release_time(v_g: float, params: DeviceParams) -> float:
    return params.tau_trap_reset if v_g > params.v_reset_threshold else params.tau_trap_hold


def state_derivative(state: DeviceState, v_g: float, light: Illumination, params: DeviceParams):
    """Return ``(dn_fast/dt, dn_slow/dt, dn_trap/dt)`` in m^-2 s^-1."""
    g = generation_rate(light, params)
    n_photo = state.n_fast + state.n_slow
    s = max(0.0, 1.0 - n_photo / params.n_sat)
    gs = g * s
    d_fast = params.alpha_fast * gs - state.n_fast / params.tau_fast
    d_slow = params.alpha_slow * gs - state.n_slow / params.tau_slow
    d_trap = (
        trap_capture_rate(v_g, params) * n_photo * (1.0 - state.n_trap / params.n_traps_total)
        - state.n_trap / trap_release_time(v_g, params)
    )
    return d_fast, d_slow, d_trap


def steady_photo_pools(g: float, params: DeviceParams) -> tuple[float, float]:
    """Fixed point of the two pool equations under constant generation ``g``.

    With ``tau_eff = alpha_fast*tau_fast + alpha_slow*tau_slow`` the total
    obeys ``n = g*tau_eff*(1 - n/n_sat)``, which is linear in ``n``.
    """
    tau_eff = params.alpha_fast * params.tau_fast + params.alpha_slow * params.tau_slow
    s = 1.0 / (1.0 + g * tau_eff / params.n_sat)
    return params.alpha_fast * g * s * params.tau_fast, params.alpha_slow * g * s * params.tau_slow


def steady_trap(n_photo: float, v_g: float, params: DeviceParams) -> float:
    # capture*(1 - x/N) = x/tau is linear in x
    cap = trap_capture_rate(v_g, params) * n_photo
    if cap == 0.0:
        return 0.0
    return cap / (cap / params.n_traps_total + 1.0 / trap_release_time(v_g, params))


def steady_state(params: DeviceParams, v_g: float, light: Illumination) -> DeviceState:
    g = generation_rate(light, params)
    n_fast, n_slow = steady_photo_pools(g, params)
    n_trap = steady_trap(n_fast + n_slow, v_g, params)
    return DeviceState(n_fast, n_slow, n_trap)


def v_cross(params: DeviceParams, light: Illumination, bracket=(-50.0, 50.0), xtol=1e-9) -> float:
    """Gate voltage where the steady illuminated current equals the dark current.

    Trapped charge is held at its dark value (zero): a transfer sweep is fast
    compared with the trap hold time, so only the photo pools shift the curve.
    """
    g = generation_rate(light, params)
    n_fast, n_slow = steady_photo_pools(g, params)

    def diff(v):
        lit = current_from_densities(n_fast, n_slow, 0.0, v, params)
        dark = current_from_densities(0.0, 0.0, 0.0, v, params)
        return float(lit - dark)

    lo, hi = map(float, bracket)
    f_lo, f_hi = diff(lo), diff(hi)
    if not (f_lo < 0 < f_hi or f_hi < 0 < f_lo):
        raise NoCrossing(
            f"illuminated and dark currents do not cross in [{lo}, {hi}] V "
            f"(differences {f_lo:.3e} A, {f_hi:.3e} A)"
        )
    return float(brentq(diff, lo, hi, xtol=xtol))
