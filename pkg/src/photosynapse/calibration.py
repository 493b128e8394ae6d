"""Fit device parameters to measured targets with a bounded Nelder-Mead search.

Strictly positive parameters are searched in log space; every free field is
mapped onto [0, 1] so a single box constraint covers all of them. Targets
are normalised by their tolerance, so the objective reads as a sum of
squared "tolerance units".
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .device import DeviceParams, ParamsError, save_params, v_cross
from .metrics import MetricsError
from .simulator import DEFAULT_DT, SimulationError
from . import experiments as ex

PENALTY = 1e6


class CalibrationError(ValueError):
    pass


class InfeasibleBounds(CalibrationError):
    pass


class BudgetExhausted(RuntimeError):
    """Raised only on request; carries the best-so-far result."""

    def __init__(self, result):
        super().__init__(f"evaluation budget exhausted after {result.n_evals} evaluations")
        self.result = result


@dataclass(frozen=True)
class CalibrationTarget:
    name: str
    predicted_by: str
    target_value: float
    weight: float = 1.0
    tolerance: float = 1.0
    kind: str = "equal"  # equal | min | max

    def __post_init__(self):
        if not self.tolerance > 0:
            raise CalibrationError(f"target {self.name}: tolerance must be > 0")
        if self.kind not in ("equal", "min", "max"):
            raise CalibrationError(f"target {self.name}: unknown kind {self.kind!r}")

    def residual(self, predicted: float) -> float:
        """Signed miss in tolerance units; zero inside a one-sided bound."""
        if not math.isfinite(predicted):
            return math.inf
        gap = predicted - self.target_value
        if self.kind == "min":
            gap = min(gap, 0.0)
        elif self.kind == "max":
            gap = max(gap, 0.0)
        return gap / self.tolerance

    def satisfied(self, predicted: float) -> bool:
        r = self.residual(predicted)
        if self.kind == "equal":
            return abs(r) <= 1.0
        return r == 0.0


# -- predictors ---------------------------------------------------------------

def _ppf_6ms(p, dt):
    return ex.run_ppf_sweep(p, 0.0, (0.006,), dt=dt).rows[0][1]


def _v_cross(p, dt):
    return v_cross(p, {405: 10e-6})


def _weight_at(v_g):
    def f(p, dt):
        return ex.run_gate_sweep(p, [v_g], dt=dt).rows[0][2]
    return f


def _ltp_retention(p, dt):
    return ex.run_ltp(p, -20.0, dt=dt).meta["retention"]


def _ltp_residual(p, dt):
    return abs(ex.run_ltp(p, 0.0, dt=dt).meta["weight_end"])


PREDICTORS: dict[str, Callable[[DeviceParams, float], float]] = {
    "ppf_index@0V,6ms": _ppf_6ms,
    "v_cross@405nm,10uW": _v_cross,
    "weight@0V,50uW,5ms": _weight_at(0.0),
    "weight@20V,50uW,5ms": _weight_at(20.0),
    "ltp_retention@-20V": _ltp_retention,
    "ltp_residual@0V": _ltp_residual,
}

MEASURED_TARGETS = (
    CalibrationTarget("ppf_max", "ppf_index@0V,6ms", 155.0, 1.0, 10.0),
    CalibrationTarget("v_cross", "v_cross@405nm,10uW", 5.0, 1.0, 2.0),
    CalibrationTarget("ipsc_sign", "weight@0V,50uW,5ms", -0.01, 1.0, 0.01, "max"),
    CalibrationTarget("epsc_sign", "weight@20V,50uW,5ms", 0.01, 1.0, 0.01, "min"),
    CalibrationTarget("ltp_retention", "ltp_retention@-20V", 0.9, 1.0, 0.05, "min"),
    CalibrationTarget("ltp_residual", "ltp_residual@0V", 0.02, 1.0, 0.01, "max"),
)

# Starting point for the search. Geometry, bias and oxide capacitance are
# measured quantities (90 um x 30 um channel, 0.5 V drain, 285 nm SiO2);
# the rest only seed the fit.
_C_OX_OVER_E = 8.8541878128e-12 * 3.9 / 285e-9 / 1.602176634e-19

INITIAL_GUESS = DeviceParams(
    c_ox_over_e=_C_OX_OVER_E,
    v_dirac0=6.5,
    mu_e=0.1,
    mu_h=0.1,
    n_residual=0.2 * _C_OX_OVER_E,
    n_clamp=150.0 * _C_OX_OVER_E,
    eta={405: 8.0e21, 532: 5.6e21},
    alpha_fast=0.3,
    alpha_slow=0.7,
    tau_fast=1.5e-3,
    tau_slow=40e-3,
    n_sat=5.0 * _C_OX_OVER_E,
    n_traps_total=60.0 * _C_OX_OVER_E,
    c_trap0=5.0,
    v_trap_ref=20.0,
    tau_trap_hold=1e4,
    tau_trap_reset=5e-3,
    v_reset_threshold=10.0,
    width=90e-6,
    length=30e-6,
    v_ds=0.5,
)

# field -> (low, high, log-scaled)
DEFAULT_BOUNDS = {
    "v_dirac0": (2.0, 15.0, False),
    "eta_405": (2e21, 2e23, True),
    "alpha_fast": (0.05, 0.95, True),
    "tau_fast": (1e-3, 8e-3, True),
    "tau_slow": (1e-2, 0.2, True),
    "n_sat": (1e15, 3e16, True),
    "c_trap0": (0.1, 100.0, True),
}


def get_field(params: DeviceParams, name: str) -> float:
    if name.startswith("eta_"):
        return params.eta_for(int(name[4:]))
    return float(getattr(params, name))


def set_fields(params: DeviceParams, values: dict) -> DeviceParams:
    changes = {}
    eta = dict(params.eta)
    for name, value in values.items():
        if name.startswith("eta_"):
            eta[int(name[4:])] = value
        elif name == "alpha_fast":
            changes["alpha_fast"] = value
            changes["alpha_slow"] = 1.0 - value
        else:
            changes[name] = value
    return params.with_(eta=eta, **changes)


def predict(params: DeviceParams, targets, dt=DEFAULT_DT) -> dict:
    out = {}
    for t in targets:
        if t.predicted_by not in out:
            out[t.predicted_by] = float(PREDICTORS[t.predicted_by](params, dt))
    return out


def residual_report(params: DeviceParams, targets, dt=DEFAULT_DT) -> list:
    pred = predict(params, targets, dt)
    rows = []
    for t in targets:
        value = pred[t.predicted_by]
        rows.append({
            "name": t.name,
            "predicted_by": t.predicted_by,
            "kind": t.kind,
            "target": t.target_value,
            "tolerance": t.tolerance,
            "predicted": value,
            "normalized_residual": t.residual(value),
            "within_tolerance": t.satisfied(value),
        })
    return rows


def objective(params: DeviceParams, targets, dt=DEFAULT_DT) -> float:
    try:
        pred = predict(params, targets, dt)
    except (SimulationError, MetricsError, ParamsError, ValueError, ZeroDivisionError):
        return PENALTY
    total = 0.0
    for t in targets:
        r = t.residual(pred[t.predicted_by])
        total += t.weight * r * r
    return min(total, PENALTY) if math.isfinite(total) else PENALTY


@dataclass
class CalibrationResult:
    params: DeviceParams
    residuals: list
    objective: float
    n_evals: int
    budget_exhausted: bool
    history: list = field(default_factory=list)
    free: dict = field(default_factory=dict)

    @property
    def all_within_tolerance(self) -> bool:
        return all(r["within_tolerance"] for r in self.residuals)

    def summary(self) -> dict:
        return {
            "objective": self.objective,
            "n_evals": self.n_evals,
            "budget_exhausted": self.budget_exhausted,
            "all_within_tolerance": self.all_within_tolerance,
            "free_parameters": self.free,
            "residuals": self.residuals,
        }


class _Box:
    """Maps free fields onto the unit cube and back."""

    def __init__(self, bounds: dict):
        self.names = sorted(bounds)
        self.bounds = bounds

    def to_unit(self, params: DeviceParams) -> np.ndarray:
        z = []
        for n in self.names:
            lo, hi, log = self.bounds[n]
            v = get_field(params, n)
            z.append((math.log(v / lo) / math.log(hi / lo)) if log else (v - lo) / (hi - lo))
        return np.array(z)

    def from_unit(self, z, base: DeviceParams) -> DeviceParams:
        values = {}
        for n, zi in zip(self.names, np.clip(z, 0.0, 1.0)):
            lo, hi, log = self.bounds[n]
            values[n] = lo * (hi / lo) ** zi if log else lo + (hi - lo) * zi
        return set_fields(base, values)


def _check_bounds(initial: DeviceParams, bounds: dict) -> dict:
    free = {}
    for name, spec in bounds.items():
        lo, hi = float(spec[0]), float(spec[1])
        log = bool(spec[2]) if len(spec) > 2 else lo > 0
        if lo > hi:
            raise InfeasibleBounds(f"{name}: lower bound {lo} exceeds upper bound {hi}")
        if log and lo <= 0:
            raise InfeasibleBounds(f"{name}: log-scaled bounds must be positive")
        v = get_field(initial, name)
        if not lo * (1 - 1e-12) <= v <= hi * (1 + 1e-12):
            raise InfeasibleBounds(f"{name}: initial value {v} outside [{lo}, {hi}]")
        if hi > lo:
            free[name] = (lo, hi, log)
    return free


def calibrate(
    initial: DeviceParams = INITIAL_GUESS,
    bounds: dict | None = None,
    targets=MEASURED_TARGETS,
    budget: int = 400,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    raise_on_budget: bool = False,
    step: float = 0.1,
) -> CalibrationResult:
    """Nelder-Mead search over the free (non-degenerate) fields in ``bounds``.

    ``seed`` sets the sign of each initial simplex edge so repeated runs are
    identical. Returns the best point found; no global optimality is claimed.
    """
    if not targets:
        raise CalibrationError("at least one calibration target is required")
    bounds = DEFAULT_BOUNDS if bounds is None else bounds
    free = _check_bounds(initial, bounds)
    if not free:
        rep = residual_report(initial, targets, dt)
        return CalibrationResult(initial, rep, objective(initial, targets, dt), 1, False, [], {})

    box = _Box(free)
    z0 = np.clip(box.to_unit(initial), 0.0, 1.0)
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], size=len(z0))
    simplex = [z0]
    for i, s in enumerate(signs):
        z = z0.copy()
        z[i] += s * step
        if not 0.0 <= z[i] <= 1.0:
            z[i] = z0[i] - s * step
        simplex.append(z)

    n_evals = 0
    best = {"f": math.inf, "z": z0}
    history = []

    def f(z):
        nonlocal n_evals
        n_evals += 1
        value = objective(box.from_unit(z, initial), targets, dt)
        if value < best["f"]:
            best["f"], best["z"] = value, np.array(z)
        return value

    def on_iteration(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = minimize(
        f, z0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * len(z0), callback=on_iteration,
        options={"initial_simplex": np.array(simplex), "maxfev": budget,
                 "xatol": 1e-6, "fatol": 1e-10},
    )
    exhausted = res.status == 1 or n_evals >= budget
    params = box.from_unit(best["z"], initial)
    rep = residual_report(params, targets, dt)
    chosen = {n: get_field(params, n) for n in box.names}
    result = CalibrationResult(params, rep, best["f"], n_evals, exhausted, history, chosen)
    if exhausted and raise_on_budget:
        raise BudgetExhausted(result)
    return result


def write_calibration(result: CalibrationResult, params_path, residuals_path=None) -> None:
    params_path = Path(params_path)
    save_params(result.params, params_path, format_version=1,
                generated_by="photosynapse calibrate")
    if residuals_path is None:
        residuals_path = params_path.with_name(params_path.stem + ".residuals.json")
    Path(residuals_path).write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")


def synthetic_targets(params: DeviceParams, template=MEASURED_TARGETS, dt=DEFAULT_DT):
    """Two-sided targets equal to what ``params`` itself predicts."""
    pred = predict(params, template, dt)
    return tuple(
        CalibrationTarget(t.name, t.predicted_by, pred[t.predicted_by], t.weight, t.tolerance)
        for t in template
    )
