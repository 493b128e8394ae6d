"""Command-line front end: ``photosynapse <subcommand> [options]``.

Exit status is 0 on success, 1 on invalid input (bad flag, file, protocol or
parameter set) and 2 when a computation fails numerically.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .calibration import BudgetExhausted, calibrate, write_calibration
from .device import NoCrossing, ParamsError, default_params_path, load_params
from .metrics import DivisionByNearZero, FitDiverged, fit_double_exp, report
from .network import RetinaArray, load_frames, write_images
from .simulator import DEFAULT_DT, NonFinite, StepTooLarge, integrate
from .stimulus import ProtocolError, load_protocol

NUMERICAL_ERRORS = (NonFinite, FitDiverged, NoCrossing, DivisionByNearZero, BudgetExhausted)
U64_MAX = 2**64 - 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _u64(text):
    value = int(text)
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError(f"must be an integer in [0, 2^64-1], got {text}")
    return value


def _positive(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = parser.add_argument_group("global options")
    g.add_argument("--params", default=d(None), metavar="FILE",
                   help="[path] DeviceParams JSON (default: shipped calibrated set)")
    g.add_argument("--dt", type=_positive, default=d(DEFAULT_DT), metavar="S",
                   help=f"[s] integration step (default {DEFAULT_DT:g})")
    g.add_argument("--out", default=d("results"), metavar="DIR",
                   help="[path] output directory (default: results)")
    g.add_argument("--seed", type=_u64, default=d(0), metavar="U64",
                   help="[count] seed for randomised initialisation (calibrate simplex)")
    g.add_argument("--format", choices=("csv", "json"), default=d("csv"),
                   help="[-] output format for tables and traces (default csv)")
    g.add_argument("--svg", action="store_true", default=d(False),
                   help="[-] also write an SVG line plot of the output")
    g.add_argument("--jobs", type=int, default=d(1), metavar="N",
                   help="[count] worker threads for independent simulations")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="photosynapse",
                     description="Behavioural simulator of a light-stimulated synaptic phototransistor. "
                                 "Units: time s, power W, voltage V, current A.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, help_text):
        return sub.add_parser(name, help=help_text, description=help_text, parents=[common])

    p = add("simulate", "Integrate one protocol file; write a trace CSV, events CSV and metrics JSON.")
    p.add_argument("protocol", help="[path] protocol JSON file")
    p.add_argument("--set", action="append", default=[], metavar="NAME=VALUE",
                   help="[unit of the parameter] value for a $placeholder declared in the protocol")

    p = add("sweep-gate", "Spike response versus back-gate bias (fig1b).")
    p.add_argument("--v-min", type=float, default=-50.0, help="[V] first gate bias (default -50)")
    p.add_argument("--v-max", type=float, default=50.0, help="[V] last gate bias (default 50)")
    p.add_argument("--v-step", type=_positive, default=10.0, help="[V] bias increment (default 10)")
    p.add_argument("--power-w", type=_positive, default=ex.SPIKE_POWER, help="[W] spike power (default 5e-05)")
    p.add_argument("--duration-s", type=_positive, default=ex.SPIKE_DURATION,
                   help="[s] spike duration (default 0.005)")

    p = add("duration", "Spike response versus spike duration (fig1c).")
    p.add_argument("--v-g", type=float, default=0.0, help="[V] gate bias (default 0)")
    p.add_argument("--durations", type=_floats, default=list(ex.DURATIONS),
                   help="[s] comma-separated spike durations (default 0.005,...,0.1)")
    p.add_argument("--power-w", type=_positive, default=ex.SPIKE_POWER, help="[W] spike power (default 5e-05)")

    p = add("ppf", "Paired-pulse index versus start-to-start interval (fig2c).")
    p.add_argument("--v-g", type=float, default=0.0, help="[V] gate bias (default 0)")
    p.add_argument("--intervals", type=_floats, default=list(ex.PPF_INTERVALS),
                   help="[s] comma-separated start-to-start intervals")
    p.add_argument("--power-w", type=_positive, default=ex.SPIKE_POWER, help="[W] spike power (default 5e-05)")
    p.add_argument("--duration-s", type=_positive, default=ex.SPIKE_DURATION,
                   help="[s] spike duration (default 0.005)")

    p = add("train", "Per-pulse weight change for a spike train (fig2d).")
    p.add_argument("--v-g", type=float, default=0.0, help="[V] gate bias (default 0)")
    p.add_argument("--n-pulses", type=int, default=10, help="[count] number of spikes (default 10)")
    p.add_argument("--pulse-s", type=_positive, default=ex.SPIKE_DURATION, help="[s] on time (default 0.005)")
    p.add_argument("--gap-s", type=_positive, default=0.010, help="[s] off time between spikes (default 0.01)")
    p.add_argument("--power-w", type=_positive, default=ex.SPIKE_POWER, help="[W] spike power (default 5e-05)")

    p = add("ltp", "Long-term weight after one pulse or a pulse train (fig3a / fig3c).")
    p.add_argument("--v-g", type=float, default=-20.0, help="[V] gate bias (default -20)")
    p.add_argument("--n-pulses", type=int, default=1, help="[count] number of pulses (default 1)")
    p.add_argument("--spacing-s", type=_positive, default=ex.LTP_SPACING,
                   help="[s] start-to-start pulse spacing (default 3)")
    p.add_argument("--duration-s", type=_positive, default=ex.LTP_DURATION, help="[s] pulse duration (default 0.1)")
    p.add_argument("--power-w", type=_positive, default=ex.SPIKE_POWER, help="[W] pulse power (default 5e-05)")
    p.add_argument("--observe-s", type=_positive, default=10.0,
                   help="[s] observation time after the last pulse (default 10)")

    p = add("reset", "LTP pulse followed by a gate reset pulse (fig3d).")
    p.add_argument("--v-g", type=float, default=-20.0, help="[V] gate bias during LTP (default -20)")
    p.add_argument("--v-reset", type=float, default=40.0, help="[V] reset pulse level (default 40)")
    p.add_argument("--reset-duration-s", type=_positive, default=0.1, help="[s] reset pulse length (default 0.1)")
    p.add_argument("--reset-at-s", type=_positive, default=None,
                   help="[s] reset start time (default: 2 s after the light pulse ends)")

    p = add("summation-time", "Two-wavelength temporal summation versus delay (fig4b).")
    p.add_argument("--p1-w", type=_positive, required=True, help="[W] 405 nm spike power")
    p.add_argument("--p2-w", type=_positive, required=True, help="[W] 532 nm spike power")
    p.add_argument("--v-g", type=float, default=0.0, help="[V] gate bias (default 0)")
    p.add_argument("--delays", type=_floats, default=list(ex.SUMMATION_DELAYS),
                   help="[s] comma-separated 532 nm minus 405 nm start delays")
    p.add_argument("--duration-s", type=_positive, default=0.02, help="[s] spike duration (default 0.02)")

    p = add("summation-power", "Two-wavelength response against the arithmetic sum of single responses.")
    p.add_argument("--p1-w", type=_floats, required=True, help="[W] comma-separated 405 nm powers")
    p.add_argument("--p2-w", type=_floats, required=True, help="[W] comma-separated 532 nm powers")
    p.add_argument("--v-g", type=float, default=20.0, help="[V] gate bias (default 20)")
    p.add_argument("--duration-s", type=_positive, default=ex.SPIKE_DURATION,
                   help="[s] spike duration (default 0.005)")
    p.add_argument("--knee", action="store_true", help="[-] also locate the 405 nm saturation knee (W)")

    p = add("logic", "Two-input optical logic truth table (fig4c AND / fig4d OR).")
    p.add_argument("--mode", choices=("and", "or"), required=True, help="[-] gate type")
    p.add_argument("--threshold-a", type=_positive, default=None,
                   help="[A] |dPSC| decision threshold (default from LOGIC_CONFIG)")
    p.add_argument("--v-g", type=float, default=None,
                   help="[V] gate bias (default: computed V_cross for AND, 20 for OR)")

    p = add("retina", "Convert a frame sequence into neural images (per-pixel weight change).")
    p.add_argument("frames", help="[path] directory of PGM frames or JSON frame manifest")
    p.add_argument("--v-g", type=float, default=None, help="[V] global gate bias (default: manifest v_g or 0)")
    p.add_argument("--channel-nm", type=int, default=405, help="[nm] wavelength for PGM directory input")
    p.add_argument("--full-scale-w", type=_positive, default=ex.SPIKE_POWER,
                   help="[W] power at the maximum gray level (default 5e-05)")
    p.add_argument("--frame-duration-s", type=_positive, default=0.1,
                   help="[s] duration of each PGM frame (default 0.1)")
    p.add_argument("--pgm", action="store_true", help="[-] also render each neural image as PGM")

    p = add("calibrate", "Fit free parameters to the measured targets; write params and residuals JSON.")
    p.add_argument("--budget", type=int, default=400, help="[count] objective evaluations (default 400)")
    p.add_argument("--strict", action="store_true", help="[-] exit 2 if the budget runs out")

    p = add("fit-decay", "Fit a double exponential to the decay segment of a trace CSV.")
    p.add_argument("trace", help="[path] trace CSV with t_s and i_a columns")
    p.add_argument("--t-start-s", type=float, default=None, help="[s] segment start (default: response peak)")
    p.add_argument("--t-end-s", type=float, default=None, help="[s] segment end (default: end of trace)")
    return parser


# -- helpers --------------------------------------------------------------

def _params(args):
    path = args.params or default_params_path()
    try:
        return load_params(path)
    except FileNotFoundError:
        raise UsageError(f"--params: file {path} not found") from None
    except (ParamsError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"--params {path}: {exc}") from None


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_table(args, params, table, x=None, y=None):
    path = ex.write_table(table, _out(args), params, args.dt, args.format)
    if args.svg:
        x = x or table.columns[0]
        y = y or table.columns[1]
        _svg(path.with_suffix(".svg"), table.column(x), {y: table.column(y)}, x, y)
    print(f"wrote {path}")
    return path


def _svg(path, x, series: dict, xlabel, ylabel):
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise UsageError("--svg needs matplotlib (pip install matplotlib)") from None
    matplotlib.rcParams["svg.hashsalt"] = "photosynapse"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _parse_sets(items):
    values = {}
    for item in items:
        name, sep, raw = item.partition("=")
        if not sep or not name:
            raise UsageError(f"--set: expected NAME=VALUE, got {item!r}")
        try:
            values[name] = json.loads(raw)
        except json.JSONDecodeError:
            values[name] = raw
    return values


# -- subcommands ----------------------------------------------------------

def cmd_simulate(args):
    params = _params(args)
    path = Path(args.protocol)
    if not path.is_file():
        raise UsageError(f"protocol file {path} not found")
    try:
        proto = load_protocol(path, _parse_sets(args.set))
    except ProtocolError as exc:
        raise UsageError(f"protocol {path}: {exc}") from None
    trace = integrate(params, proto, args.dt)
    out = _out(args)
    stem = path.stem
    if args.format == "csv":
        trace_path = out / f"{stem}.trace.csv"
        trace.to_csv(trace_path)
    else:
        trace_path = out / f"{stem}.trace.json"
        doc = {"t_s": trace.t.tolist(), "i_a": trace.current.tolist(), "v_g": trace.v_g.tolist()}
        doc.update({f"power_{ch}_w": trace.power[ch].tolist() for ch in sorted(trace.power)})
        trace_path.write_text(json.dumps(doc) + "\n")
    trace.events_to_csv(out / f"{stem}.events.csv")
    if proto.pulses:
        t0 = min(p.t_start for p in proto.pulses)
        if t0 > args.dt:
            rep = report(trace, (0.0, t0), (t0, trace.t_end))
            (out / f"{stem}.metrics.json").write_text(rep.to_json())
    ex.update_manifest(out, stem, trace_path.name, params, args.dt, trace.protocol_digest)
    if args.svg:
        _svg(trace_path.with_suffix(".svg"), trace.t, {"i_a": trace.current}, "t (s)", "I (A)")
    print(f"wrote {trace_path}")


def cmd_sweep_gate(args):
    params = _params(args)
    n = int(round((args.v_max - args.v_min) / args.v_step))
    if n < 0:
        raise UsageError("--v-max must be >= --v-min")
    v_list = [args.v_min + k * args.v_step for k in range(n + 1)]
    pulse = ex.spike(args.power_w, args.duration_s)
    table = ex.run_gate_sweep(params, v_list, pulse, args.dt, args.jobs)
    _emit_table(args, params, table, "v_g", "delta_psc_a")


def cmd_duration(args):
    params = _params(args)
    if not args.durations or min(args.durations) <= 0:
        raise UsageError("--durations: need at least one value > 0 s")
    table = ex.run_duration_sweep(params, args.v_g, args.durations, args.power_w, args.dt, args.jobs)
    _emit_table(args, params, table, "duration_s", "delta_psc_a")


def cmd_ppf(args):
    params = _params(args)
    pulse = ex.spike(args.power_w, args.duration_s)
    table = ex.run_ppf_sweep(params, args.v_g, args.intervals, pulse, args.dt, args.jobs)
    _emit_table(args, params, table, "dt_pre_s", "ppf_index_pct")


def cmd_train(args):
    params = _params(args)
    if args.n_pulses < 1:
        raise UsageError("--n-pulses must be >= 1")
    table = ex.run_train(params, args.v_g, args.n_pulses, args.pulse_s, args.gap_s, args.power_w, args.dt)
    _emit_table(args, params, table, "pulse", "weight")


def cmd_ltp(args):
    params = _params(args)
    if args.n_pulses < 1:
        raise UsageError("--n-pulses must be >= 1")
    table = ex.run_ltp(params, args.v_g, args.n_pulses, args.spacing_s, args.duration_s,
                       args.power_w, args.observe_s, dt=args.dt)
    _emit_table(args, params, table)
    print(f"retention (+{args.observe_s:g} s / +1 s): {table.meta['retention']:.4f}")


def cmd_reset(args):
    params = _params(args)
    table = ex.run_reset(params, args.v_g, args.v_reset, args.reset_duration_s, args.reset_at_s, dt=args.dt)
    _emit_table(args, params, table)
    print(f"weight before reset {table.meta['weight_before_reset']:.6g}, "
          f"after {table.meta['weight_after_reset']:.6g}")


def cmd_summation_time(args):
    params = _params(args)
    table = ex.run_temporal_summation(params, args.p1_w, args.p2_w, args.v_g, args.delays,
                                      args.duration_s, args.dt, args.jobs)
    _emit_table(args, params, table)


def cmd_summation_power(args):
    params = _params(args)
    for flag, values in (("--p1-w", args.p1_w), ("--p2-w", args.p2_w)):
        if not values or min(values) <= 0:
            raise UsageError(f"{flag}: need at least one power > 0 W")
    table = ex.run_power_summation(params, args.p1_w, args.p2_w, args.v_g, args.duration_s,
                                   args.dt, args.jobs)
    if args.knee:
        table.meta["knee_w"] = ex.find_saturation_knee(params, args.v_g, args.duration_s, dt=args.dt)
        print(f"saturation knee: {table.meta['knee_w']:.4g} W")
    _emit_table(args, params, table, "p1_w", "ratio")


def cmd_logic(args):
    params = _params(args)
    table = ex.run_logic(params, args.mode, args.threshold_a, args.v_g, args.dt)
    print(f"{args.mode.upper()} at V_G = {table.meta['v_g']:.4f} V, threshold {table.meta['threshold_a']:g} A")
    print("a b delta_psc_a bit")
    for a, b, _, delta, bit in table.rows:
        print(f"{a} {b} {delta: .6e} {bit}")
    _emit_table(args, params, table, "b", "delta_psc_a")


def cmd_retina(args):
    params = _params(args)
    try:
        frames, meta = load_frames(args.frames, args.channel_nm, args.full_scale_w, args.frame_duration_s)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    v_g = args.v_g if args.v_g is not None else float(meta.get("v_g", 0.0))
    rows, cols = frames[0].shape
    retina = RetinaArray(rows, cols, params, v_g=v_g, dt=args.dt, jobs=args.jobs)
    images = retina.step_frames(frames)
    out = _out(args) / "retina"
    if args.format == "json":
        out.mkdir(parents=True, exist_ok=True)
        doc = [{"t_s": im.t, "weight": im.weight.tolist()} for im in images]
        (out / "images.json").write_text(json.dumps(doc, indent=2) + "\n")
    manifest = write_images(images, out, pgm=args.pgm)
    doc = json.loads(manifest.read_text())
    doc["input"] = {"source": str(args.frames), "v_g": v_g, "dt": args.dt,
                    "params_digest": params.digest(), "code_version": __version__,
                    "pgm_channel_nm": args.channel_nm, "pgm_full_scale_w": args.full_scale_w}
    manifest.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(images)} neural image(s) to {out}")


def cmd_calibrate(args):
    initial = _params(args) if args.params else None
    kwargs = {"budget": args.budget, "seed": args.seed, "dt": args.dt, "raise_on_budget": args.strict}
    if initial is not None:
        kwargs["initial"] = initial
    result = calibrate(**kwargs)
    out = _out(args)
    write_calibration(result, out / "params.json", out / "params.residuals.json")
    for r in result.residuals:
        flag = "ok" if r["within_tolerance"] else "OUT"
        print(f"{r['name']:14s} predicted {r['predicted']: .6g} target {r['target']:g} "
              f"+/- {r['tolerance']:g} [{flag}]")
    print(f"wrote {out / 'params.json'} ({result.n_evals} evaluations)")


def cmd_fit_decay(args):
    path = Path(args.trace)
    if not path.is_file():
        raise UsageError(f"trace file {path} not found")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    for col in ("t_s", "i_a"):
        if col not in header:
            raise UsageError(f"trace {path}: missing column {col!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    t, i = data[:, header.index("t_s")], data[:, header.index("i_a")]
    if args.t_start_s is None:
        k0 = int(np.argmax(np.abs(i - i[0])))
    else:
        k0 = int(np.searchsorted(t, args.t_start_s))
    k1 = len(t) if args.t_end_s is None else int(np.searchsorted(t, args.t_end_s, side="right"))
    fit = fit_double_exp(t[k0:k1], i[k0:k1])
    doc = {"a1": fit.a1, "tau1_s": fit.tau1, "a2": fit.a2, "tau2_s": fit.tau2, "c": fit.c,
           "rms_a": fit.rms, "r2": fit.r2, "t_start_s": float(t[k0]), "t_end_s": float(t[k1 - 1])}
    out = _out(args)
    if args.format == "json":
        target = out / f"{path.stem}.decay.json"
        target.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    else:
        target = out / f"{path.stem}.decay.csv"
        keys = sorted(doc)
        target.write_text(",".join(keys) + "\n" + ",".join(repr(float(doc[k])) for k in keys) + "\n")
    if args.svg:
        _svg(target.with_suffix(".svg"), t[k0:k1], {"trace": i[k0:k1], "fit": fit(t[k0:k1] - t[k0])},
             "t (s)", "I (A)")
    print(f"tau1 = {fit.tau1:.6g} s, tau2 = {fit.tau2:.6g} s, R^2 = {fit.r2:.6f}")
    print(f"wrote {target}")


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep-gate": cmd_sweep_gate,
    "duration": cmd_duration,
    "ppf": cmd_ppf,
    "train": cmd_train,
    "ltp": cmd_ltp,
    "reset": cmd_reset,
    "summation-time": cmd_summation_time,
    "summation-power": cmd_summation_power,
    "logic": cmd_logic,
    "retina": cmd_retina,
    "calibrate": cmd_calibrate,
    "fit-decay": cmd_fit_decay,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except StepTooLarge as exc:
        print(f"error: --dt: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        if isinstance(exc, BudgetExhausted):
            exc = "calibration budget exhausted (--budget)"
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
