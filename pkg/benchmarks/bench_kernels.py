#!/usr/bin/env python3
"""Compare the compiled (numba) and pure-numpy RK4 kernels.

Two workloads: one device over a long protocol (step-loop bound) and a
retina array over a short frame (pixel-vector bound). Each timing is the
best of ``--repeats`` runs after one warm-up call; outputs are checked to be
bit-identical between backends.

    python benchmarks/bench_kernels.py --repeats 3 --pixels 64
"""
import argparse
import json
import sys
import time

import numpy as np

from photosynapse import _accel
from photosynapse.device import default_params
from photosynapse.experiments import ltp_protocol
from photosynapse.network import Frame, RetinaArray
from photosynapse.simulator import integrate


def best_of(fn, repeats):
    fn()
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def single_device(params, backend, observe_s):
    proto = ltp_protocol(params, -20.0, observe_s=observe_s)
    return integrate(params, proto, backend=backend).current


def retina(params, backend, side, duration):
    rng = np.random.default_rng(0)
    frame = Frame({405: rng.uniform(0.0, 50e-6, (side, side))}, duration)
    arr = RetinaArray(side, side, params, v_g=-20.0, backend=backend)
    return arr.step_frames([frame])[0].weight


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=3, help="timed runs per case [count]")
    ap.add_argument("--observe-s", type=float, default=10.0, help="single-device observation time [s]")
    ap.add_argument("--pixels", type=int, default=64, help="retina side length [count]")
    ap.add_argument("--frame-s", type=float, default=0.1, help="retina frame duration [s]")
    ap.add_argument("--output", "-o", help="write results as JSON to this file")
    args = ap.parse_args(argv)

    if not _accel.HAVE_NUMBA:
        print("numba is not importable; only the numpy kernel can run", file=sys.stderr)
        return 1
    params = default_params()
    cases = {
        "single_device": lambda be: single_device(params, be, args.observe_s),
        "retina": lambda be: retina(params, be, args.pixels, args.frame_s),
    }
    results = {}
    for name, run in cases.items():
        t_nb, out_nb = best_of(lambda: run("numba"), args.repeats)
        t_np, out_np = best_of(lambda: run("numpy"), args.repeats)
        results[name] = {
            "numba_s": t_nb,
            "numpy_s": t_np,
            "speedup": t_np / t_nb,
            "bit_identical": bool(np.array_equal(out_nb, out_np)),
        }
        r = results[name]
        print(f"{name:14s} numba {t_nb * 1e3:9.2f} ms   numpy {t_np * 1e3:9.2f} ms   "
              f"x{r['speedup']:6.1f}   identical={r['bit_identical']}")
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0 if all(r["bit_identical"] for r in results.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
