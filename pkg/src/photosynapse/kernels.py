"""Fixed-step RK4 kernels for the three-pool device ODE.

Two implementations with identical floating-point operation order:
``rk4_numba`` (scalar loops, compiled) and ``rk4_numpy`` (vectorised over
devices, interpreted step loop). ``rk4`` picks one via ``_accel``.

Inputs are piecewise constant per step: ``gen[seg[k], p]`` is the generation
rate seen by device ``p`` during step ``k``; ``cap[k]`` and ``trel[k]`` are the
gate-dependent trap capture coefficient and release time for that step.
State columns are ``(n_fast, n_slow, n_trap)``. ``record[k]`` marks steps
whose end state is written to the output; row 0 of the output is ``y0``.
"""
import numpy as np

from . import _accel


@_accel.njit
def _deriv(nf, ns, nt, g, cap, trel, af, as_, tf, ts, nsat, ntot):
    tot = nf + ns
    s = 1.0 - tot / nsat
    if s < 0.0:
        s = 0.0
    gs = g * s
    df = af * gs - nf / tf
    ds = as_ * gs - ns / ts
    dtr = cap * tot * (1.0 - nt / ntot) - nt / trel
    return df, ds, dtr


@_accel.njit
def rk4_numba(y0, h, seg, gen, cap, trel, record, af, as_, tf, ts, nsat, ntot):
    n_dev = y0.shape[0]
    n_rec = 0
    for k in range(h.shape[0]):
        if record[k]:
            n_rec += 1
    out = np.empty((n_rec + 1, n_dev, 3))
    for p in range(n_dev):
        nf = y0[p, 0]
        ns = y0[p, 1]
        nt = y0[p, 2]
        out[0, p, 0] = nf
        out[0, p, 1] = ns
        out[0, p, 2] = nt
        r = 1
        for k in range(h.shape[0]):
            dt = h[k]
            g = gen[seg[k], p]
            c = cap[k]
            tr = trel[k]
            half = 0.5 * dt
            a1, b1, c1 = _deriv(nf, ns, nt, g, c, tr, af, as_, tf, ts, nsat, ntot)
            a2, b2, c2 = _deriv(nf + half * a1, ns + half * b1, nt + half * c1,
                                g, c, tr, af, as_, tf, ts, nsat, ntot)
            a3, b3, c3 = _deriv(nf + half * a2, ns + half * b2, nt + half * c2,
                                g, c, tr, af, as_, tf, ts, nsat, ntot)
            a4, b4, c4 = _deriv(nf + dt * a3, ns + dt * b3, nt + dt * c3,
                                g, c, tr, af, as_, tf, ts, nsat, ntot)
            sixth = dt / 6.0
            nf = nf + sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            ns = ns + sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            nt = nt + sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            if record[k]:
                out[r, p, 0] = nf
                out[r, p, 1] = ns
                out[r, p, 2] = nt
                r += 1
    return out


def _deriv_np(nf, ns, nt, g, cap, trel, af, as_, tf, ts, nsat, ntot):
    tot = nf + ns
    s = np.maximum(1.0 - tot / nsat, 0.0)
    gs = g * s
    df = af * gs - nf / tf
    ds = as_ * gs - ns / ts
    dtr = cap * tot * (1.0 - nt / ntot) - nt / trel
    return df, ds, dtr


def rk4_numpy(y0, h, seg, gen, cap, trel, record, af, as_, tf, ts, nsat, ntot):
    y0 = np.asarray(y0, dtype=float)
    nf = y0[:, 0].copy()
    ns = y0[:, 1].copy()
    nt = y0[:, 2].copy()
    out = np.empty((int(np.count_nonzero(record)) + 1, y0.shape[0], 3))
    out[0] = y0
    r = 1
    for k in range(h.shape[0]):
        dt = float(h[k])
        g = gen[seg[k]]
        c = float(cap[k])
        tr = float(trel[k])
        half = 0.5 * dt
        a1, b1, c1 = _deriv_np(nf, ns, nt, g, c, tr, af, as_, tf, ts, nsat, ntot)
        a2, b2, c2 = _deriv_np(nf + half * a1, ns + half * b1, nt + half * c1,
                               g, c, tr, af, as_, tf, ts, nsat, ntot)
        a3, b3, c3 = _deriv_np(nf + half * a2, ns + half * b2, nt + half * c2,
                               g, c, tr, af, as_, tf, ts, nsat, ntot)
        a4, b4, c4 = _deriv_np(nf + dt * a3, ns + dt * b3, nt + dt * c3,
                               g, c, tr, af, as_, tf, ts, nsat, ntot)
        sixth = dt / 6.0
        nf = nf + sixth * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        ns = ns + sixth * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        nt = nt + sixth * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        if record[k]:
            out[r, :, 0] = nf
            out[r, :, 1] = ns
            out[r, :, 2] = nt
            r += 1
    return out


def rk4(y0, h, seg, gen, cap, trel, record, af, as_, tf, ts, nsat, ntot, backend=None):
    """Dispatch to the compiled or the numpy kernel.

    ``backend`` is ``"numba"``, ``"numpy"`` or ``None`` (environment default).
    """
    if backend is None:
        backend = "numba" if _accel.use_numba() else "numpy"
    fn = rk4_numba if backend == "numba" else rk4_numpy
    if backend == "numba" and not _accel.HAVE_NUMBA:
        fn = rk4_numpy
    return fn(
        np.ascontiguousarray(y0, dtype=np.float64),
        np.ascontiguousarray(h, dtype=np.float64),
        np.ascontiguousarray(seg, dtype=np.int64),
        np.ascontiguousarray(gen, dtype=np.float64),
        np.ascontiguousarray(cap, dtype=np.float64),
        np.ascontiguousarray(trel, dtype=np.float64),
        np.ascontiguousarray(record, dtype=np.bool_),
        float(af), float(as_), float(tf), float(ts), float(nsat), float(ntot),
    )
