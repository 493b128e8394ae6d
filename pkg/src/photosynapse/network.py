"""Wavelength-multiplexed fan-out routing and a retina array of devices.

Each pixel of a :class:`RetinaArray` is an independent device. Frames are
advanced with the same RK4 kernel and the same step sizes as
:func:`photosynapse.simulator.integrate`, so a pixel's trajectory is
bit-identical to a single-device run of the equivalent protocol.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .device import CHANNELS, DeviceParams, current_from_densities
from .simulator import (
    DEFAULT_DT,
    STIFFNESS_LIMIT,
    NonFinite,
    StepTooLarge,
    run_kernel,
    stiffness,
)
from .stimulus import LightPulse, StimulusProtocol

_ALIGN_TOL = 1e-6


class UnknownDevice(KeyError):
    pass


class DimensionMismatch(ValueError):
    pass


class FrameError(ValueError):
    pass


# -- axon fan-out ---------------------------------------------------------

@dataclass(frozen=True)
class AxonFanout:
    """One pre-synaptic wavelength channel driving several devices.

    ``targets`` holds ``(device_id, coupling)`` pairs; the coupling scales
    the pulse power seen by that device.
    """
    channel_nm: int
    targets: tuple = ()

    def __post_init__(self):
        targets = tuple((str(d), float(c)) for d, c in self.targets)
        for dev, c in targets:
            if not (c >= 0 and math.isfinite(c)):
                raise ValueError(f"coupling for device {dev!r} must be >= 0, got {c!r}")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "channel_nm", int(self.channel_nm))

    @property
    def degree(self) -> int:
        return len(self.targets)


def route(
    fanouts,
    schedule,
    device_ids,
    default_v_g: float = 0.0,
    v_ds: float = 0.5,
    t_end: float | None = None,
    tail: float = 0.2,
    channels=CHANNELS,
) -> dict[str, StimulusProtocol]:
    """Turn a pre-synaptic pulse schedule into one protocol per device.

    Every scheduled pulse is delivered to every target of every fan-out on
    its channel, scaled by the coupling. Pulses keep schedule order.
    ``t_end`` defaults to the last pulse end plus ``tail`` seconds.
    """
    device_ids = [str(d) for d in device_ids]
    known = set(device_ids)
    for fo in fanouts:
        for dev, _ in fo.targets:
            if dev not in known:
                raise UnknownDevice(f"fan-out on {fo.channel_nm} nm targets unknown device {dev!r}")
    per_device = {d: [] for d in device_ids}
    for pulse in schedule:
        for fo in fanouts:
            if fo.channel_nm != pulse.channel_nm:
                continue
            for dev, coupling in fo.targets:
                per_device[dev].append(
                    LightPulse(pulse.channel_nm, pulse.power_w * coupling, pulse.t_start, pulse.duration)
                )
    if t_end is None:
        t_end = max((p.t_end for p in schedule), default=0.0) + tail
    chans = tuple(sorted(set(channels) | {fo.channel_nm for fo in fanouts}))
    return {
        d: StimulusProtocol(pulses=per_device[d], default_v_g=float(default_v_g), v_ds=v_ds,
                            t_end=float(t_end), channels=chans)
        for d in device_ids
    }


# -- retina ---------------------------------------------------------------

@dataclass
class Frame:
    """Per-channel power maps (W, shape rows x cols) held for ``duration`` s."""
    power: dict
    duration: float

    def __post_init__(self):
        self.power = {int(ch): np.asarray(p, dtype=float) for ch, p in self.power.items()}
        shapes = {p.shape for p in self.power.values()}
        if len(shapes) > 1:
            raise DimensionMismatch(f"channel maps have different shapes {sorted(shapes)}")
        for ch, p in self.power.items():
            if p.ndim != 2:
                raise DimensionMismatch(f"channel {ch} nm: power map must be 2-D, got shape {p.shape}")
            if not np.all(np.isfinite(p)) or np.any(p < 0):
                raise FrameError(f"channel {ch} nm: powers must be finite and >= 0 W")
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise FrameError(f"frame duration must be > 0 s, got {self.duration!r}")

    @property
    def shape(self):
        return next(iter(self.power.values())).shape if self.power else None

    @classmethod
    def dark(cls, rows, cols, duration):
        return cls({CHANNELS[0]: np.zeros((rows, cols))}, duration)


@dataclass
class NeuralImage:
    weight: np.ndarray
    t: float


@dataclass
class RetinaArray:
    """A rows x cols grid of devices under one shared back gate.

    ``params`` is either a single :class:`DeviceParams` shared by every
    pixel or a rows x cols nested sequence of them. Pixel states start at
    the dark equilibrium (all pools empty).
    """
    rows: int
    cols: int
    params: object
    v_g: float = 0.0
    dt: float = DEFAULT_DT
    backend: str | None = None
    jobs: int = 1
    states: np.ndarray = field(default=None)
    step: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionMismatch(f"retina needs rows, cols >= 1, got {self.rows}x{self.cols}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise StepTooLarge(f"dt must be a positive finite number, got {self.dt!r}")
        n = self.rows * self.cols
        if self.states is None:
            self.states = np.zeros((n, 3))
        self.states = np.asarray(self.states, dtype=float).reshape(n, 3)
        if not np.all(np.isfinite(self.states)):
            raise ValueError("pixel states must be finite")
        self._groups = self._group_params()
        for p, _ in self._groups:
            if self.dt > p.tau_fast / 10 * (1 + 1e-9):
                raise StepTooLarge(f"dt={self.dt:g} s exceeds tau_fast/10 = {p.tau_fast / 10:g} s")

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    @property
    def t(self) -> float:
        return self.step * self.dt

    def _group_params(self):
        if isinstance(self.params, DeviceParams):
            return [(self.params, np.arange(self.n_pixels))]
        grid = list(self.params)
        if len(grid) != self.rows or any(len(r) != self.cols for r in grid):
            raise DimensionMismatch(f"per-pixel params must be {self.rows}x{self.cols}")
        groups = {}
        for i, p in enumerate(p for row in grid for p in row):
            groups.setdefault(p.digest(), (p, []))[1].append(i)
        return [(p, np.asarray(idx)) for p, idx in groups.values()]

    def reset(self):
        self.states = np.zeros((self.n_pixels, 3))
        self.step = 0

    def dark_current(self) -> np.ndarray:
        out = np.empty(self.n_pixels)
        for p, idx in self._groups:
            z = np.zeros(len(idx))
            out[idx] = current_from_densities(z, z, z, np.full(len(idx), float(self.v_g)), p)
        return out

    def current(self) -> np.ndarray:
        out = np.empty(self.n_pixels)
        v = np.full(self.n_pixels, float(self.v_g))
        for p, idx in self._groups:
            s = self.states[idx]
            out[idx] = current_from_densities(s[:, 0], s[:, 1], s[:, 2], v[idx], p)
        return out

    def weight(self) -> np.ndarray:
        i0 = self.dark_current()
        return ((self.current() - i0) / i0).reshape(self.rows, self.cols)

    def _frame_steps(self, frame: Frame) -> int:
        n_float = frame.duration / self.dt
        n = int(round(n_float))
        if n < 1:
            raise FrameError(f"frame duration {frame.duration:g} s is shorter than dt={self.dt:g} s")
        if abs(n_float - n) > _ALIGN_TOL:
            raise FrameError(
                f"frame duration {frame.duration:g} s is not a multiple of dt={self.dt:g} s"
            )
        return n

    def _advance(self, p, idx, gen, n):
        k = np.arange(self.step, self.step + n + 1)
        grid = k * self.dt
        h = grid[1:] - grid[:-1]
        seg = np.zeros(n, dtype=np.int64)
        v = np.full(n, float(self.v_g))
        cap = p.c_trap0 * np.maximum(0.0, -v / p.v_trap_ref)
        trel = np.where(v > p.v_reset_threshold, p.tau_trap_reset, p.tau_trap_hold)
        stiff = stiffness(p, h, float(np.max(gen)) if gen.size else 0.0, cap, trel)
        if stiff > STIFFNESS_LIMIT:
            raise StepTooLarge(
                f"dt={self.dt:g} s is too large for the brightest pixel "
                f"(dt*rate = {stiff:.3g} > {STIFFNESS_LIMIT}); reduce dt"
            )
        record = np.zeros(n, dtype=bool)
        record[-1] = True
        chunks = _chunks(len(idx), self.jobs)

        def work(sl):
            y0 = self.states[idx[sl]]
            return run_kernel(p, y0, h, seg, gen[None, sl], cap, trel, record, self.backend)[-1]

        if len(chunks) == 1:
            results = [work(chunks[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                results = list(pool.map(work, chunks))
        new = np.concatenate(results, axis=0)
        if not np.all(np.isfinite(new)):
            raise NonFinite(f"pixel state left the finite range before t={grid[-1]:g} s")
        return new

    def step_frames(self, frames) -> list[NeuralImage]:
        """Advance every pixel through ``frames``; one image per frame end."""
        images = []
        for i, frame in enumerate(frames):
            if frame.shape != (self.rows, self.cols):
                raise DimensionMismatch(
                    f"frame {i}: shape {frame.shape} does not match the {self.rows}x{self.cols} array"
                )
            n = self._frame_steps(frame)
            new_states = np.empty_like(self.states)
            for p, idx in self._groups:
                gen = np.zeros(len(idx))
                for ch in sorted(frame.power):
                    gen = gen + p.eta_for(ch) * frame.power[ch].reshape(-1)[idx]
                new_states[idx] = self._advance(p, idx, gen, n)
            self.states = new_states
            self.step += n
            images.append(NeuralImage(self.weight(), self.t))
        return images


def _chunks(n, jobs):
    jobs = max(1, min(int(jobs), n))
    bounds = np.linspace(0, n, jobs + 1).astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def step_frames(retina: RetinaArray, frames) -> list[NeuralImage]:
    return retina.step_frames(frames)


def pixel_protocol(frames, row, col, v_g, v_ds, channels=CHANNELS) -> StimulusProtocol:
    """Single-device protocol equivalent to one pixel's view of ``frames``."""
    pulses = []
    t = 0.0
    for fr in frames:
        for ch in sorted(fr.power):
            w = float(fr.power[ch][row, col])
            if w > 0:
                pulses.append(LightPulse(ch, w, t, fr.duration))
        t += fr.duration
    chans = tuple(sorted(set(channels) | {p.channel_nm for p in pulses}))
    return StimulusProtocol(pulses=pulses, default_v_g=float(v_g), v_ds=v_ds, t_end=t,
                            channels=chans)


# -- frame and image I/O --------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Gray levels of a PGM image scaled to [0, 1]."""
    try:
        with Image.open(path) as im:
            full = 65535.0 if im.mode.startswith("I") else 255.0
            return np.asarray(im, dtype=float) / full
    except (UnidentifiedImageError, OSError) as exc:
        raise FrameError(f"{path}: cannot read PGM ({exc})") from None


def write_pgm(path, gray) -> None:
    Image.fromarray(np.asarray(gray, dtype=np.uint8)).save(path, format="PPM")


def load_frames(source, channel_nm: int = 405, full_scale_w: float = 50e-6,
                frame_duration: float = 0.1):
    """Frames from a directory of PGM files or a JSON manifest.

    PGM gray level ``g`` maps to ``g / maxval * full_scale_w`` watts on
    ``channel_nm``. A manifest looks like::

        {"v_g": -20.0,
         "frames": [{"duration": 0.1,
                     "power": {"405": [[0, 5e-5]], "532": {"pgm": "a.pgm", "full_scale_w": 1e-5}}}]}

    Returns ``(frames, meta)`` where ``meta`` holds any top-level manifest
    keys other than ``frames``.
    """
    source = Path(source)
    if not source.exists():
        raise FileNotFoundError(f"frames source {source} does not exist")
    if source.is_dir():
        files = sorted(source.glob("*.pgm"))
        if not files:
            raise FrameError(f"{source}: no .pgm files found")
        frames = []
        for f in files:
            frames.append(Frame({channel_nm: read_pgm(f) * full_scale_w}, frame_duration))
        return frames, {}
    try:
        doc = json.loads(source.read_text())
    except json.JSONDecodeError as exc:
        raise FrameError(f"{source}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise FrameError(f"{source}: manifest needs a 'frames' list")
    frames = []
    for i, fr in enumerate(doc["frames"]):
        if not isinstance(fr, dict) or "duration" not in fr or "power" not in fr:
            raise FrameError(f"frames[{i}]: needs 'duration' (s) and 'power'")
        power = {}
        for ch, spec in fr["power"].items():
            if isinstance(spec, dict):
                scale = float(spec.get("full_scale_w", full_scale_w))
                power[int(ch)] = read_pgm(source.parent / spec["pgm"]) * scale
            else:
                power[int(ch)] = np.asarray(spec, dtype=float)
        frames.append(Frame(power, float(fr["duration"])))
    return frames, {k: v for k, v in doc.items() if k != "frames"}


def write_images(images, out_dir, pgm: bool = False) -> Path:
    """Write ``frame_NNNN.csv`` per image and a ``manifest.json``.

    With ``pgm`` the images are also rendered on one symmetric linear scale,
    ``gray = round(255 * (w + m) / (2 m))`` with ``m = max |w|`` over all
    frames; the scale is recorded in the manifest.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    m = max((float(np.max(np.abs(im.weight))) for im in images), default=0.0)
    m = m if m > 0 else 1.0
    entries = []
    for k, im in enumerate(images):
        name = f"frame_{k:04d}"
        lines = [",".join(repr(float(x)) for x in row) for row in im.weight]
        (out_dir / f"{name}.csv").write_text("\n".join(lines) + "\n")
        entry = {"index": k, "t_s": im.t, "csv": f"{name}.csv"}
        if pgm:
            gray = np.clip(np.round(255 * (im.weight + m) / (2 * m)), 0, 255)
            write_pgm(out_dir / f"{name}.pgm", gray)
            entry["pgm"] = f"{name}.pgm"
        entries.append(entry)
    manifest = {"frames": entries}
    if pgm:
        manifest["pgm_mapping"] = {"weight_at_gray_0": -m, "weight_at_gray_255": m, "maxval": 255}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir / "manifest.json"
