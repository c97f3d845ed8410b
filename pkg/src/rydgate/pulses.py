"""Pulse shapes, analytic CPHASE schedules and control-field containers.

Controls are piecewise constant: each of the ``n_steps`` intervals of a
:class:`TimeGrid` carries one complex sample per channel, evaluated at the
interval midpoint. Controls rendered from an analytic schedule also carry the
envelope at the two Gauss-Legendre nodes of every interval, which the unitary
propagator uses for a fourth-order Magnus step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rydgate.core import mhz, to_mhz

CHANNELS = ("blue_left", "red_left", "blue_right", "red_right")
CHANNEL_INDEX = {name: k for k, name in enumerate(CHANNELS)}
SHAPES = ("blackman", "gaussian")
SCHEMES = ("simultaneous", "stirap", "mixed", "overlapped", "custom")

BLACKMAN_A = 0.16
# default step for rendering analytic schedules (ns)
DEFAULT_DT = 0.05
GAUSS_OFFSET = math.sqrt(3.0) / 6.0


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_stop: float
    n_steps: int

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError("n_steps must be an integer >= 2")
        if not self.t_stop > self.t_start:
            raise ValueError("t_stop must exceed t_start")

    @property
    def dt(self) -> float:
        return (self.t_stop - self.t_start) / self.n_steps

    @property
    def duration(self) -> float:
        return self.t_stop - self.t_start

    @property
    def points(self) -> np.ndarray:
        """The ``n_steps + 1`` interval boundaries."""
        return np.linspace(self.t_start, self.t_stop, self.n_steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.t_start + (np.arange(self.n_steps) + 0.5) * self.dt

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t_start, self.t_stop, self.n_steps * factor)


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Four complex control channels (rad/ns) on a shared :class:`TimeGrid`.

    ``samples`` has shape ``(4, n_steps)`` in the channel order of
    :data:`CHANNELS`. ``nodes`` (optional, shape ``(2, 4, n_steps)``) holds the
    envelope at ``t_mid -/+ dt/(2 sqrt 3)`` for smooth analytic pulses and
    ``source`` the schedule they were rendered from.
    """

    grid: TimeGrid
    samples: np.ndarray
    nodes: np.ndarray = None
    source: object = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=complex)
        if s.shape != (4, self.grid.n_steps):
            raise ValueError(f"samples must have shape (4, {self.grid.n_steps}), got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("control samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if self.nodes is not None:
            q = np.array(self.nodes, dtype=complex)
            if q.shape != (2,) + s.shape:
                raise ValueError("nodes must have shape (2, 4, n_steps)")
            if not np.all(np.isfinite(q)):
                raise ValueError("control samples must be finite")
            q.setflags(write=False)
            object.__setattr__(self, "nodes", q)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "ControlSet":
        return cls(grid, np.zeros((4, grid.n_steps), dtype=complex))

    def channel(self, name: str) -> np.ndarray:
        return self.samples[CHANNEL_INDEX[name]]

    def with_samples(self, samples) -> "ControlSet":
        """New piecewise-constant set on the same grid (node samples are dropped)."""
        return ControlSet(self.grid, samples)

    def scaled(self, factor: float) -> "ControlSet":
        nodes = None if self.nodes is None else self.nodes * factor
        source = None if self.source is None else self.source.scaled(factor)
        return ControlSet(self.grid, self.samples * factor, nodes, source)

    def piecewise_constant(self) -> "ControlSet":
        return ControlSet(self.grid, self.samples)

    def peak(self) -> dict:
        """Peak modulus per channel."""
        return {name: float(np.max(np.abs(self.samples[k]))) for k, name in enumerate(CHANNELS)}

    def to_csv(self, path) -> None:
        write_controls_csv(self, path)

    @classmethod
    def from_csv(cls, path) -> "ControlSet":
        return read_controls_csv(path)


def blackman(t, t0: float, T: float, e0: float):
    """Blackman window of peak ``e0`` on ``[t0, t0 + T]``, zero outside."""
    if not T > 0:
        raise ValueError("pulse duration must be positive")
    t = np.asarray(t, dtype=float)
    x = (t - t0) / T
    a = BLACKMAN_A
    # grouped so that both edges evaluate to exactly zero
    val = 0.5 * e0 * ((1.0 - np.cos(2.0 * np.pi * x)) - a * (1.0 - np.cos(4.0 * np.pi * x)))
    return np.where((x >= 0.0) & (x <= 1.0), val, 0.0)


def gaussian(t, t0: float, T: float, e0: float):
    """Gaussian of width ``T/6`` centred in ``[t0, t0 + T]``.

    The tails are offset so the envelope is exactly zero at both window edges;
    the peak stays ``e0``.
    """
    if not T > 0:
        raise ValueError("pulse duration must be positive")
    t = np.asarray(t, dtype=float)
    x = (t - t0) / T
    floor = math.exp(-4.5)
    val = e0 * (np.exp(-0.5 * ((x - 0.5) * 6.0) ** 2) - floor) / (1.0 - floor)
    return np.where((x >= 0.0) & (x <= 1.0), val, 0.0)


_SHAPE_FUNCS = {"blackman": blackman, "gaussian": gaussian}


@dataclass(frozen=True)
class SubPulse:
    shape: str
    channel: str
    start: float
    duration: float
    amplitude: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if self.channel not in CHANNEL_INDEX:
            raise ValueError(f"unknown channel {self.channel!r}")
        if not self.duration > 0:
            raise ValueError("sub-pulse duration must be positive")
        if self.amplitude < 0:
            raise ValueError("sub-pulse amplitude must be non-negative")

    @property
    def stop(self) -> float:
        return self.start + self.duration

    def evaluate(self, t):
        return _SHAPE_FUNCS[self.shape](t, self.start, self.duration, self.amplitude)


@dataclass(frozen=True)
class PulseSchedule:
    """Declarative analytic pulse sequence of total duration ``T``."""

    scheme: str
    pulses: tuple
    T: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.T > 0:
            raise ValueError("total duration must be positive")
        eps = 1e-9 * self.T
        for p in self.pulses:
            if p.start < -eps or p.stop > self.T + eps:
                raise ValueError(f"sub-pulse on {p.channel} [{p.start}, {p.stop}] outside [0, {self.T}]")

    def default_steps(self, dt: float = None) -> int:
        return max(2000, int(math.ceil(self.T / (dt or DEFAULT_DT))))

    def evaluate(self, t) -> np.ndarray:
        """Envelopes of the four channels at times ``t``; shape ``(4, len(t))``."""
        t = np.asarray(t, dtype=float)
        out = np.zeros((4,) + t.shape, dtype=complex)
        for p in self.pulses:
            out[CHANNEL_INDEX[p.channel]] += p.evaluate(t)
        return out

    def render(self, n_steps: int = None, grid: TimeGrid = None, dt: float = None) -> ControlSet:
        """Sample on ``grid`` (default ``[0, T]`` with step ``DEFAULT_DT``, at least 2000 steps)."""
        if grid is None:
            grid = TimeGrid(0.0, self.T, int(n_steps) if n_steps is not None else self.default_steps(dt))
        t = grid.midpoints
        c = GAUSS_OFFSET * grid.dt
        nodes = np.stack([self.evaluate(t - c), self.evaluate(t + c)])
        return ControlSet(grid, self.evaluate(t), nodes, self)

    def scaled(self, factor: float) -> "PulseSchedule":
        pulses = tuple(
            SubPulse(p.shape, p.channel, p.start, p.duration, p.amplitude * factor) for p in self.pulses
        )
        return PulseSchedule(self.scheme, pulses, self.T, dict(self.meta))

    def shifted(self, channels, delay: float, clip: bool = False) -> "PulseSchedule":
        """Copy with the sub-pulses on ``channels`` delayed by ``delay`` (total duration unchanged).

        With ``clip`` the result may extend past ``[0, T]``; envelopes are then
        simply cut at the window edges when rendered.
        """
        pulses = tuple(
            SubPulse(p.shape, p.channel, p.start + delay, p.duration, p.amplitude) if p.channel in channels else p
            for p in self.pulses
        )
        if clip:
            out = object.__new__(PulseSchedule)
            for name, value in (("scheme", self.scheme), ("pulses", pulses), ("T", self.T), ("meta", dict(self.meta))):
                object.__setattr__(out, name, value)
            return out
        return PulseSchedule(self.scheme, pulses, self.T, dict(self.meta))

    def to_dict(self) -> dict:
        """Serializable form; times in ns, amplitudes in MHz."""
        return {
            "scheme": self.scheme,
            "T_ns": self.T,
            "pulses": [
                {
                    "shape": p.shape,
                    "channel": p.channel,
                    "start_ns": p.start,
                    "duration_ns": p.duration,
                    "amplitude_mhz": to_mhz(p.amplitude),
                }
                for p in self.pulses
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSchedule":
        pulses = tuple(
            SubPulse(
                p["shape"], p["channel"], float(p["start_ns"]), float(p["duration_ns"]), mhz(float(p["amplitude_mhz"]))
            )
            for p in d["pulses"]
        )
        return cls(d.get("scheme", "custom"), pulses, float(d["T_ns"]))


def _pair(shape, atom, start, duration, amp):
    return (
        SubPulse(shape, f"blue_{atom}", start, duration, amp),
        SubPulse(shape, f"red_{atom}", start, duration, amp),
    )


def _stirap_pair(atom, start, window, amp, delay_fraction, reverse=False):
    """Gaussian Stokes/pump pair filling ``[start, start + window]``.

    Forward order (|0> -> |r>): red (Stokes) first, blue (pump) delayed.
    Reverse order (|r> -> |0>) is the time mirror.
    """
    if not 0.0 < delay_fraction < 1.0:
        raise ValueError("STIRAP delay_fraction must lie in (0, 1) so that Stokes and pump overlap")
    width = window / (1.0 + delay_fraction)
    delay = delay_fraction * width
    first, second = ("blue", "red") if reverse else ("red", "blue")
    return (
        SubPulse("gaussian", f"{first}_{atom}", start, width, amp),
        SubPulse("gaussian", f"{second}_{atom}", start + delay, width, amp),
    )


def simultaneous_schedule(t_pi: float, t_2pi: float, amp_pi: float, amp_2pi: float) -> PulseSchedule:
    """pi (left) -> 2pi (right) -> pi (left), each a simultaneous Blackman pair."""
    if not (t_pi > 0 and t_2pi > 0):
        raise ValueError("pulse durations must be positive")
    T = 2 * t_pi + t_2pi
    pulses = (
        _pair("blackman", "left", 0.0, t_pi, amp_pi)
        + _pair("blackman", "right", t_pi, t_2pi, amp_2pi)
        + _pair("blackman", "left", t_pi + t_2pi, t_pi, amp_pi)
    )
    return PulseSchedule("simultaneous", pulses, T, {"t_pi": t_pi, "t_2pi": t_2pi})


def stirap_schedule(t_left: float, t_right: float, amp_left: float, amp_right: float, delay_fraction: float = 0.35):
    """STIRAP pi (left) -> there-and-back STIRAP (right) -> STIRAP pi back (left)."""
    if not (t_left > 0 and t_right > 0):
        raise ValueError("pulse durations must be positive")
    half = 0.5 * t_right
    pulses = (
        _stirap_pair("left", 0.0, t_left, amp_left, delay_fraction)
        + _stirap_pair("right", t_left, half, amp_right, delay_fraction)
        + _stirap_pair("right", t_left + half, half, amp_right, delay_fraction, reverse=True)
        + _stirap_pair("left", t_left + t_right, t_left, amp_left, delay_fraction, reverse=True)
    )
    return PulseSchedule(
        "stirap",
        pulses,
        2 * t_left + t_right,
        {"t_left": t_left, "t_right": t_right, "delay_fraction": delay_fraction},
    )


def mixed_schedule(
    t_left: float, t_right: float, overlap: float, amp_left: float, amp_right: float, delay_fraction: float = 0.35
):
    """STIRAP pi pairs on the left atom around a simultaneous 2pi pair on the right.

    The left pairs are moved inward by ``overlap`` on each side, so the total
    duration is ``2*t_left + t_right - 2*overlap``.
    """
    if not (t_left > 0 and t_right > 0):
        raise ValueError("pulse durations must be positive")
    if overlap < 0:
        raise ValueError("overlap must be non-negative")
    if overlap >= 0.5 * t_right or overlap > t_left:
        raise ValueError("overlap too large: the left pulses would cross the centre of the right pulse")
    right_start = t_left - overlap
    second_left = right_start + t_right - overlap
    pulses = (
        _stirap_pair("left", 0.0, t_left, amp_left, delay_fraction)
        + _pair("blackman", "right", right_start, t_right, amp_right)
        + _stirap_pair("left", second_left, t_left, amp_left, delay_fraction, reverse=True)
    )
    return PulseSchedule(
        "mixed",
        pulses,
        second_left + t_left,
        {"t_left": t_left, "t_right": t_right, "overlap": overlap, "delay_fraction": delay_fraction},
    )


def overlapped_schedule(T: float, amp_pi: float, amp_2pi: float) -> PulseSchedule:
    """Two consecutive pi pairs (left) running alongside one 2pi pair (right), all Blackman.

    This is the standard guess for optimization: the analytic sequence
    compressed so that both atoms are driven over the whole window ``T``.
    """
    if not T > 0:
        raise ValueError("gate duration must be positive")
    half = 0.5 * T
    pulses = (
        _pair("blackman", "left", 0.0, half, amp_pi)
        + _pair("blackman", "left", half, half, amp_pi)
        + _pair("blackman", "right", 0.0, T, amp_2pi)
    )
    return PulseSchedule("overlapped", pulses, T, {"t_gate": T})


def _steps_for(T, n_steps, dt):
    if n_steps is not None:
        return int(n_steps)
    if dt is not None:
        return max(2, int(math.ceil(T / dt)))
    return max(2000, int(math.ceil(T / DEFAULT_DT)))


def render_simultaneous(params, t_pi, t_2pi, amp_pi=None, amp_2pi=None, n_steps=None, dt=None) -> ControlSet:
    """Render the simultaneous scheme; missing amplitudes are calibrated first."""
    if amp_pi is None or amp_2pi is None:
        from rydgate.calibration import calibrate_simultaneous

        cal = calibrate_simultaneous(params, t_pi, t_2pi, dt=dt)
        amp_pi = cal["amp_pi"] if amp_pi is None else amp_pi
        amp_2pi = cal["amp_2pi"] if amp_2pi is None else amp_2pi
    sched = simultaneous_schedule(t_pi, t_2pi, amp_pi, amp_2pi)
    return sched.render(_steps_for(sched.T, n_steps, dt))


def render_stirap(params, t_left, t_right, amps, delay_fraction=0.35, n_steps=None, dt=None) -> ControlSet:
    amp_left, amp_right = amps
    sched = stirap_schedule(t_left, t_right, amp_left, amp_right, delay_fraction)
    return sched.render(_steps_for(sched.T, n_steps, dt))


def render_mixed(params, t_left, t_right, overlap, amps, delay_fraction=0.35, n_steps=None, dt=None) -> ControlSet:
    amp_left, amp_right = amps
    sched = mixed_schedule(t_left, t_right, overlap, amp_left, amp_right, delay_fraction)
    return sched.render(_steps_for(sched.T, n_steps, dt))


def stirap_adiabaticity(schedule: PulseSchedule, atom: str = "left"):
    """Product of peak amplitude and Stokes/pump overlap time for each STIRAP pair on ``atom``.

    The overlap time is the time during which both envelopes exceed half of
    their peak.
    """
    blues = sorted((p for p in schedule.pulses if p.channel == f"blue_{atom}"), key=lambda p: p.start)
    reds = sorted((p for p in schedule.pulses if p.channel == f"red_{atom}"), key=lambda p: p.start)
    products = []
    for b, r in zip(blues, reds):
        lo = max(b.start, r.start)
        hi = min(b.stop, r.stop)
        if hi <= lo:
            products.append(0.0)
            continue
        t = np.linspace(lo, hi, 2001)
        both = (b.evaluate(t) >= 0.5 * b.amplitude) & (r.evaluate(t) >= 0.5 * r.amplitude)
        overlap = both.mean() * (hi - lo)
        products.append(min(b.amplitude, r.amplitude) * overlap)
    return products


def spectrum(controls: ControlSet, channel: str):
    """Fourier spectrum of one channel in the rotating frame.

    Returns ``(freq_mhz, magnitude)`` sorted by frequency. ``magnitude`` is
    ``|dt * DFT|`` so that ``sum |x|^2 dt == sum magnitude^2 df`` with ``df``
    in GHz (1/ns). A sample modulated by ``exp(+i w t)`` peaks at ``+w``.
    """
    if controls.grid.n_steps < 16:
        raise ValueError("spectrum needs at least 16 samples")
    x = controls.channel(channel)
    dt = controls.grid.dt
    coeffs = dt * np.fft.fft(x)
    freq = np.fft.fftfreq(x.size, d=dt) * 1e3
    order = np.argsort(freq, kind="stable")
    return freq[order], np.abs(coeffs[order])


def write_controls_csv(controls: ControlSet, path) -> None:
    """Pulse dump: ``t_ns`` (interval midpoints) and Re/Im of each channel in MHz."""
    header = ["t_ns"]
    for name in CHANNELS:
        header += [f"{name}_re_mhz", f"{name}_im_mhz"]
    s = to_mhz(controls.samples)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(controls.grid.midpoints):
            row = [t]
            for ch in range(4):
                row += [s[ch, k].real, s[ch, k].imag]
            w.writerow([format(v, ".17g") for v in row])


def read_controls_csv(path) -> ControlSet:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    n = t.size
    if n < 2:
        raise ValueError("pulse dump needs at least two samples")
    dt = (t[-1] - t[0]) / (n - 1)
    grid = TimeGrid(t[0] - 0.5 * dt, t[-1] + 0.5 * dt, n)
    samples = np.empty((4, n), dtype=complex)
    for ch in range(4):
        samples[ch] = mhz(data[:, 1 + 2 * ch] + 1j * data[:, 2 + 2 * ch])
    return ControlSet(grid, samples)


def write_spectrum_csv(freq_mhz, magnitude, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency_mhz", "magnitude"])
        for f, m in zip(freq_mhz, magnitude):
            w.writerow([format(f, ".17g"), format(m, ".17g")])
