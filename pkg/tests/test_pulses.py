import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydgate.core import mhz
from rydgate.pulses import (
    BLACKMAN_A,
    CHANNELS,
    ControlSet,
    PulseSchedule,
    SubPulse,
    TimeGrid,
    blackman,
    gaussian,
    mixed_schedule,
    read_controls_csv,
    render_mixed,
    render_stirap,
    simultaneous_schedule,
    spectrum,
    stirap_adiabaticity,
    stirap_schedule,
    write_controls_csv,
)


def test_blackman_edges_and_peak():
    assert blackman(3.0, 3.0, 10.0, 2.5) == 0.0
    assert blackman(13.0, 3.0, 10.0, 2.5) == pytest.approx(0.0, abs=1e-15)
    assert blackman(8.0, 3.0, 10.0, 2.5) == pytest.approx(2.5, rel=1e-15)
    assert blackman(np.array([-1.0, 14.0]), 3.0, 10.0, 2.5).tolist() == [0.0, 0.0]


@given(st.floats(0.0, 1.0))
def test_blackman_formula(x):
    a = BLACKMAN_A
    expected = 0.5 * (1 - a - np.cos(2 * np.pi * x) + a * np.cos(4 * np.pi * x))
    assert blackman(x * 7.0, 0.0, 7.0, 1.0) == pytest.approx(expected, abs=1e-12)
    assert blackman(x * 7.0, 0.0, 7.0, 1.0) >= -1e-15


def test_gaussian_edges_and_peak():
    assert gaussian(0.0, 0.0, 6.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert gaussian(6.0, 0.0, 6.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    assert gaussian(3.0, 0.0, 6.0, 1.0) == pytest.approx(1.0)


def test_time_grid():
    g = TimeGrid(0.0, 10.0, 4)
    assert g.dt == 2.5
    assert g.midpoints.tolist() == [1.25, 3.75, 6.25, 8.75]
    with pytest.raises(ValueError):
        TimeGrid(0.0, 10.0, 1)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 4)


def test_control_set_validation():
    g = TimeGrid(0.0, 1.0, 4)
    with pytest.raises(ValueError):
        ControlSet(g, np.zeros((4, 3)))
    bad = np.zeros((4, 4), dtype=complex)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        ControlSet(g, bad)
    c = ControlSet.zeros(g)
    with pytest.raises(ValueError):
        c.samples[0, 0] = 1.0


def test_simultaneous_structure():
    s = simultaneous_schedule(50.0, 800.0, 1.8, 0.6)
    assert s.T == 900.0
    windows = sorted({(p.start, p.stop) for p in s.pulses})
    assert windows == [(0.0, 50.0), (50.0, 850.0), (850.0, 900.0)]
    c = s.render(n_steps=1800)
    first = c.grid.midpoints < 50.0
    assert np.sum(np.abs(c.channel("blue_right")[first])) == 0.0
    assert np.sum(np.abs(c.channel("red_right")[first])) == 0.0


@pytest.mark.parametrize(
    "sched",
    [
        simultaneous_schedule(50.0, 100.0, 1.8, 1.8),
        stirap_schedule(100.0, 200.0, 5.0, 1.5),
        mixed_schedule(100.0, 200.0, 50.0, 5.0, 0.7),
    ],
)
def test_rendered_envelopes(sched):
    c = sched.render(n_steps=2000)
    assert np.all(c.samples.imag == 0)
    assert np.all(c.samples.real >= 0)
    ends = sched.evaluate(np.array([0.0, sched.T]))
    assert np.max(np.abs(ends)) < 1e-12
    assert np.array_equal(sched.render(n_steps=2000).samples, c.samples)


def test_stirap_structure():
    s = stirap_schedule(300.0, 4000.0, 6.0, 1.5)
    assert s.T == 4600.0
    c = s.render(dt=1.0)
    mid = (c.grid.midpoints > 300.0) & (c.grid.midpoints < 4300.0)
    assert np.all(c.samples[:2, mid] == 0)
    # forward pair: red (Stokes) before blue (pump)
    red = min(p.start for p in s.pulses if p.channel == "red_left")
    blue = min(p.start for p in s.pulses if p.channel == "blue_left")
    assert red < blue
    with pytest.raises(ValueError):
        stirap_schedule(300.0, 4000.0, 6.0, 1.5, delay_fraction=1.0)


def test_stirap_adiabaticity_products():
    s = stirap_schedule(300.0, 4000.0, 6.0, 1.5)
    left = stirap_adiabaticity(s, "left")
    right = stirap_adiabaticity(s, "right")
    assert len(left) == 2 and len(right) == 2
    assert all(p > 10 for p in left)
    weak = stirap_adiabaticity(stirap_schedule(30.0, 40.0, 0.1, 0.1), "left")
    assert all(p <= 10 for p in weak)


def test_mixed_durations():
    assert mixed_schedule(300.0, 700.0, 250.0, 6.0, 0.7).T == pytest.approx(800.0)
    assert mixed_schedule(300.0, 700.0, 0.0, 6.0, 0.7).T == pytest.approx(1300.0)
    with pytest.raises(ValueError):
        mixed_schedule(300.0, 700.0, 350.0, 6.0, 0.7)
    c = render_mixed(None, 300.0, 700.0, 250.0, (6.0, 0.7), dt=1.0)
    assert c.grid.duration == pytest.approx(800.0)
    c = render_stirap(None, 300.0, 700.0, (6.0, 0.7), n_steps=500)
    assert c.grid.n_steps == 500


def test_schedule_rejects_pulse_outside_window():
    with pytest.raises(ValueError):
        PulseSchedule("custom", (SubPulse("blackman", "blue_left", 5.0, 10.0, 1.0),), 10.0)
    with pytest.raises(ValueError):
        SubPulse("square", "blue_left", 0.0, 1.0, 1.0)


def test_schedule_dict_roundtrip():
    s = mixed_schedule(300.0, 700.0, 250.0, 6.0, 0.7)
    s2 = PulseSchedule.from_dict(s.to_dict())
    t = np.linspace(0, s.T, 101)
    assert np.allclose(s.evaluate(t), s2.evaluate(t), atol=1e-12)


def test_spectrum_constant_and_shift():
    g = TimeGrid(0.0, 100.0, 1000)
    c = ControlSet(g, np.ones((4, 1000)))
    f, m = spectrum(c, "blue_left")
    assert f[np.argmax(m)] == 0.0
    shift = mhz(200.0)
    s = np.ones((4, 1000), dtype=complex)
    s[0] = np.exp(1j * shift * g.midpoints)
    f, m = spectrum(ControlSet(g, s), "blue_left")
    assert f[np.argmax(m)] == pytest.approx(200.0)
    with pytest.raises(ValueError):
        spectrum(ControlSet(TimeGrid(0, 1, 8), np.ones((4, 8))), "blue_left")


@settings(max_examples=20, deadline=None)
@given(st.integers(16, 300), st.integers(0, 2**31))
def test_spectrum_parseval(n, seed):
    rng = np.random.default_rng(seed)
    g = TimeGrid(0.0, 3.7, n)
    x = rng.normal(size=(4, n)) + 1j * rng.normal(size=(4, n))
    f, m = spectrum(ControlSet(g, x), "red_right")
    df = 1.0 / (n * g.dt)
    lhs = np.sum(np.abs(x[3]) ** 2) * g.dt
    assert np.sum(m**2) * df == pytest.approx(lhs, rel=1e-9)


def test_controls_csv_roundtrip(tmp_path, rng):
    g = TimeGrid(0.0, 20.0, 50)
    c = ControlSet(g, rng.normal(size=(4, 50)) + 1j * rng.normal(size=(4, 50)))
    write_controls_csv(c, tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t_ns" and header[1] == f"{CHANNELS[0]}_re_mhz"
    c2 = read_controls_csv(tmp_path / "c.csv")
    assert c2.grid.n_steps == 50
    assert c2.grid.duration == pytest.approx(20.0)
    assert np.allclose(c2.samples, c.samples, rtol=1e-15, atol=1e-15)


def test_scaled_and_shifted():
    s = simultaneous_schedule(10.0, 20.0, 1.0, 0.5)
    assert [p.amplitude for p in s.scaled(2.0).pulses] == [2 * p.amplitude for p in s.pulses]
    sh = s.shifted(("blue_right", "red_right"), 1.0)
    assert [p.start for p in sh.pulses if p.channel.endswith("right")] == [11.0, 11.0]
    with pytest.raises(ValueError):
        s.shifted(("blue_right",), 100.0)
