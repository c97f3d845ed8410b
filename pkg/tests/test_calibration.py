import numpy as np
import pytest

from rydgate.calibration import (
    blackman_return,
    blackman_transfer,
    calibrate_mixed,
    calibrate_simultaneous,
    calibrated_schedule,
    estimate_amplitude,
    gate_point,
)
from rydgate.pulses import simultaneous_schedule
from rydgate.scans import speed_limit_scan, write_rows_csv


def test_pi_pulse_calibration_transfers_population(params):
    cal = calibrate_simultaneous(params, 50.0, 800.0)
    assert cal["transfer_pi"] >= 0.999
    assert cal["return_2pi"] >= 0.999
    assert blackman_transfer(params, 50.0, cal["amp_pi"]) == pytest.approx(cal["transfer_pi"])
    # the adiabatic-elimination estimate is close to the scanned optimum
    assert cal["amp_pi"] == pytest.approx(estimate_amplitude(params, 50.0, np.pi), rel=0.1)


def test_return_is_not_transfer(params):
    amp = estimate_amplitude(params, 200.0, 2 * np.pi)
    assert blackman_return(params, 200.0, amp) > 0.9
    assert blackman_transfer(params, 200.0, amp) < 0.1


def test_mixed_scheme_calibrated_fidelity(params):
    cal = calibrate_mixed(params, 300.0, 700.0, 250.0)
    assert cal["fidelity"] >= 0.99


def test_calibrated_schedule_keeps_given_amplitudes(params):
    s = calibrated_schedule(params, "simultaneous", t_pi=50.0, t_2pi=100.0, amp_pi=1.0, amp_2pi=2.0)
    assert sorted({p.amplitude for p in s.pulses}) == [1.0, 2.0]
    with pytest.raises(ValueError):
        calibrated_schedule(params, "custom")


def test_gate_point_keys(params):
    row = gate_point(params, simultaneous_schedule(50.0, 200.0, 1.83, 0.9))
    assert set(row) == {"fidelity", "error", "blockade_efficiency", "max_P_1r", "max_P_rr", "max_P_0i"}
    assert 0 <= row["fidelity"] <= 1
    assert row["error"] == pytest.approx(1 - row["fidelity"])


def test_speed_limit_scan_rows(params, tmp_path):
    rows = speed_limit_scan(params, 50.0, [200.0, 400.0])
    assert [r["t_2pi_ns"] for r in rows] == [200.0, 400.0]
    assert rows[1]["max_P_rr"] < rows[0]["max_P_rr"]
    cols = ("t_2pi_ns", "gate_error")
    write_rows_csv(rows, cols, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "t_2pi_ns,gate_error" and len(lines) == 3
