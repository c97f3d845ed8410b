"""Parameter scans of the analytic schemes, one row per scan point."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

from rydgate.calibration import (
    calibrate_simultaneous,
    calibrate_stirap_left,
    gate_point,
)
from rydgate.core import SystemParams, to_mhz
from rydgate.pulses import simultaneous_schedule, stirap_schedule

SPEED_LIMIT_COLUMNS = ("t_2pi_ns", "gate_error", "max_P_rr", "max_P_0i", "blockade_efficiency", "amp_pi_mhz", "amp_2pi_mhz")
STIRAP_COLUMNS = ("amp_right_mhz", "gate_error", "fidelity", "blockade_efficiency", "max_P_1r", "max_P_rr")


def parallel_map(func, items, jobs: int = 1) -> list:
    """``[func(x) for x in items]``, spread over ``jobs`` processes when ``jobs > 1``."""
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(x) for x in items]


def _speed_limit_point(t_2pi, params, t_pi, dt, amp_pi):
    cal = calibrate_simultaneous(params, t_pi, t_2pi, dt)
    amp_pi = cal["amp_pi"] if amp_pi is None else amp_pi
    row = gate_point(params, simultaneous_schedule(t_pi, t_2pi, amp_pi, cal["amp_2pi"]), dt)
    return {
        "t_2pi_ns": float(t_2pi),
        "gate_error": row["error"],
        "max_P_rr": row["max_P_rr"],
        "max_P_0i": row["max_P_0i"],
        "blockade_efficiency": row["blockade_efficiency"],
        "amp_pi_mhz": to_mhz(amp_pi),
        "amp_2pi_mhz": to_mhz(cal["amp_2pi"]),
    }


def speed_limit_scan(params: SystemParams, t_pi: float, t_2pi_values, dt: float = None, jobs: int = 1) -> list:
    """Simultaneous scheme with recalibrated amplitudes for each 2pi-pulse duration."""
    amp_pi = calibrate_simultaneous(params, t_pi, t_pi, dt)["amp_pi"]
    func = partial(_speed_limit_point, params=params, t_pi=t_pi, dt=dt, amp_pi=amp_pi)
    return parallel_map(func, t_2pi_values, jobs)


def _stirap_point(amp_right, params, t_left, t_right, amp_left, delay_fraction, dt):
    row = gate_point(params, stirap_schedule(t_left, t_right, amp_left, amp_right, delay_fraction), dt)
    return {
        "amp_right_mhz": to_mhz(amp_right),
        "gate_error": row["error"],
        "fidelity": row["fidelity"],
        "blockade_efficiency": row["blockade_efficiency"],
        "max_P_1r": row["max_P_1r"],
        "max_P_rr": row["max_P_rr"],
    }


def stirap_amplitude_scan(
    params: SystemParams,
    t_left: float,
    t_right: float,
    amp_right_values,
    amp_left: float = None,
    delay_fraction: float = 0.35,
    dt: float = None,
    jobs: int = 1,
) -> list:
    """Gate fidelity and blockade efficiency of the STIRAP scheme versus the right-atom peak amplitude.

    Amplitudes are in rad/ns. A missing ``amp_left`` is calibrated first.
    """
    if amp_left is None:
        amp_left = calibrate_stirap_left(params, t_left, delay_fraction, dt=dt)["amp_left"]
    func = partial(
        _stirap_point, params=params, t_left=t_left, t_right=t_right, amp_left=amp_left,
        delay_fraction=delay_fraction, dt=dt,
    )
    return parallel_map(func, amp_right_values, jobs)


def write_rows_csv(rows, columns, path) -> None:
    """CSV with a header row and floats at 17 significant digits."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([format(float(row[c]), ".17g") for c in columns])
