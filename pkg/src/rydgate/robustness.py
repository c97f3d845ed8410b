"""Monte-Carlo expectation of the gate fidelity under Gaussian parameter noise.

One axis fluctuates per estimate: the timing of the right-atom pulses
relative to the left-atom ones (``"time"``), a common relative amplitude
error (``"amp"``), or a shift of the Rydberg level (``"ryd"``). The
deviations are ``sigma * z`` with ``z`` standard normal draws fixed by the
seed, so a sweep over sigma reuses the same ``z`` at every point (common
random numbers) and the resulting curves are smooth.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from rydgate.core import Perturbation, SystemParams, apply_perturbation, to_mhz
from rydgate.dynamics import (
    logical_basis_operators,
    logical_evolution_map,
    propagate_operators,
)
from rydgate.metrics import gate_fidelity, liouville_fidelity
from rydgate.pulses import ControlSet

AXES = ("time", "amp", "ryd")
# CSV unit of sigma per axis
SIGMA_UNITS = {"time": "ns", "amp": "fraction", "ryd": "khz"}


@dataclass(frozen=True)
class NoiseSpec:
    """Widths of the Gaussian fluctuations (ns, fraction, rad/ns) and sampling settings."""

    sigma_time: float = 0.0
    sigma_amp: float = 0.0
    sigma_ryd: float = 0.0
    n_samples: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("sigma_time", "sigma_amp", "sigma_ryd"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise ValueError("n_samples must be a positive integer")

    def sigma(self, which: str) -> float:
        return getattr(self, f"sigma_{_check_axis(which)}")

    def with_sigma(self, which: str, value: float) -> "NoiseSpec":
        return replace(self, **{f"sigma_{_check_axis(which)}": value})

    def normals(self) -> np.ndarray:
        """The standard normal draws shared by every sigma of a sweep."""
        return np.random.default_rng(self.rng_seed).standard_normal(self.n_samples)


@dataclass
class RobustnessCurve:
    which: str
    sigma: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int = 0
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        """Columns ``sigma, mean_fidelity, stderr``; sigma in ns, fraction or kHz."""
        sig = self.sigma if self.which != "ryd" else to_mhz(np.asarray(self.sigma)) * 1e3
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "mean_fidelity", "stderr"])
            for s, m, e in zip(sig, self.mean, self.stderr):
                w.writerow([format(float(s), ".17g"), format(float(m), ".17g"), format(float(e), ".17g")])


def _check_axis(which: str) -> str:
    if which not in AXES:
        raise ValueError(f"unknown fluctuation axis {which!r}; expected one of {AXES}")
    return which


def perturbation_for(which: str, delta: float) -> Perturbation:
    _check_axis(which)
    if which == "time":
        return Perturbation(delta_time=delta)
    if which == "amp":
        return Perturbation(amp_scale=1.0 + delta)
    return Perturbation(delta_ryd=delta)


def perturbed_fidelity(params: SystemParams, controls: ControlSet, target, p: Perturbation, lindblad=False) -> float:
    """Gate fidelity of one perturbed experiment against a fixed target.

    The unitary path returns the logical-map fidelity; with ``lindblad`` the
    16 logical basis operators are propagated under the master equation and
    the average overlap is returned instead.
    """
    pp, pc = apply_perturbation(params, controls, p)
    if lindblad:
        finals = propagate_operators(pp, pc, logical_basis_operators())
        return liouville_fidelity(finals, target)
    return gate_fidelity(logical_evolution_map(pp, pc), target)


def _fidelity_task(args):
    return perturbed_fidelity(*args)


def sample_fidelities(params, controls, target, which: str, deltas, jobs: int = 1, lindblad=False) -> np.ndarray:
    """Fidelity for each deviation in ``deltas`` along axis ``which``."""
    tasks = [(params, controls, target, perturbation_for(which, float(d)), lindblad) for d in deltas]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return np.array(list(pool.map(_fidelity_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))))
    return np.array([_fidelity_task(t) for t in tasks])


def _mean_and_stderr(values) -> tuple:
    n = len(values)
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


def mean_fidelity(params, controls, target, spec: NoiseSpec, which: str, jobs: int = 1, lindblad=False) -> tuple:
    """Monte-Carlo estimate ``(mean, standard error)`` of the fidelity along one axis.

    Deviations ``dx = sigma * z`` use the draws of :meth:`NoiseSpec.normals`,
    which is the usual ``exp(-dx^2 / 2 sigma^2)`` weighting. ``sigma = 0``
    returns the unperturbed fidelity with zero error.
    """
    sigma = spec.sigma(which)
    if sigma == 0.0:
        return perturbed_fidelity(params, controls, target, Perturbation(), lindblad), 0.0
    values = sample_fidelities(params, controls, target, which, sigma * spec.normals(), jobs, lindblad)
    return _mean_and_stderr(values)


def robustness_sweep(params, controls, target, sigma_values, which: str, spec: NoiseSpec, jobs=1, lindblad=False):
    """One :func:`mean_fidelity` per sigma (ascending), with common random numbers."""
    sigma_values = np.asarray(sigma_values, dtype=float)
    if np.any(np.diff(sigma_values) < 0):
        raise ValueError("sigma_values must be sorted ascending")
    if np.any(sigma_values < 0):
        raise ValueError("sigma must be non-negative")
    means, errs = [], []
    for s in sigma_values:
        m, e = mean_fidelity(params, controls, target, spec.with_sigma(which, float(s)), which, jobs, lindblad)
        means.append(m)
        errs.append(e)
    return RobustnessCurve(_check_axis(which), sigma_values, np.array(means), np.array(errs), spec.n_samples)
