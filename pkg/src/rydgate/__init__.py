"""Simulation and robust optimal control of two-atom Rydberg-blockade CPHASE gates.

Energies are angular frequencies in rad/ns with hbar = 1, times are in ns.
Quantities quoted in MHz/GHz are converted with :func:`rydgate.core.mhz`
and :func:`rydgate.core.ghz` (both include the factor 2*pi).
"""

from rydgate.calibration import calibrated_schedule
from rydgate.core import (
    Perturbation,
    SystemParams,
    apply_perturbation,
    build_dissipator_ops,
    build_h1q,
    build_h2q,
    ghz,
    khz,
    mhz,
)
from rydgate.dynamics import (
    Trajectory,
    logical_evolution_map,
    propagate_costate,
    propagate_lindblad,
    propagate_unitary,
)
from rydgate.krotov import EnsembleSpec, KrotovConfig, OptimizationRecord, StateTarget, optimize
from rydgate.metrics import (
    GateReport,
    blockade_efficiency,
    cphase_target,
    gate_fidelity,
    gate_report,
    regime_diagnostics,
)
from rydgate.pulses import (
    ControlSet,
    PulseSchedule,
    SubPulse,
    TimeGrid,
    mixed_schedule,
    overlapped_schedule,
    simultaneous_schedule,
    spectrum,
    stirap_schedule,
)
from rydgate.robustness import NoiseSpec, RobustnessCurve, mean_fidelity, robustness_sweep
from rydgate.scans import speed_limit_scan, stirap_amplitude_scan

__version__ = "0.1.0"

__all__ = [
    "ControlSet",
    "EnsembleSpec",
    "GateReport",
    "KrotovConfig",
    "NoiseSpec",
    "OptimizationRecord",
    "Perturbation",
    "PulseSchedule",
    "RobustnessCurve",
    "StateTarget",
    "SubPulse",
    "SystemParams",
    "TimeGrid",
    "Trajectory",
    "apply_perturbation",
    "blockade_efficiency",
    "build_dissipator_ops",
    "build_h1q",
    "build_h2q",
    "calibrated_schedule",
    "cphase_target",
    "gate_fidelity",
    "gate_report",
    "ghz",
    "khz",
    "logical_evolution_map",
    "mean_fidelity",
    "mhz",
    "mixed_schedule",
    "optimize",
    "overlapped_schedule",
    "propagate_costate",
    "propagate_lindblad",
    "propagate_unitary",
    "regime_diagnostics",
    "robustness_sweep",
    "simultaneous_schedule",
    "spectrum",
    "speed_limit_scan",
    "stirap_amplitude_scan",
    "stirap_schedule",
]
