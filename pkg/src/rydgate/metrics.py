"""Gate fidelity, blockade efficiency and regime diagnostics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from rydgate.core import LOGICAL_INDICES, SystemParams, to_mhz

BLOCKADE_RATIO_THRESHOLD = 0.5
ELIMINATION_RATIO_THRESHOLD = 0.5
ADIABATICITY_THRESHOLD = 10.0


def gate_fidelity(U, O) -> float:
    """``(|tr(O^dag U)|^2 + tr(U U^dag)) / 20`` for 4x4 ``U`` and unitary target ``O``."""
    U = np.asarray(U, dtype=complex)
    O = np.asarray(O, dtype=complex)
    overlap = np.trace(O.conj().T @ U)
    return float((abs(overlap) ** 2 + np.trace(U @ U.conj().T).real) / 20.0)


def cphase_target(phi: float = np.pi, e1_phase: float = 0.0) -> np.ndarray:
    """``diag(e^{i phi}, 1, 1, 1)`` dressed with the free phase ``e^{-i e1_phase}`` per |1>.

    ``e1_phase`` is ``E1 * T`` for a gate of duration ``T``.
    """
    free = np.exp(-1j * e1_phase * np.array([0, 1, 1, 2]))
    return np.diag(np.array([np.exp(1j * phi), 1, 1, 1]) * free)


def embed_logical(O) -> np.ndarray:
    """Embed a 4x4 logical operator into the 16-dim two-atom space (zero elsewhere)."""
    out = np.zeros((16, 16), dtype=complex)
    out[np.ix_(LOGICAL_INDICES, LOGICAL_INDICES)] = np.asarray(O, dtype=complex)
    return out


def liouville_fidelity(finals, O) -> float:
    """Average overlap ``(1/16) sum_i Re tr[(O rho_i O^dag)^dag rho_i(T)]``.

    ``finals`` are the images of the 16 operators ``|a><b|`` of the logical
    basis (in the order of :func:`rydgate.dynamics.logical_basis_operators`).
    For a unitary logical map ``U`` this equals ``|tr(O^dag U)|^2 / 16``.
    """
    big = embed_logical(O)
    total = 0.0
    n = 0
    for a in LOGICAL_INDICES:
        for b in LOGICAL_INDICES:
            target = np.outer(big[:, a], big[:, b].conj())
            total += np.vdot(target, finals[n]).real
            n += 1
    return float(total / 16.0)


def leakage(U) -> float:
    """Frobenius norm of ``U^dag U - 1``; zero iff the logical subspace is preserved."""
    U = np.asarray(U, dtype=complex)
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0])))


def blockade_efficiency(traj_10, traj_00) -> float:
    """``max P_1r - P_1r(T)/2 - (max P_rr - P_rr(T)/2)``.

    ``traj_10`` must record ``"1r"`` (start in |10>) and ``traj_00`` must
    record ``"rr"`` (start in |00>), both over the same horizon. Each bracket
    lies in [0, 1], so B lies in [-1, 1]; it is negative when the |rr>
    excursion exceeds the |1r> one, as happens once the blockade breaks.
    """
    try:
        p1r = np.asarray(traj_10.populations["1r"])
        prr = np.asarray(traj_00.populations["rr"])
    except KeyError as exc:
        raise ValueError(f"trajectory lacks the population {exc.args[0]!r}") from None
    if not np.isclose(traj_10.times[-1], traj_00.times[-1]):
        raise ValueError("trajectories cover different horizons")
    return float(p1r.max() - 0.5 * p1r[-1] - (prr.max() - 0.5 * prr[-1]))


@dataclass
class GateReport:
    fidelity: float
    error: float
    leakage: float
    blockade_efficiency: float = None
    peaks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def gate_report(U, O, peaks=None, blockade=None) -> GateReport:
    f = gate_fidelity(U, O)
    return GateReport(
        fidelity=f,
        error=1.0 - f,
        leakage=leakage(U),
        blockade_efficiency=blockade,
        peaks=dict(peaks or {}),
    )


def regime_diagnostics(params: SystemParams, controls, stirap_products=None) -> dict:
    """Advisory checks of the blockade, adiabatic-elimination and STIRAP conditions.

    ``blockade_ratio`` is peak amplitude over ``u`` and ``elimination_ratio`` is
    peak amplitude over ``Delta_1``; each is flagged when above 0.5. STIRAP
    products ``Omega * overlap`` (see :func:`rydgate.pulses.stirap_adiabaticity`)
    are flagged when not above 10.
    """
    peaks = controls.peak() if hasattr(controls, "peak") else dict(controls)
    report = {"channels": {}, "flags": {}}
    for name, peak in peaks.items():
        b = peak / params.u
        e = peak / params.delta1
        report["channels"][name] = {
            "peak_mhz": to_mhz(peak),
            "blockade_ratio": b,
            "elimination_ratio": e,
        }
        report["flags"][f"{name}_blockade_violated"] = bool(b > BLOCKADE_RATIO_THRESHOLD)
        report["flags"][f"{name}_elimination_violated"] = bool(e > ELIMINATION_RATIO_THRESHOLD)
    if stirap_products is not None:
        report["stirap_products"] = [float(p) for p in stirap_products]
        report["flags"]["stirap_non_adiabatic"] = bool(any(p <= ADIABATICITY_THRESHOLD for p in stirap_products))
    report["ok"] = not any(report["flags"].values())
    return report
