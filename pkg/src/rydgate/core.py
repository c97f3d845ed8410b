"""Level structure and Hamiltonians of two individually addressed Rydberg atoms.

Single-atom levels are ordered ``0, 1, i, r``; the two-atom basis state
``|ab>`` has index ``4*idx(a) + idx(b)`` (left atom first).

Energies are angular frequencies (rad/ns). Rabi frequencies follow the usual
convention: a resonant drive with amplitude ``Omega`` enters the Hamiltonian as
``Omega/2`` so that a pulse of area ``int Omega dt = pi`` inverts a two-level
transition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from rydgate.pulses import ControlSet

TWO_PI = 2.0 * math.pi

LEVELS = ("0", "1", "i", "r")
LEVEL_INDEX = {label: k for k, label in enumerate(LEVELS)}
LOGICAL_LABELS = ("00", "01", "10", "11")


def mhz(value):
    """Convert a frequency in MHz to an angular frequency in rad/ns."""
    return TWO_PI * 1e-3 * value


def ghz(value):
    """Convert a frequency in GHz to an angular frequency in rad/ns."""
    return TWO_PI * value


def khz(value):
    """Convert a frequency in kHz to an angular frequency in rad/ns."""
    return TWO_PI * 1e-6 * value


def to_mhz(omega):
    """Convert an angular frequency in rad/ns to MHz."""
    return omega / (TWO_PI * 1e-3)


def state_index(label: str) -> int:
    """Basis index of a two-atom label such as ``"0r"`` or ``"ii"``."""
    if len(label) != 2 or label[0] not in LEVEL_INDEX or label[1] not in LEVEL_INDEX:
        raise ValueError(f"invalid two-atom label {label!r}")
    return 4 * LEVEL_INDEX[label[0]] + LEVEL_INDEX[label[1]]


TWO_ATOM_LABELS = tuple(a + b for a in LEVELS for b in LEVELS)
LOGICAL_INDICES = np.array([state_index(s) for s in LOGICAL_LABELS])
# states summed into the aggregate "int" population
INTERMEDIATE_LABELS = ("0i", "i0", "ii", "ir", "ri")

# |1> is never coupled, so the two-atom Hamiltonian is block diagonal in the
# number of atoms sitting in |1> (and in which atom it is).
_ACTIVE = (0, 2, 3)
SECTORS = (
    np.array([4 * a + b for a in _ACTIVE for b in _ACTIVE]),
    np.array([4 * a + 1 for a in _ACTIVE]),
    np.array([4 + b for b in _ACTIVE]),
    np.array([5]),
)


def basis_vector(label: str) -> np.ndarray:
    psi = np.zeros(16, dtype=complex)
    psi[state_index(label)] = 1.0
    return psi


def logical_projector() -> np.ndarray:
    """Rank-4 projector onto span{|00>, |01>, |10>, |11>}."""
    p = np.zeros((16, 16))
    p[LOGICAL_INDICES, LOGICAL_INDICES] = 1.0
    return p


def swap_operator() -> np.ndarray:
    """Permutation exchanging the left and right atom."""
    s = np.zeros((16, 16))
    for a in range(4):
        for b in range(4):
            s[4 * b + a, 4 * a + b] = 1.0
    return s


def excited_one_count() -> np.ndarray:
    """Diagonal of the operator counting atoms in |1>."""
    return np.array([(a == 1) + (b == 1) for a in range(4) for b in range(4)], dtype=float)


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the two-atom system (rad/ns and ns).

    The defaults are the cesium parameters: one-photon detuning 1.273 GHz,
    two-photon detuning 0, qubit splitting 9.100 GHz, Rydberg interaction
    57.26 MHz and a 150 ns lifetime of the intermediate level.
    """

    delta1: float = ghz(1.273)
    delta2: float = 0.0
    e1: float = ghz(9.100)
    u: float = mhz(57.26)
    tau_i: float = 150.0
    atom_separation: float = 5.0  # um, not used in the dynamics

    def __post_init__(self):
        if not self.u > 0:
            raise ValueError("interaction energy u must be positive")
        if not self.tau_i > 0:
            raise ValueError("lifetime tau_i must be positive")

    @classmethod
    def from_units(
        cls,
        delta1_ghz: float = 1.273,
        delta2_mhz: float = 0.0,
        e1_ghz: float = 9.100,
        u_mhz: float = 57.26,
        tau_i_ns: float = 150.0,
        atom_separation_um: float = 5.0,
    ) -> "SystemParams":
        return cls(
            delta1=ghz(delta1_ghz),
            delta2=mhz(delta2_mhz),
            e1=ghz(e1_ghz),
            u=mhz(u_mhz),
            tau_i=tau_i_ns,
            atom_separation=atom_separation_um,
        )

    def to_units(self) -> dict:
        return {
            "delta1_ghz": self.delta1 / TWO_PI,
            "delta2_mhz": to_mhz(self.delta2),
            "e1_ghz": self.e1 / TWO_PI,
            "u_mhz": to_mhz(self.u),
            "tau_i_ns": self.tau_i,
            "atom_separation_um": self.atom_separation,
        }

    @property
    def decay_rate(self) -> float:
        return 1.0 / self.tau_i


@dataclass(frozen=True)
class Perturbation:
    """Deviation of an experiment from the nominal parameters.

    ``delta_ryd`` shifts the Rydberg level (rad/ns), ``amp_scale`` multiplies
    every control amplitude and ``delta_time`` delays the right-atom pulses
    relative to the left-atom ones (ns).
    """

    delta_ryd: float = 0.0
    amp_scale: float = 1.0
    delta_time: float = 0.0

    def __post_init__(self):
        if not self.amp_scale > 0:
            raise ValueError("amp_scale must be positive")

    @property
    def is_identity(self) -> bool:
        return self.delta_ryd == 0.0 and self.amp_scale == 1.0 and self.delta_time == 0.0


def build_h1q(params: SystemParams, omega_b: complex, omega_r: complex) -> np.ndarray:
    """Single-atom Hamiltonian in the basis {|0>, |1>, |i>, |r>}.

    ``omega_b`` couples |0> and |i>, ``omega_r`` couples |i> and |r>. Complex
    amplitudes sit on the upper triangle and their conjugates on the lower.
    """
    h = np.zeros((4, 4), dtype=complex)
    h[1, 1] = params.e1
    h[2, 2] = params.delta1
    h[3, 3] = params.delta2
    h[0, 2] = 0.5 * omega_b
    h[2, 0] = 0.5 * np.conj(omega_b)
    h[2, 3] = 0.5 * omega_r
    h[3, 2] = 0.5 * np.conj(omega_r)
    return h


def build_h2q(params: SystemParams, controls_left=(0.0, 0.0), controls_right=(0.0, 0.0)) -> np.ndarray:
    """Two-atom Hamiltonian ``H_L x 1 + 1 x H_R - u |rr><rr|``.

    Each of ``controls_left`` / ``controls_right`` is a pair ``(Omega_B, Omega_R)``.
    """
    eye = np.eye(4)
    h = np.kron(build_h1q(params, *controls_left), eye) + np.kron(eye, build_h1q(params, *controls_right))
    rr = state_index("rr")
    h[rr, rr] -= params.u
    return h


def drift_diagonal(params: SystemParams, include_e1: bool = True) -> np.ndarray:
    """Diagonal of the two-atom Hamiltonian at zero controls."""
    single = np.array([0.0, params.e1 if include_e1 else 0.0, params.delta1, params.delta2])
    d = (single[:, None] + single[None, :]).ravel()
    d[state_index("rr")] -= params.u
    return d


def control_operators() -> np.ndarray:
    """Operators ``X_j`` with ``H = H_drift + sum_j (Omega_j X_j + conj(Omega_j) X_j^dag)``.

    Channel order is blue-left, red-left, blue-right, red-right.
    """
    single = []
    for lo, hi in ((0, 2), (2, 3)):
        x = np.zeros((4, 4))
        x[lo, hi] = 0.5
        single.append(x)
    eye = np.eye(4)
    ops = [np.kron(x, eye) for x in single] + [np.kron(eye, x) for x in single]
    return np.array(ops)


def hamiltonian_batch(params: SystemParams, samples: np.ndarray, include_e1: bool = True) -> np.ndarray:
    """Two-atom Hamiltonians for control samples of shape ``(4, n)``; returns ``(n, 16, 16)``."""
    samples = np.asarray(samples, dtype=complex)
    x = control_operators()
    upper = np.einsum("jn,jab->nab", samples, x)
    h = upper + np.conj(upper.transpose(0, 2, 1))
    idx = np.arange(16)
    h[:, idx, idx] += drift_diagonal(params, include_e1)
    return h


@dataclass(frozen=True)
class JumpOperator:
    operator: np.ndarray
    rate: float


def build_dissipator_ops(params: SystemParams) -> list:
    """Spontaneous decay |i> -> |0> of either atom, both at rate ``1/tau_i``."""
    if not params.tau_i > 0:
        raise ValueError("lifetime tau_i must be positive")
    lower = np.zeros((4, 4))
    lower[0, 2] = 1.0
    eye = np.eye(4)
    rate = 1.0 / params.tau_i
    return [JumpOperator(np.kron(lower, eye), rate), JumpOperator(np.kron(eye, lower), rate)]


def apply_dissipator(jumps, rho: np.ndarray) -> np.ndarray:
    """Lindblad dissipator sum_k g_k (A rho A^dag - {A^dag A, rho}/2)."""
    out = np.zeros_like(rho, dtype=complex)
    for j in jumps:
        a = j.operator
        ada = a.conj().T @ a
        out += j.rate * (a @ rho @ a.conj().T - 0.5 * (ada @ rho + rho @ ada))
    return out


def apply_perturbation(params: SystemParams, controls: "ControlSet", p: Perturbation):
    """Return ``(params, controls)`` as seen by a perturbed experiment.

    The Rydberg shift enters as an extra two-photon detuning, the amplitude
    factor scales all four channels, and the right-atom channels are delayed by
    ``p.delta_time``. Controls rendered from an analytic schedule are shifted
    exactly by re-rendering; other controls are resampled linearly (zero
    outside the grid).
    """
    if p.is_identity:
        return params, controls
    grid = controls.grid
    if abs(p.delta_time) > grid.duration:
        raise ValueError("time shift larger than the grid span")
    new_params = replace(params, delta2=params.delta2 + p.delta_ryd) if p.delta_ryd != 0.0 else params
    if p.delta_time != 0.0:
        if controls.source is not None:
            shifted = controls.source.shifted(("blue_right", "red_right"), p.delta_time, clip=True)
            controls = shifted.render(grid=grid)
        else:
            samples = controls.samples.copy()
            t = grid.midpoints
            for ch in (2, 3):
                re = np.interp(t - p.delta_time, t, samples[ch].real, left=0.0, right=0.0)
                im = np.interp(t - p.delta_time, t, samples[ch].imag, left=0.0, right=0.0)
                samples[ch] = re + 1j * im
            controls = controls.with_samples(samples)
    if p.amp_scale != 1.0:
        controls = controls.scaled(p.amp_scale)
    return new_params, controls
