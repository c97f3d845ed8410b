"""Time propagation of the two-atom system.

Unitary propagation works sector by sector (|1> is never coupled, see
:data:`rydgate.core.SECTORS`). Piecewise-constant controls are propagated
with the exact exponential of each step Hamiltonian. Controls that carry
Gauss-node samples of a smooth envelope use the fourth-order commutator-free
Magnus step ``exp(-i dt [(H1 + H2)/2 - i sqrt(3) dt/12 [H2, H1]])`` instead,
which is still an exact exponential of a Hermitian matrix and therefore
unitary to machine precision.

The Lindblad propagator applies ``exp(L dt)`` per step through a truncated
Taylor series converged to machine precision. The qubit splitting ``E1`` only
dresses |1>, which is never coupled and commutes with both the Hamiltonian
and the dissipator. Density-matrix propagation is therefore carried out with
``E1 = 0`` and the free phases are restored exactly afterwards.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from rydgate.core import (
    INTERMEDIATE_LABELS,
    LOGICAL_INDICES,
    SECTORS,
    TWO_ATOM_LABELS,
    SystemParams,
    control_operators,
    drift_diagonal,
    excited_one_count,
    hamiltonian_batch,
    state_index,
)
from rydgate.pulses import ControlSet


class PropagationError(RuntimeError):
    """Raised when a propagation produces non-finite or non-physical results."""


@dataclass
class Trajectory:
    """Observables sampled along a propagation.

    ``populations`` maps two-atom labels (and ``"int"`` for the summed
    intermediate-level population) to arrays over ``times``; ``phases`` maps
    labels to ``arg <label|psi>`` (state-vector runs only).
    """

    times: np.ndarray
    populations: dict = field(default_factory=dict)
    phases: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name.startswith("P_"):
            return self.populations[name[2:]]
        if name.startswith("phase_"):
            return self.phases[name[6:]]
        raise KeyError(name)

    def columns(self) -> list:
        return [f"P_{k}" for k in self.populations] + [f"phase_{k}" for k in self.phases]

    def to_csv(self, path, columns=None) -> None:
        """Write ``t_ns`` plus the requested columns, in the given order."""
        columns = list(columns) if columns is not None else self.columns()
        data = [self.column(c) for c in columns]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_ns"] + columns)
            for k, t in enumerate(self.times):
                w.writerow([format(t, ".17g")] + [format(float(d[k]), ".17g") for d in data])


def _check_controls(controls: ControlSet):
    if not np.all(np.isfinite(controls.samples)):
        raise PropagationError("non-finite control samples")


def _record_indices(n_steps: int, stride: int) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    idx = np.arange(0, n_steps + 1, stride)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


CHUNK = 4096


ALL_SECTORS = (0, 1, 2, 3)
_SECTOR_OPS = [control_operators()[:, sec[:, None], sec[None, :]].reshape(4, -1) for sec in SECTORS]


def sector_hamiltonians(params: SystemParams, samples, include_e1: bool = True, which=ALL_SECTORS) -> list:
    """Two-atom Hamiltonians restricted to the sectors ``which``, for samples of shape ``(4, n)``."""
    samples = np.asarray(samples, dtype=complex)
    drift = drift_diagonal(params, include_e1)
    out = []
    for s in which:
        sec, ops = SECTORS[s], _SECTOR_OPS[s]
        d = sec.size
        up = (samples.T @ ops).reshape(-1, d, d)
        h = up + np.conj(up.transpose(0, 2, 1))
        h[:, np.arange(d), np.arange(d)] += drift[sec]
        out.append(h)
    return out


def _sector_generators(params: SystemParams, controls: ControlSet, lo: int, hi: int, which=ALL_SECTORS):
    """Effective Hamiltonians of steps ``lo..hi-1``, one ``(hi-lo, d, d)`` array per sector."""
    if controls.nodes is None:
        return sector_hamiltonians(params, controls.samples[:, lo:hi], which=which)
    c = math.sqrt(3.0) * controls.grid.dt / 12.0
    out = []
    for a, b in zip(
        sector_hamiltonians(params, controls.nodes[0, :, lo:hi], which=which),
        sector_hamiltonians(params, controls.nodes[1, :, lo:hi], which=which),
    ):
        # -i [b, a] is Hermitian, so the step stays unitary
        out.append(0.5 * (a + b) - 1j * c * (b @ a - a @ b))
    return out


def _sector_steps(params, controls, lo, hi, which=ALL_SECTORS):
    dt = controls.grid.dt
    out = []
    for h in _sector_generators(params, controls, lo, hi, which):
        w, v = np.linalg.eigh(h)
        out.append((v * np.exp(-1j * dt * w)[:, None, :]) @ np.conj(v.transpose(0, 2, 1)))
    return out


def sector_unitaries(params: SystemParams, controls: ControlSet, lo: int = 0, hi: int = None):
    """Per-step propagators restricted to each invariant sector.

    Returns one array ``(hi - lo, d, d)`` per sector of :data:`SECTORS`.
    """
    _check_controls(controls)
    hi = controls.grid.n_steps if hi is None else hi
    return _sector_steps(params, controls, lo, hi)


def _ordered_product(u: np.ndarray) -> np.ndarray:
    """``u[..., m-1, :, :] @ ... @ u[..., 0, :, :]`` by pairwise reduction over axis -3."""
    while u.shape[-3] > 1:
        m = u.shape[-3]
        paired = u[..., 1 : m - m % 2 : 2, :, :] @ u[..., 0 : m - m % 2 : 2, :, :]
        if m % 2:
            paired = np.concatenate([paired, u[..., m - 1 :, :, :]], axis=-3)
        u = paired
    return u[..., 0, :, :]


def sector_propagators(params: SystemParams, controls: ControlSet, which=ALL_SECTORS) -> list:
    """Full-horizon propagator of each sector in ``which``."""
    _check_controls(controls)
    total = [np.eye(SECTORS[s].size, dtype=complex) for s in which]
    n = controls.grid.n_steps
    for lo in range(0, n, CHUNK):
        for s, u in enumerate(_sector_steps(params, controls, lo, min(n, lo + CHUNK), which)):
            total[s] = _ordered_product(u) @ total[s]
    return total


def _labels_for(record):
    if record is None:
        return list(TWO_ATOM_LABELS)
    return [r for r in record if r != "int"]


def propagate_unitary(params: SystemParams, controls: ControlSet, initial, record=None, stride: int = 1):
    """Schrödinger propagation of a state or a set of column states.

    ``initial`` is a state vector of length 16 or a ``(16, k)`` array of
    column states (pass ``np.eye(16)`` for the full propagator). For a single
    state the returned :class:`Trajectory` holds populations of ``record``
    (default: every basis state), their phases and the aggregate ``"int"``
    population at every ``stride``-th grid point; for matrix input only the
    final time is recorded.
    """
    initial = np.asarray(initial, dtype=complex)
    if initial.shape[0] != 16 or initial.ndim > 2:
        raise ValueError("initial state must have 16 rows")
    n = controls.grid.n_steps
    if initial.ndim == 2:
        psi = np.empty_like(initial)
        for sec, u in zip(SECTORS, sector_propagators(params, controls)):
            psi[sec] = u @ initial[sec]
        if not np.all(np.isfinite(psi)):
            raise PropagationError("non-finite state during propagation")
        return psi, Trajectory(controls.grid.points[[-1]])
    _check_controls(controls)
    rec_idx = _record_indices(n, stride)
    snaps = np.empty((rec_idx.size, 16), dtype=complex)
    snaps[0] = initial
    psi = initial.copy()
    r = 1
    # chunks hold a whole number of strides so each record point closes a block
    chunk = stride * max(1, CHUNK // stride)
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        blocks = []
        for u in _sector_steps(params, controls, lo, hi):
            m = (hi - lo) // stride
            full = _ordered_product(u[: m * stride].reshape(m, stride, *u.shape[1:])) if m else u[:0]
            if (hi - lo) % stride:
                full = np.concatenate([full, _ordered_product(u[m * stride :])[None]])
            blocks.append(full)
        for k in range(blocks[0].shape[0]):
            for sec, b in zip(SECTORS, blocks):
                psi[sec] = b[k] @ psi[sec]
            snaps[r] = psi
            r += 1
    if not np.all(np.isfinite(psi)):
        raise PropagationError("non-finite state during propagation")
    return psi, _trajectory_from_amplitudes(controls.grid.points[rec_idx], snaps, record)


def _trajectory_from_amplitudes(times, snaps, record):
    pops = np.abs(snaps) ** 2
    traj = Trajectory(times)
    for lab in _labels_for(record):
        i = state_index(lab)
        traj.populations[lab] = pops[:, i]
        # exact zeros give angle 0 by the numpy convention
        traj.phases[lab] = np.angle(snaps[:, i])
    traj.populations["int"] = pops[:, [state_index(s) for s in INTERMEDIATE_LABELS]].sum(axis=1)
    return traj


def logical_evolution_map(params: SystemParams, controls: ControlSet) -> np.ndarray:
    """Projection of the time-evolution operator onto the logical subspace (4x4)."""
    out = np.zeros((4, 4), dtype=complex)
    for s, (sec, u) in enumerate(zip(SECTORS, sector_propagators(params, controls))):
        pos = int(np.flatnonzero(sec == LOGICAL_INDICES[s])[0])
        out[s, s] = u[pos, pos]
    if not np.all(np.isfinite(out)):
        raise PropagationError("non-finite evolution map")
    return out


# ---------------------------------------------------------------- Liouville space

# slices implementing A1 = |0><i| x 1 and A2 = 1 x |0><i| on 16x16 matrices
_JUMP_SLICES = (
    ((slice(8, 12), slice(8, 12)), (slice(0, 4), slice(0, 4))),
    ((slice(2, None, 4), slice(2, None, 4)), (slice(0, None, 4), slice(0, None, 4))),
)
_N_INTERMEDIATE = np.array([(a == 2) + (b == 2) for a in range(4) for b in range(4)], dtype=float)


class Liouvillian:
    """Piecewise-constant Lindblad generators for one control set.

    ``L_k(X) = -i (Heff_k X - X Heff_k^dag) + gamma sum_j A_j X A_j^dag`` with
    ``Heff = H - i gamma/2 sum_j A_j^dag A_j``; ``E1`` is dropped (see module
    docstring). All methods act on stacks of matrices ``(..., 16, 16)``.

    For controls with node samples ``H_k`` is the fourth-order Magnus
    Hamiltonian of the unitary propagator. The dissipator is constant in
    time, so it drops out of the Magnus commutator and the same effective
    Hamiltonian gives a fourth-order Lindblad step.
    """

    def __init__(self, params: SystemParams, controls: ControlSet, amp_scale: float = 1.0):
        _check_controls(controls)
        self.params = params
        self.gamma = 1.0 / params.tau_i
        self.dt = controls.grid.dt
        self.amp_scale = amp_scale
        self.n_steps = controls.grid.n_steps
        self.set_samples(controls.samples, controls.nodes)

    def set_samples(self, samples, nodes=None) -> None:
        if nodes is None:
            h = hamiltonian_batch(self.params, self.amp_scale * np.asarray(samples), include_e1=False)
        else:
            a = hamiltonian_batch(self.params, self.amp_scale * np.asarray(nodes[0]), include_e1=False)
            b = hamiltonian_batch(self.params, self.amp_scale * np.asarray(nodes[1]), include_e1=False)
            h = 0.5 * (a + b) - 1j * (math.sqrt(3.0) * self.dt / 12.0) * (b @ a - a @ b)
        diag = np.real(np.einsum("kaa->ka", h))
        shift = 0.5 * (diag.max(axis=1) + diag.min(axis=1))
        idx = np.arange(16)
        h[:, idx, idx] -= shift[:, None]
        self.h = h
        self.heff = h - 0.5j * self.gamma * np.diag(_N_INTERMEDIATE)
        self.heff_dag = np.conj(self.heff.transpose(0, 2, 1))
        self.n_terms = [self._terms(hk) for hk in h]

    def hamiltonian_at(self, k: int, sample) -> tuple:
        """``(Heff, Heff^dag, n_terms)`` for a single replacement control sample at step ``k``."""
        h = hamiltonian_batch(self.params, self.amp_scale * np.asarray(sample).reshape(4, 1), include_e1=False)[0]
        d = np.real(np.diag(h))
        h[np.arange(16), np.arange(16)] -= 0.5 * (d.max() + d.min())
        heff = h - 0.5j * self.gamma * np.diag(_N_INTERMEDIATE)
        return heff, np.conj(heff.T), self._terms(h)

    def _terms(self, h) -> int:
        bound = self.dt * (2.0 * np.abs(h).sum(axis=0).max() + 2.0 * self.gamma)
        if bound > 6.0:
            raise PropagationError("time step too large for the Liouvillian series; refine the grid")
        term, n = 1.0, 0
        while term > 1e-17 or n < 4:
            n += 1
            term *= bound / n
        return n

    def apply(self, x, heff, heff_dag, adjoint=False):
        if adjoint:
            out = 1j * (heff_dag @ x - x @ heff)
            if self.gamma:
                for src, dst in _JUMP_SLICES:
                    out[(..., *src)] += self.gamma * x[(..., *dst)]
        else:
            out = -1j * (heff @ x - x @ heff_dag)
            if self.gamma:
                for src, dst in _JUMP_SLICES:
                    out[(..., *dst)] += self.gamma * x[(..., *src)]
        return out

    def series(self, x, k=None, adjoint=False, generator=None):
        """Taylor terms ``a_p = (dt L)^p x / p!`` of ``exp(dt L) x`` (or of ``L^dag``)."""
        heff, heff_dag, n = generator if generator is not None else (self.heff[k], self.heff_dag[k], self.n_terms[k])
        terms = [x]
        for p in range(1, n + 1):
            terms.append(self.apply(terms[-1], heff, heff_dag, adjoint) * (self.dt / p))
        return terms

    def step(self, x, k=None, adjoint=False, generator=None):
        heff, heff_dag, n = generator if generator is not None else (self.heff[k], self.heff_dag[k], self.n_terms[k])
        acc = x.copy()
        term = x
        for p in range(1, n + 1):
            term = self.apply(term, heff, heff_dag, adjoint) * (self.dt / p)
            acc += term
        return acc


def _frame_phases(params: SystemParams, elapsed) -> np.ndarray:
    """Diagonal of exp(-i E1 N1 t) for each elapsed time; shape ``(len(t), 16)``."""
    n1 = excited_one_count()
    return np.exp(-1j * params.e1 * np.outer(np.atleast_1d(elapsed), n1))


def _to_lab(params, rho, elapsed):
    d = _frame_phases(params, elapsed)[0]
    return rho * d[:, None] * np.conj(d)[None, :]


def _to_rotating(params, rho, elapsed):
    d = _frame_phases(params, elapsed)[0]
    return rho * np.conj(d)[:, None] * d[None, :]


def _check_density_matrix(rho):
    if rho.shape != (16, 16):
        raise ValueError("density matrix must be 16x16")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("initial density matrix is not Hermitian")
    if np.trace(rho).real > 1.0 + 1e-9:
        raise ValueError("initial density matrix has trace > 1")


def propagate_lindblad(params: SystemParams, controls: ControlSet, initial, record=None, stride: int = 1):
    """Master-equation propagation ``d rho/dt = -i[H, rho] + L_D(rho)``.

    Returns the final density matrix and a :class:`Trajectory` of diagonal
    populations (plus the aggregate ``"int"``) at every ``stride``-th step.
    """
    rho = np.asarray(initial, dtype=complex)
    _check_density_matrix(rho)
    trace0 = np.trace(rho).real
    liou = Liouvillian(params, controls)
    n = controls.grid.n_steps
    rec_idx = _record_indices(n, stride)
    times = controls.grid.points[rec_idx]
    diag = np.empty((rec_idx.size, 16))
    x = rho.copy()
    r = 0
    if rec_idx[0] == 0:
        diag[0] = np.real(np.diag(x))
        r = 1
    for k in range(n):
        x = liou.step(x, k)
        if r < rec_idx.size and rec_idx[r] == k + 1:
            diag[r] = np.real(np.diag(x))
            r += 1
    if not np.all(np.isfinite(x)):
        raise PropagationError("non-finite density matrix")
    if abs(np.trace(x).real - trace0) > 1e-8:
        raise PropagationError("trace not conserved within 1e-8")
    traj = Trajectory(times)
    for lab in _labels_for(record):
        traj.populations[lab] = diag[:, state_index(lab)]
    traj.populations["int"] = diag[:, [state_index(s) for s in INTERMEDIATE_LABELS]].sum(axis=1)
    final = _to_lab(params, x, controls.grid.duration)
    final = 0.5 * (final + final.conj().T)
    return final, traj


def propagate_operators(params: SystemParams, controls: ControlSet, ops, amp_scale: float = 1.0) -> np.ndarray:
    """Apply the Lindblad propagator to a stack of (not necessarily Hermitian) operators.

    ``ops`` has shape ``(m, 16, 16)``; returns the stack at the final time.
    """
    x = np.array(ops, dtype=complex)
    liou = Liouvillian(params, controls, amp_scale)
    for k in range(controls.grid.n_steps):
        x = liou.step(x, k)
    if not np.all(np.isfinite(x)):
        raise PropagationError("non-finite density matrix")
    return _to_lab(params, x, controls.grid.duration)


def propagate_costate(params: SystemParams, controls: ControlSet, terminal) -> np.ndarray:
    """Backward propagation of a co-state from ``t = T`` to ``t = 0``.

    Integrates ``d sigma/dt = -i[H, sigma] - L_D^dag(sigma)`` and returns the
    co-state at all ``n_steps + 1`` grid points, shape ``(n + 1, 16, 16)``.
    ``L_D^dag`` is the Hilbert-Schmidt adjoint of the dissipator, so the pairing
    ``tr(sigma^dag rho)`` with a forward-propagated state is conserved.
    """
    liou = Liouvillian(params, controls)
    n = controls.grid.n_steps
    T = controls.grid.duration
    out = np.empty((n + 1, 16, 16), dtype=complex)
    x = _to_rotating(params, np.asarray(terminal, dtype=complex), T)
    out[n] = x
    for k in range(n - 1, -1, -1):
        x = liou.step(x, k, adjoint=True)
        out[k] = x
    if not np.all(np.isfinite(out)):
        raise PropagationError("non-finite co-state")
    d = _frame_phases(params, controls.grid.points - controls.grid.t_start)
    return out * d[:, :, None] * np.conj(d)[:, None, :]


def density_from_state(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def logical_basis_operators() -> np.ndarray:
    """The 16 operators ``|a><b|`` for a, b in the logical basis, shape ``(16, 16, 16)``."""
    ops = np.zeros((16, 16, 16), dtype=complex)
    for n, (a, b) in enumerate((a, b) for a in LOGICAL_INDICES for b in LOGICAL_INDICES):
        ops[n, a, b] = 1.0
    return ops
