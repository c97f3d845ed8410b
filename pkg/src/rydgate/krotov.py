"""Ensemble-robust gate optimization with the first-order Krotov method.

Each ensemble member is the open two-atom system with a shifted Rydberg level
and scaled control amplitudes. The functional is

    J = 1 - c sum_n sum_i Re tr[(O rho_i O^dag)^dag rho_{i,n}(T)]
          + sum_j lambda_j int |Omega_j - Omega_j^ref|^2 / S(t) dt

with the 16 operators ``rho_i = |a><b|`` of the logical basis and
``c = 1/(16 N)`` (or ``c = 1`` for the raw sum). Controls are piecewise
constant on the optimization grid. The update of step ``k`` uses the exact
derivative of the step propagator ``exp(dt L_k)``, evaluated with the new
forward states and the co-states of the previous iteration (sequential
update), which keeps the functional monotonically decreasing for a large
enough ``lambda``.

All propagation happens in the frame without the qubit splitting ``E1``
(see :mod:`rydgate.dynamics`); the target is converted accordingly.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from rydgate.core import (
    LOGICAL_INDICES,
    Perturbation,
    SystemParams,
    control_operators,
    excited_one_count,
    khz,
)
from rydgate.dynamics import (
    Liouvillian,
    PropagationError,
    logical_basis_operators,
    logical_evolution_map,
)
from rydgate.metrics import embed_logical, gate_fidelity
from rydgate.pulses import BLACKMAN_A, ControlSet

log = logging.getLogger(__name__)


class KrotovError(RuntimeError):
    """Raised when an iteration increases the functional beyond the allowed slack."""


@dataclass(frozen=True)
class EnsembleSpec:
    """Ensemble of perturbed Hamiltonians; member 0 is always the nominal one.

    The other members are taken from an even ``k x k`` grid over
    ``[-ryd_range, ryd_range] x [-amp_range, amp_range]`` without its centre,
    in pairs ``(p, -p)`` and starting with the points farthest from the centre.
    """

    n_members: int = 24
    ryd_range: float = khz(300.0)
    amp_range: float = 0.05

    def __post_init__(self):
        if int(self.n_members) != self.n_members or self.n_members < 1:
            raise ValueError("n_members must be a positive integer")
        if self.ryd_range < 0 or not 0 <= self.amp_range < 1:
            raise ValueError("ensemble ranges must be non-negative (amp_range < 1)")

    def grid_points(self) -> list:
        m = self.n_members - 1
        if m == 0:
            return []
        k = max(2, math.ceil(math.sqrt(m)))
        axis = np.linspace(-1.0, 1.0, k)
        pts = [(x, y) for x in axis for y in axis if not (abs(x) < 1e-12 and abs(y) < 1e-12)]
        # one representative per +/- pair: the one with the smaller coordinates
        reps = sorted({min(p, (-p[0], -p[1])) for p in pts}, key=lambda p: (-(p[0] ** 2 + p[1] ** 2), p))
        ordered = []
        for p in reps:
            ordered += [p, (-p[0], -p[1])]
        return ordered[:m]

    def perturbations(self) -> list:
        members = [Perturbation()]
        for x, y in self.grid_points():
            members.append(Perturbation(delta_ryd=float(x * self.ryd_range), amp_scale=float(1.0 + y * self.amp_range)))
        return members


def blackman_shape(n_steps: int) -> np.ndarray:
    """Update shape on the control samples, exactly zero on the first and last one."""
    x = np.linspace(0.0, 1.0, n_steps)
    a = BLACKMAN_A
    s = 0.5 * (1.0 - a - np.cos(2.0 * np.pi * x) + a * np.cos(4.0 * np.pi * x)) / (1.0 - a)
    s = np.clip(s, 0.0, None)
    s[0] = s[-1] = 0.0
    return s / s.max()


@dataclass
class KrotovConfig:
    """Optimization settings.

    ``lambdas`` holds one weight per channel; ``None`` picks a common value
    such that the first update peaks at ``update_fraction`` of the guess
    peak amplitude. ``shape`` is an optional array of update-shape values on
    the control samples (default :func:`blackman_shape`). ``compress``
    propagates the sum of the 16 basis operators instead of each one when
    the target is diagonal, which gives identical results (see
    :func:`basis_and_targets`).
    """

    lambdas: tuple = None
    update_fraction: float = 0.01
    max_iters: int = 50
    tol: float = 1e-9
    normalized: bool = True
    monotonic_slack: float = 1e-8
    shape: np.ndarray = None
    checkpoint_bytes: float = 1.5e9
    compress: bool = True

    def __post_init__(self):
        if self.lambdas is not None:
            lam = tuple(float(x) for x in self.lambdas)
            if len(lam) != 4 or not all(x > 0 for x in lam):
                raise ValueError("lambdas must be four positive numbers")
            self.lambdas = lam
        if not self.update_fraction > 0:
            raise ValueError("update_fraction must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValueError("max_iters must be a non-negative integer")

    def shape_for(self, n_steps: int) -> np.ndarray:
        if self.shape is None:
            return blackman_shape(n_steps)
        s = np.asarray(self.shape, dtype=float)
        if s.shape != (n_steps,) or np.any(s < 0) or np.any(s > 1) or s[0] != 0 or s[-1] != 0:
            raise ValueError("update shape must lie in [0, 1] and vanish at both ends")
        return s


@dataclass
class OptimizationRecord:
    iterations: list = field(default_factory=list)
    J: list = field(default_factory=list)
    fidelity_term: list = field(default_factory=list)
    penalty_term: list = field(default_factory=list)
    member_errors: list = field(default_factory=list)
    gate_errors: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    lambdas: tuple = None
    members: list = field(default_factory=list)
    converged: bool = False

    def append(self, it, J, jt, pen, member_err, gate_err, wall):
        self.iterations.append(it)
        self.J.append(float(J))
        self.fidelity_term.append(float(jt))
        self.penalty_term.append(float(pen))
        self.member_errors.append([float(x) for x in member_err])
        self.gate_errors.append([float(x) for x in gate_err])
        self.wall_time.append(float(wall))

    def log_line(self, k: int = -1) -> str:
        return (
            f"iter {self.iterations[k]:4d}  J {self.J[k]:.10e}  fidelity_term {self.fidelity_term[k]:.10e}  "
            f"penalty_term {self.penalty_term[k]:.3e}  worst_member_error {max(self.member_errors[k]):.3e}"
        )

    def to_csv(self, path) -> None:
        """One row per iteration; deterministic for fixed inputs (wall times go to JSON only)."""
        n = len(self.member_errors[0]) if self.member_errors else 0
        header = ["iter", "J", "fidelity_term", "penalty_term", "worst_member_error"]
        header += [f"member_{m}_error" for m in range(n)] + [f"member_{m}_gate_error" for m in range(n)]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k, it in enumerate(self.iterations):
                row = [it, self.J[k], self.fidelity_term[k], self.penalty_term[k], max(self.member_errors[k])]
                row += self.member_errors[k] + self.gate_errors[k]
                w.writerow([row[0]] + [format(float(v), ".17g") for v in row[1:]])

    def to_json(self, path, timing: bool = True) -> None:
        """Full record as JSON; ``timing=False`` drops the wall times so the file is reproducible."""
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        Path(path).write_text(json.dumps(d, indent=2, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, Perturbation):
        return asdict(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# ------------------------------------------------------------------ helpers


@dataclass(frozen=True)
class StateTarget:
    """State-to-state objective ``|initial> -> |final>`` (16-dim lab-frame vectors)."""

    initial: np.ndarray
    final: np.ndarray

    def __post_init__(self):
        for name in ("initial", "final"):
            v = np.asarray(getattr(self, name), dtype=complex)
            if v.shape != (16,) or not np.isclose(np.linalg.norm(v), 1.0):
                raise ValueError(f"{name} must be a normalized 16-component vector")
            object.__setattr__(self, name, v)


def _rotating_target(params: SystemParams, target, T: float) -> np.ndarray:
    """Target without the free ``E1`` phases, embedded in the 16-dim space."""
    n1 = excited_one_count()[LOGICAL_INDICES]
    free = np.exp(-1j * params.e1 * T * n1)
    return embed_logical(np.conj(free)[:, None] * np.asarray(target, dtype=complex))


def target_states(params: SystemParams, target, T: float) -> np.ndarray:
    """``O rho_i O^dag`` for the 16 logical basis operators, in the propagation frame."""
    big = _rotating_target(params, target, T)
    return np.array([big @ r @ big.conj().T for r in logical_basis_operators()])


def basis_and_targets(params: SystemParams, target, T: float, compress: bool = True) -> tuple:
    """Initial operators and their targets, as stacks ``(m, 16, 16)``.

    Every sector of :data:`rydgate.core.SECTORS` holds exactly one logical
    state and the generator maps each sector-pair block onto itself. For a
    diagonal target the 16 operators ``|a><b|`` (and their targets) occupy
    distinct blocks, so their sum carries the same information and ``m = 1``.
    Traces against block-diagonal operators are unchanged by the summation.
    """
    if isinstance(target, StateTarget):
        n1 = excited_one_count()
        final = np.exp(1j * params.e1 * T * n1) * target.final
        return np.outer(target.initial, target.initial.conj())[None], np.outer(final, final.conj())[None]
    big = _rotating_target(params, target, T)
    basis = logical_basis_operators()
    targets = np.array([big @ r @ big.conj().T for r in basis])
    if compress and np.allclose(big, np.diag(np.diag(big)), rtol=0, atol=1e-14):
        return basis.sum(axis=0)[None], targets.sum(axis=0)[None]
    return basis, targets


def _derivative_ops(amp_scale: float) -> np.ndarray:
    """``dH/dRe(Omega_j)`` and ``dH/dIm(Omega_j)`` for the four channels, shape ``(8, 16, 16)``."""
    x = control_operators().astype(complex)
    xd = np.conj(x.transpose(0, 2, 1))
    return amp_scale * np.concatenate([x + xd, 1j * (x - xd)])


@functools.lru_cache(maxsize=None)
def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@functools.lru_cache(maxsize=None)
def _quadrature(p: int, m: int):
    """Nodes, weights and monomial tables for the product of two Taylor series."""
    x, w = _gauss_legendre((p + m) // 2 + 1)
    return w, x[:, None] ** np.arange(p)[None, :], (1.0 - x)[:, None] ** np.arange(m)[None, :]


class Ensemble:
    """Lindblad generators of all members, stacked for batched propagation.

    States are arrays ``(N, m, 16, 16)``: member, operator, matrix.
    """

    def __init__(self, params: SystemParams, perturbations, controls: ControlSet):
        self.perturbations = list(perturbations)
        self.params = [replace(params, delta2=params.delta2 + p.delta_ryd) for p in self.perturbations]
        self.lious = [Liouvillian(q, controls, p.amp_scale) for q, p in zip(self.params, self.perturbations)]
        self.dops = np.array([_derivative_ops(p.amp_scale) for p in self.perturbations])
        self.dt = controls.grid.dt
        self.n_steps = controls.grid.n_steps
        self._stack()

    def __len__(self):
        return len(self.lious)

    def _stack(self):
        self.heff = np.stack([l.heff for l in self.lious], axis=1)[:, :, None]
        self.heff_dag = np.stack([l.heff_dag for l in self.lious], axis=1)[:, :, None]
        self.n_terms = np.max([l.n_terms for l in self.lious], axis=0)

    def set_samples(self, samples) -> None:
        for liou in self.lious:
            liou.set_samples(samples)
        self._stack()

    def generator(self, k: int) -> tuple:
        return self.heff[k], self.heff_dag[k], int(self.n_terms[k])

    def generator_for(self, k: int, sample) -> tuple:
        gens = [liou.hamiltonian_at(k, sample) for liou in self.lious]
        return (
            np.array([g[0] for g in gens])[:, None],
            np.array([g[1] for g in gens])[:, None],
            max(g[2] for g in gens),
        )

    def series(self, x, generator, adjoint=False):
        return self.lious[0].series(x, generator=generator, adjoint=adjoint)

    def step(self, x, generator, adjoint=False):
        return self.lious[0].step(x, generator=generator, adjoint=adjoint)


def functional_J(finals, targets, controls, reference, lambdas, shape, normalized=True) -> tuple:
    """Value of the functional and its two terms.

    ``finals`` has shape ``(N, m, 16, 16)`` and ``targets`` ``(m, 16, 16)``
    (see :func:`basis_and_targets`). The penalty skips samples with
    ``shape == 0`` and raises if the controls differ from the reference there.
    """
    finals = np.asarray(finals)
    targets = np.asarray(targets)
    n_members = finals.shape[0]
    overlaps = [np.vdot(targets, finals[m]).real for m in range(n_members)]
    c = _weight(targets, n_members, normalized)
    jt = 1.0 - c * math.fsum(overlaps)
    pen = penalty(controls, reference, lambdas, shape)
    norm = _perfect_overlap(targets)
    per_member = [1.0 - o / norm for o in overlaps]
    return jt + pen, {"fidelity_term": jt, "penalty_term": pen, "member_errors": per_member}


def _perfect_overlap(targets) -> float:
    """Overlap sum at a perfect gate: 16 for the operator basis, 1 for a state transfer."""
    return float(np.vdot(targets, targets).real)


def _weight(targets, n_members: int, normalized: bool) -> float:
    return 1.0 / (_perfect_overlap(targets) * n_members) if normalized else 1.0


def penalty(controls: ControlSet, reference: ControlSet, lambdas, shape) -> float:
    """``sum_j lambda_j int |Omega_j - Omega_j^ref|^2 / S dt`` over the samples with ``S > 0``."""
    diff = np.asarray(controls.samples) - np.asarray(reference.samples)
    shape = np.asarray(shape, dtype=float)
    off = shape == 0
    if np.any(np.abs(diff[:, off]) > 0):
        raise ValueError("controls differ from the reference where the update shape vanishes")
    on = ~off
    dt = controls.grid.dt
    terms = [lambdas[j] * math.fsum((np.abs(diff[j, on]) ** 2 / shape[on]) * dt) for j in range(4)]
    return math.fsum(terms)


def step_gradient(ens: Ensemble, generator, rho, sigma_next) -> np.ndarray:
    """Derivative of ``sum Re tr[sigma(t_{k+1})^dag exp(dt L_k) rho(t_k)]`` w.r.t. the 8 real controls.

    Summed over members and operators. The derivative of the step propagator
    is ``int_0^dt exp((dt-s)L) dL exp(sL) ds``; both exponentials are
    expanded in the Taylor terms of the step so the integrand is a polynomial
    in ``s``, integrated exactly by Gauss-Legendre.
    """
    a = np.array(ens.series(rho, generator))
    b = np.array(ens.series(sigma_next, generator, adjoint=True))
    w, va, vb = _quadrature(a.shape[0], b.shape[0])
    rho_s = np.tensordot(va, a, axes=(1, 0))  # (q, N, m, 16, 16)
    sig_dag = np.conj(np.tensordot(vb, b, axes=(1, 0)).swapaxes(-1, -2))
    mq = np.einsum("q,qnmab->nab", w, rho_s @ sig_dag - sig_dag @ rho_s)
    # d/de Re tr[sigma^dag (-i [h, rho])] = Re(-i tr(h M))
    return ens.dt * np.real(-1j * np.einsum("njab,nba->j", ens.dops, mq))


def krotov_update(gradient, shape_k: float, lambdas, dt: float) -> np.ndarray:
    """Complex control change of one step from the 8 real gradient components.

    ``Delta Omega_j = S_k / (2 lambda_j) * (dF/dRe + i dF/dIm) / dt``.
    """
    g = np.asarray(gradient)
    lam = np.asarray(lambdas, dtype=float)
    return shape_k / (2.0 * lam) * (g[:4] + 1j * g[4:]) / dt


# ------------------------------------------------------------------ driver


def propagate_forward(ens: Ensemble, basis) -> np.ndarray:
    """States of all members at ``T`` starting from the stack ``basis``."""
    x = np.broadcast_to(basis, (len(ens),) + basis.shape).copy()
    for k in range(ens.n_steps):
        x = ens.step(x, ens.generator(k))
    if not np.all(np.isfinite(x)):
        raise PropagationError("non-finite state during propagation")
    return x


def propagate_backward(ens: Ensemble, terminal, segment: int, store_all: bool):
    """Co-states from ``T`` back to 0.

    Returns ``(checkpoints, full)``: co-states every ``segment`` steps (and at
    ``T``), plus every grid point when ``store_all``.
    """
    n = ens.n_steps
    x = np.broadcast_to(terminal, (len(ens),) + terminal.shape).copy()
    full = [None] * (n + 1) if store_all else None
    ckpt = {n: x}
    if store_all:
        full[n] = x
    for k in range(n - 1, -1, -1):
        x = ens.step(x, ens.generator(k), adjoint=True)
        if store_all:
            full[k] = x
        if k % segment == 0:
            ckpt[k] = x
    if not np.all(np.isfinite(x)):
        raise PropagationError("non-finite co-state")
    return ckpt, full


def _segment_costates(ens: Ensemble, ckpt, lo: int, hi: int) -> dict:
    """Co-states at ``t_{lo+1} .. t_hi`` recomputed from the checkpoint at ``t_hi``."""
    x = ckpt[hi]
    out = {hi: x}
    for k in range(hi - 1, lo, -1):
        x = ens.step(x, ens.generator(k), adjoint=True)
        out[k] = x
    return out


def _gate_errors(ens: Ensemble, controls: ControlSet, target) -> list:
    if isinstance(target, StateTarget):
        return []
    out = []
    for q, p in zip(ens.params, ens.perturbations):
        U = logical_evolution_map(q, controls.scaled(p.amp_scale))
        out.append(1.0 - gate_fidelity(U, target))
    return out


def _sweep(ens, basis, ckpt, full, segment, store_all, update=None):
    """Forward sweep over all steps yielding ``(k, gradient, states)``.

    ``update(k, gradient)`` returns the new control sample of step ``k`` (or
    ``None`` to keep the old one); states are propagated with it.
    """
    n = ens.n_steps
    states = np.broadcast_to(basis, (len(ens),) + basis.shape).copy()
    for lo in range(0, n, segment):
        hi = min(n, lo + segment)
        sig = full if store_all else _segment_costates(ens, ckpt, lo, hi)
        for k in range(lo, hi):
            gen = ens.generator(k)
            grad = step_gradient(ens, gen, states, sig[k + 1])
            sample = update(k, grad) if update is not None else None
            if sample is not None:
                gen = ens.generator_for(k, sample)
            states = ens.step(states, gen)
    if not np.all(np.isfinite(states)):
        raise PropagationError("non-finite state during optimization")
    return states


def optimize(params: SystemParams, guess: ControlSet, target, ensemble: EnsembleSpec, config: KrotovConfig, callback=None):
    """Run Krotov iterations from ``guess``; returns ``(controls, record)``.

    ``target`` is the 4x4 lab-frame target (e.g. from
    :func:`rydgate.metrics.cphase_target` with ``e1_phase = E1 T``).
    Optimization is carried out on the piecewise-constant samples of
    ``guess``. ``callback(iteration, controls, record)`` is called after
    every iteration.
    """
    controls = guess.piecewise_constant()
    n = controls.grid.n_steps
    dt = controls.grid.dt
    shape = config.shape_for(n)
    perts = ensemble.perturbations()
    ens = Ensemble(params, perts, controls)
    basis, targets = basis_and_targets(params, target, controls.grid.duration, config.compress)
    c = _weight(targets, len(ens), config.normalized)
    slice_bytes = 16.0 * len(ens) * basis.size
    store_all = (n + 1) * slice_bytes <= config.checkpoint_bytes
    segment = n if store_all else max(1, int(math.ceil(math.sqrt(n))))

    record = OptimizationRecord(members=[asdict(p) for p in perts])
    t0 = time.perf_counter()
    finals = propagate_forward(ens, basis)
    lambdas = config.lambdas
    J, terms = functional_J(finals, targets, controls, controls, lambdas or (1.0,) * 4, shape, config.normalized)
    record.append(0, J, terms["fidelity_term"], 0.0, terms["member_errors"], _gate_errors(ens, controls, target),
                  time.perf_counter() - t0)
    log.info(record.log_line())
    if callback is not None:
        callback(0, controls, record)

    for it in range(1, config.max_iters + 1):
        t_start = time.perf_counter()
        ckpt, full = propagate_backward(ens, c * targets, segment, store_all)
        if lambdas is None:
            lambdas = _auto_lambda(ens, controls, basis, ckpt, full, shape, config, segment, store_all)
        record.lambdas = tuple(lambdas)
        old = controls.samples
        new = np.array(old, dtype=complex)

        def update(k, grad):
            if shape[k] == 0:
                return None
            new[:, k] = old[:, k] + krotov_update(grad, shape[k], lambdas, dt)
            return new[:, k]

        finals = _sweep(ens, basis, ckpt, full, segment, store_all, update)
        prev = controls
        controls = ControlSet(controls.grid, new)
        ens.set_samples(controls.samples)
        J_new, terms = functional_J(finals, targets, controls, prev, lambdas, shape, config.normalized)
        record.append(
            it, J_new, terms["fidelity_term"], terms["penalty_term"], terms["member_errors"],
            _gate_errors(ens, controls, target), time.perf_counter() - t_start,
        )
        log.info(record.log_line())
        if callback is not None:
            callback(it, controls, record)
        # the functional of iteration k-1 bounds the one of iteration k
        if J_new > record.J[-2] + config.monotonic_slack:
            raise KrotovError(f"functional increased at iteration {it}: {record.J[-2]!r} -> {J_new!r}")
        if abs(record.fidelity_term[-2] - terms["fidelity_term"]) < config.tol:
            record.converged = True
            break
    return controls, record


def _auto_lambda(ens, controls, basis, ckpt, full, shape, config, segment, store_all):
    """Common lambda giving a first update of ``update_fraction`` times the guess peak.

    Uses the gradient at the guess (states and co-states of the guess).
    """
    dt = controls.grid.dt
    peak = [0.0]

    def probe(k, grad):
        peak[0] = max(peak[0], float(np.max(np.abs(krotov_update(grad, shape[k], (1.0,) * 4, dt)))))
        return None

    _sweep(ens, basis, ckpt, full, segment, store_all, probe)
    peak_guess = float(np.max(np.abs(controls.samples)))
    if peak[0] == 0.0 or peak_guess == 0.0:
        return (1.0,) * 4
    return (peak[0] / (config.update_fraction * peak_guess),) * 4
