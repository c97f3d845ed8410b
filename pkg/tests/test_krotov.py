import numpy as np
import pytest

from rydgate.calibration import calibrate_simultaneous
from rydgate.core import SystemParams, basis_vector, khz
from rydgate.dynamics import PropagationError, propagate_unitary
from rydgate.krotov import (
    Ensemble,
    EnsembleSpec,
    KrotovConfig,
    KrotovError,
    OptimizationRecord,
    StateTarget,
    basis_and_targets,
    blackman_shape,
    functional_J,
    krotov_update,
    optimize,
    penalty,
    propagate_backward,
    propagate_forward,
    step_gradient,
)
from rydgate.metrics import cphase_target
from rydgate.pulses import ControlSet, PulseSchedule, TimeGrid, _pair

T = 10.0
N_STEPS = 40


def _coarse_controls():
    grid = TimeGrid(0.0, T, N_STEPS)
    t = grid.midpoints
    env = np.sin(np.pi * t / T) ** 2
    samples = np.array([(1.5 + 0.5j) * env * (1 + 0.3 * np.cos(t * (j + 1))) for j in range(4)])
    return ControlSet(grid, samples)


def test_ensemble_members():
    assert len(EnsembleSpec(1).perturbations()) == 1
    members = EnsembleSpec(3).perturbations()
    assert members[0].is_identity
    assert members[1].delta_ryd == pytest.approx(-members[2].delta_ryd)
    assert abs(members[1].delta_ryd) == pytest.approx(khz(300.0))
    assert sorted(m.amp_scale for m in members[1:]) == pytest.approx([0.95, 1.05])
    full = EnsembleSpec().perturbations()
    assert len(full) == 24
    pts = {(round(m.delta_ryd, 12), round(m.amp_scale, 12)) for m in full}
    assert len(pts) == 24
    # 23 perturbed members: all but the innermost one come with their mirror image
    unpaired = [m for m in full[1:] if (round(-m.delta_ryd, 12), round(2 - m.amp_scale, 12)) not in pts]
    assert len(unpaired) == 1
    assert abs(unpaired[0].amp_scale - 1) == pytest.approx(0.025) and unpaired[0].delta_ryd == 0
    with pytest.raises(ValueError):
        EnsembleSpec(0)


def test_update_shape():
    s = blackman_shape(101)
    assert s[0] == 0.0 and s[-1] == 0.0
    assert s.max() == pytest.approx(1.0)
    assert np.all(s >= 0)


def test_config_validation():
    with pytest.raises(ValueError):
        KrotovConfig(lambdas=(1.0, 1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        KrotovConfig(update_fraction=0.0)
    with pytest.raises(ValueError):
        KrotovConfig(shape=np.ones(10)).shape_for(10)
    assert KrotovConfig(lambdas=[1, 2, 3, 4]).lambdas == (1.0, 2.0, 3.0, 4.0)


def test_penalty_and_pinning_check():
    c = _coarse_controls()
    shape = blackman_shape(N_STEPS)
    assert penalty(c, c, (1.0,) * 4, shape) == 0.0
    s = np.array(c.samples)
    s[1, 5] += 0.1
    assert penalty(c.with_samples(s), c, (2.0,) * 4, shape) == pytest.approx(2.0 * 0.01 / shape[5] * c.grid.dt)
    s[0, 0] += 0.1
    with pytest.raises(ValueError):
        penalty(c.with_samples(s), c, (1.0,) * 4, shape)


def test_update_formula():
    g = np.arange(1.0, 9.0)
    du = krotov_update(g, 0.5, (1.0, 2.0, 4.0, 8.0), 0.1)
    assert du[1] == pytest.approx(0.5 / 4.0 * (2.0 + 6.0j) / 0.1)


def _functional(params, perts, controls, basis, targets):
    ens = Ensemble(params, perts, controls)
    finals = propagate_forward(ens, basis)
    return functional_J(finals, targets, controls, controls, (1.0,) * 4, np.ones(N_STEPS))[1]["fidelity_term"]


@pytest.mark.parametrize("compress", [True, False])
def test_gradient_matches_finite_differences(params, compress):
    c = _coarse_controls()
    perts = EnsembleSpec(2).perturbations()
    O = cphase_target(np.pi, params.e1 * T)
    basis, targets = basis_and_targets(params, O, T, compress)
    assert basis.shape[0] == (1 if compress else 16)
    ens = Ensemble(params, perts, c)
    _, full = propagate_backward(ens, targets / (16.0 * len(ens)), N_STEPS, True)
    states = np.broadcast_to(basis, (len(ens),) + basis.shape).copy()
    grads = []
    for k in range(N_STEPS):
        gen = ens.generator(k)
        grads.append(step_gradient(ens, gen, states, full[k + 1]))
        states = ens.step(states, gen)
    h = 1e-5
    for j, k in [(0, 5), (1, 17), (2, 22), (3, 30)]:
        for part, unit in ((0, 1.0), (1, 1j)):
            s1, s2 = np.array(c.samples), np.array(c.samples)
            s1[j, k] += h * unit
            s2[j, k] -= h * unit
            fd = -(_functional(params, perts, c.with_samples(s1), basis, targets)
                   - _functional(params, perts, c.with_samples(s2), basis, targets)) / (2 * h)
            an = grads[k][j + 4 * part]
            assert abs(fd - an) <= 1e-3 * abs(an)


def test_compressed_basis_is_equivalent(params):
    c = _coarse_controls()
    perts = EnsembleSpec(3).perturbations()
    O = cphase_target(np.pi, params.e1 * T)
    full = _functional(params, perts, c, *basis_and_targets(params, O, T, False))
    comp = _functional(params, perts, c, *basis_and_targets(params, O, T, True))
    assert comp == pytest.approx(full, abs=1e-13)
    # non-diagonal targets keep all 16 operators
    swap = np.eye(4)[[0, 2, 1, 3]]
    assert basis_and_targets(params, swap, T)[0].shape[0] == 16


def _small_problem(params):
    sched = PulseSchedule("custom", _pair("blackman", "left", 0.0, 10.0, 3.0) + _pair("blackman", "right", 0.0, 10.0, 3.0), 10.0)
    return sched.render(n_steps=100), cphase_target(np.pi, params.e1 * 10.0)


def test_optimize_monotone_and_pinned(params):
    guess, O = _small_problem(params)
    calls = []
    c, rec = optimize(params, guess, O, EnsembleSpec(2), KrotovConfig(max_iters=4),
                      callback=lambda it, ctl, r: calls.append(it))
    assert calls == [0, 1, 2, 3, 4]
    assert len(rec.J) == 5
    assert all(b <= a + 1e-10 for a, b in zip(rec.J, rec.J[1:]))
    assert rec.J[-1] < rec.J[0]
    assert np.array_equal(c.samples[:, 0], guess.samples[:, 0])
    assert np.array_equal(c.samples[:, -1], guess.samples[:, -1])
    assert len(rec.gate_errors[0]) == 2 and len(rec.member_errors[0]) == 2


def test_compressed_and_full_runs_agree(params):
    guess, O = _small_problem(params)
    _, a = optimize(params, guess, O, EnsembleSpec(1), KrotovConfig(max_iters=2, compress=True))
    _, b = optimize(params, guess, O, EnsembleSpec(1), KrotovConfig(max_iters=2, compress=False))
    assert np.allclose(a.J, b.J, rtol=0, atol=1e-12)


def test_checkpointing_matches_full_storage(params):
    guess, O = _small_problem(params)
    c1, r1 = optimize(params, guess, O, EnsembleSpec(1), KrotovConfig(max_iters=2))
    c2, r2 = optimize(params, guess, O, EnsembleSpec(1), KrotovConfig(max_iters=2, checkpoint_bytes=1.0))
    assert np.array_equal(c1.samples, c2.samples)
    assert r1.J == r2.J


def test_non_monotone_step_is_an_error(params):
    guess, O = _small_problem(params)
    # a negative slack turns every (decreasing) step into a violation
    with pytest.raises(KrotovError):
        optimize(params, guess, O, EnsembleSpec(1), KrotovConfig(max_iters=2, monotonic_slack=-1.0))


def test_oversized_update_surfaces_propagation_error(params):
    guess, O = _small_problem(params)
    with pytest.raises(PropagationError):
        optimize(params, guess, O, EnsembleSpec(1), KrotovConfig(lambdas=(1e-5,) * 4, max_iters=2))


def test_record_exports(tmp_path, params):
    guess, O = _small_problem(params)
    _, rec = optimize(params, guess, O, EnsembleSpec(2), KrotovConfig(max_iters=1))
    rec.to_csv(tmp_path / "r.csv")
    rec.to_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("iter,J,fidelity_term,penalty_term,worst_member_error,member_0_error")
    assert "wall" not in lines[0]
    assert len(lines) == 3
    assert "iter" in rec.log_line() and "worst_member_error" in rec.log_line()
    assert isinstance(OptimizationRecord(), OptimizationRecord)


def test_state_transfer_ladder_converges():
    # coherent 0 -> i -> r ladder of the left atom; the right atom idles in |1>
    params = SystemParams(tau_i=np.inf)
    t = 20.0
    amp = calibrate_simultaneous(params, t, t)["amp_pi"]
    guess = PulseSchedule("custom", _pair("blackman", "left", 0.0, t, 0.9 * amp), t).render(n_steps=100)
    target = StateTarget(basis_vector("01"), basis_vector("r1"))
    c, rec = optimize(params, guess, target, EnsembleSpec(1), KrotovConfig(max_iters=200, tol=0.0))
    assert rec.fidelity_term[0] > 0.05
    assert min(rec.fidelity_term) < 1e-3
    assert next(i for i, v in enumerate(rec.fidelity_term) if v < 1e-3) <= 200
    psi, _ = propagate_unitary(params, c, basis_vector("01"))
    assert abs(psi[basis_vector("r1").argmax()]) ** 2 > 0.999
