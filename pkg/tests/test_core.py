import math

import numpy as np
import pytest
from conftest import random_density

from rydgate.core import (
    LOGICAL_INDICES,
    Perturbation,
    SystemParams,
    apply_dissipator,
    apply_perturbation,
    basis_vector,
    build_dissipator_ops,
    build_h1q,
    build_h2q,
    ghz,
    hamiltonian_batch,
    khz,
    logical_projector,
    mhz,
    state_index,
    swap_operator,
    to_mhz,
)
from rydgate.pulses import ControlSet, simultaneous_schedule


def test_unit_conversions():
    assert mhz(1.0) == pytest.approx(2 * math.pi * 1e-3)
    assert ghz(1.0) == pytest.approx(2 * math.pi)
    assert khz(300.0) == pytest.approx(mhz(0.3))
    assert to_mhz(mhz(57.26)) == pytest.approx(57.26)


def test_default_params_are_cesium_values(params):
    assert to_mhz(params.delta1) == pytest.approx(1273.0)
    assert params.delta2 == 0.0
    assert to_mhz(params.e1) == pytest.approx(9100.0)
    assert to_mhz(params.u) == pytest.approx(57.26)
    assert params.tau_i == 150.0
    assert SystemParams.from_units() == params


@pytest.mark.parametrize("kw", [{"u": 0.0}, {"u": -1.0}, {"tau_i": 0.0}, {"tau_i": -5.0}])
def test_params_reject_invalid(kw):
    with pytest.raises(ValueError):
        SystemParams(**kw)


def test_index_map():
    assert state_index("00") == 0
    assert state_index("01") == 1
    assert state_index("10") == 4
    assert state_index("rr") == 15
    assert state_index("0i") == 2
    assert list(LOGICAL_INDICES) == [0, 1, 4, 5]
    with pytest.raises(ValueError):
        state_index("x0")
    assert np.linalg.matrix_rank(logical_projector()) == 4


def test_h1q_zero_controls_is_drift(params):
    h = build_h1q(params, 0.0, 0.0)
    assert np.allclose(h, np.diag([0.0, ghz(9.1), ghz(1.273), 0.0]))


def test_h1q_hermitian_with_complex_controls(params, rng):
    for _ in range(20):
        ob, orr = rng.normal(size=2) + 1j * rng.normal(size=2)
        h = build_h1q(params, ob, orr)
        assert np.max(np.abs(h - h.conj().T)) < 1e-12
        assert h[0, 2] == pytest.approx(ob / 2)
        assert h[2, 3] == pytest.approx(orr / 2)


def test_h1q_rydberg_shift_is_linear(params):
    shifted = SystemParams(delta2=params.delta2 + khz(300.0))
    d = build_h1q(shifted, 0, 0) - build_h1q(params, 0, 0)
    assert d[3, 3] == pytest.approx(khz(300.0))
    d[3, 3] = 0.0
    assert np.all(d == 0)


def test_h2q_zero_controls(params):
    h = build_h2q(params)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0
    rr = state_index("rr")
    assert h[rr, rr].real == pytest.approx(2 * params.delta2 - params.u)
    assert h[rr, rr].real == pytest.approx(-mhz(57.26))


def test_h2q_hermitian_and_swap_symmetric(params, rng):
    S = swap_operator()
    for _ in range(10):
        c = tuple(rng.normal(size=2) + 1j * rng.normal(size=2))
        h = build_h2q(params, c, c)
        assert np.max(np.abs(h - h.conj().T)) < 1e-12
        assert np.max(np.abs(h @ S - S @ h)) < 1e-12
    h = build_h2q(params, (1.0, 0.0), (0.0, 0.5))
    assert np.max(np.abs(h @ S - S @ h)) > 1e-3


def test_hamiltonian_batch_matches_builder(params, rng):
    samples = rng.normal(size=(4, 5)) + 1j * rng.normal(size=(4, 5))
    hs = hamiltonian_batch(params, samples)
    for k in range(5):
        ref = build_h2q(params, samples[:2, k], samples[2:, k])
        assert np.allclose(hs[k], ref, atol=1e-14)


def test_dissipator_operators(params):
    ops = build_dissipator_ops(params)
    assert len(ops) == 2
    assert all(j.rate == pytest.approx(1 / 150.0) for j in ops)
    rho = np.outer(basis_vector("i0"), basis_vector("i0"))
    a1 = ops[0].operator
    assert np.allclose(a1 @ rho @ a1.conj().T, np.outer(basis_vector("00"), basis_vector("00")))


def test_dissipator_trace_free_and_hermitian(params, rng):
    ops = build_dissipator_ops(params)
    for _ in range(10):
        rho = random_density(rng)
        out = apply_dissipator(ops, rho)
        assert abs(np.trace(out)) < 1e-14
        assert np.max(np.abs(out - out.conj().T)) < 1e-14


def _controls():
    return simultaneous_schedule(10.0, 20.0, 1.0, 0.5).render(n_steps=400)


def test_identity_perturbation_returns_inputs(params):
    c = _controls()
    p2, c2 = apply_perturbation(params, c, Perturbation())
    assert p2 is params and c2 is c


def test_amplitude_perturbation_scales_exactly(params):
    c = _controls()
    _, c2 = apply_perturbation(params, c, Perturbation(amp_scale=1.05))
    assert np.array_equal(c2.samples, c.samples * 1.05)


def test_rydberg_perturbation_shifts_delta2(params):
    p2, c2 = apply_perturbation(params, _controls(), Perturbation(delta_ryd=khz(300.0)))
    assert p2.delta2 == pytest.approx(mhz(0.3))
    assert p2.u == params.u


def test_time_perturbation_delays_right_pulses(params):
    c = _controls()
    _, c2 = apply_perturbation(params, c, Perturbation(delta_time=2.0))
    assert np.array_equal(c2.samples[:2], c.samples[:2])
    t = c.grid.midpoints
    expected = c.source.evaluate(t - 2.0)[2]
    assert np.allclose(c2.samples[2], expected, atol=1e-14)
    # resampling path for controls without a source
    plain = ControlSet(c.grid, c.samples)
    _, c3 = apply_perturbation(params, plain, Perturbation(delta_time=2.0))
    assert np.allclose(c3.samples[2], expected, atol=2e-3)


def test_time_perturbation_rejects_large_shift(params):
    with pytest.raises(ValueError):
        apply_perturbation(params, _controls(), Perturbation(delta_time=100.0))


def test_perturbation_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        Perturbation(amp_scale=0.0)
    assert Perturbation().is_identity
