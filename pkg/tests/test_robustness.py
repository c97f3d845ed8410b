import numpy as np
import pytest

from rydgate.core import Perturbation, khz
from rydgate.dynamics import logical_evolution_map
from rydgate.metrics import cphase_target, gate_fidelity
from rydgate.pulses import simultaneous_schedule
from rydgate.robustness import (
    NoiseSpec,
    RobustnessCurve,
    mean_fidelity,
    perturbation_for,
    perturbed_fidelity,
    robustness_sweep,
    sample_fidelities,
)


@pytest.fixture(scope="module")
def setup():
    from rydgate.core import SystemParams

    params = SystemParams()
    sched = simultaneous_schedule(50.0, 100.0, 1.8330289466837744, 1.8331)
    controls = sched.render(dt=0.25)
    return params, controls, cphase_target(np.pi, params.e1 * sched.T)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(sigma_amp=-0.1)
    with pytest.raises(ValueError):
        NoiseSpec(n_samples=0)
    with pytest.raises(ValueError):
        NoiseSpec().sigma("phase")
    assert NoiseSpec().n_samples == 1000
    z = NoiseSpec(rng_seed=3, n_samples=5).normals()
    assert np.array_equal(z, np.random.default_rng(3).standard_normal(5))


def test_perturbation_axes():
    assert perturbation_for("time", 1.5) == Perturbation(delta_time=1.5)
    assert perturbation_for("amp", 0.02) == Perturbation(amp_scale=1.02)
    assert perturbation_for("ryd", 0.1) == Perturbation(delta_ryd=0.1)


def test_zero_sigma_is_unperturbed(setup):
    params, controls, target = setup
    f0 = gate_fidelity(logical_evolution_map(params, controls), target)
    for which in ("time", "amp", "ryd"):
        m, e = mean_fidelity(params, controls, target, NoiseSpec(n_samples=10), which)
        assert m == f0 and e == 0.0


def test_small_sigma_limit(setup):
    params, controls, target = setup
    f0 = gate_fidelity(logical_evolution_map(params, controls), target)
    m, _ = mean_fidelity(params, controls, target, NoiseSpec(sigma_ryd=1e-13, n_samples=4), "ryd")
    assert abs(m - f0) < 1e-12


def test_reproducible_and_parallel_identical(setup):
    params, controls, target = setup
    spec = NoiseSpec(sigma_amp=0.02, n_samples=8, rng_seed=5)
    a = mean_fidelity(params, controls, target, spec, "amp")
    b = mean_fidelity(params, controls, target, spec, "amp")
    c = mean_fidelity(params, controls, target, spec, "amp", jobs=2)
    assert a == b == c


def test_sample_fidelities_match_direct(setup):
    params, controls, target = setup
    deltas = [-0.01, 0.03]
    vals = sample_fidelities(params, controls, target, "amp", deltas)
    for d, v in zip(deltas, vals):
        assert v == perturbed_fidelity(params, controls, target, Perturbation(amp_scale=1 + d))


def test_stderr_scaling(setup):
    params, controls, target = setup
    _, e1 = mean_fidelity(params, controls, target, NoiseSpec(sigma_ryd=khz(300), n_samples=100), "ryd")
    _, e2 = mean_fidelity(params, controls, target, NoiseSpec(sigma_ryd=khz(300), n_samples=200), "ryd")
    assert e2 / e1 == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_sweep_monotone_within_errors(setup, tmp_path):
    params, controls, target = setup
    sig = khz(np.array([0.0, 100.0, 200.0, 400.0]))
    curve = robustness_sweep(params, controls, target, sig, "ryd", NoiseSpec(n_samples=50))
    assert isinstance(curve, RobustnessCurve)
    assert np.all((curve.mean >= 0) & (curve.mean <= 1))
    for k in range(len(sig) - 1):
        assert curve.mean[k + 1] <= curve.mean[k] + 3 * max(curve.stderr[k], curve.stderr[k + 1], 1e-15)
    curve.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "sigma,mean_fidelity,stderr"
    assert float(lines[2].split(",")[0]) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        robustness_sweep(params, controls, target, sig[::-1], "ryd", NoiseSpec(n_samples=5))


def test_lindblad_flag(setup):
    params, controls, target = setup
    fu = perturbed_fidelity(params, controls, target, Perturbation())
    fl = perturbed_fidelity(params, controls, target, Perturbation(), lindblad=True)
    # decay from the intermediate level only lowers the fidelity
    assert fl < fu
    assert fl == pytest.approx(fu, abs=0.05)
