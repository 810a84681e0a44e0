import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinforge.model import SystemParams, ideal_hamiltonian, rwa_hamiltonian_4x4, rwa_noise_operator
from spinforge.noise import NoiseSpec
from spinforge.evolve import CNOT, effective_propagator, ensemble_infidelity, infidelity, midpoints
from spinforge.pulse import FilterModel, PulseParameterization, Waveform, apply_filter, sample_envelope
from spinforge.cost import (
    CostBreakdown,
    CostFunctional,
    _j2_from,
    _trap_weights,
    build_noise_response,
    fluence,
    j1,
    j2,
    total_cost,
)

C2 = (2 * np.pi * 1e-3) ** 2
PULSE = PulseParameterization([0.3, 0.1], [0.2, -0.1], 500.0)


@pytest.fixture(scope="module")
def wave():
    return sample_envelope(PULSE, 0.1)


def test_fluence_examples():
    n = 5001
    z = np.zeros(n)
    assert fluence(Waveform(0.1, z, z)) == 0.0
    x = np.full(n, 0.5)
    e = 0.25 * 500.0 * 1e-3  # mT^2 us
    assert fluence(Waveform(0.1, x, z)) == pytest.approx(2 * e)
    assert fluence(Waveform(0.1, z, x)) == pytest.approx(2 * e)
    assert fluence(Waveform(0.1, x, -x)) == pytest.approx(2 * e)


def test_breakdown_total_invariant():
    b = CostBreakdown.assemble(1e-4, 2e-5, 170.0, 1e-6)
    assert b.total == pytest.approx(1e-4 + 2e-5 + 1.7e-4)


def test_j1_exact_target_is_zero(params, wave):
    u = effective_propagator(params, wave, dt=0.1, sw_dressing=False)
    assert j1(params, wave, u, sw_dressing=False) == pytest.approx(0.0, abs=1e-12)


def test_j1_zero_pulse_two_level_oracle(params):
    w = Waveform(0.1, np.zeros(5001), np.zeros(5001))
    h = rwa_hamiltonian_4x4(params, 0.0, 0.0)
    e, v = np.linalg.eigh(h[1:3, 1:3])
    blk = v @ np.diag(np.exp(-2j * np.pi * 1e-3 * e * 500.0)) @ v.conj().T
    u = np.diag(np.exp(-2j * np.pi * 1e-3 * np.diag(h).real * 500.0))
    u[1:3, 1:3] = blk
    assert j1(params, w, CNOT, sw_dressing=False) == pytest.approx(infidelity(u, CNOT), abs=1e-10)


def test_j1_continuous(params):
    base = PULSE.to_vector()
    ref = j1(params, sample_envelope(PULSE, 0.1), CNOT)
    deltas = []
    for eps in (1e-2, 1e-3, 1e-4):
        q = PulseParameterization.from_vector(base + eps, 500.0)
        deltas.append(abs(j1(params, sample_envelope(q, 0.1), CNOT) - ref))
    assert deltas[0] > deltas[1] > deltas[2]
    assert deltas[2] < 1e-4


def test_noise_response_structure(params, wave):
    cache = build_noise_response(params, wave, 0.1)
    assert cache.grid[0] == 0.0 and cache.grid.size <= 2000
    assert np.allclose(cache.r_ops[0], rwa_noise_operator(params))
    assert np.allclose(cache.r_ops, cache.r_ops.conj().swapaxes(-1, -2))
    # unitary conjugation keeps the spectrum
    ev0 = np.linalg.eigvalsh(cache.r_ops[0])
    assert np.allclose(np.linalg.eigvalsh(cache.r_ops[-1]), ev0, atol=1e-15)
    assert np.allclose(cache.traces, cache.traces[0])


def test_j2_zero_sigma(params, wave):
    assert j2(build_noise_response(params, wave, 0.1), NoiseSpec(sigma=0.0)) == 0.0


def test_j2_scales_with_sigma_squared(params, wave):
    cache = build_noise_response(params, wave, 0.1)
    a = j2(cache, NoiseSpec(sigma=1200.0))
    b = j2(cache, NoiseSpec(sigma=2400.0))
    assert b == pytest.approx(4 * a, rel=1e-12)


@settings(max_examples=10)
@given(seed=st.integers(0, 10_000))
def test_j2_nonnegative(params, seed):
    rng = np.random.default_rng(seed)
    p = PulseParameterization(rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.3, 0.3, 3), 200.0)
    cache = build_noise_response(params, sample_envelope(p, 0.1), 0.1)
    assert j2(cache, NoiseSpec()) > -1e-8


def test_j2_grid_halving(params, wave):
    spec = NoiseSpec()
    a = j2(build_noise_response(params, wave, 0.1, max_points=2000), spec)
    b = j2(build_noise_response(params, wave, 0.1, max_points=1000), spec)
    assert b == pytest.approx(a, rel=1e-3)


@pytest.mark.parametrize("t_f", [100.0, 500.0])
def test_j2_matches_five_level_oracle(params, t_f):
    # zero drive, constant correlation: J2 needs only A = int R dt, exact in the eigenbasis
    h = ideal_hamiltonian(params, 0.0, 0.0).matrix
    lam, v = np.linalg.eigh(h)
    order = [int(np.argmax(np.abs(v[i]))) for i in range(5)]
    v, lam = v[:, order], lam[order]
    proj = np.zeros((5, 5))
    proj[4, 4] = 1.0
    m = v.conj().T @ proj @ v
    w = 2 * np.pi * 1e-3 * (lam[:, None] - lam[None, :])
    with np.errstate(all="ignore"):
        g = np.where(np.abs(w) > 1e-12, (np.exp(1j * w * t_f) - 1) / (1j * w), t_f)
    a = m * g
    oracle = C2 * (0.25 * np.trace((a @ a)[:4, :4]).real - np.trace(a[:4, :4]).real ** 2 / 16)
    cache = build_noise_response(params, None, 0.1, t_f=t_f)
    wq = _trap_weights(cache.grid)
    got = _j2_from(np.outer(wq, wq), cache.r_ops, cache.traces)
    assert got == pytest.approx(oracle, rel=0.05)


def test_j2_against_monte_carlo(params):
    # per-realization infidelity is ~chi-square distributed, so n=1000 gives ~5% standard error
    w = sample_envelope(PulseParameterization([0.3, 0.1], [0.2, -0.1], 200.0), 0.1)
    u0 = effective_propagator(params, w, dt=0.1)
    spec = NoiseSpec(sigma=240.0)
    val = j2(build_noise_response(params, w, 0.1), spec)
    mc = ensemble_infidelity(params, None, spec, w, u0, 1000, 0)
    assert infidelity(u0, u0) == pytest.approx(0.0, abs=1e-12)
    assert mc.mean_infidelity / val == pytest.approx(1.0, abs=0.2)


def test_total_cost_examples(params, wave):
    spec = NoiseSpec()
    b = total_cost(params, wave, CNOT, spec, xi=0.0)
    assert b.total == pytest.approx(b.j1 + b.j2)
    b2 = total_cost(params, wave, CNOT, spec)
    assert b2 == total_cost(params, wave, CNOT, spec)
    assert b2.xi == 1e-6 and b2.total == pytest.approx(b2.j1 + b2.j2 + 1e-6 * b2.fluence)
    assert 0 <= b2.j1 <= 1 and b2.fluence >= 0


def test_functional_agrees_with_direct_evaluation(params, wave):
    cf = CostFunctional(params, CNOT, 500.0, 2, NoiseSpec())
    b = cf.breakdown(PULSE.to_vector())
    ref = total_cost(params, wave, CNOT, NoiseSpec())
    assert b.j1 == pytest.approx(ref.j1, rel=1e-6)
    assert b.j2 == pytest.approx(ref.j2, rel=1e-2)
    assert b.fluence == pytest.approx(ref.fluence, rel=1e-6)


@pytest.mark.parametrize("flt", [None, FilterModel()])
def test_gradient_matches_finite_differences(params, flt):
    cf = CostFunctional(params, CNOT, 200.0, 3, NoiseSpec(sigma=2.4e4), flt=flt, max_points=400)
    rng = np.random.default_rng(4)
    x = rng.uniform(-0.4, 0.4, 6)
    _, g, _ = cf(x)
    h = 1e-5
    fd = np.array([(cf(x + h * e, gradient=False)[0] - cf(x - h * e, gradient=False)[0]) / (2 * h) for e in np.eye(6)])
    assert np.allclose(g, fd, rtol=1e-4, atol=1e-9)


def test_field_penalty_and_gradient(params):
    cf = CostFunctional(params, CNOT, 200.0, 1, None)
    x = np.array([1.3, 0.0])
    obj, g, b = cf(x)
    assert b.penalty > 0 and obj == pytest.approx(b.total + b.penalty)
    h = 1e-6
    fd = (cf(x + [h, 0], gradient=False)[0] - cf(x - [h, 0], gradient=False)[0]) / (2 * h)
    assert g[0] == pytest.approx(fd, rel=1e-4)


def test_filtered_functional_uses_filtered_waveform(params):
    flt = FilterModel(50.0)
    cf = CostFunctional(params, CNOT, 200.0, 2, None, flt=flt)
    x = np.array([0.3, 0.2, -0.1, 0.4])
    w = cf.waveform(x)
    ref = apply_filter(sample_envelope(PulseParameterization.from_vector(x, 200.0), 0.1), flt)
    assert w.filtered
    assert np.allclose(w.omega_x, ref.omega_x, atol=1e-6)


def test_j2_quasi_static_limit_on_prime_step_count(params):
    # 4271 steps has no divisor near the coarsening stride
    t_f = 427.1
    n = midpoints(t_f, 0.1).size
    b = 20.0
    u0 = effective_propagator(params, None, t_f=t_f, dt=0.1)
    ub = effective_propagator(params, None, t_f=t_f, dt=0.1, beta=np.full(n, b))
    cache = build_noise_response(params, None, t_f=t_f)
    w = _trap_weights(cache.grid)
    pred = _j2_from(w[:, None] * w[None, :] * b * b, cache.r_ops, cache.traces)
    assert cache.grid[-1] == pytest.approx(t_f)
    assert float(infidelity(ub, u0)) == pytest.approx(pred, rel=2e-3)
