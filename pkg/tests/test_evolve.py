import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from conftest import random_unitary
from spinforge.model import SystemParams, SystematicError, exchange_couplings, rotating_frame_map, rwa_hamiltonian_4x4
from spinforge.noise import NoiseSpec
from spinforge.evolve import (
    CNOT,
    CZ,
    EnsembleResult,
    PropagationError,
    Propagator,
    chain_product,
    effective_propagator,
    ensemble_infidelity,
    from_rotating_frame,
    full_propagator,
    full_report,
    hermitian_expm,
    infidelity,
    project_4x4,
    propagate,
    target_gate,
    to_rotating_frame,
    write_ensemble_csv,
)
from spinforge.pulse import PulseParameterization, sample_envelope

TWO_PI = 2 * np.pi * 1e-3


def test_zero_hamiltonian_gives_identity():
    u = propagate(lambda t: np.zeros((t.size, 5, 5)), 100.0, 0.1)
    assert np.allclose(u.matrix, np.eye(5))
    assert u.is_unitary()


def test_constant_diagonal_exact():
    f = np.array([3.0, -1.5, 0.25, 7.0])
    u = propagate(lambda t: np.broadcast_to(np.diag(f), (t.size, 4, 4)), 123.0, 0.1)
    assert np.allclose(u.matrix, np.diag(np.exp(-1j * TWO_PI * f * 123.0)), atol=1e-12)


def test_time_ordering_matches_fine_reference():
    sx = np.array([[0, 1], [1, 0]])
    sz = np.diag([1.0, -1.0])

    def h(t):
        return np.cos(0.05 * t)[:, None, None] * sx + 2.0 * sz

    u = propagate(h, 100.0, 0.01).matrix
    ref = np.eye(2, dtype=complex)
    dt = 1e-3
    for t in (np.arange(100000) + 0.5) * dt:
        ref = expm(-1j * TWO_PI * dt * h(np.array([t]))[0]) @ ref
    assert np.abs(u - ref).max() < 1e-5


def test_step_size_violation_names_frequency():
    with pytest.raises(PropagationError, match="MHz"):
        propagate(lambda t: np.broadcast_to(np.diag([1e5, 0.0]), (t.size, 2, 2)), 10.0, 0.1)


def test_chain_product_order():
    rng = np.random.default_rng(1)
    steps = np.stack([random_unitary(rng) for _ in range(7)])
    ref = np.eye(4)
    for s in steps:
        ref = s @ ref
    assert np.allclose(chain_product(steps), ref)


@given(seed=st.integers(0, 10_000))
def test_hermitian_expm_unitary(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    h = (a + a.conj().T) * 100
    u = hermitian_expm(h, -1j * 0.37)
    assert np.allclose(u, expm(-1j * 0.37 * h), atol=1e-9)
    assert Propagator(u).is_unitary()


def test_exchange_only_middle_block_matches_two_level_oracle(params):
    t = 1 / (2 * 3.1401) * 1e3
    u = effective_propagator(params, None, t_f=t, dt=t / 2000, sw_dressing=False)
    h = rwa_hamiltonian_4x4(params, 0.0, 0.0)
    w, v = np.linalg.eigh(h[1:3, 1:3])
    block = v @ np.diag(np.exp(-1j * TWO_PI * w * t)) @ v.conj().T
    assert np.abs(u[1:3, 1:3] - block).max() < 1e-10
    assert abs(u[0, 0] - np.exp(-1j * TWO_PI * h[0, 0].real * t)) < 1e-10


def test_project_identity_and_leaky_permutation():
    u4, leak = project_4x4(np.eye(5))
    assert np.allclose(u4, np.eye(4)) and leak == pytest.approx(0.0)
    perm = np.eye(5)[[0, 4, 2, 3, 1]]
    _, leak = project_4x4(Propagator(perm))
    assert leak == pytest.approx(0.25)


def test_infidelity_examples():
    assert infidelity(CNOT, CNOT) == pytest.approx(0.0, abs=1e-15)
    assert infidelity(np.exp(0.7j) * CNOT, CNOT) == pytest.approx(0.0, abs=1e-15)
    assert infidelity(CZ @ CNOT, CNOT) == pytest.approx(0.75)


@given(seed=st.integers(0, 10_000), phi=st.floats(0, 2 * np.pi))
def test_infidelity_bounds_and_phase(seed, phi):
    rng = np.random.default_rng(seed)
    u, t = random_unitary(rng), random_unitary(rng)
    i = infidelity(u, t)
    assert 0 <= i <= 1
    assert infidelity(np.exp(1j * phi) * u, t) == pytest.approx(i, abs=1e-12)


def test_infidelity_batched():
    batch = np.stack([CNOT, CZ @ CNOT])
    assert np.allclose(infidelity(batch, CNOT), [0.0, 0.75])


def test_target_gate_lookup():
    assert np.array_equal(target_gate("CNOT"), CNOT)
    with pytest.raises(ValueError):
        target_gate("toffoli")


def test_rotating_frame_examples(params):
    t = 1 / params.ebar_z * 1e3 * 7
    u = Propagator(np.diag([2, 3, 5, 7]).astype(complex), "lab", t)
    assert np.allclose(to_rotating_frame(u, params).matrix, u.matrix, atol=1e-9)
    t = 123.4
    free = np.diag(np.exp(-1j * TWO_PI * params.ebar_z * t * np.array([1, 0, 0, -1])))
    r = to_rotating_frame(Propagator(free, "lab", t), params)
    assert np.allclose(r.matrix, np.eye(4), atol=1e-9) and r.frame == "rotating"
    rng = np.random.default_rng(3)
    v = Propagator(random_unitary(rng), "lab", t)
    back = from_rotating_frame(to_rotating_frame(v, params), params)
    assert np.abs(back.matrix - v.matrix).max() < 1e-12
    with pytest.raises(PropagationError):
        to_rotating_frame(to_rotating_frame(v, params), params)
    with pytest.raises(PropagationError):
        to_rotating_frame(Propagator(np.eye(5), "lab", 1.0), params)


def _pulse(t_f=100.0):
    return sample_envelope(PulseParameterization([0.3, 0.1], [0.2, -0.1], t_f), 0.1)


def test_full_and_effective_engines_agree(params):
    w = _pulse()
    u = full_propagator(params, w)
    assert u.is_unitary()
    rep = full_report(params, u, CNOT)
    eff = effective_propagator(params, w, dt=0.1)
    assert abs(rep.infidelity - infidelity(eff, CNOT)) < 1e-3
    assert 0 <= rep.leakage < 1e-4


def test_effective_dt_halving(params):
    w = sample_envelope(PulseParameterization([0.3, 0.1], [0.2, -0.1], 200.0), 0.05)
    a = infidelity(effective_propagator(params, w, dt=0.1), CNOT)
    b = infidelity(effective_propagator(params, w, dt=0.05), CNOT)
    assert abs(a - b) < max(0.1 * b, 1e-7)
    assert Propagator(effective_propagator(params, w, dt=0.1, sw_dressing=False)).is_unitary()


def test_sigma_zero_ensemble_is_deterministic(params):
    w = _pulse()
    det = infidelity(effective_propagator(params, w, dt=0.1), CNOT)
    r = ensemble_infidelity(params, None, NoiseSpec(sigma=0.0), w, CNOT, 5, 0)
    assert r.mean_infidelity == pytest.approx(det, rel=1e-12)
    assert r.std_error == 0.0


def test_ensemble_independent_of_blocking(params):
    w = _pulse()
    spec = NoiseSpec(sigma=2.4e4)
    a = ensemble_infidelity(params, None, spec, w, CNOT, 12, 7, block=12)
    b = ensemble_infidelity(params, None, spec, w, CNOT, 12, 7, block=5)
    c = ensemble_infidelity(params, None, spec, w, CNOT, 12, 7, block=4, workers=2)
    assert np.array_equal(a.per_realization, b.per_realization)
    assert np.array_equal(a.per_realization, c.per_realization)
    d = ensemble_infidelity(params, None, spec, w, CNOT, 12, 8)
    assert not np.array_equal(a.per_realization, d.per_realization)


def test_ensemble_grows_with_sigma(params):
    sigmas = [0.0, 2.4e3, 1e4, 4e4]
    means = [ensemble_infidelity(params, None, NoiseSpec(sigma=s), None, CNOT, 50, 0, t_f=100.0).mean_infidelity for s in sigmas]
    assert all(b >= a for a, b in zip(means, means[1:]))


def test_systematic_tunnel_error_changes_result(params):
    w = _pulse()
    a = ensemble_infidelity(params, None, None, w, CNOT, 1, 0).mean_infidelity
    b = ensemble_infidelity(params, SystematicError(alpha_t0=72.0), None, w, CNOT, 1, 0).mean_infidelity
    assert a != b


def test_ensemble_result_statistics(tmp_path):
    r = EnsembleResult.from_samples([1.0, 2.0, 3.0, 4.0], sigma=5.0)
    assert r.mean_infidelity == 2.5
    assert r.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    write_ensemble_csv(tmp_path / "e.csv", [r])
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "sigma_MHz,mean_infidelity,std_error,n"
    assert lines[1].startswith("5.0,2.5,")
