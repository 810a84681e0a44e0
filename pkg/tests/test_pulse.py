import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinforge.pulse import (
    FilterModel,
    PulseError,
    PulseParameterization,
    Waveform,
    apply_filter,
    filter_samples,
    max_field,
    read_pulse_file,
    sample_envelope,
    write_pulse_file,
)

coef = st.lists(st.floats(-1, 1), min_size=3, max_size=3)


def single(k_max=1, a1=1.0, t_f=500.0):
    a = np.zeros(k_max)
    a[0] = a1
    return PulseParameterization(a, np.zeros(k_max), t_f)


def test_frequencies():
    p = PulseParameterization.zeros(3, 500.0)
    wx, wy = p.frequencies()
    assert np.allclose(wx, np.array([1, 3, 5]) * np.pi / 500)
    assert np.allclose(wy, np.array([2, 4, 6]) * np.pi / 500)


def test_vector_roundtrip():
    p = PulseParameterization([0.1, 0.2], [0.3, 0.4], 200.0)
    q = PulseParameterization.from_vector(p.to_vector(), 200.0)
    assert np.array_equal(q.a, p.a) and np.array_equal(q.b, p.b)


def test_invalid_parameterization():
    with pytest.raises(PulseError):
        PulseParameterization([1.0], [1.0, 2.0], 500)
    with pytest.raises(PulseError):
        PulseParameterization([1.0], [1.0], 0)


def test_zero_pulse_samples_zero():
    w = sample_envelope(PulseParameterization.zeros(11, 500.0), 0.1)
    assert w.omega_x.size == 5001
    assert not w.omega_x.any() and not w.omega_y.any()


def test_single_term_closed_form():
    w = sample_envelope(single(), 0.1)
    assert w.omega_x[2500] == pytest.approx(1.0)
    assert w.omega_x[0] == 0.0
    assert abs(w.omega_x[-1]) < 1e-12


@given(a=coef, b=coef)
def test_endpoint_value_and_slope_vanish(a, b):
    p = PulseParameterization(a, b, 500.0)
    h = 1e-3
    for t in (0.0, 500.0):
        x, y = p.evaluate(np.array([t - h, t, t + h]))
        assert abs(x[1]) < 1e-12 and abs(y[1]) < 1e-12
        assert abs((x[2] - x[0]) / (2 * h)) < 1e-5
        assert abs((y[2] - y[0]) / (2 * h)) < 1e-5


def test_sample_envelope_rejects_bad_dt():
    p = single()
    for dt in (0.0, -0.1, 1.0, 0.3):
        with pytest.raises(PulseError):
            sample_envelope(p, dt)


def test_waveform_validation():
    with pytest.raises(PulseError):
        Waveform(0.1, np.zeros(3), np.zeros(4))
    with pytest.raises(PulseError):
        Waveform(0.1, np.array([0, np.nan]), np.zeros(2))


def test_spline_interpolation():
    p = PulseParameterization([0.3, -0.2, 0.1], [0.05, 0.2, -0.1], 500.0)
    w = sample_envelope(p, 0.1)
    t = np.array([0.05, 123.456, 499.97])
    x, y = w.at(t)
    ex, ey = p.evaluate(t)
    assert np.allclose(x, ex, atol=1e-8) and np.allclose(y, ey, atol=1e-8)
    assert w.at(np.array([-1.0, 501.0]))[0].tolist() == [0.0, 0.0]


def test_filter_validation():
    with pytest.raises(PulseError):
        FilterModel(0.0)
    assert FilterModel(425.4).omega_c == pytest.approx(2 * np.pi * 0.4254)
    w = apply_filter(sample_envelope(single(), 0.1), FilterModel())
    with pytest.raises(PulseError):
        apply_filter(w, FilterModel())


def test_filter_slow_envelope_unchanged():
    w = sample_envelope(single(), 0.1)
    f = apply_filter(w, FilterModel())
    core = slice(500, 4500)
    assert np.max(np.abs(f.omega_x[core] - w.omega_x[core])) < 1e-4 * np.max(w.omega_x)
    assert f.filtered and not w.filtered


def test_filter_tone_at_cutoff():
    dt = 0.05
    t = np.arange(40000) * dt
    env = np.sin(np.pi * t / t[-1]) ** 2
    x = env * np.cos(2 * np.pi * 0.4254 * t)
    out = filter_samples(x, dt, FilterModel(425.4))
    mid = slice(19000, 21000)
    ratio = np.max(np.abs(out[mid])) / np.max(np.abs(x[mid]))
    assert ratio == pytest.approx(np.exp(-1), rel=1e-3)


def test_filter_energy_loss_highest_basis_term():
    a = np.zeros(11)
    a[-1] = 1.0
    w = sample_envelope(PulseParameterization(a, np.zeros(11), 500.0), 0.1)
    f = apply_filter(w, FilterModel())
    e0, e1 = np.sum(w.omega_x**2), np.sum(f.omega_x**2)
    assert e1 <= e0
    assert 1 - e1 / e0 < 0.01


def test_infinite_cutoff_is_identity():
    w = sample_envelope(single(3, 0.4), 0.1)
    f = apply_filter(w, FilterModel(np.inf))
    assert np.array_equal(f.omega_x, w.omega_x)


@given(a=coef, b=coef, alpha=st.floats(-2, 2), beta=st.floats(-2, 2))
def test_filter_linear_and_contractive(a, b, alpha, beta):
    u = sample_envelope(PulseParameterization(a, b, 200.0), 0.1)
    v = sample_envelope(PulseParameterization(b, a, 200.0), 0.1)
    flt = FilterModel()
    fu, fv = apply_filter(u, flt), apply_filter(v, flt)
    mix = Waveform(0.1, alpha * u.omega_x + beta * v.omega_x, alpha * u.omega_y + beta * v.omega_y)
    fm = apply_filter(mix, flt)
    assert np.allclose(fm.omega_x, alpha * fu.omega_x + beta * fv.omega_x, atol=1e-10)
    assert np.sum(fu.omega_x**2) <= np.sum(u.omega_x**2) + 1e-12
    peak = max_field(u).total
    assert abs(fu.omega_x[0]) <= 1e-3 * peak + 1e-15
    assert abs(fu.omega_y[-1]) <= 1e-3 * peak + 1e-15


def test_max_field():
    assert max_field(Waveform(0.1, np.zeros(5), np.zeros(5))).total == 0.0
    r = max_field(sample_envelope(single(1, 0.6), 0.1))
    assert r.x == pytest.approx(0.6) and r.y == 0.0 and r.total == pytest.approx(0.6)
    r = max_field(Waveform(0.1, np.array([0.3, -0.6]), np.array([0.4, 0.8])))
    assert (r.x, r.y, r.total) == pytest.approx((0.6, 0.8, 1.0))


def test_pulse_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    p = PulseParameterization(rng.normal(size=11) / 3, rng.normal(size=11) / 3, 500.0)
    path = tmp_path / "cnot.pulse"
    write_pulse_file(path, p)
    q = read_pulse_file(path)
    assert np.array_equal(q.a, p.a) and np.array_equal(q.b, p.b) and q.t_f == 500.0


def test_pulse_file_errors(tmp_path):
    path = tmp_path / "bad.pulse"
    path.write_text("k_max 2\nt_f_ns 500\na_mT b_mT\n0.1 0.2\n")
    with pytest.raises(PulseError):
        read_pulse_file(path)
    path.write_text("0.1 0.2\n")
    with pytest.raises(PulseError):
        read_pulse_file(path)


def test_waveform_csv_roundtrip(tmp_path):
    w = sample_envelope(single(2, 0.5), 0.1)
    w.to_csv(tmp_path / "w.csv")
    back = Waveform.from_csv(tmp_path / "w.csv")
    assert back.dt == pytest.approx(0.1)
    assert np.allclose(back.omega_x, w.omega_x, atol=1e-12)
