"""Colored detuning noise from a bank of Ornstein-Uhlenbeck processes.

Frequencies are in Hz, times in ns and noise amplitudes in MHz.  Spectra are
two-sided densities in MHz^2/Hz, so that integrating over all real ``f``
returns the variance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

NS = 1e-9  # seconds per ns


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    alpha: float = 1.01
    sigma: float = 2400.0  # MHz
    f_low: float = 1e-2  # Hz
    f_high: float = 1e6  # Hz
    white_floor: float = 0.0  # MHz^2/Hz

    def __post_init__(self):
        if not 0.5 <= self.alpha <= 3.0:
            raise NoiseError(f"alpha must lie in [0.5, 3], got {self.alpha}")
        if not 0 < self.f_low < self.f_high:
            raise NoiseError(f"need 0 < f_low < f_high, got {self.f_low}, {self.f_high}")
        if self.sigma < 0:
            raise NoiseError(f"sigma must be non-negative, got {self.sigma}")
        if self.white_floor < 0:
            raise NoiseError("white_floor must be non-negative")

    def with_sigma(self, sigma: float) -> "NoiseSpec":
        return NoiseSpec(self.alpha, sigma, self.f_low, self.f_high, self.white_floor)


@dataclass
class OUBank:
    rates: np.ndarray  # 1/ns
    amplitudes: np.ndarray  # MHz, stationary std of each process
    states: np.ndarray = field(default=None)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.states is None:
            self.states = np.zeros_like(self.rates)
        if np.any(np.diff(self.rates) <= 0):
            raise NoiseError("rates must be strictly increasing")
        if np.any(self.amplitudes < 0):
            raise NoiseError("amplitudes must be non-negative")

    @property
    def variance(self) -> float:
        return float(np.sum(self.amplitudes**2))

    def spectrum(self, f) -> np.ndarray:
        """Two-sided Lorentzian-sum spectrum in MHz^2/Hz."""
        f = np.asarray(f, dtype=float)
        lam = self.rates / NS  # 1/s
        w = 2 * np.pi * f[..., None]
        return np.sum(2 * self.amplitudes**2 * lam / (lam**2 + w**2), axis=-1)

    def correlation(self, tau) -> np.ndarray:
        """Exact autocorrelation ``sum s^2 exp(-rate |tau|)`` in MHz^2."""
        tau = np.abs(np.asarray(tau, dtype=float))
        return np.sum(self.amplitudes**2 * np.exp(-self.rates * tau[..., None]), axis=-1)


@dataclass
class NoiseTrajectory:
    dt: float
    samples: np.ndarray
    seed: int

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.samples))

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self.dt, self.samples)


def build_bank(spec: NoiseSpec, processes_per_decade: int = 2) -> OUBank:
    if processes_per_decade < 1:
        raise NoiseError("processes_per_decade must be at least 1")
    decades = np.log10(spec.f_high / spec.f_low)
    count = int(round(decades * processes_per_decade)) + 1
    freqs = np.logspace(np.log10(spec.f_low), np.log10(spec.f_high), count)
    rates = 2 * np.pi * freqs * NS
    weights = rates ** (1.0 - spec.alpha)
    if spec.white_floor > 0:
        # a flat floor up to f_high is a Lorentzian with its corner at f_high
        lam_top = 2 * np.pi * spec.f_high
        floor_var = spec.white_floor * lam_top / 2.0
        power_var = max(spec.sigma**2 - floor_var, 0.0)
        var = power_var * weights / weights.sum()
        var[-1] += floor_var
    else:
        var = spec.sigma**2 * weights / weights.sum()
    return OUBank(rates=rates, amplitudes=np.sqrt(var))


def _ou_filter(bank: OUBank, dt: float, n: int, rng: np.random.Generator, batch: int | None):
    shape = (n,) if batch is None else (batch, n)
    total = np.zeros(shape)
    for rate, amp in zip(bank.rates, bank.amplitudes):
        if amp == 0:
            continue
        decay = np.exp(-rate * dt)
        kick = amp * np.sqrt(-np.expm1(-2 * rate * dt))
        x0 = amp * rng.standard_normal(shape[:-1] + (1,))
        xi = rng.standard_normal(shape)
        xi[..., 0] = 0.0
        # x[k] = decay * x[k-1] + kick * xi[k] with x[0] = x0 stationary
        y, _ = signal.lfilter([kick], [1.0, -decay], xi, axis=-1, zi=x0)
        total += y
    return total


def sample_trajectory(bank: OUBank, dt: float, n: int, seed: int) -> NoiseTrajectory:
    if dt <= 0:
        raise NoiseError("dt must be positive")
    if n < 1:
        raise NoiseError("n must be at least 1")
    rng = np.random.default_rng(seed)
    samples = _ou_filter(bank, dt, n, rng, None)
    return NoiseTrajectory(dt=dt, samples=samples, seed=seed)


def realization_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed of realization ``index``; independent of execution order."""
    return np.random.SeedSequence([int(master_seed), int(index)])


def sample_ensemble(bank: OUBank, dt: float, n: int, count: int, master_seed: int, start: int = 0):
    """Trajectories ``start .. start+count-1`` stacked as ``(count, n)``."""
    if dt <= 0 or n < 1:
        raise NoiseError("need dt > 0 and n >= 1")
    out = np.empty((count, n))
    for i in range(count):
        rng = np.random.default_rng(realization_seed(master_seed, start + i))
        out[i] = _ou_filter(bank, dt, n, rng, None)
    return out


def _power_law_norm(spec: NoiseSpec) -> float:
    """Amplitude A of the A/f^alpha term that gives total variance sigma^2."""
    a, lo, hi, c = spec.alpha, spec.f_low, spec.f_high, spec.white_floor
    if abs(a - 1.0) < 1e-12:
        band = np.log(hi / lo)
    else:
        band = (hi ** (1 - a) - lo ** (1 - a)) / (1 - a)
    flat = lo ** (1 - a)  # plateau below f_low, per unit A
    floor = c * hi
    one_sided = spec.sigma**2 / 2.0
    if floor > one_sided:
        raise NoiseError("white floor alone exceeds the requested variance")
    return (one_sided - floor) / (band + flat)


def analytic_spectrum(spec: NoiseSpec, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise NoiseError("frequencies must be positive")
    amp = _power_law_norm(spec)
    ff = np.clip(f, spec.f_low, None)
    s = amp * ff ** (-spec.alpha) + spec.white_floor
    return np.where(f > spec.f_high, 0.0, s)


def _structure_function(spec: NoiseSpec, tau_s: np.ndarray, points_per_decade: int) -> np.ndarray:
    # D(tau) = C(0) - C(tau) = 2 * int_0^inf S(f) 2 sin^2(pi f tau) df
    amp = _power_law_norm(spec)
    s_low = amp * spec.f_low ** (-spec.alpha) + spec.white_floor
    x = 2 * np.pi * spec.f_low * tau_s
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    x_minus_sin = np.where(small, x**3 / 6 - x**5 / 120, xs - np.sin(xs))
    with np.errstate(divide="ignore", invalid="ignore"):
        low = np.where(tau_s > 0, 2 * s_low * x_minus_sin / (2 * np.pi * np.where(tau_s > 0, tau_s, 1.0)), 0.0)
    decades = np.log10(spec.f_high / spec.f_low)
    f = np.logspace(np.log10(spec.f_low), np.log10(spec.f_high), int(decades * points_per_decade) + 1)
    s = amp * f ** (-spec.alpha) + spec.white_floor
    integrand = 4 * s * np.sin(np.pi * f * tau_s[:, None]) ** 2
    band = np.trapezoid(integrand * f, np.log(f), axis=-1)
    return low + band


def correlation(spec: NoiseSpec, tau, points_per_decade: int = 400) -> np.ndarray:
    """Autocorrelation of the analytic spectrum, MHz^2; ``tau`` in ns."""
    tau = np.abs(np.asarray(tau, dtype=float))
    flat = tau.reshape(-1) * NS
    # stay well inside the oscillation scale of the cosine transform
    ppd = max(points_per_decade, int(40 * flat.max() * spec.f_high) if flat.size else 0)
    out = spec.sigma**2 - _structure_function(spec, flat, ppd)
    return out.reshape(tau.shape)


@lru_cache(maxsize=64)
def _correlation_table(spec: NoiseSpec, tau_max: float, step: float) -> np.ndarray:
    grid = np.arange(0.0, tau_max + 1.5 * step, step)
    return correlation(spec, grid)


def correlation_cached(spec: NoiseSpec, tau, step: float = 0.5, tau_max: float | None = None) -> np.ndarray:
    """Correlation interpolated from a table cached per (spec, tau_max, step)."""
    tau = np.abs(np.asarray(tau, dtype=float))
    top = float(np.max(tau)) if tau_max is None else tau_max
    top = step * np.ceil(max(top, step) / step)
    table = _correlation_table(spec, top, step)
    return np.interp(tau, step * np.arange(len(table)), table)


def periodogram_slope(samples, dt: float, f_range: tuple[float, float], bins_per_decade: int = 10):
    """Log-log slope of the trajectory-averaged periodogram.

    ``samples`` has shape ``(trajectories, n)`` with spacing ``dt`` in ns.
    Returns ``(slope, freqs, psd)`` where the arrays are the log-binned
    averages used in the fit.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    fs = 1.0 / (dt * NS)
    f, pxx = signal.periodogram(samples, fs=fs, axis=-1, detrend="constant")
    pxx = pxx.mean(axis=0)
    lo, hi = f_range
    edges = np.logspace(np.log10(lo), np.log10(hi), int(np.log10(hi / lo) * bins_per_decade) + 1)
    idx = np.digitize(f, edges)
    fb, pb = [], []
    for k in range(1, len(edges)):
        sel = idx == k
        if np.any(sel):
            fb.append(np.exp(np.mean(np.log(f[sel]))))
            pb.append(np.mean(pxx[sel]))
    fb, pb = np.array(fb), np.array(pb)
    slope = np.polyfit(np.log10(fb), np.log10(pb), 1)[0]
    return float(slope), fb, pb


def write_trajectory_csv(path, dt: float, samples) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ns", "beta_MHz"])
        for k, b in enumerate(np.asarray(samples)):
            w.writerow([f"{k * dt:.12g}", repr(float(b))])


def read_trajectory_csv(path) -> NoiseTrajectory:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.0
    return NoiseTrajectory(dt=dt, samples=data[:, 1], seed=-1)
