"""Numerical experiments: noise calibration, C-phase baseline, robustness sweeps.

Every function here is deterministic given its master seed.  Results can be
written as CSV with the column schemas listed in ``CSV_SCHEMAS``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, is_dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq, least_squares, minimize

from .evolve import (
    CZ,
    TWO_PI_MHZ_NS,
    EnsembleResult,
    effective_propagator,
    ensemble_infidelity,
    hermitian_expm,
    infidelity,
    realization_noise,
)
from .model import SystemParams, SystematicError, exchange_shifts, rwa_hamiltonian_batch
from .noise import NoiseSpec, build_bank
from .optimize import OptimizationConfig, OptimizationTrace, optimize_fine_tune, optimize_stage1
from .pulse import FilterModel, PulseParameterization, Waveform, apply_filter, sample_envelope

log = logging.getLogger(__name__)

AXES = ("sigma", "alpha_t0", "spectral_alpha")
GATES = ("ideal_cphase", "optimal_unfiltered", "optimal_fine_tuned", "single_qubit")
AXIS_COLUMNS = {"sigma": "sigma_MHz", "alpha_t0": "alpha_t0_MHz", "spectral_alpha": "spectral_alpha"}

CSV_SCHEMAS = {
    "sweep": ["gate", "<axis column>", "mean_infidelity", "std_error", "n"],
    "dephasing_curve": ["tau_ns", "p_up_down"],
    "ramsey_curve": ["t_ns", "p_up"],
    "spectrum": ["frequency_Hz", "analytic_MHz2_per_Hz", "bank_MHz2_per_Hz"],
    "trajectories": ["time_ns", "beta_0_MHz", "..."],
}


# ---------------------------------------------------------------- result types

@dataclass(frozen=True)
class DephasingFit:
    t2_star: float  # us, inf when no decay is resolved
    frequency: float  # MHz
    exponent: float
    residual: float  # RMS over the grid
    converged: bool = True

    def __post_init__(self):
        if not self.t2_star > 0:
            raise ValueError("t2_star must be positive")
        if not np.isfinite(self.residual):
            raise ValueError("fit residual is not finite")


@dataclass
class SweepResult:
    axis: str
    gate: str
    points: list  # (x, mean infidelity, std_error, n)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if self.gate not in GATES:
            raise ValueError(f"unknown gate tag {self.gate!r}")
        self.points = sorted((tuple(pt) for pt in self.points), key=lambda pt: pt[0])

    @property
    def x(self) -> np.ndarray:
        return np.array([pt[0] for pt in self.points])

    @property
    def mean(self) -> np.ndarray:
        return np.array([pt[1] for pt in self.points])

    @property
    def std_error(self) -> np.ndarray:
        return np.array([pt[2] for pt in self.points])

    def at(self, x: float) -> tuple:
        for pt in self.points:
            if np.isclose(pt[0], x):
                return pt
        raise KeyError(x)

    def to_csv(self, path, append: bool = False) -> None:
        path = Path(path)
        new = not (append and path.exists())
        with path.open("a" if append else "w", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["gate", AXIS_COLUMNS[self.axis], "mean_infidelity", "std_error", "n"])
            for x, m, s, n in self.points:
                w.writerow([self.gate, repr(float(x)), repr(float(m)), repr(float(s)), int(n)])


@dataclass(frozen=True)
class GateCase:
    """A gate to evaluate: a drive waveform (or free evolution) and its target."""

    tag: str
    target: np.ndarray
    waveform: Waveform | None = None
    t_f: float | None = None

    def __post_init__(self):
        if self.tag not in GATES:
            raise ValueError(f"unknown gate tag {self.tag!r}")
        if self.waveform is None and self.t_f is None:
            raise ValueError("a gate without a waveform needs t_f")


def write_manifest(path, **entries) -> None:
    """JSON manifest of everything needed to rerun an experiment."""

    def plain(v):
        if is_dataclass(v):
            return {k: plain(x) for k, x in asdict(v).items()}
        if isinstance(v, dict):
            return {str(k): plain(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        if isinstance(v, np.ndarray):
            return plain(v.tolist())
        if isinstance(v, (np.floating, np.integer)):
            return v.item()
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, float) and not np.isfinite(v):
            return str(v)
        return v

    Path(path).write_text(json.dumps(plain(entries), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- ideal C-phase

@dataclass(frozen=True)
class CPhase:
    duration: float  # ns
    unitary: np.ndarray  # noiseless 4x4 block, computational basis
    j1: float  # against CZ up to local Z phases
    target: np.ndarray  # CZ with the absorbed Z phases, computational basis
    basis: np.ndarray  # columns: exchange eigenstates matched to |uu>, |ud>, |du>, |dd>


def exchange_basis(p: SystemParams, alpha_t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (MHz) and eigenvectors of the zero-drive 4x4 Hamiltonian, in computational order."""
    h = rwa_hamiltonian_batch(p, 0.0, 0.0, alpha_t0=alpha_t0)
    e, v = np.linalg.eigh(h)
    order = np.argmax(np.abs(v), axis=0)
    if sorted(order) != [0, 1, 2, 3]:
        raise RuntimeError("exchange eigenstates are not adiabatically connected to the computational states")
    perm = np.argsort(order)
    e, v = e[perm], v[:, perm]
    # fix the eigenvector phases so each overlaps its computational state positively
    v = v * (np.conj(np.diag(v)) / np.abs(np.diag(v)))[None, :]
    return e, v


def conditional_phase_rate(p: SystemParams, alpha_t0: float = 0.0) -> float:
    """|E_uu + E_dd - E_ud - E_du| in MHz, equal to nu_ud + nu_du."""
    e, _ = exchange_basis(p, alpha_t0)
    return float(abs(e[0] + e[3] - e[1] - e[2]))


def absorb_z_phases(u4, target=CZ) -> tuple[float, np.ndarray]:
    """Infidelity minimised over local diag(1, e^{i phi}) corrections on each dot.

    Returns the minimum and the corrected target, so that
    ``infidelity(u4, corrected) == minimum``.
    """
    u4 = np.asarray(u4)
    target = np.asarray(target, dtype=complex)
    c = np.conj(np.diag(target)) * np.diag(u4)
    if np.abs(target - np.diag(np.diag(target))).max() > 0:
        raise ValueError("Z-phase absorption needs a diagonal target")

    def phases(x):
        # index order |uu>, |ud>, |du>, |dd>: dot 2 is the first factor
        return np.array([0.0, x[1], x[0], x[0] + x[1]])

    def neg_overlap(x):
        return -abs(np.sum(c * np.exp(-1j * phases(x)))) ** 2 / 16.0

    best = None
    grid = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    for a in grid:
        for b in grid:
            r = minimize(neg_overlap, [a, b], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-16})
            if best is None or r.fun < best.fun:
                best = r
    corrected = np.diag(np.exp(1j * phases(best.x))) @ target
    return float(infidelity(u4, corrected)), corrected


def cphase_time(p: SystemParams, t_max: float = 500.0) -> float:
    """Longest odd multiple of the conditional-pi time that fits in ``t_max`` ns."""
    half = 1.0 / (2.0 * conditional_phase_rate(p) * 1e-3)
    m = int(np.floor((t_max / half - 1) / 2))
    if m < 0:
        raise ValueError(f"no conditional-pi time fits in {t_max} ns (need {half:.1f} ns)")
    return (2 * m + 1) * half


def ideal_cphase(p: SystemParams, t_max: float = 500.0, dt: float = 0.1, sw_dressing: bool = False) -> CPhase:
    """C-phase gate from free evolution at fixed exchange.

    The exchange is assumed to be switched adiabatically, so the gate acts
    in the exchange eigenbasis; the target is CZ with local Z phases absorbed,
    mapped back to the computational basis.
    """
    t = cphase_time(p, t_max)
    _, v = exchange_basis(p)
    u4 = effective_propagator(p, None, t_f=t, dt=dt, sw_dressing=sw_dressing)
    u_ex = v.conj().T @ u4 @ v
    j1, corrected = absorb_z_phases(u_ex)
    return CPhase(duration=t, unitary=u4, j1=j1, target=v @ corrected @ v.conj().T, basis=v)


def cphase_case(c: CPhase) -> GateCase:
    return GateCase("ideal_cphase", c.target, None, c.duration)


# ---------------------------------------------------------------- dephasing experiment

def _rotation(axis: str, theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    if axis == "x":
        m = np.array([[c, -1j * s], [-1j * s, c]])
    elif axis == "y":
        m = np.array([[c, -s], [s, c]])
    elif axis == "z":
        m = np.diag([np.exp(-1j * theta / 2), np.exp(1j * theta / 2)])
    else:
        raise ValueError(axis)
    return np.kron(m, np.eye(2))  # acts on dot 2


def dephasing_model(tau, frequency: float, t2_star: float, exponent: float):
    """1/2 + 1/2 cos(2 pi f tau) exp(-(tau/T2*)^a); tau and T2* in ns, f in MHz."""
    tau = np.asarray(tau, dtype=float)
    return 0.5 + 0.5 * np.cos(TWO_PI_MHZ_NS * frequency * tau) * np.exp(-((tau / t2_star) ** exponent))


def quasi_static_t2(p: SystemParams, sigma: float) -> float:
    """sqrt(2)/(2 pi sigma_nu) in us, with sigma_nu = nu_ud sigma / (U - eps)."""
    nu, _ = exchange_shifts(p)
    sigma_nu = nu * sigma / p.u_minus_eps
    return np.sqrt(2.0) / (2 * np.pi * sigma_nu)


def fit_dephasing(tau, prob, frequency: float, t2_seeds=None) -> DephasingFit:
    """Fit T2* (and a in [1, 3]) with f held fixed; tau in ns."""
    tau = np.asarray(tau, dtype=float)
    prob = np.asarray(prob, dtype=float)
    span = float(tau.max())
    upper = 1e4 * span
    seeds = t2_seeds if t2_seeds is not None else span * np.logspace(-2, 1, 13)
    best = None
    for t2 in seeds:
        for a in (1.2, 2.0, 2.8):
            r = least_squares(
                lambda x: dephasing_model(tau, frequency, np.exp(x[0]), x[1]) - prob,
                [np.log(t2), a],
                bounds=([np.log(1e-3 * span), 1.0], [np.log(upper), 3.0]),
                x_scale=[1.0, 0.5],
            )
            if best is None or r.cost < best.cost:
                best = r
    t2 = float(np.exp(best.x[0]))
    rms = float(np.sqrt(np.mean(best.fun**2)))
    # an undamped cosine that fits as well as the best damped one means no measurable decay
    undamped = float(np.sqrt(np.mean((dephasing_model(tau, frequency, np.inf, 2.0) - prob) ** 2)))
    no_decay = t2 > 100 * span or undamped <= rms + 1e-3
    return DephasingFit(
        t2_star=np.inf if no_decay else t2 * 1e-3,
        frequency=frequency,
        exponent=float(best.x[1]),
        residual=rms,
        converged=bool(best.success),
    )


@dataclass(frozen=True)
class DephasingCurve:
    tau: np.ndarray  # ns
    probability: np.ndarray

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_ns", "p_up_down"])
            for t, pr in zip(self.tau, self.probability):
                w.writerow([repr(float(t)), repr(float(pr))])


def _dephasing_block(p, spec, tau, m, dt, seed, start, count):
    n_steps = (tau.size - 1) * m
    beta = realization_noise(spec, n_steps, dt, seed, start, count, 0)
    if beta is None:
        h = rwa_hamiltonian_batch(p, 0.0, 0.0)
        step = hermitian_expm(h, -1j * TWO_PI_MHZ_NS * dt)
        steps = np.broadcast_to(step, (count, n_steps, 4, 4))
    else:
        h = rwa_hamiltonian_batch(p, 0.0, 0.0, beta=beta)
        # piecewise-constant noise: each step exponential is exact, so no phase limit applies
        steps = hermitian_expm(h, -1j * TWO_PI_MHZ_NS * dt)
    prep = _rotation("z", np.pi / 2) @ _rotation("x", np.pi / 2)
    readout = _rotation("y", np.pi / 2)
    psi = np.broadcast_to(prep[:, 3], (count, 4)).astype(complex)
    half = 0.5 * p.delta_ez
    out = np.empty((count, tau.size))
    for j, t in enumerate(tau):
        if j:
            for k in range((j - 1) * m, j * m):
                psi = np.einsum("rab,rb->ra", steps[:, k], psi)
        frame = np.exp(1j * TWO_PI_MHZ_NS * t * np.array([0.0, half, -half, 0.0]))
        amp = (readout[1] * frame) @ psi.T
        out[:, j] = np.abs(amp) ** 2
    return out


def dephasing_characterization(
    p: SystemParams,
    spec: NoiseSpec | None,
    tau_grid=None,
    n: int = 1000,
    seed: int = 0,
    max_step: float = 10.0,
    block: int = 100,
) -> tuple[DephasingCurve, DephasingFit]:
    """Two-qubit dephasing sequence with noisy free evolution, then the T2* fit.

    Starting from |dd>, applies (pi/2)_X2 and (pi/2)_Z2, evolves freely for
    tau, applies (pi/2)_Y2 in the bare-qubit frame and records P(|ud>).  The
    noise is held constant over steps of at most ``max_step`` ns.
    """
    tau = np.linspace(0.0, 25000.0, 200) if tau_grid is None else np.asarray(tau_grid, dtype=float)
    spacing = np.diff(tau)
    if tau[0] != 0.0 or tau.size < 3 or not np.allclose(spacing, spacing[0], rtol=1e-9):
        raise ValueError("tau_grid must be uniform and start at 0")
    m = max(1, int(np.ceil(spacing[0] / max_step)))
    dt = spacing[0] / m
    parts = [
        _dephasing_block(p, spec, tau, m, dt, seed, s, min(block, n - s)) for s in range(0, n, block)
    ]
    prob = np.concatenate(parts).mean(axis=0)
    nu, _ = exchange_shifts(p)
    fit = fit_dephasing(tau, prob, nu)
    if not fit.converged:
        log.warning("dephasing fit did not converge (residual %.3g)", fit.residual)
    return DephasingCurve(tau, prob), fit


# ---------------------------------------------------------------- sweeps

def _evaluate(p, gate: GateCase, spec, n, seed, se=None, workers=1, sw_dressing=False, dephasing=None):
    return ensemble_infidelity(
        p,
        se,
        spec,
        gate.waveform,
        gate.target,
        n,
        seed,
        t_f=None if gate.waveform is not None else gate.t_f,
        dephasing=dephasing,
        sw_dressing=sw_dressing,
        workers=workers,
    )


def sigma_sweep(
    p: SystemParams,
    gates: list,
    sigma_values,
    spec: NoiseSpec | None = None,
    n: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> list:
    """<I>(sigma) for each gate; one SweepResult per gate."""
    spec = spec or NoiseSpec()
    out = []
    for gate in gates:
        pts = []
        for s in sigma_values:
            r = _evaluate(p, gate, spec.with_sigma(float(s)), n, seed, workers=workers)
            pts.append((float(s), r.mean_infidelity, r.std_error, r.n_realizations))
        out.append(SweepResult("sigma", gate.tag, pts))
    return out


def t0_uncertainty_sweep(
    p: SystemParams,
    gate: GateCase,
    alpha_t0_values,
    sigma: float = 2400.0,
    n: int = 1000,
    seed: int = 0,
    spec: NoiseSpec | None = None,
    workers: int = 1,
) -> SweepResult:
    """<I>(alpha_t0) at fixed sigma, with the pulse designed for alpha_t0 = 0."""
    spec = (spec or NoiseSpec()).with_sigma(sigma)
    pts = []
    for a in alpha_t0_values:
        r = _evaluate(p, gate, spec, n, seed, se=SystematicError(alpha_t0=float(a)), workers=workers)
        pts.append((float(a), r.mean_infidelity, r.std_error, r.n_realizations))
    return SweepResult("alpha_t0", gate.tag, pts)


@dataclass
class GateDesign:
    stage1: OptimizationTrace
    fine_tuned: OptimizationTrace
    filter: FilterModel

    @property
    def pulses(self) -> PulseParameterization:
        return self.fine_tuned.best

    def waveform(self, dt: float = 0.1) -> Waveform:
        """The fine-tuned pulse as the hardware emits it, after the filter."""
        return apply_filter(sample_envelope(self.pulses, dt), self.filter)


def design_gate(p: SystemParams, target, spec: NoiseSpec, cfg: OptimizationConfig, flt: FilterModel | None = None) -> GateDesign:
    """Stage-1 multistart search followed by the filtered fine-tune."""
    flt = flt or FilterModel()
    s1 = optimize_stage1(replace(cfg, stage="unfiltered"), p, target, spec)
    if s1.best is None:
        raise RuntimeError("stage 1 found no feasible pulse: " + "; ".join(s1.messages))
    ft = optimize_fine_tune(cfg, p, target, spec, flt, s1.best)
    if ft.best is None:
        raise RuntimeError("fine-tune found no feasible pulse: " + "; ".join(ft.messages))
    return GateDesign(s1, ft, flt)


def spectral_alpha_sweep(
    alphas,
    p: SystemParams,
    sigma: float = 2400.0,
    n: int = 1000,
    seed: int = 0,
    cfg: OptimizationConfig | None = None,
    target=None,
    flt: FilterModel | None = None,
    workers: int = 1,
) -> tuple[SweepResult, dict]:
    """Re-optimise and evaluate the gate for each spectral exponent."""
    from .evolve import CNOT

    cfg = cfg or OptimizationConfig()
    target = CNOT if target is None else target
    designs = {}
    pts = []
    for a in alphas:
        spec = replace(NoiseSpec(), alpha=float(a), sigma=sigma)
        d = design_gate(p, target, spec, cfg, flt)
        designs[float(a)] = d
        r = ensemble_infidelity(p, None, spec, d.waveform(cfg.dt), target, n, seed, workers=workers)
        pts.append((float(a), r.mean_infidelity, r.std_error, r.n_realizations))
    return SweepResult("spectral_alpha", "optimal_fine_tuned", pts), designs


SINGLE_QUBIT_GATES = {"ix": 200.0, "hi": 250.0}


def single_qubit_gates(
    p: SystemParams,
    spec: NoiseSpec | None = None,
    n: int = 1000,
    seed: int = 0,
    cfg: OptimizationConfig | None = None,
    flt: FilterModel | None = None,
    workers: int = 1,
) -> dict:
    """Optimise I2 x X1 (200 ns) and H2 x I1 (250 ns) with k_max = 8 and evaluate them."""
    from .evolve import target_gate

    spec = spec or NoiseSpec()
    base = cfg or OptimizationConfig()
    out = {}
    for name, t_f in SINGLE_QUBIT_GATES.items():
        c = replace(base, k_max=8, t_f=t_f)
        d = design_gate(p, target_gate(name), spec, c, flt)
        r = ensemble_infidelity(p, None, spec, d.waveform(c.dt), target_gate(name), n, seed, workers=workers)
        out[name] = (r, d)
    return out


# ---------------------------------------------------------------- dephasing noise on the Zeeman energies

DEPHASING_T2 = 120.0  # us
DEPHASING_EXPONENT = 2.0


def dephasing_noise_spec(sigma: float, alpha: float = 2.5, f_low: float = 1e3, f_high: float = 1e5) -> NoiseSpec:
    """1/f^alpha + c spectrum with the floor c equal to the power-law level at f_high."""
    probe = NoiseSpec(alpha=alpha, sigma=max(sigma, 1e-300), f_low=f_low, f_high=f_high)
    # A with c = A f_high^-alpha: sigma^2/2 = A (band + plateau + f_high^(1-alpha))
    a0 = _floor_free_amplitude(probe)
    band_plus_flat = probe.sigma**2 / 2.0 / a0
    amp = probe.sigma**2 / 2.0 / (band_plus_flat + f_high ** (1 - alpha))
    c = amp * f_high ** (-alpha) if sigma > 0 else 0.0
    return NoiseSpec(alpha=alpha, sigma=sigma, f_low=f_low, f_high=f_high, white_floor=c)


def _floor_free_amplitude(spec: NoiseSpec) -> float:
    from .noise import _power_law_norm

    return _power_law_norm(replace(spec, white_floor=0.0))


def ramsey_decay(spec: NoiseSpec, t) -> np.ndarray:
    """Ensemble Ramsey signal 1/2 + 1/2 <cos phi(t)> for Gaussian bank noise; t in ns.

    The phase variance follows exactly from the OU correlation sum,
    Var phi = (2 pi)^2 * 2 sum_k s_k^2 (t/r_k - (1 - e^{-r_k t})/r_k^2).
    """
    t = np.asarray(t, dtype=float)
    bank = build_bank(spec)
    r = bank.rates[:, None]
    s2 = (bank.amplitudes**2)[:, None]
    tt = t[None, :]
    var = 2 * np.sum(s2 * (tt / r + np.expm1(-r * tt) / r**2), axis=0) * TWO_PI_MHZ_NS**2
    return 0.5 + 0.5 * np.exp(-0.5 * var)


def simulate_ramsey(spec: NoiseSpec, t_max: float, n_points: int, n: int, seed: int, steps_per_point: int = 10):
    """Monte-Carlo Ramsey signal on a uniform grid from 0 to ``t_max`` ns."""
    t = np.linspace(0.0, t_max, n_points)
    dt = t[1] / steps_per_point
    n_steps = (n_points - 1) * steps_per_point
    d = realization_noise(spec, n_steps, dt, seed, 0, n, 0)
    if d is None:
        return t, np.ones_like(t)
    phase = np.concatenate([np.zeros((n, 1)), TWO_PI_MHZ_NS * dt * np.cumsum(d, axis=1)], axis=1)
    phase = phase[:, ::steps_per_point]
    return t, 0.5 + 0.5 * np.mean(np.cos(phase), axis=0)


def fit_ramsey(t, prob, exponent: float | None = DEPHASING_EXPONENT) -> tuple[float, float]:
    """T2* in us (and n) from 1/2 + 1/2 exp(-(t/T2*)^n); n fixed unless ``exponent`` is None."""
    t = np.asarray(t, dtype=float)
    prob = np.asarray(prob, dtype=float)
    seed_t2 = float(t[np.argmin(np.abs(prob - (0.5 + 0.5 / np.e)))]) or t[-1]

    if exponent is None:
        r = least_squares(
            lambda x: 0.5 + 0.5 * np.exp(-((t / np.exp(x[0])) ** x[1])) - prob,
            [np.log(seed_t2), 2.0],
            bounds=([-np.inf, 0.5], [np.inf, 4.0]),
        )
        return float(np.exp(r.x[0])) * 1e-3, float(r.x[1])
    r = least_squares(lambda x: 0.5 + 0.5 * np.exp(-((t / np.exp(x[0])) ** exponent)) - prob, [np.log(seed_t2)])
    return float(np.exp(r.x[0])) * 1e-3, exponent


@dataclass(frozen=True)
class DephasingCalibration:
    spec: NoiseSpec
    t2_star: float  # us, fitted with the exponent fixed
    free_fit: tuple  # (T2* us, n) with the exponent free


def calibrate_dephasing(t2_target: float = DEPHASING_T2, exponent: float = DEPHASING_EXPONENT, alpha: float = 2.5) -> DephasingCalibration:
    """Per-dot Zeeman noise strength (MHz) whose Ramsey decay fits ``t2_target`` us."""
    t = np.linspace(0.0, 3.0 * t2_target * 1e3, 600)

    def fitted(sigma):
        return fit_ramsey(t, ramsey_decay(dephasing_noise_spec(sigma, alpha), t), exponent)[0]

    # quasi-static guess, then bracket
    guess = np.sqrt(2.0) / (2 * np.pi * t2_target)
    lo, hi = guess / 4, guess * 4
    if not (fitted(lo) > t2_target > fitted(hi)):
        raise RuntimeError(f"cannot bracket the dephasing strength for T2* = {t2_target} us")
    sigma = brentq(lambda s: np.log(fitted(s) / t2_target), lo, hi, xtol=1e-12 * guess)
    spec = dephasing_noise_spec(sigma, alpha)
    curve = ramsey_decay(spec, t)
    return DephasingCalibration(spec, fitted(sigma), fit_ramsey(t, curve, None))


def dephasing_contribution(
    p: SystemParams,
    gate: GateCase,
    dephasing_spec: NoiseSpec,
    n: int = 1000,
    seed: int = 0,
    workers: int = 1,
) -> EnsembleResult:
    """<I> with independent Zeeman noise on both dots and the electrical noise off."""
    return _evaluate(p, gate, None, n, seed, workers=workers, dephasing=(dephasing_spec, dephasing_spec))


# ---------------------------------------------------------------- noise panels

def spectrum_table(spec: NoiseSpec, points_per_decade: int = 20) -> np.ndarray:
    """Rows of (f Hz, analytic S, bank S) spanning the band and one decade either side."""
    from .noise import analytic_spectrum

    lo, hi = spec.f_low / 10, spec.f_high * 10
    f = np.logspace(np.log10(lo), np.log10(hi), int(np.log10(hi / lo) * points_per_decade) + 1)
    return np.column_stack([f, analytic_spectrum(spec, f), build_bank(spec).spectrum(f)])


def example_trajectories(spec: NoiseSpec, count: int, n_steps: int, dt: float, seed: int) -> np.ndarray:
    """``count`` noise trajectories in MHz, rows are realizations."""
    beta = realization_noise(spec, n_steps, dt, seed, 0, count, 0)
    return np.zeros((count, n_steps)) if beta is None else beta

