"""Time-ordered propagation, frames, gate fidelity and noise ensembles.

Two engines are provided.  The effective engine steps the 4x4 rotating-frame
Hamiltonian on a coarse grid (0.1 ns by default) and can be batched over
noise realizations.  The full engine steps the 5x5 lab-frame Hamiltonian on a
fine grid resolving the |0,2> energy and is meant for spot checks.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import (
    MHZ_NS,
    SystemParams,
    SystematicError,
    exchange_couplings,
    rotating_frame_map,
    rwa_hamiltonian_batch,
    sw_frame_maps,
)
from .noise import NoiseSpec, build_bank, realization_seed, _ou_filter
from .pulse import Waveform

TWO_PI_MHZ_NS = 2 * np.pi * MHZ_NS
STEP_PHASE_LIMIT = 0.1


class PropagationError(RuntimeError):
    pass


@dataclass
class Propagator:
    matrix: np.ndarray
    frame: str = "lab"
    t: float = 0.0

    def is_unitary(self, atol: float = 1e-10) -> bool:
        u = self.matrix
        d = u.shape[-1]
        return bool(np.abs(u.conj().swapaxes(-1, -2) @ u - np.eye(d)).max() < atol)


@dataclass(frozen=True)
class FidelityReport:
    infidelity: float
    leakage: float
    frame: str = "rotating"


@dataclass
class EnsembleResult:
    mean_infidelity: float
    std_error: float
    n_realizations: int
    per_realization: np.ndarray | None = None
    sigma: float = float("nan")

    @classmethod
    def from_samples(cls, values, sigma: float = float("nan"), keep: bool = True) -> "EnsembleResult":
        values = np.asarray(values, dtype=float)
        n = values.size
        err = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 and np.ptp(values) > 0 else 0.0
        return cls(float(values.mean()), err, n, values if keep else None, sigma)

    def csv_row(self) -> list:
        return [self.sigma, self.mean_infidelity, self.std_error, self.n_realizations]


ENSEMBLE_COLUMNS = ["sigma_MHz", "mean_infidelity", "std_error", "n"]


def write_ensemble_csv(path, results: Sequence[EnsembleResult], extra: dict | None = None) -> None:
    extra = extra or {}
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(extra) + ENSEMBLE_COLUMNS)
        for i, r in enumerate(results):
            w.writerow([v[i] for v in extra.values()] + r.csv_row())


# ---------------------------------------------------------------- targets

def _kron(a, b):
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
IDENTITY_2 = np.eye(2, dtype=complex)

# basis |up,up>,|up,down>,|down,up>,|down,down>; up = |0>, dot 2 is the first factor
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CZ = np.diag([1, 1, 1, -1]).astype(complex)
I2_X1 = _kron(IDENTITY_2, PAULI_X)
H2_I1 = _kron(HADAMARD, IDENTITY_2)

TARGETS = {"cnot": CNOT, "cz": CZ, "ix": I2_X1, "hi": H2_I1, "identity": np.eye(4, dtype=complex)}


def target_gate(name: str) -> np.ndarray:
    try:
        return TARGETS[name.lower()].copy()
    except KeyError:
        raise ValueError(f"unknown target gate {name!r}; choose from {sorted(TARGETS)}") from None


# ---------------------------------------------------------------- generic pieces

def hermitian_expm(h, scale: complex) -> np.ndarray:
    """``exp(scale * H)`` for Hermitian ``H`` (batched) via diagonalisation."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(scale * w)[..., None, :]) @ v.conj().swapaxes(-1, -2)


def chain_product(steps: np.ndarray, axis: int = -3) -> np.ndarray:
    """Ordered product ``S[n-1] @ ... @ S[0]`` along the step axis, by pairwise reduction."""
    s = np.moveaxis(steps, axis, -3)
    d = s.shape[-1]
    while s.shape[-3] > 1:
        if s.shape[-3] % 2:
            eye = np.broadcast_to(np.eye(d, dtype=s.dtype), s.shape[:-3] + (1, d, d))
            s = np.concatenate([s, eye], axis=-3)
        s = s[..., 1::2, :, :] @ s[..., 0::2, :, :]
    return s[..., 0, :, :]


def check_step(h_max: float, dt: float) -> None:
    phase = TWO_PI_MHZ_NS * h_max * dt
    if phase >= STEP_PHASE_LIMIT:
        raise PropagationError(
            f"step dt={dt} ns too coarse for a {h_max:.6g} MHz Hamiltonian entry "
            f"(phase per step {phase:.3g} rad, limit {STEP_PHASE_LIMIT})"
        )


def propagate(source: Callable, t_f: float, dt: float, frame: str = "lab", chunk: int = 20000) -> Propagator:
    """Midpoint-rule time-ordered exponential of ``source(t)`` (MHz) over [0, t_f].

    ``source`` receives an array of midpoint times and returns the stacked
    Hamiltonians with shape ``(len(t), d, d)``.
    """
    if dt <= 0:
        raise PropagationError("dt must be positive")
    n = int(round(t_f / dt))
    dt = t_f / n if n else dt
    u = None
    for start in range(0, n, chunk):
        t = (np.arange(start, min(n, start + chunk)) + 0.5) * dt
        h = np.asarray(source(t))
        check_step(float(np.abs(h).max()), dt)
        part = chain_product(hermitian_expm(h, -1j * TWO_PI_MHZ_NS * dt))
        u = part if u is None else part @ u
    if u is None:
        d = np.asarray(source(np.zeros(1))).shape[-1]
        u = np.eye(d, dtype=complex)
    return Propagator(u, frame, t_f)


def project_4x4(u) -> tuple[np.ndarray, float]:
    m = u.matrix if isinstance(u, Propagator) else np.asarray(u)
    u4 = m[..., :4, :4]
    leak = 1.0 - 0.25 * np.real(np.einsum("...ij,...ij->...", u4.conj(), u4))
    return u4, leak


def infidelity(u4, target) -> np.ndarray | float:
    """``1 - |Tr(T^dag U)|^2 / d^2``; broadcasts over leading axes of ``u4``."""
    u4 = np.asarray(u4)
    target = np.asarray(target)
    d = target.shape[-1]
    overlap = np.einsum("ij,...ij->...", target.conj(), u4)
    val = 1.0 - np.abs(overlap) ** 2 / d**2
    return float(val) if np.ndim(val) == 0 else val


def to_rotating_frame(u: Propagator, p: SystemParams) -> Propagator:
    if u.frame == "rotating":
        raise PropagationError("propagator is already in the rotating frame")
    m = u.matrix
    if m.shape[-1] != 4:
        raise PropagationError("project to the computational subspace first")
    u0 = rotating_frame_map(p, u.t)
    return Propagator(u0.conj().swapaxes(-1, -2) @ m, "rotating", u.t)


def from_rotating_frame(u: Propagator, p: SystemParams, frame: str = "lab") -> Propagator:
    if u.frame != "rotating":
        raise PropagationError("propagator is not in the rotating frame")
    return Propagator(rotating_frame_map(p, u.t) @ u.matrix, frame, u.t)


def to_qubit_frame(u4, p: SystemParams, t: float) -> np.ndarray:
    """Remove the bare two-qubit precession, including the ``delta_ez`` splitting."""
    phase = np.exp(2j * np.pi * MHZ_NS * t * np.array([0.0, 0.5 * p.delta_ez, -0.5 * p.delta_ez, 0.0]))
    return phase[:, None] * np.asarray(u4)


# ---------------------------------------------------------------- effective engine

def midpoints(t_f: float, dt: float) -> np.ndarray:
    n = int(round(t_f / dt))
    return (np.arange(n) + 0.5) * (t_f / n)


def dephasing_diagonal(d2, d1) -> np.ndarray:
    """Diagonal shifts (MHz) from Zeeman fluctuations ``d2`` on dot 2 and ``d1`` on dot 1."""
    d2 = np.asarray(d2, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    return np.stack([0.5 * (d2 + d1), 0.5 * (d2 - d1), -0.5 * (d2 - d1), -0.5 * (d2 + d1)], axis=-1)


def effective_steps(p: SystemParams, omega_x, omega_y, dt: float, beta=None, alpha_t0: float = 0.0, dephasing=None):
    """Per-step unitaries of the 4x4 rotating-frame model, shape ``(..., n, 4, 4)``.

    Envelopes are in mT at the step midpoints; ``beta`` and ``dephasing``
    (a ``(d2, d1)`` pair) may carry leading realization axes.
    """
    ox = p.field_to_mhz(omega_x)
    oy = p.field_to_mhz(omega_y)
    h = rwa_hamiltonian_batch(p, ox, oy, beta=beta, alpha_t0=alpha_t0)
    if dephasing is not None:
        diag = dephasing_diagonal(*dephasing)
        h = h + diag[..., :, None] * np.eye(4)
    check_step(float(np.abs(h).max()), dt)
    return hermitian_expm(h, -1j * TWO_PI_MHZ_NS * dt)


def dress(p: SystemParams, u_rot, phase_02, alpha_t0: float = 0.0, beta_start: float = 0.0, beta_end: float = 0.0):
    """Undo the Schrieffer-Wolff frame on a rotating-frame 4x4 propagator.

    ``phase_02`` is the phase accumulated by the decoupled |0,2> level.
    Returns the 4x4 block of ``e^-S(t_f) (U + e^{-i phase}) e^S(0)``.
    """
    u_rot = np.asarray(u_rot)
    em_end, _ = sw_frame_maps(p, alpha_t0, beta_end)
    _, ep_start = sw_frame_maps(p, alpha_t0, beta_start)
    phase_02 = np.asarray(phase_02)
    big = np.zeros(u_rot.shape[:-2] + (5, 5), dtype=complex)
    big[..., :4, :4] = u_rot
    big[..., 4, 4] = np.exp(-1j * phase_02)
    return (em_end @ big @ ep_start)[..., :4, :4]


def level_02_phase(p: SystemParams, dt: float, n: int, beta=None, alpha_t0: float = 0.0):
    """Phase (rad) accumulated by the SW-shifted |0,2> energy over ``n`` steps."""
    u = p.u_minus_eps + (0.0 if beta is None else np.asarray(beta))
    j_p, j_m = exchange_couplings(p.t0 + alpha_t0, u, p.delta_ez)
    level = np.broadcast_to(u + j_p + j_m, np.broadcast_shapes(np.shape(u), (n,)))
    return TWO_PI_MHZ_NS * dt * level.sum(axis=-1)


def effective_propagator(
    p: SystemParams,
    waveform: Waveform | None,
    t_f: float | None = None,
    dt: float = 0.1,
    beta=None,
    alpha_t0: float = 0.0,
    dephasing=None,
    sw_dressing: bool = False,
) -> np.ndarray:
    """Rotating-frame 4x4 propagator(s) of the effective model at ``t_f``.

    ``beta`` (shape ``(..., n)``) holds noise values at the step midpoints.
    With ``sw_dressing`` the Schrieffer-Wolff frame is undone at both ends so
    the result is comparable with the full five-level propagation.
    """
    if t_f is None:
        if waveform is None:
            raise PropagationError("need a waveform or t_f")
        t_f = waveform.t_f
    tm = midpoints(t_f, dt)
    n = tm.size
    dt = t_f / n
    if waveform is None:
        ox = oy = np.zeros(n)
    else:
        ox, oy = waveform.at(tm)
    steps = effective_steps(p, ox, oy, dt, beta=beta, alpha_t0=alpha_t0, dephasing=dephasing)
    u = chain_product(steps)
    if not sw_dressing:
        return u
    b0 = 0.0 if beta is None else np.asarray(beta)[..., 0]
    b1 = 0.0 if beta is None else np.asarray(beta)[..., -1]
    phase = level_02_phase(p, dt, n, beta, alpha_t0)
    if np.ndim(b0) == 0:
        return dress(p, u, phase, alpha_t0, float(b0), float(b1))
    out = np.empty_like(u)
    for idx in np.ndindex(np.shape(b0)):
        out[idx] = dress(p, u[idx], phase[idx], alpha_t0, float(b0[idx]), float(b1[idx]))
    return out


# ---------------------------------------------------------------- full engine

def _nearest_unitary(m: np.ndarray) -> np.ndarray:
    # removes rounding drift accumulated over millions of fine steps
    w, _, vh = np.linalg.svd(m)
    return w @ vh


def _drive_pattern(eta: float) -> np.ndarray:
    m = np.zeros((5, 5))
    m[0, 1] = m[1, 0] = m[2, 3] = m[3, 2] = 1.0
    m[0, 2] = m[2, 0] = m[1, 3] = m[3, 1] = 1.0 + eta
    return m


def lab_field(p: SystemParams, waveform: Waveform, t) -> np.ndarray:
    """Transverse field ``E_X(t)`` (MHz) of the carrier-modulated drive."""
    ox, oy = waveform.at(t)
    wt = 2 * np.pi * p.ebar_z * MHZ_NS * np.asarray(t)
    return p.g_factor_rate * (ox * np.cos(wt) - oy * np.sin(wt))


def full_propagator(
    p: SystemParams,
    waveform: Waveform,
    dt: float = 2e-5,
    beta=None,
    beta_dt: float = 0.1,
    se: SystematicError | None = None,
    eta: float | None = None,
) -> Propagator:
    """Lab-frame 5x5 propagator under the five-level Hamiltonian.

    The static part (including the noise value, held constant over each
    ``beta_dt`` segment) is exponentiated exactly and the drive is applied
    by symmetric splitting on the fine step ``dt``.
    """
    se = se or SystematicError()
    eta = p.eta if eta is None else eta
    t_f = waveform.t_f
    n_seg = int(round(t_f / beta_dt))
    seg = t_f / n_seg
    m_fine = int(round(seg / dt))
    dt = seg / m_fine
    tunnel = p.t0 + se.alpha_t0
    h_max = max(abs(p.u_minus_eps) + (0 if beta is None else float(np.abs(beta).max())), p.ebar_z, tunnel)
    check_step(h_max, dt)
    beta = np.zeros(n_seg) if beta is None else np.asarray(beta, dtype=float)
    if beta.shape != (n_seg,):
        raise PropagationError(f"beta must have {n_seg} segment values, got {beta.shape}")

    pattern = _drive_pattern(eta)
    mu, w = np.linalg.eigh(pattern)
    proj = np.einsum("ik,jk->kij", w, w).reshape(5, 25)

    static = np.zeros((5, 5))
    static[0, 0] = p.ebar_z
    static[1, 1] = 0.5 * p.delta_ez
    static[2, 2] = -0.5 * p.delta_ez
    static[3, 3] = -p.ebar_z
    static[1, 4] = static[4, 1] = tunnel
    static[2, 4] = static[4, 2] = -tunnel

    u = np.eye(5, dtype=complex)
    for s in range(n_seg):
        h = static.copy()
        h[4, 4] = p.u_minus_eps + beta[s]
        half = hermitian_expm(h, -0.5j * TWO_PI_MHZ_NS * dt)
        t = s * seg + (np.arange(m_fine) + 0.5) * dt
        c = TWO_PI_MHZ_NS * dt * 0.5 * lab_field(p, waveform, t)
        kick = (np.exp(-1j * c[:, None] * mu) @ proj).reshape(-1, 5, 5)
        steps = half @ kick @ half
        u = _nearest_unitary(chain_product(steps) @ u)
    return Propagator(u, "lab", t_f)


def full_report(p: SystemParams, u: Propagator, target) -> FidelityReport:
    u4, leak = project_4x4(u)
    rot = to_rotating_frame(Propagator(u4, u.frame, u.t), p)
    return FidelityReport(float(infidelity(rot.matrix, target)), float(leak), "rotating")


# ---------------------------------------------------------------- ensembles

def _noise_block(bank, n_steps, dt, master_seed, start, count, stream):
    out = np.empty((count, n_steps))
    for i in range(count):
        ss = realization_seed(master_seed, start + i)
        rng = np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=(stream,)))
        out[i] = _ou_filter(bank, dt, n_steps, rng, None)
    return out


def realization_noise(spec: NoiseSpec | None, n_steps: int, dt: float, master_seed: int, start: int, count: int, stream: int = 0):
    """Noise values at step midpoints for realizations ``start .. start+count-1``."""
    if spec is None or spec.sigma == 0:
        return None
    return _noise_block(build_bank(spec), n_steps, dt, master_seed, start, count, stream)


@dataclass(frozen=True)
class _EnsembleJob:
    p: SystemParams
    alpha_t0: float
    spec: NoiseSpec | None
    dephasing: tuple | None
    omega_x: np.ndarray
    omega_y: np.ndarray
    dt: float
    target: np.ndarray
    master_seed: int
    sw_dressing: bool
    frame: str


def _run_block(job: _EnsembleJob, start: int, count: int) -> np.ndarray:
    n = job.omega_x.size
    t_f = n * job.dt
    beta = realization_noise(job.spec, n, job.dt, job.master_seed, start, count, 0)
    deph = None
    if job.dephasing is not None:
        d2 = realization_noise(job.dephasing[0], n, job.dt, job.master_seed, start, count, 1)
        d1 = realization_noise(job.dephasing[1], n, job.dt, job.master_seed, start, count, 2)
        d2 = np.zeros((count, n)) if d2 is None else d2
        d1 = np.zeros((count, n)) if d1 is None else d1
        deph = (d2, d1)
    steps = effective_steps(job.p, job.omega_x, job.omega_y, job.dt, beta=beta, alpha_t0=job.alpha_t0, dephasing=deph)
    if steps.ndim == 3:
        steps = np.broadcast_to(steps, (count,) + steps.shape)
    u = chain_product(steps)
    if job.sw_dressing:
        phase = level_02_phase(job.p, job.dt, n, beta, job.alpha_t0)
        phase = np.broadcast_to(phase, (count,))
        out = np.empty_like(u)
        for i in range(count):
            b0 = 0.0 if beta is None else float(beta[i, 0])
            b1 = 0.0 if beta is None else float(beta[i, -1])
            out[i] = dress(job.p, u[i], phase[i], job.alpha_t0, b0, b1)
        u = out
    if job.frame == "qubit":
        u = to_qubit_frame(u, job.p, t_f)
    return np.asarray(infidelity(u, job.target)).reshape(count)


def ensemble_infidelity(
    p: SystemParams,
    se: SystematicError | None,
    spec: NoiseSpec | None,
    pulses: Waveform | None,
    target,
    n: int,
    master_seed: int,
    engine: str = "effective",
    dt: float = 0.1,
    t_f: float | None = None,
    dephasing: tuple | None = None,
    sw_dressing: bool = False,
    block: int = 100,
    workers: int = 1,
    frame: str = "rotating",
    full_dt: float = 2e-5,
) -> EnsembleResult:
    """Mean gate infidelity over ``n`` noise realizations.

    Realization ``i`` draws its noise from a generator seeded by
    ``(master_seed, i)``, so the result does not depend on ``block`` or
    ``workers``.  ``dephasing`` is an optional pair of specs for Zeeman
    noise on dot 2 and dot 1.
    """
    se = se or SystematicError()
    target = np.asarray(target, dtype=complex)
    if pulses is None and t_f is None:
        raise PropagationError("need pulses or t_f")
    t_f = pulses.t_f if t_f is None else t_f
    tm = midpoints(t_f, dt)
    dt = t_f / tm.size
    if pulses is None:
        ox = oy = np.zeros(tm.size)
    else:
        ox, oy = pulses.at(tm)
    sigma = 0.0 if spec is None else spec.sigma

    if engine == "full":
        vals = []
        for i in range(n):
            beta = realization_noise(spec, tm.size, dt, master_seed, i, 1, 0)
            u = full_propagator(p, pulses, dt=full_dt, beta=None if beta is None else beta[0], beta_dt=dt, se=se, eta=0.0)
            vals.append(full_report(p, u, target).infidelity)
        return EnsembleResult.from_samples(vals, sigma)
    if engine != "effective":
        raise ValueError(f"unknown engine {engine!r}")

    job = _EnsembleJob(p, se.alpha_t0, spec, dephasing, np.asarray(ox), np.asarray(oy), dt, target, master_seed, sw_dressing, frame)
    starts = list(range(0, n, block))
    counts = [min(block, n - s) for s in starts]
    if workers > 1 and len(starts) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, [job] * len(starts), starts, counts))
    else:
        parts = [_run_block(job, s, c) for s, c in zip(starts, counts)]
    return EnsembleResult.from_samples(np.concatenate(parts), sigma)
