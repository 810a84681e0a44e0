"""Robust-control cost ``K = J1 + <J2> + xi * F`` and its gradient.

The noiseless propagator and the noise response are computed with the
effective rotating-frame model.  The noise response uses the derivative of
that model with respect to ``u_minus_eps``, which is the computational-block
image of the |0,2> projector after the Schrieffer-Wolff transformation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evolve import (
    TWO_PI_MHZ_NS,
    effective_propagator,
    infidelity,
    level_02_phase,
    midpoints,
)
from .model import (
    SystemParams,
    rwa_drive_operators,
    rwa_hamiltonian_batch,
    rwa_noise_operator,
    sw_frame_maps,
)
from .noise import NoiseSpec, build_bank, correlation
from .pulse import FilterModel, Waveform, basis_matrices, filter_samples

DEFAULT_XI = 1e-6
US_PER_NS = 1e-3  # fluence is reported in mT^2 us
MAX_J2_POINTS = 2000


@dataclass(frozen=True)
class CostBreakdown:
    j1: float
    j2: float
    fluence: float
    xi: float
    total: float
    penalty: float = 0.0

    @classmethod
    def assemble(cls, j1, j2, fluence, xi, penalty=0.0) -> "CostBreakdown":
        return cls(float(j1), float(j2), float(fluence), float(xi), float(j1 + j2 + xi * fluence), float(penalty))


@dataclass
class NoiseResponseCache:
    grid: np.ndarray  # ns
    r_ops: np.ndarray  # (m, 4, 4)
    traces: np.ndarray  # (m,)


def noise_correlation(spec: NoiseSpec, tau, model: str = "bank") -> np.ndarray:
    """Correlation used by J2: of the sampled OU bank, or of the analytic spectrum."""
    if model == "bank":
        return build_bank(spec).correlation(tau)
    if model == "analytic":
        return correlation(spec, tau)
    raise ValueError(f"unknown correlation model {model!r}")


def _quadrature(n_steps: int, dt: float, max_points: int):
    """Grid indices and trapezoid weights; the last interval may be shorter."""
    stride = max(1, int(np.ceil(n_steps / (max_points - 1))))
    idx = np.arange(0, n_steps + 1, stride)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx, _trap_weights(idx * dt)


def _prefix(steps: np.ndarray) -> np.ndarray:
    """``out[k] = S[k-1] ... S[0]`` for ``k = 0..n``."""
    n = steps.shape[0]
    out = np.empty((n + 1,) + steps.shape[1:], dtype=complex)
    out[0] = np.eye(steps.shape[-1])
    for k in range(n):
        out[k + 1] = steps[k] @ out[k]
    return out


def fluence_from_samples(ox, oy, dt: float) -> float:
    """Fluence in mT^2 us of envelopes in mT sampled every ``dt`` ns."""
    ex = np.trapezoid(np.square(ox), dx=dt * US_PER_NS)
    ey = np.trapezoid(np.square(oy), dx=dt * US_PER_NS)
    return float(ex + ey + abs(ex - ey))


def fluence(pulses: Waveform) -> float:
    return fluence_from_samples(pulses.omega_x, pulses.omega_y, pulses.dt)


def j1(p: SystemParams, pulses: Waveform, target, dt: float = 0.1, sw_dressing: bool = False) -> float:
    u = effective_propagator(p, pulses, dt=dt, sw_dressing=sw_dressing)
    return float(infidelity(u, target))


def build_noise_response(
    p: SystemParams, pulses: Waveform | None, dt: float = 0.1, t_f: float | None = None, max_points: int = MAX_J2_POINTS
) -> NoiseResponseCache:
    t_f = pulses.t_f if t_f is None else t_f
    tm = midpoints(t_f, dt)
    n = tm.size
    dt = t_f / n
    ox, oy = (np.zeros(n), np.zeros(n)) if pulses is None else pulses.at(tm)
    h = rwa_hamiltonian_batch(p, p.field_to_mhz(ox), p.field_to_mhz(oy))
    w, v = np.linalg.eigh(h)
    steps = (v * np.exp(-1j * TWO_PI_MHZ_NS * dt * w)[..., None, :]) @ v.conj().swapaxes(-1, -2)
    prefix = _prefix(steps)
    idx, _ = _quadrature(n, dt, max_points)
    u = prefix[idx]
    vop = rwa_noise_operator(p)
    r = u.conj().swapaxes(-1, -2) @ vop @ u
    return NoiseResponseCache(grid=idx * dt, r_ops=r, traces=np.real(np.einsum("nii->n", r)))


def _trap_weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros(grid.size)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def j2(cache: NoiseResponseCache, spec: NoiseSpec, model: str = "bank") -> float:
    if spec.sigma == 0:
        return 0.0
    w = _trap_weights(cache.grid)
    c = noise_correlation(spec, cache.grid[:, None] - cache.grid[None, :], model)
    k = w[:, None] * w[None, :] * c
    return _j2_from(k, cache.r_ops, cache.traces)


def _j2_from(k: np.ndarray, r: np.ndarray, tau: np.ndarray) -> float:
    m = r.shape[0]
    kr = (k @ r.reshape(m, -1)).reshape(r.shape)
    quad = np.real(np.einsum("nij,nji->", r, kr))
    lin = tau @ k @ tau
    return float(TWO_PI_MHZ_NS**2 * (0.25 * quad - lin / 16.0))


def total_cost(
    p: SystemParams,
    pulses: Waveform,
    target,
    spec: NoiseSpec,
    xi: float = DEFAULT_XI,
    dt: float = 0.1,
    model: str = "bank",
) -> CostBreakdown:
    val_j1 = j1(p, pulses, target, dt)
    val_j2 = j2(build_noise_response(p, pulses, dt), spec, model)
    return CostBreakdown.assemble(val_j1, val_j2, fluence(pulses), xi)


class CostFunctional:
    """Cost and analytic gradient over the sin^3 coefficients ``x = (a, b)``.

    The pulse envelope is held constant over each propagation step at its
    midpoint value.  When ``flt`` is given the basis functions are filtered
    before use, so that the cost sees the distorted pulse.
    """

    def __init__(
        self,
        p: SystemParams,
        target,
        t_f: float,
        k_max: int,
        spec: NoiseSpec | None,
        xi: float = DEFAULT_XI,
        dt: float = 0.1,
        flt: FilterModel | None = None,
        sw_dressing: bool = False,
        max_field: float = 1.0,
        penalty_weight: float = 1e3,
        correlation_model: str = "bank",
        max_points: int = MAX_J2_POINTS,
        alpha_t0: float = 0.0,
    ):
        self.p = p
        self.target = np.asarray(target, dtype=complex)
        self.t_f = float(t_f)
        self.k_max = int(k_max)
        self.spec = spec
        self.xi = xi
        self.flt = flt
        self.sw_dressing = sw_dressing
        self.max_field = max_field
        self.penalty_weight = penalty_weight
        self.alpha_t0 = alpha_t0

        n = int(round(t_f / dt))
        self.n = n
        self.dt = t_f / n
        # half-step grid holds both the nodes (even) and the midpoints (odd)
        fine = np.linspace(0.0, t_f, 2 * n + 1)
        bx, by = basis_matrices(k_max, t_f, fine)
        if flt is not None:
            bx = filter_samples(bx, 0.5 * self.dt, flt)
            by = filter_samples(by, 0.5 * self.dt, flt)
        self.bx_mid, self.by_mid = bx[:, 1::2], by[:, 1::2]
        self.bx_node, self.by_node = bx[:, ::2], by[:, ::2]
        wt = np.full(n + 1, self.dt * US_PER_NS)
        wt[0] = wt[-1] = 0.5 * self.dt * US_PER_NS
        self.gram_x = (self.bx_node * wt) @ self.bx_node.T
        self.gram_y = (self.by_node * wt) @ self.by_node.T

        self.h0 = rwa_hamiltonian_batch(p, 0.0, 0.0, alpha_t0=alpha_t0)
        self.mx, self.my = rwa_drive_operators(p)

        if sw_dressing:
            em, _ = sw_frame_maps(p, alpha_t0)
            _, ep = sw_frame_maps(p, alpha_t0)
            a4, b4 = em[:4, :4], ep[:4, :4]
            self.w_dress = b4 @ self.target.conj().T @ a4
            phase = level_02_phase(p, self.dt, n, None, alpha_t0)
            self.o_const = np.exp(-1j * phase) * (ep[4, :4] @ self.target.conj().T @ em[:4, 4])
        else:
            self.w_dress = self.target.conj().T
            self.o_const = 0.0

        self.noise_on = spec is not None and spec.sigma > 0
        if self.noise_on:
            idx, w = _quadrature(n, self.dt, max_points)
            grid = idx * self.dt
            c = noise_correlation(spec, grid[:, None] - grid[None, :], correlation_model)
            self.q_idx = idx
            self.q_k = w[:, None] * w[None, :] * c
            self.vop = rwa_noise_operator(p, alpha_t0)
        self.evaluations = 0
        self._last = None

    # -- waveforms
    def envelopes(self, x):
        x = np.asarray(x, dtype=float)
        a, b = x[: self.k_max], x[self.k_max :]
        return a @ self.bx_mid, b @ self.by_mid

    def node_envelopes(self, x):
        x = np.asarray(x, dtype=float)
        a, b = x[: self.k_max], x[self.k_max :]
        return a @ self.bx_node, b @ self.by_node

    def waveform(self, x) -> Waveform:
        ox, oy = self.node_envelopes(x)
        return Waveform(self.dt, ox, oy, filtered=self.flt is not None)

    # -- pieces
    def _fluence(self, x):
        a, b = x[: self.k_max], x[self.k_max :]
        ex = a @ self.gram_x @ a
        ey = b @ self.gram_y @ b
        s = np.sign(ex - ey)
        f = ex + ey + abs(ex - ey)
        grad = np.concatenate([2 * (1 + s) * (self.gram_x @ a), 2 * (1 - s) * (self.gram_y @ b)])
        return float(f), grad

    def _penalty(self, x):
        ox, oy = self.node_envelopes(x)
        gx = np.clip(np.abs(ox) - self.max_field, 0.0, None)
        gy = np.clip(np.abs(oy) - self.max_field, 0.0, None)
        pen = self.penalty_weight * (np.sum(gx**2) + np.sum(gy**2)) * self.dt
        ga = 2 * self.penalty_weight * self.dt * (gx * np.sign(ox))
        gb = 2 * self.penalty_weight * self.dt * (gy * np.sign(oy))
        return float(pen), np.concatenate([self.bx_node @ ga, self.by_node @ gb])

    def __call__(self, x, gradient: bool = True):
        """Return ``(objective, grad, breakdown)``; objective includes the field penalty."""
        x = np.asarray(x, dtype=float)
        if self._last is not None and np.array_equal(self._last[0], x) and (self._last[2] is not None or not gradient):
            return self._last[1], self._last[2], self._last[3]
        out = self._evaluate(x, gradient)
        self._last = (x.copy(),) + out
        return out

    def _evaluate(self, x, gradient):
        self.evaluations += 1
        ox, oy = self.envelopes(x)
        h = self.h0 + ox[:, None, None] * self.mx + oy[:, None, None] * self.my
        scale = -1j * TWO_PI_MHZ_NS * self.dt
        w, v = np.linalg.eigh(h)
        ew = np.exp(scale * w)
        vh = v.conj().swapaxes(-1, -2)
        steps = (v * ew[..., None, :]) @ vh
        prefix = _prefix(steps)
        u_end = prefix[-1]

        overlap = np.trace(self.w_dress @ u_end) + self.o_const
        val_j1 = 1.0 - abs(overlap) ** 2 / 16.0

        # z[k] is the adjoint acting on the step k's perturbation after moving it to t = 0
        z = np.broadcast_to((-(1.0 / 8.0) * np.conj(overlap)) * (self.w_dress @ u_end), (self.n, 4, 4)).copy()

        val_j2 = 0.0
        if self.noise_on:
            u_q = prefix[self.q_idx]
            r = u_q.conj().swapaxes(-1, -2) @ self.vop @ u_q
            tau = np.real(np.einsum("nii->n", r))
            m = r.shape[0]
            kr = (self.q_k @ r.reshape(m, -1)).reshape(r.shape)
            ktau = self.q_k @ tau
            c2 = TWO_PI_MHZ_NS**2
            val_j2 = float(c2 * (0.25 * np.real(np.einsum("nij,nji->", r, kr)) - (tau @ ktau) / 16.0))
            if gradient:
                gmat = c2 * (0.5 * kr - (ktau / 8.0)[:, None, None] * np.eye(4))
                comm = gmat @ r - r @ gmat
                # grid point i covers steps k < q_idx[i]; suffix sum over grid points
                suffix = np.cumsum(comm[::-1], axis=0)[::-1]
                pos = np.searchsorted(self.q_idx, np.arange(1, self.n + 1), side="left")
                z += suffix[pos]

        val_f, grad_f = self._fluence(x)
        val_pen, grad_pen = self._penalty(x)
        breakdown = CostBreakdown.assemble(val_j1, val_j2, val_f, self.xi, val_pen)
        objective = breakdown.total + val_pen
        if not gradient:
            return objective, None, breakdown

        # d/dtheta_k of Re Tr(Omega_k Z_k), Omega_k = U_{k-1}^dag S_k^dag dS_k U_{k-1}
        before = prefix[:-1]
        y = before @ z @ before.conj().swapaxes(-1, -2) @ steps.conj().swapaxes(-1, -2)
        xw = scale * w
        diff = xw[..., :, None] - xw[..., None, :]
        same = np.abs(diff) < 1e-12
        lmat = np.where(same, ew[..., :, None], (ew[..., :, None] - ew[..., None, :]) / np.where(same, 1.0, diff))
        y_eig = vh @ y @ v
        grads = []
        for op in (self.mx, self.my):
            e_eig = vh @ (scale * op) @ v
            grads.append(np.real(np.einsum("npq,npq,nqp->n", e_eig, lmat, y_eig)))
        gx, gy = grads
        grad = np.concatenate([self.bx_mid @ gx, self.by_mid @ gy])
        grad += self.xi * grad_f + grad_pen
        return objective, grad, breakdown

    def breakdown(self, x) -> CostBreakdown:
        return self(x, gradient=False)[2]
