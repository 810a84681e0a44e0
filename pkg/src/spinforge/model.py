"""Double-dot spin-qubit Hamiltonians.

All Hamiltonians are stored as H/h in MHz and times are in ns.  The basis
order is ``|up,up>, |up,down>, |down,up>, |down,down>, |0,2>`` with the
first label belonging to dot 2 and the second to dot 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

#: cycles accumulated by a 1 MHz frequency over 1 ns
MHZ_NS = 1e-3

#: smallest allowed ratio (U - eps) / t0 for the Schrieffer-Wolff picture
SWA_MIN_RATIO = 50.0


class ModelError(ValueError):
    """Raised when parameters violate a model precondition."""


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the double quantum dot (frequencies in MHz)."""

    ebar_z: float = 39.16e3
    delta_ez: float = -40.0
    t0: float = 900.0
    u_minus_eps: float = 276.71e3
    eta: float = 0.0
    g_factor_rate: float = 27.97  # MHz per mT

    def __post_init__(self):
        if not self.t0 > 0:
            raise ModelError(f"t0 must be positive, got {self.t0}")
        if abs(self.eta) > 0.1:
            raise ModelError(f"|eta| must not exceed 0.1, got {self.eta}")
        if self.g_factor_rate <= 0:
            raise ModelError("g_factor_rate must be positive")
        if not self.swa_valid:
            warnings.warn(
                f"u_minus_eps={self.u_minus_eps} MHz is below {SWA_MIN_RATIO:g}*t0 "
                "or comparable to |delta_ez|; effective models will refuse these parameters",
                stacklevel=2,
            )

    @property
    def swa_valid(self) -> bool:
        return (
            self.u_minus_eps >= SWA_MIN_RATIO * self.t0
            and self.u_minus_eps >= SWA_MIN_RATIO * abs(self.delta_ez)
        )

    def require_swa(self) -> None:
        if not self.swa_valid:
            raise ModelError(
                f"Schrieffer-Wolff picture invalid: u_minus_eps={self.u_minus_eps} MHz, "
                f"t0={self.t0} MHz, delta_ez={self.delta_ez} MHz"
            )

    def field_to_mhz(self, field_mt):
        """Convert a magnetic field amplitude in mT to a frequency in MHz."""
        return self.g_factor_rate * np.asarray(field_mt)


@dataclass(frozen=True)
class SystematicError:
    """Fixed tunnel-coupling offset for one device (MHz)."""

    alpha_t0: float = 0.0


@dataclass(frozen=True)
class HamiltonianSample:
    matrix: np.ndarray
    time: float

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        scale = max(np.abs(self.matrix).max(), 1.0)
        return bool(np.abs(self.matrix - self.matrix.conj().T).max() <= rtol * scale)


@dataclass(frozen=True)
class EffectiveModel:
    j_p: float
    j_m: float
    gamma_plus: float
    gamma_minus: float
    sw_generator: np.ndarray


def exchange_couplings(t0, u_minus_eps, delta_ez):
    """Return ``(J_p, J_m)``; broadcasts over array arguments."""
    t0 = np.asarray(t0, dtype=float)
    u = np.asarray(u_minus_eps, dtype=float)
    j_p = t0**2 / (u + 0.5 * delta_ez)
    j_m = t0**2 / (u - 0.5 * delta_ez)
    return j_p, j_m


def exchange_derivatives(t0, u_minus_eps, delta_ez):
    """Derivatives of ``(J_p, J_m)`` with respect to ``u_minus_eps``."""
    t0 = np.asarray(t0, dtype=float)
    u = np.asarray(u_minus_eps, dtype=float)
    return -(t0**2) / (u + 0.5 * delta_ez) ** 2, -(t0**2) / (u - 0.5 * delta_ez) ** 2


def sw_generator(t0: float, u_minus_eps: float, delta_ez: float) -> np.ndarray:
    """Anti-Hermitian generator S with ``e^S H e^-S`` removing the tunnel coupling."""
    g_plus = t0 / (u_minus_eps + 0.5 * delta_ez)
    g_minus = t0 / (u_minus_eps - 0.5 * delta_ez)
    s = np.zeros((5, 5))
    s[1, 4] = -g_minus
    s[2, 4] = g_plus
    s[4, 1] = g_minus
    s[4, 2] = -g_plus
    return s


def effective_model(p: SystemParams, alpha_t0: float = 0.0, beta: float = 0.0) -> EffectiveModel:
    p.require_swa()
    t0 = p.t0 + alpha_t0
    u = p.u_minus_eps + beta
    j_p, j_m = exchange_couplings(t0, u, p.delta_ez)
    return EffectiveModel(
        j_p=float(j_p),
        j_m=float(j_m),
        gamma_plus=t0 / (u + 0.5 * p.delta_ez),
        gamma_minus=t0 / (u - 0.5 * p.delta_ez),
        sw_generator=sw_generator(t0, u, p.delta_ez),
    )


def _five_level(ebar_z, delta_ez, tunnel, u_level, ex_1, ex_2, t):
    # ex_1 couples flips of dot 1, ex_2 flips of dot 2
    h = np.zeros((5, 5), dtype=complex)
    h[0, 0] = ebar_z
    h[1, 1] = 0.5 * delta_ez
    h[2, 2] = -0.5 * delta_ez
    h[3, 3] = -ebar_z
    h[4, 4] = u_level
    h[0, 1] = h[1, 0] = h[2, 3] = h[3, 2] = 0.5 * ex_1
    h[0, 2] = h[2, 0] = h[1, 3] = h[3, 1] = 0.5 * ex_2
    h[1, 4] = h[4, 1] = tunnel
    h[2, 4] = h[4, 2] = -tunnel
    return HamiltonianSample(h, float(t))


def ideal_hamiltonian(p: SystemParams, ex: float, t: float) -> HamiltonianSample:
    """Full five-level Hamiltonian with transverse field ``ex`` (MHz) at time ``t``."""
    return _five_level(p.ebar_z, p.delta_ez, p.t0, p.u_minus_eps, ex, (1 + p.eta) * ex, t)


def realistic_hamiltonian(
    p: SystemParams, se: SystematicError, beta: float, ex_filt: float, t: float
) -> HamiltonianSample:
    """Five-level Hamiltonian with detuning noise ``beta`` and tunnel offset ``se``.

    The g-factor difference is fixed to zero here, as in the noisy device model.
    """
    return _five_level(
        p.ebar_z,
        p.delta_ez,
        p.t0 + se.alpha_t0,
        p.u_minus_eps + beta,
        ex_filt,
        ex_filt,
        t,
    )


def sw_effective_hamiltonian_4x4(p: SystemParams, ex: float) -> tuple[np.ndarray, float]:
    """Second-order Schrieffer-Wolff Hamiltonian on the computational subspace.

    Returns the 4x4 block and the decoupled ``|0,2>`` energy.
    """
    eff = effective_model(p)
    j_bar = 0.5 * (eff.j_p + eff.j_m)
    h = np.array(
        [
            [p.ebar_z, 0.5 * ex, 0.5 * ex, 0.0],
            [0.5 * ex, 0.5 * p.delta_ez - eff.j_m, j_bar, 0.5 * ex],
            [0.5 * ex, j_bar, -0.5 * p.delta_ez - eff.j_m, 0.5 * ex],
            [0.0, 0.5 * ex, 0.5 * ex, -p.ebar_z],
        ],
        dtype=complex,
    )
    return h, p.u_minus_eps + eff.j_p + eff.j_m


def rwa_hamiltonian_4x4(p: SystemParams, omega_x: float, omega_y: float) -> np.ndarray:
    """Rotating-frame effective Hamiltonian; envelopes are given in MHz."""
    limit = p.ebar_z / 100.0
    if max(abs(omega_x), abs(omega_y)) >= limit:
        raise ModelError(
            f"drive envelope ({omega_x}, {omega_y}) MHz too strong for the RWA (limit {limit} MHz)"
        )
    return rwa_hamiltonian_batch(p, np.array([omega_x]), np.array([omega_y]))[0]


def rwa_hamiltonian_batch(p: SystemParams, omega_x, omega_y, beta=None, alpha_t0=0.0):
    """Vectorised rotating-frame Hamiltonians, shape ``(..., 4, 4)``.

    ``omega_x`` and ``omega_y`` are envelopes in MHz.  ``beta`` shifts
    ``u_minus_eps`` sample by sample and ``alpha_t0`` offsets the tunnel
    coupling; both enter through the exchange couplings only.
    """
    p.require_swa()
    omega_x = np.asarray(omega_x, dtype=float)
    omega_y = np.asarray(omega_y, dtype=float)
    shape = np.broadcast_shapes(omega_x.shape, omega_y.shape, np.shape(beta) if beta is not None else ())
    u = p.u_minus_eps + (0.0 if beta is None else np.asarray(beta, dtype=float))
    j_p, j_m = exchange_couplings(p.t0 + alpha_t0, u, p.delta_ez)
    j_p = np.broadcast_to(j_p, shape)
    j_m = np.broadcast_to(j_m, shape)
    d_lo = 0.25 * (omega_x + 1j * omega_y)
    d_lo = np.broadcast_to(d_lo, shape)
    h = np.zeros(shape + (4, 4), dtype=complex)
    h[..., 1, 1] = 0.5 * p.delta_ez - j_m
    h[..., 2, 2] = -0.5 * p.delta_ez - j_m
    h[..., 1, 2] = h[..., 2, 1] = 0.5 * (j_p + j_m)
    for lo, hi in ((1, 0), (2, 0), (3, 1), (3, 2)):
        h[..., lo, hi] = d_lo
        h[..., hi, lo] = d_lo.conj()
    return h


def rwa_drive_operators(p: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Hamiltonian per mT of ``Omega_X`` and of ``Omega_Y`` in the rotating frame."""
    mx = np.zeros((4, 4), dtype=complex)
    my = np.zeros((4, 4), dtype=complex)
    g = 0.25 * p.g_factor_rate
    for lo, hi in ((1, 0), (2, 0), (3, 1), (3, 2)):
        mx[lo, hi] = mx[hi, lo] = g
        my[lo, hi] = 1j * g
        my[hi, lo] = -1j * g
    return mx, my


def rwa_noise_operator(p: SystemParams, alpha_t0: float = 0.0) -> np.ndarray:
    """Derivative of the rotating-frame Hamiltonian with respect to ``u_minus_eps``."""
    dj_p, dj_m = exchange_derivatives(p.t0 + alpha_t0, p.u_minus_eps, p.delta_ez)
    v = np.zeros((4, 4), dtype=complex)
    v[1, 1] = v[2, 2] = -dj_m
    v[1, 2] = v[2, 1] = 0.5 * (dj_p + dj_m)
    return v


def sw_frame_maps(p: SystemParams, alpha_t0: float = 0.0, beta: float = 0.0):
    """Second-order truncations of ``(e^-S, e^+S)``."""
    s = effective_model(p, alpha_t0, beta).sw_generator
    s2 = 0.5 * s @ s
    eye = np.eye(5)
    return eye - s + s2, eye + s + s2


def rotating_frame_map(p: SystemParams, t) -> np.ndarray:
    """Diagonal frame unitary ``U_0(t)``; vectorised over ``t``."""
    t = np.asarray(t, dtype=float)
    phase = np.exp(-2j * np.pi * p.ebar_z * MHZ_NS * t)
    u = np.zeros(t.shape + (4, 4), dtype=complex)
    u[..., 0, 0] = phase
    u[..., 1, 1] = 1.0
    u[..., 2, 2] = 1.0
    u[..., 3, 3] = phase.conj()
    return u


def exchange_shifts(p: SystemParams, alpha_t0: float = 0.0, beta: float = 0.0) -> tuple[float, float]:
    """Exchange-induced frequency shifts of the ``|up,down>`` and ``|down,up>`` branches.

    Both branches are pushed down by the exchange; the values returned are
    the magnitudes of those shifts relative to the bare ``+-delta_ez/2``.
    Their sum is the conditional-phase rate ``2 J_m``.
    """
    eff = effective_model(p, alpha_t0, beta)
    j_bar = 0.5 * (eff.j_p + eff.j_m)
    half = 0.5 * abs(p.delta_ez)
    split = np.hypot(half, j_bar)
    # the lower-energy bare branch is pushed down by j_m + (split - half)
    lower = eff.j_m + split - half
    upper = eff.j_m - (split - half)
    if p.delta_ez < 0:
        return float(lower), float(upper)
    return float(upper), float(lower)
