"""Control pulses in the sin^3 basis and the waveform-generator filter.

Field amplitudes are in mT, times in ns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

MIN_STEPS = 1000


class PulseError(ValueError):
    pass


@dataclass
class PulseParameterization:
    a: np.ndarray  # mT, Omega_X coefficients
    b: np.ndarray  # mT, Omega_Y coefficients
    t_f: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).copy()
        self.b = np.asarray(self.b, dtype=float).copy()
        if self.a.shape != self.b.shape or self.a.ndim != 1 or self.a.size < 1:
            raise PulseError("a and b must be equal-length non-empty vectors")
        if self.t_f <= 0:
            raise PulseError("t_f must be positive")

    @property
    def k_max(self) -> int:
        return int(self.a.size)

    @classmethod
    def zeros(cls, k_max: int, t_f: float) -> "PulseParameterization":
        return cls(np.zeros(k_max), np.zeros(k_max), t_f)

    @classmethod
    def from_vector(cls, x, t_f: float) -> "PulseParameterization":
        x = np.asarray(x, dtype=float)
        k = x.size // 2
        return cls(x[:k], x[k:], t_f)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    def frequencies(self) -> tuple[np.ndarray, np.ndarray]:
        """Angular frequencies (rad/ns) of the X and Y basis terms."""
        k = np.arange(1, self.k_max + 1)
        return (2 * k - 1) * np.pi / self.t_f, 2 * k * np.pi / self.t_f

    def evaluate(self, t) -> tuple[np.ndarray, np.ndarray]:
        bx, by = basis_matrices(self.k_max, self.t_f, t)
        return self.a @ bx, self.b @ by


def basis_matrices(k_max: int, t_f: float, t) -> tuple[np.ndarray, np.ndarray]:
    """sin^3 basis functions sampled at ``t``, each of shape ``(k_max, len(t))``."""
    t = np.asarray(t, dtype=float)
    k = np.arange(1, k_max + 1)[:, None]
    wx = (2 * k - 1) * np.pi / t_f
    wy = 2 * k * np.pi / t_f
    return np.sin(wx * t) ** 3, np.sin(wy * t) ** 3


@dataclass
class Waveform:
    dt: float
    omega_x: np.ndarray  # mT
    omega_y: np.ndarray  # mT
    filtered: bool = False
    _splines: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.omega_x = np.asarray(self.omega_x, dtype=float)
        self.omega_y = np.asarray(self.omega_y, dtype=float)
        if self.omega_x.shape != self.omega_y.shape:
            raise PulseError("channel lengths differ")
        if not (np.all(np.isfinite(self.omega_x)) and np.all(np.isfinite(self.omega_y))):
            raise PulseError("waveform contains non-finite samples")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.omega_x.size)

    @property
    def t_f(self) -> float:
        return self.dt * (self.omega_x.size - 1)

    def at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Cubic-spline interpolation of both channels; zero outside [0, t_f]."""
        if self._splines is None:
            self._splines = (
                CubicSpline(self.times, self.omega_x),
                CubicSpline(self.times, self.omega_y),
            )
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.t_f)
        sx, sy = self._splines
        return np.where(inside, sx(t), 0.0), np.where(inside, sy(t), 0.0)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ns", "omega_x_mT", "omega_y_mT"])
            for t, x, y in zip(self.times, self.omega_x, self.omega_y):
                w.writerow([f"{t:.6f}", f"{x:.12g}", f"{y:.12g}"])

    @classmethod
    def from_csv(cls, path, filtered: bool = False) -> "Waveform":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(float(data[1, 0] - data[0, 0]), data[:, 1], data[:, 2], filtered)


@dataclass(frozen=True)
class FilterModel:
    f_c: float = 425.4  # MHz

    def __post_init__(self):
        if not self.f_c > 0:
            raise PulseError("filter cutoff must be positive")

    @property
    def omega_c(self) -> float:
        """Angular cutoff in rad/ns."""
        return 2 * np.pi * self.f_c * 1e-3

    def response(self, omega):
        if np.isinf(self.f_c):
            return np.ones_like(np.asarray(omega, dtype=float))
        return np.exp(-((np.asarray(omega) / self.omega_c) ** 2))

    @property
    def kernel_width(self) -> float:
        """Standard deviation (ns) of the equivalent Gaussian kernel."""
        return 0.0 if np.isinf(self.f_c) else np.sqrt(2.0) / self.omega_c


def step_count(t_f: float, dt: float) -> int:
    if not dt > 0:
        raise PulseError(f"dt must be positive, got {dt}")
    n = int(round(t_f / dt))
    if n < MIN_STEPS:
        raise PulseError(f"dt={dt} ns gives {n} steps over {t_f} ns, need at least {MIN_STEPS}")
    if abs(n * dt - t_f) > 1e-9 * t_f:
        raise PulseError(f"dt={dt} ns does not divide t_f={t_f} ns")
    return n


def sample_envelope(p: PulseParameterization, dt: float) -> Waveform:
    n = step_count(p.t_f, dt)
    t = np.linspace(0.0, p.t_f, n + 1)
    ox, oy = p.evaluate(t)
    return Waveform(dt=p.t_f / n, omega_x=ox, omega_y=oy)


def filter_samples(x, dt: float, flt: FilterModel, axis: int = -1) -> np.ndarray:
    """Apply the Gaussian response to uniformly sampled data, zero-extended."""
    x = np.asarray(x, dtype=float)
    if np.isinf(flt.f_c):
        return x.copy()
    n = x.shape[axis]
    pad = int(np.ceil(8 * flt.kernel_width / dt)) + 1
    size = 1 << int(np.ceil(np.log2(n + 2 * pad)))
    spec = np.fft.rfft(x, n=size, axis=axis)
    omega = 2 * np.pi * np.fft.rfftfreq(size, d=dt)
    shape = [1] * x.ndim
    shape[axis] = omega.size
    out = np.fft.irfft(spec * flt.response(omega).reshape(shape), n=size, axis=axis)
    # circular wrap lands in the zero padding, which is discarded
    return np.take(out, np.arange(n), axis=axis)


def apply_filter(w: Waveform, flt: FilterModel) -> Waveform:
    if w.filtered:
        raise PulseError("waveform is already filtered")
    both = filter_samples(np.stack([w.omega_x, w.omega_y]), w.dt, flt)
    return Waveform(dt=w.dt, omega_x=both[0], omega_y=both[1], filtered=True)


@dataclass(frozen=True)
class FieldReport:
    total: float
    x: float
    y: float


def max_field(w: Waveform) -> FieldReport:
    if w.omega_x.size == 0:
        return FieldReport(0.0, 0.0, 0.0)
    return FieldReport(
        total=float(np.max(np.hypot(w.omega_x, w.omega_y))),
        x=float(np.max(np.abs(w.omega_x))),
        y=float(np.max(np.abs(w.omega_y))),
    )


def write_pulse_file(path, p: PulseParameterization) -> None:
    lines = [f"k_max {p.k_max}", f"t_f_ns {float(p.t_f)!r}", "a_mT b_mT"]
    lines += [f"{float(a)!r} {float(b)!r}" for a, b in zip(p.a, p.b)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pulse_file(path) -> PulseParameterization:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    header = {}
    body = []
    for row in rows:
        if row[0] in ("k_max", "t_f_ns"):
            header[row[0]] = row[1]
        elif row[0] == "a_mT":
            continue
        else:
            body.append([float(v) for v in row])
    if "k_max" not in header or "t_f_ns" not in header:
        raise PulseError(f"{path}: missing k_max or t_f_ns header")
    body = np.array(body, dtype=float).reshape(-1, 2)
    if body.shape[0] != int(header["k_max"]):
        raise PulseError(f"{path}: expected {header['k_max']} coefficient rows, found {body.shape[0]}")
    return PulseParameterization(body[:, 0], body[:, 1], float(header["t_f_ns"]))
