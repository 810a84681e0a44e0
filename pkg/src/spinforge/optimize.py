"""Multi-start quasi-Newton search over the sin^3 pulse coefficients."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import OptimizeResult, minimize

from .cost import CostBreakdown, CostFunctional
from .model import SystemParams
from .noise import NoiseSpec
from .pulse import FilterModel, PulseParameterization, apply_filter, max_field, sample_envelope

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizationConfig:
    k_max: int = 11
    t_f: float = 500.0
    xi: float = 1e-6
    max_field: float = 1.0  # mT
    restarts: int = 8
    max_iterations: int = 2000
    seed: int = 0
    stage: str = "unfiltered"
    convergence_tol: float = 1e-9
    plateau_window: int = 10
    init_range: float = 0.3  # mT
    dt: float = 0.1  # ns
    field_margin: float = 0.02  # penalty starts this fraction below max_field
    gradient: str = "adjoint"  # "fd", or "none" for a derivative-free search
    fd_step: float = 1e-4  # mT
    sw_dressing: bool = False
    correlation_model: str = "bank"

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if not self.max_field > 0:
            raise ValueError("max_field must be positive")
        if self.stage not in ("unfiltered", "fine_tune"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.gradient not in ("adjoint", "fd", "none"):
            raise ValueError(f"unknown gradient mode {self.gradient!r}")
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValueError("restarts and max_iterations must be positive")


TRACE_COLUMNS = ["restart", "iteration", "j1", "j2", "fluence_mT2_us", "total", "max_field_mT", "feasible", "best_total"]


@dataclass
class OptimizationTrace:
    iterations: list = field(default_factory=list)
    best: PulseParameterization | None = None
    best_breakdown: CostBreakdown | None = None
    converged: bool = False
    messages: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in self.iterations:
                w.writerow(row)


@dataclass(frozen=True)
class ConstraintReport:
    ok: bool
    peak_unfiltered: float
    peak_filtered: float
    channel_peaks: tuple


def constraint_check(pulses: PulseParameterization, cfg: OptimizationConfig, flt: FilterModel | None = None) -> ConstraintReport:
    """Per-channel peak field of the raw and the filtered waveform against ``cfg.max_field``."""
    flt = flt or FilterModel()
    raw = sample_envelope(pulses, pulses.t_f / max(1000, int(round(pulses.t_f / cfg.dt))))
    fil = apply_filter(raw, flt)
    r, f = max_field(raw), max_field(fil)
    peak_raw = max(r.x, r.y)
    peak_fil = max(f.x, f.y)
    ok = peak_raw <= cfg.max_field and peak_fil <= cfg.max_field
    return ConstraintReport(bool(ok), peak_raw, peak_fil, (r.x, r.y, f.x, f.y))


class _Plateau(Exception):
    pass


def _fd_gradient(fun, x, step):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g


def _local_search(cost: CostFunctional, x0, cfg: OptimizationConfig, restart: int, trace: OptimizationTrace, flt):
    history = []
    best_total = [np.inf if not trace.iterations else min(r[-1] for r in trace.iterations)]

    if cfg.gradient == "adjoint":
        def fun(x):
            f, g, _ = cost(x)
            return f, g
    else:
        def scalar(x):
            return cost(x, gradient=False)[0]

        def fun(x):
            return scalar(x), _fd_gradient(scalar, x, cfg.fd_step)
    derivative_free = cfg.gradient == "none"

    def record(x):
        _, _, b = cost(x, gradient=False)
        pulses = PulseParameterization.from_vector(x, cfg.t_f)
        # the penalty starts below max_field; only the hard limit decides feasibility
        feasible = constraint_check(pulses, cfg, flt).ok
        peak = float(np.max(np.abs(np.concatenate(cost.node_envelopes(x)))))
        if feasible:
            best_total[0] = min(best_total[0], b.total)
        trace.iterations.append(
            [restart, len(history), b.j1, b.j2, b.fluence, b.total, peak, int(feasible), best_total[0]]
        )
        history.append((b.total + b.penalty, x.copy(), b, feasible))

    def callback(intermediate_result: OptimizeResult):
        record(np.asarray(intermediate_result.x))
        w = cfg.plateau_window
        if len(history) > w and abs(history[-1][0] - history[-1 - w][0]) < cfg.convergence_tol:
            raise StopIteration

    record(np.asarray(x0, dtype=float))
    if derivative_free:
        res = minimize(
            scalar,
            np.asarray(x0, dtype=float),
            method="Powell",
            callback=callback,
            options={"maxiter": cfg.max_iterations, "xtol": 1e-6, "ftol": cfg.convergence_tol},
        )
    else:
        res = minimize(
            fun,
            np.asarray(x0, dtype=float),
            jac=True,
            method="BFGS",
            callback=callback,
            options={"maxiter": cfg.max_iterations, "gtol": 1e-14},
        )
    if not np.allclose(res.x, history[-1][1]):
        record(np.asarray(res.x))
    plateau = len(history) > cfg.plateau_window and abs(history[-1][0] - history[-1 - cfg.plateau_window][0]) < cfg.convergence_tol
    # BFGS also stops once the line search can no longer resolve the objective, which is a plateau too
    if derivative_free:
        converged = plateau or res.status == 0
    else:
        converged = plateau or res.status in (0, 2) or res.nit < cfg.max_iterations
    trace.messages.append(f"restart {restart}: {res.message} after {res.nit} iterations")
    return history, converged


def _search(cost, starts, cfg, flt, trace: OptimizationTrace):
    candidates = []
    any_converged = False
    for restart, x0 in enumerate(starts):
        history, converged = _local_search(cost, x0, cfg, restart, trace, flt)
        any_converged |= converged
        candidates += [(b.total, x, b) for _, x, b, ok in history if ok]
    trace.converged = any_converged
    if not any_converged:
        msg = "no restart reached the convergence plateau"
        trace.messages.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    if not candidates:
        trace.messages.append("no feasible candidate found")
        return trace
    total, x, b = min(candidates, key=lambda c: c[0])
    trace.best = PulseParameterization.from_vector(x, cfg.t_f)
    trace.best_breakdown = b
    return trace


def _cost(cfg: OptimizationConfig, p, target, spec, flt):
    return CostFunctional(
        p,
        target,
        cfg.t_f,
        cfg.k_max,
        spec,
        xi=cfg.xi,
        dt=cfg.dt,
        flt=flt,
        sw_dressing=cfg.sw_dressing,
        max_field=cfg.max_field * (1.0 - cfg.field_margin),
        correlation_model=cfg.correlation_model,
    )


def optimize_stage1(cfg: OptimizationConfig, p: SystemParams, target, spec: NoiseSpec | None) -> OptimizationTrace:
    """Minimise K over unfiltered pulses from ``cfg.restarts`` random starts."""
    if cfg.stage != "unfiltered":
        raise ValueError("optimize_stage1 needs cfg.stage == 'unfiltered'")
    cost = _cost(cfg, p, target, spec, None)
    rng = np.random.default_rng(cfg.seed)
    starts = [rng.uniform(-cfg.init_range, cfg.init_range, 2 * cfg.k_max) for _ in range(cfg.restarts)]
    trace = _search(cost, starts, cfg, FilterModel(), OptimizationTrace())
    if trace.best_breakdown is not None:
        log.info("stage 1 best: %s", trace.best_breakdown)
    return trace


def optimize_fine_tune(
    cfg: OptimizationConfig,
    p: SystemParams,
    target,
    spec: NoiseSpec | None,
    flt: FilterModel,
    start: PulseParameterization,
) -> OptimizationTrace:
    """Re-optimise ``start`` with the filter applied inside every cost evaluation."""
    if start.k_max != cfg.k_max or abs(start.t_f - cfg.t_f) > 1e-12:
        raise ValueError("start pulse does not match the configuration")
    cfg = replace(cfg, stage="fine_tune")
    cost = _cost(cfg, p, target, spec, flt)
    trace = _search(cost, [start.to_vector()], cfg, flt, OptimizationTrace())
    if trace.best_breakdown is not None:
        log.info("fine-tune best: %s", trace.best_breakdown)
    return trace


def evaluate_pulse(cfg: OptimizationConfig, p, target, spec, pulses: PulseParameterization, flt: FilterModel | None = None) -> CostBreakdown:
    """Cost breakdown of ``pulses`` under the same discretisation the search uses."""
    return _cost(cfg, p, target, spec, flt).breakdown(pulses.to_vector())
