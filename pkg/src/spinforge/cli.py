"""Command-line front end.

Configuration is a flat ``section.key = value`` text file; every key can also
be given as a flag (``--system.t0-mhz 900``).  Each run writes into a fresh
timestamped directory under ``run.output_dir`` together with ``manifest.json``
and ``config.txt``; passing that ``config.txt`` back with ``--config``
reproduces the run.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .evolve import CNOT, TARGETS, PropagationError, ensemble_infidelity, write_ensemble_csv
from .experiments import (
    GateCase,
    calibrate_dephasing,
    cphase_case,
    dephasing_characterization,
    dephasing_contribution,
    design_gate,
    example_trajectories,
    ideal_cphase,
    quasi_static_t2,
    sigma_sweep,
    single_qubit_gates,
    spectral_alpha_sweep,
    spectrum_table,
    t0_uncertainty_sweep,
    write_manifest,
)
from .model import ModelError, SystemParams
from .noise import NoiseError, NoiseSpec
from .optimize import OptimizationConfig, constraint_check
from .pulse import FilterModel, PulseError, apply_filter, read_pulse_file, sample_envelope, write_pulse_file

log = logging.getLogger("spinforge")

COMMANDS = (
    "characterize-noise",
    "optimize",
    "evaluate",
    "sweep-sigma",
    "sweep-t0",
    "sweep-alpha",
    "single-qubit",
    "dephasing-contribution",
    "export-pulse",
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CONSTRAINT = 0, 2, 3, 4
SEED_ENV = "SPINFORGE_SEED"

DEFAULT_VALUES = {
    "sweep-sigma": "240,2400,6000,10000,20000,40000",
    "sweep-t0": "-108,-72,-27,-9,0,9,27,72,108",
    "sweep-alpha": "0.7,0.8,0.9,1.01",
}


class ConfigError(ValueError):
    pass


class ConstraintViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class RunOptions:
    n: int = 1000
    gate: str = "cnot"
    pulse: str = ""
    values: str = ""
    threads: int = 1
    dt: float = 0.1  # ns, propagation step
    trajectory_dt: float = 1000.0  # ns, example noise trajectories
    trajectory_steps: int = 10000


@dataclass(frozen=True)
class RunConfig:
    command: str
    system: SystemParams = field(default_factory=SystemParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    optimization: OptimizationConfig = field(default_factory=OptimizationConfig)
    filter: FilterModel = field(default_factory=FilterModel)
    output_dir: Path = Path("runs")
    master_seed: int = 0
    run: RunOptions = field(default_factory=RunOptions)

    def values(self) -> list:
        text = self.run.values or DEFAULT_VALUES.get(self.command, "")
        return [float(v) for v in text.split(",") if v.strip()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (section, attribute, parser); units are part of the key names
KEYS = {
    "system.ebar_z_mhz": ("system", "ebar_z", float),
    "system.delta_ez_mhz": ("system", "delta_ez", float),
    "system.t0_mhz": ("system", "t0", float),
    "system.u_minus_eps_mhz": ("system", "u_minus_eps", float),
    "system.eta": ("system", "eta", float),
    "system.g_factor_rate_mhz_per_mt": ("system", "g_factor_rate", float),
    "noise.alpha": ("noise", "alpha", float),
    "noise.sigma_mhz": ("noise", "sigma", float),
    "noise.f_low_hz": ("noise", "f_low", float),
    "noise.f_high_hz": ("noise", "f_high", float),
    "noise.white_floor_mhz2_per_hz": ("noise", "white_floor", float),
    "optimization.k_max": ("optimization", "k_max", int),
    "optimization.t_f_ns": ("optimization", "t_f", float),
    "optimization.xi": ("optimization", "xi", float),
    "optimization.max_field_mt": ("optimization", "max_field", float),
    "optimization.restarts": ("optimization", "restarts", int),
    "optimization.max_iterations": ("optimization", "max_iterations", int),
    "optimization.seed": ("optimization", "seed", int),
    "optimization.convergence_tol": ("optimization", "convergence_tol", float),
    "optimization.plateau_window": ("optimization", "plateau_window", int),
    "optimization.init_range_mt": ("optimization", "init_range", float),
    "optimization.dt_ns": ("optimization", "dt", float),
    "optimization.field_margin": ("optimization", "field_margin", float),
    "optimization.gradient": ("optimization", "gradient", str),
    "optimization.sw_dressing": ("optimization", "sw_dressing", _bool),
    "optimization.correlation_model": ("optimization", "correlation_model", str),
    "filter.f_c_mhz": ("filter", "f_c", float),
    "run.output_dir": ("", "output_dir", Path),
    "run.master_seed": ("", "master_seed", int),
    "run.n": ("run", "n", int),
    "run.gate": ("run", "gate", str),
    "run.pulse": ("run", "pulse", str),
    "run.values": ("run", "values", str),
    "run.threads": ("run", "threads", int),
    "run.dt_ns": ("run", "dt", float),
    "run.trajectory_dt_ns": ("run", "trajectory_dt", float),
    "run.trajectory_steps": ("run", "trajectory_steps", int),
}

SHORT_FLAGS = {
    "gate": "run.gate",
    "pulse": "run.pulse",
    "sigma": "noise.sigma_mhz",
    "n": "run.n",
    "values": "run.values",
    "seed": "run.master_seed",
    "threads": "run.threads",
    "output_dir": "run.output_dir",
}


def read_config_file(path) -> list:
    """(key, value, provenance) triples from a flat key = value file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in text.split("=", 1))
        out.append((key, value, f"{path}:{lineno}"))
    return out


def build_config(command: str, entries: list) -> RunConfig:
    """Validate (key, value, provenance) entries on top of the defaults."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    sections = {"system": {}, "noise": {}, "optimization": {}, "filter": {}, "run": {}, "": {}}
    origin = {}
    for key, value, where in entries:
        if key not in KEYS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        section, attr, parse = KEYS[key]
        try:
            sections[section][attr] = parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
        origin[(section, attr)] = where

    def make(section, cls):
        try:
            return cls(**sections[section])
        except (ModelError, NoiseError, PulseError, ValueError) as exc:
            wheres = sorted({origin[(section, a)] for a in sections[section]})
            at = f" (set at {', '.join(wheres)})" if wheres else ""
            raise ConfigError(f"invalid {section} settings{at}: {exc}") from None

    top = sections[""]
    cfg = RunConfig(
        command=command,
        system=make("system", SystemParams),
        noise=make("noise", NoiseSpec),
        optimization=make("optimization", OptimizationConfig),
        filter=make("filter", FilterModel),
        output_dir=top.get("output_dir", Path("runs")),
        master_seed=top.get("master_seed", 0),
        run=make("run", RunOptions),
    )
    if cfg.run.n < 1:
        raise ConfigError(f"run.n must be at least 1 ({origin.get(('run', 'n'), 'default')})")
    if cfg.run.threads < 1:
        raise ConfigError("run.threads must be at least 1")
    if cfg.run.gate not in TARGETS and cfg.run.gate != "cphase":
        raise ConfigError(f"unknown gate {cfg.run.gate!r} ({origin.get(('run', 'gate'), 'default')})")
    try:
        cfg.values()
    except ValueError as exc:
        raise ConfigError(f"run.values: {exc}") from None
    return cfg


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinforge", description="Robust pulse design for a two-spin double quantum dot.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--gate", help="cnot, cz, ix, hi, identity or cphase (ideal C-phase)")
    ap.add_argument("--pulse", help="pulse coefficient file")
    ap.add_argument("--sigma", help="electrical noise strength in MHz")
    ap.add_argument("--n", help="noise realizations per ensemble")
    ap.add_argument("--values", help="comma-separated sweep values")
    ap.add_argument("--seed", help="master seed")
    ap.add_argument("--threads", help="worker processes for ensembles")
    ap.add_argument("--output-dir", dest="output_dir", help="parent directory of run directories")
    ap.add_argument("-v", "--verbose", action="store_true")
    for key in KEYS:
        ap.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=argparse.SUPPRESS)
    return ap


def parse_config(argv=None, env=None) -> RunConfig:
    """RunConfig from defaults, then ``--config`` file, then the seed env var, then flags."""
    env = os.environ if env is None else env
    try:
        args = parser().parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:
            raise
        raise ConfigError("invalid command line") from None
    entries = read_config_file(args.config) if args.config else []
    if env.get(SEED_ENV):
        entries.append(("run.master_seed", env[SEED_ENV], f"${SEED_ENV}"))
    for name, key in SHORT_FLAGS.items():
        value = getattr(args, name)
        if value is not None:
            entries.append((key, value, f"--{name.replace('_', '-')}"))
    for key in KEYS:
        value = getattr(args, key)
        if value is not None:
            entries.append((key, value, "--" + key.replace("_", "-")))
    return build_config(args.command, entries)


def config_lines(cfg: RunConfig) -> list:
    """The resolved configuration as key = value lines."""
    lines = []
    for key, (section, attr, _) in KEYS.items():
        obj = cfg if section == "" else getattr(cfg, section)
        value = getattr(obj, attr)
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return lines


def make_run_dir(cfg: RunConfig) -> Path:
    """A new directory that no earlier run has used."""
    parent = Path(cfg.output_dir)
    parent.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S_%fZ")
    base = parent / f"{cfg.command}-{stamp}"
    path, k = base, 1
    while True:
        try:
            path.mkdir()
            return path
        except FileExistsError:
            path = Path(f"{base}-{k}")
            k += 1


# ---------------------------------------------------------------- commands

def _target(cfg: RunConfig):
    return CNOT if cfg.run.gate == "cphase" else TARGETS[cfg.run.gate]


def _pulse_waveform(cfg: RunConfig):
    if not cfg.run.pulse:
        raise ConfigError("this command needs --pulse")
    pulses = read_pulse_file(cfg.run.pulse)
    return pulses, apply_filter(sample_envelope(pulses, _step(pulses.t_f, cfg.run.dt)), cfg.filter)


def _step(t_f: float, dt: float) -> float:
    return t_f / max(1000, int(round(t_f / dt)))


def _gate_case(cfg: RunConfig) -> GateCase:
    if cfg.run.gate == "cphase":
        return cphase_case(ideal_cphase(cfg.system, dt=cfg.run.dt))
    _, w = _pulse_waveform(cfg)
    return GateCase("optimal_fine_tuned", TARGETS[cfg.run.gate], w)


def _write_rows(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def cmd_characterize_noise(cfg: RunConfig, out: Path) -> dict:
    p, spec = cfg.system, cfg.noise
    _write_rows(out / "spectrum.csv", ["frequency_Hz", "analytic_MHz2_per_Hz", "bank_MHz2_per_Hz"], spectrum_table(spec))
    traj = example_trajectories(spec, 10, cfg.run.trajectory_steps, cfg.run.trajectory_dt, cfg.master_seed)
    t = cfg.run.trajectory_dt * (np.arange(traj.shape[1]) + 0.5)
    _write_rows(out / "trajectories.csv", ["time_ns"] + [f"beta_{i}_MHz" for i in range(10)], np.column_stack([t, traj.T]))
    curve, fit = dephasing_characterization(p, spec, n=cfg.run.n, seed=cfg.master_seed)
    curve.to_csv(out / "dephasing_curve.csv")
    qs = quasi_static_t2(p, spec.sigma) if spec.sigma > 0 else math.inf
    _write_rows(
        out / "dephasing_fit.csv",
        ["t2_star_us", "frequency_MHz", "exponent", "residual_rms", "converged", "quasi_static_t2_us"],
        [[fit.t2_star, fit.frequency, fit.exponent, fit.residual, int(fit.converged), qs]],
    )
    log.info("T2* = %.4g us, a = %.3g (residual %.3g)", fit.t2_star, fit.exponent, fit.residual)
    return {"t2_star_us": fit.t2_star, "exponent": fit.exponent, "residual": fit.residual}


def _write_design(out: Path, name: str, design, cfg: RunConfig) -> dict:
    write_pulse_file(out / f"{name}_stage1.pulse", design.stage1.best)
    write_pulse_file(out / f"{name}.pulse", design.pulses)
    design.stage1.to_csv(out / f"{name}_trace_stage1.csv")
    design.fine_tuned.to_csv(out / f"{name}_trace_fine_tune.csv")
    b = design.fine_tuned.best_breakdown
    report = constraint_check(design.pulses, cfg.optimization, design.filter)
    _write_rows(
        out / f"{name}_breakdown.csv",
        ["j1", "j2", "fluence_mT2_us", "xi", "total", "peak_unfiltered_mT", "peak_filtered_mT", "converged"],
        [[b.j1, b.j2, b.fluence, b.xi, b.total, report.peak_unfiltered, report.peak_filtered, int(design.fine_tuned.converged)]],
    )
    if not report.ok:
        raise ConstraintViolation(f"{name}: peak field {max(report.peak_unfiltered, report.peak_filtered):.4f} mT exceeds {cfg.optimization.max_field} mT")
    return {"j1": b.j1, "j2": b.j2, "fluence": b.fluence, "total": b.total, "peak_filtered_mT": report.peak_filtered}


def cmd_optimize(cfg: RunConfig, out: Path) -> dict:
    if cfg.run.gate == "cphase":
        raise ConfigError("the ideal C-phase is not optimised; use evaluate --gate cphase")
    design = design_gate(cfg.system, _target(cfg), cfg.noise, cfg.optimization, cfg.filter)
    return _write_design(out, cfg.run.gate, design, cfg)


def cmd_evaluate(cfg: RunConfig, out: Path) -> dict:
    gate = _gate_case(cfg)
    r = ensemble_infidelity(
        cfg.system, None, cfg.noise, gate.waveform, gate.target, cfg.run.n, cfg.master_seed,
        dt=cfg.run.dt, t_f=gate.t_f if gate.waveform is None else None, workers=cfg.run.threads,
    )
    write_ensemble_csv(out / "evaluation.csv", [r], extra={"gate": cfg.run.gate})
    return {"mean_infidelity": r.mean_infidelity, "std_error": r.std_error}


def _sweep_gates(cfg: RunConfig) -> list:
    gates = [cphase_case(ideal_cphase(cfg.system, dt=cfg.run.dt))]
    if cfg.run.pulse:
        _, w = _pulse_waveform(cfg)
        gates.insert(0, GateCase("optimal_fine_tuned", _target(cfg), w))
    return gates


def cmd_sweep_sigma(cfg: RunConfig, out: Path) -> dict:
    results = sigma_sweep(cfg.system, _sweep_gates(cfg), cfg.values(), cfg.noise, cfg.run.n, cfg.master_seed, cfg.run.threads)
    for i, r in enumerate(results):
        r.to_csv(out / "sweep_sigma.csv", append=i > 0)
    return {r.gate: r.points for r in results}


def cmd_sweep_t0(cfg: RunConfig, out: Path) -> dict:
    summary = {}
    for i, g in enumerate(_sweep_gates(cfg)):
        r = t0_uncertainty_sweep(cfg.system, g, cfg.values(), cfg.noise.sigma, cfg.run.n, cfg.master_seed, cfg.noise, cfg.run.threads)
        r.to_csv(out / "sweep_t0.csv", append=i > 0)
        summary[r.gate] = r.points
    return summary


def cmd_sweep_alpha(cfg: RunConfig, out: Path) -> dict:
    sweep, designs = spectral_alpha_sweep(
        cfg.values(), cfg.system, cfg.noise.sigma, cfg.run.n, cfg.master_seed, cfg.optimization,
        _target(cfg), cfg.filter, cfg.run.threads,
    )
    sweep.to_csv(out / "sweep_alpha.csv")
    for a, d in designs.items():
        _write_design(out, f"{cfg.run.gate}_alpha{a:g}", d, cfg)
    return {"points": sweep.points}


def cmd_single_qubit(cfg: RunConfig, out: Path) -> dict:
    res = single_qubit_gates(cfg.system, cfg.noise, cfg.run.n, cfg.master_seed, cfg.optimization, cfg.filter, cfg.run.threads)
    summary = {}
    for name, (r, design) in res.items():
        _write_design(out, name, design, replace(cfg, optimization=replace(cfg.optimization, k_max=8, t_f=design.pulses.t_f)))
        write_ensemble_csv(out / f"{name}_evaluation.csv", [r], extra={"gate": name})
        summary[name] = r.mean_infidelity
    return summary


def cmd_dephasing_contribution(cfg: RunConfig, out: Path) -> dict:
    cal = calibrate_dephasing()
    _write_rows(
        out / "dephasing_calibration.csv",
        ["sigma_MHz", "alpha", "f_low_Hz", "f_high_Hz", "white_floor_MHz2_per_Hz", "t2_star_us", "free_fit_t2_us", "free_fit_n"],
        [[cal.spec.sigma, cal.spec.alpha, cal.spec.f_low, cal.spec.f_high, cal.spec.white_floor, cal.t2_star, *cal.free_fit]],
    )
    rows, summary = [], {}
    for g in _sweep_gates(cfg):
        r = dephasing_contribution(cfg.system, g, cal.spec, cfg.run.n, cfg.master_seed, cfg.run.threads)
        rows.append([g.tag, r.mean_infidelity, r.std_error, r.n_realizations])
        summary[g.tag] = r.mean_infidelity
    _write_rows(out / "dephasing_contribution.csv", ["gate", "mean_infidelity", "std_error", "n"], rows)
    return summary


def cmd_export_pulse(cfg: RunConfig, out: Path) -> dict:
    pulses, filtered = _pulse_waveform(cfg)
    raw = sample_envelope(pulses, _step(pulses.t_f, cfg.run.dt))
    raw.to_csv(out / "waveform_unfiltered.csv")
    filtered.to_csv(out / "waveform_filtered.csv")
    write_pulse_file(out / "pulse.pulse", pulses)
    report = constraint_check(pulses, cfg.optimization, cfg.filter)
    return {"peak_unfiltered_mT": report.peak_unfiltered, "peak_filtered_mT": report.peak_filtered}


HANDLERS = {
    "characterize-noise": cmd_characterize_noise,
    "optimize": cmd_optimize,
    "evaluate": cmd_evaluate,
    "sweep-sigma": cmd_sweep_sigma,
    "sweep-t0": cmd_sweep_t0,
    "sweep-alpha": cmd_sweep_alpha,
    "single-qubit": cmd_single_qubit,
    "dephasing-contribution": cmd_dephasing_contribution,
    "export-pulse": cmd_export_pulse,
}


def run(cfg: RunConfig) -> tuple[int, Path | None]:
    """Execute one command; returns the exit status and the run directory."""
    try:
        out = make_run_dir(cfg)
    except OSError as exc:
        log.error("cannot create output directory under %s: %s", cfg.output_dir, exc)
        return EXIT_CONFIG, None
    (out / "config.txt").write_text("\n".join([f"# spinforge {cfg.command}"] + config_lines(cfg)) + "\n")
    started = time.time()
    status, summary, error = EXIT_OK, {}, ""
    try:
        summary = HANDLERS[cfg.command](cfg, out)
    except (ConfigError, PulseError) as exc:
        status, error = EXIT_CONFIG, str(exc)
    except ConstraintViolation as exc:
        status, error = EXIT_CONSTRAINT, str(exc)
    except (PropagationError, ModelError, NoiseError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        status, error = EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}"
    if error:
        log.error("%s failed: %s", cfg.command, error)
    write_manifest(
        out / "manifest.json",
        command=cfg.command,
        config={k: v for k, v in (ln.split(" = ", 1) for ln in config_lines(cfg))},
        master_seed=cfg.master_seed,
        exit_status=status,
        error=error,
        summary=summary,
        elapsed_s=round(time.time() - started, 3),
        artifacts=sorted(f.name for f in out.iterdir()),
        versions={"numpy": np.__version__, "python": sys.version.split()[0]},
    )
    return status, out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    status, out = run(cfg)
    if out is not None:
        print(out)
    return status


if __name__ == "__main__":
    sys.exit(main())
