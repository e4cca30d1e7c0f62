"""Command-line entry point: configuration, experiment dispatch, result files.

Config files are flat INI-style key = value text (section headers optional
and ignored for lookup); command-line flags override file values.  Every
output directory contains report.json with the resolved config, its hash,
and the seeds needed to replay the run bit-exactly.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, experiments, initial, spectral
from .dynamics import ConfigError, SolverConfig, lifespan, resolve_steps, simulate
from .experiments import ExperimentReport, config_dict, config_hash

SUBCOMMANDS = ("simulate", "wz-convergence", "scaling-limit", "lifespan", "rough-diagnostics", "validate")

_SOLVER_KEYS = {
    "M": int,
    "N": int,
    "n": int,
    "T": float,
    "dt": float,
    "nu": float,
    "gamma": float,
    "delta": float,
    "alpha": float,
    "K": float,
    "R": float,
    "seed": int,
    "laplacian_factor": float,
    "advection": bool,
}
_RUN_KEYS = {
    "out": str,
    "samples": int,
    "n_list": list,
    "N_list": list,
    "n_ref": int,
    "omega_samples": int,
    "data_samples": int,
    "mode": str,
    "ic": str,
    "mu": str,
    "threshold": float,
    "save_points": int,
    "stratonovich_check": bool,
}
VALID_KEYS = sorted(_SOLVER_KEYS | _RUN_KEYS)


@dataclass
class RunConfig:
    """Solver parameters plus experiment selection and output knobs."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    out: str = "runs/out"
    samples: int = 32
    n_list: list = field(default_factory=lambda: [8, 16, 32, 64])
    N_list: list = field(default_factory=lambda: [1, 2, 3])
    n_ref: int = 256
    omega_samples: int = 8
    data_samples: int = 16
    mode: str = "wong_zakai"
    ic: str = "random"
    mu: str = "sphere"
    threshold: float | None = None
    save_points: int = 128
    stratonovich_check: bool = False

    def as_dict(self) -> dict:
        d = config_dict(self.solver)
        for key in _RUN_KEYS:
            d[key] = getattr(self, key)
        return d


def _convert(key: str, raw: str):
    kind = _SOLVER_KEYS.get(key) or _RUN_KEYS.get(key)
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean value {raw!r} for key {key!r}")
    if kind is list:
        return [int(tok) for tok in raw.replace(",", " ").split()]
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from exc


def _read_config_file(path: str) -> dict:
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError:
        parser = configparser.ConfigParser()
        parser.read_string("[run]\n" + text)
    values: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in _SOLVER_KEYS and key not in _RUN_KEYS:
                raise ConfigError(
                    f"unknown config key {key!r}; valid keys: {', '.join(VALID_KEYS)}"
                )
            if key in values:
                raise ConfigError(f"duplicate config key {key!r}")
            values[key] = _convert(key, raw)
    return values


def parse_config(path: str | None = None, overrides: dict | None = None, mode: str = "wong_zakai") -> RunConfig:
    """Resolve file values and flag overrides into a validated RunConfig."""
    values = _read_config_file(path) if path else {}
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _SOLVER_KEYS and key not in _RUN_KEYS:
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
        values[key] = val
    solver_kwargs = {k: v for k, v in values.items() if k in _SOLVER_KEYS}
    run_kwargs = {k: v for k, v in values.items() if k in _RUN_KEYS}
    cfg = RunConfig(solver=SolverConfig(**solver_kwargs), **run_kwargs)
    cfg.solver.validate("deterministic" if cfg.mode == "deterministic" else "wong_zakai")
    return cfg


def _initial_field(cfg: RunConfig):
    sol = cfg.solver
    if cfg.ic == "random":
        return initial.random_field(sol.M, sol.K, sol.seed)
    if cfg.ic == "taylor-green":
        return initial.taylor_green_field(sol.M, sol.K)
    if cfg.ic == "zero":
        return spectral.SpectralField.zeros(sol.M)
    path = Path(cfg.ic)
    if path.exists():
        return spectral.load_field(path)
    raise ConfigError(f"unknown initial condition {cfg.ic!r}; use random, taylor-green, zero, or a field file")


def _run_simulate(cfg: RunConfig) -> ExperimentReport:
    sol = cfg.solver
    mode = cfg.mode.replace("-", "_")
    xi0 = _initial_field(cfg)
    ensemble = None
    if mode != "deterministic":
        from .brownian import sample_ensemble
        from .lattice import cached_modes, theta_coefficients

        steps = resolve_steps(sol, mode)
        theta = theta_coefficients(sol.N, sol.gamma, list(cached_modes(sol.M)))
        level = max(int(np.ceil(np.log2(max(sol.n, 2)))), 0)
        if mode == "stratonovich":
            level = max(level, int(np.log2(steps)))
        ensemble = sample_ensemble(theta.shell_modes, sol.T, level, sol.seed)
    traj = simulate(sol, ensemble, xi0, mode=mode)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = f"# config_hash={config_hash(cfg.as_dict())} seed={sol.seed} version={__version__}\n"
    csv_path = out / "trajectory.csv"
    traj.write_csv(csv_path)
    csv_path.write_text(meta + csv_path.read_text())
    states_dir = out / "states"
    states_dir.mkdir(exist_ok=True)
    for i, t in enumerate(traj.times):
        spectral.save_field(states_dir / f"state_{i:04d}.bin", traj.field(i))
    (states_dir / "MANIFEST.json").write_text(
        json.dumps(
            {
                "config_hash": config_hash(cfg.as_dict()),
                "seed": sol.seed,
                "times": traj.times.tolist(),
                "version": __version__,
            },
            indent=2,
        )
    )
    threshold = cfg.threshold if cfg.threshold is not None else 2.0 * sol.K
    tau = lifespan(traj, threshold)
    record = {
        "sample": 0,
        "seed": sol.seed,
        "mode": mode,
        "energy_functional": traj.energy_functional(),
        "final_enstrophy": float(traj.enstrophy[-1]),
        "sup_enstrophy": float(np.max(traj.enstrophy)),
        "max_noise_rate": float(np.max(np.abs(traj.noise_rate))),
        "blowup_time": traj.blowup_time,
        "lifespan": tau if np.isfinite(tau) else "inf",
        "lifespan_threshold": threshold,
        "steps": len(traj.step_times) - 1,
        "dt": traj.dt,
    }
    return ExperimentReport(
        name="simulate",
        config=cfg.as_dict(),
        seeds={"base": sol.seed},
        records=[record],
        summary={k: record[k] for k in ("energy_functional", "sup_enstrophy", "blowup_time", "lifespan")},
    )


def _check(label: str, ok: bool, detail: str = "") -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
    return ok


def run_validate() -> int:
    """Fast invariant suite over every module; nonzero exit on any failure."""
    import math

    from . import brownian, dynamics, lattice, roughpath

    ok = True
    modes = lattice.enumerate_modes(4)
    frame_err = max(
        max(
            abs(np.dot(m.a1, m.k)),
            abs(np.dot(m.a2, m.k)),
            abs(np.dot(m.a1, m.a2)),
            abs(np.dot(m.a1, m.a1) - 1),
            abs(np.dot(m.a2, m.a2) - 1),
        )
        for m in modes
    )
    hand_err = max(
        float(np.max(np.abs(np.cross(m.a1, m.a2) - np.array(m.k) / m.norm)))
        for m in modes
        if m.sign_class == "plus"
    )
    ok &= _check("frame orthonormality/right-handedness (M=4)", frame_err < 1e-12 and hand_err < 1e-12)
    part = all(
        (m.sign_class == "plus") != (lattice.make_mode((-m.k[0], -m.k[1], -m.k[2])).sign_class == "plus")
        for m in modes
    )
    ok &= _check("plus/minus partition", part)
    th = lattice.theta_coefficients(1, 1.0, lattice.enumerate_modes(2))
    ok &= _check("theta shell N=1", len(th) == 32 and abs(th.l2_norm**2 - 97.0 / 6.0) < 1e-12)

    t = spectral.Truncation.get(3)
    xi = initial.random_field(3, 1.0, seed=101)
    phys = t.to_physical(xi.coeffs)
    ok &= _check("reality round-trip (M=3)", float(np.max(np.abs(t.from_physical(phys) - xi.coeffs))) < 1e-13)
    u = spectral.biot_savart(xi)
    ok &= _check(
        "biot-savart curl round-trip",
        float(np.max(np.abs(spectral.curl(u).coeffs - xi.coeffs))) < 1e-12,
    )
    v = initial.random_field(3, 0.7, seed=102)
    w = initial.random_field(3, 1.2, seed=103)
    ok &= _check(
        "trilinear identities",
        abs(spectral.trilinear_b(u, v, v)) < 1e-12
        and abs(spectral.trilinear_b(u, v, w) + spectral.trilinear_b(u, w, v)) < 1e-12,
    )

    ens = brownian.sample_ensemble(modes[:4], 1.0, 4, seed=5)
    ens2 = brownian.refine(ens, 6)
    ok &= _check("bridge refinement nests bit-exactly", bool(np.array_equal(ens.values, ens2.values[:, :, ::4])))
    fam = brownian.piecewise_linear(ens, 4)
    tele = float(
        np.max(np.abs(np.sum(fam.slopes * np.diff(fam.partition), axis=-1) - (ens.values[..., -1] - ens.values[..., 0])))
    )
    ok &= _check("piecewise-linear telescoping", tele < 1e-12)

    lift = roughpath.canonical_lift(brownian.piecewise_linear(ens2, 16), grid=ens2.times)
    pairs = roughpath.dyadic_pairs(lift.n_points)
    chen = max(lift.chen_defect(a, (a + b) // 2, b) for a, b in pairs if b - a >= 2)
    ok &= _check("Chen relation on canonical lift", chen < 1e-10 * lift.scale())
    a, b = 3, 49
    sym = lift.second(a, b) + lift.second(a, b).T - np.outer(lift.increment(a, b), lift.increment(a, b))
    ok &= _check("symmetric-part identity", float(np.max(np.abs(sym))) < 1e-12 * lift.scale())

    cfg = dynamics.SolverConfig(M=2, T=0.25, dt=0.25 / 64, nu=1.0, N=1, n=4, K=1.0, advection=False)
    xi1 = initial.rescale(initial.single_mode_field(2, (1, 0, 0), (0.0, 1.0, 0.0)), 1.0)
    traj = dynamics.simulate(cfg, None, xi1, mode="deterministic")
    heat = abs(math.sqrt(traj.enstrophy[-1] / traj.enstrophy[0]) - math.exp(-4 * math.pi**2 * 0.25))
    ok &= _check("exact heat decay", heat < 1e-12)
    ok &= _check("cutoff ramp values", dynamics.cutoff_factor(2.0, 2.0) == 1.0 and dynamics.cutoff_factor(3.0, 2.0) == 0.0 and abs(dynamics.cutoff_factor(2.5, 2.0) - 0.5) < 1e-15)

    cfgw = dynamics.SolverConfig(M=4, T=0.125, nu=0.25, N=1, n=8, K=1.0, R=2.0, seed=7)
    thw = lattice.theta_coefficients(1, 1.0, lattice.enumerate_modes(4))
    ensw = brownian.sample_ensemble(thw.shell_modes, 0.125, 5, seed=7)
    x0 = initial.random_field(4, 1.0, seed=8)
    t1 = dynamics.simulate(cfgw, ensw, x0, mode="wong_zakai")
    t2 = dynamics.simulate(cfgw, ensw, x0, mode="wong_zakai")
    ok &= _check("replay determinism", all(np.array_equal(p, q) for p, q in zip(t1.states, t2.states)))
    ok &= _check(
        "noise enstrophy neutrality along run",
        float(np.max(np.abs(t1.noise_rate))) < 1e-10 * float(np.max(t1.enstrophy)),
    )
    try:
        t1.final_state.validate(1e-9)
        ok &= _check("state invariants preserved", True)
    except spectral.SymmetryError as exc:
        ok &= _check("state invariants preserved", False, str(exc))
    return 0 if ok else 1


def run(subcommand: str, cfg: RunConfig) -> int:
    """Execute a subcommand; returns the process exit status."""
    if subcommand == "validate":
        return run_validate()
    if subcommand == "simulate":
        report = _run_simulate(cfg)
    elif subcommand == "wz-convergence":
        report = experiments.wong_zakai_convergence(
            cfg.solver,
            n_list=cfg.n_list,
            samples=cfg.samples,
            n_ref=cfg.n_ref,
            stratonovich_check=cfg.stratonovich_check,
            save_points=cfg.save_points,
        )
    elif subcommand == "scaling-limit":
        report = experiments.scaling_limit(
            cfg.solver,
            N_list=cfg.N_list,
            samples=cfg.samples,
            mode=cfg.mode,
            save_points=cfg.save_points,
        )
    elif subcommand == "lifespan":
        report = experiments.lifespan_measure(
            cfg.solver,
            omega_samples=cfg.omega_samples,
            data_samples=cfg.data_samples,
            mu=cfg.mu,
            threshold=cfg.threshold,
        )
    elif subcommand == "rough-diagnostics":
        report = experiments.rough_diagnostics(
            cfg.solver, n_list=[n for n in cfg.n_list if n <= cfg.n_ref], samples=cfg.samples
        )
    else:
        raise ConfigError(f"unknown subcommand {subcommand!r}; use one of {SUBCOMMANDS}")
    report.config = cfg.as_dict()
    out = report.save(cfg.out)
    print(f"report written to {out / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roughns", description=__doc__)
    p.add_argument("--version", action="version", version=f"roughns {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="flat key=value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--samples", type=int, default=None)
        for flag in ("M", "N", "n", "n_ref", "omega_samples", "data_samples", "save_points"):
            sp.add_argument(f"--{flag}", type=int, default=None)
        for flag in ("nu", "gamma", "delta", "alpha", "T", "dt", "K", "R", "threshold"):
            sp.add_argument(f"--{flag}", type=float, default=None)
        sp.add_argument("--mode", default=None, choices=["deterministic", "wong-zakai", "wong_zakai", "stratonovich"])
        sp.add_argument("--ic", default=None)
        sp.add_argument("--mu", default=None, choices=["sphere", "zero"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        key: getattr(args, key)
        for key in list(_SOLVER_KEYS) + list(_RUN_KEYS)
        if hasattr(args, key) and getattr(args, key) is not None
    }
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode.replace("-", "_")
    try:
        cfg = parse_config(args.config, overrides)
        return run(args.subcommand, cfg)
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
