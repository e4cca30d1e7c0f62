"""Monte Carlo experiment drivers: Wong-Zakai convergence, dissipation-scaling
comparison, lifespan measure estimation, and rough-path diagnostics.

Every experiment is reproducible bit-exactly from (config, seed): per-sample
seeds are derived deterministically, all approximation levels within one
sample reuse the same Brownian ensemble, and reports carry the per-sample
records needed to recompute every summary statistic.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, initial, spectral
from .brownian import complex_from_real, piecewise_linear, sample_ensemble
from .dynamics import SolverConfig, lifespan, resolve_steps, simulate
from .lattice import cached_modes, theta_coefficients
from .roughpath import canonical_lift, dyadic_pairs, remainder_map

EPS_FRACTIONS = (0.5, 0.2, 0.1, 0.05)


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def job_seed(base_seed: int, sample: int) -> int:
    """Deterministic per-sample seed, independent of scheduling order."""
    return (int(base_seed) << 20) + sample


def config_dict(config: SolverConfig) -> dict:
    return dataclasses.asdict(config)


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentReport:
    """Config echo, per-sample records, and recomputable summary statistics."""

    name: str
    config: dict
    seeds: dict
    records: list
    summary: dict
    version: str = __version__

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "version": self.version,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "seeds": self.seeds,
            "records": self.records,
            "summary": self.summary,
        }
        return json.dumps(payload, sort_keys=True, indent=2, default=str)

    def save(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        samples_dir = out / "samples"
        samples_dir.mkdir(exist_ok=True)
        for rec in self.records:
            idx = rec.get("sample", 0)
            path = samples_dir / f"sample_{idx:04d}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["key", "value"])
                for key, value in sorted(_flatten(rec).items()):
                    w.writerow([key, value])
        return out


def _flatten(rec: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in rec.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{name}."))
        elif isinstance(value, (list, tuple)):
            for i, v in enumerate(value):
                flat[f"{name}[{i}]"] = repr(v)
        else:
            flat[name] = repr(value)
    return flat


def _worker_count() -> int:
    raw = os.environ.get("ROUGHNS_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_samples(fn, arg_list):
    workers = _worker_count()
    if workers == 1 or len(arg_list) <= 1:
        return [fn(a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, arg_list))


def _sup_distance(states_a, states_b, delta: float, trunc) -> float:
    return max(
        spectral.sobolev_norm(a - b, -delta, trunc) for a, b in zip(states_a, states_b)
    )


def estimate_radius(config: SolverConfig, xi0) -> float:
    """C(K) proxy: peak H norm of the enhanced-viscosity deterministic run."""
    cfg = replace(config, laplacian_factor=1.0 + 0.6 * config.nu, R=None)
    traj = simulate(cfg, None, xi0, mode="deterministic")
    return float(np.sqrt(np.max(traj.enstrophy)))


def cutoff_radius(config: SolverConfig, xi0) -> float:
    """R_K = C(K) + 2 unless the config pins R explicitly."""
    if config.R is not None:
        return config.R
    return estimate_radius(config, xi0) + 2.0


# -- Wong-Zakai convergence --------------------------------------------------


def _wz_sample(args) -> dict:
    config, n_list, n_ref, sample, strat_check, save_points = args
    seed = job_seed(config.seed, sample)
    xi0 = initial.random_field(config.M, config.K, seed, tag=0)
    R = cutoff_radius(config, xi0)
    all_n = sorted(set(n_list) | {n_ref})
    cfgs = {n: replace(config, n=n, R=R, seed=seed) for n in all_n}
    steps = {n: resolve_steps(cfgs[n], "wong_zakai", min_steps=save_points) for n in all_n}
    level = max(int(math.log2(max(all_n))), 0)
    if strat_check:
        strat_steps = resolve_steps(replace(config, seed=seed), "stratonovich", min_steps=save_points)
        level = max(level, int(math.log2(strat_steps)))
    theta = theta_coefficients(config.N, config.gamma, list(cached_modes(config.M)))
    ens = sample_ensemble(theta.shell_modes, config.T, level, seed)
    trajs = {}
    for n in all_n:
        trajs[n] = simulate(
            cfgs[n],
            ens,
            xi0,
            mode="wong_zakai",
            save_stride=steps[n] // save_points,
            min_steps=save_points,
        )
    ref = trajs[n_ref]
    record = {
        "sample": sample,
        "seed": seed,
        "R": R,
        "xi0_norm": float(np.sqrt(spectral.enstrophy(xi0.coeffs))),
        "xi0_minus_delta": spectral.sobolev_norm(xi0, -config.delta),
        "distances": {
            str(n): _sup_distance(trajs[n].states, ref.states, config.delta, xi0.trunc)
            for n in n_list
        },
        "energy": {str(n): trajs[n].energy_functional() for n in all_n},
        "blowups": {str(n): trajs[n].blowup_time for n in all_n},
    }
    if strat_check:
        straj = simulate(
            replace(config, R=R, seed=seed),
            ens,
            xi0,
            mode="stratonovich",
            save_stride=strat_steps // save_points,
            min_steps=save_points,
        )
        record["strat_distance"] = _sup_distance(straj.states, ref.states, config.delta, xi0.trunc)
    return record


def wong_zakai_convergence(
    config: SolverConfig,
    n_list=(8, 16, 32, 64),
    samples: int = 32,
    n_ref: int = 256,
    stratonovich_check: bool = False,
    save_points: int = 128,
) -> ExperimentReport:
    """Coupled pathwise distances between W^n-driven runs and a fine reference.

    All n within one sample share one Brownian ensemble; distances are
    sup-in-time H^{-delta} norms on a common save grid.  Exceedance
    probabilities are reported on an epsilon grid scaled by the initial
    H^{-delta} size.
    """
    config.validate("wong_zakai")
    n_list = sorted(n_list)
    args = [(config, n_list, n_ref, i, stratonovich_check, save_points) for i in range(samples)]
    records = _map_samples(_wz_sample, args)
    dist = {n: np.array([r["distances"][str(n)] for r in records]) for n in n_list}
    scale0 = float(np.median([r["xi0_minus_delta"] for r in records]))
    eps_grid = [f * scale0 for f in EPS_FRACTIONS]
    exceedance = {}
    for n in n_list:
        per_eps = {}
        for frac, eps in zip(EPS_FRACTIONS, eps_grid):
            hits = int(np.sum(dist[n] > eps))
            lo, hi = wilson_interval(hits, samples)
            per_eps[str(frac)] = {"eps": eps, "p": hits / samples, "wilson": [lo, hi]}
        exceedance[str(n)] = per_eps
    summary = {
        "median_distance": {str(n): float(np.median(dist[n])) for n in n_list},
        "mean_distance": {str(n): float(np.mean(dist[n])) for n in n_list},
        "eps_scale": scale0,
        "exceedance": exceedance,
        "n_ref": n_ref,
    }
    if stratonovich_check:
        sd = [r["strat_distance"] for r in records]
        summary["strat_distance_median"] = float(np.median(sd))
    return ExperimentReport(
        name="wz-convergence",
        config=config_dict(config) | {"n_list": list(n_list), "n_ref": n_ref, "samples": samples},
        seeds={"base": config.seed, "per_sample": [r["seed"] for r in records]},
        records=records,
        summary=summary,
    )


# -- scaling limit ------------------------------------------------------------


def _scaling_sample(args) -> dict:
    config, N_list, sample, mode, save_points = args
    seed = job_seed(config.seed, sample)
    xi0 = initial.random_field(config.M, config.K, seed, tag=0)
    R = cutoff_radius(config, xi0)
    det_cfg = replace(config, laplacian_factor=1.0 + 0.6 * config.nu, R=None, seed=seed)
    det_steps = resolve_steps(det_cfg, "deterministic", min_steps=save_points)
    det = simulate(
        det_cfg,
        None,
        xi0,
        mode="deterministic",
        save_stride=det_steps // save_points,
        min_steps=save_points,
    )
    shells = {}
    for N in N_list:
        shells[N] = theta_coefficients(N, config.gamma, list(cached_modes(config.M)))
    union = {}
    for th in shells.values():
        for m in th.shell_modes:
            union[m.k] = m
    modes = tuple(union.values())
    record = {"sample": sample, "seed": seed, "R": R, "per_N": {}}
    for N in N_list:
        cfg = replace(config, N=N, R=R, seed=seed)
        steps = resolve_steps(cfg, mode, min_steps=save_points)
        level = max(int(math.log2(config.n)), 0)
        if mode == "stratonovich":
            level = max(level, int(math.log2(steps)))
        ens = sample_ensemble(modes, config.T, level, seed)
        traj = simulate(
            cfg, ens, xi0, mode=mode, save_stride=steps // save_points, min_steps=save_points
        )
        sup_md = float(np.max(traj.minus_delta))
        record["per_N"][str(N)] = {
            "distance": _sup_distance(traj.states, det.states, config.delta, xi0.trunc),
            "sup_minus_delta": sup_md,
            "bounded": bool(sup_md <= R - 1.0),
            "energy": traj.energy_functional(),
        }
    return record


def scaling_limit(
    config: SolverConfig,
    N_list=(1, 2, 3),
    samples: int = 16,
    mode: str = "wong_zakai",
    save_points: int = 64,
) -> ExperimentReport:
    """Distance of the cut-off noisy system to the extra-viscous limit equation.

    The stochastic side defaults to the fine-n Wong-Zakai system (the
    Stratonovich scheme needs prohibitively small steps at the same M); the
    deterministic side carries viscosity 1 + 3 nu / 5.
    """
    config.validate("wong_zakai")
    N_list = sorted(N_list)
    if config.M < 2 * max(N_list):
        raise ValueError(f"M must be >= 2N for every N; M={config.M}, max N={max(N_list)}")
    args = [(config, N_list, i, mode, save_points) for i in range(samples)]
    records = _map_samples(_scaling_sample, args)
    summary = {"median_distance": {}, "bounded_probability": {}}
    for N in N_list:
        d = [r["per_N"][str(N)]["distance"] for r in records]
        hits = sum(1 for r in records if r["per_N"][str(N)]["bounded"])
        lo, hi = wilson_interval(hits, samples)
        summary["median_distance"][str(N)] = float(np.median(d))
        summary["bounded_probability"][str(N)] = {"p": hits / samples, "wilson": [lo, hi]}
    return ExperimentReport(
        name="scaling-limit",
        config=config_dict(config) | {"N_list": list(N_list), "samples": samples, "mode": mode},
        seeds={"base": config.seed, "per_sample": [r["seed"] for r in records]},
        records=records,
        summary=summary,
    )


# -- lifespan measure ---------------------------------------------------------


def lifespan_measure(
    config: SolverConfig,
    omega_samples: int = 8,
    data_samples: int = 16,
    mu: str = "sphere",
    threshold: float | None = None,
) -> ExperimentReport:
    """Survival fractions mu_hat(omega) of initial data under fixed noise paths.

    One shared set of initial conditions is evaluated under every sampled
    noise path (no cut-off), so row/column averages satisfy the Fubini
    identity exactly.  The best omega's seed is the reproducible certificate
    of a regularizing deterministic vector field.
    """
    config.validate("wong_zakai")
    mu_seed = job_seed(config.seed, 1 << 18)
    if mu == "sphere":
        sampler = initial.ball_sampler(config.M, config.K, mu_seed)
    elif mu == "zero":
        sampler = initial.zero_sampler(config.M)
    else:
        raise ValueError(f"unknown initial measure {mu!r}; use 'sphere' or 'zero'")
    xi0s = [sampler(j) for j in range(data_samples)]
    if threshold is None:
        probe = initial.random_field(config.M, config.K, mu_seed, tag=1 << 16)
        threshold = estimate_radius(config, probe) + 2.0
    theta = theta_coefficients(config.N, config.gamma, list(cached_modes(config.M)))
    survival = np.zeros((omega_samples, data_samples), dtype=int)
    omega_seeds = []
    run_cfg = replace(config, R=None)
    for i in range(omega_samples):
        seed = job_seed(config.seed, i)
        omega_seeds.append(seed)
        level = max(int(math.log2(config.n)), 0)
        ens = sample_ensemble(theta.shell_modes, config.T, level, seed)
        for j, xi0 in enumerate(xi0s):
            traj = simulate(replace(run_cfg, seed=seed), ens, xi0, mode="wong_zakai")
            survival[i, j] = int(lifespan(traj, threshold) > config.T)
    mu_hat = survival.mean(axis=1)
    per_xi0 = survival.mean(axis=0)
    best = int(np.argmax(mu_hat))
    records = [
        {
            "sample": i,
            "omega_seed": omega_seeds[i],
            "mu_hat": float(mu_hat[i]),
            "survived": survival[i].tolist(),
        }
        for i in range(omega_samples)
    ]
    summary = {
        "threshold": float(threshold),
        "best_omega": {"sample": best, "seed": omega_seeds[best], "mu_hat": float(mu_hat[best])},
        "mu_hat_mean": float(mu_hat.mean()),
        "mu_hat_max": float(mu_hat.max()),
        "per_xi0_survival": per_xi0.tolist(),
        "fubini_gap": float(abs(mu_hat.mean() - per_xi0.mean())),
    }
    return ExperimentReport(
        name="lifespan",
        config=config_dict(config)
        | {"omega_samples": omega_samples, "data_samples": data_samples, "mu": mu},
        seeds={"base": config.seed, "mu_seed": mu_seed, "omega_seeds": omega_seeds},
        records=records,
        summary=summary,
    )


# -- rough-path diagnostics ---------------------------------------------------


def _level_ratios(rem, alpha: float) -> dict:
    """Max 3-alpha ratio of the remainder per dyadic stride level."""
    ratios = {}
    for (a, b), val in rem.entries.items():
        dt = rem.times[b] - rem.times[a]
        stride = b - a
        r = rem.norm(val) / dt ** (3 * alpha)
        ratios[stride] = max(ratios.get(stride, 0.0), r)
    return {str(k): ratios[k] for k in sorted(ratios)}


def _rough_sample(args) -> dict:
    config, n_list, sample = args
    seed = job_seed(config.seed, sample)
    xi0 = initial.random_field(config.M, config.K, seed, tag=0)
    R = cutoff_radius(config, xi0)
    theta = theta_coefficients(config.N, config.gamma, list(cached_modes(config.M)))
    level = max(int(math.log2(max(n_list))), 0)
    ens = sample_ensemble(theta.shell_modes, config.T, level, seed)
    cpaths = complex_from_real(ens)
    record = {"sample": sample, "seed": seed, "R": R, "per_n": {}}
    w2 = xi0.trunc.sobolev_weights(-2.0)
    w1 = xi0.trunc.sobolev_weights(-1.0)
    for n in n_list:
        cfg = replace(config, n=n, R=R, seed=seed)
        steps = resolve_steps(cfg, "wong_zakai")
        traj = simulate(cfg, ens, xi0, mode="wong_zakai", save_stride=steps // n, record_drift=True)
        real_fam = piecewise_linear(ens, n).shell_rows(theta.shell_modes)
        real_lift = canonical_lift(real_fam, alpha=config.alpha)
        z_a = real_lift.level1_seminorm()
        ww_2a = real_lift.level2_seminorm()
        cfam = piecewise_linear(cpaths, n).shell_rows(theta.shell_modes)
        clift = canonical_lift(cfam, alpha=config.alpha)
        rem = remainder_map(traj, clift, traj.drift_integrals, theta, config.C_nu)
        ratios = _level_ratios(rem, config.alpha)
        vals = list(ratios.values())
        drift_lip = 0.0
        drift_half = 0.0
        for a, b in dyadic_pairs(len(traj.times)):
            dmu = traj.drift_integrals[b] - traj.drift_integrals[a]
            dt = traj.times[b] - traj.times[a]
            drift_lip = max(drift_lip, spectral.sobolev_norm(dmu, -2.0, traj.trunc) / dt)
            drift_half = max(drift_half, spectral.sobolev_norm(dmu, -1.0, traj.trunc) / math.sqrt(dt))
        record["per_n"][str(n)] = {
            "z_alpha": z_a,
            "ww_2alpha": ww_2a,
            "drift_lipschitz": drift_lip,
            "drift_half_holder": drift_half,
            "remainder_ratio_by_stride": ratios,
            "remainder_spread": float(max(vals) / max(min(vals), 1e-300)),
        }
    return record


def rough_diagnostics(
    config: SolverConfig, n_list=(8, 16, 32), samples: int = 4
) -> ExperimentReport:
    """Path seminorms, drift increment ratios, and remainder scaling per n."""
    config.validate("wong_zakai")
    n_list = sorted(n_list)
    args = [(config, n_list, i) for i in range(samples)]
    records = _map_samples(_rough_sample, args)
    summary = {}
    for n in n_list:
        za = [r["per_n"][str(n)]["z_alpha"] for r in records]
        ww = [r["per_n"][str(n)]["ww_2alpha"] for r in records]
        sp = [r["per_n"][str(n)]["remainder_spread"] for r in records]
        summary[str(n)] = {
            "z_alpha_q90": float(np.quantile(za, 0.9)),
            "ww_2alpha_q90": float(np.quantile(ww, 0.9)),
            "remainder_spread_max": float(np.max(sp)),
            "drift_lipschitz_max": float(
                np.max([r["per_n"][str(n)]["drift_lipschitz"] for r in records])
            ),
            "drift_half_holder_max": float(
                np.max([r["per_n"][str(n)]["drift_half_holder"] for r in records])
            ),
        }
    return ExperimentReport(
        name="rough-diagnostics",
        config=config_dict(config) | {"n_list": list(n_list), "samples": samples},
        seeds={"base": config.seed, "per_sample": [r["seed"] for r in records]},
        records=records,
        summary=summary,
    )
