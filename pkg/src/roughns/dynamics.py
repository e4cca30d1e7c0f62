"""Time integration of the vorticity equation with transport forcing.

One integrator covers the equation variants: the heat part is integrated
exactly with a per-mode factor, the advection and transport terms are
explicit two-stage Heun, and the mode selects where the transport slopes
come from (none, piecewise-linear derivative, or Brownian increments over
the step, which makes the two-stage average Stratonovich-consistent).
Each per-path problem driven by piecewise-linear slopes is a classical PDE,
so trajectories replay bit-identically from (config, seed).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import spectral
from .brownian import BrownianEnsemble, RefineFirstError, complex_from_real, piecewise_linear
from .lattice import NoiseCoefficients, cached_modes, theta_coefficients
from .spectral import SpectralField, Truncation

MODES = ("deterministic", "wong_zakai", "stratonovich")


class ConfigError(ValueError):
    """Raised when a solver configuration violates a documented constraint."""


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of one run; dt = None resolves a dyadic step automatically."""

    M: int = 8
    T: float = 0.25
    dt: float | None = None
    nu: float = 10.0
    N: int = 2
    n: int = 32
    R: float | None = None
    K: float = 1.0
    gamma: float = 1.0
    delta: float = 0.5
    alpha: float = 0.4
    seed: int = 0
    laplacian_factor: float = 1.0
    advection: bool = True

    @property
    def C_nu(self) -> float:
        return math.sqrt(1.5 * self.nu)

    def validate(self, mode: str = "wong_zakai") -> None:
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if self.nu <= 0:
            raise ConfigError("nu must be positive")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if not (1.0 / 3.0 < self.alpha <= 0.5):
            raise ConfigError("alpha must lie in (1/3, 1/2]")
        if self.K <= 0:
            raise ConfigError("K must be positive")
        if self.R is not None and self.R <= 0:
            raise ConfigError("R must be positive (or None for no cut-off)")
        if mode != "deterministic":
            if self.N < 1:
                raise ConfigError("N must be >= 1")
            if self.M < 2 * self.N:
                raise ConfigError("M must be >= 2N")
        if mode == "wong_zakai":
            if self.n < 1:
                raise ConfigError("n must be >= 1")
            if self.dt is not None and self.dt > self.T / (4 * self.n) * (1 + 1e-12):
                raise ConfigError("dt must be <= h^n/4 = T/(4n)")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")


def cutoff_factor(norm_value: float, R: float | None) -> float:
    """Smooth switch: 1 on [0, R], cosine ramp on (R, R+1), 0 from R+1 on."""
    if R is None:
        return 1.0
    x = float(norm_value)
    if x <= R:
        return 1.0
    if x >= R + 1.0:
        return 0.0
    return 0.5 * (1.0 + math.cos(math.pi * (x - R)))


class NoiseWorkspace:
    """Scatter indices and amplitudes for assembling the transport field."""

    def __init__(self, trunc: Truncation, theta: NoiseCoefficients, C_nu: float):
        self.trunc = trunc
        self.theta = theta
        ks = np.array([m.k for m in theta.shell_modes])
        M = trunc.M
        if np.max(np.abs(ks)) > M:
            raise ConfigError("noise shell exceeds the truncation (need M >= 2N)")
        self.idx = tuple((ks[:, i] + M for i in range(3)))
        scale = C_nu / theta.l2_norm
        self.a1 = np.array([m.a1 for m in theta.shell_modes]) * (scale * theta.values)[:, None]
        self.a2 = np.array([m.a2 for m in theta.shell_modes]) * (scale * theta.values)[:, None]

    def field(self, slopes: np.ndarray) -> np.ndarray:
        """v_k = (C_nu/||theta||) theta_k sum_alpha a_{k,alpha} Wdot^{k,alpha}."""
        v = self.trunc.zeros()
        v[self.idx] = slopes[:, 0, None] * self.a1 + slopes[:, 1, None] * self.a2
        return v

    def prepared(self, slopes: np.ndarray) -> "TransportField":
        return TransportField(self.trunc, self.field(slopes))


class TransportField:
    """Transport field with cached physical values and gradient.

    The field is constant within one noise interval, so these synthesis
    transforms amortize over all stages stepping through the interval.
    """

    def __init__(self, trunc: Truncation, v_hat: np.ndarray):
        self.v_hat = v_hat
        ik = 2j * np.pi * trunc.kf
        grad = ik[..., :, None] * v_hat[..., None, :]  # [j, i] = d_j v_i
        n = trunc.n_side
        phys = trunc.to_physical(
            np.concatenate([v_hat, grad.reshape(n, n, n, 9)], axis=-1)
        )
        G = trunc.grid
        self.vp = phys[..., 0:3]
        self.dvp = phys[..., 3:12].reshape(G, G, G, 3, 3)


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def _nonlinear(trunc: Truncation, coeffs, fr: float, noise: TransportField | None,
               lap_factor: float, advect: bool, parts: bool = True):
    """Explicit right-side terms: -f_R L_u xi + Pi(v . grad xi).

    Uses L_u xi = curl(xi x u) and Pi(v.grad xi) = curl(xi x v) + Pi(xi.grad v)
    for divergence-free fields; the dealiasing grid keeps both products exact
    on the retained modes.  With parts=False the two curls fuse into one
    transform and only the combined term is returned (stage-2 fast path).
    Returns (explicit, noise_term, drift_term); the latter two are None unless
    parts is set, and drift includes the Laplacian.
    """
    lap = (lap_factor * (-4.0 * np.pi**2)) * trunc.k2[..., None] * coeffs
    if not advect and noise is None:
        zero = np.zeros_like(coeffs)
        return zero, zero if parts else None, lap if parts else None
    kf = trunc.kf
    if advect:
        u = 1j * _cross(kf, coeffs) * (trunc.inv_k2[..., None] / (2 * np.pi))
        phys = trunc.to_physical(np.concatenate([coeffs, u], axis=-1))
        xp, up = phys[..., 0:3], phys[..., 3:6]
    else:
        xp = trunc.to_physical(coeffs)
        up = None
    fwd = []
    if noise is not None:
        sgrad = np.einsum("...j,...ji->...i", xp, noise.dvp)
        if parts and advect:
            fwd = [_cross(xp, up), _cross(xp, noise.vp), sgrad]
        elif advect:
            w = noise.vp - fr * up
            fwd = [_cross(xp, w), sgrad]
        else:
            fwd = [_cross(xp, noise.vp), sgrad]
    else:
        fwd = [_cross(xp, up)]
    hat = trunc.from_physical(np.concatenate(fwd, axis=-1) if len(fwd) > 1 else fwd[0])
    if noise is None:
        adv = -fr * spectral.curl_coeffs(trunc, hat[..., 0:3])
        if parts:
            return adv, np.zeros_like(coeffs), adv + lap
        return adv, None, None
    if parts and advect:
        adv = -fr * spectral.curl_coeffs(trunc, hat[..., 0:3])
        noise_term = spectral.curl_coeffs(trunc, hat[..., 3:6]) + spectral.project_coeffs(
            trunc, hat[..., 6:9]
        )
        return adv + noise_term, noise_term, adv + lap
    if not advect:
        noise_term = spectral.curl_coeffs(trunc, hat[..., 0:3]) + spectral.project_coeffs(
            trunc, hat[..., 3:6]
        )
        if parts:
            return noise_term, noise_term, lap
        return noise_term, None, None
    combined = spectral.curl_coeffs(trunc, hat[..., 0:3]) + spectral.project_coeffs(
        trunc, hat[..., 3:6]
    )
    return combined, None, None


def transport_field(config: SolverConfig, slopes, trunc: Truncation) -> TransportField:
    """Assemble the (scaled) transport field from per-(k,alpha) complex slopes."""
    theta = theta_coefficients(config.N, config.gamma, list(cached_modes(config.M)))
    ws = NoiseWorkspace(trunc, theta, config.C_nu)
    return ws.prepared(np.asarray(slopes))


def rhs_wong_zakai(xi: SpectralField, t: float, config: SolverConfig, slopes) -> np.ndarray:
    """Full right side at time t with the given per-(k,alpha) complex slopes.

    slopes has shape (shell, 2); passing None turns the transport term off.
    With f_R == 1 this is the smooth-forced equation, with slopes None and
    laplacian_factor = 1 + 3 nu / 5 the enhanced-viscosity limit equation.
    """
    if t < -1e-12 or t > config.T * (1 + 1e-12):
        raise ValueError(f"time {t} outside [0, {config.T}]")
    trunc = xi.trunc
    noise = None if slopes is None else transport_field(config, slopes, trunc)
    fr = cutoff_factor(spectral.sobolev_norm(xi.coeffs, -config.delta, trunc), config.R)
    explicit, _, _ = _nonlinear(trunc, xi.coeffs, fr, noise, config.laplacian_factor, config.advection)
    lap = config.laplacian_factor * (-4.0 * np.pi**2) * trunc.k2[..., None] * xi.coeffs
    return lap + explicit


def heun_step(trunc, coeffs, dt, config, noise: TransportField | None, E=None, mdel: float | None = None):
    """One IMEX step: exact heat factor, two-stage Heun on the rest.

    The transport field is held fixed across the two stages; in Stratonovich
    mode it is built from increments/dt, which makes the stage average the
    midpoint-consistent scheme.
    """
    if E is None:
        E = np.exp(-4.0 * np.pi**2 * config.laplacian_factor * dt * trunc.k2)[..., None]
    if mdel is None:
        mdel = spectral.sobolev_norm(coeffs, -config.delta, trunc)
    fr1 = cutoff_factor(mdel, config.R)
    f1, noise1, drift1 = _nonlinear(trunc, coeffs, fr1, noise, config.laplacian_factor, config.advection)
    pred = E * (coeffs + dt * f1)
    fr2 = 1.0 if config.R is None else cutoff_factor(
        spectral.sobolev_norm(pred, -config.delta, trunc), config.R
    )
    f2, _, _ = _nonlinear(trunc, pred, fr2, noise, config.laplacian_factor, config.advection, parts=False)
    new = E * (coeffs + (0.5 * dt) * f1) + (0.5 * dt) * f2
    new = spectral.project_coeffs(trunc, trunc.symmetrize(new))
    return new, fr1, noise1, drift1


def step(state: SpectralField, t: float, config: SolverConfig, mode: str, noise_field=None, dt: float | None = None) -> SpectralField:
    """Advance one step; noise_field is the transport field for this step.

    Accepts a TransportField, a raw coefficient cube, or None; deterministic
    mode ignores it.  Raises no error on blow-up; a non-finite result is the
    blow-up signal consumed by `lifespan`.
    """
    config.validate(mode)
    h = config.dt if dt is None else dt
    if h is None:
        raise ConfigError("explicit dt required for single stepping")
    noise = None if mode == "deterministic" else noise_field
    if noise is not None and not isinstance(noise, TransportField):
        noise = TransportField(state.trunc, np.asarray(noise))
    new, _, _, _ = heun_step(state.trunc, state.coeffs, h, config, noise)
    return SpectralField(state.trunc, new)


def stable_dt(config: SolverConfig, mode: str) -> float:
    """Heuristic dyadic step: resolve the noise mesh and keep the explicit
    advection rotation per step inside the damped region.

    The estimate balances the fourth-power growth of the two-stage scheme on
    skew (transport) terms against the exact viscous factor; blow-up
    detection remains the backstop.
    """
    kmax2 = 3.0 * config.M**2
    u_b = max(config.K, 1e-3)
    cands = [config.T / 64.0, (2.0 / (np.pi**2 * kmax2 * u_b**4)) ** (1.0 / 3.0)]
    if mode == "deterministic":
        cands.append(config.T / 256.0)
    elif mode == "wong_zakai":
        V = 4.0 * math.sqrt(6.0 * config.nu * config.n / config.T) + u_b
        cands.append((2.0 / (np.pi**2 * kmax2 * V**4)) ** (1.0 / 3.0))
        cands.append(config.T / (4.0 * config.n))
    elif mode == "stratonovich":
        cands.append(1.0 / (1458.0 * np.pi**2 * kmax2 * config.nu**2))
    return min(cands)


def resolve_steps(config: SolverConfig, mode: str, min_steps: int = 1) -> int:
    """Number of dyadic steps for the run (T / 2^j <= requested dt)."""
    dt = config.dt if config.dt is not None else stable_dt(config, mode)
    steps = 1 << max(0, math.ceil(math.log2(config.T / dt) - 1e-9))
    steps = max(steps, min_steps)
    if steps > 1 << 22:
        raise ConfigError(f"resolved step count {steps} is unreasonably large")
    return steps


@dataclass
class Trajectory:
    """Saved states plus per-step diagnostics of one run."""

    trunc: Truncation
    mode: str
    config: SolverConfig
    dt: float
    times: np.ndarray  # saved-state times
    states: list  # coefficient cubes at `times`
    step_times: np.ndarray
    enstrophy: np.ndarray  # ||xi||_H^2 per step
    dissipation: np.ndarray  # ||grad xi||_H^2 per step
    minus_delta: np.ndarray  # ||xi||_{-delta}
    cutoff: np.ndarray
    noise_rate: np.ndarray  # d/dt contribution of the noise to ||xi||^2
    drift_integrals: list | None = None
    blowup_time: float | None = None

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.trunc, self.states[i])

    @property
    def final_state(self) -> SpectralField:
        return self.field(len(self.states) - 1)

    def energy_functional(self) -> float:
        """sup_t ||xi||_H^2 + integral of ||grad xi||_H^2 dt."""
        trapz = getattr(np, "trapezoid", np.trapz)
        return float(np.max(self.enstrophy) + trapz(self.dissipation, self.step_times))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "enstrophy", "dissipation", "h_minus_delta", "cutoff", "noise_rate"])
            for row in zip(
                self.step_times, self.enstrophy, self.dissipation, self.minus_delta, self.cutoff, self.noise_rate
            ):
                w.writerow([f"{v:.17g}" for v in row])


def simulate(
    config: SolverConfig,
    ensemble: BrownianEnsemble | None,
    xi0: SpectralField,
    mode: str = "wong_zakai",
    record_drift: bool = False,
    save_stride: int | None = None,
    min_steps: int = 1,
) -> Trajectory:
    """Integrate from xi0 over [0, T], recording diagnostics every step.

    Wong-Zakai and Stratonovich modes need an ensemble containing the noise
    shell for (N, gamma); the slopes come from the n-interval piecewise-linear
    interpolant or from per-step Brownian increments respectively.
    """
    config.validate(mode)
    trunc = xi0.trunc
    if trunc.M != config.M:
        raise ConfigError(f"initial state truncation {trunc.M} != config M {config.M}")
    norm0 = math.sqrt(spectral.enstrophy(xi0.coeffs))
    if norm0 > config.K * (1 + 1e-9):
        warnings.warn(f"||xi0||_H = {norm0:.3g} exceeds K = {config.K}", stacklevel=2)

    steps = resolve_steps(config, mode, min_steps=min_steps)
    dt = config.T / steps
    if save_stride is None:
        save_stride = max(1, steps // 128)
    if steps % save_stride:
        raise ConfigError(f"save stride {save_stride} must divide step count {steps}")

    slope_table = None
    interval_table = None
    ws = None
    if mode != "deterministic":
        theta = theta_coefficients(config.N, config.gamma, list(ensemble.modes))
        ws = NoiseWorkspace(trunc, theta, config.C_nu)
        cpaths = complex_from_real(ensemble)
        if mode == "wong_zakai":
            fam = piecewise_linear(cpaths, config.n).shell_rows(theta.shell_modes)
            slope_table = fam.slopes  # (shell, 2, intervals)
            # assign each step to the segment holding its midpoint; exact
            # whenever the snapped partition aligns with the step grid
            mids = (np.arange(steps) + 0.5) * dt
            interval_table = np.clip(
                np.searchsorted(fam.partition, mids, side="right") - 1, 0, slope_table.shape[2] - 1
            )
        else:
            grid_steps = 2**ensemble.level
            if steps > grid_steps:
                raise RefineFirstError(
                    f"stratonovich stepping at {steps} steps needs ensemble level >= {int(math.log2(steps))}"
                )
            stride = grid_steps // steps
            rows = cpaths.rows(theta.shell_modes)  # (2S, P)
            nodes = rows[:, ::stride]
            slope_table = (np.diff(nodes, axis=-1) / dt).reshape(len(theta.shell_modes), 2, steps)
            interval_table = np.arange(steps)

    coeffs = xi0.coeffs.copy()
    states = []
    drift_ints = [] if record_drift else None
    drift_acc = np.zeros_like(coeffs) if record_drift else None
    prev_drift = None

    step_times = dt * np.arange(steps + 1)
    ens = np.empty(steps + 1)
    dis = np.empty(steps + 1)
    mdel = np.empty(steps + 1)
    cut = np.empty(steps + 1)
    nrate = np.empty(steps + 1)
    blowup = None

    E = np.exp(-4.0 * np.pi**2 * config.laplacian_factor * dt * trunc.k2)[..., None]
    interval = -1
    noise_f = None
    j = 0
    for j in range(steps + 1):
        if slope_table is not None and j < steps:
            this_interval = int(interval_table[j])
            if this_interval != interval:
                interval = this_interval
                noise_f = ws.prepared(slope_table[:, :, interval])
        ens[j] = spectral.enstrophy(coeffs)
        dis[j] = spectral.dissipation(coeffs, trunc)
        mdel[j] = spectral.sobolev_norm(coeffs, -config.delta, trunc)
        if not np.isfinite(ens[j]):
            blowup = step_times[j]
            j -= 1
            break
        if j == steps:
            # final diagnostics row reuses the last interval's field
            fr = cutoff_factor(mdel[j], config.R)
            _, noise_term, drift_f = _nonlinear(
                trunc, coeffs, fr, noise_f, config.laplacian_factor, config.advection
            )
            cut[j] = fr
            nrate[j] = 2.0 * spectral.inner_product(noise_term, coeffs)
            if record_drift:
                drift_acc = drift_acc + (0.5 * dt) * (prev_drift + drift_f)
            if j % save_stride == 0:
                states.append(coeffs.copy())
                if record_drift:
                    drift_ints.append(drift_acc.copy())
            break
        new, fr, noise_part, drift_part = heun_step(trunc, coeffs, dt, config, noise_f, E=E, mdel=mdel[j])
        cut[j] = fr
        nrate[j] = 2.0 * spectral.inner_product(noise_part, coeffs)
        if record_drift:
            if j > 0:
                drift_acc = drift_acc + (0.5 * dt) * (prev_drift + drift_part)
            prev_drift = drift_part
        if j % save_stride == 0:
            states.append(coeffs.copy())
            if record_drift:
                drift_ints.append(drift_acc.copy())
        coeffs = new

    last = j + 1
    saved = len(states)
    times = dt * save_stride * np.arange(saved)
    return Trajectory(
        trunc=trunc,
        mode=mode,
        config=config,
        dt=dt,
        times=times,
        states=states,
        step_times=step_times[:last],
        enstrophy=ens[:last],
        dissipation=dis[:last],
        minus_delta=mdel[:last],
        cutoff=cut[:last],
        noise_rate=nrate[:last],
        drift_integrals=drift_ints,
        blowup_time=blowup,
    )


def lifespan(trajectory: Trajectory, threshold: float) -> float:
    """First step time with ||xi||_H above the threshold, else the blow-up
    time, else math.inf."""
    if threshold <= 0:
        raise ConfigError("threshold must be positive")
    norms = np.sqrt(trajectory.enstrophy)
    over = np.nonzero(norms > threshold)[0]
    if over.size:
        return float(trajectory.step_times[over[0]])
    if trajectory.blowup_time is not None:
        return float(trajectory.blowup_time)
    return math.inf
