"""Rough-path lifts of piecewise-linear paths and remainder diagnostics.

The second level of a canonical lift is accumulated in closed form per linear
segment (the antiderivative is piecewise quadratic) and chained through
Chen's relation, stored as prefix sums so any grid pair is O(m^2) to read.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .brownian import PiecewiseLinearFamily
from .lattice import NoiseCoefficients
from .spectral import Truncation, sobolev_norm, transport_core, transport_stack


class GridIncompatibilityError(ValueError):
    """Raised when a lift grid does not refine the involved partitions."""


class UndefinedSeminormError(ValueError):
    """Raised when a seminorm is requested over an empty pair set."""


def dyadic_pairs(n_points: int) -> list[tuple[int, int]]:
    """Index pairs (i*s, (i+1)*s) for strides s = 1, 2, 4, ... on a grid."""
    pairs = []
    s = 1
    while s <= n_points - 1:
        pairs.extend((i * s, (i + 1) * s) for i in range((n_points - 1) // s))
        s *= 2
    return pairs


def all_pairs(n_points: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(n_points) for b in range(a + 1, n_points)]


def _resolve_pairs(n_points: int, pairs) -> list[tuple[int, int]]:
    if pairs == "dyadic" or pairs is None:
        return dyadic_pairs(n_points)
    if pairs == "all":
        return all_pairs(n_points)
    return list(pairs)


@dataclass
class RoughPathLift:
    """First/second-level increments (Z, WW) of an m-component path on a grid.

    Increments are exposed through `increment` and `second` rather than
    stored per pair; `prefix[j]` holds sum_{i<j} (z_i + z_{i+1})/2 (x) dz_i so
    WW_{ab} = prefix[b] - prefix[a] - z_a (x) (z_b - z_a) follows Chen exactly.
    """

    times: np.ndarray  # (P,)
    values: np.ndarray  # (m, P), real or complex
    alpha: float
    labels: tuple = ()
    prefix: np.ndarray = field(default=None, repr=False)  # (P, m, m)

    def __post_init__(self):
        if self.prefix is None:
            z = self.values
            dz = np.diff(z, axis=1)
            mid = 0.5 * (z[:, :-1] + z[:, 1:])
            blocks = np.einsum("mi,ni->imn", mid, dz)
            self.prefix = np.concatenate(
                [np.zeros((1,) + blocks.shape[1:], dtype=blocks.dtype), np.cumsum(blocks, axis=0)]
            )

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    def increment(self, a: int, b: int) -> np.ndarray:
        return self.values[:, b] - self.values[:, a]

    def second(self, a: int, b: int) -> np.ndarray:
        za = self.values[:, a]
        inc = self.values[:, b] - za
        return self.prefix[b] - self.prefix[a] - np.outer(za, inc)

    def chen_defect(self, a: int, mid: int, b: int) -> float:
        lhs = self.second(a, b) - self.second(a, mid) - self.second(mid, b)
        rhs = np.outer(self.increment(a, mid), self.increment(mid, b))
        return float(np.max(np.abs(lhs - rhs)))

    def scale(self) -> float:
        return max(float(np.max(np.abs(self.values))), 1e-300) ** 2

    def level1_seminorm(self, pairs="dyadic", exponent: float | None = None) -> float:
        e = self.alpha if exponent is None else exponent
        out = 0.0
        for a, b in _resolve_pairs(self.n_points, pairs):
            dt = self.times[b] - self.times[a]
            out = max(out, float(np.linalg.norm(self.increment(a, b))) / dt**e)
        return out

    def level2_seminorm(self, pairs="dyadic", exponent: float | None = None) -> float:
        e = 2 * self.alpha if exponent is None else exponent
        out = 0.0
        for a, b in _resolve_pairs(self.n_points, pairs):
            dt = self.times[b] - self.times[a]
            out = max(out, float(np.linalg.norm(self.second(a, b))) / dt**e)
        return out


def lift_from_values(times, values, alpha: float = 0.4, labels: tuple = ()) -> RoughPathLift:
    """Canonical lift of the piecewise-linear path through the given node values."""
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values))
    if values.shape[1] != times.size:
        raise GridIncompatibilityError(
            f"{values.shape[1]} path nodes vs {times.size} grid points"
        )
    return RoughPathLift(times=times, values=values, alpha=alpha, labels=labels)


def canonical_lift(family: PiecewiseLinearFamily, grid=None, alpha: float = 0.4) -> RoughPathLift:
    """Lift a piecewise-linear family; the grid must refine the partition.

    Each grid interval then lies inside one linear segment, so the per-interval
    second level (z_i + z_{i+1})/2 (x) dz_i is exact, not a quadrature.
    """
    part = family.partition
    if grid is None:
        grid = part
    grid = np.asarray(grid, dtype=float)
    pos = np.searchsorted(grid, part)
    ok = (
        grid[0] <= part[0] + 1e-12
        and grid[-1] >= part[-1] - 1e-12
        and np.all(pos < grid.size)
        and np.allclose(grid[np.minimum(pos, grid.size - 1)], part, atol=1e-12)
    )
    if not ok:
        raise GridIncompatibilityError("grid does not contain every partition node")
    m, two, P = family.node_values.shape
    flat = family.node_values.reshape(m * two, P)
    if np.iscomplexobj(flat):
        vals = np.empty((m * two, grid.size), dtype=np.complex128)
        for r in range(m * two):
            vals[r] = np.interp(grid, part, flat[r].real) + 1j * np.interp(grid, part, flat[r].imag)
    else:
        vals = np.array([np.interp(grid, part, row) for row in flat])
    labels = tuple((mo.k, a) for mo in family.modes for a in (1, 2))
    return RoughPathLift(times=grid, values=vals, alpha=alpha, labels=labels)


def stratonovich_reference_lift(paths, alpha: float = 0.4) -> RoughPathLift:
    """Canonical lift at the finest sampled dyadic level.

    Serves as the Stratonovich reference: lifts of the nested piecewise-linear
    interpolants converge to the Stratonovich lift, and this is the finest one
    available from the ensemble.
    """
    m, two, P = paths.values.shape
    labels = tuple((mo.k, a) for mo in paths.modes for a in (1, 2))
    return RoughPathLift(
        times=paths.times,
        values=paths.values.reshape(m * two, P),
        alpha=alpha,
        labels=labels,
    )


@dataclass
class TwoIndexMap:
    """Values g_{st} over grid pairs with a declared target-space norm."""

    times: np.ndarray
    entries: dict[tuple[int, int], Any]
    norm: Callable[[Any], float]
    space: str = ""

    @classmethod
    def from_function(cls, times, pairs, fn, norm, space: str = "") -> "TwoIndexMap":
        times = np.asarray(times, dtype=float)
        entries = {(a, b): fn(a, b) for a, b in pairs}
        return cls(times=times, entries=entries, norm=norm, space=space)


def holder_seminorm(two_index: TwoIndexMap, exponent: float) -> float:
    """sup over stored pairs of ||g_{st}|| / (t - s)^exponent."""
    if exponent <= 0:
        raise ValueError(f"exponent must be positive, got {exponent}")
    if not two_index.entries:
        raise UndefinedSeminormError("no pairs stored in the two-index map")
    out = 0.0
    for (a, b), val in two_index.entries.items():
        dt = two_index.times[b] - two_index.times[a]
        if dt <= 0:
            continue
        out = max(out, two_index.norm(val) / dt**exponent)
    return out


def driver_norm_proxy(
    lift: RoughPathLift, theta: NoiseCoefficients, C_nu: float, pairs="dyadic"
) -> tuple[float, float]:
    """Proxy driver constants: path seminorms scaled by C_nu/||theta|| and its square.

    The operator norms of the transport drivers scale linearly (level 1) and
    quadratically (level 2) in these path seminorms on a fixed mode set; the
    exact Sobolev operator norms are not computed.
    """
    scale = C_nu / theta.l2_norm
    return (
        scale * lift.level1_seminorm(pairs=pairs),
        scale**2 * lift.level2_seminorm(pairs=pairs),
    )


def _theta_rows(theta: NoiseCoefficients) -> np.ndarray:
    return np.repeat(theta.values, 2)


def apply_first_driver(
    lift: RoughPathLift,
    theta: NoiseCoefficients,
    C_nu: float,
    eta: np.ndarray,
    a: int,
    b: int,
) -> np.ndarray:
    """A^1_{ab} applied via a precomputed transport stack eta (rows, field)."""
    th = _theta_rows(theta)
    w = th * lift.increment(a, b)
    return (C_nu / theta.l2_norm) * np.einsum("r,rf->f", w, eta)


def apply_second_driver(
    lift: RoughPathLift,
    theta: NoiseCoefficients,
    C_nu: float,
    eta: np.ndarray,
    trunc: Truncation,
    a: int,
    b: int,
) -> np.ndarray:
    """A^2_{ab} phi = c^2 sum theta_k G_{k,al}(theta_l G_{l,be} phi) WW^{(l,be),(k,al)}."""
    th = _theta_rows(theta)
    ww = lift.second(a, b)  # [inner row, outer row]
    inner = np.einsum("i,io,if->of", th, ww, eta)
    c = C_nu / theta.l2_norm
    out = np.zeros(eta.shape[1], dtype=np.complex128)
    shape = (trunc.n_side,) * 3 + (3,)
    r = 0
    for m in theta.shell_modes:
        for alpha in (1, 2):
            g = transport_core(trunc, inner[r].reshape(shape), m.frame(alpha), m.k)
            out += th[r] * g.ravel()
            r += 1
    return c**2 * out


def remainder_map(
    trajectory,
    lift: RoughPathLift,
    drift_series,
    theta: NoiseCoefficients,
    C_nu: float,
    pairs="dyadic",
) -> TwoIndexMap:
    """Expansion remainder of a trajectory against its own rough driver.

    For each grid pair, subtract the drift increment and the first/second
    driver terms from the state increment; under the expansion the leftover
    should scale like (t-s)^(3 alpha) in the H^-3 norm.
    """
    times = np.asarray(trajectory.times, dtype=float)
    if times.size != lift.n_points or not np.allclose(times, lift.times, atol=1e-12):
        raise GridIncompatibilityError("trajectory and lift grids differ")
    if len(drift_series) != times.size:
        raise GridIncompatibilityError("drift series length does not match the grid")
    if lift.m != 2 * len(theta):
        raise GridIncompatibilityError(
            f"lift has {lift.m} rows, noise shell needs {2 * len(theta)}"
        )
    trunc: Truncation = trajectory.trunc
    states = trajectory.states
    pair_list = _resolve_pairs(times.size, pairs)
    lefts = sorted({a for a, _ in pair_list})
    eta = {a: transport_stack(trunc, states[a], theta.shell_modes) for a in lefts}
    shape = states[0].shape
    entries = {}
    for a, b in pair_list:
        a1 = apply_first_driver(lift, theta, C_nu, eta[a], a, b).reshape(shape)
        a2 = apply_second_driver(lift, theta, C_nu, eta[a], trunc, a, b).reshape(shape)
        natural = (states[b] - states[a]) - (drift_series[b] - drift_series[a]) - a1 - a2
        entries[(a, b)] = natural
    return TwoIndexMap(
        times=times,
        entries=entries,
        norm=lambda c: sobolev_norm(c, -3.0, trunc),
        space="H^-3",
    )
