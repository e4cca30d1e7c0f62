"""Brownian ensembles on dyadic grids and their piecewise-linear approximants.

Paths are sampled by the Levy midpoint construction with a counter-based RNG
keyed on (seed, wave vector, frame index, dyadic level), so refining a grid
never perturbs previously sampled values and a path is reproducible no matter
which subset of modes an ensemble contains or in which order it was built.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .lattice import LatticeMode, make_mode, mode_index


class IncompleteEnsembleError(ValueError):
    """Raised when a complex path needs the negated mode but it is missing."""


class RefineFirstError(ValueError):
    """Raised when a partition is finer than the sampled dyadic grid."""


class EnsembleFormatError(ValueError):
    """Raised when a serialized ensemble cannot be parsed."""


_MODE_OFFSET = 512  # supports |k|_inf < 512


def _path_key(seed: int, k: tuple[int, int, int], alpha: int, level: int) -> list[int]:
    if any(abs(c) >= _MODE_OFFSET for c in k):
        raise ValueError(f"wave vector {k} out of RNG key range")
    mode_id = (
        ((alpha - 1) << 30)
        | ((k[0] + _MODE_OFFSET) << 20)
        | ((k[1] + _MODE_OFFSET) << 10)
        | (k[2] + _MODE_OFFSET)
    )
    return [np.uint64(seed), np.uint64((mode_id << 8) | level)]


def _gauss(seed: int, k, alpha: int, level: int, size: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=_path_key(seed, k, alpha, level)))
    return gen.standard_normal(size)


def _sample_path(seed: int, k, alpha: int, T: float, level: int) -> np.ndarray:
    """One standard Brownian path on the dyadic grid of depth `level`."""
    vals = np.zeros(2)
    vals[1] = np.sqrt(T) * _gauss(seed, k, alpha, 0, 1)[0]
    for lev in range(1, level + 1):
        std = np.sqrt(T / 2 ** (lev + 1))
        mids = 0.5 * (vals[:-1] + vals[1:]) + std * _gauss(seed, k, alpha, lev, vals.size - 1)
        out = np.empty(2 * vals.size - 1)
        out[::2] = vals
        out[1::2] = mids
        vals = out
    return vals


@dataclass
class BrownianEnsemble:
    """Independent real Brownian paths B^{k,alpha} on a dyadic grid.

    values[i, alpha-1] is the path for (modes[i], alpha), starting at 0.
    """

    T: float
    level: int
    seed: int
    modes: tuple[LatticeMode, ...]
    values: np.ndarray  # (n_modes, 2, 2**level + 1)

    @property
    def times(self) -> np.ndarray:
        return self.T * np.arange(2**self.level + 1) / 2**self.level

    def path(self, k, alpha: int) -> np.ndarray:
        i = mode_index(list(self.modes)).get(tuple(k))
        if i is None:
            raise IncompleteEnsembleError(f"no path sampled for {tuple(k)}")
        return self.values[i, alpha - 1]


def sample_ensemble(modes, T: float, level: int, seed: int) -> BrownianEnsemble:
    """Sample independent standard Brownian paths for every (mode, alpha)."""
    if T <= 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if level < 0:
        raise ValueError(f"dyadic level must be >= 0, got {level}")
    modes = tuple(modes)
    P = 2**level + 1
    values = np.empty((len(modes), 2, P))
    for i, m in enumerate(modes):
        for alpha in (1, 2):
            values[i, alpha - 1] = _sample_path(seed, m.k, alpha, T, level)
    return BrownianEnsemble(T=float(T), level=int(level), seed=int(seed), modes=modes, values=values)


def refine(ensemble: BrownianEnsemble, level: int) -> BrownianEnsemble:
    """Deepen the dyadic grid; existing grid values are reproduced bit-exactly."""
    if level < ensemble.level:
        raise ValueError("refinement level must not decrease")
    return sample_ensemble(ensemble.modes, ensemble.T, level, ensemble.seed)


@dataclass
class ComplexPaths:
    """Complex Brownian family W^{k,alpha} with conj(W^{k,alpha}) = W^{-k,alpha}."""

    T: float
    level: int
    seed: int
    modes: tuple[LatticeMode, ...]
    values: np.ndarray  # complex (n_modes, 2, P)

    @property
    def times(self) -> np.ndarray:
        return self.T * np.arange(2**self.level + 1) / 2**self.level

    def rows(self, shell_modes) -> np.ndarray:
        """Stack (m.k, alpha) rows in shell order, alpha inner: shape (2S, P)."""
        idx = mode_index(list(self.modes))
        rows = []
        for m in shell_modes:
            i = idx.get(m.k)
            if i is None:
                raise IncompleteEnsembleError(f"no complex path for {m.k}")
            rows.append(self.values[i, 0])
            rows.append(self.values[i, 1])
        return np.array(rows)


def complex_from_real(ensemble: BrownianEnsemble) -> ComplexPaths:
    """W^{k,a} = B^{k,a} + i B^{-k,a} on the plus class, B^{-k,a} - i B^{k,a} on minus."""
    idx = mode_index(list(ensemble.modes))
    values = np.empty(ensemble.values.shape, dtype=np.complex128)
    for i, m in enumerate(ensemble.modes):
        neg = (-m.k[0], -m.k[1], -m.k[2])
        j = idx.get(neg)
        if j is None:
            raise IncompleteEnsembleError(f"ensemble lacks the negated mode {neg}")
        if m.sign_class == "plus":
            values[i] = ensemble.values[i] + 1j * ensemble.values[j]
        else:
            values[i] = ensemble.values[j] - 1j * ensemble.values[i]
    return ComplexPaths(
        T=ensemble.T, level=ensemble.level, seed=ensemble.seed, modes=ensemble.modes, values=values
    )


@dataclass
class PiecewiseLinearFamily:
    """Piecewise-linear interpolants W^n on a partition of mesh O(1/n).

    node_values agree with the underlying paths at partition points exactly;
    slopes[i] is the constant derivative on [t_i, t_{i+1}].
    """

    n: int
    partition: np.ndarray  # (P,) times
    node_values: np.ndarray  # (n_modes, 2, P)
    slopes: np.ndarray  # (n_modes, 2, P - 1)
    modes: tuple[LatticeMode, ...]
    T: float

    def interval_of(self, t: float) -> int:
        i = int(np.searchsorted(self.partition, t, side="right")) - 1
        return min(max(i, 0), len(self.partition) - 2)

    def slopes_at(self, t: float) -> np.ndarray:
        if t < -1e-12 or t > self.T * (1 + 1e-12):
            raise ValueError(f"time {t} outside [0, {self.T}]")
        return self.slopes[:, :, self.interval_of(t)]

    def value_at(self, t: float) -> np.ndarray:
        i = self.interval_of(t)
        return self.node_values[:, :, i] + self.slopes[:, :, i] * (t - self.partition[i])

    def shell_rows(self, shell_modes) -> "PiecewiseLinearFamily":
        """Restrict to the given modes (in their order), keeping both frames."""
        idx = mode_index(list(self.modes))
        sel = []
        for m in shell_modes:
            i = idx.get(m.k)
            if i is None:
                raise IncompleteEnsembleError(f"no path for shell mode {m.k}")
            sel.append(i)
        return PiecewiseLinearFamily(
            n=self.n,
            partition=self.partition,
            node_values=self.node_values[sel],
            slopes=self.slopes[sel],
            modes=tuple(shell_modes),
            T=self.T,
        )


def piecewise_linear(paths, n: int) -> PiecewiseLinearFamily:
    """Interpolate an ensemble (real or complex) on the n-interval partition.

    The uniform mesh T/n is snapped onto the dyadic grid, so the partition is
    a subset of sampled points; n beyond the grid resolution is refused.
    """
    if n < 1:
        raise ValueError(f"approximation index must be >= 1, got {n}")
    steps = 2**paths.level
    if n > steps:
        raise RefineFirstError(
            f"partition with n={n} needs a dyadic grid of at least depth {int(np.ceil(np.log2(n)))}, "
            f"ensemble has level {paths.level}"
        )
    idx = np.unique(np.round(np.arange(n + 1) * steps / n).astype(int))
    partition = paths.T * idx / steps
    node_values = paths.values[:, :, idx]
    dt = np.diff(partition)
    slopes = np.diff(node_values, axis=-1) / dt
    return PiecewiseLinearFamily(
        n=int(n),
        partition=partition,
        node_values=node_values,
        slopes=slopes,
        modes=paths.modes,
        T=paths.T,
    )


# -- checkpoint format ------------------------------------------------------

_ENSEMBLE_MAGIC = b"RNSB"
_ENSEMBLE_VERSION = 1


def save_ensemble(path, ensemble: BrownianEnsemble) -> None:
    """Header (magic, version, T, level, mode count, seed), mode table, LE float64 paths."""
    with open(path, "wb") as fh:
        fh.write(_ENSEMBLE_MAGIC)
        fh.write(
            struct.pack(
                "<IdIIQ",
                _ENSEMBLE_VERSION,
                ensemble.T,
                ensemble.level,
                len(ensemble.modes),
                ensemble.seed,
            )
        )
        table = np.array([m.k for m in ensemble.modes], dtype="<i4")
        fh.write(table.tobytes())
        fh.write(ensemble.values.astype("<f8").tobytes())


def load_ensemble(path) -> BrownianEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _ENSEMBLE_MAGIC:
            raise EnsembleFormatError(f"bad magic {magic!r}")
        version, T, level, n_modes, seed = struct.unpack("<IdIIQ", fh.read(24))
        if version != _ENSEMBLE_VERSION:
            raise EnsembleFormatError(f"unsupported ensemble format version {version}")
        table = np.frombuffer(fh.read(n_modes * 3 * 4), dtype="<i4").reshape(n_modes, 3)
        P = 2**level + 1
        raw = np.frombuffer(fh.read(n_modes * 2 * P * 8), dtype="<f8")
        if raw.size != n_modes * 2 * P:
            raise EnsembleFormatError("truncated path payload")
    modes = tuple(make_mode(tuple(int(c) for c in row)) for row in table)
    values = raw.reshape(n_modes, 2, P).astype(np.float64)
    return BrownianEnsemble(T=float(T), level=int(level), seed=int(seed), modes=modes, values=values)
