"""Truncated lattice of Fourier modes, orthonormal frames and noise coefficients.

The nonzero lattice Z^3_0 is split into a "plus" and a "minus" class with
plus = -minus, every mode carries an orthonormal frame (a1, a2) of the plane
orthogonal to k, and the frame is shared between k and -k.  Radial shell
weights |k|^-gamma on N <= |k| <= 2N drive the transport noise.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class TruncationError(ValueError):
    """Raised for an empty or invalid lattice truncation."""


class ShellCoverageError(ValueError):
    """Raised when a mode list does not cover the requested noise shell."""


class UnknownModeError(KeyError):
    """Raised when a wave vector is not part of the enumerated truncation."""


@dataclass(frozen=True)
class LatticeMode:
    """A nonzero wave vector with its sign class and orthonormal frame.

    Invariants: a1 and a2 are unit vectors orthogonal to k and to each other,
    (a1, a2, k/|k|) is right-handed for plus modes, and the frame of -k equals
    the frame of k.
    """

    k: tuple[int, int, int]
    sign_class: str  # "plus" or "minus"
    a1: np.ndarray
    a2: np.ndarray

    @property
    def norm(self) -> float:
        return math.sqrt(self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2)

    @property
    def max_norm(self) -> int:
        return max(abs(c) for c in self.k)

    def frame(self, alpha: int) -> np.ndarray:
        if alpha == 1:
            return self.a1
        if alpha == 2:
            return self.a2
        raise UnknownModeError(f"frame index must be 1 or 2, got {alpha}")


class SigmaAction(NamedTuple):
    """Single-mode multiplier: shift coefficients by `shift`, scale by `amplitude`."""

    amplitude: np.ndarray
    shift: tuple[int, int, int]


def _is_plus(k: tuple[int, int, int]) -> bool:
    # lexicographically positive: first nonzero component > 0
    for c in k:
        if c != 0:
            return c > 0
    raise ValueError("zero vector has no sign class")


def _frame_for(k: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (a1, a2) with a1 x a2 = k/|k|.

    a1 = normalize(e3 x k) unless k is parallel to e3, in which case a1 = e1.
    This reproduces k=(1,0,0) -> a1=(0,1,0), a2=(0,0,1).
    """
    kv = np.array(k, dtype=float)
    if k[0] == 0 and k[1] == 0:
        a1 = np.array([1.0, 0.0, 0.0])
    else:
        a1 = np.array([-kv[1], kv[0], 0.0])
        a1 /= np.linalg.norm(a1)
    khat = kv / np.linalg.norm(kv)
    a2 = np.cross(khat, a1)
    return a1, a2


def make_mode(k: tuple[int, int, int]) -> LatticeMode:
    """Standalone mode with the shared-frame convention a_{-k,alpha} = a_{k,alpha}."""
    k = tuple(int(c) for c in k)
    plus = _is_plus(k)
    base = k if plus else (-k[0], -k[1], -k[2])
    a1, a2 = _frame_for(base)
    return LatticeMode(k=k, sign_class="plus" if plus else "minus", a1=a1, a2=a2)


def enumerate_modes(M: int) -> list[LatticeMode]:
    """All modes 0 < |k|_inf <= M in lexicographic order, with frames attached.

    Frames are computed for plus modes; each minus mode reuses the frame of
    its negation, so a_{-k,alpha} == a_{k,alpha} exactly.
    """
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise TruncationError(f"truncation radius must be an integer >= 1, got {M}")
    modes: list[LatticeMode] = []
    rng = range(-M, M + 1)
    for k1 in rng:
        for k2 in rng:
            for k3 in rng:
                if k1 == 0 and k2 == 0 and k3 == 0:
                    continue
                modes.append(make_mode((k1, k2, k3)))
    return modes


@functools.lru_cache(maxsize=16)
def cached_modes(M: int) -> tuple[LatticeMode, ...]:
    """Memoized enumeration; the list is immutable so sharing is safe."""
    return tuple(enumerate_modes(M))


def mode_index(modes: list[LatticeMode]) -> dict[tuple[int, int, int], int]:
    """Position of each wave vector within `modes`."""
    return {m.k: i for i, m in enumerate(modes)}


@dataclass(frozen=True)
class NoiseCoefficients:
    """Shell weights theta_k = |k|^-gamma on N <= |k| <= 2N, zero elsewhere."""

    N: int
    gamma: float
    shell_modes: tuple[LatticeMode, ...]
    values: np.ndarray  # theta_k aligned with shell_modes
    l2_norm: float

    @property
    def entries(self) -> dict[tuple[int, int, int], float]:
        return {m.k: float(v) for m, v in zip(self.shell_modes, self.values)}

    def theta(self, k: tuple[int, int, int]) -> float:
        return self.entries.get(tuple(k), 0.0)

    def __len__(self) -> int:
        return len(self.shell_modes)


def theta_coefficients(N: int, gamma: float, modes: list[LatticeMode]) -> NoiseCoefficients:
    """Build the shell coefficients over an enumerated truncation.

    The mode list must cover the full Euclidean shell N <= |k| <= 2N; a
    truncation with |k|_inf < 2N would silently drop shell modes, so it is
    rejected instead.
    """
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise TruncationError(f"shell index must be an integer >= 1, got {N}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    M = max(m.max_norm for m in modes)
    if M < 2 * N:
        raise ShellCoverageError(
            f"mode truncation M={M} does not cover the shell |k| <= {2 * N}; need M >= 2N"
        )
    shell = [m for m in modes if N <= m.norm <= 2 * N]
    values = np.array([m.norm ** (-gamma) for m in shell])
    l2 = float(np.sqrt(np.sum(values**2)))
    if not l2 > 0:
        raise ShellCoverageError(f"empty shell for N={N}")
    return NoiseCoefficients(N=int(N), gamma=float(gamma), shell_modes=tuple(shell), values=values, l2_norm=l2)


def sigma_action_offsets(modes: list[LatticeMode], k: tuple[int, int, int], alpha: int) -> SigmaAction:
    """Descriptor of multiplication by sigma_{k,alpha} = a_{k,alpha} e^{2 pi i k.x}.

    Multiplying a field by sigma_{k,alpha} shifts Fourier index l -> l + k and
    scales by the amplitude; amplitude . k == 0 keeps the action divergence
    free before projection.
    """
    k = tuple(int(c) for c in k)
    for m in modes:
        if m.k == k:
            return SigmaAction(amplitude=m.frame(alpha), shift=k)
    raise UnknownModeError(f"wave vector {k} is not in the enumerated truncation")
