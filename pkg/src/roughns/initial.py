"""Initial vorticity fields: seeded random spectra and explicit low-mode flows."""
from __future__ import annotations

import numpy as np

from . import spectral
from .spectral import SpectralField, Truncation


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[np.uint64(seed), np.uint64(tag)]))


def rescale(field: SpectralField, K: float) -> SpectralField:
    """Scale so that ||xi||_H = K exactly (no-op for the zero field)."""
    norm = np.sqrt(spectral.enstrophy(field.coeffs))
    if norm == 0:
        return field
    return SpectralField(field.trunc, field.coeffs * (K / norm))


def random_field(M: int, K: float, seed: int, slope: float = 2.0, tag: int = 0) -> SpectralField:
    """Random divergence-free field with spectral decay |k|^-slope, norm K.

    Fully determined by (seed, tag); reality is imposed by symmetrization and
    divergence-freeness by projection.
    """
    t = Truncation.get(M)
    gen = _rng(seed, 2**32 + tag)
    shape = (t.n_side,) * 3 + (3,)
    z = gen.standard_normal(shape) + 1j * gen.standard_normal(shape)
    decay = np.where(t.k2 > 0, np.maximum(t.k2, 1.0) ** (-slope / 2.0), 0.0)
    z *= decay[..., None]
    z = t.symmetrize(z)
    f = spectral.leray_project(z, t, check=False)
    return rescale(f, K)


def single_mode_field(M: int, k, amplitude, phase: complex = 1.0) -> SpectralField:
    """Real divergence-free field supported on +-k with the given amplitude."""
    t = Truncation.get(M)
    c = t.zeros()
    idx = tuple(int(v) + M for v in k)
    nidx = tuple(-int(v) + M for v in k)
    amp = np.asarray(amplitude, dtype=complex) * phase
    c[idx] = amp
    c[nidx] = np.conj(amp)
    return spectral.leray_project(c, t, check=False)


def taylor_green_field(M: int, K: float) -> SpectralField:
    """Vorticity of the classical single-cell cellular flow, rescaled to K."""
    t = Truncation.get(M)
    G = t.grid
    x = np.arange(G) / G
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    u = np.empty((G, G, G, 3))
    u[..., 0] = np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y) * np.cos(2 * np.pi * Z)
    u[..., 1] = -np.cos(2 * np.pi * X) * np.sin(2 * np.pi * Y) * np.cos(2 * np.pi * Z)
    u[..., 2] = 0.0
    uh = spectral.project_coeffs(t, t.from_physical(u))
    xi = spectral.curl_coeffs(t, uh)
    return rescale(SpectralField(t, xi), K)


def two_mode_field(M: int, K: float) -> SpectralField:
    """Smooth two-mode initial condition used for integrator order studies."""
    a = single_mode_field(M, (1, 0, 0), (0.0, 1.0, 0.5j))
    b = single_mode_field(M, (0, 1, 1), (1.0, 0.0, 0.0), phase=0.5 + 0.25j)
    return rescale(SpectralField(a.trunc, a.coeffs + b.coeffs), K)


def ball_sampler(M: int, K: float, seed: int, slope: float = 2.0):
    """Draw the i-th initial condition on the radius-K sphere of H."""

    def draw(i: int) -> SpectralField:
        return random_field(M, K, seed, slope=slope, tag=i)

    return draw


def zero_sampler(M: int):
    """Point mass at the origin."""

    def draw(i: int) -> SpectralField:
        return SpectralField.zeros(M)

    return draw
