"""Spectral calculus for real, divergence-free vector fields on the 3-torus.

Fields live on the truncated Fourier cube |k|_inf <= M as dense complex
arrays of shape (2M+1, 2M+1, 2M+1, 3) indexed by k + M.  Products are
evaluated pseudo-spectrally on a physical grid large enough for exact
(2/3-rule) dealiasing of quadratic terms, so the convolution identities
tested against brute force hold to rounding.

Conventions: e_k(x) = exp(2 pi i k.x) on [0,1)^3, Parseval inner product
<f,g> = sum_k f_k . conj(g_k), Sobolev weight (1 + 4 pi^2 |k|^2)^m.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft as _fft

from .lattice import LatticeMode, SigmaAction

TWO_PI = 2.0 * np.pi


class SymmetryError(ValueError):
    """Raised when coefficients break the reality symmetry conj(c_k) = c_{-k}."""


class GridCompatibilityError(ValueError):
    """Raised for mismatched truncations or an undersized dealiasing grid."""


class FieldFormatError(ValueError):
    """Raised when a serialized field cannot be parsed."""


class Truncation:
    """Precomputed index machinery for one truncation radius M.

    Instances are immutable in practice and cached; share them freely.
    """

    _cache: dict[int, "Truncation"] = {}

    def __init__(self, M: int):
        if M < 1:
            raise GridCompatibilityError(f"truncation radius must be >= 1, got {M}")
        self.M = int(M)
        self.n_side = 2 * self.M + 1
        r = np.arange(-self.M, self.M + 1)
        self.k = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).astype(np.int64)
        self.kf = self.k.astype(float)
        self.k2 = np.sum(self.kf**2, axis=-1)
        self.zero = (self.M, self.M, self.M)
        inv = self.k2.copy()
        inv[self.zero] = 1.0
        self.inv_k2 = 1.0 / inv
        self.inv_k2[self.zero] = 0.0
        # smallest power of two >= 3M; always >= 3M+1, so quadratic products
        # of truncated fields are alias-free on the retained modes
        self.grid = 1 << (3 * self.M - 1).bit_length()
        self.half = self.grid // 2 + 1
        self.wrap = (r % self.grid).astype(np.intp)  # cube axis -> fft axis
        self.wrap_neg = ((-r) % self.grid).astype(np.intp)
        self._weights: dict[float, np.ndarray] = {}
        # zeroed once; only the cube region is rewritten between transforms
        self._spec_buf: dict[int, np.ndarray] = {}

    @classmethod
    def get(cls, M: int) -> "Truncation":
        t = cls._cache.get(M)
        if t is None:
            t = cls(M)
            cls._cache[M] = t
        return t

    def sobolev_weights(self, m: float) -> np.ndarray:
        w = self._weights.get(m)
        if w is None:
            w = (1.0 + 4.0 * np.pi**2 * self.k2) ** m
            self._weights[m] = w
        return w

    def zeros(self, comps: int = 3) -> np.ndarray:
        return np.zeros((self.n_side,) * 3 + (comps,), dtype=np.complex128)

    # -- transforms -------------------------------------------------------

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        """Synthesize real point values on the dealiasing grid.

        Requires the reality symmetry; the half-spectrum inverse transform
        then returns exactly real samples.  The scratch buffer is reused per
        component count (instances are not thread-safe, matching the
        process-level concurrency model).
        """
        comps = coeffs.shape[-1]
        G, H, M = self.grid, self.half, self.M
        spec = self._spec_buf.get(comps)
        if spec is None:
            spec = np.zeros((G, G, H, comps), dtype=np.complex128)
            self._spec_buf[comps] = spec
        spec[np.ix_(self.wrap, self.wrap, np.arange(M + 1))] = coeffs[:, :, M:]
        return _fft.irfftn(spec, s=(G, G, G), axes=(0, 1, 2), norm="forward")

    def from_physical(self, phys: np.ndarray) -> np.ndarray:
        """Analyze real point values back to the coefficient cube (Galerkin truncation)."""
        M = self.M
        spec = _fft.rfftn(phys, axes=(0, 1, 2), norm="forward")
        out = np.empty((self.n_side,) * 3 + (phys.shape[-1],), dtype=np.complex128)
        out[:, :, M:] = spec[np.ix_(self.wrap, self.wrap, np.arange(M + 1))]
        out[:, :, :M] = np.conj(spec[np.ix_(self.wrap_neg, self.wrap_neg, np.arange(M, 0, -1))])
        return out

    # -- pointwise invariant helpers --------------------------------------

    def reality_defect(self, coeffs: np.ndarray) -> float:
        flip = np.conj(coeffs[::-1, ::-1, ::-1])
        return float(np.max(np.abs(coeffs - flip)))

    def divergence_defect(self, coeffs: np.ndarray) -> float:
        return float(np.max(np.abs(np.sum(self.kf * coeffs, axis=-1))))

    def symmetrize(self, coeffs: np.ndarray) -> np.ndarray:
        """Project onto exactly reality-symmetric coefficients."""
        return 0.5 * (coeffs + np.conj(coeffs[::-1, ::-1, ::-1]))


@dataclass
class SpectralField:
    """Truncated Fourier coefficients of a real divergence-free vector field.

    The zero mode is kept in storage but pinned to zero (zero-mean fields).
    """

    trunc: Truncation
    coeffs: np.ndarray

    @property
    def M(self) -> int:
        return self.trunc.M

    @classmethod
    def zeros(cls, M: int) -> "SpectralField":
        t = Truncation.get(M)
        return cls(t, t.zeros())

    def copy(self) -> "SpectralField":
        return SpectralField(self.trunc, self.coeffs.copy())

    def validate(self, tol: float = 1e-10) -> None:
        scale = max(float(np.max(np.abs(self.coeffs))), 1e-300)
        if self.trunc.reality_defect(self.coeffs) > tol * scale:
            raise SymmetryError("reality symmetry conj(c_k) = c_{-k} violated")
        if self.trunc.divergence_defect(self.coeffs) > tol * scale:
            raise SymmetryError("divergence-free condition k . c_k = 0 violated")
        if np.max(np.abs(self.coeffs[self.trunc.zero])) > tol * scale:
            raise SymmetryError("zero mode must vanish")


def _as_coeffs(f) -> np.ndarray:
    return f.coeffs if isinstance(f, SpectralField) else np.asarray(f)


def _require_same_trunc(*fields: SpectralField) -> Truncation:
    t = fields[0].trunc
    for f in fields[1:]:
        if f.trunc.M != t.M:
            raise GridCompatibilityError("fields live on different truncations")
    return t


def leray_project(f, trunc: Truncation | None = None, check: bool = True) -> SpectralField:
    """Remove the component parallel to k per mode; zero the mean mode.

    Idempotent orthogonal projection onto divergence-free, zero-mean fields.
    Raises SymmetryError if the input breaks the reality symmetry.
    """
    if isinstance(f, SpectralField):
        trunc, coeffs = f.trunc, f.coeffs
    else:
        coeffs = np.asarray(f, dtype=np.complex128)
        if trunc is None:
            trunc = Truncation.get((coeffs.shape[0] - 1) // 2)
    if check:
        scale = max(float(np.max(np.abs(coeffs))), 1e-300)
        if trunc.reality_defect(coeffs) > 1e-10 * scale:
            raise SymmetryError("input coefficients break conj(c_k) = c_{-k}")
    out = project_coeffs(trunc, coeffs)
    return SpectralField(trunc, out)


def project_coeffs(trunc: Truncation, coeffs: np.ndarray) -> np.ndarray:
    """Leray projection on a raw cube: c - k (k.c)/|k|^2, mean removed."""
    kdot = np.sum(trunc.kf * coeffs, axis=-1)
    out = coeffs - trunc.kf * (kdot * trunc.inv_k2)[..., None]
    out[trunc.zero] = 0.0
    return out


def biot_savart(xi: SpectralField) -> SpectralField:
    """Velocity u with curl u = xi and div u = 0: u_k = i (k x xi_k) / (2 pi |k|^2)."""
    t = xi.trunc
    u = 1j * np.cross(t.kf, xi.coeffs) * (t.inv_k2[..., None] / TWO_PI)
    return SpectralField(t, u)


def curl_coeffs(trunc: Truncation, coeffs: np.ndarray) -> np.ndarray:
    return TWO_PI * 1j * np.cross(trunc.kf, coeffs)


def curl(f: SpectralField) -> SpectralField:
    """Spectral curl: (curl f)_k = 2 pi i k x f_k."""
    return SpectralField(f.trunc, curl_coeffs(f.trunc, f.coeffs))


def lie_derivative(u: SpectralField, xi: SpectralField) -> np.ndarray:
    """Raw coefficients of u.grad(xi) - xi.grad(u), dealiased.

    Both terms are divergence forms of the same tensor u_j xi_i for
    divergence-free inputs, so one pseudo-spectral product serves both.
    """
    t = _require_same_trunc(u, xi)
    up = t.to_physical(u.coeffs)
    xp = t.to_physical(xi.coeffs)
    # T[.., j, i] = u_j xi_i
    tens = up[..., :, None] * xp[..., None, :]
    G = t.grid
    that = t.from_physical(tens.reshape(G, G, G, 9)).reshape(
        (t.n_side,) * 3 + (3, 3)
    )
    ik = TWO_PI * 1j * t.kf
    adv = np.einsum("...j,...ji->...i", ik, that)  # div_j (u_j xi_i)
    stretch = np.einsum("...j,...ij->...i", ik, that)  # div_j (xi_j u_i) via transpose
    return adv - stretch


def transport_apply(xi: SpectralField, action: SigmaAction) -> SpectralField:
    """Exact single-mode convolution Pi(sigma_{k,alpha} . grad xi).

    The output coefficient at l + k is the Leray projection of
    a_{k,alpha} . (2 pi i l) xi_l; modes shifted outside the truncation are
    dropped (Galerkin).
    """
    t = xi.trunc
    out = transport_core(t, xi.coeffs, np.asarray(action.amplitude, dtype=float), action.shift)
    return SpectralField(t, out)


def transport_core(trunc: Truncation, coeffs: np.ndarray, amplitude: np.ndarray, shift) -> np.ndarray:
    """In-cube shifted multiply for the transport action, then Leray projection."""
    n = trunc.n_side
    out = np.zeros_like(coeffs)
    src_lo = [max(0, -int(s)) for s in shift]
    src_hi = [n + min(0, -int(s)) for s in shift]
    dst_lo = [max(0, int(s)) for s in shift]
    dst_hi = [n + min(0, int(s)) for s in shift]
    src = tuple(slice(lo, hi) for lo, hi in zip(src_lo, src_hi))
    dst = tuple(slice(lo, hi) for lo, hi in zip(dst_lo, dst_hi))
    scal = TWO_PI * 1j * np.einsum("...c,c->...", trunc.kf[src], amplitude)
    out[dst] = scal[..., None] * coeffs[src]
    return project_coeffs(trunc, out)


def transport_stack(trunc: Truncation, coeffs: np.ndarray, shell_modes) -> np.ndarray:
    """Stacked transport actions for all (k, alpha) rows of a noise shell.

    Row order is shell-mode major with alpha = 1, 2 inner, matching the
    ordering used by the rough-driver contractions.
    """
    rows = []
    for m in shell_modes:
        for alpha in (1, 2):
            rows.append(
                transport_core(trunc, coeffs, m.frame(alpha), m.k).ravel()
            )
    return np.array(rows)


def convolve_product(trunc: Truncation, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pointwise (dealiased) product of two scalar coefficient cubes.

    Helper for oracles and tests; production paths fuse their products.
    """
    fp = trunc.to_physical(f[..., None])
    gp = trunc.to_physical(g[..., None])
    return trunc.from_physical(fp * gp)[..., 0]


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u, v, w) = integral ((u.grad) v) . w dx via Parseval."""
    t = _require_same_trunc(u, v, w)
    up = t.to_physical(u.coeffs)
    vp = t.to_physical(v.coeffs)
    tens = up[..., :, None] * vp[..., None, :]
    G = t.grid
    that = t.from_physical(tens.reshape(G, G, G, 9)).reshape((t.n_side,) * 3 + (3, 3))
    ik = TWO_PI * 1j * t.kf
    ugradv = np.einsum("...j,...ji->...i", ik, that)
    return float(np.real(np.sum(ugradv * np.conj(w.coeffs))))


def inner_product(f, g) -> float:
    """L^2 inner product of two real fields via coefficients."""
    return float(np.real(np.sum(_as_coeffs(f) * np.conj(_as_coeffs(g)))))


def sobolev_norm(f, m: float, trunc: Truncation | None = None) -> float:
    """H^m norm: (sum_k (1 + 4 pi^2 |k|^2)^m |f_k|^2)^(1/2)."""
    if isinstance(f, SpectralField):
        trunc, coeffs = f.trunc, f.coeffs
    else:
        coeffs = np.asarray(f)
        if trunc is None:
            trunc = Truncation.get((coeffs.shape[0] - 1) // 2)
    w = trunc.sobolev_weights(m)
    return float(np.sqrt(np.sum(w * np.sum(np.abs(coeffs) ** 2, axis=-1))))


def enstrophy(f) -> float:
    """Squared H norm, sum_k |f_k|^2."""
    c = _as_coeffs(f)
    return float(np.sum(np.abs(c) ** 2))


def dissipation(f, trunc: Truncation | None = None) -> float:
    """Squared gradient norm, sum_k 4 pi^2 |k|^2 |f_k|^2."""
    if isinstance(f, SpectralField):
        trunc, c = f.trunc, f.coeffs
    else:
        c = np.asarray(f)
    return float(4.0 * np.pi**2 * np.sum(trunc.k2 * np.sum(np.abs(c) ** 2, axis=-1)))


# -- serialization ---------------------------------------------------------

_FIELD_MAGIC = b"RNSF"
_FIELD_VERSION = 1


def save_field(path, field: SpectralField) -> None:
    """Write a field: header (magic, version, M, mode count) + LE complex128."""
    t = field.trunc
    count = t.n_side**3 - 1
    flat = field.coeffs.reshape(-1, 3)
    zero_flat = np.ravel_multi_index(t.zero, (t.n_side,) * 3)
    data = np.delete(flat, zero_flat, axis=0).astype("<c16")
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<III", _FIELD_VERSION, t.M, count))
        fh.write(data.tobytes())


def load_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FIELD_MAGIC:
            raise FieldFormatError(f"bad magic {magic!r}")
        version, M, count = struct.unpack("<III", fh.read(12))
        if version != _FIELD_VERSION:
            raise FieldFormatError(f"unsupported field format version {version}")
        t = Truncation.get(M)
        expected = t.n_side**3 - 1
        if count != expected:
            raise FieldFormatError(f"mode count {count} != {expected} for M={M}")
        raw = np.frombuffer(fh.read(count * 3 * 16), dtype="<c16")
        if raw.size != count * 3:
            raise FieldFormatError("truncated coefficient payload")
    flat = raw.reshape(count, 3).astype(np.complex128)
    zero_flat = np.ravel_multi_index(t.zero, (t.n_side,) * 3)
    full = np.insert(flat, zero_flat, np.zeros(3, dtype=np.complex128), axis=0)
    return SpectralField(t, full.reshape((t.n_side,) * 3 + (3,)))
