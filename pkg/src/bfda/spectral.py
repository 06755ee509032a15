"""Fourier representation of vector fields on the periodic box [0, l]^3.

Coefficients are stored in the half-spectrum layout produced by a real
3D FFT: an array of shape ``(3, n, n, n//2 + 1)`` indexed as
``(component, m_x, m_y, m_z)``. ``m_x`` and ``m_y`` follow FFT order
(0, 1, ..., n/2, -n/2+1, ..., -1) and ``m_z`` runs over 0..n/2. The
normalisation is ``u(x) = sum_k u_hat(k) exp(i k.x)`` so that the DC
coefficient is the spatial mean.

Wavenumbers are ``k = (2 pi / l) m``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    """Number of threads handed to pocketfft for every transform."""
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


@dataclass(frozen=True)
class Grid:
    l: float
    n: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.n < 8 or self.n % 2:
            raise ValueError(f"grid.n must be even and >= 8, got {self.n}")
        if not self.l > 0:
            raise ValueError(f"grid.l must be positive, got {self.l}")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError(
                f"grid.dealias_fraction must lie in (0, 1], got {self.dealias_fraction}")

    @property
    def shape(self):
        return (self.n, self.n, self.n)

    @property
    def spectral_shape(self):
        return (3, self.n, self.n, self.n // 2 + 1)

    @property
    def dx(self):
        return self.l / self.n

    @property
    def volume(self):
        return self.l ** 3

    @cached_property
    def mode_indices(self):
        """Integer mode numbers (m_x, m_y, m_z) broadcastable to the half spectrum."""
        n = self.n
        m = np.fft.fftfreq(n, 1.0 / n)
        m[n // 2] = n // 2  # Nyquist carried as +n/2
        mz = np.arange(n // 2 + 1, dtype=float)
        return (m[:, None, None], m[None, :, None], mz[None, None, :])

    @cached_property
    def wavenumbers(self):
        c = 2 * np.pi / self.l
        mx, my, mz = self.mode_indices
        return (c * mx, c * my, c * mz)

    @cached_property
    def k2(self):
        kx, ky, kz = self.wavenumbers
        return kx ** 2 + ky ** 2 + kz ** 2

    @cached_property
    def inv_k2(self):
        k2 = self.k2.copy()
        k2[0, 0, 0] = 1.0
        out = 1.0 / k2
        out[0, 0, 0] = 0.0
        return out

    @cached_property
    def dealias_mask(self):
        # strict inequality: for n divisible by 3 the boundary mode would alias
        cut = self.dealias_fraction * self.n / 2
        mx, my, mz = self.mode_indices
        keep = (np.abs(mx) < cut) & (np.abs(my) < cut) & (mz < cut)
        return keep

    @cached_property
    def weights(self):
        """Multiplicity of each half-spectrum column in the full spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    @cached_property
    def coordinates(self):
        x = np.arange(self.n) * self.dx
        return np.meshgrid(x, x, x, indexing="ij")


@dataclass
class SpectralField:
    """Real 3-vector field held as truncated Fourier coefficients."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != self.grid.spectral_shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match grid "
                f"{self.grid.spectral_shape}")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.spectral_shape, dtype=complex))

    def copy(self):
        return SpectralField(self.grid, self.coeffs.copy())

    def _check(self, other):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__


@dataclass
class PhysicalField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (3,) + self.grid.shape:
            raise ValueError(
                f"value shape {self.values.shape} does not match grid {(3,) + self.grid.shape}")


# -- raw array transforms (hot path) -----------------------------------------

def fwd(values):
    return sfft.rfftn(values, axes=(-3, -2, -1), norm="forward", workers=_FFT_WORKERS)


def bwd(coeffs, n):
    return sfft.irfftn(coeffs, s=(n, n, n), axes=(-3, -2, -1), norm="forward",
                       workers=_FFT_WORKERS)


def project_coeffs(grid, c):
    """Leray projection of a coefficient array, k=0 passed through."""
    kx, ky, kz = grid.wavenumbers
    kdotc = (kx * c[0] + ky * c[1] + kz * c[2]) * grid.inv_k2
    out = np.empty_like(c)
    out[0] = c[0] - kx * kdotc
    out[1] = c[1] - ky * kdotc
    out[2] = c[2] - kz * kdotc
    return out


def curl_coeffs(grid, c):
    kx, ky, kz = grid.wavenumbers
    out = np.empty_like(c)
    out[0] = 1j * (ky * c[2] - kz * c[1])
    out[1] = 1j * (kz * c[0] - kx * c[2])
    out[2] = 1j * (kx * c[1] - ky * c[0])
    return out


# -- public operations --------------------------------------------------------

def forward_transform(p: PhysicalField) -> SpectralField:
    if not np.all(np.isfinite(p.values)):
        raise ValueError("forward_transform: physical field has non-finite values")
    return SpectralField(p.grid, fwd(p.values))


def backward_transform(s: SpectralField) -> PhysicalField:
    return PhysicalField(s.grid, bwd(s.coeffs, s.grid.n))


def leray_project(s: SpectralField) -> SpectralField:
    return SpectralField(s.grid, project_coeffs(s.grid, s.coeffs))


def apply_A(s: SpectralField) -> SpectralField:
    """Stokes operator; on periodic divergence-free fields this is -Laplacian."""
    return SpectralField(s.grid, s.coeffs * s.grid.k2)


def gradient(s: SpectralField) -> np.ndarray:
    """Coefficients of the velocity gradient, ``out[i, j] = d u_i / d x_j``."""
    k = s.grid.wavenumbers
    return np.stack([np.stack([1j * k[j] * s.coeffs[i] for j in range(3)])
                     for i in range(3)])


def divergence(s: SpectralField) -> np.ndarray:
    kx, ky, kz = s.grid.wavenumbers
    return 1j * (kx * s.coeffs[0] + ky * s.coeffs[1] + kz * s.coeffs[2])


def dealias(s: SpectralField) -> SpectralField:
    return SpectralField(s.grid, s.coeffs * s.grid.dealias_mask)


# -- norms and inner products -------------------------------------------------

def _wsum(grid, x):
    return float(np.sum(grid.weights * x))


def inner(u: SpectralField, v: SpectralField) -> float:
    """L^2(Omega) inner product through Parseval."""
    u._check(v)
    return u.grid.volume * _wsum(u.grid, (u.coeffs.conj() * v.coeffs).real)


def l2_norm_sq(s: SpectralField) -> float:
    return s.grid.volume * _wsum(s.grid, np.abs(s.coeffs) ** 2)


def grad_norm_sq(s: SpectralField) -> float:
    return s.grid.volume * _wsum(s.grid, s.grid.k2 * np.abs(s.coeffs) ** 2)


def A_norm_sq(s: SpectralField) -> float:
    return s.grid.volume * _wsum(s.grid, s.grid.k2 ** 2 * np.abs(s.coeffs) ** 2)


def l2_norm(s):
    return np.sqrt(l2_norm_sq(s))


def lp_norm_pow(s: SpectralField, p: float, values=None) -> float:
    """``||u||_{L^p}^p`` by collocation quadrature of ``|u|^p``."""
    if values is None:
        values = bwd(s.coeffs, s.grid.n)
    mag = np.sqrt(np.sum(values ** 2, axis=0))
    return float(np.sum(mag ** p)) * s.grid.dx ** 3


def lp_norm(s, p, values=None):
    return lp_norm_pow(s, p, values) ** (1.0 / p)


def max_speed(s: SpectralField, values=None) -> float:
    if values is None:
        values = bwd(s.coeffs, s.grid.n)
    return float(np.sqrt(np.max(np.sum(values ** 2, axis=0))))


# -- construction helpers -----------------------------------------------------

def resample(s: SpectralField, grid: Grid) -> SpectralField:
    """Copy ``s`` onto another grid of the same box, zero-padding or
    truncating; the result is dealiased on the target grid."""
    if grid.l != s.grid.l:
        raise ValueError("resampling needs the same box length")
    src, n_src, n = s.grid, s.grid.n, grid.n
    out = np.zeros(grid.spectral_shape, dtype=complex)
    keep = min(n_src, n) // 2 - 1  # skip Nyquist planes, which never survive dealiasing
    idx = np.r_[0:keep + 1, -keep:0]
    out[:, idx[:, None, None], idx[None, :, None], np.arange(keep + 1)[None, None, :]] = \
        s.coeffs[:, idx[:, None, None], idx[None, :, None], np.arange(keep + 1)[None, None, :]]
    return SpectralField(grid, out * grid.dealias_mask)


def random_field(grid: Grid, rng: np.random.Generator, kmax: float | None = None,
                 slope: float = 0.0, rms: float | None = None,
                 solenoidal: bool = True) -> SpectralField:
    """Random real field with Gaussian coefficients.

    Mode amplitudes scale as ``|m|^(-slope)``; modes with ``|m| > kmax``
    (in units of 2 pi / l) are dropped. The result is dealiased, has zero
    mean and, when ``solenoidal``, is projected onto divergence-free fields.
    """
    shape = grid.spectral_shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    mx, my, mz = grid.mode_indices
    mnorm = np.sqrt(mx ** 2 + my ** 2 + mz ** 2)
    amp = np.where(mnorm > 0, np.maximum(mnorm, 1.0) ** (-slope), 0.0)
    if kmax is not None:
        amp = np.where(mnorm <= kmax, amp, 0.0)
    c = c * amp * grid.dealias_mask
    # round trip through physical space enforces the Hermitian constraints
    c = fwd(bwd(c, grid.n)) * grid.dealias_mask
    if solenoidal:
        c = project_coeffs(grid, c)
    c[:, 0, 0, 0] = 0.0
    s = SpectralField(grid, c)
    if rms is not None:
        norm = np.sqrt(l2_norm_sq(s) / grid.volume)
        if norm > 0:
            s = s * (rms / norm)
    return s


def from_function(grid: Grid, func) -> SpectralField:
    """Sample ``func(x, y, z) -> (u1, u2, u3)`` on the collocation grid."""
    x, y, z = grid.coordinates
    vals = np.stack([np.broadcast_to(np.asarray(v, dtype=float), grid.shape)
                     for v in func(x, y, z)])
    return forward_transform(PhysicalField(grid, vals))


# -- binary snapshots ---------------------------------------------------------

SNAPSHOT_MAGIC = b"BFED"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIddd")


def save_snapshot(path, field: SpectralField, time: float = 0.0) -> None:
    """Write ``field`` as header + little-endian complex128 coefficients.

    Header layout (little-endian, 36 bytes): magic ``b"BFED"``, uint32
    version, uint32 n, float64 l, float64 dealias_fraction, float64 time.
    The payload is the coefficient array in C order with the layout
    documented at module level.
    """
    g = field.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, g.n, g.l,
                              g.dealias_fraction, float(time)))
        fh.write(np.ascontiguousarray(field.coeffs, dtype="<c16").tobytes())


def load_snapshot(path):
    data = Path(path).read_bytes()
    magic, version, n, l, frac, time = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a BFED snapshot")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    grid = Grid(l=l, n=n, dealias_fraction=frac)
    coeffs = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    if coeffs.size != int(np.prod(grid.spectral_shape)):
        raise ValueError(f"{path}: payload size does not match n={n}")
    return SpectralField(grid, coeffs.reshape(grid.spectral_shape).astype(complex)), time
