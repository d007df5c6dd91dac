"""Periodic-box grids, complex fields, spectral calculus and snapshot I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"NLSF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform periodic grid on [-L, L)^d with N samples per axis."""

    d: int
    L: float
    N: int
    x1d: np.ndarray = field(repr=False)
    k1d: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N ** self.d

    @property
    def cell(self) -> float:
        """Quadrature weight dx^d."""
        return self.dx ** self.d

    @property
    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis (indexing 'ij')."""
        return _axes(self.x1d, self.d)

    @property
    def wavenumbers(self) -> list[np.ndarray]:
        return _axes(self.k1d, self.d)

    @property
    def r2(self) -> np.ndarray:
        return sum(c * c for c in self.coords) * np.ones(self.shape)

    @property
    def k2(self) -> np.ndarray:
        return sum(k * k for k in self.wavenumbers) * np.ones(self.shape)

    def compatible(self, other: "Grid") -> bool:
        return self.d == other.d and self.N == other.N and self.L == other.L

    def zeros(self) -> "ComplexField":
        return ComplexField(self, np.zeros(self.shape, dtype=complex))


def _axes(v: np.ndarray, d: int) -> list[np.ndarray]:
    out = []
    for j in range(d):
        shape = [1] * d
        shape[j] = v.size
        out.append(v.reshape(shape))
    return out


def make_grid(d: int, L: float, N: int) -> Grid:
    """Build a periodic grid; wavenumbers are pi*j/L in FFT ordering."""
    if d not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {d}")
    if not L > 0:
        raise ValueError(f"half-width L must be positive, got {L}")
    if N < 64 or N & (N - 1):
        raise ValueError(f"N must be a power of two >= 64, got {N}")
    L = float(L)
    x = -L + np.arange(N) * (2.0 * L / N)
    k = 2.0 * np.pi * np.fft.fftfreq(N, d=2.0 * L / N)
    x.setflags(write=False)
    k.setflags(write=False)
    return Grid(d, L, N, x, k)


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex samples on a grid. Treated as immutable."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if vals.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} samples, got {vals.size}")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("field contains non-finite samples")
        object.__setattr__(self, "values", vals)

    def _other(self, other):
        if isinstance(other, ComplexField):
            if not self.grid.compatible(other.grid):
                raise ValueError("grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return ComplexField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ComplexField(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return ComplexField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ComplexField(self.grid, -self.values)

    def conj(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.conj())


def as_values(f) -> np.ndarray:
    return f.values if isinstance(f, ComplexField) else np.asarray(f)


# --- spectral calculus on raw arrays -------------------------------------

def gradient_array(grid: Grid, u: np.ndarray) -> list[np.ndarray]:
    uh = np.fft.fftn(u)
    out = []
    for kj in grid.wavenumbers:
        out.append(np.fft.ifftn(1j * kj * uh))
    return out


def laplacian_array(grid: Grid, u: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(-grid.k2 * np.fft.fftn(u))


def spectral_gradient(f: ComplexField) -> list[ComplexField]:
    """Fourier-collocation gradient, one field per axis."""
    return [ComplexField(f.grid, g) for g in gradient_array(f.grid, f.values)]


def spectral_laplacian(f: ComplexField) -> ComplexField:
    return ComplexField(f.grid, laplacian_array(f.grid, f.values))


def inner_product(f, g, grid: Grid | None = None) -> complex:
    """<f, g> = sum f conj(g) dx^d."""
    if isinstance(f, ComplexField) and isinstance(g, ComplexField):
        if not f.grid.compatible(g.grid):
            raise ValueError("grid mismatch in inner product")
        grid = f.grid
    elif grid is None:
        grid = f.grid if isinstance(f, ComplexField) else g.grid
    a = as_values(f).ravel()
    b = as_values(g).ravel()
    return complex(np.dot(a, b.conj()) * grid.cell)


@dataclass(frozen=True)
class NormRecord:
    L2: float
    H1: float
    Sigma: float
    _f: np.ndarray = field(repr=False)
    _cell: float = field(repr=False)

    def Lp(self, p: float) -> float:
        return float((np.sum(np.abs(self._f) ** p) * self._cell) ** (1.0 / p))


def l2_norm(grid: Grid, u: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(u) ** 2) * grid.cell))


def grad_l2_sq(grid: Grid, u: np.ndarray) -> float:
    # Parseval with the same discrete derivative as gradient_array
    uh = np.fft.fftn(u)
    return float(np.sum(grid.k2 * np.abs(uh) ** 2) * grid.cell / grid.size)


def norms(f: ComplexField) -> NormRecord:
    """L2, H1, Sigma norms and an Lp evaluator."""
    g = f.grid
    u = f.values
    l2sq = np.sum(np.abs(u) ** 2) * g.cell
    h1sq = l2sq + grad_l2_sq(g, u)
    sigsq = h1sq + np.sum(g.r2 * np.abs(u) ** 2) * g.cell
    return NormRecord(float(np.sqrt(l2sq)), float(np.sqrt(h1sq)), float(np.sqrt(sigsq)), u, g.cell)


def fourier_interpolate(grid: Grid, u: np.ndarray, points: list[np.ndarray]) -> np.ndarray:
    """Evaluate the trigonometric interpolant of u on a tensor product of 1D point sets.

    ``points`` holds one 1D coordinate array per axis; points outside the box
    wrap periodically.
    """
    out = np.fft.fftn(u) / grid.size
    k = grid.k1d
    nyq = grid.N // 2
    for axis, p in enumerate(points):
        p = np.asarray(p, dtype=float)
        phase = np.exp(1j * np.outer(p + grid.L, k))
        # split Nyquist mode symmetrically so real data interpolates to real values
        phase[:, nyq] = np.cos(k[nyq] * (p + grid.L))
        out = np.moveaxis(np.tensordot(phase, out, axes=([1], [axis])), 0, axis)
    return out


# --- binary snapshots ------------------------------------------------------

def write_snapshot(path, f: ComplexField, t: float) -> None:
    g = f.grid
    header = _HEADER.pack(MAGIC, SNAPSHOT_VERSION, g.d, g.N, g.L, float(t))
    body = np.empty(g.size * 2, dtype="<f8")
    flat = f.values.ravel()
    body[0::2] = flat.real
    body[1::2] = flat.imag
    Path(path).write_bytes(header + body.tobytes())


def read_snapshot(path) -> tuple[ComplexField, float]:
    raw = Path(path).read_bytes()
    magic, version, d, N, L, t = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    grid = make_grid(d, L, N)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * grid.size:
        raise ValueError(f"{path}: truncated snapshot")
    vals = body[0::2] + 1j * body[1::2]
    return ComplexField(grid, vals), t
