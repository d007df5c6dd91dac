"""Lower-order coefficients a1, a0 built from spatial functions phi_l and
real paths h_l; flat builders, Brownian ensembles and the Doss-Sussman phase."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .fields import ComplexField, Grid

BOUNDARY_CLEARANCE = 3.0


# --- spatial functions ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpatialFunction:
    """Smooth function with an analytic evaluator and cached spectral derivatives."""

    grid: Grid
    func: Callable = field(repr=False)
    is_complex: bool = False

    def __call__(self, *x):
        return self.func(*x)

    @cached_property
    def values(self) -> np.ndarray:
        coords = [c * np.ones(self.grid.shape) for c in self.grid.coords]
        v = np.asarray(self.func(*coords))
        return v if self.is_complex else v.real

    @cached_property
    def _hat(self) -> np.ndarray:
        return np.fft.fftn(self.values)

    def _spectral(self, mult: np.ndarray) -> np.ndarray:
        out = np.fft.ifftn(mult * self._hat)
        return out if self.is_complex else out.real

    @cached_property
    def grad(self) -> list[np.ndarray]:
        return [self._spectral(1j * k) for k in self.grid.wavenumbers]

    @cached_property
    def hessian(self) -> list[list[np.ndarray]]:
        ks = self.grid.wavenumbers
        return [[self._spectral(-ki * kj) for kj in ks] for ki in ks]

    @cached_property
    def lap(self) -> np.ndarray:
        return self._spectral(-self.grid.k2)

    @cached_property
    def bilap(self) -> np.ndarray:
        return self._spectral(self.grid.k2 ** 2)

    def field(self) -> ComplexField:
        return ComplexField(self.grid, self.values)


def _check_clearance(grid: Grid, points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.d:
        pts = pts.reshape(-1, grid.d)
    if np.any(np.abs(pts) > grid.L - BOUNDARY_CLEARANCE):
        raise ValueError(f"singularity closer than {BOUNDARY_CLEARANCE} to the box boundary")
    return pts


def _flat_factory(points: np.ndarray, order: int, width: float, amplitude: complex):
    p = math.ceil((order + 1) / 2)

    def f(*x):
        env = np.exp(-sum(c * c for c in x) / (2 * width * width))
        out = amplitude * env
        for xk in points:
            s = sum((c - a) ** 2 for c, a in zip(x, xk))
            sp = s ** p
            out = out * (sp / (1.0 + sp))
        return out

    return f


def build_flat_spatial(grid: Grid, singularities, order: int, width: float = 1.25,
                       amplitude: float = 0.1) -> SpatialFunction:
    """amplitude * gaussian(width) * prod_k m(|x-x_k|^2), m(s) = s^p/(1+s^p),
    p = ceil((order+1)/2); vanishes to order >= order+1 at every x_k."""
    if order < 5:
        raise ValueError("flatness order must be at least 5")
    pts = _check_clearance(grid, singularities)
    return SpatialFunction(grid, _flat_factory(pts, order, width, float(amplitude)))


def build_residue(grid: Grid, singularities, m: int, alpha_star: float,
                  width: float = 1.25) -> SpatialFunction:
    """Final residue z*: flat to order 2m at every x_k, complex amplitude
    alpha*(1+i)/sqrt(2), rescaled so ||z*||_{H^{2m+2+d}} and ||<x> z*||_{H^1}
    are at most alpha*."""
    pts = _check_clearance(grid, singularities)
    amp = alpha_star * (1 + 1j) / math.sqrt(2)
    raw = SpatialFunction(grid, _flat_factory(pts, 2 * m, width, amp), is_complex=True)
    if alpha_star == 0:
        return raw
    s = 2 * m + 2 + grid.d
    hi = sobolev_norm(grid, raw.values, s)
    weighted = sobolev_norm(grid, np.sqrt(1 + grid.r2) * raw.values, 1)
    scale = alpha_star / max(hi, weighted)
    return SpatialFunction(grid, _flat_factory(pts, 2 * m, width, amp * scale), is_complex=True)


def sobolev_norm(grid: Grid, u: np.ndarray, s: float, floor: float = 1e-14) -> float:
    """H^s norm with weight (1+|k|^2)^s. Fourier coefficients below floor*max
    are round-off and are dropped, otherwise the weight amplifies them."""
    uh = np.abs(np.fft.fftn(u))
    if uh.max() == 0:
        return 0.0
    keep = uh >= floor * uh.max()
    return float(np.sqrt(np.sum(((1 + grid.k2) ** s * uh ** 2)[keep]) * grid.cell / grid.size))


def fd_weights(order: int, half: int) -> np.ndarray:
    """Central finite-difference weights on offsets -half..half (unit spacing)."""
    offs = np.arange(-half, half + 1, dtype=float)
    V = np.vander(offs, increasing=True).T
    rhs = np.zeros(offs.size)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


def verify_flatness(f: Callable, points, order: int, h: float = 0.02) -> float:
    """Largest |d^u f(x_k)| over multi-indices |u| <= order, by high-order
    central differences."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = pts.shape[1]
    half = order // 2 + 5
    offs = np.arange(-half, half + 1) * h
    worst = 0.0
    for xk in pts:
        axes = [xk[j] + offs for j in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        vals = np.asarray(f(*mesh))
        for idx in itertools.product(range(order + 1), repeat=d):
            if sum(idx) > order:
                continue
            v = vals
            for j, n in enumerate(idx):
                w = fd_weights(n, half) / h ** n
                v = np.tensordot(w, v, axes=([0], [0]))
            worst = max(worst, float(np.abs(v)))
    return worst


# --- temporal paths ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Paths:
    """Piecewise-linear real paths h_l on a time grid; values shape (N_noise, n_times)."""

    times: np.ndarray
    values: np.ndarray
    seed: int | str = "deterministic"

    @property
    def count(self) -> int:
        return self.values.shape[0]

    def covers(self, t: float) -> bool:
        return self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12

    def __call__(self, t: float) -> np.ndarray:
        if self.count == 0:
            return np.zeros(0)
        if not self.covers(t):
            raise ValueError(f"time {t} outside path domain [{self.times[0]}, {self.times[-1]}]")
        return np.array([np.interp(t, self.times, v) for v in self.values])


def sample_brownian(n_noise: int, times, seed: int) -> Paths:
    """Independent standard Brownian paths pinned to 0 at times[0]."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    rng = np.random.default_rng(seed)
    dW = rng.standard_normal((n_noise, times.size - 1)) * np.sqrt(np.diff(times))
    vals = np.zeros((n_noise, times.size))
    vals[:, 1:] = np.cumsum(dW, axis=1)
    return Paths(times, vals, seed)


def constant_paths(levels: Sequence[float], t0: float, t1: float) -> Paths:
    levels = np.asarray(levels, dtype=float)
    return Paths(np.array([t0, t1]), np.repeat(levels[:, None], 2, axis=1))


def write_paths_csv(path, paths: Paths) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"h_{l + 1}" for l in range(paths.count)])
        for i, t in enumerate(paths.times):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in paths.values[:, i]])


def read_paths_csv(path, seed: int | str = "deterministic") -> Paths:
    rows = list(csv.reader(open(path)))
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    return Paths(data[:, 0].copy(), data[:, 1:].T.copy(), seed)


# --- the model --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PerturbationModel:
    grid: Grid
    phis: tuple = ()
    paths: Paths | None = None
    upsilon: int = 0
    seed: int | str = "deterministic"

    def __post_init__(self):
        n = self.paths.count if self.paths is not None else 0
        if n != len(self.phis):
            raise ValueError(f"{len(self.phis)} spatial functions but {n} paths")

    @property
    def n_noise(self) -> int:
        return len(self.phis)

    @property
    def active(self) -> bool:
        return self.n_noise > 0

    def h(self, t: float) -> np.ndarray:
        return self.paths(t) if self.active else np.zeros(0)

    def drift(self, t: float) -> list[np.ndarray]:
        """b_j = sum_l d_j phi_l h_l(t), so that a1 = 2i b."""
        h = self.h(t)
        return [sum(hl * p.grad[j] for hl, p in zip(h, self.phis)) for j in range(self.grid.d)]

    def phase(self, t: float) -> np.ndarray:
        h = self.h(t)
        return sum((hl * p.values for hl, p in zip(h, self.phis)), np.zeros(self.grid.shape))


def free_model(grid: Grid) -> PerturbationModel:
    return PerturbationModel(grid)


@dataclass(frozen=True, eq=False)
class CoefficientSlice:
    a1: list
    a0: np.ndarray
    t: float


def assemble_coefficients(model: PerturbationModel, t: float) -> CoefficientSlice:
    """a1 = 2i sum grad(phi_l) h_l ; a0 = -sum_j (sum_l d_j phi_l h_l)^2 + i sum lap(phi_l) h_l."""
    g = model.grid
    if not model.active:
        z = np.zeros(g.shape, dtype=complex)
        return CoefficientSlice([z] * g.d, z, t)
    h = model.h(t)
    b = model.drift(t)
    a1 = [2j * bj for bj in b]
    lap = sum(hl * p.lap for hl, p in zip(h, model.phis))
    a0 = -sum(bj * bj for bj in b) + 1j * lap
    return CoefficientSlice(a1, a0, t)


def doss_sussman(v: ComplexField, model: PerturbationModel, t: float,
                 direction: str = "forward") -> ComplexField:
    """forward: X = exp(i sum phi_l h_l(t)) v ; inverse: the conjugate phase."""
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    if not model.active:
        return v
    sign = 1.0 if direction == "forward" else -1.0
    return ComplexField(v.grid, np.exp(sign * 1j * model.phase(t)) * v.values)
