"""Explicit solutions: pseudo-conformal bubbles, solitary waves, modulated
profiles, and the pseudo-conformal transform pair."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import ComplexField, Grid, fourier_interpolate, gradient_array
from .groundstate import GroundStateTable, lambda_op

SAFE_MARGIN = 3.0


class ResolutionError(ValueError):
    """A profile scale fell below eight grid spacings."""


@dataclass(frozen=True)
class BubbleSpec:
    w: float
    x: np.ndarray
    theta: float = 0.0
    c: np.ndarray | None = None  # soliton velocity; defaults to x

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError("bubble frequency w must be positive")
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        c = self.x if self.c is None else np.atleast_1d(np.asarray(self.c, dtype=float))
        object.__setattr__(self, "c", c)


def check_separation(specs: Sequence[BubbleSpec], floor: float = 0.0) -> None:
    for i, a in enumerate(specs):
        for b in specs[i + 1:]:
            gap = float(np.linalg.norm(a.x - b.x))
            if gap == 0.0 or gap < floor:
                raise ValueError(f"singularities {a.x} and {b.x} closer than {floor}")


@dataclass
class ModulationState:
    """Per-bubble (lambda, alpha, beta, gamma, theta) at time t."""

    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        K = self.lam.size
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(K, -1)
        self.beta = np.asarray(self.beta, dtype=float).reshape(K, -1)
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if np.any(self.lam <= 0):
            raise ValueError("lambda must be positive")

    @property
    def K(self) -> int:
        return self.lam.size

    @property
    def d(self) -> int:
        return self.alpha.shape[1]

    def to_vector(self) -> np.ndarray:
        """Flatten as [lam, alpha(d), beta(d), gamma, theta] per bubble."""
        rows = [np.concatenate([[self.lam[k]], self.alpha[k], self.beta[k],
                                [self.gamma[k], self.theta[k]]]) for k in range(self.K)]
        return np.concatenate(rows)

    @classmethod
    def from_vector(cls, v: np.ndarray, K: int, d: int, t: float = 0.0) -> "ModulationState":
        v = np.asarray(v, dtype=float).reshape(K, 2 * d + 3)
        return cls(v[:, 0], v[:, 1:1 + d], v[:, 1 + d:1 + 2 * d], v[:, 1 + 2 * d], v[:, 2 + 2 * d], t)

    def copy(self, t: float | None = None) -> "ModulationState":
        return ModulationState(self.lam.copy(), self.alpha.copy(), self.beta.copy(),
                               self.gamma.copy(), self.theta.copy(), self.t if t is None else t)


def boundary_parameters(specs: Sequence[BubbleSpec], T: float, t: float) -> ModulationState:
    """Parameters of the exact pseudo-conformal bubbles at time t."""
    tau = T - t
    lam = np.array([s.w * tau for s in specs])
    alpha = np.array([s.x for s in specs])
    beta = np.zeros_like(alpha)
    gamma = np.array([s.w ** 2 * tau for s in specs])
    theta = np.array([1.0 / (s.w ** 2 * tau) + s.theta for s in specs])
    return ModulationState(lam, alpha, beta, gamma, theta, t)


def _require_resolved(lam: float, grid: Grid) -> None:
    if lam < 8 * grid.dx:
        raise ResolutionError(f"scale {lam:.4g} below 8*dx = {8 * grid.dx:.4g}")


def _offset(grid: Grid, center) -> list[np.ndarray]:
    return [x - c for x, c in zip(grid.coords, np.atleast_1d(center))]


def bubble(grid: Grid, radial: Callable, lam: float, alpha, beta, gamma: float,
           theta: float) -> np.ndarray:
    """lam^(-d/2) f(y) exp(i(beta.y - gamma|y|^2/4 + theta)), y = (x-alpha)/lam."""
    y = [o / lam for o in _offset(grid, alpha)]
    y2 = sum(c * c for c in y) * np.ones(grid.shape)
    by = sum(b * c for b, c in zip(np.atleast_1d(beta), y))
    amp = lam ** (-grid.d / 2) * radial(np.sqrt(y2))
    return amp * np.exp(1j * (by - 0.25 * gamma * y2 + theta))


def eval_pseudoconformal(specs: Sequence[BubbleSpec], gs: GroundStateTable, grid: Grid,
                         T: float, t: float) -> ComplexField:
    """Sum of pseudo-conformal blow-up bubbles at time t < T."""
    if not t < T:
        raise ValueError("pseudo-conformal profile needs t < T")
    tau = T - t
    out = np.zeros(grid.shape, dtype=complex)
    for s in specs:
        lam = s.w * tau
        _require_resolved(lam, grid)
        off = _offset(grid, s.x)
        r2 = sum(o * o for o in off)
        out += (lam ** (-grid.d / 2) * gs.Q(np.sqrt(r2) / lam)
                * np.exp(-0.25j * r2 / tau + 1j / (s.w ** 2 * tau) + 1j * s.theta))
    return ComplexField(grid, out)


def eval_soliton(specs: Sequence[BubbleSpec], gs: GroundStateTable, grid: Grid,
                 t: float) -> ComplexField:
    """Sum of travelling solitary waves at time t."""
    out = np.zeros(grid.shape, dtype=complex)
    for s in specs:
        center = s.c * t
        if np.any(np.abs(center) > grid.L - SAFE_MARGIN):
            raise ValueError(f"soliton center {center} leaves the safe region of the box")
        _require_resolved(s.w, grid)
        off = _offset(grid, center)
        r = np.sqrt(sum(o * o for o in off))
        cx = sum(cj * x for cj, x in zip(s.c, grid.coords))
        phase = 0.5 * cx - 0.25 * float(s.c @ s.c) * t + t / s.w ** 2 + s.theta
        out += s.w ** (-grid.d / 2) * gs.Q(r / s.w) * np.exp(1j * phase)
    return ComplexField(grid, out)


@dataclass
class ModulatedProfiles:
    U: np.ndarray
    Uk: list = field(default_factory=list)
    LambdaUk: list = field(default_factory=list)
    rhok: list = field(default_factory=list)


def modulated_arrays(params: ModulationState, gs: GroundStateTable, grid: Grid,
                     with_extras: bool = True) -> ModulatedProfiles:
    out = ModulatedProfiles(np.zeros(grid.shape, dtype=complex))
    for k in range(params.K):
        lam = params.lam[k]
        _require_resolved(lam, grid)
        args = (lam, params.alpha[k], params.beta[k], params.gamma[k], params.theta[k])
        uk = bubble(grid, gs.Q, *args)
        out.U += uk
        out.Uk.append(uk)
        if with_extras:
            out.LambdaUk.append(lambda_op(grid, uk, params.alpha[k]))
            out.rhok.append(bubble(grid, gs.rho, *args))
    return out


def eval_modulated(params: ModulationState, gs: GroundStateTable, grid: Grid) -> dict:
    """U_k, Lambda_k U_k, varrho_k per bubble and their sum U, as ComplexFields."""
    m = modulated_arrays(params, gs, grid)
    wrap = lambda a: ComplexField(grid, a)  # noqa: E731
    return {
        "U": wrap(m.U),
        "Uk": [wrap(a) for a in m.Uk],
        "LambdaUk": [wrap(a) for a in m.LambdaUk],
        "rhok": [wrap(a) for a in m.rhok],
    }


# --- pseudo-conformal transform pair ------------------------------------------

class TrajectorySampler:
    """Linear-in-time interpolation between stored snapshots."""

    def __init__(self, times: Sequence[float], fields: Sequence[ComplexField]):
        order = np.argsort(times)
        self.times = np.asarray(times, dtype=float)[order]
        self.fields = [fields[i] for i in order]
        self.grid = self.fields[0].grid

    def __call__(self, s: float) -> ComplexField:
        ts = self.times
        if s < ts[0] - 1e-12 or s > ts[-1] + 1e-12:
            raise ValueError(f"time {s} outside stored trajectory [{ts[0]}, {ts[-1]}]")
        i = int(np.searchsorted(ts, s))
        if i < len(ts) and abs(ts[i] - s) <= 1e-12:
            return self.fields[i]
        if i > 0 and abs(ts[i - 1] - s) <= 1e-12:
            return self.fields[i - 1]
        i = min(max(i, 1), len(ts) - 1)
        a = (s - ts[i - 1]) / (ts[i] - ts[i - 1])
        return ComplexField(self.grid, (1 - a) * self.fields[i - 1].values + a * self.fields[i].values)


def overlap_mask(grid: Grid, scale: float, margin: float = 0.0) -> np.ndarray:
    """Points whose image x/scale stays inside the box."""
    lim = grid.L - margin
    inside = np.ones(grid.shape, dtype=bool)
    for x in grid.coords:
        inside &= np.abs(x / scale) <= lim
    return inside


def _rescaled(sampler: Callable, grid: Grid, s: float, scale: float) -> np.ndarray:
    inner = sampler(s)
    pts = [grid.x1d / scale] * grid.d
    vals = fourier_interpolate(inner.grid, inner.values, pts)
    vals[~overlap_mask(grid, scale)] = 0.0
    return vals


def pseudoconformal_transform(sampler: Callable, grid: Grid, T: float, t: float) -> ComplexField:
    """C_T(u)(t,x) = (T-t)^(-d/2) u(1/(T-t), x/(T-t)) exp(-i|x|^2/(4(T-t))).

    Points whose inner argument leaves the box are set to zero.
    """
    if t == T:
        raise ValueError("transform undefined at t = T")
    tau = T - t
    vals = _rescaled(sampler, grid, 1.0 / tau, tau)
    return ComplexField(grid, tau ** (-grid.d / 2) * vals * np.exp(-0.25j * grid.r2 / tau))


def inverse_transform(sampler: Callable, grid: Grid, T: float, t: float) -> ComplexField:
    """C_T^{-1}(z)(t,x) = t^(-d/2) z(T - 1/t, x/t) exp(i|x|^2/(4t))."""
    if t == 0:
        raise ValueError("inverse transform undefined at t = 0")
    vals = _rescaled(sampler, grid, T - 1.0 / t, t)
    return ComplexField(grid, t ** (-grid.d / 2) * vals * np.exp(0.25j * grid.r2 / t))


def gradient_norm(grid: Grid, u: np.ndarray) -> float:
    return float(np.sqrt(sum(np.sum(np.abs(g) ** 2) for g in gradient_array(grid, u)) * grid.cell))
