"""Energy, its variation under the perturbation, the generalized energy with
its error budget, the eta source term, power-law rate fits and mass
quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .decomposition import LocalizerSet, _dot_state, mod_from, parameter_derivatives
from .fields import ComplexField, Grid, gradient_array
from .groundstate import GroundStateTable, lambda_op
from .perturbation import PerturbationModel, assemble_coefficients
from .profiles import ModulationState, bubble

DEFAULT_A = 20.0


def nonlinearity(grid: Grid, v: np.ndarray) -> np.ndarray:
    """f(v) = |v|^(4/d) v."""
    return (np.abs(v) ** 2) ** (2.0 / grid.d) * v


def potential(grid: Grid, v: np.ndarray) -> np.ndarray:
    """F(v) = d/(2d+4) |v|^(2+4/d)."""
    d = grid.d
    return d / (2 * d + 4) * (np.abs(v) ** 2) ** (1 + 2.0 / d)


def _grad_sq(grid: Grid, v: np.ndarray) -> float:
    vh = np.fft.fftn(v)
    return float(np.sum(grid.k2 * np.abs(vh) ** 2)) * grid.cell / grid.size


# --- cut-off ---------------------------------------------------------------------

class CutoffChi:
    """chi(x) = psi(|x|) with psi'(r) = r on [0,1] and 2 - e^{-r} on [2, inf).

    On [1, 2] we write psi'(r) = r g(r) with g' = -q, q(s) = s^n (a + b(s-1)),
    s = r - 1. a and b match the second and third derivatives of psi at r = 2,
    and the real exponent n matches psi' there. q >= 0 keeps psi'/r
    non-increasing, which is the convexity condition; the joins are C^2.
    """

    def __init__(self, A: float = DEFAULT_A):
        if A < 10:
            raise ValueError("cut-off scale A must be at least 10")
        self.A = float(A)
        e2 = math.exp(-2.0)
        g2 = (2.0 - e2) / 2.0
        dg2 = (e2 - g2) / 2.0
        ddg2 = (-e2 - 2.0 * dg2) / 2.0
        a = -dg2

        def mismatch(n):
            b = -ddg2 - n * a
            return (a - b) / (n + 1) + b / (n + 2) - (1.0 - g2)

        n = brentq(mismatch, 2.5, 60.0)
        self._n, self._a, self._b = n, a, -ddg2 - n * a

    def _blend(self, r, order: int) -> np.ndarray:
        n, a, b = self._n, self._a, self._b
        s = np.clip(r - 1.0, 0.0, 1.0)
        q = s ** n * (a + b * (s - 1.0))
        G = (a - b) * s ** (n + 1) / (n + 1) + b * s ** (n + 2) / (n + 2)
        g = 1.0 - G
        if order == 0:
            # psi(1) + int_1^r rho g(rho) drho
            c1, c2 = (a - b) / (n + 1), b / (n + 2)
            integ = (c1 * s ** (n + 2) / (n + 2) + (c1 + c2) * s ** (n + 3) / (n + 3)
                     + c2 * s ** (n + 4) / (n + 4))
            return 0.5 + s + 0.5 * s * s - integ
        if order == 1:
            return r * g
        if order == 2:
            return g - r * q
        dq = n * s ** (n - 1) * (a + b * (s - 1.0)) + b * s ** n
        return -2.0 * q - r * dq

    def dpsi(self, r, order: int = 1) -> np.ndarray:
        """order-th derivative of psi (order 1, 2 or 3)."""
        r = np.asarray(r, dtype=float)
        inner = [r, np.ones_like(r), np.zeros_like(r)][order - 1]
        outer = (2.0 - np.exp(-r)) if order == 1 else (-1) ** order * np.exp(-r)
        return np.where(r <= 1.0, inner, np.where(r >= 2.0, outer, self._blend(r, order)))

    def psi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        psi2 = float(self._blend(np.array(2.0), 0))
        outer = psi2 + 2.0 * (r - 2.0) + np.exp(-r) - math.exp(-2.0)
        return np.where(r <= 1.0, 0.5 * r * r, np.where(r >= 2.0, outer, self._blend(r, 0)))

    def grad_chi_A(self, y: Sequence[np.ndarray]) -> list[np.ndarray]:
        """grad chi_A(y) = A psi'(|y|/A) y/|y| for chi_A(x) = A^2 chi(x/A)."""
        r = np.sqrt(sum(c * c for c in y))
        safe = np.where(r > 0, r, 1.0)
        fac = self.A * self.dpsi(r / self.A) / safe
        fac = np.where(r > 0, fac, 1.0)  # psi'(s)/s -> 1 at the origin
        return [fac * c for c in y]

    def check_invariants(self, r_max: float = 50.0, samples: int = 10_000) -> dict:
        r = np.linspace(1e-6, r_max, samples)
        d1, d2, d3 = self.dpsi(r, 1), self.dpsi(r, 2), self.dpsi(r, 3)
        convex = float(np.min(d1 / r - d2))
        mask = d2 > 1e-8
        ratio = float(np.max(np.abs(d3[mask] / d2[mask])))
        return {"convexity_min": convex, "ratio_bound": ratio, "passed": convex >= -1e-12}


# --- energy ------------------------------------------------------------------------

def energy(v: ComplexField) -> float:
    """E(v) = 1/2 int |grad v|^2 - d/(2d+4) int |v|^(2+4/d)."""
    g = v.grid
    return 0.5 * _grad_sq(g, v.values) - float(np.sum(potential(g, v.values))) * g.cell


def energy_variation_rhs(v: ComplexField, model: PerturbationModel, t: float) -> float:
    """dE/dt along the perturbed flow, from the Hessians, bi-Laplacians and
    Laplacians of the spatial functions."""
    if not model.active:
        return 0.0
    g = v.grid
    u = v.values
    h = model.h(t)
    if not np.any(h):
        return 0.0
    d = g.d
    grad = gradient_array(g, u)
    out = 0.0
    for hl, phi in zip(h, model.phis):
        hess = sum(phi.hessian[i][j] * grad[i] * np.conj(grad[j]) for i in range(d) for j in range(d))
        out += -2.0 * hl * float(np.sum(hess).real) * g.cell
        out += 0.5 * hl * float(np.sum(phi.bilap * np.abs(u) ** 2)) * g.cell
        out += 2.0 / (d + 2) * hl * float(np.sum(phi.lap * (np.abs(u) ** 2) ** (1 + 2.0 / d))) * g.cell
    b = model.drift(t)
    for bj in b:
        gb = gradient_array(g, bj * bj)
        out -= float(np.sum(sum(gi.real * gv for gi, gv in zip(gb, grad)) * np.conj(u)).imag) * g.cell
    return out


def energy_variation_direct(v: ComplexField, model: PerturbationModel, t: float) -> float:
    """-Im int (lap v + f(v)) conj(a1.grad v + a0 v): the same rate written
    directly from the equation."""
    g = v.grid
    u = v.values
    c = assemble_coefficients(model, t)
    P = sum(a * gr for a, gr in zip(c.a1, gradient_array(g, u))) + c.a0 * u
    lap = np.fft.ifftn(-g.k2 * np.fft.fftn(u))
    return -float(np.sum((lap + nonlinearity(g, u)) * np.conj(P)).imag) * g.cell


# --- generalized energy ----------------------------------------------------------

def generalized_energy(R: np.ndarray, params: ModulationState, z: np.ndarray, v: np.ndarray,
                       loc: LocalizerSet, chi: CutoffChi, gs: GroundStateTable,
                       U: np.ndarray | None = None) -> dict:
    """The remainder energy I = I1 + I2 (quadratic part and Morawetz part)."""
    g = loc.grid
    if U is None:
        U = sum(bubble(g, gs.Q, params.lam[k], params.alpha[k], params.beta[k],
                       params.gamma[k], params.theta[k]) for k in range(params.K))
    W = U + z
    gradR = gradient_array(g, R)
    R2 = np.abs(R) ** 2
    I1 = 0.5 * sum(float(np.sum(np.abs(gr) ** 2)) for gr in gradR) * g.cell
    I1 += 0.5 * sum(float(np.sum(R2 * phi)) / params.lam[k] ** 2
                    for k, phi in enumerate(loc.fields)) * g.cell
    I1 -= float(np.sum(potential(g, v) - potential(g, W) - nonlinearity(g, W) * np.conj(R)).real) * g.cell
    I2 = 0.0
    for k, phi in enumerate(loc.fields):
        y = [(x - a) / params.lam[k] for x, a in zip(g.coords, params.alpha[k])]
        y = [c * np.ones(g.shape) for c in y]
        dchi = chi.grad_chi_A(y)
        dot = sum(c * gr for c, gr in zip(dchi, gradR))
        I2 += params.gamma[k] / (2 * params.lam[k]) * float(np.sum(dot * np.conj(R) * phi).imag) * g.cell
    return {"I": I1 + I2, "I1": I1, "I2": I2}


@dataclass(frozen=True)
class BudgetConstants:
    """Constants of the monotonicity and lower-bound budgets; the theory only
    asserts their existence, so they are pinned and recorded."""

    C: float = 1.0
    C2: float = 1.0
    delta: float = 1.0
    eps: float = 0.125
    alpha_star: float = 0.0
    m: int = 4
    upsilon: int = 5


def error_budget(row, lam_dot: np.ndarray, mod: float, T: float, d: int, A: float,
                 c: BudgetConstants) -> float:
    """The monotonicity error term E_r evaluated from one decomposition row."""
    tau = T - row.t
    p = row.params
    M = np.asarray(row.M, dtype=float)
    D = row.D
    term = float(np.sum(np.abs(p.lam * lam_dot + p.gamma) / p.lam ** 4 * np.abs(M)))
    term += (mod / tau ** 3 + c.alpha_star * tau ** (c.m - 3 + d / 2) + tau ** (c.upsilon - 3)) * D
    term += D ** 2 / tau ** 2 + c.eps * D ** 2 / tau ** 3 + float(np.sum(M ** 2)) / tau ** 3
    term += math.exp(-c.delta / tau)
    return term


def lower_bound_budget(row, T: float, c: BudgetConstants) -> float:
    """C (sum_k M_k^2 / (T-t)^2 + exp(-delta/(T-t)))."""
    tau = T - row.t
    return c.C * (float(np.sum(np.asarray(row.M) ** 2)) / tau ** 2 + math.exp(-c.delta / tau))


# --- the eta source -----------------------------------------------------------------

def bubble_time_derivative(grid: Grid, Uk: np.ndarray, params: ModulationState,
                           dots: ModulationState, k: int) -> np.ndarray:
    """dU_k/dt = -(lam'/lam) Lambda U_k - alpha'.grad U_k + i(beta'.y - gamma'|y|^2/4 + theta') U_k."""
    lam, alpha = params.lam[k], params.alpha[k]
    y = [(x - a) / lam for x, a in zip(grid.coords, alpha)]
    y2 = sum(c * c for c in y)
    grad = gradient_array(grid, Uk)
    out = -(dots.lam[k] / lam) * lambda_op(grid, Uk, alpha)
    out = out - sum(a * gr for a, gr in zip(dots.alpha[k], grad))
    phase = sum(b * c for b, c in zip(dots.beta[k], y)) - 0.25 * dots.gamma[k] * y2 + dots.theta[k]
    return out + 1j * phase * Uk


def eta_residual(params: ModulationState, dots: ModulationState, model: PerturbationModel | None,
                 gs: GroundStateTable, z: np.ndarray | None, t: float, grid: Grid,
                 return_fields: bool = False) -> dict:
    """eta = i dU/dt + lap U + a1.grad U + a0 U + f(U+z) - f(z) and its split
    into the bubble, cross (with z), interaction and perturbation parts."""
    zz = np.zeros(grid.shape, dtype=complex) if z is None else z
    Uk = [bubble(grid, gs.Q, params.lam[k], params.alpha[k], params.beta[k], params.gamma[k],
                 params.theta[k]) for k in range(params.K)]
    U = sum(Uk)
    eta1 = np.zeros(grid.shape, dtype=complex)
    for k, u in enumerate(Uk):
        lap = np.fft.ifftn(-grid.k2 * np.fft.fftn(u))
        eta1 += 1j * bubble_time_derivative(grid, u, params, dots, k) + lap + nonlinearity(grid, u)
    fU = nonlinearity(grid, U)
    eta2 = nonlinearity(grid, U + zz) - fU - nonlinearity(grid, zz)
    eta3 = fU - sum(nonlinearity(grid, u) for u in Uk)
    if model is not None and model.active:
        c = assemble_coefficients(model, t)
        eta4 = sum(a * gr for a, gr in zip(c.a1, gradient_array(grid, U))) + c.a0 * U
    else:
        eta4 = np.zeros(grid.shape, dtype=complex)
    norm = lambda a: math.sqrt(float(np.sum(np.abs(a) ** 2)) * grid.cell)  # noqa: E731
    total = eta1 + eta2 + eta3 + eta4
    out = {"eta": norm(total), "eta1": norm(eta1), "eta2": norm(eta2), "eta3": norm(eta3),
           "eta4": norm(eta4)}
    if return_fields:
        out["fields"] = {"eta": total, "eta1": eta1, "eta2": eta2, "eta3": eta3, "eta4": eta4}
    return out


# --- fits and masses ------------------------------------------------------------------

def rate_fit(times, y, T: float) -> dict:
    """Least-squares slope of log y against log(T - t)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 4:
        raise ValueError("rate fit needs at least four points")
    if np.any(y <= 0):
        raise ValueError("rate fit needs positive values")
    if np.any(t >= T):
        raise ValueError("all times must precede T")
    X, Y = np.log(T - t), np.log(y)
    slope, intercept = np.polyfit(X, Y, 1)
    resid = Y - (slope * X + intercept)
    ss = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def mass_quantization(v: ComplexField, singularities, radius: float) -> dict:
    """|v|^2 integrated over each ball B(x_k, r) and over the complement."""
    g = v.grid
    pts = np.asarray(singularities, dtype=float).reshape(-1, g.d)
    for i in range(len(pts)):
        if np.any(np.abs(pts[i]) + radius > g.L):
            raise ValueError("ball leaves the box")
        for j in range(i + 1, len(pts)):
            if np.linalg.norm(pts[i] - pts[j]) < 2 * radius:
                raise ValueError("balls overlap")
    dens = np.abs(v.values) ** 2
    total = float(np.sum(dens)) * g.cell
    balls = []
    for xk in pts:
        inside = sum((x - c) ** 2 for x, c in zip(g.coords, xk)) <= radius ** 2
        balls.append(float(np.sum(dens * inside)) * g.cell)
    return {"balls": np.array(balls), "exterior": total - sum(balls), "total": total}


# --- construction-run diagnostics -------------------------------------------------------

def diagnose_rows(rows, fields, z_fields, model, gs: GroundStateTable, loc: LocalizerSet,
                  T: float, chi: CutoffChi, consts: BudgetConstants) -> list[dict]:
    """Per-row E, I, eta split and the two budget checks on a fitted series.

    rows may come in either time order; derivatives use the time-sorted series."""
    order = np.argsort([r.t for r in rows])
    srt = [rows[i] for i in order]
    K, d = srt[0].params.K, srt[0].params.d
    dots = parameter_derivatives([r.t for r in srt], [r.params.to_vector() for r in srt], K, d)
    out = [None] * len(rows)
    for j, i in enumerate(order):
        r = rows[i]
        dot = _dot_state(dots[j], K, d)
        v, z = fields[i].values, z_fields[i].values
        R = v - z - sum(bubble(loc.grid, gs.Q, r.params.lam[k], r.params.alpha[k], r.params.beta[k],
                               r.params.gamma[k], r.params.theta[k]) for k in range(K))
        ge = generalized_energy(R, r.params, z, v, loc, chi, gs)
        eta = eta_residual(r.params, dot, model, gs, z, r.t, loc.grid)
        mod = float(np.max(mod_from(r.params, dot)))
        budget = error_budget(r, dot.lam, mod, T, d, chi.A, consts)
        tau = T - r.t
        lower = 0.01 * r.D ** 2 / tau ** 2 - lower_bound_budget(r, T, consts)
        out[i] = {"t": r.t, "E": energy(fields[i]), "I": ge["I"], "I1": ge["I1"], "I2": ge["I2"],
                  "eta": eta["eta"], "eta1": eta["eta1"], "eta2": eta["eta2"], "eta3": eta["eta3"],
                  "eta4": eta["eta4"], "Er": budget, "I_lower": lower,
                  "lower_ok": bool(ge["I"] >= lower), "converged": bool(r.converged)}
    # forward-in-time increments against the integrated budget
    for a, b in zip(order[:-1], order[1:]):
        ra, rb = out[a], out[b]
        allowed = consts.C2 * chi.A * 0.5 * (ra["Er"] + rb["Er"]) * (rb["t"] - ra["t"])
        rb["dI"] = rb["I"] - ra["I"]
        rb["dI_allowed"] = -allowed
        rb["mono_ok"] = bool(rb["dI"] >= -allowed)
    first = out[order[0]]
    first.update(dI=0.0, dI_allowed=0.0, mono_ok=True)
    return out
