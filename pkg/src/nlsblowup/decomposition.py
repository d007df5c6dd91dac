"""Geometric decomposition v = U + z + R: localizers, the Newton fit of the
modulation parameters, the modulation vector, localized masses and Scal."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import ComplexField, Grid, fourier_interpolate, make_grid
from .groundstate import GroundStateTable, null_space_fields
from .profiles import ModulationState, bubble

FIT_TOLERANCE = 1e-9
MAX_ITERATIONS = 25
FD_STEP = 1e-6


class FitError(RuntimeError):
    """Singular Jacobian or unusable data in the parameter fit."""


# --- localizers ---------------------------------------------------------------

def ramp(s) -> np.ndarray:
    """C^2 monotone step: 0 for s <= 0, 1 for s >= 1, quintic smoothstep between."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True, eq=False)
class LocalizerSet:
    grid: Grid
    centers: np.ndarray
    direction: np.ndarray
    sigma: float
    fields: tuple
    grad_bound: float

    @property
    def K(self) -> int:
        return len(self.fields)


def _profile_step(grid: Grid, center, direction, sigma: float) -> np.ndarray:
    """1 for (x-c).v <= 4 sigma, 0 for (x-c).v >= 8 sigma."""
    s = sum(vj * (x - cj) for vj, x, cj in zip(direction, grid.coords, center)) * np.ones(grid.shape)
    return 1.0 - ramp((s - 4.0 * sigma) / (4.0 * sigma))


def build_localizers(singularities, grid: Grid, seed: int = 0) -> LocalizerSet:
    """Partition of unity Phi_k ordered along a direction separating all x_k."""
    pts = np.asarray(singularities, dtype=float).reshape(-1, grid.d)
    K = pts.shape[0]
    if K == 0:
        raise ValueError("need at least one singularity")
    if K == 1:
        ones = np.ones(grid.shape)
        return LocalizerSet(grid, pts, np.eye(grid.d)[0], math.inf, (ones,), 0.0)
    for i in range(K):
        for j in range(i + 1, K):
            if np.allclose(pts[i], pts[j]):
                raise ValueError("singularities must be pairwise distinct")
    rng = np.random.default_rng(seed)
    direction = np.eye(grid.d)[0]
    for attempt in range(101):
        proj = pts @ direction
        gaps = np.diff(np.sort(proj))
        if gaps.min() > 1e-8 * max(1.0, np.abs(proj).max()):
            break
        if attempt == 100:
            raise ValueError("no separating direction found after 100 retries")
        direction = rng.standard_normal(grid.d)
        direction /= np.linalg.norm(direction)
    order = np.argsort(pts @ direction)
    sigma = float(gaps.min()) / 12.0
    steps = [_profile_step(grid, pts[order[j]], direction, sigma) for j in range(K - 1)]
    ordered = [steps[0]]
    ordered += [steps[j] - steps[j - 1] for j in range(1, K - 1)]
    ordered.append(1.0 - steps[-1])
    fields = [None] * K
    for j, k in enumerate(order):
        fields[k] = ordered[j]
    grad = max(float(np.abs(np.gradient(f, grid.dx, axis=a)).max())
               for f in fields for a in range(grid.d))
    return LocalizerSet(grid, pts, direction, sigma, tuple(fields), grad * sigma)


# --- orthogonality system ----------------------------------------------------

@dataclass
class _Bubble:
    U: np.ndarray
    tests: list
    norms: np.ndarray


def _bubble_pieces(grid: Grid, gs: GroundStateTable, lam, alpha, beta, gamma, theta) -> _Bubble:
    args = (lam, alpha, beta, gamma, theta)
    U = bubble(grid, gs.Q, *args)
    rho = bubble(grid, gs.rho, *args)
    off = [x - a for x, a in zip(grid.coords, alpha)]
    r2 = sum(o * o for o in off)
    Uh = np.fft.fftn(U)
    grad = [np.fft.ifftn(1j * k * Uh) for k in grid.wavenumbers]
    LamU = 0.5 * grid.d * U + sum(o * g for o, g in zip(off, grad))
    # real-part pairings first, then imaginary-part pairings
    tests = [o * U for o in off] + [r2 * U] + grad + [LamU, rho]
    norms = np.array([math.sqrt(float(np.sum(np.abs(f) ** 2)) * grid.cell) for f in tests])
    return _Bubble(U, tests, np.where(norms > 0, norms, 1.0))


def _residual_block(grid: Grid, b: _Bubble, R: np.ndarray) -> np.ndarray:
    d = grid.d
    Rc = np.conj(R)
    vals = np.array([np.sum(f * Rc) * grid.cell for f in b.tests])
    out = np.concatenate([vals[:d + 1].real, vals[d + 1:].imag])
    return out / b.norms


class OrthogonalitySystem:
    """Residual map p -> scaled orthogonality conditions for R = v - U(p) - z."""

    def __init__(self, v: np.ndarray, z: np.ndarray, gs: GroundStateTable, grid: Grid, K: int):
        self.target = v - z
        self.gs = gs
        self.grid = grid
        self.K = K
        self.d = grid.d
        self.width = 2 * grid.d + 3

    def pieces(self, p: np.ndarray) -> list[_Bubble]:
        st = ModulationState.from_vector(p, self.K, self.d)
        return [_bubble_pieces(self.grid, self.gs, st.lam[k], st.alpha[k], st.beta[k],
                               st.gamma[k], st.theta[k]) for k in range(self.K)]

    def evaluate(self, p: np.ndarray, pieces=None):
        pieces = pieces if pieces is not None else self.pieces(p)
        R = self.target - sum(b.U for b in pieces)
        G = np.concatenate([_residual_block(self.grid, b, R) for b in pieces])
        return G, R, pieces

    def jacobian(self, p: np.ndarray, G0: np.ndarray, R0: np.ndarray, pieces) -> np.ndarray:
        """Forward differences, relative step 1e-6, re-evaluating only the moved bubble."""
        n = p.size
        J = np.empty((n, n))
        w = self.width
        for j in range(n):
            k = j // w
            h = FD_STEP * max(abs(p[j]), 1.0)
            if j % w == 0:
                h = min(h, 1e-3 * p[j])
            q = p.copy()
            q[j] += h
            st = ModulationState.from_vector(q, self.K, self.d)
            bk = _bubble_pieces(self.grid, self.gs, st.lam[k], st.alpha[k], st.beta[k],
                                st.gamma[k], st.theta[k])
            R = R0 + pieces[k].U - bk.U
            moved = list(pieces)
            moved[k] = bk
            G = np.concatenate([_residual_block(self.grid, b, R) for b in moved])
            J[:, j] = (G - G0) / h
        return J


@dataclass
class DecompositionRow:
    t: float
    params: ModulationState
    D: float
    R_L2: float
    gradR_L2: float
    M: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    T: float
    mod: np.ndarray = field(default_factory=lambda: np.array([]))
    R: np.ndarray | None = field(default=None, repr=False)

    @property
    def residual_max(self) -> float:
        return float(np.abs(self.residuals).max())

    def as_dict(self) -> dict:
        p = self.params
        out = {"t": self.t}
        for k in range(p.K):
            tag = f"_{k + 1}"
            out["lambda" + tag] = p.lam[k]
            for j in range(p.d):
                out[f"alpha{tag}_{j + 1}"] = p.alpha[k, j]
            for j in range(p.d):
                out[f"beta{tag}_{j + 1}"] = p.beta[k, j]
            out["gamma" + tag] = p.gamma[k]
            out["theta" + tag] = p.theta[k]
            out["Mod" + tag] = self.mod[k] if self.mod.size else float("nan")
            out["M" + tag] = self.M[k]
        out.update(D=self.D, residual_max=self.residual_max, converged=bool(self.converged),
                   iterations=self.iterations)
        return out


def remainder_size(grid: Grid, R: np.ndarray, T: float, t: float) -> tuple[float, float, float]:
    """D = ||R|| + (T - t) ||grad R||, with both norms."""
    Rh = np.fft.fftn(R)
    l2 = math.sqrt(float(np.sum(np.abs(R) ** 2)) * grid.cell)
    g = math.sqrt(float(np.sum(grid.k2 * np.abs(Rh) ** 2)) * grid.cell / grid.size)
    return l2 + (T - t) * g, l2, g


def _trust_scale(p: np.ndarray, dp: np.ndarray, K: int, d: int) -> float:
    """Largest step fraction that changes each lambda by at most half and moves
    each centre by at most one lambda; keeps Newton off the collapsed-bubble roots."""
    P, dP = p.reshape(K, -1), dp.reshape(K, -1)
    lam = P[:, 0]
    with np.errstate(divide="ignore"):
        s_lam = np.min(0.5 * lam / np.abs(dP[:, 0]))
        s_alpha = np.min(lam / np.linalg.norm(dP[:, 1:1 + d], axis=1))
    return float(min(1.0, s_lam, s_alpha))


def moment_estimates(w: np.ndarray, gs: GroundStateTable, loc: LocalizerSet) -> tuple[np.ndarray, np.ndarray]:
    """Centre and width of each bubble from localized moments of |w|^2:
    the centroid is alpha and the second moment is lambda^2 int|y|^2Q^2 / int Q^2."""
    g = loc.grid
    dens = np.abs(w) ** 2
    spread = gs.constants["yQ2"] / gs.constants["massQ"]
    lam, alpha = [], []
    for phi in loc.fields:
        m = dens * phi
        m0 = float(np.sum(m))
        a = np.array([float(np.sum(x * m)) / m0 for x in g.coords])
        r2 = sum((x - c) ** 2 for x, c in zip(g.coords, a))
        lam.append(math.sqrt(float(np.sum(r2 * m)) / m0 / spread))
        alpha.append(a)
    return np.array(lam), np.array(alpha)


def _moment_start(v: np.ndarray, z: np.ndarray, guess: ModulationState, gs: GroundStateTable,
                  loc: LocalizerSet, rel: float = 1e-3) -> ModulationState:
    """Replace lambda and alpha of a guess that disagrees with the moments.

    Far guesses can lead Newton to roots where a bubble collapses to a point;
    guesses within rel of the moments are kept untouched."""
    lam, alpha = moment_estimates(v - z, gs, loc)
    far = (np.abs(guess.lam - lam) > rel * lam) | (np.linalg.norm(guess.alpha - alpha, axis=1) > rel * lam)
    if not np.any(far):
        return guess
    out = guess.copy()
    out.lam = np.where(far, lam, guess.lam)
    out.alpha = np.where(far[:, None], alpha, guess.alpha)
    return out


def fit_parameters(v: ComplexField, z: ComplexField | None, guess: ModulationState,
                   gs: GroundStateTable, loc: LocalizerSet, T: float,
                   tol: float = FIT_TOLERANCE, max_iter: int = MAX_ITERATIONS,
                   keep_R: bool = True) -> DecompositionRow:
    """Damped Newton solve of the 2d+3 orthogonality conditions per bubble."""
    grid = v.grid
    zv = np.zeros(grid.shape, dtype=complex) if z is None else z.values
    K = guess.K
    system = OrthogonalitySystem(v.values, zv, gs, grid, K)
    if loc.K == K:
        guess = _moment_start(v.values, zv, guess, gs, loc)
    p = guess.to_vector()
    G, R, pieces = system.evaluate(p)
    err = np.abs(G).max()
    it = 0
    J = None
    while err >= tol and it < max_iter:
        it += 1
        J = system.jacobian(p, G, R, pieces)
        try:
            dp = np.linalg.solve(J, -G)
        except np.linalg.LinAlgError as exc:
            raise FitError("singular Jacobian in the orthogonality system") from exc
        s, accepted = _trust_scale(p, dp, K, grid.d), False
        while s >= 1.0 / 1024:
            q = p + s * dp
            if np.all(q[::system.width] > 0):
                Gq, Rq, pq = system.evaluate(q)
                if np.abs(Gq).max() < err:
                    p, G, R, pieces, accepted = q, Gq, Rq, pq, True
                    break
            s *= 0.5
        if not accepted:
            break
        err = np.abs(G).max()
    # one polishing step with the last Jacobian tightens the parameters
    if J is not None and err < tol:
        q = p + np.linalg.solve(J, -G)
        if np.all(q[::system.width] > 0):
            Gq, Rq, pq = system.evaluate(q)
            if np.abs(Gq).max() <= err:
                p, G, R, pieces = q, Gq, Rq, pq
                err = np.abs(G).max()
    params = ModulationState.from_vector(p, K, grid.d, guess.t)
    D, l2, g = remainder_size(grid, R, T, guess.t)
    M = localized_mass(R, [b.U for b in pieces], loc)
    return DecompositionRow(guess.t, params, D, l2, g, M, G.reshape(K, -1), it,
                            bool(err < tol), T, R=R if keep_R else None)


def orthogonality_residuals(v: ComplexField, z: ComplexField | None, params: ModulationState,
                            gs: GroundStateTable) -> tuple[np.ndarray, np.ndarray]:
    """Scaled conditions (K, 2d+3) and the remainder R for given parameters."""
    grid = v.grid
    zv = np.zeros(grid.shape, dtype=complex) if z is None else z.values
    system = OrthogonalitySystem(v.values, zv, gs, grid, params.K)
    G, R, _ = system.evaluate(params.to_vector())
    return G.reshape(params.K, -1), R


# --- time series --------------------------------------------------------------

def predict(params: ModulationState, t_new: float, substeps: int = 8) -> ModulationState:
    """Advance the formal modulation ODE (Mod = 0) from params.t to t_new by RK4."""
    K, d = params.K, params.d

    def rhs(p):
        s = ModulationState.from_vector(p, K, d)
        lam2 = s.lam ** 2
        out = np.concatenate([np.concatenate([[-s.gamma[k] / s.lam[k]],
                                              2 * s.beta[k] / s.lam[k],
                                              -s.gamma[k] * s.beta[k] / lam2[k],
                                              [-s.gamma[k] ** 2 / lam2[k],
                                               (1 + s.beta[k] @ s.beta[k]) / lam2[k]]])
                              for k in range(K)])
        return out

    p = params.to_vector()
    h = (t_new - params.t) / substeps
    for _ in range(substeps):
        k1 = rhs(p)
        k2 = rhs(p + 0.5 * h * k1)
        k3 = rhs(p + 0.5 * h * k2)
        k4 = rhs(p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return ModulationState.from_vector(p, K, d, t_new)


def decompose_trajectory(rec, z_fields, guess: ModulationState, gs: GroundStateTable,
                         loc: LocalizerSet, T: float, keep_R: bool = False) -> list[DecompositionRow]:
    """Fit every snapshot in integration order, chaining guesses; fills Mod."""
    rows = []
    current = guess.copy(rec.times[0])
    for t, v, z in zip(rec.times, rec.fields, z_fields):
        g = current if abs(current.t - t) < 1e-14 else predict(current, t)
        try:
            row = fit_parameters(v, z, g, gs, loc, T, keep_R=keep_R)
        except FitError:
            R = v.values - (z.values if z is not None else 0)
            D, l2, gr = remainder_size(v.grid, R, T, t)
            row = DecompositionRow(t, g, D, l2, gr, np.full(g.K, np.nan),
                                   np.full((g.K, 2 * g.d + 3), np.nan), MAX_ITERATIONS, False, T)
        rows.append(row)
        current = row.params if row.converged else g
    fill_modulation(rows)
    return rows


def fill_modulation(rows: list[DecompositionRow]) -> None:
    if len(rows) < 3:
        return
    order = np.argsort([r.t for r in rows])
    ok = [rows[i] for i in order]
    mods = modulation_vector(ok, require_converged=False)
    for r, m in zip(ok, mods):
        r.mod = m


def parameter_derivatives(times, vectors, K: int, d: int) -> np.ndarray:
    """Time derivatives of stacked parameter vectors by centered differences
    (second-order one-sided at the ends); theta is unwrapped first."""
    t = np.asarray(times, dtype=float)
    P = np.array(vectors, dtype=float)
    w = 2 * d + 3
    for k in range(K):
        P[:, k * w + w - 1] = np.unwrap(P[:, k * w + w - 1])
    return np.gradient(P, t, axis=0, edge_order=2)


def mod_from(params: ModulationState, dot: ModulationState) -> np.ndarray:
    """The five modulation combinations, summed in absolute value per bubble."""
    lam, g, b = params.lam, params.gamma, params.beta
    out = (np.abs(lam * dot.lam + g) + np.abs(lam ** 2 * dot.gamma + g ** 2)
           + np.linalg.norm(lam[:, None] * dot.alpha - 2 * b, axis=1)
           + np.linalg.norm(lam[:, None] ** 2 * dot.beta + g[:, None] * b, axis=1)
           + np.abs(lam ** 2 * dot.theta - 1 - np.sum(b * b, axis=1)))
    return out


def modulation_vector(rows, require_converged: bool = True) -> list[np.ndarray]:
    """Mod_k at every row of a time-ordered series."""
    if len(rows) < 3:
        raise ValueError("need at least three rows")
    if require_converged and not all(r.converged for r in rows):
        raise ValueError("unconverged rows inside the differencing stencil")
    K, d = rows[0].params.K, rows[0].params.d
    times = [r.t for r in rows]
    dots = parameter_derivatives(times, [r.params.to_vector() for r in rows], K, d)
    return [mod_from(r.params, _dot_state(dv, K, d)) for r, dv in zip(rows, dots)]


def _dot_state(dv: np.ndarray, K: int, d: int) -> ModulationState:
    """Derivative vector viewed as a parameter tuple (lambda-dot may be negative)."""
    v = dv.reshape(K, 2 * d + 3)
    st = ModulationState.__new__(ModulationState)
    st.lam, st.alpha, st.beta = v[:, 0], v[:, 1:1 + d], v[:, 1 + d:1 + 2 * d]
    st.gamma, st.theta, st.t = v[:, 1 + 2 * d], v[:, 2 + 2 * d], 0.0
    return st


def modulation_series(times, params_list) -> np.ndarray:
    """Mod_k for a bare parameter series (shape (n_times, K))."""
    K, d = params_list[0].K, params_list[0].d
    dots = parameter_derivatives(times, [p.to_vector() for p in params_list], K, d)
    return np.array([mod_from(p, _dot_state(dv, K, d)) for p, dv in zip(params_list, dots)])


# --- masses and Scal -----------------------------------------------------------

def localized_mass(R: np.ndarray, Uk: list, loc: LocalizerSet) -> np.ndarray:
    """M_k = 2 Re <R Phi_k, U_k> + int |R|^2 Phi_k."""
    cell = loc.grid.cell
    R2 = np.abs(R) ** 2
    return np.array([2.0 * float(np.sum(R * phi * np.conj(u)).real) * cell + float(np.sum(R2 * phi)) * cell
                     for u, phi in zip(Uk, loc.fields)])


def renormalized_grid(grid: Grid, lam: float) -> Grid:
    return make_grid(grid.d, grid.L / lam, grid.N)


def renormalize(R: np.ndarray, params: ModulationState, k: int, loc: LocalizerSet) -> tuple[Grid, np.ndarray]:
    """eps_k(y) = lam^(d/2) e^{-i theta} (R Phi_k)(alpha + lam y) on the matching y-grid.

    The y-grid has the physical resolution of the x-grid, so the map is a
    periodic shift and preserves the L2 norm."""
    grid = loc.grid
    lam = params.lam[k]
    yg = renormalized_grid(grid, lam)
    Rk = R * loc.fields[k]
    pts = [params.alpha[k, j] + lam * yg.x1d for j in range(grid.d)]
    eps = fourier_interpolate(grid, Rk, pts)
    return yg, lam ** (grid.d / 2) * np.exp(-1j * params.theta[k]) * eps


def scal(eps: np.ndarray, gs: GroundStateTable, ygrid: Grid, fields: dict | None = None) -> float:
    """Squared projections of Re/Im eps onto the unstable directions."""
    nf = fields if fields is not None else null_space_fields(gs, ygrid)
    e1, e2 = eps.real, eps.imag
    c = ygrid.cell
    dot = lambda a, b: float(np.sum(a * np.real(b))) * c  # noqa: E731
    total = dot(e1, nf["Q"]) ** 2 + sum(dot(e1, f) ** 2 for f in nf["xQ"]) + dot(e1, nf["x2Q"]) ** 2
    total += sum(dot(e2, f) ** 2 for f in nf["gradQ"]) + dot(e2, nf["LambdaQ"]) ** 2 + dot(e2, nf["rho"]) ** 2
    return total
