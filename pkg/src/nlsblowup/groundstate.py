"""Ground state Q, the profile rho, and the linearized operators L+ / L-."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import simpson
from scipy.interpolate import make_interp_spline
from scipy.special import k0

from .fields import (
    MAGIC,
    SNAPSHOT_VERSION,
    ComplexField,
    Grid,
    _HEADER,
    as_values,
    gradient_array,
    laplacian_array,
)


class ShootingError(RuntimeError):
    pass


class ResidualError(RuntimeError):
    pass


# centered 8th-order stencils on offsets -4..4
_D1 = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
_D2 = np.array([-1 / 560, 8 / 315, -1 / 5, 8 / 5, -205 / 72, 8 / 5, -1 / 5, 8 / 315, -1 / 560])

# shooting switches to the decaying Bessel tail here; past ~10 the
# growing mode amplifies the double-precision error in Q(0)
_MATCH_RADIUS = 9.0


def _sphere_area(d: int) -> float:
    return 2.0 if d == 1 else 2.0 * math.pi


def q_closed_form_1d(r) -> np.ndarray:
    """3^(1/4) sech(2r)^(1/2), evaluated without overflow."""
    r = np.abs(np.asarray(r, dtype=float))
    e = np.exp(-2.0 * r)
    return 3.0 ** 0.25 * np.sqrt(2.0 * e / (1.0 + e * e))


@dataclass(frozen=True, eq=False)
class GroundStateTable:
    d: int
    r_max: float
    M: int
    r: np.ndarray = field(repr=False)
    Q_samples: np.ndarray = field(repr=False)
    rho_samples: np.ndarray | None = field(default=None, repr=False)
    constants: dict = field(default_factory=dict)
    tail: tuple = (0.0, 0.0)  # (matching radius, Bessel coefficient), d=2 only

    @property
    def power(self) -> float:
        return 4.0 / self.d

    def __post_init__(self):
        ext = np.concatenate([-self.r[:0:-1], self.r])
        logq = np.log(np.concatenate([self.Q_samples[:0:-1], self.Q_samples]))
        object.__setattr__(self, "_logq", make_interp_spline(ext, logq, k=5))
        if self.rho_samples is not None:
            rho = np.concatenate([self.rho_samples[:0:-1], self.rho_samples])
            object.__setattr__(self, "_rho", make_interp_spline(ext, rho, k=5))

    def Q(self, r) -> np.ndarray:
        """Ground state at radii r (any shape)."""
        r = np.abs(np.asarray(r, dtype=float))
        if self.d == 1:
            return q_closed_form_1d(r)
        out = np.exp(self._logq(np.minimum(r, self.r_max)))
        far = r > self.r_max
        if np.any(far):
            out[far] = self.tail[1] * k0(r[far])
        return out

    def rho(self, r) -> np.ndarray:
        if self.rho_samples is None:
            raise ValueError("rho has not been solved for this table")
        r = np.abs(np.asarray(r, dtype=float))
        return np.where(r <= self.r_max, self._rho(np.minimum(r, self.r_max)), 0.0)

    # Cartesian samples ------------------------------------------------------

    def radius(self, grid: Grid, center=None) -> np.ndarray:
        c = np.zeros(grid.d) if center is None else np.atleast_1d(center)
        return np.sqrt(sum((x - cj) ** 2 for x, cj in zip(grid.coords, c)) * np.ones(grid.shape))

    def Q_field(self, grid: Grid) -> ComplexField:
        return ComplexField(grid, self.Q(self.radius(grid)))

    def rho_field(self, grid: Grid) -> ComplexField:
        return ComplexField(grid, self.rho(self.radius(grid)))


def _mass_constants(d: int, r: np.ndarray, q: np.ndarray) -> dict:
    area = _sphere_area(d)
    w = r ** (d - 1)
    return {
        "Q0": float(q[0]),
        "massQ": float(area * simpson(q * q * w, x=r)),
        "yQ2": float(area * simpson(q * q * w * r * r, x=r)),
    }


_SERIES_RADIUS = 0.75


def _series(a: float, terms: int = 120) -> np.ndarray:
    """Power-series coefficients of the radial d=2 solution with Q(0)=a."""
    c = np.zeros(2 * terms + 1)
    c[0] = a
    for n in range(terms):
        g = c - np.convolve(np.convolve(c, c), c)[: c.size]
        c[2 * n + 2] = g[2 * n] / (2 * n + 2) ** 2
    return c


def _shoot(a: float, h: float, r_end: float, record: bool = False, d: int = 2):
    """RK4 on Q'' + (d-1)Q'/r - Q + Q^(1+4/d) = 0 from Q(0)=a, Q'(0)=0.

    Returns +1 when Q crosses zero (a too large), -1 when Q turns up
    (a too small), 0 if neither happens before r_end.
    """
    if d == 2:
        def rhs(r, q, p):
            return p, -p / r + q - q * q * q
    else:
        def rhs(r, q, p):
            return p, q - q ** 5

    n = int(round(r_end / h))
    if d == 2:
        # start from the Taylor series at r0; RK4 stages near r=0 lose order on p/r
        c = _series(a)
        i0 = min(int(round(_SERIES_RADIUS / h)), n)
        rs = np.arange(i0 + 1) * h
        qs = list(np.polynomial.polynomial.polyval(rs, c))
        q = float(qs[-1])
        p = float(np.polynomial.polynomial.polyval(rs[-1], np.polynomial.polynomial.polyder(c)))
    else:
        i0, qs, q, p = 0, [a], a, 0.0
    r = i0 * h
    if not record:
        qs = None
    for i in range(i0, n):
        k1 = rhs(r, q, p)
        k2 = rhs(r + 0.5 * h, q + 0.5 * h * k1[0], p + 0.5 * h * k1[1])
        k3 = rhs(r + 0.5 * h, q + 0.5 * h * k2[0], p + 0.5 * h * k2[1])
        k4 = rhs(r + h, q + h * k3[0], p + h * k3[1])
        q += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        p += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        r = (i + 1) * h
        if record:
            qs.append(q)
            continue
        if q < 0.0:
            return 1
        if p > 0.0:
            return -1
    return np.array(qs) if record else 0


_BRACKETS = {1: (1.2, 1.4), 2: (2.0, 2.5)}


def _decay(d: int, r):
    """Linear decay profile of the far field: e^{-r} (d=1), K_0(r) (d=2)."""
    return np.exp(-np.asarray(r, dtype=float)) if d == 1 else k0(r)


def _shoot_profile(d: int, r_max: float, M: int, bracket=None) -> tuple[np.ndarray, float, float]:
    """Bisection on Q(0), then the shot profile up to the matching radius and
    the fitted decay tail beyond it."""
    h = r_max / M
    sub = 2
    lo, hi = bracket or _BRACKETS[d]
    s_lo, s_hi = _shoot(lo, h / sub, r_max, d=d), _shoot(hi, h / sub, r_max, d=d)
    if not (s_lo < 0 and s_hi > 0):
        raise ShootingError(f"bisection interval [{lo}, {hi}] does not bracket the ground state")
    while hi - lo > 4e-16 * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if _shoot(mid, h / sub, r_max, d=d) > 0:
            hi = mid
        else:
            lo = mid
    a = 0.5 * (lo + hi)
    n_match = int(round(_MATCH_RADIUS / h))
    q = _shoot(a, h / sub, n_match * h, record=True, d=d)[::sub]
    r = np.arange(M + 1) * h
    coef = q[-1] / _decay(d, r[n_match])
    tail = coef * _decay(d, r[n_match:])
    # smooth hand-off over one unit so no derivative jump survives at the seam
    lo_i = int(round((_MATCH_RADIUS - 1.0) / h))
    s = np.clip((r[lo_i:n_match + 1] - r[lo_i]) / (r[n_match] - r[lo_i]), 0.0, 1.0)
    w = s ** 3 * (10 - 15 * s + 6 * s * s)
    full = np.empty(M + 1)
    full[:lo_i] = q[:lo_i]
    full[lo_i:n_match + 1] = (1 - w) * q[lo_i:n_match + 1] + w * coef * _decay(d, r[lo_i:n_match + 1])
    full[n_match:] = tail
    full[n_match] = tail[0]
    return full, a, coef


def _townes(r_max: float, M: int, bracket=(2.0, 2.5)) -> tuple[np.ndarray, float, float]:
    return _shoot_profile(2, r_max, M, bracket)


def shoot_ground_state(d: int, r_max: float = 40.0, M: int = 8000) -> tuple[np.ndarray, np.ndarray, dict]:
    """The shooting code path in any supported dimension: radii, samples and
    quadrature constants. In d=1 it is checked against the closed form."""
    if M % 2:
        M += 1
    q, a, _ = _shoot_profile(d, r_max, M)
    r = np.arange(M + 1) * (r_max / M)
    return r, q, dict(_mass_constants(d, r, q), shot_Q0=a)


def _radial_fd(d: int, M: int, h: float, even: bool = True) -> sp.csr_matrix:
    """8th-order radial Laplacian on r_i = i h, even reflection at 0, zero past r_max."""
    rows, cols, vals = [], [], []
    for i in range(M + 1):
        for off in range(-4, 5):
            j = i + off
            if j > M:
                continue
            jj = abs(j) if even else j
            c2 = _D2[off + 4] / h ** 2
            if d == 1:
                c = c2
            elif i == 0:
                c = 2.0 * c2  # Q'/r -> Q''(0)
            else:
                c = c2 + _D1[off + 4] / h / (i * h)
            rows.append(i)
            cols.append(jj)
            vals.append(c)
    return sp.csr_matrix((vals, (rows, cols)), shape=(M + 1, M + 1))


def radial_laplacian(gs: GroundStateTable, samples: np.ndarray) -> np.ndarray:
    return _radial_fd(gs.d, gs.M, gs.r_max / gs.M) @ samples


def ground_state_residual(gs: GroundStateTable) -> float:
    """Max-norm residual of Delta Q - Q + Q^(1+4/d) on the radial grid."""
    q = gs.Q_samples
    res = radial_laplacian(gs, q) - q + q ** (1 + gs.power)
    # the last 4 rows see the zero extension past r_max
    return float(np.max(np.abs(res[:-4])))


def solve_ground_state(d: int, r_max: float = 40.0, M: int = 8000) -> GroundStateTable:
    """Positive radial ground state sampled on r_i = i r_max / M."""
    if d not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {d}")
    if r_max < 15 or M < 4000:
        raise ValueError("need r_max >= 15 and M >= 4000")
    if M % 2:
        M += 1
    r = np.arange(M + 1) * (r_max / M)
    if d == 1:
        q = q_closed_form_1d(r)
        tail = (0.0, 0.0)
    else:
        q, a, coef = _townes(r_max, M)
        tail = (_MATCH_RADIUS, coef)
    if not (np.all(q > 0) and np.all(np.diff(q) < 0)):
        raise ShootingError("ground state samples are not positive and decreasing")
    gs = GroundStateTable(d, float(r_max), M, r, q, None, _mass_constants(d, r, q), tail)
    res = ground_state_residual(gs)
    if res > 1e-9:
        raise ResidualError(f"ground-state residual {res:.3e} exceeds 1e-9")
    gs.constants["residual"] = res
    return gs


def solve_rho(gs: GroundStateTable) -> GroundStateTable:
    """Radial solution of L+ rho = -|x|^2 Q, rho'(0)=0, rho(r_max)=0."""
    h = gs.r_max / gs.M
    q = gs.Q_samples
    A = -_radial_fd(gs.d, gs.M, h) + sp.diags(1.0 - (1 + gs.power) * q ** gs.power)
    A = A.tolil()
    A[gs.M, :] = 0.0
    A[gs.M, gs.M] = 1.0
    rhs = -(gs.r ** 2) * q
    rhs[gs.M] = 0.0
    A = A.tocsc()
    try:
        rho = spla.spsolve(A, rhs)
    except RuntimeError as exc:  # pragma: no cover - scipy reports singular factors this way
        raise np.linalg.LinAlgError(f"rho system is singular: {exc}") from exc
    if not np.all(np.isfinite(rho)):
        raise np.linalg.LinAlgError("rho system is singular for this radial grid")
    res = float(np.max(np.abs(A @ rho - rhs)))
    if res > 1e-8:
        raise ResidualError(f"rho linear-solve residual {res:.3e}")
    consts = dict(gs.constants)
    consts["rho_residual"] = res
    return replace(gs, rho_samples=rho, constants=consts)


def ground_state(d: int, r_max: float = 40.0, M: int = 8000) -> GroundStateTable:
    """Q and rho together."""
    return solve_rho(solve_ground_state(d, r_max, M))


# --- linearized operators ----------------------------------------------------

def apply_linearized(which: str, gs: GroundStateTable, f):
    """L+ f = -Lap f + f - (1+4/d) Q^(4/d) f ;  L- f = -Lap f + f - Q^(4/d) f.

    ``f`` is a ComplexField (spectral Laplacian) or a radial sample array
    on the table's grid (finite differences).
    """
    if which not in ("+", "-", "plus", "minus"):
        raise ValueError(f"which must be '+' or '-', got {which!r}")
    coef = (1 + gs.power) if which in ("+", "plus") else 1.0
    if isinstance(f, ComplexField):
        q4 = gs.Q(gs.radius(f.grid)) ** gs.power
        u = f.values
        return ComplexField(f.grid, -laplacian_array(f.grid, u) + u - coef * q4 * u)
    f = np.asarray(f)
    return -radial_laplacian(gs, f) + f - coef * gs.Q_samples ** gs.power * f


def lambda_op(grid: Grid, u: np.ndarray, center=None) -> np.ndarray:
    """(d/2) u + (x - center) . grad u."""
    c = np.zeros(grid.d) if center is None else np.atleast_1d(center)
    grads = gradient_array(grid, u)
    return 0.5 * grid.d * u + sum((x - cj) * g for x, cj, g in zip(grid.coords, c, grads))


def null_space_fields(gs: GroundStateTable, grid: Grid) -> dict:
    """Q, xQ (list), |x|^2 Q, grad Q (list), Lambda Q, rho on a Cartesian grid."""
    q = gs.Q(gs.radius(grid)).astype(complex)
    out = {
        "Q": q,
        "xQ": [x * q for x in grid.coords],
        "x2Q": grid.r2 * q,
        "gradQ": gradient_array(grid, q),
        "LambdaQ": lambda_op(grid, q),
    }
    if gs.rho_samples is not None:
        out["rho"] = gs.rho(gs.radius(grid)).astype(complex)
    return out


def check_kernel_identities(gs: GroundStateTable, grid: Grid, tol: float | None = None) -> dict:
    """Max-norm residuals of the six generalized-kernel identities."""
    if tol is None:
        tol = 1e-6 if gs.d == 1 else 1e-5
    n = null_space_fields(gs, grid)

    def Lp(u):
        return apply_linearized("+", gs, ComplexField(grid, u)).values

    def Lm(u):
        return apply_linearized("-", gs, ComplexField(grid, u)).values

    res = {
        "Lplus_gradQ": max(float(np.max(np.abs(Lp(g)))) for g in n["gradQ"]),
        "Lplus_LambdaQ": float(np.max(np.abs(Lp(n["LambdaQ"]) + 2 * n["Q"]))),
        "Lplus_rho": float(np.max(np.abs(Lp(n["rho"]) + n["x2Q"]))),
        "Lminus_Q": float(np.max(np.abs(Lm(n["Q"])))),
        "Lminus_xQ": max(float(np.max(np.abs(Lm(xq) + 2 * g))) for xq, g in zip(n["xQ"], n["gradQ"])),
        "Lminus_x2Q": float(np.max(np.abs(Lm(n["x2Q"]) + 4 * n["LambdaQ"]))),
    }
    res["passed"] = all(v < tol for k, v in res.items())
    res["tol"] = tol
    return res


# --- localized coercivity ------------------------------------------------------

def _hermite5(s, y0, y1, d0, d1, dd0, dd1, h):
    """Quintic Hermite on s in [0,1] for an interval of length h."""
    h00 = 1 - 10 * s ** 3 + 15 * s ** 4 - 6 * s ** 5
    h01 = 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5
    h10 = s - 6 * s ** 3 + 8 * s ** 4 - 3 * s ** 5
    h11 = -4 * s ** 3 + 7 * s ** 4 - 3 * s ** 5
    h20 = 0.5 * (s * s - 3 * s ** 3 + 3 * s ** 4 - s ** 5)
    h21 = 0.5 * (s ** 3 - 2 * s ** 4 + s ** 5)
    return y0 * h00 + y1 * h01 + h * (d0 * h10 + d1 * h11) + h * h * (dd0 * h20 + dd1 * h21)


def plateau_weight(r, A: float) -> np.ndarray:
    """phi_A(r): 1 for r <= A, exp(-r/A) for r >= 2A, C2 quintic blend between."""
    s = np.asarray(r, dtype=float) / A
    e2 = math.exp(-2.0)
    blend = _hermite5(np.clip(s - 1.0, 0.0, 1.0), 1.0, e2, 0.0, -e2, 0.0, e2, 1.0)
    return np.where(s <= 1.0, 1.0, np.where(s >= 2.0, np.exp(-s), blend))


def orthogonalize(gs: GroundStateTable, grid: Grid, f: np.ndarray) -> np.ndarray:
    """Remove the components of Re f along {Q, xQ, |x|^2Q} and of Im f along
    {grad Q, Lambda Q, rho}, so that Scal(f) = 0."""
    n = null_space_fields(gs, grid)
    real_dirs = [n["Q"].real] + [x.real for x in n["xQ"]] + [n["x2Q"].real]
    imag_dirs = [g.real for g in n["gradQ"]] + [n["LambdaQ"].real, n["rho"].real]

    def project(v, dirs):
        G = np.array([[np.sum(a * b) for b in dirs] for a in dirs])
        b = np.array([np.sum(v * a) for a in dirs])
        c = np.linalg.solve(G, b)
        return v - sum(ci * a for ci, a in zip(c, dirs))

    return project(f.real, real_dirs) + 1j * project(f.imag, imag_dirs)


def coercivity_ratio(gs: GroundStateTable, grid: Grid, f, A: float) -> float:
    u = as_values(f)
    q4 = gs.Q(gs.radius(grid)) ** gs.power
    phi = plateau_weight(gs.radius(grid), A)
    grad2 = sum(np.abs(g) ** 2 for g in gradient_array(grid, u))
    dens = (grad2 + np.abs(u) ** 2) * phi
    den = float(np.sum(dens) * grid.cell)
    if den < 1e-14:
        raise ValueError("coercivity denominator below 1e-14")
    num = np.sum(dens - (1 + gs.power) * q4 * u.real ** 2 - q4 * u.imag ** 2) * grid.cell
    return float(num) / den


def random_bandlimited(grid: Grid, rng: np.random.Generator, k_cut: float = 4.0) -> np.ndarray:
    shape = grid.shape
    coef = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    coef[np.sqrt(grid.k2) > k_cut] = 0.0
    return np.fft.ifftn(coef) * grid.size ** 0.5


def coercivity_sample(gs: GroundStateTable, grid: Grid, A: float, seed: int,
                      orthogonal: bool = True) -> float:
    """Coercivity ratio of a random band-limited field with Scal(f)=0."""
    if A < 10:
        raise ValueError("cutoff scale A must be >= 10")
    f = random_bandlimited(grid, np.random.default_rng(seed))
    if orthogonal:
        f = orthogonalize(gs, grid, f)
    return coercivity_ratio(gs, grid, f, A)


def lowest_eigenpair_plus(gs: GroundStateTable, grid: Grid, shift: float = 10.0,
                          iters: int = 60, seed: int = 0) -> tuple[float, np.ndarray]:
    """Inverse power iteration on L+ + shift; returns (Rayleigh quotient, vector).

    A negative value exhibits the unstable direction of L+.
    """
    q4 = gs.Q(gs.radius(grid)) ** gs.power
    pot = 1.0 - (1 + gs.power) * q4
    k2 = grid.k2
    shape = grid.shape

    def matvec(v):
        u = v.reshape(shape)
        return (np.fft.ifftn(k2 * np.fft.fftn(u)).real + (pot + shift) * u).ravel()

    def precond(v):
        return np.fft.ifftn(np.fft.fftn(v.reshape(shape)) / (k2 + 1.0 + shift)).real.ravel()

    n = grid.size
    op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    pre = spla.LinearOperator((n, n), matvec=precond, dtype=float)
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w, info = spla.cg(op, v, M=pre, rtol=1e-12, maxiter=500)
        v = w / np.linalg.norm(w)
    rq = float(v @ matvec(v)) - shift
    return rq, v.reshape(shape)


# --- persistence -------------------------------------------------------------

def save_table(gs: GroundStateTable, path) -> None:
    """Radial samples (Q + i rho) in the snapshot layout plus a JSON sidecar."""
    path = Path(path)
    rho = gs.rho_samples if gs.rho_samples is not None else np.zeros_like(gs.Q_samples)
    body = np.empty(2 * (gs.M + 1), dtype="<f8")
    body[0::2] = gs.Q_samples
    body[1::2] = rho
    header = _HEADER.pack(MAGIC, SNAPSHOT_VERSION, gs.d, gs.M + 1, gs.r_max, 0.0)
    path.write_bytes(header + body.tobytes())
    meta = {k: gs.constants[k] for k in ("Q0", "massQ", "yQ2")}
    meta.update(d=gs.d, r_max=gs.r_max, M=gs.M, has_rho=gs.rho_samples is not None,
                tail=list(gs.tail))
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def load_table(path) -> GroundStateTable:
    path = Path(path)
    raw = path.read_bytes()
    magic, _version, d, n, r_max, _t = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    meta = json.loads(path.with_suffix(".json").read_text())
    M = n - 1
    r = np.arange(n) * (r_max / M)
    rho = body[1::2].copy() if meta["has_rho"] else None
    consts = {k: meta[k] for k in ("Q0", "massQ", "yQ2")}
    return GroundStateTable(d, r_max, M, r, body[0::2].copy(), rho, consts, tuple(meta["tail"]))
