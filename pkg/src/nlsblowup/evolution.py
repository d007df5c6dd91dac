"""Lawson (integrating-factor) RK4 integration of the perturbed critical NLS,
the backward regular profile, and the approximating-sequence construction."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fields import ComplexField, Grid, read_snapshot, write_snapshot
from .perturbation import PerturbationModel, assemble_coefficients, free_model
from .profiles import TrajectorySampler

RESOLUTION_LIMIT = 1.5
CAP_SCALE = 0.1


class BlowUpError(RuntimeError):
    """The field became non-finite during integration."""

    def __init__(self, message: str, t: float, stats: dict | None = None):
        super().__init__(message)
        self.t = t
        self.stats = stats or {}


class UnderResolvedError(RuntimeError):
    """||grad v|| * dx exceeded the resolution limit."""


@dataclass
class EvolutionState:
    field: ComplexField
    t: float
    stats: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def field_stats(grid: Grid, v: np.ndarray) -> dict:
    vh = np.fft.fftn(v)
    scale = grid.cell / grid.size
    mass = float(np.sum(np.abs(v) ** 2) * grid.cell)
    grad = float(np.sum(grid.k2 * np.abs(vh) ** 2) * scale)
    return {"mass": mass, "H1": math.sqrt(mass + grad), "grad": math.sqrt(grad),
            "max_abs": float(np.abs(v).max())}


def step_cap(grid: Grid, v: np.ndarray) -> float:
    """Largest admissible |dt|: 0.1 / max(1, max|v|^(4/d))."""
    return CAP_SCALE / max(1.0, float(np.abs(v).max()) ** (4.0 / grid.d))


class Integrator:
    """Advances i v_t + lap v + a1.grad v + a0 v + nonlinear(v) = 0.

    The Laplacian is integrated exactly in Fourier space; everything else goes
    through classical RK4 in the interaction picture.
    """

    def __init__(self, grid: Grid, model: PerturbationModel | None = None,
                 nonlinear: bool = True, guard: bool = True, gauge: bool = True):
        self.grid = grid
        self.gauge = gauge
        self.model = model if model is not None else free_model(grid)
        if self.model.grid is not grid and not self.model.grid.compatible(grid):
            raise ValueError("model grid differs from the integration grid")
        self.nonlinear = nonlinear
        self.guard = guard
        self.p = 2.0 / grid.d
        self._ik = [1j * k for k in grid.wavenumbers]
        self._coef_cache: dict = {}

    def _coefficients(self, t: float):
        c = self._coef_cache.get(t)
        if c is None:
            c = assemble_coefficients(self.model, t)
            if len(self._coef_cache) > 8:
                self._coef_cache.clear()
            self._coef_cache[t] = c
        return c

    def forcing(self, v: np.ndarray, t: float, vh: np.ndarray | None = None,
                shift: float = 0.0) -> np.ndarray:
        """i (a1.grad v + a0 v + |v|^(4/d) v - shift v) in physical space."""
        out = np.zeros_like(v)
        if self.nonlinear:
            out += ((np.abs(v) ** 2) ** self.p - shift) * v
        if self.model.active:
            c = self._coefficients(t)
            if vh is None:
                vh = np.fft.fftn(v)
            for a, ik in zip(c.a1, self._ik):
                out += a * np.fft.ifftn(ik * vh)
            out += c.a0 * v
        return 1j * out

    def step_array(self, v: np.ndarray, t: float, dt: float) -> np.ndarray:
        g = self.grid
        # constant phase rotation moved into the exact multiplier; it halves
        # the stiffness of the local nonlinear rotation seen by RK4
        om = 0.5 * float(np.abs(v).max()) ** (2 * self.p) if self.nonlinear and self.gauge else 0.0
        E2 = np.exp(-0.5j * dt * (g.k2 - om))
        E = E2 * E2
        fft, ifft = np.fft.fftn, np.fft.ifftn
        vh = fft(v)
        k1 = fft(self.forcing(v, t, vh, om))
        ah = E2 * (vh + 0.5 * dt * k1)
        k2 = fft(self.forcing(ifft(ah), t + 0.5 * dt, ah, om))
        bh = E2 * vh + 0.5 * dt * k2
        k3 = fft(self.forcing(ifft(bh), t + 0.5 * dt, bh, om))
        ch = E * vh + dt * E2 * k3
        k4 = fft(self.forcing(ifft(ch), t + dt, ch, om))
        return ifft(E * vh + (dt / 6.0) * (E * k1 + 2.0 * E2 * (k2 + k3) + k4))

    def check(self, v: np.ndarray, t: float) -> None:
        if not np.all(np.isfinite(v)):
            raise BlowUpError(f"non-finite field at t={t:.6g}", t)
        if self.guard:
            s = field_stats(self.grid, v)
            if s["grad"] * self.grid.dx > RESOLUTION_LIMIT:
                raise UnderResolvedError(
                    f"||grad v||*dx = {s['grad'] * self.grid.dx:.3g} > {RESOLUTION_LIMIT} at t={t:.6g}")

    def advance(self, v: np.ndarray, t0: float, t1: float, dt: float) -> tuple[np.ndarray, int]:
        """Uniform substeps from t0 to t1 with |h| <= min(|dt|, cap(v(t0)))."""
        span = t1 - t0
        if span == 0:
            return v, 0
        h_max = min(abs(dt), step_cap(self.grid, v)) if self.nonlinear else abs(dt)
        n = max(1, math.ceil(abs(span) / h_max - 1e-9))
        h = span / n
        for i in range(n):
            v = self.step_array(v, t0 + i * h, h)
            if not np.all(np.isfinite(v)):
                raise BlowUpError(f"non-finite field at t={t0 + (i + 1) * h:.6g}", t0 + (i + 1) * h)
        self.check(v, t1)
        return v, n


def step(state: EvolutionState, model: PerturbationModel | None, dt: float,
         nonlinear: bool = True) -> EvolutionState:
    """One Lawson-RK4 step of signed size dt."""
    grid = state.field.grid
    integ = Integrator(grid, model, nonlinear)
    if nonlinear and abs(dt) > step_cap(grid, state.values) * (1 + 1e-12):
        raise ValueError(f"|dt| = {abs(dt):.3g} exceeds the stability cap {step_cap(grid, state.values):.3g}")
    v = integ.step_array(state.values, state.t, dt)
    integ.check(v, state.t + dt)
    stats = field_stats(grid, v)
    stats["steps"] = state.stats.get("steps", 0) + 1
    return EvolutionState(ComplexField(grid, v), state.t + dt, stats)


# --- trajectories -------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    """Snapshots at strictly monotone times plus one diagnostic row per snapshot."""

    grid: Grid
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def append(self, t: float, f: ComplexField, row: dict | None = None) -> None:
        if len(self.times) >= 2:
            direction = np.sign(self.times[1] - self.times[0])
            if np.sign(t - self.times[-1]) != direction:
                raise ValueError("snapshot times must be strictly monotone")
        elif self.times and t == self.times[-1]:
            raise ValueError("repeated snapshot time")
        self.times.append(float(t))
        self.fields.append(f)
        self.rows.append(dict(row or {}, t=float(t)))

    def index(self, t: float, tol: float = 1e-12) -> int:
        for i, s in enumerate(self.times):
            if abs(s - t) <= tol:
                return i
        raise KeyError(f"no snapshot at t={t}")

    def field_at(self, t: float) -> ComplexField:
        return self.fields[self.index(t)]

    def sampler(self) -> TrajectorySampler:
        return TrajectorySampler(self.times, self.fields)

    def save(self, directory) -> Path:
        out = Path(directory)
        (out / "fields").mkdir(parents=True, exist_ok=True)
        for i, (t, f) in enumerate(zip(self.times, self.fields)):
            write_snapshot(out / "fields" / f"t_{i:04d}.nlsf", f, t)
        meta = dict(self.meta, grid={"d": self.grid.d, "L": self.grid.L, "N": self.grid.N},
                    times=self.times)
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable))
        write_series(out / "series.csv", self.rows)
        return out

    @classmethod
    def load(cls, directory) -> "TrajectoryRecord":
        src = Path(directory)
        meta = json.loads((src / "meta.json").read_text())
        fields, times = [], []
        for i in range(len(meta["times"])):
            f, t = read_snapshot(src / "fields" / f"t_{i:04d}.nlsf")
            fields.append(f)
            times.append(t)
        rows = read_series(src / "series.csv") if (src / "series.csv").exists() else [{} for _ in times]
        rec = cls(fields[0].grid, meta=meta)
        rec.times, rec.fields, rec.rows = times, fields, rows
        return rec


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    raise TypeError(f"not serialisable: {type(x)}")


def write_series(path, rows: Sequence[dict]) -> None:
    keys: list = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    if "t" in keys:
        keys.remove("t")
        keys.insert(0, "t")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([_cell(r.get(k, "")) for k in keys])


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def read_series(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        parsed = {}
        for k, v in r.items():
            try:
                parsed[k] = float(v)
            except (TypeError, ValueError):
                parsed[k] = v
        out.append(parsed)
    return out


def _targets(t0: float, t_end: float, sample_times) -> list[float]:
    """Requested sample times strictly between t0 and t_end, in integration order, plus t_end."""
    if abs(t_end - t0) <= 1e-14:
        return []
    lo, hi = min(t0, t_end), max(t0, t_end)
    inner = sorted({float(s) for s in ([] if sample_times is None else sample_times) if lo < s < hi and abs(s - t0) > 1e-12
                    and abs(s - t_end) > 1e-12}, reverse=t_end < t0)
    return inner + [float(t_end)]


def evolve(v0: ComplexField, model: PerturbationModel | None, t0: float, t_end: float,
           dt: float, sample_times=None, nonlinear: bool = True, guard: bool = True) -> TrajectoryRecord:
    """Integrate from t0 to t_end (either direction), storing t0, every sample
    time in between, and t_end."""
    grid = v0.grid
    integ = Integrator(grid, model, nonlinear, guard)
    rec = TrajectoryRecord(grid)
    v = v0.values
    stats = field_stats(grid, v)
    rec.append(t0, v0, dict(stats, steps=0))
    t, steps = t0, 0
    for target in _targets(t0, t_end, sample_times):
        try:
            v, n = integ.advance(v, t, target, dt)
        except BlowUpError as err:
            err.stats = dict(rec.rows[-1])
            raise
        steps += n
        t = target
        rec.append(t, ComplexField(grid, v), dict(field_stats(grid, v), steps=steps))
    return rec


def evolve_regular_profile(zstar: ComplexField, model: PerturbationModel | None, T: float,
                           t_target: float, dt: float, sample_times=None) -> TrajectoryRecord:
    """Backward integration of the regular profile z from z(T) = z* to t_target."""
    if not t_target < T:
        raise ValueError("t_target must precede T")
    rec = evolve(zstar, model, T, t_target, dt, sample_times)
    m0 = rec.rows[0]["mass"]
    for r in rec.rows:
        r["mass_drift"] = 0.0 if m0 == 0 else abs(r["mass"] - m0) / m0
    return rec


def compare_trajectories(rec_a: TrajectoryRecord, rec_b: TrajectoryRecord, times=None) -> list[dict]:
    """||v_a - v_b|| in L2 and H1 at common snapshot times."""
    common = [t for t in rec_a.times if any(abs(t - s) <= 1e-12 for s in rec_b.times)]
    if times is not None:
        common = [t for t in common if any(abs(t - s) <= 1e-12 for s in times)]
    if not common:
        raise ValueError("trajectories share no sample times")
    out = []
    for t in common:
        diff = rec_a.field_at(t).values - rec_b.field_at(t).values
        s = field_stats(rec_a.grid, diff)
        out.append({"t": t, "L2": math.sqrt(s["mass"]), "H1": s["H1"]})
    return out


# --- the approximating sequence ---------------------------------------------

def construct_approximation(scenario, n: int, z_record: TrajectoryRecord | None = None,
                            fit: bool = True) -> TrajectoryRecord:
    """v_n(t_n) = S(t_n) + z(t_n), integrated back to t*; decomposition rows at
    every sample time. Pass a precomputed z trajectory to share it across n."""
    from . import decomposition as dec
    from .profiles import eval_pseudoconformal, boundary_parameters

    grid = scenario.grid
    t_n = scenario.t_schedule[n]
    dx = grid.dx
    if min(scenario.w) * (scenario.T - t_n) < 8 * dx:
        raise UnderResolvedError(f"min_k w_k (T - t_n) below 8 dx for n={n}")
    times = scenario.sample_times(n)
    if z_record is None:
        z_record = evolve_regular_profile(scenario.zstar_field(), scenario.model, scenario.T,
                                          scenario.t_star, scenario.dt, scenario.sample_times())
    z_n = z_record.field_at(t_n)
    v0 = eval_pseudoconformal(scenario.specs, scenario.gs, grid, scenario.T, t_n) + z_n
    rec = evolve(v0, scenario.model, t_n, scenario.t_star, scenario.dt, times)
    rec.meta.update(n=n, t_n=t_n, kind="approximation")
    rec.extra["z"] = [z_record.field_at(t) for t in rec.times]
    if fit:
        guess = boundary_parameters(scenario.specs, scenario.T, t_n)
        rows = dec.decompose_trajectory(rec, rec.extra["z"], guess, scenario.gs,
                                        scenario.localizers, scenario.T)
        for r, drow in zip(rec.rows, rows):
            r.update(drow.as_dict())
        rec.extra["decomposition"] = rows
    return rec
