"""The twelve acceptance checks, shared by the ``verify`` subcommand and the
test-suite. Each check returns a CriterionResult with the measured numbers."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .decomposition import fit_parameters
from .diagnostics import (CutoffChi, diagnose_rows, energy, energy_variation_rhs,
                          mass_quantization, rate_fit)
from .evolution import construct_approximation, evolve, evolve_regular_profile, field_stats
from .fields import ComplexField, l2_norm, make_grid
from .groundstate import (check_kernel_identities, coercivity_sample, ground_state,
                          lowest_eigenpair_plus, q_closed_form_1d, shoot_ground_state,
                          solve_ground_state)
from .profiles import (BubbleSpec, ModulationState, boundary_parameters, eval_pseudoconformal,
                       eval_soliton, inverse_transform, modulated_arrays, overlap_mask,
                       pseudoconformal_transform)
from .scenario import Scenario, default_scenario_dict

MASS_Q_1D = math.sqrt(3.0) * math.pi / 2.0


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    def line(self) -> str:
        keys = ", ".join(f"{k}={_fmt(v)}" for k, v in self.details.items() if not isinstance(v, (list, dict)))
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.name} [{self.runtime:.1f}s] {keys}"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3g}"
    return str(v)


def _timed(fn: Callable[[], tuple[bool, dict]]) -> tuple[bool, dict, float]:
    t0 = time.perf_counter()
    ok, details = fn()
    return ok, details, time.perf_counter() - t0


# --- 1-4: ground state, kernel, transform ------------------------------------

def criterion_1() -> CriterionResult:
    def run():
        t0 = time.perf_counter()
        r, q, c = shoot_ground_state(1)
        elapsed = time.perf_counter() - t0
        err = float(np.max(np.abs(q - q_closed_form_1d(r))))
        rel = abs(c["massQ"] - MASS_Q_1D) / MASS_Q_1D
        ok = err < 1e-8 and rel < 1e-8 and elapsed < 1.0
        return ok, {"max_error": err, "mass_rel_error": rel, "solve_seconds": elapsed}
    return CriterionResult(1, "ground state d=1", *_timed(run))


def criterion_2() -> CriterionResult:
    def run():
        t0 = time.perf_counter()
        gs = solve_ground_state(2)
        elapsed = time.perf_counter() - t0
        fine = solve_ground_state(2, M=2 * gs.M)
        c, f = gs.constants, fine.constants
        dq = abs(f["Q0"] - c["Q0"]) / c["Q0"]
        dm = abs(f["massQ"] - c["massQ"]) / c["massQ"]
        ok = (2.205 <= c["Q0"] <= 2.208 and 11.68 <= c["massQ"] <= 11.72
              and dq < 1e-6 and dm < 1e-6 and elapsed < 10.0)
        return ok, {"Q0": c["Q0"], "massQ": c["massQ"], "refine_Q0": dq, "refine_mass": dm,
                    "solve_seconds": elapsed}
    return CriterionResult(2, "ground state d=2", *_timed(run))


def criterion_3() -> CriterionResult:
    def run():
        r1 = check_kernel_identities(ground_state(1), make_grid(1, 30.0, 4096))
        r2 = check_kernel_identities(ground_state(2), make_grid(2, 24.0, 512))
        worst1 = max(v for k, v in r1.items() if k not in ("passed", "tol"))
        worst2 = max(v for k, v in r2.items() if k not in ("passed", "tol"))
        return worst1 < 1e-6 and worst2 < 1e-5, {"worst_d1": worst1, "worst_d2": worst2}
    return CriterionResult(3, "kernel identities", *_timed(run))


def criterion_4(seed: int = 4) -> CriterionResult:
    def run():
        gs = ground_state(1)
        grid = make_grid(1, 32.0, 4096)
        rng = np.random.default_rng(seed)
        errs = []
        for _ in range(5):
            w, c, th = rng.uniform(0.8, 1.5), rng.uniform(-1, 1), rng.uniform(0, 2 * math.pi)
            T, tau = rng.uniform(0.5, 1.5), rng.uniform(0.4, 0.8)
            spec = [BubbleSpec(w, [c], th)]
            C = pseudoconformal_transform(lambda s: eval_soliton(spec, gs, grid, s), grid, T, T - tau)
            S = eval_pseudoconformal(spec, gs, grid, T, T - tau)
            errs.append(float(np.max(np.abs(C.values - S.values))))
        return max(errs) < 1e-9, {"max_error": max(errs), "errors": errs}
    return CriterionResult(4, "pseudo-conformal identity", *_timed(run))


# --- 5-6: propagation and conservation ------------------------------------------

def _single_bubble_run(dt: float):
    gs = ground_state(1)
    grid = make_grid(1, 10.0, 2048)
    spec = [BubbleSpec(1.0, [0.0])]
    T = 1.0
    t0, t1 = T - 0.5, T - 0.12
    rec = evolve(eval_pseudoconformal(spec, gs, grid, T, t0), None, t0, t1, dt)
    exact = eval_pseudoconformal(spec, gs, grid, T, t1).values
    v = rec.fields[-1].values
    err = float(np.linalg.norm(v - exact) / np.linalg.norm(exact))
    return rec, err


_CACHE: dict = {}


def _cached(key, build):
    if key not in _CACHE:
        _CACHE[key] = build()
    return _CACHE[key]


def criterion_5() -> CriterionResult:
    def run():
        t0 = time.perf_counter()
        rec, err = _cached(("bubble", 2e-4), lambda: _single_bubble_run(2e-4))
        elapsed = time.perf_counter() - t0
        _, err_half = _cached(("bubble", 1e-4), lambda: _single_bubble_run(1e-4))
        gain = err / err_half
        ok = err < 1e-5 and gain >= 8.0 and elapsed < 60.0
        return ok, {"rel_L2_error": err, "halved_error": err_half, "gain": gain,
                    "run_seconds": elapsed}
    return CriterionResult(5, "exact-solution propagation", *_timed(run))


def _noise_energy_check(scenario: Scenario, span: float = 0.25, delta: float = 1e-4) -> dict:
    """Soliton under the scenario's perturbation: mass drift rate and dE/dt
    against centered differences placed between path nodes (h is smooth there)."""
    gs, grid, model = scenario.gs, scenario.grid, scenario.model
    v0 = eval_soliton([BubbleSpec(1.0, [0.0], c=[0.5])], gs, grid, 0.0)
    t0 = scenario.t_star
    nodes = model.paths.times
    mids = [0.5 * (a + b) for a, b in zip(nodes[:-1], nodes[1:]) if t0 + delta < 0.5 * (a + b) < t0 + span - delta]
    samples = sorted({round(m + s * delta, 12) for m in mids for s in (-1, 0, 1)})
    rec = evolve(v0, model, t0, t0 + span, scenario.dt, samples)
    m0, m1 = rec.rows[0]["mass"], rec.rows[-1]["mass"]
    rel_errs, checked = [], 0
    for m in mids:
        Ep = energy(rec.field_at(round(m + delta, 12)))
        Em = energy(rec.field_at(round(m - delta, 12)))
        fd = (Ep - Em) / (2 * delta)
        rhs = energy_variation_rhs(rec.field_at(round(m, 12)), model, m)
        if abs(rhs) > 1e-6:
            checked += 1
            rel_errs.append(abs(fd - rhs) / abs(rhs))
    return {"mass_drift_rate": abs(m1 - m0) / m0 / span, "dEdt_worst_rel": max(rel_errs) if rel_errs else 0.0,
            "dEdt_points": checked}


def criterion_6(scenario: Scenario | None = None) -> CriterionResult:
    def run():
        rec, _ = _cached(("bubble", 2e-4), lambda: _single_bubble_run(2e-4))
        m0, m1 = rec.rows[0]["mass"], rec.rows[-1]["mass"]
        E0, E1 = energy(rec.fields[0]), energy(rec.fields[-1])
        mass_drift = abs(m1 - m0) / m0
        energy_drift = abs(E1 - E0) / abs(E0)
        noise = _noise_energy_check(scenario or Scenario(default_scenario_dict()))
        ok = (mass_drift < 1e-9 and energy_drift < 1e-7 and noise["mass_drift_rate"] < 1e-8
              and noise["dEdt_points"] > 0 and noise["dEdt_worst_rel"] < 0.01)
        return ok, {"mass_drift": mass_drift, "energy_drift": energy_drift, **noise}
    return CriterionResult(6, "conservation", *_timed(run))


# --- 7: decomposition round trip ----------------------------------------------

def criterion_7(scenario: Scenario | None = None, draws: int = 100, seed: int = 7) -> CriterionResult:
    def run():
        sc = scenario or Scenario(default_scenario_dict())
        gs, grid, loc, T = sc.gs, sc.grid, sc.localizers, sc.T
        z = sc.zstar_field()
        rng = np.random.default_rng(seed)
        centers = sc.singularities
        K, d = sc.K, sc.d
        worst, failures = 0.0, 0
        for _ in range(draws):
            p0 = ModulationState(rng.uniform(0.15, 0.5, K), centers + rng.uniform(-0.3, 0.3, (K, d)),
                                 rng.uniform(-0.5, 0.5, (K, d)), rng.uniform(0.0, 0.5, K),
                                 rng.uniform(0, 2 * math.pi, K), 0.5)
            v = ComplexField(grid, modulated_arrays(p0, gs, grid, False).U) + z
            guess = p0.copy()
            guess.lam = p0.lam * (1 + rng.uniform(-0.1, 0.1, K))
            guess.alpha = p0.alpha + rng.uniform(-0.1, 0.1, (K, d))
            row = fit_parameters(v, z, guess, gs, loc, T, keep_R=False)
            err = float(np.max(np.abs(row.params.to_vector() - p0.to_vector())))
            worst = max(worst, err)
            failures += int(not row.converged or err >= 1e-8)
        t_b = sc.t_schedule[3]
        pb = boundary_parameters(sc.specs, T, t_b)
        vb = eval_pseudoconformal(sc.specs, gs, grid, T, t_b) + z
        rb = fit_parameters(vb, z, pb, gs, loc, T, keep_R=False)
        bdev = float(np.max(np.abs(rb.params.to_vector() - pb.to_vector())))
        ok = failures == 0 and bdev < 1e-8 and rb.D < 1e-8
        return ok, {"worst_param_error": worst, "failures": failures, "boundary_deviation": bdev,
                    "boundary_D": rb.D}
    return CriterionResult(7, "decomposition round-trip", *_timed(run))


# --- 8-10: the constructed two-bubble run ---------------------------------------

@dataclass
class ConstructionRun:
    scenario: Scenario
    z_record: object
    records: dict
    seconds: float
    diagnostics: dict = field(default_factory=dict)


def run_construction(scenario: Scenario | None = None) -> ConstructionRun:
    """z backwards from T, then v_n for every level n, all fitted."""
    sc = scenario or Scenario(default_scenario_dict())
    t0 = time.perf_counter()
    z = evolve_regular_profile(sc.zstar_field(), sc.model, sc.T, sc.t_star, sc.dt, sc.sample_times())
    recs = {n: construct_approximation(sc, n, z) for n in range(len(sc.t_schedule))}
    return ConstructionRun(sc, z, recs, time.perf_counter() - t0)


def diagnose_construction(run: ConstructionRun) -> dict:
    """Per-level diagnostics rows; levels with fewer than three rows have no
    time derivatives and are skipped."""
    if run.diagnostics:
        return run.diagnostics
    sc = run.scenario
    chi = CutoffChi(sc.config["A"])
    consts = sc.budget_constants()
    for n, rec in run.records.items():
        rows = rec.extra["decomposition"]
        if len(rows) < 3:
            continue
        run.diagnostics[n] = diagnose_rows(rows, rec.fields, rec.extra["z"], sc.model, sc.gs,
                                           sc.localizers, sc.T, chi, consts)
    return run.diagnostics


def _construction(run: ConstructionRun | None) -> ConstructionRun:
    return run if run is not None else _cached("construction", run_construction)


def criterion_8(run: ConstructionRun | None = None) -> CriterionResult:
    def evaluate():
        cr = _construction(run)
        sc = cr.scenario
        converged = all(r.converged for rec in cr.records.values() for r in rec.extra["decomposition"])
        mod_max, trend_ok = 0.0, True
        for rec in cr.records.values():
            rows = rec.extra["decomposition"]
            mods = np.array([r.mod for r in rows if r.mod.size])
            if mods.size == 0:
                continue
            mod_max = max(mod_max, float(np.max(mods)))
            if len(mods) >= 6:
                # rows are in integration order: t_n first, t* last
                third = len(mods) // 3
                trend_ok &= bool(np.mean(mods[:third]) < np.mean(mods[-third:]))
        levels = sorted(cr.records)
        D_star = [cr.records[n].extra["decomposition"][-1].D for n in levels]
        monotone = bool(all(b < a for a, b in zip(D_star[:-1], D_star[1:])))
        # reported only: successive differences of v_n at t*
        star = lambda n: cr.records[n].fields[-1].values  # noqa: E731
        cauchy = [l2_norm(sc.grid, star(n) - star(n - 1)) for n in levels[1:]]
        last = max(cr.records)
        rows = {round(r.t, 12): r for r in cr.records[last].extra["decomposition"]}
        ts = sc.t_schedule[:-1]
        Ds = [min(rows.items(), key=lambda kv: abs(kv[0] - t))[1].D for t in ts]
        fit = rate_fit(ts, Ds, sc.T)
        ok = (converged and mod_max < 1e-2 and trend_ok and monotone
              and fit["slope"] >= 2 and fit["r2"] > 0.9 and cr.seconds < 600)
        return ok, {"all_converged": converged, "Mod_max": mod_max, "Mod_decreasing_to_tn": trend_ok,
                    "D_star_monotone": monotone, "D_star": D_star, "successive_differences": cauchy,
                    "slope": fit["slope"], "r2": fit["r2"],
                    "construction_seconds": cr.seconds}
    return CriterionResult(8, "two-bubble construction", *_timed(evaluate))


def criterion_9(run: ConstructionRun | None = None) -> CriterionResult:
    def evaluate():
        cr = _construction(run)
        sc = cr.scenario
        last = max(cr.records)
        rec = cr.records[last]
        t_n = sc.t_schedule[last]
        mq = mass_quantization(rec.field_at(t_n), sc.singularities, 1.0)
        z_mass = field_stats(sc.grid, cr.z_record.field_at(t_n).values)["mass"]
        massQ = sc.gs.constants["massQ"]
        ball_err = float(np.max(np.abs(mq["balls"] - massQ)))
        ext_err = abs(mq["exterior"] - z_mass)
        return ball_err < 1e-3 and ext_err < 1e-3, {"ball_error": ball_err, "exterior_error": ext_err}
    return CriterionResult(9, "mass quantization", *_timed(evaluate))


def criterion_10(run: ConstructionRun | None = None) -> CriterionResult:
    def evaluate():
        cr = _construction(run)
        diag = diagnose_construction(cr)
        rows = [r for level in diag.values() for r in level]
        conv = [r for r in rows if r["converged"]]
        lower_ok = all(r["lower_ok"] for r in conv)
        mono_rate = float(np.mean([r["mono_ok"] for r in rows])) if rows else 0.0
        worst = min((r["I"] - r["I_lower"] for r in conv), default=float("nan"))
        ok = bool(conv) and lower_ok and mono_rate == 1.0
        return ok, {"rows": len(rows), "lower_bound_ok": lower_ok, "lower_margin_min": worst,
                    "monotone_rate": mono_rate}
    return CriterionResult(10, "generalized-energy bound", *_timed(evaluate))


# --- 11-12 -------------------------------------------------------------------------

def criterion_11(seeds: int = 100, A: float = 20.0) -> CriterionResult:
    def run():
        gs = ground_state(1)
        grid = make_grid(1, 30.0, 2048)
        ratios = [coercivity_sample(gs, grid, A, s) for s in range(seeds)]
        eig, _ = lowest_eigenpair_plus(gs, grid)
        ok = min(ratios) > 1e-3 and eig < 0
        return ok, {"min_ratio": min(ratios), "lowest_Lplus": eig}
    return CriterionResult(11, "coercivity", *_timed(run))


def criterion_12() -> CriterionResult:
    def run():
        gs = ground_state(1)
        grid = make_grid(1, 32.0, 4096)
        w, x0, th, T = 1.0, 0.5, 0.3, 1.0
        spec = [BubbleSpec(w, [x0], th)]
        sampler = lambda s: eval_pseudoconformal(spec, gs, grid, T, s)  # noqa: E731
        errs = []
        for t in (2.0, 3.0, 4.0):
            W = eval_soliton(spec, gs, grid, t).values
            got = inverse_transform(sampler, grid, T, t).values
            mask = overlap_mask(grid, t)
            errs.append(float(np.linalg.norm((got - W)[mask]) / np.linalg.norm(W[mask])))
        return max(errs) < 1e-4, {"max_rel_L2": max(errs)}
    return CriterionResult(12, "soliton-resolution correspondence", *_timed(run))


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
            11: criterion_11, 12: criterion_12}


def run_all(scenario: Scenario | None = None, selected=None, report=print) -> list[CriterionResult]:
    """Run the selected criteria (all by default); criteria 6-10 use the given
    scenario, the rest are fixed configurations."""
    out = []
    run = None
    for n in sorted(selected or CRITERIA):
        if n in (8, 9, 10):
            if run is None:
                run = run_construction(scenario) if scenario is not None else _construction(None)
            res = CRITERIA[n](run)
        elif n in (6, 7):
            res = CRITERIA[n](scenario)
        else:
            res = CRITERIA[n]()
        if report is not None:
            report(res.line())
        out.append(res)
    return out
