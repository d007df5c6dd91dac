"""Command line entry point: build tables, run trajectories and sweeps,
re-fit and diagnose stored runs, and run the acceptance suite.

Exit codes: 0 success, 1 error, 2 acceptance failure."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .evolution import (TrajectoryRecord, UnderResolvedError, _jsonable, compare_trajectories,
                        construct_approximation, evolve, evolve_regular_profile, write_series)
from .groundstate import ground_state, save_table
from .perturbation import write_paths_csv
from .profiles import boundary_parameters, eval_pseudoconformal
from .scenario import Scenario, ScenarioError

log = logging.getLogger("nlsblowup")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def default_scenario_path() -> Path:
    return Path(str(resources.files("nlsblowup") / "scenarios" / "two_bubble_d1.json"))


def load_scenario(path: str | None, seed: int | None) -> Scenario:
    return Scenario.load(path or default_scenario_path(), seed)


def _write_json(path: Path, data: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable))


def _out_dir(args, sc: Scenario) -> Path:
    return Path(args.out or sc.config["output"])


def _stamp(directory: Path, sc: Scenario, **extra) -> None:
    """Scenario copy plus provenance so the directory describes itself."""
    directory.mkdir(parents=True, exist_ok=True)
    _write_json(directory / "scenario.json", sc.config)
    meta_path = directory / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    meta.update(sc.metadata(), **extra)
    _write_json(meta_path, meta)
    if sc.paths is not None:
        write_paths_csv(directory / "paths.csv", sc.paths)


# --- persistence of constructed runs ------------------------------------------

def save_run(rec: TrajectoryRecord, sc: Scenario, directory: Path) -> Path:
    rec.save(directory)
    z = TrajectoryRecord(rec.grid)
    for t, f in zip(rec.times, rec.extra["z"]):
        z.append(t, f)
    z.save(directory / "z")
    _stamp(directory, sc)
    return directory


def load_run(directory) -> tuple[Scenario, TrajectoryRecord]:
    directory = Path(directory)
    cfg = json.loads((directory / "scenario.json").read_text())
    sc = Scenario(cfg)
    rec = TrajectoryRecord.load(directory)
    z = TrajectoryRecord.load(directory / "z")
    rec.extra["z"] = z.fields
    return sc, rec


def refit(sc: Scenario, rec: TrajectoryRecord):
    from .decomposition import decompose_trajectory
    guess = boundary_parameters(sc.specs, sc.T, rec.times[0])
    rows = decompose_trajectory(rec, rec.extra["z"], guess, sc.gs, sc.localizers, sc.T)
    for r, drow in zip(rec.rows, rows):
        r.update(drow.as_dict())
    rec.extra["decomposition"] = rows
    return rows


# --- subcommands -----------------------------------------------------------------

def cmd_groundstate(args) -> int:
    sc = load_scenario(args.scenario, args.seed)
    out = _out_dir(args, sc) / "groundstate"
    out.mkdir(parents=True, exist_ok=True)
    gs = ground_state(sc.d)
    save_table(gs, out / f"ground_state_d{sc.d}.bin")
    _stamp(out, sc, kind="groundstate")
    print(f"d={sc.d} Q(0)={gs.constants['Q0']:.10f} |Q|^2={gs.constants['massQ']:.10f}")
    return EXIT_OK


def cmd_evolve(args) -> int:
    """v_n from its boundary data at t_n back to t*, without fitting."""
    sc = load_scenario(args.scenario, args.seed)
    n = _level(args, sc)
    t_n = sc.t_schedule[n]
    z = evolve_regular_profile(sc.zstar_field(), sc.model, sc.T, sc.t_star, sc.dt, sc.sample_times())
    v0 = eval_pseudoconformal(sc.specs, sc.gs, sc.grid, sc.T, t_n) + z.field_at(t_n)
    rec = evolve(v0, sc.model, t_n, sc.t_star, sc.dt, sc.sample_times(n))
    rec.meta.update(n=n, t_n=t_n, kind="evolution")
    rec.extra["z"] = [z.field_at(t) for t in rec.times]
    out = save_run(rec, sc, _out_dir(args, sc) / f"evolve_n{n}")
    print(f"wrote {len(rec.times)} snapshots to {out}")
    return EXIT_OK


def _level(args, sc: Scenario) -> int:
    levels = len(sc.t_schedule) - 1
    n = levels if args.n is None else args.n
    if not 0 <= n <= levels:
        raise ValueError(f"--n must lie in [0, {levels}]")
    return n


def cmd_construct(args) -> int:
    sc = load_scenario(args.scenario, args.seed)
    n = _level(args, sc)
    rec = construct_approximation(sc, n)
    out = save_run(rec, sc, _out_dir(args, sc) / f"n{n}")
    rows = rec.extra["decomposition"]
    print(f"n={n}: {len(rows)} rows, converged={all(r.converged for r in rows)}, "
          f"D(t*)={rows[-1].D:.3e}; wrote {out}")
    return EXIT_OK


def _sweep_worker(job) -> str:
    cfg, n, out, z_dir = job
    sc = Scenario(cfg)
    z = TrajectoryRecord.load(z_dir)
    rec = construct_approximation(sc, n, z)
    save_run(rec, sc, Path(out) / f"n{n}")
    return str(Path(out) / f"n{n}")


def cmd_sweep(args) -> int:
    from .diagnostics import rate_fit
    sc = load_scenario(args.scenario, args.seed)
    out = _out_dir(args, sc)
    z = evolve_regular_profile(sc.zstar_field(), sc.model, sc.T, sc.t_star, sc.dt, sc.sample_times())
    z.save(out / "z")
    _stamp(out, sc, kind="sweep")
    jobs = [(sc.config, n, str(out), str(out / "z")) for n in range(len(sc.t_schedule))]
    workers = max(1, args.threads or 1)
    if workers == 1:
        dirs = [_sweep_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            dirs = list(pool.map(_sweep_worker, jobs))
    recs = [TrajectoryRecord.load(d) for d in dirs]
    compare = []
    for n in range(1, len(recs)):
        for row in compare_trajectories(recs[n], recs[n - 1]):
            compare.append(dict(row, n=n))
    write_series(out / "compare.csv", compare)
    D_star = [float(r.rows[-1]["D"]) for r in recs]
    last = recs[-1]
    ts = sc.t_schedule[:-1]
    Ds = [float(last.rows[int(np.argmin([abs(s - t) for s in last.times]))]["D"]) for t in ts]
    rates = {"D_star": D_star, "D_schedule": Ds, "schedule": sc.t_schedule}
    try:
        rates["D_rate"] = rate_fit(ts, Ds, sc.T)
    except ValueError as exc:
        rates["D_rate"] = {"error": str(exc)}
    diffs = [min(r["L2"] for r in compare if r["n"] == n and abs(r["t"] - sc.t_star) < 1e-12)
             for n in range(1, len(recs))]
    if len(diffs) >= 4 and all(d > 0 for d in diffs):
        rates["difference_rate"] = rate_fit(sc.t_schedule[1:], diffs, sc.T)
    _write_json(out / "rates.json", rates)
    print(json.dumps({"D_star": D_star, "D_rate": rates["D_rate"]}, default=_jsonable))
    return EXIT_OK


def _run_dir(args) -> Path:
    if not args.out:
        raise ValueError("--out must name a stored run directory")
    return Path(args.out)


def cmd_decompose(args) -> int:
    directory = _run_dir(args)
    sc, rec = load_run(directory)
    rows = refit(sc, rec)
    write_series(directory / "series.csv", rec.rows)
    print(f"re-fitted {len(rows)} snapshots, converged={all(r.converged for r in rows)}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from .diagnostics import CutoffChi, diagnose_rows
    directory = _run_dir(args)
    sc, rec = load_run(directory)
    rows = refit(sc, rec)
    if len(rows) < 3:
        raise ValueError("diagnostics need at least three snapshots")
    diag = diagnose_rows(rows, rec.fields, rec.extra["z"], sc.model, sc.gs, sc.localizers, sc.T,
                         CutoffChi(sc.config["A"]), sc.budget_constants())
    write_series(directory / "diagnostics.csv", diag)
    summary = {"rows": len(diag), "lower_bound_ok": all(r["lower_ok"] for r in diag),
               "monotone_rate": float(np.mean([r["mono_ok"] for r in diag])),
               "budget_constants": sc.budget_constants().__dict__}
    _write_json(directory / "diagnostics.json", summary)
    print(json.dumps(summary, default=_jsonable))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import run_all
    sc = load_scenario(args.scenario, args.seed)
    results = run_all(sc)
    out = _out_dir(args, sc) / "verify"
    _stamp(out, sc, kind="verify")
    _write_json(out / "acceptance.json", {
        "criteria": [{"number": r.number, "name": r.name, "passed": r.passed, "runtime": r.runtime,
                      "details": r.details} for r in results]})
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failed: {failed}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {"groundstate": cmd_groundstate, "evolve": cmd_evolve, "construct": cmd_construct,
            "sweep": cmd_sweep, "decompose": cmd_decompose, "diagnose": cmd_diagnose,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlsblowup", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", help="scenario JSON (default: the shipped two-bubble d=1 case)")
        s.add_argument("--n", type=int, help="approximation level")
        s.add_argument("--out", help="output directory (stored run directory for decompose/diagnose)")
        s.add_argument("--seed", type=int, help="noise seed overriding the scenario")
        s.add_argument("--threads", type=int, default=1, help="worker processes for sweep")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](args)
    except ScenarioError as exc:
        for problem in exc.problems:
            print(f"scenario error: {problem}", file=sys.stderr)
        return EXIT_ERROR
    except (UnderResolvedError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
