import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsblowup.evolution import (EvolutionState, Integrator, TrajectoryRecord, UnderResolvedError,
                                 _targets, compare_trajectories, construct_approximation, evolve,
                                 evolve_regular_profile, field_stats, read_series, step, step_cap,
                                 write_series)
from nlsblowup.fields import ComplexField, l2_norm, make_grid
from nlsblowup.perturbation import PerturbationModel, build_flat_spatial, build_residue, sample_brownian
from nlsblowup.profiles import BubbleSpec, eval_pseudoconformal, eval_soliton
from nlsblowup.scenario import Scenario


def test_linear_plane_wave_is_exact():
    g = make_grid(1, np.pi, 64)
    k = 3.0
    v = ComplexField(g, np.exp(1j * k * g.x1d))
    state = EvolutionState(v, 0.0)
    for _ in range(1000):
        state = step(state, None, 1e-3, nonlinear=False)
    exact = np.exp(1j * (k * g.x1d - k * k * 1.0))
    assert np.max(np.abs(state.values - exact)) < 1e-10
    assert state.stats["steps"] == 1000


def test_soliton_propagation(gs1):
    g = make_grid(1, 20, 2048)
    spec = [BubbleSpec(1.0, [0.0], c=[1.0])]
    rec = evolve(eval_soliton(spec, gs1, g, 0.0), None, 0.0, 0.2, 2e-4)
    exact = eval_soliton(spec, gs1, g, 0.2).values
    v = rec.fields[-1].values
    assert np.linalg.norm(v - exact) / np.linalg.norm(exact) < 1e-6


def test_mass_drift_per_step(gs1):
    g = make_grid(1, 20, 2048)
    v = eval_soliton([BubbleSpec(1.0, [0.0], c=[0.5])], gs1, g, 0.0)
    state = EvolutionState(v, 0.0, field_stats(g, v.values))
    m0 = state.stats["mass"]
    for _ in range(20):
        nxt = step(state, None, 2e-4)
        assert abs(nxt.stats["mass"] - state.stats["mass"]) / m0 < 1e-10
        state = nxt


def test_step_respects_cap(gs1, grid1):
    v = eval_soliton([BubbleSpec(0.5, [0.0], c=[0.0])], gs1, grid1, 0.0)
    cap = step_cap(grid1, v.values)
    assert cap < 0.1
    with pytest.raises(ValueError):
        step(EvolutionState(v, 0.0), None, 2 * cap)


def test_resolution_guard_aborts():
    g = make_grid(1, 10, 64)
    v = ComplexField(g, np.exp(1j * 9.0 * g.x1d))  # near Nyquist
    with pytest.raises(UnderResolvedError):
        Integrator(g).check(v.values, 0.0)


def test_backward_integration_inverts_forward(gs1):
    g = make_grid(1, 20, 1024)
    v0 = eval_soliton([BubbleSpec(1.0, [0.0], c=[0.5])], gs1, g, 0.0)
    fwd = evolve(v0, None, 0.0, 0.1, 5e-4)
    back = evolve(fwd.fields[-1], None, 0.1, 0.0, 5e-4)
    assert np.max(np.abs(back.fields[-1].values - v0.values)) < 1e-8


def test_sample_times_are_recorded_in_order(gs1):
    g = make_grid(1, 20, 512)
    v0 = eval_soliton([BubbleSpec(1.0, [0.0], c=[0.0])], gs1, g, 0.0)
    rec = evolve(v0, None, 0.2, 0.0, 1e-3, [0.05, 0.15, 0.3, -1.0])
    assert rec.times == [0.2, 0.15, 0.05, 0.0]


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.lists(st.floats(-6, 6), max_size=8))
def test_targets_are_monotone_and_end_at_target(t0, t1, samples):
    out = _targets(t0, t1, samples)
    if abs(t1 - t0) <= 1e-14:
        assert out == []
        return
    assert out[-1] == t1
    diffs = np.diff([t0] + out)
    assert np.all(np.sign(diffs) == np.sign(t1 - t0))


def test_record_rejects_non_monotone_times(grid1):
    rec = TrajectoryRecord(grid1)
    rec.append(0.0, grid1.zeros())
    with pytest.raises(ValueError):
        rec.append(0.0, grid1.zeros())
    rec.append(0.1, grid1.zeros())
    with pytest.raises(ValueError):
        rec.append(0.05, grid1.zeros())


def test_record_save_load_round_trip(tmp_path, gs1):
    g = make_grid(1, 20, 512)
    rec = evolve(eval_soliton([BubbleSpec(1.0, [0.0], c=[0.0])], gs1, g, 0.0), None, 0.0, 0.02, 1e-3,
                 [0.01])
    rec.meta["note"] = "x"
    rec.save(tmp_path / "run")
    back = TrajectoryRecord.load(tmp_path / "run")
    assert back.times == rec.times and back.meta["note"] == "x"
    assert all(np.array_equal(a.values, b.values) for a, b in zip(back.fields, rec.fields))
    assert back.rows[1]["mass"] == pytest.approx(rec.rows[1]["mass"], rel=1e-15)


def test_series_csv_round_trip(tmp_path):
    rows = [{"t": 0.1, "a": 1.5, "ok": True}, {"t": 0.2, "b": 2}]
    write_series(tmp_path / "s.csv", rows)
    back = read_series(tmp_path / "s.csv")
    assert back[0]["t"] == 0.1 and back[0]["ok"] == 1.0 and back[1]["b"] == 2.0


def test_compare_identical_records_is_zero(gs1):
    g = make_grid(1, 20, 512)
    rec = evolve(eval_soliton([BubbleSpec(1.0, [0.0], c=[0.0])], gs1, g, 0.0), None, 0.0, 0.01, 1e-3)
    assert all(r["L2"] == 0 and r["H1"] == 0 for r in compare_trajectories(rec, rec))


def test_zero_residue_stays_zero():
    g = make_grid(1, 20, 512)
    rec = evolve_regular_profile(g.zeros(), None, 1.0, 0.5, 1e-3)
    assert all(np.all(f.values == 0) for f in rec.fields)


def test_regular_profile_mass_and_size():
    g = make_grid(1, 20, 1024)
    pts = [[-4.0], [4.0]]
    z = build_residue(g, pts, 4, 1e-3).field()
    free = evolve_regular_profile(z, None, 1.0, 0.5, 1e-3)
    assert max(r["mass_drift"] for r in free.rows) < 1e-9
    phis = (build_flat_spatial(g, pts, 5),)
    model = PerturbationModel(g, phis, sample_brownian(1, np.linspace(0.5, 1.0, 101), 3), 5)
    noisy = evolve_regular_profile(z, model, 1.0, 0.5, 1e-3)
    assert max(r["H1"] for r in noisy.rows) < 10e-3


def _single_bubble_scenario(**over):
    cfg = {"d": 1, "bubbles": [{"x": [0.0], "w": 1.0}], "T": 1.0, "grid": {"L": 10.0, "N": 2048},
           "dt": 2e-4, "schedule": {"t_star": 0.5, "ratio": 0.75, "levels": 2, "samples_per_level": 4}}
    cfg.update(over)
    return Scenario(cfg)


def test_single_bubble_construction_stays_on_the_bubble():
    sc = _single_bubble_scenario()
    rec = construct_approximation(sc, 2)
    rows = rec.extra["decomposition"]
    assert rows[0].D < 1e-8
    assert all(r.converged for r in rows)
    assert max(r.D for r in rows) < 1e-5


def test_construction_guard_on_resolution():
    sc = _single_bubble_scenario(grid={"L": 10.0, "N": 256},
                                 schedule={"t_star": 0.5, "ratio": 0.5, "levels": 6})
    with pytest.raises(UnderResolvedError):
        construct_approximation(sc, 6, fit=False)
