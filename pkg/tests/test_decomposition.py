import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsblowup.decomposition import (build_localizers, decompose_trajectory, fit_parameters,
                                     localized_mass, modulation_series, modulation_vector,
                                     moment_estimates, orthogonality_residuals, ramp,
                                     remainder_size, renormalize, scal)
from nlsblowup.fields import ComplexField, l2_norm, make_grid
from nlsblowup.groundstate import null_space_fields, random_bandlimited
from nlsblowup.profiles import (BubbleSpec, ModulationState, boundary_parameters, eval_pseudoconformal,
                                modulated_arrays)

CENTERS = [[-4.0], [4.0]]


@pytest.fixture(scope="module")
def loc(grid1):
    return build_localizers(CENTERS, grid1)


def test_ramp_is_a_monotone_step():
    s = np.linspace(-1, 2, 301)
    r = ramp(s)
    assert r[0] == 0 and r[-1] == 1 and np.all(np.diff(r) >= 0)


def test_single_localizer_is_one(grid1):
    loc = build_localizers([[0.0]], grid1)
    assert loc.K == 1 and np.all(loc.fields[0] == 1)


def test_two_localizers_partition_and_plateau(loc, grid1):
    assert loc.sigma == pytest.approx(2 / 3)
    total = sum(loc.fields)
    assert np.max(np.abs(total - 1)) < 1e-12
    for phi, c in zip(loc.fields, CENTERS):
        assert phi.min() >= 0 and phi.max() <= 1
        near = np.abs(grid1.x1d - c[0]) <= loc.sigma
        assert phi[near].min() > 1 - 1e-9


def test_localizers_in_two_dimensions():
    g = make_grid(2, 10, 64)
    loc = build_localizers([[0.0, -3.0], [0.0, 3.0], [2.0, 0.0]], g)
    assert np.max(np.abs(sum(loc.fields) - 1)) < 1e-12
    with pytest.raises(ValueError):
        build_localizers([[1.0, 1.0], [1.0, 1.0]], g)


def test_boundary_data_is_fitted_exactly(gs1, grid1, loc):
    spec = [BubbleSpec(1.0, c) for c in CENTERS]
    T, t = 1.0, 0.7
    p = boundary_parameters(spec, T, t)
    z = ComplexField(grid1, 1e-3 * np.exp(-grid1.x1d ** 2) * grid1.x1d ** 10 / (1 + grid1.x1d ** 10))
    v = eval_pseudoconformal(spec, gs1, grid1, T, t) + z
    row = fit_parameters(v, z, p, gs1, loc, T)
    assert row.converged and row.iterations <= 2
    assert row.D < 1e-8
    assert np.max(np.abs(row.params.to_vector() - p.to_vector())) < 1e-8


def _draw(rng, K=2):
    return ModulationState(rng.uniform(0.15, 0.5, K), np.array(CENTERS) + rng.uniform(-0.3, 0.3, (K, 1)),
                           rng.uniform(-0.5, 0.5, (K, 1)), rng.uniform(0, 0.5, K),
                           rng.uniform(0, 2 * math.pi, K), 0.5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_round_trip_recovers_parameters(seed):
    from nlsblowup.groundstate import ground_state
    gs = ground_state(1)
    g = make_grid(1, 20, 4096)
    loc = build_localizers(CENTERS, g)
    rng = np.random.default_rng(seed)
    p0 = _draw(rng)
    v = ComplexField(g, modulated_arrays(p0, gs, g, False).U)
    guess = p0.copy()
    guess.lam = p0.lam * (1 + rng.uniform(-0.1, 0.1, 2))
    guess.alpha = p0.alpha + rng.uniform(-0.1, 0.1, (2, 1))
    row = fit_parameters(v, None, guess, gs, loc, 1.0)
    assert row.converged
    assert np.max(np.abs(row.params.to_vector() - p0.to_vector())) < 1e-8
    assert row.residual_max < 1e-9


def test_noisy_data_converges_with_remainder_at_noise_size(gs1, grid1, loc, rng):
    p0 = _draw(rng)
    noise = random_bandlimited(grid1, rng)
    noise *= 1e-4 / l2_norm(grid1, noise)
    v = ComplexField(grid1, modulated_arrays(p0, gs1, grid1, False).U + noise)
    row = fit_parameters(v, None, p0, gs1, loc, 1.0)
    assert row.converged
    assert row.R_L2 < 2e-4


def test_stored_remainder_reproduces_row(gs1, grid1, loc, rng):
    p0 = _draw(rng)
    v = ComplexField(grid1, modulated_arrays(p0, gs1, grid1, False).U + 1e-5 * np.exp(-grid1.x1d ** 2))
    row = fit_parameters(v, None, p0, gs1, loc, 1.0)
    D, _, _ = remainder_size(grid1, row.R, 1.0, row.t)
    assert D == pytest.approx(row.D, rel=1e-12)
    G, _ = orthogonality_residuals(v, None, row.params, gs1)
    assert np.max(np.abs(G)) < 1e-9


def test_moment_estimates_locate_bubbles(gs1, grid1, loc, rng):
    p0 = _draw(rng)
    lam, alpha = moment_estimates(modulated_arrays(p0, gs1, grid1, False).U, gs1, loc)
    assert np.allclose(lam, p0.lam, rtol=1e-6)
    assert np.allclose(alpha, p0.alpha, atol=1e-6)


def _exact_series(w, x, th, T, times):
    return [ModulationState([w * (T - t)], [[x]], [[0.0]], [w * w * (T - t)],
                            [1 / (w * w * (T - t)) + th], t) for t in times]


def test_modulation_vanishes_on_exact_series():
    # centred differences of theta = 1/(w^2 (T-t)) leave ~1e-6/(T-t)^2
    times = np.arange(0.0, 0.1, 1e-3)
    mods = modulation_series(times, _exact_series(1.0, 0.3, 0.1, 2.0, times))
    assert np.max(mods) < 1e-6


def test_modulation_detects_frozen_parameters():
    times = np.linspace(0, 0.01, 5)
    ps = [ModulationState([0.4], [[0.0]], [[0.0]], [0.3], [0.0], t) for t in times]
    assert np.min(modulation_series(times, ps)) >= 0.3


def test_modulation_vector_requires_converged_rows(gs1, grid1, loc):
    from nlsblowup.evolution import TrajectoryRecord
    spec = [BubbleSpec(1.0, c) for c in CENTERS]
    T = 1.0
    rec = TrajectoryRecord(grid1)
    for t in (0.700, 0.699, 0.698, 0.697):
        rec.append(t, eval_pseudoconformal(spec, gs1, grid1, T, t))
    rows = decompose_trajectory(rec, [None] * 4, boundary_parameters(spec, T, 0.700), gs1, loc, T)
    assert all(r.converged for r in rows)
    assert max(np.max(r.mod) for r in rows) < 1e-3
    rows[1].converged = False
    with pytest.raises(ValueError):
        modulation_vector(sorted(rows, key=lambda r: r.t))
    with pytest.raises(ValueError):
        modulation_vector(rows[:2])


def test_localized_mass_closed_forms(gs1, grid1, loc):
    p = ModulationState([0.3, 0.4], CENTERS, [[0.0], [0.1]], [0.1, 0.2], [0.0, 1.0])
    Uk = modulated_arrays(p, gs1, grid1, False).Uk
    assert np.all(localized_mass(np.zeros(grid1.shape), Uk, loc) == 0)
    c = 1e-3
    M = localized_mass(c * Uk[0], Uk, loc)
    mass = gs1.constants["massQ"]
    assert M[0] == pytest.approx((2 * c + c * c) * mass, rel=1e-8)
    assert abs(M[1]) < 1e-12


def test_renormalization_is_an_isometry(gs1, grid1, loc, rng):
    p = _draw(rng)
    R = random_bandlimited(grid1, rng) * np.exp(-(grid1.x1d + 4) ** 2)
    yg, eps = renormalize(R, p, 0, loc)
    assert l2_norm(yg, eps) == pytest.approx(l2_norm(grid1, R * loc.fields[0]), rel=1e-10)


def test_scal_closed_forms(gs1):
    g = make_grid(1, 30, 2048)
    nf = null_space_fields(gs1, g)
    assert scal(np.zeros(g.shape), gs1, g, nf) == 0
    Q = nf["Q"].real
    qq = float(np.sum(Q * Q)) * g.dx
    x2 = float(np.sum(Q * nf["x2Q"].real)) * g.dx
    assert scal(Q, gs1, g, nf) == pytest.approx(qq ** 2 + x2 ** 2, rel=1e-8)
    dQ = nf["gradQ"][0].real
    dd = float(np.sum(dQ * dQ)) * g.dx
    assert scal(1j * dQ, gs1, g, nf) == pytest.approx(dd ** 2, rel=1e-8)
