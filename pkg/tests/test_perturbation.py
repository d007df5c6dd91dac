import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsblowup.fields import ComplexField, l2_norm, make_grid
from nlsblowup.perturbation import (PerturbationModel, assemble_coefficients, build_flat_spatial,
                                    build_residue, constant_paths, doss_sussman, fd_weights,
                                    read_paths_csv, sample_brownian, sobolev_norm, verify_flatness,
                                    write_paths_csv)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 20, 2048)


def test_flat_function_vanishes_to_order(grid):
    phi = build_flat_spatial(grid, [[0.0]], 5)
    assert verify_flatness(phi, [[0.0]], 5) < 1e-6
    two = build_flat_spatial(grid, [[-3.0], [3.0]], 5)
    assert verify_flatness(two, [[-3.0], [3.0]], 5) < 1e-6


def test_flatness_detector_rejects_gaussian():
    assert verify_flatness(lambda x: np.exp(-x * x), [[0.0]], 2) > 1.0


def test_residue_flatness_and_scaling(grid):
    z = build_residue(grid, [[-4.0], [4.0]], 3, 1e-3)
    # normalise to unit amplitude before checking the derivatives
    raw = build_residue(grid, [[-4.0], [4.0]], 3, 1.0)
    assert verify_flatness(lambda x: raw(x) / np.max(np.abs(raw.values)), [[-4.0], [4.0]], 6) < 1e-5
    assert sobolev_norm(grid, z.values, 2 * 3 + 2 + 1) <= 1e-3 * (1 + 1e-9)


def test_flat_builders_validate(grid):
    with pytest.raises(ValueError):
        build_flat_spatial(grid, [[0.0]], 3)
    with pytest.raises(ValueError):
        build_flat_spatial(grid, [[19.0]], 5)
    zero = build_flat_spatial(grid, [[0.0]], 5, amplitude=0.0)
    assert np.all(zero.values == 0)


def test_flat_function_decays_near_boundary(grid):
    phi = build_flat_spatial(grid, [[-4.0], [4.0]], 5)
    edge = np.abs(grid.x1d) > grid.L - 1
    x2 = 1 + grid.x1d ** 2
    for deriv in (phi.values, phi.grad[0], phi.hessian[0][0]):
        assert np.max(x2[edge] * np.abs(deriv[edge])) < 1e-8


def test_fd_weights_differentiate_polynomials():
    w = fd_weights(2, 3)
    offs = np.arange(-3, 4)
    assert np.dot(w, offs ** 2) == pytest.approx(2.0)
    assert abs(np.dot(w, offs ** 3)) < 1e-12


def test_brownian_determinism_and_variance():
    t = np.linspace(0, 1, 11)
    a, b = sample_brownian(3, t, 7), sample_brownian(3, t, 7)
    assert np.array_equal(a.values, b.values)
    big = sample_brownian(10_000, np.array([0.0, 0.5]), 1)
    assert np.var(big.values[:, 1]) == pytest.approx(0.5, rel=0.05)
    assert sample_brownian(0, t, 1).count == 0


def test_paths_interpolate_and_guard_domain():
    p = constant_paths([0.5, -1.0], 0.0, 1.0)
    assert np.allclose(p(0.3), [0.5, -1.0])
    with pytest.raises(ValueError):
        p(2.0)


def test_paths_csv_round_trip(tmp_path):
    p = sample_brownian(2, np.linspace(0, 1, 6), 3)
    write_paths_csv(tmp_path / "p.csv", p)
    q = read_paths_csv(tmp_path / "p.csv")
    assert np.array_equal(p.values, q.values) and np.array_equal(p.times, q.times)


def _model(grid, level=1.0):
    phi = build_flat_spatial(grid, [[-4.0], [4.0]], 5)
    return PerturbationModel(grid, (phi,), constant_paths([level], 0.0, 1.0), 5), phi


def test_coefficients_match_definition(grid):
    model, phi = _model(grid)
    c = assemble_coefficients(model, 0.5)
    assert np.max(np.abs(c.a1[0] - 2j * phi.grad[0])) < 1e-12
    assert np.all(c.a1[0].real == 0)
    assert np.max(np.abs(c.a0.real + phi.grad[0] ** 2)) < 1e-10
    assert np.max(np.abs(c.a0.imag - phi.lap)) < 1e-10


def test_zero_paths_give_zero_coefficients(grid):
    model, _ = _model(grid, 0.0)
    c = assemble_coefficients(model, 0.5)
    assert np.all(c.a1[0] == 0) and np.all(c.a0 == 0)
    free = assemble_coefficients(PerturbationModel(grid), 0.5)
    assert np.all(free.a0 == 0)


def test_model_checks_counts(grid):
    phi = build_flat_spatial(grid, [[0.0]], 5)
    with pytest.raises(ValueError):
        PerturbationModel(grid, (phi,), None)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.integers(0, 1000))
def test_doss_sussman_is_unitary_and_invertible(level, seed):
    g = make_grid(1, 20, 512)
    model, _ = _model(g, level)
    rng = np.random.default_rng(seed)
    v = ComplexField(g, rng.standard_normal(512) + 1j * rng.standard_normal(512))
    X = doss_sussman(v, model, 0.3)
    assert l2_norm(g, X.values) == pytest.approx(l2_norm(g, v.values), rel=1e-12)
    back = doss_sussman(X, model, 0.3, "inverse")
    assert np.max(np.abs(back.values - v.values)) < 1e-12


def test_doss_sussman_identity_without_noise(grid):
    model, _ = _model(grid, 0.0)
    v = ComplexField(grid, np.exp(-grid.x1d ** 2))
    assert np.array_equal(doss_sussman(v, model, 0.2).values, v.values)
    with pytest.raises(ValueError):
        doss_sussman(v, model, 0.2, "sideways")


def test_sobolev_norm_of_plane_wave():
    g = make_grid(1, math.pi, 64)
    u = np.exp(3j * g.x1d)
    assert sobolev_norm(g, u, 1) == pytest.approx(math.sqrt(10 * 2 * math.pi))
    assert sobolev_norm(g, np.zeros(64), 2) == 0
