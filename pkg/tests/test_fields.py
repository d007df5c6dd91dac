import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsblowup.fields import (ComplexField, fourier_interpolate, inner_product, make_grid, norms,
                              read_snapshot, spectral_gradient, spectral_laplacian, write_snapshot)


def test_grid_spacing_and_size():
    g = make_grid(1, 10, 2048)
    assert g.dx == pytest.approx(20 / 2048)
    assert g.x1d[0] == -10 and g.x1d[-1] == pytest.approx(10 - g.dx)
    assert make_grid(2, 10, 256).size == 65536


@pytest.mark.parametrize("N", [100, 32, 0])
def test_grid_rejects_bad_counts(N):
    with pytest.raises(ValueError):
        make_grid(1, 10, N)


def test_grid_rejects_bad_dimension_and_length():
    with pytest.raises(ValueError):
        make_grid(3, 10, 64)
    with pytest.raises(ValueError):
        make_grid(1, -1, 64)


def test_field_rejects_nonfinite_and_wrong_size():
    g = make_grid(1, 10, 64)
    with pytest.raises(FloatingPointError):
        ComplexField(g, np.full(64, np.nan))
    with pytest.raises(ValueError):
        ComplexField(g, np.zeros(63))


def test_gradient_of_constant_is_zero():
    g = make_grid(2, 5, 64)
    for d in spectral_gradient(ComplexField(g, np.full(g.shape, 3.0 + 1j))):
        assert np.max(np.abs(d.values)) < 1e-13


def test_gradient_of_sine_is_exact():
    L = 10.0
    g = make_grid(1, L, 256)
    x = g.x1d
    (d,) = spectral_gradient(ComplexField(g, np.sin(np.pi * x / L)))
    assert np.max(np.abs(d.values - np.pi / L * np.cos(np.pi * x / L))) < 1e-12


def test_gradient_and_laplacian_of_gaussian():
    g = make_grid(1, 10, 1024)
    x = g.x1d
    f = ComplexField(g, np.exp(-x * x))
    (d,) = spectral_gradient(f)
    assert np.max(np.abs(d.values + 2 * x * np.exp(-x * x))) < 1e-10
    lap = spectral_laplacian(f).values
    assert np.max(np.abs(lap - (4 * x * x - 2) * np.exp(-x * x))) < 1e-10


def test_inner_product_box_volume_and_ground_state_mass(gs1):
    g = make_grid(1, 10, 1024)
    one = ComplexField(g, np.ones(g.shape))
    assert inner_product(one, one) == pytest.approx(20.0)
    Q = gs1.Q_field(make_grid(1, 20, 4096))
    assert abs(inner_product(Q, Q).real / (math.sqrt(3) * math.pi / 2) - 1) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_inner_product_positive_and_hermitian(seed):
    g = make_grid(1, 5, 64)
    rng = np.random.default_rng(seed)
    f = ComplexField(g, rng.standard_normal(64) + 1j * rng.standard_normal(64))
    h = ComplexField(g, rng.standard_normal(64) + 1j * rng.standard_normal(64))
    ff = inner_product(f, f)
    assert ff.real >= 0 and abs(ff.imag) < 1e-12 * ff.real
    assert inner_product(f, h) == pytest.approx(np.conj(inner_product(h, f)))


def test_norms_of_zero_and_bump():
    g = make_grid(1, 10, 1024)
    z = norms(g.zeros())
    assert z.L2 == z.H1 == z.Sigma == 0 and z.Lp(4) == 0
    x = g.x1d
    bump = np.exp(-x ** 2 / 2) / math.pi ** 0.25  # unit mass
    n = norms(ComplexField(g, bump))
    assert n.L2 == pytest.approx(1.0, abs=1e-10)
    # |grad| of the bump: int x^2 e^{-x^2} / sqrt(pi) = 1/2
    assert n.H1 ** 2 == pytest.approx(1.5, abs=1e-10)


def test_fourier_interpolation_reproduces_band_limited_data():
    g = make_grid(1, math.pi, 64)
    u = np.cos(3 * g.x1d) + 0.5j * np.sin(5 * g.x1d)
    p = np.linspace(-2, 2, 17)
    assert np.max(np.abs(fourier_interpolate(g, u, [p]) - (np.cos(3 * p) + 0.5j * np.sin(5 * p)))) < 1e-12


def test_snapshot_round_trip(tmp_path):
    g = make_grid(2, 4, 64)
    rng = np.random.default_rng(0)
    f = ComplexField(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    write_snapshot(tmp_path / "s.nlsf", f, 0.25)
    back, t = read_snapshot(tmp_path / "s.nlsf")
    assert t == 0.25 and back.grid.compatible(g) and np.array_equal(back.values, f.values)


def test_snapshot_bad_magic(tmp_path):
    (tmp_path / "bad.nlsf").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "bad.nlsf")
