import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsblowup.fields import l2_norm, make_grid
from nlsblowup.profiles import (BubbleSpec, ModulationState, ResolutionError, TrajectorySampler,
                                boundary_parameters, check_separation, eval_modulated,
                                eval_pseudoconformal, eval_soliton, gradient_norm, inverse_transform,
                                overlap_mask, pseudoconformal_transform)

MASS_Q = math.sqrt(3) * math.pi / 2


def test_bubble_spec_validation():
    with pytest.raises(ValueError):
        BubbleSpec(0.0, [0.0])
    with pytest.raises(ValueError):
        check_separation([BubbleSpec(1, [1.0]), BubbleSpec(1, [1.0])])


def test_pseudoconformal_value_at_origin(gs1, grid1):
    S = eval_pseudoconformal([BubbleSpec(1.0, [0.0])], gs1, grid1, 1.0, 0.0)
    i0 = np.argmin(np.abs(grid1.x1d))
    assert S.values[i0] == pytest.approx(3 ** 0.25 * np.exp(1j), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(-3, 3), st.floats(0.2, 0.9))
def test_pseudoconformal_mass_and_gradient_scaling(w, x, tau):
    gs = _gs1()
    g = make_grid(1, 20, 4096)
    spec = [BubbleSpec(w, [x])]
    S = eval_pseudoconformal(spec, gs, g, 1.0, 1.0 - tau).values
    assert l2_norm(g, S) ** 2 == pytest.approx(MASS_Q, rel=1e-8)
    # the chirp adds w|y|/2 to the scaled gradient:
    # ||grad S||^2 = ||Q'||^2 / (w tau)^2 + w^2 ||yQ||^2 / 4
    Q = gs.Q(np.abs(g.x1d)).astype(complex)
    dQ2 = gradient_norm(g, Q) ** 2
    yQ2 = float(np.sum(g.x1d ** 2 * np.abs(Q) ** 2)) * g.dx
    expected = dQ2 / (w * tau) ** 2 + w * w * yQ2 / 4
    assert gradient_norm(g, S) ** 2 == pytest.approx(expected, rel=1e-8)


_GS = {}


def _gs1():
    from nlsblowup.groundstate import ground_state
    return _GS.setdefault(1, ground_state(1))


def test_profile_resolution_guard(gs1):
    g = make_grid(1, 20, 256)
    with pytest.raises(ResolutionError):
        eval_pseudoconformal([BubbleSpec(1.0, [0.0])], gs1, g, 1.0, 0.99)


def test_soliton_stationary_case(gs1, grid1):
    W = eval_soliton([BubbleSpec(1.0, [0.0], 0.4, c=[0.0])], gs1, grid1, 0.0).values
    assert np.max(np.abs(W - gs1.Q(np.abs(grid1.x1d)) * np.exp(0.4j))) < 1e-14
    assert l2_norm(grid1, W) ** 2 == pytest.approx(MASS_Q, rel=1e-8)


def test_soliton_leaving_box_is_rejected(gs1, grid1):
    with pytest.raises(ValueError):
        eval_soliton([BubbleSpec(1.0, [1.0])], gs1, grid1, 19.0)


def test_modulated_reproduces_boundary_profile(gs1, grid1):
    spec = [BubbleSpec(1.0, [-4.0], 0.2), BubbleSpec(1.3, [4.0])]
    p = boundary_parameters(spec, 1.0, 0.6)
    U = eval_modulated(p, gs1, grid1)["U"].values
    S = eval_pseudoconformal(spec, gs1, grid1, 1.0, 0.6).values
    assert np.max(np.abs(U - S)) < 1e-8


def test_modulated_unit_parameters_give_q(gs1, grid1):
    p = ModulationState([1.0], [[0.0]], [[0.0]], [0.0], [0.0])
    m = eval_modulated(p, gs1, grid1)
    assert np.max(np.abs(m["U"].values - gs1.Q(np.abs(grid1.x1d)))) < 1e-14
    assert len(m["LambdaUk"]) == len(m["rhok"]) == 1


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(-2, 2), st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 6.3))
def test_modulated_mass_invariance(lam, a, b, gam, th):
    gs = _gs1()
    g = make_grid(1, 20, 4096)
    U = eval_modulated(ModulationState([lam], [[a]], [[b]], [gam], [th]), gs, g)["U"].values
    assert l2_norm(g, U) ** 2 == pytest.approx(MASS_Q, rel=1e-8)


def test_modulation_state_vector_round_trip():
    p = ModulationState([0.3, 0.4], [[1.0], [2.0]], [[0.1], [0.2]], [0.5, 0.6], [1.0, 2.0], 0.7)
    q = ModulationState.from_vector(p.to_vector(), 2, 1, 0.7)
    assert np.array_equal(q.to_vector(), p.to_vector())
    with pytest.raises(ValueError):
        ModulationState([-0.1], [[0.0]], [[0.0]], [0.0], [0.0])


def test_transform_maps_soliton_to_bubble(gs1):
    g = make_grid(1, 32, 4096)
    spec = [BubbleSpec(1.2, [0.7], 0.5)]
    C = pseudoconformal_transform(lambda s: eval_soliton(spec, gs1, g, s), g, 1.0, 0.4)
    S = eval_pseudoconformal(spec, gs1, g, 1.0, 0.4)
    assert np.max(np.abs(C.values - S.values)) < 1e-9


def test_transform_pair_is_an_inverse(gs1):
    g = make_grid(1, 32, 4096)
    x = g.x1d
    T = 1.0
    # a smooth test trajectory u(s, x), transformed and mapped back at t = 2
    u = lambda s: _field(g, np.exp(-(x - 0.1 * s) ** 2) * np.exp(0.3j * x + 0.2j * s))  # noqa: E731
    t = 2.0
    z_sampler = lambda s: pseudoconformal_transform(u, g, T, s)  # noqa: E731
    back = inverse_transform(z_sampler, g, T, t).values
    mask = overlap_mask(g, t) & (np.abs(x) < 20)
    assert np.max(np.abs(back - u(t).values)[mask]) < 1e-9


def test_transform_preserves_mass(gs1):
    g = make_grid(1, 32, 4096)
    spec = [BubbleSpec(1.0, [0.0], c=[0.0])]
    u = lambda s: eval_soliton(spec, gs1, g, s)  # noqa: E731
    C = pseudoconformal_transform(u, g, 1.0, 0.5)
    assert l2_norm(g, C.values) == pytest.approx(l2_norm(g, u(2.0).values), rel=1e-10)


def test_transform_undefined_at_blowup(gs1):
    g = make_grid(1, 10, 256)
    with pytest.raises(ValueError):
        pseudoconformal_transform(lambda s: g.zeros(), g, 1.0, 1.0)
    with pytest.raises(ValueError):
        inverse_transform(lambda s: g.zeros(), g, 1.0, 0.0)


def test_sampler_interpolates_and_guards_range():
    g = make_grid(1, 5, 64)
    s = TrajectorySampler([0.0, 1.0], [_field(g, np.zeros(64)), _field(g, np.ones(64))])
    assert np.allclose(s(0.25).values, 0.25)
    with pytest.raises(ValueError):
        s(1.5)


def _field(g, a):
    from nlsblowup.fields import ComplexField
    return ComplexField(g, a)
