import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from psuper.acceptance import corrupted_barenblatt
from psuper.grid import Grid, ScalarField, SpaceTimeField, SpaceTimeGrid
from psuper.mollify import (MollifyError, brute_force_envelope, ess_liminf_representative,
                            inf_convolution, mollifier_defect, time_mollify)

finite = st.floats(-50, 50, allow_nan=False)


@st.composite
def fields(draw):
    dim = draw(st.integers(1, 3))
    cells = draw(st.lists(st.integers(1, 6), min_size=dim, max_size=dim))
    ext = draw(st.lists(st.floats(0.1, 5), min_size=dim, max_size=dim))
    vals = draw(arrays(float, tuple(c + 1 for c in cells),
                       elements=st.one_of(finite, st.just(math.inf))))
    return ScalarField(Grid([0.0] * dim, ext, cells), vals, extended=True)


@given(fields(), st.floats(1e-3, 10))
def test_envelope_equals_brute_force_bitwise(f, eps):
    assert np.array_equal(inf_convolution(f, eps).field.values, brute_force_envelope(f, eps))


@given(fields(), st.floats(1e-3, 10), st.floats(1.0, 3.0))
def test_envelope_below_input_and_monotone(f, eps, factor):
    a = inf_convolution(f, eps).field.values
    b = inf_convolution(f, eps * factor).field.values
    assert np.all(a <= f.values)
    assert np.all(b <= a)


def test_envelope_of_spacetime_field_matches_brute_force():
    rng = np.random.default_rng(5)
    st_ = SpaceTimeGrid(Grid((0, 0), (1, 2), (5, 4)), 0.0, 0.5, 6)
    f = SpaceTimeField(st_, rng.normal(size=st_.shape))
    assert np.array_equal(inf_convolution(f, 0.05).field.values, brute_force_envelope(f, 0.05))


@pytest.mark.parametrize("eps", [0.01, 1.0, 100.0])
def test_envelope_of_constant(eps):
    f = ScalarField(Grid((0, 0), (1, 1), (7, 5)), np.full((8, 6), 2.5))
    assert np.all(inf_convolution(f, eps).field.values == 2.5)


def test_envelope_of_abs_is_huber():
    g = Grid(-1, 2, 2000)
    x = g.axis(0)
    eps = 0.2
    env = inf_convolution(ScalarField(g, np.abs(x)), eps).field.values
    huber = np.where(np.abs(x) <= eps, x * x / (2 * eps), np.abs(x) - eps / 2)
    # the grid minimizer sits within one cell of the continuum one
    assert np.max(np.abs(env - huber)) <= g.spacing[0] ** 2 / (2 * eps)


@given(arrays(float, 30, elements=finite), st.floats(0.01, 5))
def test_envelope_minus_quadratic_is_concave(vals, eps):
    g = Grid(-1, 2, 29)
    x = g.axis(0)
    w = inf_convolution(ScalarField(g, vals), eps).field.values - x * x / (2 * eps)
    scale = 1 + np.max(np.abs(w))
    assert np.all(np.diff(w, 2) <= 1e-12 * scale)


@given(arrays(float, 41, elements=finite), st.floats(0.01, 2))
def test_envelope_semigroup_on_node_minimizers(vals, eps):
    g = Grid(0, 1, 40)
    x = g.axis(0)
    f = ScalarField(g, vals)
    twice = inf_convolution(inf_convolution(f, eps).field, eps).field.values
    once = inf_convolution(f, 2 * eps).field.values
    tol = 1e-12 * (1 + np.max(np.abs(vals)) + 1 / eps)
    assert np.all(twice >= once - tol)
    # where the direct minimizer is an even number of cells away, the midpoint is a node
    cost = vals[None, :] + (x[:, None] - x[None, :]) ** 2 / (4 * eps)
    j = np.argmin(cost, axis=1)
    even = (np.arange(41) - j) % 2 == 0
    assert np.allclose(twice[even], once[even], rtol=0, atol=tol)


def test_valid_mask_and_margin():
    g = Grid((0, 0), (1, 1), (10, 10))
    f = ScalarField(g, np.full(g.shape, 0.5))
    r = inf_convolution(f, 0.04)
    assert r.shrink_margin == pytest.approx(math.sqrt(2 * 0.5 * 0.04))
    X = g.coords()
    dist = np.minimum.reduce([X[0], 1 - X[0], X[1], 1 - X[1]])
    assert np.array_equal(r.valid_mask, dist > r.shrink_margin)
    inf = ScalarField(g, np.where(X[0] > 0.5, math.inf, 0.0), extended=True)
    assert not inf_convolution(inf, 0.1).valid_mask.any()


def test_envelope_errors():
    f = ScalarField(Grid(0, 1, 2), [0.0, 1.0, 2.0])
    with pytest.raises(MollifyError):
        inf_convolution(f, 0.0)


# ----------------------------------------------------------------------------
# time mollifier


def _st():
    return SpaceTimeGrid(Grid(0, 1, 4), 0.0, 2.0, 200)


@pytest.mark.parametrize("sigma", [0.05, 0.5, 5.0])
def test_mollifier_of_constant(sigma):
    st_ = _st()
    u = SpaceTimeField(st_, np.full(st_.shape, 3.0))
    got = time_mollify(u, sigma).values
    want = 3.0 * (1 - np.exp(-(st_.times - st_.t0) / sigma))
    np.testing.assert_allclose(got, np.broadcast_to(want[:, None], got.shape), rtol=1e-12, atol=1e-14)


def test_mollifier_of_zero():
    st_ = _st()
    assert np.all(time_mollify(SpaceTimeField(st_, np.zeros(st_.shape)), 1.0).values == 0)


@given(arrays(float, (201, 5), elements=st.floats(-10, 10)), st.floats(0.001, 10))
def test_mollifier_is_a_contraction(vals, sigma):
    u = SpaceTimeField(_st(), vals)
    assert np.max(np.abs(time_mollify(u, sigma).values)) <= np.max(np.abs(vals)) * (1 + 1e-12)


@pytest.mark.parametrize("sigma", [0.01, 0.1, 1.0])
def test_mollifier_identity_defect_is_order_dt(sigma):
    st_ = SpaceTimeGrid(Grid(0, 1, 4), 0.0, 1.0, 1000)
    u = SpaceTimeField(st_, np.broadcast_to(np.sin(3 * st_.times)[:, None], st_.shape).copy())
    d = mollifier_defect(u, time_mollify(u, sigma), sigma)
    assert d <= 5 * st_.dt
    # half-step centred defect of the trapezoid recurrence: O((dt/sigma)^2)
    assert d <= (st_.dt / sigma) ** 2


def test_mollifier_rejects_bad_sigma():
    with pytest.raises(MollifyError):
        time_mollify(SpaceTimeField(_st(), np.zeros(_st().shape)), -1.0)


# ----------------------------------------------------------------------------
# essential liminf


def test_repair_keeps_clean_nodes_and_ignores_corruption():
    clean, bad, mask = corrupted_barenblatt()
    rep = ess_liminf_representative(bad, mask).values
    assert np.array_equal(rep[~mask], clean.values[~mask])
    assert np.array_equal(rep, ess_liminf_representative(clean, mask).values)
    assert np.all(rep[mask] <= clean.values[mask] + 1e-12 * clean.values.max())
    assert np.all(rep > -10)


def test_repair_with_empty_mask_is_identity():
    f = ScalarField(Grid(0, 1, 4), [3.0, 1.0, 2.0, 0.0, 5.0])
    assert np.array_equal(ess_liminf_representative(f, np.zeros(5, bool)).values, f.values)


def test_repair_is_idempotent():
    rng = np.random.default_rng(3)
    f = ScalarField(Grid((0, 0), (1, 1), (9, 9)), rng.normal(size=(10, 10)))
    mask = rng.random((10, 10)) < 0.1
    once = ess_liminf_representative(f, mask)
    assert np.array_equal(ess_liminf_representative(once, mask).values, once.values)


def test_repair_piecewise_constant_exact():
    g = Grid(0, 1, 20)
    vals = np.where(g.axis(0) < 0.5, 1.0, 3.0)
    mask = np.zeros(21, bool)
    mask[[3, 15]] = True
    bad = ScalarField(g, np.where(mask, -7.0, vals))
    assert np.array_equal(ess_liminf_representative(bad, mask).values, vals)


def test_repair_past_only_takes_pre_jump_value():
    st_ = SpaceTimeGrid(Grid(0, 1, 8), 0.0, 1.0, 10)
    k_star = 5
    vals = np.where(np.arange(11)[:, None] >= k_star, 2.0, 1.0) * np.ones(st_.shape)
    mask = np.zeros(st_.shape, bool)
    mask[k_star] = True  # the jump slice is the one whose value is in question
    rep = ess_liminf_representative(SpaceTimeField(st_, vals), mask, past_only=True).values
    assert np.all(rep[k_star] == 1.0)
    both = ess_liminf_representative(SpaceTimeField(st_, vals), mask).values
    assert np.all(both[k_star] == 1.0)


def test_repair_needs_a_clean_neighbour():
    g = Grid(0, 1, 10)
    mask = np.zeros(11, bool)
    mask[3:9] = True
    with pytest.raises(MollifyError):
        ess_liminf_representative(ScalarField(g, np.arange(11.0)), mask)
