import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from psuper.closed_forms import (Barenblatt, Bump, ClosedFormError, CrandallZhang, Fundamental,
                                 MonotoneTime, Separable, eval_barenblatt, eval_crandall_zhang,
                                 eval_fundamental, eval_separable, from_config, sample, sample_at)
from psuper.formats import write_field
from psuper.grid import Grid, ScalarField, SpaceTimeGrid, TestFunction, lq_integral

B = Barenblatt(3.0, 1)


def test_barenblatt_vanishes_before_zero():
    assert eval_barenblatt(B, [0.3], -1.0) == 0.0
    assert eval_barenblatt(B, [0.0], 0.0) == 0.0


@pytest.mark.parametrize("C", [0.5, 1.0, 2.0])
def test_barenblatt_centre_value(C):
    # t = 1, x = 0: C^{(p-1)/(p-2)} = C^2 for p = 3
    assert eval_barenblatt(Barenblatt(3.0, 1, C), [0.0], 1.0) == pytest.approx(C ** 2, rel=1e-14)


def test_barenblatt_lambda_and_radius():
    assert B.lam == 4.0
    # k = (1/3) 4^{-1/2} = 1/6, r(1) = (C/k)^{2/3} = 6^{2/3}
    assert B.interface_radius(1.0) == pytest.approx(6 ** (2 / 3), rel=1e-14)
    r = B.interface_radius(1.0)
    assert eval_barenblatt(B, [r * 1.001], 1.0) == 0.0
    assert eval_barenblatt(B, [r * 0.999], 1.0) > 0.0


def test_barenblatt_rejects_bad_parameters():
    for kw in ({"p": 2.0, "n": 1}, {"p": 1.5, "n": 1}, {"p": 3.0, "n": 0}, {"p": 3.0, "n": 1, "C": 0}):
        with pytest.raises(ClosedFormError):
            Barenblatt(**kw)


@given(st.floats(0.1, 10), st.floats(-3, 3), st.floats(0.2, 3), st.sampled_from([1, 2, 3]),
       st.floats(2.2, 5))
def test_barenblatt_scaling_identity(s, x, t, n, p):
    b = Barenblatt(p, n)
    pt = np.array([x] + [0.3] * (n - 1))
    lhs = b.evaluate(pt, t)
    rhs = s ** (n / b.lam) * b.evaluate(s ** (1 / b.lam) * pt, s * t)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-300)


def test_barenblatt_front_doubles_over_lambda_scaling():
    g = Grid(-12, 24, 2400)
    h = g.spacing[0]

    def front(t):
        v = sample_at(B, g, t).values
        return g.axis(0)[np.nonzero(v)[0][-1]]
    assert abs(front(2 ** B.lam * 0.5) - 2 * front(0.5)) <= 2 * h


def test_barenblatt_mass_is_constant_in_time():
    g = Grid(-20, 40, 8000)
    m1 = lq_integral(sample_at(B, g, 1.0), 1)
    m2 = lq_integral(sample_at(B, g, 2.0), 1)
    assert m1 == pytest.approx(m2, rel=1e-5)
    assert m1 == pytest.approx(2.9719, rel=2e-3)  # reported, not prescribed


def test_fundamental_examples():
    assert eval_fundamental(2.0, 2, [1.0, 0.0]) == 0.0
    assert eval_fundamental(3.0, 2, [0.6, 0.8]) == pytest.approx(1.0, rel=1e-15)
    assert eval_fundamental(3.0, 2, [0.0, 0.0]) == 0.0
    assert eval_fundamental(2.5, 3, [0.0, 0.0, 0.0]) == math.inf
    # exponent (p - n)/(p - 1) = -1/3 for p = 2.5, n = 3
    assert eval_fundamental(2.5, 3, [1e-6, 0, 0]) == pytest.approx(1e2, rel=1e-12)
    assert eval_fundamental(3.0, 2, [0.25, 0.0], c=2.0) == pytest.approx(1.0)


def test_crandall_zhang_terms():
    one = CrandallZhang(2.5, 3, [[0, 0, 0]], [1.0])
    x = np.array([0.3, -0.2, 0.5])
    assert eval_crandall_zhang(one, x) == pytest.approx(eval_fundamental(2.5, 3, x), rel=1e-14)
    assert eval_crandall_zhang(one, [0, 0, 0]) == math.inf
    two = CrandallZhang(2.5, 3, [[-1, 0, 0], [1, 0, 0]], [2.0, 0.5])
    assert eval_crandall_zhang(two, [0, 0, 0]) == pytest.approx(2.5)
    assert eval_crandall_zhang(two, [0, 1, 0]) == pytest.approx(2.5 * 2 ** (-1 / 6))
    with pytest.raises(ClosedFormError):
        CrandallZhang(3.0, 3, [[0, 0, 0]], [1.0])


def test_crandall_zhang_rational_centres():
    cz = CrandallZhang.rational(2.5, 3, 5, [(-1, 1)] * 3)
    assert len(cz.centers) == 5 and all(c > 0 for c in cz.coeffs)


def _U():
    g = Grid(0, 1, 8)
    x = g.axis(0)
    return ScalarField(g, x * (1 - x))


def test_separable_examples():
    sep = Separable(_U(), 0.5, 3.0)
    assert eval_separable(sep, [0.25], -0.5) == 0.0
    assert eval_separable(sep, [0.0], 3.0) == 0.0
    a = eval_separable(sep, [0.375], 2.5)
    b = eval_separable(sep, [0.375], 1.5)
    assert a / b == pytest.approx(2 ** (-1 / (3 - 2)), rel=1e-14)
    # multilinear interpolation between nodes
    assert eval_separable(sep, [0.3125], 1.5) == pytest.approx((0.25 * 0.75 + 0.375 * 0.625) / 2)


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(2.1, 5))
def test_separable_ratio_law(a, b, p):
    sep = Separable(_U(), 0.0, p)
    r = eval_separable(sep, [0.5], a) / eval_separable(sep, [0.5], b)
    assert r == pytest.approx((a / b) ** (-1 / (p - 2)), rel=1e-12)


def test_separable_requires_zero_boundary():
    g = Grid(0, 1, 4)
    with pytest.raises(ClosedFormError):
        Separable(ScalarField(g, np.ones(5)), 0.0, 3.0)


def test_monotone_time_and_bump():
    m = MonotoneTime(1, "step", t_jump=0.5, height=2.0)
    assert m.evaluate(np.array([0.1]), 0.4) == 0.0 and m.evaluate(np.array([0.1]), 0.6) == 2.0
    lin = MonotoneTime(2, "linear", slope=3.0)
    assert lin.evaluate(np.array([0.1, 0.2]), 2.0) == 6.0
    b = Bump(TestFunction(((0, 1),)))
    assert b.evaluate(np.array([0.5])) == 1.0


def test_sample_negative_times_give_zero_field():
    st_ = SpaceTimeGrid(Grid(-2, 4, 16), -2, -1, 4)
    assert np.all(sample(B, st_).values == 0)


def test_sample_cap_matches_min():
    g = Grid((-1, -1), (2, 2), (8, 8))
    f = sample(Fundamental(2.0, 2), g, cap=1.5)
    r = g.radius()
    with np.errstate(divide="ignore"):
        want = np.minimum(-np.log(r), 1.5)
    assert np.array_equal(f.values, want)


def test_sample_infinite_needs_cap_or_extended():
    g = Grid((-1,) * 3, (2,) * 3, (4,) * 3)
    with pytest.raises(ClosedFormError, match="cap"):
        sample(Fundamental(2.5, 3), g)
    assert sample(Fundamental(2.5, 3), g, extended=True).values.max() == math.inf


def test_sampled_barenblatt_l1_is_stable_under_refinement():
    vals = []
    for n in (64, 128, 256):
        st_ = SpaceTimeGrid(Grid(-1, 2, n), 0, 1, n)
        vals.append(lq_integral(sample(B, st_).as_field(), 1, [(0, 1), (-1, 1)]))
    assert abs(vals[2] / vals[1] - 1) < abs(vals[1] / vals[0] - 1) + 1e-3
    assert abs(vals[2] / vals[1] - 1) < 0.05


def test_evaluators_are_pure():
    x = np.array([[0.1, 0.5, 1.7]])
    assert np.array_equal(B.evaluate(x, 1.3), B.evaluate(x, 1.3))


def test_config_round_trip(tmp_path):
    for cf in (B, Fundamental(2.5, 3, 2.0), CrandallZhang(2.5, 3, [[0, 0, 0]], [1.0]),
               MonotoneTime(1, "step", 1.0, 0.5, 2.0)):
        again = from_config(cf.to_config())
        x = np.array([[0.2] * cf.dim]).T
        assert np.array_equal(again.evaluate(x, 1.0), cf.evaluate(x, 1.0))
    write_field(tmp_path / "U.fld", _U())
    sep = from_config({"form": "separable", "U": "U.fld", "t0": 0.0, "p": 3.0}, tmp_path)
    assert eval_separable(sep, [0.5], 1.0) == 0.25
    with pytest.raises(ClosedFormError, match="missing parameter"):
        from_config({"form": "barenblatt", "p": 3})
    with pytest.raises(ClosedFormError, match="unknown form"):
        from_config({"form": "gaussian"})
