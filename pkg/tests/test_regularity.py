import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from psuper.acceptance import BARENBLATT, caccioppoli_cases, level_set_field, LEVEL_HEIGHTS
from psuper.closed_forms import Fundamental, MonotoneTime, sample
from psuper.grid import Grid, ScalarField, SpaceTimeField, SpaceTimeGrid, TestFunction
from psuper.regularity import (CylinderError, RefinementLadder, RegularityError, caccioppoli_check,
                               field_probe, harnack_ratio, harnack_report, level_set_scaling,
                               loglog_slope, summability_probe, summability_sweep, verdict_for)


def test_verdict_thresholds():
    assert verdict_for(0.25) == "divergent"
    assert verdict_for(0.05) == "convergent"
    assert verdict_for(0.15) == "indeterminate"
    assert loglog_slope([1, 2, 4], [1, 4, 16])[0] == pytest.approx(2.0)


def test_ladder_needs_three_levels():
    with pytest.raises(RegularityError):
        RefinementLadder(((0, 1),), 0.1, levels=2)


@pytest.fixture(scope="module")
def function_sweep():
    ladder = RefinementLadder(((-1.0, 1.0),), 1 / 64, levels=4, time_range=(0.0, 1.0))
    return {r.q: r for r in summability_sweep(BARENBLATT, "function", [1, 2, 3, 4], ladder)}


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_barenblatt_function_below_threshold_converges(function_sweep, q):
    # threshold p - 1 + p/n = 5
    assert function_sweep[q].verdict == "convergent"


def test_probe_of_constant_field_is_flat():
    ladder = RefinementLadder(((0.0, 1.0),), 1 / 16, levels=3, time_range=(0.0, 1.0))
    const = MonotoneTime(1, "step", t_jump=-1.0, height=2.0)
    for q in (0.5, 3.0, 9.0):
        r = summability_probe(const, "function", q, ladder)
        assert r.verdict == "convergent" and abs(r.slope) < 1e-6
        assert r.integrals[0] == pytest.approx(2.0 ** q, rel=1e-9)


def test_probe_report_keeps_raw_data():
    ladder = RefinementLadder(((-0.5, 0.5),) * 3, 1 / 8, levels=3)
    r = summability_probe(Fundamental(2.5, 3), "function", 11.0, ladder)
    d = r.to_dict()
    assert len(d["spacings"]) == 3 and len(d["integrals"]) == 3
    assert d["thresholds"] == {"divergent": 0.2, "convergent": 0.1}
    assert len(list(r.csv_rows())) == 3


def test_field_probe_on_sampled_levels():
    fields = []
    for n in (16, 32, 64):
        g = Grid(0, 1, n).midpoint_grid()
        fields.append(ScalarField(g, g.axis(0) ** -0.5))
    assert field_probe(fields, "function", 1.0).verdict == "convergent"
    assert field_probe(fields, "function", 3.0).verdict == "divergent"


# ----------------------------------------------------------------------------
# level sets


def test_level_sets_of_barenblatt():
    fit = level_set_scaling(level_set_field(), LEVEL_HEIGHTS)
    assert fit.exponent == pytest.approx(-5.0, rel=0.15)


def test_level_sets_of_fundamental():
    g = Grid((-1,) * 3, (2,) * 3, (128,) * 3)
    f = sample(Fundamental(2.5, 3), g, extended=True)
    fit = level_set_scaling(f, [2 ** (k / 4) for k in range(5)])
    # stationary analogue: -n(p-1)/(n-p) = -9
    assert fit.exponent == pytest.approx(-9.0, rel=0.15)


def test_level_sets_reject_bounded_fields():
    g = Grid((0, 0), (1, 1), (16, 16))
    with pytest.raises(RegularityError):
        level_set_scaling(ScalarField(g, np.ones(g.shape)), [1, 2, 4, 8])


def test_level_sets_need_four_heights():
    g = Grid((-1,) * 3, (2,) * 3, (32,) * 3)
    f = sample(Fundamental(2.5, 3), g, extended=True)
    with pytest.raises(RegularityError):
        level_set_scaling(f, [1, 2, 4])


# ----------------------------------------------------------------------------
# Caccioppoli


def test_caccioppoli_constant_field():
    g = Grid((0, 0), (1, 1), (16, 16))
    r = caccioppoli_check(ScalarField(g, np.full(g.shape, 3.0)), TestFunction(((0.2, 0.8),) * 2), 3.0,
                          "elliptic_bounded")
    assert r.left == 0 and r.ratio == 0 and r.passes


def test_caccioppoli_log_needs_positive_field():
    g = Grid((0, 0), (1, 1), (16, 16))
    with pytest.raises(RegularityError):
        caccioppoli_check(ScalarField(g, g.coords()[0] - 0.5), TestFunction(((0.2, 0.8),) * 2), 3.0,
                          "elliptic_log")


def test_caccioppoli_parabolic_needs_bound():
    st_ = SpaceTimeGrid(Grid(0, 1, 16), 0, 1, 16)
    v = SpaceTimeField(st_, np.full(st_.shape, 2.0))
    with pytest.raises(RegularityError):
        caccioppoli_check(v, TestFunction(((0.2, 0.8),), (0.2, 0.8)), 3.0, "parabolic", L=1.0)


CASES = caccioppoli_cases()


@given(st.integers(0, len(CASES) - 1))
def test_caccioppoli_ratio_never_exceeds_bound(i):
    v, z, p, variant, L = CASES[i]
    assert caccioppoli_check(v, z, p, variant, L).passes


def test_caccioppoli_on_capped_fundamental():
    g = Grid((-1, -1), (2, 2), (64, 64))
    capped = ScalarField(g, np.minimum(Fundamental(3.0, 2, c=-1.0).evaluate(g.coords()), -0.1))
    r = caccioppoli_check(capped, TestFunction(((-0.5, 0.5),) * 2), 3.0, "elliptic_bounded")
    assert 0 < r.ratio <= 1 + 10 * g.spacing[0]


# ----------------------------------------------------------------------------
# Harnack


def test_harnack_of_constant_is_one():
    st_ = SpaceTimeGrid(Grid(-2, 4, 64), 0, 10, 100)
    u = SpaceTimeField(st_, np.full(st_.shape, 2.0))
    assert harnack_ratio(u, [0.0], 5.0, 0.3, 0.5, 3.0) == 1.0


@pytest.fixture(scope="module")
def barenblatt_cylinder():
    st_ = SpaceTimeGrid(Grid(-4.0, 8.0, 512), 0.9, 17.0, 16100)
    return sample(BARENBLATT, st_)


def test_harnack_self_similar(barenblatt_cylinder):
    a = harnack_ratio(barenblatt_cylinder, [0.0], 1.0, 0.5, 0.1, 3.0)
    b = harnack_ratio(barenblatt_cylinder, [0.0], 16.0, 1.0, 0.1, 3.0)
    assert a == pytest.approx(b, rel=0.02)
    assert math.isfinite(a) and a >= 1


@pytest.mark.parametrize("s", [0.25, 4.0])
def test_harnack_amplitude_scaling(s):
    # s B(x, s^{p-2} t) is a solution with theta scaled by s^{-(p-2)}: same ratio at the same R
    p = 3.0
    st_ = SpaceTimeGrid(Grid(-4.0, 8.0, 512), 0.9 / s, 2.0 / s, 2000)
    X = st_.space.coords()
    vals = np.array([s * BARENBLATT.evaluate(X, s ** (p - 2) * t) for t in st_.times])
    scaled = SpaceTimeField(st_, vals)
    base = SpaceTimeGrid(Grid(-4.0, 8.0, 512), 0.9, 2.0, 2000)
    ref = harnack_report(sample(BARENBLATT, base), [0.0], 1.0, 0.5, 0.1, p)
    got = harnack_report(scaled, [0.0], 1.0 / s, 0.5, 0.1, p)
    assert got["theta"] == pytest.approx(ref["theta"] / s, rel=1e-9)
    assert got["ratio"] == pytest.approx(ref["ratio"], rel=0.02)


def test_harnack_names_the_escaping_face(barenblatt_cylinder):
    with pytest.raises(CylinderError) as exc:
        harnack_ratio(barenblatt_cylinder, [0.0], 1.0, 1.5, 0.1, 3.0)
    assert exc.value.face == "x0-lower"
    with pytest.raises(CylinderError) as exc:
        harnack_ratio(barenblatt_cylinder, [0.0], 1.0, 0.5, 50.0, 3.0)
    assert exc.value.face.startswith("t-")
