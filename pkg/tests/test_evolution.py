import numpy as np
import pytest

from psuper.acceptance import _ground_state, m_field, riesz_barenblatt
from psuper.closed_forms import Barenblatt, Separable, sample
from psuper.evolution import (BoundaryOrderError, EvolutionError, EvolutionProblem, RefusedError,
                              blowup_times, classify, comparison_check, evolve, lateral_from,
                              riesz_measure, step_implicit)
from psuper.grid import Grid, ScalarField, SpaceTimeField, SpaceTimeGrid
from psuper.variational import SolverFailure

B = Barenblatt(3.0, 1)


@pytest.mark.parametrize("dt", [1e-4, 1.0, 1e4])
def test_step_keeps_constants(dt):
    g = Grid((0, 0), (1, 1), (8, 8))
    u, _ = step_implicit(ScalarField(g, np.full(g.shape, 2.5)), 3.0, dt, 2.5)
    assert np.max(np.abs(u.values - 2.5)) < 1e-12


def test_step_keeps_affine():
    g = Grid(0, 1, 32)
    f = ScalarField(g, 1 - 3 * g.axis(0))
    u, _ = step_implicit(f, 4.0, 0.1, f)
    assert np.max(np.abs(u.values - f.values)) < 1e-9


def test_step_separable_local_error_is_second_order():
    U = _ground_state(128).U
    errs = []
    for dt in (1 / 16, 1 / 32, 1 / 64):
        u, _ = step_implicit(U, 3.0, dt)
        exact = U.values * (1 + dt) ** -1.0
        errs.append(np.max(np.abs(u.values - exact)) / exact.max())
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios > 3.5) and np.all(ratios < 4.5)


def test_evolve_zero_stays_zero():
    st_ = SpaceTimeGrid(Grid((0, 0), (1, 1), (8, 8)), 0, 1, 10)
    u, rep = evolve(EvolutionProblem(st_, 3.0, ScalarField(st_.space, np.zeros((9, 9)))))
    assert np.all(u.values == 0) and rep.converged


def test_evolve_tracks_barenblatt():
    st_ = SpaceTimeGrid(Grid(-4.5, 9.0, 2304), 1.0, 2.0, 256)  # h = dt = 1/256
    exact = sample(B, st_)
    u, rep = evolve(EvolutionProblem(st_, 3.0, exact.slice(0), lateral_from(exact)))
    err = np.max(np.abs(u.values - exact.values)) / exact.values.max()
    assert err <= 0.02
    assert err < 1e-3  # measured 1.6e-4
    assert rep.extra["dissipation_checked"] and rep.extra["dissipation_ok"]
    mass = u.values.sum(axis=1) * st_.space.cell_volume
    assert abs(mass[-1] / mass[0] - 1) < 0.01


def test_evolve_separable_decay_exponent():
    U = _ground_state(128).U
    st_ = SpaceTimeGrid(U.grid, 0.0, 1.0, 128)
    V = Separable(U, -1.0, 3.0)
    u, _ = evolve(EvolutionProblem(st_, 3.0, sample(V, st_).slice(0)))
    amp = u.values.max(axis=1)
    slope = np.polyfit(np.log(1 + st_.times), np.log(amp), 1)[0]
    assert slope == pytest.approx(-1 / (3.0 - 2), rel=0.05)


def test_evolve_reports_failed_step():
    st_ = SpaceTimeGrid(Grid(0, 1, 16), 0, 1, 4)
    u0 = ScalarField(st_.space, np.sin(np.pi * st_.space.axis(0)))
    with pytest.raises(SolverFailure) as exc:
        evolve(EvolutionProblem(st_, 4.0, u0), cap=1)
    assert exc.value.report.extra["failed_step"] == 1


def test_evolution_problem_validation():
    st_ = SpaceTimeGrid(Grid(0, 1, 4), 0, 1, 4)
    with pytest.raises(EvolutionError, match="p=1.5"):
        EvolutionProblem(st_, 1.5, ScalarField(st_.space, np.zeros(5)))
    with pytest.raises(EvolutionError):
        EvolutionProblem(st_, 3.0, ScalarField(Grid(0, 2, 4), np.zeros(5)))


# ----------------------------------------------------------------------------
# comparison


def _pair():
    st_ = SpaceTimeGrid(Grid(0, 1, 8), 0, 1, 4)
    rng = np.random.default_rng(0)
    return st_, SpaceTimeField(st_, rng.normal(size=st_.shape))


def test_comparison_trivial_cases():
    st_, a = _pair()
    assert comparison_check(a, a)["violation"] == 0
    b = SpaceTimeField(st_, a.values + 1)
    assert comparison_check(a, b)["violation"] == pytest.approx(1.0)


def test_comparison_names_the_violated_face():
    st_, a = _pair()
    v = a.values + 1
    v[0, 3] = a.values[0, 3] - 1
    with pytest.raises(BoundaryOrderError) as exc:
        comparison_check(a, SpaceTimeField(st_, v))
    assert exc.value.face == "initial"
    v = a.values + 1
    v[2, 0] = a.values[2, 0] - 1
    with pytest.raises(BoundaryOrderError) as exc:
        comparison_check(a, SpaceTimeField(st_, v))
    assert exc.value.face == "lateral"


def test_comparison_of_evolved_zero_and_barenblatt():
    st_ = SpaceTimeGrid(Grid(-4, 8, 256), 1.0, 1.5, 64)
    exact = sample(B, st_)
    sup, _ = evolve(EvolutionProblem(st_, 3.0, exact.slice(0), lateral_from(exact)))
    sub, _ = evolve(EvolutionProblem(st_, 3.0, ScalarField(st_.space, np.zeros(257))))
    assert comparison_check(sub, sup, 3.0)["violation"] > -10 * 1e-8


# ----------------------------------------------------------------------------
# classification


def test_classify_barenblatt_and_bounded():
    st_ = SpaceTimeGrid(Grid(-2, 4, 128), 0, 1, 256)
    v = classify(sample(B, st_), 3.0)
    assert v.tag == "ClassB" and v.t0 is None
    assert classify(SpaceTimeField(st_, np.full(st_.shape, 3.0)), 3.0).tag == "ClassB"


def test_classify_m_field():
    mf = m_field()
    v = classify(mf, 3.0)
    assert v.tag == "ClassM"
    assert abs(v.t0) <= mf.stgrid.dt
    assert v.evidence["exponent"] == pytest.approx(-1.0, rel=0.1)
    assert v.evidence["lower_bound_constant"] > 0


def test_classify_m_field_p4():
    mf = m_field(p=4.0)
    v = classify(mf, 4.0)
    assert v.tag == "ClassM" and v.evidence["exponent"] == pytest.approx(-0.5, rel=0.1)


def test_blowup_time_is_common_to_interior_nodes():
    mf = m_field()
    t = blowup_times(mf, 3.0)[1:-1]
    assert not np.isnan(t).any()
    assert np.all(np.abs(t - t[0]) <= mf.stgrid.dt)
    assert abs(t[0]) <= mf.stgrid.dt


@pytest.mark.parametrize("e", [0.5, 0.75, 1.5])
def test_classify_wrong_rate_is_indeterminate(e):
    U = _ground_state(64).U
    st_ = SpaceTimeGrid(U.grid, -0.5, 1.0, 192)
    t = st_.times[:, None]
    vals = np.where(t > 0, U.values[None] * np.where(t > 0, t, 1.0) ** -e, 0.0)
    assert classify(SpaceTimeField(st_, vals), 3.0).tag == "indeterminate"


@pytest.mark.parametrize("s", [0.5, 2.0, 10.0])
def test_classify_invariant_under_barenblatt_rescaling(s):
    st_ = SpaceTimeGrid(Grid(-2, 4, 128), 0, 1, 256)
    X = st_.space.coords()
    vals = np.array([s ** (1 / B.lam) * B.evaluate(s ** (1 / B.lam) * X, s * t) for t in st_.times])
    assert classify(SpaceTimeField(st_, vals), 3.0).tag == "ClassB"


# ----------------------------------------------------------------------------
# Riesz measure


def test_measure_of_evolved_solution_is_small():
    g = Grid(0, 1, 64)
    st_ = SpaceTimeGrid(g, 0.0, 0.25, 32)
    u, _ = evolve(EvolutionProblem(st_, 3.0, ScalarField(g, np.sin(np.pi * g.axis(0)))))
    mu = riesz_measure(u, 3.0)
    assert mu.total <= 1e-8 * 0.25


def test_measure_of_time_step_sits_on_the_jump_layer():
    g = Grid(0, 1, 16)
    st_ = SpaceTimeGrid(g, 0, 1, 20)
    vals = np.where(st_.times[:, None] > 0.5, 1.0, 0.0) * np.ones(st_.shape)
    mu = riesz_measure(SpaceTimeField(st_, vals), 3.0)
    layers = np.nonzero(mu.raw.sum(axis=1))[0] + 1
    assert list(layers) == [11] and st_.times[10] <= 0.5 < st_.times[11]
    # interior nodes carry the whole mass: 15 control volumes of width 1/16
    assert mu.total == pytest.approx(15 / 16)
    assert mu.clamped_count == 0


def test_measure_of_barenblatt_concentrates():
    v = riesz_barenblatt(1 / 32)
    mu = riesz_measure(v, 3.0)
    h = 1 / 32
    assert mu.concentration([0.0], 1.5 * h) >= 0.95
    assert mu.signed_total == pytest.approx(2.9727, rel=1e-3)
    assert mu.total >= mu.signed_total


def test_measure_refuses_class_m():
    with pytest.raises(RefusedError):
        riesz_measure(m_field(), 3.0)


def test_measure_rows_and_report():
    g = Grid(0, 1, 4)
    st_ = SpaceTimeGrid(g, 0, 1, 4)
    vals = np.where(st_.times[:, None] > 0.5, 1.0, 0.0) * np.ones(st_.shape)
    mu = riesz_measure(SpaceTimeField(st_, vals), 3.0)
    rows = list(mu.rows())
    assert sum(r[2] for r in rows) == pytest.approx(mu.total)
    assert set(mu.report()) >= {"total", "clamped_count", "clamped_mass"}
