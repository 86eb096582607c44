"""The evolutionary p-Laplace equation as an implicit gradient flow.

Each backward Euler step is the proximal minimization

    argmin_w  sum vol (w - u)^2 / (2 dt) + E_p(w)

with the lateral data pinned, solved by the same minimizer as the elliptic
problems. On top of the time stepper sit the comparison check, the class
B / class M classifier and the discrete Riesz measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from psuper import stencil
from psuper.grid import (Grid, ScalarField, SpaceTimeField, SpaceTimeGrid, boxes_in)
from psuper.variational import SolveReport, SolverFailure, _minimize, _Objective


class EvolutionError(ValueError):
    pass


# ----------------------------------------------------------------------------
# time stepping


def _boundary_array(grid: Grid, boundary) -> np.ndarray:
    if boundary is None:
        return np.zeros(grid.shape)
    if isinstance(boundary, ScalarField):
        return np.asarray(boundary.values, float)
    b = np.asarray(boundary, float)
    if b.ndim == 0:
        return np.full(grid.shape, float(b))
    return b.reshape(grid.shape)


def step_implicit(u: ScalarField, p: float, dt: float, boundary=None, tol: float = 1e-8,
                  cap: int = 100_000, free: np.ndarray | None = None
                  ) -> tuple[ScalarField, SolveReport]:
    """One backward Euler step; ``boundary`` gives the values at the pinned nodes."""
    if not dt > 0:
        raise EvolutionError(f"dt must be positive, got {dt}")
    if p < 2:
        raise EvolutionError(f"unsupported exponent p={p}: need p >= 2")
    grid = u.grid
    free = grid.interior_mask() if free is None else free
    b = _boundary_array(grid, boundary)
    if not np.isfinite(b[~free]).all():
        raise EvolutionError("boundary data must be finite")
    w0 = np.where(free, u.values, b)
    obj = _Objective(grid, p, anchor=u.values, dt=dt)
    w, rep = _minimize(obj, w0, free, tol, cap, "implicit step")
    return ScalarField(grid, w), rep


@dataclass(frozen=True, eq=False)
class EvolutionProblem:
    """``lateral`` holds full slices of shape ``stgrid.shape``; only boundary nodes are read."""

    stgrid: SpaceTimeGrid
    p: float
    initial: ScalarField
    lateral: np.ndarray | None = None

    def __post_init__(self):
        if self.p < 2:
            raise EvolutionError(f"unsupported exponent p={self.p}: need p >= 2")
        if self.initial.grid != self.stgrid.space:
            raise EvolutionError("initial data lives on a different grid")
        if self.lateral is None:
            lat = np.zeros(self.stgrid.shape)
            lat[0] = self.initial.values
        else:
            lat = np.asarray(self.lateral, float).reshape(self.stgrid.shape)
        bnd = self.stgrid.space.boundary_mask()
        if not np.isfinite(lat[:, bnd]).all():
            raise EvolutionError("lateral boundary data must be finite")
        object.__setattr__(self, "lateral", lat)

    def lateral_is_constant(self) -> bool:
        bnd = self.stgrid.space.boundary_mask()
        b = self.lateral[:, bnd]
        return bool(np.all(b == b[0]))


def lateral_from(sample: SpaceTimeField) -> np.ndarray:
    """Lateral data taken from a sampled space-time field (e.g. a closed form)."""
    return np.asarray(sample.values, float)


def evolve(prob: EvolutionProblem, tol: float = 1e-8, cap: int = 100_000
           ) -> tuple[SpaceTimeField, SolveReport]:
    """Backward Euler over every step of the time grid.

    The report keeps the energy of every slice. When the lateral data is
    constant in time, it also checks the proximal dissipation inequality
    E(u_{k+1}) + sum vol (u_{k+1} - u_k)^2 / dt <= E(u_k) + 10 tol per step.
    """
    st = prob.stgrid
    grid = st.space
    free = grid.interior_mask()
    bnd = ~free
    vol = grid.cell_volume
    u = prob.initial.values.copy()
    u[bnd] = prob.lateral[0][bnd]
    out = np.empty(st.shape)
    out[0] = u
    energies = [stencil.energy(u, grid.spacing, prob.p)]
    total_it = 0
    worst_res = 0.0
    slack = []
    check = prob.lateral_is_constant()
    for k in range(st.steps):
        try:
            w, rep = step_implicit(ScalarField(grid, u), prob.p, st.dt, prob.lateral[k + 1],
                                   tol, cap, free)
        except SolverFailure as exc:
            exc.report.extra["failed_step"] = k + 1
            raise SolverFailure(f"step {k + 1}: {exc}", exc.report) from None
        w = w.values
        total_it += rep.iterations
        worst_res = max(worst_res, rep.residual)
        e = stencil.energy(w, grid.spacing, prob.p)
        if check:
            lhs = e + vol * float(np.sum((w - u) ** 2)) / st.dt
            slack.append(energies[-1] + 10 * tol - lhs)
        energies.append(e)
        out[k + 1] = w
        u = w
    extra = {"steps": st.steps, "slice_energies": energies}
    if check:
        extra["dissipation_checked"] = True
        extra["dissipation_min_slack"] = float(min(slack)) if slack else 0.0
        extra["dissipation_ok"] = bool(min(slack) >= 0) if slack else True
    else:
        extra["dissipation_checked"] = False
    report = SolveReport(True, energies[-1], total_it, worst_res, tol, energies, extra)
    return SpaceTimeField(st, out), report


# ----------------------------------------------------------------------------
# comparison


class BoundaryOrderError(EvolutionError):
    def __init__(self, message: str, face: str):
        super().__init__(message)
        self.face = face


def comparison_check(sub: SpaceTimeField, sup: SpaceTimeField, p: float | None = None) -> dict:
    """Worst interior value of sup - sub, after checking the parabolic boundary ordering."""
    if sub.stgrid != sup.stgrid:
        raise EvolutionError("fields live on different space-time grids")
    a, b = sub.values, sup.values
    if np.any(a[0] > b[0]):
        idx = np.unravel_index(np.argmax(a[0] - b[0]), a[0].shape)
        raise BoundaryOrderError(f"initial slice not ordered at node {tuple(map(int, idx))}",
                                 "initial")
    bnd = sub.grid.boundary_mask()
    if np.any(a[:, bnd] > b[:, bnd]):
        raise BoundaryOrderError("lateral boundary not ordered", "lateral")
    inner = sub.grid.interior_mask()
    diff = (b - a)[1:]
    diff = np.where(inner[None], diff, np.inf)
    k = int(np.argmin(diff))
    loc = np.unravel_index(k, diff.shape)
    worst = float(diff[loc])
    step = int(loc[0]) + 1
    node = tuple(int(i) for i in loc[1:])
    x = [float(sub.grid.axis(i)[j]) for i, j in enumerate(node)]
    return {"violation": worst, "step": step, "time": float(sub.stgrid.times[step]),
            "node": list(node), "x": x, "p": p}


# ----------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class ClassVerdict:
    tag: str  # "ClassB", "ClassM" or "indeterminate"
    t0: float | None = None
    evidence: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tag": self.tag, "t0": self.t0, "evidence": self.evidence}


DIVERGENT_SLOPE = 0.2
FLAT_SLOPE = 0.1
SLAB = 32
STRIDES = (1, 2, 4)
EXPONENT_TOL = 0.10
EXCLUDE_NEAR_T0 = 3


def _slice_integrals(v: SpaceTimeField, q: float, region) -> np.ndarray:
    w = v.grid.control_volumes(region)
    out = np.empty(len(v))
    for k in range(len(v)):
        a = np.abs(v.values[k])
        used = w > 0
        if np.isinf(a[used]).any():
            out[k] = np.inf
        else:
            out[k] = float(np.sum(a[used] ** q * w[used]))
    return out


def _trapezoid(y: np.ndarray, dt: float) -> float:
    if np.isinf(y).any():
        return math.inf
    return dt * (float(np.sum(y)) - 0.5 * (y[0] + y[-1]))


def _slab_slopes(I: np.ndarray, dt: float, slab: int) -> list[dict]:
    """Refinement slope of the time integral on each slab.

    A slab spans ``slab`` fine steps (a multiple of the largest stride).
    Coarser levels subsample its slices with strides 2 and 4, so every level
    integrates over exactly the same interval. The slope of log(integral)
    against log(1/stride) is fitted for each start offset below the largest
    stride, and the largest slope is kept.
    """
    res = []
    n = len(I) - 1
    x = np.log(1.0 / np.asarray(STRIDES, float))
    for a in range(0, n - slab + 1, slab):
        best = -math.inf
        first = []
        for off in range(STRIDES[-1]):
            lo, hi = a + off, a + off + slab
            if hi > n:
                break
            vals = [_trapezoid(I[lo: hi + 1: s], dt * s) for s in STRIDES]
            first = first or vals
            if any(math.isinf(v) for v in vals):
                best = math.inf
            elif min(vals) > 0:
                best = max(best, float(np.polyfit(x, np.log(vals), 1)[0]))
            else:
                best = max(best, 0.0)
        res.append({"start": a, "slope": best, "integrals": first})
    return res


def _fit_power(times, m, t0):
    """Least-squares fit of log m = c + b log(t - t0); returns (b, rms, c)."""
    x = np.log(times - t0)
    y = np.log(m)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    r = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(r * r))), float(coef[1])


def fit_blowup(times: np.ndarray, m: np.ndarray, exclude: int = EXCLUDE_NEAR_T0,
               min_points: int = 4):
    """Scan candidate blow-up times t0 among the slice times; best power-law fit wins.

    For a candidate at slice ``j``, the window is every later slice with a
    positive finite value, minus the ``exclude`` slices nearest to ``t0``.
    Returns ``(t0, exponent, rms, constant)`` or ``None``.
    """
    best = None
    ok = np.isfinite(m) & (m > 0)
    n = len(times)
    for j in range(n):
        sel = np.arange(j + 1 + exclude, n)
        sel = sel[ok[sel]]
        if sel.size < min_points or not ok[j + 1:].all():
            continue
        b, rms, c = _fit_power(times[sel], m[sel], times[j])
        if best is None or rms < best[2]:
            best = (float(times[j]), b, rms, c)
    return best


def classify(v: SpaceTimeField, p: float, margin: float = 0.1, slab: int = SLAB) -> ClassVerdict:
    """Decide between class B and class M at the available resolution.

    Step 1: the L^{p-2} integral over an interior box on every time slab,
    refined by time subsampling. All slopes below 0.1 certify class B; any
    slope above 0.2 flags divergence; anything else is indeterminate.
    Step 2 (divergent only): the spatial minimum over the box must follow
    (t - t0)^{-1/(p-2)} with the exponent within 10%.
    """
    if not p > 2:
        raise EvolutionError(f"classification needs p > 2, got p={p}")
    st = v.stgrid
    slab = min(slab, st.steps) // STRIDES[-1] * STRIDES[-1]
    if slab < 2 * STRIDES[-1]:
        return ClassVerdict("indeterminate", None, {"reason": "too few time slices"})
    region = boxes_in(st.space.box, margin)
    I = _slice_integrals(v, p - 2, region)
    slabs = _slab_slopes(I, st.dt, slab)
    slopes = [s["slope"] for s in slabs]
    smax = max(slopes)
    evidence = {"q": p - 2, "max_slab_slope": smax, "slab_slopes": slopes,
                "slab_length": slab}
    if smax < FLAT_SLOPE:
        return ClassVerdict("ClassB", None, evidence)
    if smax <= DIVERGENT_SLOPE:
        evidence["reason"] = "slab slope between the flat and divergent thresholds"
        return ClassVerdict("indeterminate", None, evidence)
    w = st.space.control_volumes(region) > 0
    inner = v.values[:, w]
    m = inner.min(axis=1)
    fit = fit_blowup(st.times, m)
    if fit is None:
        evidence["reason"] = "divergent, but no power-law blow-up fit"
        return ClassVerdict("indeterminate", None, evidence)
    t0, b, rms, c = fit
    target = -1.0 / (p - 2)
    evidence.update({"exponent": b, "target_exponent": target, "fit_rms": rms,
                     "lower_bound_constant": _lower_constant(st.times, m, t0, p)})
    inside = st.t0 < t0 < st.t1
    if inside and abs(b - target) <= EXPONENT_TOL * abs(target):
        return ClassVerdict("ClassM", t0, evidence)
    evidence["reason"] = ("blow-up time not inside the interval" if not inside
                          else "decay exponent outside tolerance")
    return ClassVerdict("indeterminate", t0, evidence)


def _lower_constant(times, m, t0, p):
    """min over later slices of m(t) (t - t0)^{1/(p-2)}: the constant in m >= c (t - t0)^{-1/(p-2)}."""
    sel = times > t0
    vals = m[sel] * (times[sel] - t0) ** (1.0 / (p - 2))
    vals = vals[np.isfinite(vals)]
    return float(vals.min()) if vals.size else math.nan


def blowup_times(v: SpaceTimeField, p: float, nodes: np.ndarray | None = None) -> np.ndarray:
    """Per-node blow-up time from the same power-law fit (NaN where no fit exists)."""
    st = v.stgrid
    mask = st.space.interior_mask() if nodes is None else np.asarray(nodes, bool)
    out = np.full(st.space.shape, np.nan)
    for idx in np.argwhere(mask):
        series = v.values[(slice(None),) + tuple(idx)]
        fit = fit_blowup(st.times, series)
        if fit is not None:
            out[tuple(idx)] = fit[0]
    return out


# ----------------------------------------------------------------------------
# Riesz measure


class RefusedError(EvolutionError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Nonnegative masses per time layer k = 1..steps and interior node.

    ``raw`` keeps the signed assembly; ``masses`` is its positive part.
    ``total`` is the sum of ``masses``; ``signed_total`` the sum of ``raw``.
    """

    stgrid: SpaceTimeGrid
    raw: np.ndarray
    masses: np.ndarray
    clamped_count: int
    clamped_mass: float
    most_negative: float

    @property
    def total(self) -> float:
        return float(np.sum(self.masses))

    @property
    def signed_total(self) -> float:
        return float(np.sum(self.raw))

    def concentration(self, center, radius: float, t_max: float | None = None,
                      signed: bool = True) -> float:
        """Share of the mass within ``radius`` of ``center`` (and up to ``t_max``)."""
        grid = self.stgrid.space
        near = grid.radius(center) < radius
        src = self.raw if signed else self.masses
        times = self.stgrid.times[1:]
        rows = np.ones(len(times), bool) if t_max is None else times <= t_max
        part = float(np.sum(src[rows][:, near]))
        whole = float(np.sum(src))
        return part / whole if whole != 0 else math.nan

    def report(self) -> dict:
        return {"total": self.total, "signed_total": self.signed_total,
                "clamped_count": self.clamped_count, "clamped_mass": self.clamped_mass,
                "most_negative": self.most_negative}

    def rows(self):
        """(time index, node index tuple, mass) for every nonzero mass."""
        for idx in np.argwhere(self.masses > 0):
            yield int(idx[0]) + 1, tuple(int(i) for i in idx[1:]), float(self.masses[tuple(idx)])


def riesz_measure(v: SpaceTimeField, p: float, verdict: ClassVerdict | None = None,
                  chunk: int = 4096) -> DiscreteMeasure:
    """Dual assembly of v_t - Delta_p v against the nodal hat functions.

    Layer k holds vol (v_k - v_{k-1}) + dt dE_p/dv(v_k) at each interior
    node: the backward Euler residual integrated over one step. Boundary
    nodes carry no test functions and get zero mass. Class M input is
    refused because such a field induces no Radon measure.
    """
    if p < 2:
        raise EvolutionError(f"unsupported exponent p={p}: need p >= 2")
    if np.isinf(v.values).any():
        raise RefusedError("field takes the value +inf; no Radon measure can be assembled")
    if verdict is None and p > 2:
        verdict = classify(v, p)
    if verdict is not None and verdict.tag == "ClassM":
        raise RefusedError("class M field: it cannot induce a Radon measure")
    st = v.stgrid
    grid = st.space
    vol = grid.cell_volume
    inner = grid.interior_mask()
    raw = np.zeros((st.steps,) + grid.shape)
    for k0 in range(1, st.steps + 1, chunk):
        k1 = min(st.steps + 1, k0 + chunk)
        for k in range(k0, k1):
            g = stencil.energy_gradient(v.values[k], grid.spacing, p)
            raw[k - 1] = vol * (v.values[k] - v.values[k - 1]) + st.dt * g
    raw[:, ~inner] = 0.0
    neg = raw < 0
    masses = np.where(neg, 0.0, raw)
    return DiscreteMeasure(st, raw, masses, int(neg.sum()), float(-raw[neg].sum()),
                           float(raw.min()) if raw.size else 0.0)
