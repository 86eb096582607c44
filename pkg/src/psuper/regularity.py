"""Refinement-ladder experiments: summability probes, level-set scaling,
Caccioppoli ratios and intrinsic Harnack ratios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from psuper.closed_forms import ClosedForm
from psuper.grid import (Grid, ScalarField, SpaceTimeField, TestFunction,
                         gradient)


class RegularityError(ValueError):
    pass


DIVERGENT = 0.2
CONVERGENT = 0.1


def verdict_for(slope: float, divergent: float = DIVERGENT, convergent: float = CONVERGENT) -> str:
    if slope > divergent:
        return "divergent"
    if slope < convergent:
        return "convergent"
    return "indeterminate"


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log y against log x and the rms residual."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    coef = np.polyfit(lx, ly, 1)
    r = ly - np.polyval(coef, lx)
    return float(coef[0]), float(np.sqrt(np.mean(r * r)))


# ----------------------------------------------------------------------------
# summability


@dataclass(frozen=True)
class RefinementLadder:
    """Spacings base_h / factor^k over a fixed region (and time interval).

    Samples sit at the cell midpoints of the region, so a point singularity
    at a cell corner is never hit. In space-time the time step is
    ``h ** dt_exponent`` rounded to divide the interval.
    """

    region: tuple
    base_h: float
    levels: int = 4
    factor: int = 2
    time_range: tuple | None = None
    dt_exponent: float = 2.0
    chunk: int = 4096

    def __post_init__(self):
        if self.levels < 3:
            raise RegularityError(f"a ladder needs at least 3 levels, got {self.levels}")
        if self.factor != 2:
            raise RegularityError("ladders halve the spacing (factor 2)")
        if not self.base_h > 0:
            raise RegularityError("base_h must be positive")
        object.__setattr__(self, "region", tuple(tuple(map(float, r)) for r in self.region))
        if self.time_range is not None:
            a, b = map(float, self.time_range)
            if not b > a:
                raise RegularityError("empty time range")
            object.__setattr__(self, "time_range", (a, b))

    @property
    def spacings(self) -> list[float]:
        return [self.base_h / self.factor ** k for k in range(self.levels)]

    def cell_grid(self, h: float) -> Grid:
        """Grid of the cell midpoints of the region at spacing ``h``."""
        cells = []
        for a, b in self.region:
            n = (b - a) / h
            if abs(n - round(n)) > 1e-9 * n:
                raise RegularityError(f"spacing {h} does not divide the region side {b - a}")
            cells.append(int(round(n)))
        mids = [(a + h / 2, b - h / 2) for a, b in self.region]
        if any(c < 3 for c in cells):
            raise RegularityError("region too small for the base spacing")
        return Grid.from_box(mids, [c - 1 for c in cells])

    def time_midpoints(self, h: float) -> tuple[np.ndarray, float]:
        a, b = self.time_range
        steps = max(1, int(round((b - a) / h ** self.dt_exponent)))
        dt = (b - a) / steps
        return a + (np.arange(steps) + 0.5) * dt, dt


@dataclass
class ProbeReport:
    q: float
    target: str
    spacings: list
    integrals: list
    slope: float
    verdict: str
    thresholds: dict = field(default_factory=lambda: {"divergent": DIVERGENT,
                                                     "convergent": CONVERGENT})

    def to_dict(self) -> dict:
        return {"q": self.q, "target": self.target, "spacings": self.spacings,
                "integrals": self.integrals, "slope": self.slope, "verdict": self.verdict,
                "thresholds": self.thresholds}

    def csv_rows(self):
        for h, val in zip(self.spacings, self.integrals):
            yield {"level_h": h, "integral": val, "slope": self.slope}


def _magnitudes(v: np.ndarray, spacing, target: str, space_axes: tuple) -> np.ndarray:
    if target == "function":
        return np.abs(v)
    if not np.isfinite(v).all():
        raise RegularityError("truncate before differentiating: sample has +inf entries")
    g = np.gradient(v, *spacing, axis=space_axes, edge_order=2)
    if len(space_axes) == 1:
        g = [g]
    return np.sqrt(sum(gi * gi for gi in g))


def summability_sweep(cf: ClosedForm, target: str, qs, ladder: RefinementLadder) -> list[ProbeReport]:
    """Integrals of |f|^q (or |grad f|^q) on every ladder level for several q at once."""
    if target not in ("function", "gradient"):
        raise RegularityError(f"target must be 'function' or 'gradient', got {target!r}")
    qs = [float(q) for q in qs]
    if any(not q > 0 for q in qs):
        raise RegularityError("q must be positive")
    if len(ladder.region) != cf.dim:
        raise RegularityError(f"region has dimension {len(ladder.region)}, form has {cf.dim}")
    spacetime = not cf.stationary
    if spacetime and ladder.time_range is None:
        raise RegularityError(f"{cf.name} is time dependent; the ladder needs a time range")
    sums = {q: [] for q in qs}
    for h in ladder.spacings:
        grid = ladder.cell_grid(h)
        X = grid.coords()
        vol = float(np.prod(grid.spacing))
        acc = {q: 0.0 for q in qs}
        if spacetime:
            times, dt = ladder.time_midpoints(h)
            vol *= dt
            axes = tuple(range(1, grid.dim + 1))
            for k0 in range(0, len(times), ladder.chunk):
                t = times[k0:k0 + ladder.chunk].reshape((-1,) + (1,) * grid.dim)
                v = cf.evaluate(X[:, None], t)
                a = _magnitudes(v, grid.spacing, target, axes)
                for q in qs:
                    acc[q] += float(np.sum(a ** q))
        else:
            v = cf.evaluate(X)
            a = _magnitudes(v, grid.spacing, target, tuple(range(grid.dim)))
            for q in qs:
                acc[q] += float(np.sum(a ** q))
        for q in qs:
            sums[q].append(acc[q] * vol)
    reports = []
    inv_h = [1.0 / h for h in ladder.spacings]
    for q in qs:
        I = sums[q]
        if any(not math.isfinite(x) for x in I):
            slope = math.inf
        elif min(I) <= 0:
            slope = 0.0
        else:
            slope = loglog_slope(inv_h, I)[0]
        reports.append(ProbeReport(q, target, list(ladder.spacings), I, slope, verdict_for(slope)))
    return reports


def summability_probe(cf: ClosedForm, target: str, q: float, ladder: RefinementLadder) -> ProbeReport:
    """Slope of log(integral of |f|^q) against log(1/h) and its verdict.

    A locally integrable power stays bounded under refinement (slope near
    0); a non-integrable singularity makes the discrete integral grow like
    a power of 1/h.
    """
    return summability_sweep(cf, target, [q], ladder)[0]


def field_probe(fields: list[ScalarField], target: str, q: float, region=None) -> ProbeReport:
    """The same protocol on user-supplied samples, one per ladder level (finest last)."""
    from psuper.grid import lq_integral
    if len(fields) < 3:
        raise RegularityError("a ladder needs at least 3 levels")
    hs, I = [], []
    for f in fields:
        obj = gradient(f) if target == "gradient" else f
        I.append(lq_integral(obj, q, region))
        hs.append(max(f.grid.spacing))
    if any(not math.isfinite(x) for x in I):
        slope = math.inf
    elif min(I) <= 0:
        slope = 0.0
    else:
        slope = loglog_slope([1 / h for h in hs], I)[0]
    return ProbeReport(q, target, hs, I, slope, verdict_for(slope))


# ----------------------------------------------------------------------------
# level sets


def _inner_cells(mask: np.ndarray) -> np.ndarray:
    """Cells all of whose corners satisfy ``mask``."""
    c = mask
    for ax in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        c = c[tuple(lo)] & c[tuple(hi)]
    return c


@dataclass
class LevelSetFit:
    heights: list
    measures: list
    exponent: float
    residual: float

    def to_dict(self) -> dict:
        return {"heights": self.heights, "measures": self.measures,
                "exponent": self.exponent, "residual": self.residual}


def level_set_scaling(f: ScalarField | SpaceTimeField, heights, min_ratio: float = 1e3) -> LevelSetFit:
    """Fit |{j <= f <= 2j}| ~ j^a over the given heights.

    Measures count closed cells whose corners all lie in [j, 2j] (an inner
    approximation). Space-time fields are measured in space-time.
    """
    g = f.as_field() if isinstance(f, SpaceTimeField) else f
    v = g.values
    lo, hi = float(np.min(v)), float(np.max(v))
    if lo > 0 and hi / lo <= min_ratio:
        raise RegularityError(f"field does not look unbounded: max/min = {hi / lo:.3g} <= {min_ratio:g}")
    js = [float(j) for j in heights]
    if any(not j > 0 for j in js):
        raise RegularityError("heights must be positive")
    vol = g.grid.cell_volume
    used_j, meas = [], []
    for j in js:
        m = int(_inner_cells((v >= j) & (v <= 2 * j)).sum()) * vol
        if m > 0:
            used_j.append(j)
            meas.append(m)
    if len(used_j) < 4:
        raise RegularityError(f"only {len(used_j)} heights have nonempty level sets; need 4")
    a, rms = loglog_slope(used_j, meas)
    return LevelSetFit(used_j, meas, a, rms)


# ----------------------------------------------------------------------------
# Caccioppoli


@dataclass
class CaccioppoliReport:
    variant: str
    left: float
    right: float
    ratio: float
    h: float
    passes: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _space_grad(values: np.ndarray, grid: Grid, axes) -> list[np.ndarray]:
    g = np.gradient(values, *grid.spacing, axis=axes, edge_order=2)
    return [g] if len(grid.spacing) == 1 else list(g)


def caccioppoli_check(v: ScalarField | SpaceTimeField, zeta: TestFunction, p: float,
                      variant: str, L: float | None = None) -> CaccioppoliReport:
    """Left and right sides of a Caccioppoli inequality by node quadrature.

    elliptic_bounded:  int z^p |grad v|^p <= p^p (osc v)^p int |grad z|^p
    elliptic_log:      int z^p |grad log v|^p <= (p/(p-1))^p int |grad z|^p
    parabolic (0 <= v <= L on the support):
        int int z^p |grad v|^p <= p^p L^p int int |grad z|^p + (p/2) L^2 int int |d_t z^p|
    The oscillation and L are taken over the nodes where z > 0. The check
    passes when left / right <= 1 + 10 h.
    """
    if p < 2:
        raise RegularityError(f"unsupported exponent p={p}: need p >= 2")
    if variant not in ("elliptic_bounded", "elliptic_log", "parabolic"):
        raise RegularityError(f"unknown variant {variant!r}")
    if not np.isfinite(v.values).all():
        raise RegularityError("hypothesis violated: v must be bounded (truncate first)")
    grid = v.grid
    h = max(grid.spacing)
    if variant == "parabolic":
        if not isinstance(v, SpaceTimeField) or zeta.time_support is None:
            raise RegularityError("parabolic variant needs a space-time field and a time bump")
        st = v.stgrid
        if not zeta.inside(grid.box, (st.t0, st.t1)):
            raise RegularityError("cutoff support must lie inside the space-time domain")
        X = grid.coords()
        axes = tuple(range(grid.dim))
        left = grad_z = dtz = 0.0
        sup_v, inf_v = -math.inf, math.inf
        for k, t in enumerate(st.times):
            z, dz, zt = zeta.evaluate(X, np.full(grid.shape, t))
            if not z.any():
                continue
            vk = v.values[k]
            on = z > 0
            sup_v = max(sup_v, float(vk[on].max()))
            inf_v = min(inf_v, float(vk[on].min()))
            g = _space_grad(vk, grid, axes)
            left += float(np.sum(z ** p * sum(gi * gi for gi in g) ** (p / 2)))
            grad_z += float(np.sum(sum(di * di for di in dz) ** (p / 2)))
            dtz += float(np.sum(np.abs(p * z ** (p - 1) * zt)))
        if inf_v < 0:
            raise RegularityError("hypothesis violated: parabolic variant needs v >= 0")
        Lval = sup_v if L is None else float(L)
        if Lval < sup_v:
            raise RegularityError(f"L = {Lval} is below sup v = {sup_v} on the support")
        w = grid.cell_volume * st.dt
        left *= w
        right = (p ** p * Lval ** p * grad_z + 0.5 * p * Lval ** 2 * dtz) * w
    else:
        if isinstance(v, SpaceTimeField):
            raise RegularityError("elliptic variants take a spatial field")
        if not zeta.inside(grid.box):
            raise RegularityError("cutoff support must lie inside the domain")
        z, dz, _ = zeta.evaluate(grid.coords())
        on = z > 0
        if not on.any():
            raise RegularityError("cutoff vanishes at every node")
        vals = v.values
        w = grid.control_volumes()
        if variant == "elliptic_log":
            if np.any(vals[on] <= 0):
                raise RegularityError("hypothesis violated: log variant needs v > 0 on the support")
            safe = np.where(vals > 0, vals, 1.0)
            g = _space_grad(vals, grid, tuple(range(grid.dim)))
            g = [gi / safe for gi in g]
            const = (p / (p - 1)) ** p
        else:
            g = _space_grad(vals, grid, tuple(range(grid.dim)))
            const = p ** p * float(vals[on].max() - vals[on].min()) ** p
        left = float(np.sum(w * z ** p * sum(gi * gi for gi in g) ** (p / 2)))
        right = const * float(np.sum(w * sum(di * di for di in dz) ** (p / 2)))
    if left == 0:
        ratio = 0.0
    elif right == 0:
        ratio = math.inf
    else:
        ratio = left / right
    return CaccioppoliReport(variant, left, right, ratio, h, ratio <= 1 + 10 * h)


# ----------------------------------------------------------------------------
# Harnack


class CylinderError(RegularityError):
    def __init__(self, message: str, face: str):
        super().__init__(message)
        self.face = face


def harnack_ratio(u: SpaceTimeField, x0, t0: float, R: float, Cwait: float, p: float) -> float:
    """u(x0, t0) / inf_{B(x0, R)} u(., t0 + theta) with theta = Cwait R^p / u(x0, t0)^{p-2}."""
    return harnack_report(u, x0, t0, R, Cwait, p)["ratio"]


def _nearest(axis: np.ndarray, x: float) -> int:
    return int(np.argmin(np.abs(axis - x)))


def harnack_report(u: SpaceTimeField, x0, t0: float, R: float, Cwait: float, p: float) -> dict:
    """Harnack ratio with the waiting time and the values it was built from.

    Values are read at the nearest node and the nearest slice. The
    cylinder B(x0, 4R) x (t0 - 4 theta, t0 + 4 theta) must lie in the domain.
    """
    if not (R > 0 and Cwait > 0):
        raise RegularityError("R and Cwait must be positive")
    st = u.stgrid
    grid = st.space
    x0 = np.atleast_1d(np.asarray(x0, float))
    if x0.size != grid.dim:
        raise RegularityError(f"x0 must have {grid.dim} coordinates")
    if not np.isfinite(u.values).all():
        raise RegularityError("u must be finite")
    for i, (a, b) in enumerate(grid.box):
        if x0[i] - 4 * R < a:
            raise CylinderError(f"cylinder leaves the domain through the lower face of axis {i}",
                                f"x{i}-lower")
        if x0[i] + 4 * R > b:
            raise CylinderError(f"cylinder leaves the domain through the upper face of axis {i}",
                                f"x{i}-upper")
    idx = tuple(_nearest(grid.axis(i), x0[i]) for i in range(grid.dim))
    k0 = _nearest(st.times, t0)
    u0 = float(u.values[(k0,) + idx])
    if not u0 > 0:
        raise RegularityError(f"u(x0, t0) = {u0} must be positive")
    theta = Cwait * R ** p / u0 ** (p - 2)
    if t0 - 4 * theta < st.t0:
        raise CylinderError("cylinder starts before the first time slice", "t-lower")
    if t0 + 4 * theta > st.t1:
        raise CylinderError("cylinder ends after the last time slice", "t-upper")
    k1 = _nearest(st.times, t0 + theta)
    ball = grid.radius(x0) <= R * (1 + 1e-12)
    vals = u.values[k1][ball]
    m = float(vals.min())
    if not m > 0:
        raise RegularityError("u vanishes inside B(x0, R) at the waiting time")
    return {"ratio": u0 / m, "theta": theta, "u0": u0, "inf": m,
            "t_wait": float(st.times[k1]), "p": p}
