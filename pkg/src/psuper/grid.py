"""Uniform grids, sampled fields and the finite-difference calculus on them.

Fields are node-based. A node owns the axis-aligned control volume of side
``h`` centred on it; quadrature clips that volume to the integration region,
which gives the midpoint rule on cell-centred samples and the trapezoid rule
on the usual vertex grid.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from psuper import stencil

Box = Sequence[tuple[float, float]]


class GridError(ValueError):
    pass


def _vec(x, dim: int, name: str) -> tuple:
    if np.isscalar(x):
        x = [x] * dim
    x = tuple(x)
    if len(x) != dim:
        raise GridError(f"{name} must have {dim} entries, got {len(x)}")
    return x


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid of ``cells[i] + 1`` nodes along axis ``i``."""

    origin: tuple[float, ...]
    extent: tuple[float, ...]
    cells: tuple[int, ...]

    def __init__(self, origin, extent, cells):
        dim = len(cells) if not np.isscalar(cells) else (
            len(extent) if not np.isscalar(extent) else 1)
        if dim not in (1, 2, 3):
            raise GridError(f"dim must be 1, 2 or 3, got {dim}")
        cells = tuple(int(c) for c in _vec(cells, dim, "cells"))
        extent = tuple(float(e) for e in _vec(extent, dim, "extent"))
        origin = tuple(float(o) for o in _vec(origin, dim, "origin"))
        if any(c <= 0 for c in cells):
            raise GridError(f"cells must be positive, got {cells}")
        if any(not e > 0 or not np.isfinite(e) for e in extent):
            raise GridError(f"extent must be positive and finite, got {extent}")
        count = 1
        for c in cells:
            count *= c + 1
        if count > sys.maxsize // 8:
            raise GridError(f"node count {count} exceeds the addressable range")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_box(cls, box: Box, cells) -> "Grid":
        lo = [float(a) for a, _ in box]
        ext = [float(b) - float(a) for a, b in box]
        return cls(lo, ext, cells)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / c for e, c in zip(self.extent, self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def box(self) -> tuple[tuple[float, float], ...]:
        return tuple((o, o + e) for o, e in zip(self.origin, self.extent))

    def axis(self, i: int) -> np.ndarray:
        return self.origin[i] + self.spacing[i] * np.arange(self.cells[i] + 1)

    def axes(self) -> list[np.ndarray]:
        return [self.axis(i) for i in range(self.dim)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def radius(self, center=None) -> np.ndarray:
        c = np.zeros(self.dim) if center is None else np.asarray(center, float)
        X = self.coords()
        return np.sqrt(sum((X[i] - c[i]) ** 2 for i in range(self.dim)))

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, bool)
        for i in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[i] = 0
            m[tuple(idx)] = True
            idx[i] = -1
            m[tuple(idx)] = True
        return m

    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask()

    def control_volumes(self, region: Box | None = None) -> np.ndarray:
        """Measure of each node's control volume clipped to ``region``."""
        region = self.box if region is None else region
        w = np.ones(self.shape)
        for i, (a, b) in enumerate(region):
            x, h = self.axis(i), self.spacing[i]
            wi = np.clip(np.minimum(x + h / 2, b) - np.maximum(x - h / 2, a), 0.0, None)
            sh = [1] * self.dim
            sh[i] = -1
            w = w * wi.reshape(sh)
        return w

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.origin, self.extent, tuple(c * factor for c in self.cells))

    def midpoint_grid(self) -> "Grid":
        """Grid whose nodes are the cell centres of this one."""
        h = self.spacing
        if any(c < 2 for c in self.cells):
            raise GridError("midpoint grid needs at least two cells per axis")
        return Grid([o + hi / 2 for o, hi in zip(self.origin, h)],
                    [e - hi for e, hi in zip(self.extent, h)],
                    [c - 1 for c in self.cells])


@dataclass(frozen=True)
class SpaceTimeGrid:
    space: Grid
    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise GridError(f"need t1 > t0, got t0={self.t0}, t1={self.t1}")
        if int(self.steps) <= 0:
            raise GridError(f"time steps must be positive, got {self.steps}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.steps + 1,) + self.space.shape

    def as_grid(self) -> Grid:
        """The same nodes viewed as an (n+1)-dimensional grid, time first."""
        return Grid((self.t0,) + self.space.origin,
                    (self.t1 - self.t0,) + self.space.extent,
                    (self.steps,) + self.space.cells)


def _check_values(values: np.ndarray, extended: bool) -> None:
    if extended:
        bad = np.isnan(values) | (values == -np.inf)
        if bad.any():
            raise GridError("extended-real field admits +inf only (found NaN or -inf)")
    elif not np.isfinite(values).all():
        raise GridError("field has non-finite values; pass extended=True to allow +inf")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node samples on a :class:`Grid`.

    ``valid`` marks nodes that carry meaningful values; invalid nodes are
    stored as 0 and skipped by quadrature.
    """

    grid: Grid
    values: np.ndarray
    extended: bool = False
    valid: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.values)
        if v.size != self.grid.size:
            raise GridError(f"expected {self.grid.size} values, got {v.size}")
        v = v.reshape(self.grid.shape)
        _check_values(v, self.extended)
        object.__setattr__(self, "values", v)
        if self.valid is not None:
            m = np.array(self.valid, dtype=bool).reshape(self.grid.shape)
            m.setflags(write=False)
            object.__setattr__(self, "valid", m)

    def with_values(self, values, extended: bool | None = None) -> "ScalarField":
        ext = self.extended if extended is None else extended
        return ScalarField(self.grid, values, ext, self.valid)

    def __neg__(self):
        return self.with_values(-self.values)

    def max(self) -> float:
        return float(self.values.max())

    def min(self) -> float:
        return float(self.values.min())


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        comps = tuple(_frozen(c).reshape(self.grid.shape) for c in self.components)
        if len(comps) != self.grid.dim:
            raise GridError(f"expected {self.grid.dim} components, got {len(comps)}")
        for c in comps:
            _check_values(c, False)
        object.__setattr__(self, "components", comps)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(sum(c * c for c in self.components))


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Time-ordered slices; ``values`` has shape ``(steps + 1, *space.shape)``."""

    stgrid: SpaceTimeGrid
    values: np.ndarray
    extended: bool = False

    def __post_init__(self):
        v = _frozen(self.values)
        if v.size != int(np.prod(self.stgrid.shape)):
            raise GridError(f"expected {self.stgrid.shape} values, got shape {v.shape}")
        v = v.reshape(self.stgrid.shape)
        _check_values(v, self.extended)
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> Grid:
        return self.stgrid.space

    def __len__(self) -> int:
        return self.stgrid.steps + 1

    def slice(self, k: int) -> ScalarField:
        return ScalarField(self.stgrid.space, self.values[k], self.extended)

    @property
    def slices(self) -> list[ScalarField]:
        return [self.slice(k) for k in range(len(self))]

    @classmethod
    def from_slices(cls, stgrid: SpaceTimeGrid, slices, extended=False) -> "SpaceTimeField":
        vals = np.stack([s.values if isinstance(s, ScalarField) else np.asarray(s)
                         for s in slices])
        return cls(stgrid, vals, extended)

    def as_field(self) -> ScalarField:
        """View as a scalar field on the (n+1)-dimensional grid (time axis first)."""
        return ScalarField(self.stgrid.as_grid(), self.values, self.extended)


def _bump1(x: np.ndarray, a: float, b: float):
    """(1 - s^2)^3 for s = (x - c)/r on (a, b), with its derivative in x.

    1 - s^2 is formed as (x - a)(b - x)/r^2, so the bump is exactly zero at
    both end points.
    """
    r = (b - a) / 2
    inside = (x > a) & (x < b)
    q = np.where(inside, (x - a) * (b - x) / (r * r), 0.0)
    s = (x - (a + b) / 2) / r
    return q ** 3, -6 * s * q ** 2 / r


@dataclass(frozen=True)
class TestFunction:
    """Smooth nonnegative bump: product of per-axis C^2 bumps times a time bump.

    ``support`` is the spatial box; ``time_support`` is ``None`` for a purely
    spatial (elliptic) test function.
    """

    __test__ = False  # keep pytest from collecting this class

    support: tuple[tuple[float, float], ...]
    time_support: tuple[float, float] | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        sup = tuple((float(a), float(b)) for a, b in self.support)
        if any(not b > a for a, b in sup):
            raise GridError(f"empty support box {sup}")
        object.__setattr__(self, "support", sup)
        if self.time_support is not None:
            a, b = map(float, self.time_support)
            if not b > a:
                raise GridError(f"empty time support ({a}, {b})")
            object.__setattr__(self, "time_support", (a, b))
        if self.amplitude < 0:
            raise GridError("test functions here are nonnegative; amplitude must be >= 0")

    @property
    def dim(self) -> int:
        return len(self.support)

    def scaled(self, c: float) -> "TestFunction":
        return TestFunction(self.support, self.time_support, self.amplitude * c)

    def _axis(self, x, i):
        return _bump1(np.asarray(x, float), *self.support[i])

    def _time(self, t):
        if self.time_support is None:
            return np.ones_like(t), np.zeros_like(t)
        return _bump1(np.asarray(t, float), *self.time_support)

    def evaluate(self, X, t=None):
        """Value, spatial gradient (list) and time derivative at points.

        ``X`` has shape ``(dim, ...)``; ``t`` broadcasts against ``X[0]``.
        """
        parts = [self._axis(X[i], i) for i in range(self.dim)]
        tt = np.zeros_like(np.asarray(X[0], float)) if t is None else np.asarray(t, float)
        ft, dft = self._time(tt)
        space = np.ones(np.broadcast(*[p[0] for p in parts]).shape)
        for f, _ in parts:
            space = space * f
        grad = []
        for i in range(self.dim):
            g = parts[i][1]
            for j in range(self.dim):
                if j != i:
                    g = g * parts[j][0]
            grad.append(self.amplitude * g * ft)
        return self.amplitude * space * ft, grad, self.amplitude * space * dft

    def values_on(self, grid: Grid) -> np.ndarray:
        return self.evaluate(grid.coords())[0]

    def inside(self, box: Box, time_box: tuple[float, float] | None = None) -> bool:
        """Support strictly inside the open box (and time interval)."""
        ok = all(a < sa and sb < b for (sa, sb), (a, b) in zip(self.support, box))
        if self.time_support is not None and time_box is not None:
            ok = ok and time_box[0] < self.time_support[0] and self.time_support[1] < time_box[1]
        return ok


# ----------------------------------------------------------------------------
# calculus


def gradient(f: ScalarField) -> VectorField:
    """Central differences inside, second-order one-sided differences on the boundary."""
    if f.extended and np.isinf(f.values).any():
        raise GridError("truncate before differentiating: field has +inf entries")
    if any(c < 2 for c in f.grid.cells):
        raise GridError("gradient needs at least 3 nodes per axis")
    comps = np.gradient(f.values, *f.grid.spacing, edge_order=2)
    if f.grid.dim == 1:
        comps = [comps]
    return VectorField(f.grid, tuple(comps))


def p_flux_divergence(f: ScalarField, p: float) -> ScalarField:
    """Discrete div(|grad u|^{p-2} grad u) at interior nodes.

    Computed as minus the gradient of the discrete p-energy divided by the
    node volume, so the operator is exactly the Euler-Lagrange operator of
    :func:`psuper.variational.energy`. Boundary nodes are flagged invalid.
    """
    if p < 2:
        raise GridError(f"unsupported exponent p={p}: need p >= 2")
    if not np.isfinite(f.values).all():
        raise GridError("truncate before differentiating: field has +inf entries")
    g = stencil.energy_gradient(f.values, f.grid.spacing, p)
    div = -g / f.grid.cell_volume
    interior = f.grid.interior_mask()
    return ScalarField(f.grid, np.where(interior, div, 0.0), valid=interior)


def lq_integral(f: ScalarField | VectorField, q: float, region: Box | None = None) -> float:
    """Sum of |f|^q times the clipped control volumes (the q-th power of the norm)."""
    if not q > 0:
        raise GridError(f"q must be positive, got {q}")
    grid = f.grid
    region = grid.box if region is None else tuple(tuple(map(float, r)) for r in region)
    if len(region) != grid.dim:
        raise GridError(f"region must have {grid.dim} intervals")
    for (a, b), (lo, hi) in zip(region, grid.box):
        if not b > a:
            raise GridError(f"empty region interval ({a}, {b})")
        if a < lo - 1e-12 * (hi - lo) or b > hi + 1e-12 * (hi - lo):
            raise GridError(f"region ({a}, {b}) leaves the grid ({lo}, {hi})")
    w = grid.control_volumes(region)
    if isinstance(f, VectorField):
        a = f.magnitude()
    else:
        a = np.abs(f.values)
        if f.valid is not None:
            w = np.where(f.valid, w, 0.0)
    used = w > 0
    if not used.any():
        raise GridError("region contains no control volume")
    vals = a[used]
    if np.isinf(vals).any():
        return float("inf")
    return float(np.sum(vals ** q * w[used]))


def lq_norm(f: ScalarField | VectorField, q: float, region: Box | None = None) -> float:
    """Discrete L^q norm over ``region`` (defaults to the whole grid)."""
    s = lq_integral(f, q, region)
    return s if np.isinf(s) else s ** (1.0 / q)


class Residual(NamedTuple):
    value: float
    bound: float


def _weak_integrand(v: SpaceTimeField, phi: TestFunction, p: float, stride: int):
    """Node quadrature of the pairing; phi_t is the central difference of phi
    over the time nodes, so the time term sums by parts exactly."""
    st = v.stgrid
    grid = st.space
    vals = v.values[::stride]
    times = st.times[::stride]
    dt = st.dt * stride
    X = grid.coords()
    vol = grid.cell_volume
    eta = np.array([phi.evaluate(X, np.full(grid.shape, t))[0] for t in times])
    eta_t = np.zeros_like(eta)
    eta_t[1:-1] = (eta[2:] - eta[:-2]) / (2 * dt)
    total = float(np.sum(-vals * eta_t)) * vol * dt
    for k, t in enumerate(times):
        if not eta[k].any():
            continue
        _, deta, _ = phi.evaluate(X, np.full(grid.shape, t))
        g = np.gradient(vals[k], *grid.spacing, edge_order=2)
        if grid.dim == 1:
            g = [g]
        mag = np.sqrt(sum(gi * gi for gi in g))
        flux = stencil.flux_factor(mag, p)
        pair = sum(flux * gi * di for gi, di in zip(g, deta))
        total += float(np.sum(pair)) * vol * dt
    return total


def weak_form_residual(v: SpaceTimeField, phi: TestFunction, p: float) -> Residual:
    """Quadrature of the space-time pairing ∫∫ (-v φ_t + <|∇v|^{p-2}∇v, ∇φ>).

    ``bound`` estimates the quadrature error as the change against the same
    rule on every other time slice.
    """
    if p < 2:
        raise GridError(f"unsupported exponent p={p}: need p >= 2")
    if phi.time_support is None:
        raise GridError("space-time residual needs a test function with a time bump")
    if v.extended and np.isinf(v.values).any():
        raise GridError("truncate before differentiating: field has +inf entries")
    st = v.stgrid
    if not phi.inside(st.space.box, (st.t0, st.t1)):
        raise GridError("test function support touches the boundary of the space-time domain")
    fine = _weak_integrand(v, phi, p, 1)
    coarse = _weak_integrand(v, phi, p, 2) if st.steps >= 4 else fine
    return Residual(fine, abs(fine - coarse))


def truncate(f, k: float):
    """Pointwise min(f, k); +inf becomes k and the result is finite."""
    vals = np.minimum(f.values, k)
    if isinstance(f, SpaceTimeField):
        return SpaceTimeField(f.stgrid, vals, False)
    return ScalarField(f.grid, vals, False, f.valid)


def boxes_in(box: Box, margin: float) -> tuple[tuple[float, float], ...]:
    """Box shrunk by ``margin`` times its side on each face."""
    return tuple((a + margin * (b - a), b - margin * (b - a)) for a, b in box)
