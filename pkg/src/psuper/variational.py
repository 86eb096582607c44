"""Elliptic solvers: p-Dirichlet, obstacle, and the ground state of the
p-Laplacian with the normalization used by the separable solutions.

All three reduce to minimizing a strictly convex functional over the free
nodes. Directions come from the Hessian of the energy with its degenerate
weights lifted by a small ``delta``; an exact line search along each
direction keeps the true energy decreasing every iteration.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve

from psuper import stencil
from psuper.grid import Grid, ScalarField


class VariationalError(ValueError):
    pass


@dataclass
class SolveReport:
    converged: bool
    energy: float
    iterations: int
    residual: float
    tol: float
    energy_history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("energy_history")
        h = self.energy_history
        d["energy_decreasing"] = bool(all(b <= a + 1e-12 * max(1.0, abs(a))
                                          for a, b in zip(h, h[1:])))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, default=float)


class SolverFailure(RuntimeError):
    """Raised when the iteration cap is reached or progress stalls; carries the report."""

    def __init__(self, message: str, report: SolveReport):
        super().__init__(message)
        self.report = report


def energy(f: ScalarField, p: float) -> float:
    """(1/p) times the cell average of |grad f|^p, summed with cell measures."""
    if p < 2:
        raise VariationalError(f"unsupported exponent p={p}: need p >= 2")
    return stencil.energy(f.values, f.grid.spacing, p)


# ----------------------------------------------------------------------------
# the shared minimizer


class _Objective:
    """E_p(w) - sum vol*load*w + sum vol*(w - anchor)^2 / (2 dt)."""

    def __init__(self, grid: Grid, p: float, load=None, anchor=None, dt=None):
        self.grid, self.p = grid, p
        self.h = grid.spacing
        self.vol = grid.cell_volume
        self.load = None if load is None else np.asarray(load, float)
        self.anchor = None if anchor is None else np.asarray(anchor, float)
        self.dt = dt

    def value(self, w):
        F = stencil.energy(w, self.h, self.p)
        if self.load is not None:
            F -= self.vol * float(np.sum(self.load * w))
        if self.anchor is not None:
            F += self.vol * float(np.sum((w - self.anchor) ** 2)) / (2 * self.dt)
        return F

    def grad(self, w):
        g = stencil.energy_gradient(w, self.h, self.p)
        if self.load is not None:
            g = g - self.vol * self.load
        if self.anchor is not None:
            g = g + self.vol * (w - self.anchor) / self.dt
        return g

    def hess(self, w, delta):
        H = stencil.energy_hessian(w, self.h, self.p, delta)
        if self.anchor is not None:
            H = H + sp.identity(w.size, format="csr") * (self.vol / self.dt)
        return H


def _gradient_scale(w, h):
    """Root-mean-square edge slope, used to size the Hessian regularization."""
    D = stencil.edge_differences(w, h)
    tot = sum(float(np.sum(d * d)) for d in D)
    cnt = sum(d.size for d in D)
    return math.sqrt(tot / max(cnt, 1))


def _line_search(obj, w, d, free, g0d):
    """Step length along ``d`` from the directional derivative alone.

    The objective is convex along the line, so its slope is increasing.
    The Newton step is kept when the slope there is small compared with the
    initial one; otherwise the slope is driven to zero with Brent's method.
    Function values are never compared, so the search stays reliable when
    energy differences fall below rounding.
    """

    def trial(a):
        x = w.copy()
        x[free] += a * d
        return x

    def slope(a):
        return float(obj.grad(trial(a))[free] @ d)

    s1 = slope(1.0)
    if abs(s1) <= 0.1 * abs(g0d):
        return 1.0
    if s1 > 0:
        return brentq(slope, 0.0, 1.0, xtol=1e-14, rtol=1e-12, maxiter=200)
    lo, hi = 1.0, 2.0
    while slope(hi) < 0:
        lo, hi = hi, 2 * hi
        if hi > 1e8:
            return lo
    return brentq(slope, lo, hi, xtol=1e-14 * hi, rtol=1e-12, maxiter=200)


def _minimize(obj: _Objective, w0: np.ndarray, free: np.ndarray, tol: float, cap: int,
              what: str) -> tuple[np.ndarray, SolveReport]:
    w = np.array(w0, float)
    fidx = np.flatnonzero(free.ravel())
    vol = obj.vol
    history = [obj.value(w)]
    it = 0
    res = math.inf
    while True:
        g = obj.grad(w).ravel()[fidx]
        res = float(np.max(np.abs(g))) / vol if g.size else 0.0
        if res < tol:
            break
        if it >= cap:
            rep = SolveReport(False, history[-1], it, res, tol, history)
            raise SolverFailure(f"{what}: no convergence after {it} iterations "
                                f"(residual {res:.3e} > tol {tol:.1e})", rep)
        delta = 1e-3 * max(_gradient_scale(w, obj.h), 1e-8)
        H = obj.hess(w, delta)[fidx][:, fidx]
        d = -spsolve(H.tocsc(), g)
        gd = float(g @ d)
        if not np.isfinite(gd) or gd >= 0:
            d = -g / vol
            gd = float(g @ d)
        a = _line_search(obj, w, d, free, gd)
        w = w.copy()
        w[free] += a * d
        history.append(obj.value(w))
        it += 1
    return w, SolveReport(True, history[-1], it, res, tol, history)


# ----------------------------------------------------------------------------
# Dirichlet problem


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    """Free nodes are ``domain_mask``; every other node is pinned to ``boundary_values``."""

    grid: Grid
    p: float
    boundary_values: np.ndarray
    domain_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.p < 2:
            raise VariationalError(f"unsupported exponent p={self.p}: need p >= 2")
        b = np.asarray(self.boundary_values, float)
        if b.ndim == 0:
            b = np.full(self.grid.shape, float(b))
        b = b.reshape(self.grid.shape)
        if not np.isfinite(b).all():
            raise VariationalError("boundary values must be finite")
        m = self.grid.interior_mask() if self.domain_mask is None else \
            np.asarray(self.domain_mask, bool).reshape(self.grid.shape)
        if m.all():
            raise VariationalError("boundary set is empty")
        object.__setattr__(self, "boundary_values", b)
        object.__setattr__(self, "domain_mask", m)

    def lift(self) -> np.ndarray:
        """Boundary data on fixed nodes, zeros on free nodes."""
        return np.where(self.domain_mask, 0.0, self.boundary_values)


def solve_dirichlet(prob: DirichletProblem, tol: float = 1e-8, cap: int = 100_000,
                    start: np.ndarray | None = None) -> tuple[ScalarField, SolveReport]:
    if not tol > 0:
        raise VariationalError(f"tol must be positive, got {tol}")
    w0 = prob.lift()
    if start is not None:
        w0 = np.where(prob.domain_mask, start, w0)
    obj = _Objective(prob.grid, prob.p)
    w, rep = _minimize(obj, w0, prob.domain_mask, tol, cap, "dirichlet")
    return ScalarField(prob.grid, w), rep


# ----------------------------------------------------------------------------
# obstacle problem


@dataclass(frozen=True, eq=False)
class ObstacleProblem:
    base: DirichletProblem
    obstacle: ScalarField

    def __post_init__(self):
        psi = self.obstacle.values
        fixed = ~self.base.domain_mask
        if np.any(psi[fixed] > self.base.boundary_values[fixed]):
            raise VariationalError("infeasible: obstacle exceeds the boundary data")


def solve_obstacle(prob: ObstacleProblem, tol: float = 1e-8, cap: int = 100_000,
                   max_outer: int = 200) -> tuple[ScalarField, SolveReport]:
    """Primal-dual active set iteration with Dirichlet solves on the inactive nodes.

    The active set starts where the unconstrained minimizer dips below the
    obstacle. A node leaves the set when the energy gradient there is
    negative (releasing it lowers the energy) and joins when the current
    iterate violates the constraint.
    """
    base = prob.base
    psi = np.asarray(prob.obstacle.values, float)
    free0 = base.domain_mask
    obj = _Objective(base.grid, base.p)
    w, _ = solve_dirichlet(base, tol, cap)
    w = w.values
    active = free0 & (w < psi)
    total_it = 0
    history = [obj.value(np.maximum(w, psi))]
    for outer in range(1, max_outer + 1):
        free = free0 & ~active
        w0 = np.where(active, psi, np.where(free0, np.maximum(w, psi), base.boundary_values))
        if free.any():
            w, rep = _minimize(obj, w0, free, tol, cap, "obstacle")
            total_it += rep.iterations
        else:
            w = w0
        g = obj.grad(w) / obj.vol
        new_active = (active & (g >= 0)) | (free & (w < psi))
        history.append(obj.value(np.maximum(w, psi)))
        if np.array_equal(new_active, active):
            break
        active = new_active
    else:
        rep = SolveReport(False, history[-1], total_it, math.inf, tol, history,
                          {"outer": max_outer})
        raise SolverFailure(f"obstacle: active set did not settle in {max_outer} sweeps", rep)
    w = np.maximum(w, psi)
    g = obj.grad(w) / obj.vol
    inactive = free0 & ~active
    res = float(np.max(np.abs(g[inactive]))) if inactive.any() else 0.0
    rep = SolveReport(True, obj.value(w), total_it, res, tol, history,
                      {"outer": outer, "active_count": int(active.sum()),
                       "active_set": np.argwhere(active).tolist()})
    return ScalarField(base.grid, w), rep


# ----------------------------------------------------------------------------
# ground state


@dataclass
class EigenResult:
    U: ScalarField
    J0: float
    C: float | None
    iterations: int
    residual: float
    w: ScalarField

    def report(self) -> dict:
        return {"J0": self.J0, "C": self.C, "iterations": self.iterations,
                "residual": self.residual}


def rayleigh_quotient(f: ScalarField | np.ndarray, grid: Grid | None, p: float) -> float:
    """J(w) = int |grad w|^p / (int w^2)^{p/2}; invariant under w -> s*w."""
    if isinstance(f, ScalarField):
        grid, vals = f.grid, f.values
    else:
        vals = np.asarray(f, float)
    num = p * stencil.energy(vals, grid.spacing, p)
    den = grid.cell_volume * float(np.sum(vals * vals))
    if den == 0:
        raise VariationalError("quotient undefined for the zero field")
    return num / den ** (p / 2)


def _default_start(grid: Grid) -> np.ndarray:
    X = grid.coords()
    w = np.ones(grid.shape)
    for i, (a, b) in enumerate(grid.box):
        w = w * (X[i] - a) * (b - X[i])
    return w


def eigenfunction_U(grid: Grid, p: float, tol: float = 1e-8, cap: int = 500,
                    start: np.ndarray | None = None, inner_cap: int = 100_000) -> EigenResult:
    """Ground state of the p-Laplacian on the grid box, normalized as U = C w.

    Nonlinear inverse iteration: solve -Delta_p v = w_k, set
    w_{k+1} = |v| / ||v||_2. Each solve decreases J, and the fixed point is
    the minimizer of the quotient. With J0 = J(w), the profile U = C w with
    J0 C^{p-2} = 1/(p-2) solves Delta_p U + U/(p-2) = 0. ``p = 2`` is
    accepted as a test of the solver only; C is then undefined.
    """
    if p < 2:
        raise VariationalError(f"unsupported exponent p={p}: need p > 2 (p = 2 as a solver test)")
    vol = grid.cell_volume
    free = grid.interior_mask()
    if not free.any():
        raise VariationalError("grid has no interior nodes")
    w = _default_start(grid) if start is None else np.asarray(start, float).reshape(grid.shape)
    w = np.where(free, np.abs(w), 0.0)
    w = w / math.sqrt(vol * float(np.sum(w * w)))
    J = rayleigh_quotient(w, grid, p)

    def defect(wk, Jk):
        g = stencil.energy_gradient(wk, grid.spacing, p) / vol
        return float(np.max(np.abs((g - Jk * wk)[free])))

    C = None if p == 2 else (1.0 / ((p - 2) * J)) ** (1.0 / (p - 2))
    scale = 1.0 if C is None else C ** (p - 1)
    res = defect(w, J) * scale
    it = 0
    inner_tol = max(tol * 1e-2, 1e-13)
    while res >= tol:
        if it >= cap:
            raise SolverFailure(f"eigen: residual {res:.3e} above tol {tol:.1e} after {it} "
                                "inverse iterations", SolveReport(False, J, it, res, tol, []))
        obj = _Objective(grid, p, load=w)
        v0 = w * J ** (-1.0 / (p - 1))
        v, _ = _minimize(obj, v0, free, inner_tol, inner_cap, "eigen inner solve")
        v = np.abs(v)
        w = v / math.sqrt(vol * float(np.sum(v * v)))
        J = rayleigh_quotient(w, grid, p)
        C = None if p == 2 else (1.0 / ((p - 2) * J)) ** (1.0 / (p - 2))
        scale = 1.0 if C is None else C ** (p - 1)
        res = defect(w, J) * scale
        it += 1
    U = w if C is None else C * w
    return EigenResult(ScalarField(grid, U), J, C, it, res, ScalarField(grid, w))


def eigen_residual(U: ScalarField, p: float) -> float:
    """max |Delta_p U + U/(p-2)| over interior nodes."""
    g = stencil.energy_gradient(U.values, U.grid.spacing, p) / U.grid.cell_volume
    r = -g + U.values / (p - 2)
    return float(np.max(np.abs(r[U.grid.interior_mask()])))
