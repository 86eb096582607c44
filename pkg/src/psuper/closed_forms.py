"""Exact solutions and supersolutions, evaluable at arbitrary points.

Every form evaluates on coordinate arrays of shape ``(dim, ...)`` so the same
code serves single points and whole grids. Values are extended reals: +inf
is a legitimate answer at poles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from psuper.grid import (Grid, GridError, ScalarField, SpaceTimeField, SpaceTimeGrid,
                         TestFunction)


class ClosedFormError(ValueError):
    pass


def _points(x, dim: int) -> np.ndarray:
    X = np.asarray(x, float)
    if X.ndim == 0 or X.shape[0] != dim:
        if dim == 1:
            return X.reshape((1,) + X.shape)
        raise ClosedFormError(f"expected points with leading dimension {dim}, got shape {X.shape}")
    return X


def _norm(X: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(X * X, axis=0))


class ClosedForm:
    """Base class; subclasses set ``name`` and implement ``evaluate``."""

    name = "closed_form"
    stationary = False
    dim: int

    def evaluate(self, x, t=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x, t=None):
        v = self.evaluate(x, t)
        return float(v) if np.ndim(v) == 0 else v

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Barenblatt(ClosedForm):
    p: float
    n: int
    C: float = 1.0
    name = "barenblatt"

    def __post_init__(self):
        if not self.p > 2:
            raise ClosedFormError(f"Barenblatt needs p > 2, got p={self.p}")
        if int(self.n) < 1:
            raise ClosedFormError(f"n must be >= 1, got {self.n}")
        if not self.C > 0:
            raise ClosedFormError(f"C must be positive, got {self.C}")

    @property
    def dim(self) -> int:
        return int(self.n)

    @property
    def lam(self) -> float:
        return self.n * (self.p - 2) + self.p

    @property
    def _k(self) -> float:
        return (self.p - 2) / self.p * self.lam ** (1 / (1 - self.p))

    def evaluate(self, x, t=None):
        if t is None:
            raise ClosedFormError("Barenblatt needs a time")
        X = _points(x, self.dim)
        r, t = np.broadcast_arrays(_norm(X), np.asarray(t, float))
        pos = t > 0
        ts = np.where(pos, t, 1.0)
        p, lam = self.p, self.lam
        bracket = self.C - self._k * (r * ts ** (-1 / lam)) ** (p / (p - 1))
        val = ts ** (-self.n / lam) * np.maximum(bracket, 0.0) ** ((p - 1) / (p - 2))
        return np.where(pos, val, 0.0)

    def interface_radius(self, t: float) -> float:
        """Radius of the support at time ``t`` (0 for t <= 0)."""
        if t <= 0:
            return 0.0
        s = (self.C / self._k) ** ((self.p - 1) / self.p)
        return s * t ** (1 / self.lam)

    def to_config(self):
        return {"form": self.name, "p": self.p, "n": self.n, "C": self.C}


@dataclass(frozen=True)
class Fundamental(ClosedForm):
    """c |x|^{(p-n)/(p-1)} for p != n and -c log|x| for p = n.

    With c > 0 the function decreases in |x| when p < n; when p > n it
    increases, and the superharmonic member is obtained with c < 0 (for
    instance c = n - p).
    """

    p: float
    n: int
    c: float = 1.0
    name = "fundamental"
    stationary = True

    def __post_init__(self):
        if not self.p > 1:
            raise ClosedFormError(f"fundamental solution needs p > 1, got p={self.p}")
        if int(self.n) < 1:
            raise ClosedFormError(f"n must be >= 1, got {self.n}")

    @property
    def dim(self) -> int:
        return int(self.n)

    @property
    def exponent(self) -> float:
        return (self.p - self.n) / (self.p - 1)

    def evaluate(self, x, t=None):
        r = _norm(_points(x, self.dim))
        with np.errstate(divide="ignore"):
            if self.p == self.n:
                return -self.c * np.log(r)
            if self.exponent < 0:
                val = np.where(r > 0, r ** self.exponent, np.inf)
            else:
                val = r ** self.exponent
        return self.c * val

    def to_config(self):
        return {"form": self.name, "p": self.p, "n": self.n, "c": self.c}


@dataclass(frozen=True)
class CrandallZhang(ClosedForm):
    """Finite superposition sum_j c_j |x - q_j|^{-(n-p)/(p-1)} for 2 < p < n."""

    p: float
    n: int
    centers: tuple
    coeffs: tuple
    name = "crandall_zhang"
    stationary = True

    def __post_init__(self):
        if not 2 < self.p < self.n:
            raise ClosedFormError(f"unsupported exponent: need 2 < p < n, got p={self.p}, n={self.n}")
        centers = tuple(tuple(float(v) for v in q) for q in self.centers)
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(centers) != len(coeffs) or not centers:
            raise ClosedFormError("need as many coefficients as centers (at least one)")
        if any(len(q) != self.n for q in centers):
            raise ClosedFormError(f"centers must be points of R^{self.n}")
        if any(not c > 0 for c in coeffs):
            raise ClosedFormError("coefficients must be positive")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def dim(self) -> int:
        return int(self.n)

    @property
    def term_count(self) -> int:
        return len(self.coeffs)

    def evaluate(self, x, t=None):
        X = _points(x, self.dim)
        e = (self.n - self.p) / (self.p - 1)
        total = np.zeros(X.shape[1:])
        for q, c in zip(self.centers, self.coeffs):
            r = _norm(X - np.asarray(q).reshape((-1,) + (1,) * (X.ndim - 1)))
            with np.errstate(divide="ignore"):
                total = total + np.where(r > 0, c * r ** (-e), np.inf)
        return total

    @classmethod
    def rational(cls, p: float, n: int, count: int, box, decay: float = 0.5) -> "CrandallZhang":
        """First ``count`` rational points of ``box`` ordered by denominator, c_j = decay^j."""
        pts = []
        den = 1
        while len(pts) < count:
            axes = []
            for a, b in box:
                vals = sorted({Fraction(k, den) for k in range(math.ceil(a * den), math.floor(b * den) + 1)
                               if a < k / den < b})
                axes.append(vals)
            for combo in np.array(np.meshgrid(*axes, indexing="ij"), dtype=object).reshape(n, -1).T \
                    if all(axes) else []:
                q = tuple(float(v) for v in combo)
                if q not in pts:
                    pts.append(q)
                if len(pts) == count:
                    break
            den += 1
        coeffs = [decay ** (j + 1) for j in range(count)]
        return cls(p, n, tuple(pts), tuple(coeffs))

    def to_config(self):
        return {"form": self.name, "p": self.p, "n": self.n,
                "centers": [list(q) for q in self.centers], "coeffs": list(self.coeffs)}


@dataclass(frozen=True, eq=False)
class Separable(ClosedForm):
    """U(x) (t - t0)^{-1/(p-2)} for t > t0 and 0 otherwise; U is grid-known."""

    U: ScalarField
    t0: float = 0.0
    p: float = 3.0
    name = "separable"
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.p > 2:
            raise ClosedFormError(f"separable solutions need p > 2, got p={self.p}")
        u = self.U.values
        if (u < 0).any():
            raise ClosedFormError("U must be nonnegative")
        if np.any(u[self.U.grid.boundary_mask()] != 0):
            raise ClosedFormError("U must vanish on the boundary ring of its grid")
        interp = RegularGridInterpolator(self.U.grid.axes(), u, method="linear",
                                         bounds_error=False, fill_value=0.0)
        object.__setattr__(self, "_interp", interp)

    @property
    def dim(self) -> int:
        return self.U.grid.dim

    def profile(self, x) -> np.ndarray:
        X = _points(x, self.dim)
        pts = np.moveaxis(X, 0, -1)
        return self._interp(pts)

    def evaluate(self, x, t=None):
        if t is None:
            raise ClosedFormError("separable solution needs a time")
        prof, t = np.broadcast_arrays(self.profile(x), np.asarray(t, float))
        pos = t > self.t0
        s = np.where(pos, t - self.t0, 1.0)
        return np.where(pos, prof * s ** (-1 / (self.p - 2)), 0.0)

    def to_config(self):
        return {"form": self.name, "p": self.p, "t0": self.t0, "U": self.source}


@dataclass(frozen=True)
class MonotoneTime(ClosedForm):
    """v(x, t) = g(t) for a nondecreasing lower semicontinuous g.

    ``kind="linear"`` gives g(t) = slope * t; ``kind="step"`` gives 0 for
    t <= t_jump and ``height`` afterwards.
    """

    n: int = 1
    kind: str = "linear"
    slope: float = 1.0
    t_jump: float = 0.0
    height: float = 1.0
    name = "monotone_time"

    def __post_init__(self):
        if self.kind not in ("linear", "step"):
            raise ClosedFormError(f"unknown monotone profile {self.kind!r}")
        if self.kind == "linear" and self.slope < 0:
            raise ClosedFormError("slope must be nonnegative")
        if self.kind == "step" and self.height < 0:
            raise ClosedFormError("step height must be nonnegative")

    @property
    def dim(self) -> int:
        return int(self.n)

    def evaluate(self, x, t=None):
        if t is None:
            raise ClosedFormError("monotone-time form needs a time")
        X = _points(x, self.dim)
        _, t = np.broadcast_arrays(X[0], np.asarray(t, float))
        if self.kind == "linear":
            return self.slope * t
        return np.where(t > self.t_jump, self.height, 0.0)

    def to_config(self):
        return {"form": self.name, "n": self.n, "kind": self.kind, "slope": self.slope,
                "t_jump": self.t_jump, "height": self.height}


@dataclass(frozen=True)
class Bump(ClosedForm):
    phi: TestFunction
    name = "bump"

    @property
    def dim(self) -> int:
        return self.phi.dim

    @property
    def stationary(self):
        return self.phi.time_support is None

    def evaluate(self, x, t=None):
        X = _points(x, self.dim)
        return self.phi.evaluate(X, t)[0]

    def to_config(self):
        return {"form": self.name, "support": [list(s) for s in self.phi.support],
                "time_support": None if self.phi.time_support is None else list(self.phi.time_support),
                "amplitude": self.phi.amplitude}


# ----------------------------------------------------------------------------
# module-level evaluators


def eval_barenblatt(params: Barenblatt, x, t) -> float | np.ndarray:
    return params(x, t)


def eval_fundamental(p: float, n: int, x, c: float = 1.0):
    return Fundamental(p, n, c)(x)


def eval_crandall_zhang(params: CrandallZhang, x):
    return params(x)


def eval_separable(params: Separable, x, t):
    return params(x, t)


def sample(cf: ClosedForm, grid: Grid | SpaceTimeGrid, cap: float | None = None,
           extended: bool = False):
    """Nodewise evaluation, optionally capped at ``cap`` (the truncation v_k)."""
    if isinstance(grid, SpaceTimeGrid):
        space = grid.space
        if space.dim != cf.dim:
            raise ClosedFormError(f"form has dimension {cf.dim}, grid has {space.dim}")
        X = space.coords()
        vals = np.empty(grid.shape)
        if cf.stationary:
            vals[:] = cf.evaluate(X)
        else:
            for k, t in enumerate(grid.times):
                vals[k] = cf.evaluate(X, t)
    else:
        if grid.dim != cf.dim:
            raise ClosedFormError(f"form has dimension {cf.dim}, grid has {grid.dim}")
        if not cf.stationary:
            raise ClosedFormError(f"{cf.name} is time dependent; sample it on a SpaceTimeGrid "
                                  "or use sample_at")
        vals = cf.evaluate(grid.coords())
    if cap is not None:
        vals = np.minimum(vals, cap)
    if np.isinf(vals).any() and not extended:
        raise ClosedFormError(f"{cf.name} is +inf at some node; pass a cap or extended=True")
    if isinstance(grid, SpaceTimeGrid):
        return SpaceTimeField(grid, vals, extended)
    return ScalarField(grid, vals, extended)


def sample_at(cf: ClosedForm, grid: Grid, t: float, cap: float | None = None) -> ScalarField:
    """One time slice of a time-dependent form."""
    vals = cf.evaluate(grid.coords(), t)
    if cap is not None:
        vals = np.minimum(vals, cap)
    if np.isinf(vals).any():
        raise ClosedFormError(f"{cf.name} is +inf at some node; pass a cap")
    return ScalarField(grid, vals)


# ----------------------------------------------------------------------------
# config round trip


def from_config(cfg: dict, base_dir: str | Path = ".") -> ClosedForm:
    cfg = dict(cfg)
    form = cfg.pop("form", None)
    try:
        if form == "barenblatt":
            return Barenblatt(float(cfg["p"]), int(cfg["n"]), float(cfg.get("C", 1.0)))
        if form == "fundamental":
            return Fundamental(float(cfg["p"]), int(cfg["n"]), float(cfg.get("c", 1.0)))
        if form == "crandall_zhang":
            if "count" in cfg:
                return CrandallZhang.rational(float(cfg["p"]), int(cfg["n"]), int(cfg["count"]),
                                              cfg["box"], float(cfg.get("decay", 0.5)))
            return CrandallZhang(float(cfg["p"]), int(cfg["n"]), cfg["centers"], cfg["coeffs"])
        if form == "separable":
            from psuper.formats import read_field
            path = Path(base_dir) / cfg["U"]
            return Separable(read_field(path), float(cfg.get("t0", 0.0)), float(cfg["p"]),
                             source=str(cfg["U"]))
        if form == "monotone_time":
            return MonotoneTime(int(cfg.get("n", 1)), cfg.get("kind", "linear"),
                                float(cfg.get("slope", 1.0)), float(cfg.get("t_jump", 0.0)),
                                float(cfg.get("height", 1.0)))
        if form == "bump":
            ts = cfg.get("time_support")
            return Bump(TestFunction(tuple(map(tuple, cfg["support"])),
                                     None if ts is None else tuple(ts),
                                     float(cfg.get("amplitude", 1.0))))
    except KeyError as exc:
        raise ClosedFormError(f"{form}: missing parameter {exc.args[0]}") from None
    except GridError as exc:
        raise ClosedFormError(str(exc)) from None
    raise ClosedFormError(f"unknown form {form!r}")
