"""Regularizations: quadratic infimal convolution, the exponential time
mollifier, and the essential-liminf representative."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from psuper.grid import GridError, ScalarField, SpaceTimeField


class MollifyError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EnvelopeResult:
    field: ScalarField | SpaceTimeField
    epsilon: float
    shrink_margin: float
    valid_mask: np.ndarray


def _node_axes(f):
    """Coordinates along every array axis (time first for space-time fields)."""
    if isinstance(f, SpaceTimeField):
        return [f.stgrid.times] + f.grid.axes()
    return f.grid.axes()


def _lower_envelope_1d(g: np.ndarray, x: np.ndarray, two_eps: float) -> np.ndarray:
    """min_j g[j] + (x[i] - x[j])**2 / two_eps for every i, in linear time.

    Parabolas with +inf height are skipped. After the envelope sweep every
    node compares its winning parabola with the two envelope neighbours,
    so rounding in the breakpoints cannot change the minimum value.
    """
    n = len(x)
    finite = np.flatnonzero(np.isfinite(g))
    out = np.full(n, np.inf)
    if finite.size == 0:
        return out
    v = np.empty(finite.size, dtype=np.intp)
    z = np.empty(finite.size + 1)
    k = 0
    v[0] = finite[0]
    z[0], z[1] = -np.inf, np.inf
    for q in finite[1:]:
        while True:
            r = v[k]
            s = ((g[q] - g[r]) * two_eps + x[q] * x[q] - x[r] * x[r]) / (2.0 * (x[q] - x[r]))
            if s <= z[k] and k > 0:
                k -= 1
                continue
            if s <= z[k]:
                # the new parabola beats the only one left everywhere
                v[0] = q
                z[1] = np.inf
                break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
            break
    m = k + 1
    seg = np.searchsorted(z[1:m], x, side="left")
    best = None
    for off in (-1, 0, 1):
        idx = v[np.clip(seg + off, 0, m - 1)]
        d = x - x[idx]
        val = g[idx] + d * d / two_eps
        best = val if best is None else np.minimum(best, val)
    return best


def _envelope_axis(a: np.ndarray, axis: int, x: np.ndarray, two_eps: float) -> np.ndarray:
    moved = np.ascontiguousarray(np.moveaxis(a, axis, -1))
    flat = moved.reshape(-1, moved.shape[-1])
    out = np.empty_like(flat)
    for row in range(flat.shape[0]):
        out[row] = _lower_envelope_1d(flat[row], x, two_eps)
    return np.moveaxis(out.reshape(moved.shape), -1, axis)


def _check_below(f):
    vals = f.values
    if np.isnan(vals).any() or (vals == -np.inf).any():
        raise MollifyError("input must be bounded below (found -inf or NaN)")


def inf_convolution(f: ScalarField | SpaceTimeField, epsilon: float) -> EnvelopeResult:
    """Discrete Moreau envelope inf_y f(y) + |x - y|^2 / (2 epsilon) over grid nodes.

    For space-time fields the time coordinate enters the quadratic on the
    same footing as the space coordinates. The separable quadratic is
    minimized one axis at a time; because floating-point rounding is monotone
    the result is bit-identical to the brute-force minimum of
    ``((f + q_0) + q_1) + ...`` over all nodes.
    """
    if not epsilon > 0:
        raise MollifyError(f"epsilon must be positive, got {epsilon}")
    _check_below(f)
    two_eps = 2.0 * float(epsilon)
    axes = _node_axes(f)
    a = np.array(f.values, dtype=float)
    for i, x in enumerate(axes):
        a = _envelope_axis(a, i, x, two_eps)
    L = max(float(np.max(f.values)), 0.0)
    margin = math.sqrt(2.0 * L * epsilon)  # +inf input: no node is certified
    dist = np.full(a.shape, np.inf)
    for i, x in enumerate(axes):
        d = np.minimum(x - x[0], x[-1] - x)
        sh = [1] * a.ndim
        sh[i] = -1
        dist = np.minimum(dist, d.reshape(sh))
    valid = dist > margin
    valid.setflags(write=False)
    if isinstance(f, SpaceTimeField):
        out = SpaceTimeField(f.stgrid, a, f.extended)
    else:
        out = ScalarField(f.grid, a, f.extended)
    return EnvelopeResult(out, float(epsilon), margin, valid)


def brute_force_envelope(f: ScalarField | SpaceTimeField, epsilon: float) -> np.ndarray:
    """O(N^2) reference for :func:`inf_convolution`, summing axes in the same order."""
    _check_below(f)
    two_eps = 2.0 * float(epsilon)
    axes = _node_axes(f)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = [m.ravel() for m in mesh]
    vals = np.asarray(f.values, float).ravel()
    out = np.empty(vals.size)
    block = 256
    for i0 in range(0, vals.size, block):
        i1 = min(vals.size, i0 + block)
        total = np.broadcast_to(vals, (i1 - i0, vals.size))
        for c in pts:
            d = c[i0:i1, None] - c[None, :]
            total = total + d * d / two_eps
        out[i0:i1] = total.min(axis=1)
    return out.reshape(f.values.shape)


def time_mollify(u: SpaceTimeField, sigma: float) -> SpaceTimeField:
    """Exponential moving average u*(t) = (1/sigma) int_{t0}^t e^{(s-t)/sigma} u(s) ds.

    Uses the exact decay factor per step and the trapezoid average of u
    inside the step; the local error is O(dt^2). u*(t0) = 0.
    """
    if not sigma > 0:
        raise MollifyError(f"sigma must be positive, got {sigma}")
    if not np.isfinite(u.values).all():
        raise MollifyError("time mollifier needs a finite field; truncate first")
    a = math.exp(-u.stgrid.dt / sigma)
    vals = u.values
    out = np.zeros_like(vals)
    for k in range(len(vals) - 1):
        out[k + 1] = a * out[k] + (1.0 - a) * 0.5 * (vals[k] + vals[k + 1])
    return SpaceTimeField(u.stgrid, out)


def mollifier_defect(u: SpaceTimeField, ustar: SpaceTimeField, sigma: float) -> float:
    """Max-norm of sigma du*/dt + u* - u, all terms centred on the half steps."""
    dt = u.stgrid.dt
    s = ustar.values
    mid = 0.5 * (s[1:] + s[:-1])
    umid = 0.5 * (u.values[1:] + u.values[:-1])
    return float(np.max(np.abs(sigma * np.diff(s, axis=0) / dt + mid - umid)))


def _footprint(ndim: int, r: int, past_only: bool) -> np.ndarray:
    fp = np.ones((2 * r + 1,) * ndim, bool)
    if past_only:
        fp[r:] = False  # keep time offsets -r .. -1 only
    return fp


def ess_liminf_representative(f: ScalarField | SpaceTimeField, null_mask,
                              past_only: bool = False):
    """Repair nodes flagged as measure-zero corruption.

    Nodes outside ``null_mask`` keep their values. Each null node takes the
    minimum over the non-null nodes in the smallest Chebyshev neighbourhood
    (radius 1, then 2) that contains one. With ``past_only`` the
    neighbourhood of a space-time node is restricted to strictly earlier
    slices; nodes on the first slice fall back to their own slice.
    """
    null = np.asarray(null_mask, bool)
    if null.shape != f.values.shape:
        raise MollifyError(f"null_mask has shape {null.shape}, field has {f.values.shape}")
    if past_only and not isinstance(f, SpaceTimeField):
        raise MollifyError("past_only needs a space-time field")
    vals = np.array(f.values, float)
    if not null.any():
        return f
    masked = np.where(null, np.inf, vals)
    out = vals.copy()
    todo = null.copy()
    for r in (1, 2):
        if not todo.any():
            break
        fill = ndimage.minimum_filter(masked, footprint=_footprint(vals.ndim, r, past_only),
                                      mode="constant", cval=np.inf)
        if past_only:
            own = ndimage.minimum_filter(masked[0], footprint=_footprint(vals.ndim - 1, r, False),
                                         mode="constant", cval=np.inf)
            fill[0] = own
        avail = ndimage.maximum_filter(~null, footprint=_footprint(vals.ndim, r, past_only),
                                       mode="constant", cval=False)
        if past_only:
            avail[0] = ndimage.maximum_filter(~null[0], footprint=_footprint(vals.ndim - 1, r, False),
                                              mode="constant", cval=False)
        hit = todo & avail
        out[hit] = fill[hit]
        todo &= ~hit
    if todo.any():
        idx = tuple(int(i) for i in np.argwhere(todo)[0])
        raise MollifyError(f"node {idx} has no non-null neighbour within 2 cells; ill-posed")
    if isinstance(f, SpaceTimeField):
        return SpaceTimeField(f.stgrid, out, f.extended)
    try:
        return ScalarField(f.grid, out, f.extended, f.valid)
    except GridError as exc:
        raise MollifyError(str(exc)) from None
