"""Independent reference computations used to cross-check the solvers."""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq


def _shoot(p: float, slope: float, length: float):
    """Integrate U' = |V|^{1/(p-1)} sgn V, V' = -U/(p-2) from U = 0, U' = slope."""

    def rhs(_, y):
        u, v = y
        return [np.sign(v) * abs(v) ** (1 / (p - 1)), -u / (p - 2)]

    def turn(_, y):
        return y[1]

    turn.terminal = True
    turn.direction = -1
    v0 = slope ** (p - 1)
    return solve_ivp(rhs, (0, length), [0.0, v0], events=turn, rtol=1e-12, atol=1e-14,
                     dense_output=True)


def shooting_ground_state(p: float, length: float = 1.0):
    """Positive solution of (|U'|^{p-2} U')' + U/(p-2) = 0 on (0, length), U = 0 at both ends.

    The profile is symmetric, so the initial slope is chosen with Brent's
    method such that U' first vanishes at the midpoint. Returns a callable
    U(x) valid on [0, length].
    """
    half = length / 2

    def miss(log_slope):
        sol = _shoot(p, np.exp(log_slope), 10 * length)
        if sol.t_events[0].size == 0:
            return 10 * length - half
        return sol.t_events[0][0] - half

    lo, hi = -10.0, 10.0
    a = brentq(miss, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    sol = _shoot(p, np.exp(a), half * (1 + 1e-9))

    def U(x):
        x = np.asarray(x, float)
        y = np.minimum(x, length - x)
        return sol.sol(np.clip(y, 0, half))[0]

    return U
