"""Independent reference computations used as test oracles.

Everything here is deliberately written against the raw formulas, not the
package's own code paths, so the tests compare two independent routes.
"""

import numpy as np
from scipy.linalg import solve_banded


def unit_transport_oracle(n_grid=8192, tol=1e-12, max_newton=80):
    """Brute-force value of the two-vertex unit-mass transport problem.

    Minimizes sum_k (du)^2 / ((1 - u_mid) dt) over monotone grid paths with
    u(0) = 0, u(1) = 1, parametrized by the source density w = 1 - u.  The
    stationarity system is tridiagonal and solved by damped Newton; the
    analytic substitution v = sqrt(w) gives exactly 4 in the continuum.

    Returns (objective, path u, monotone flag).
    """
    dt = 1.0 / n_grid
    t = np.linspace(0.0, 1.0, n_grid + 1)
    w = (1 - t) ** 2
    w[0], w[-1] = 1.0, 0.0

    def objective(w):
        d = w[1:] - w[:-1]
        s = np.maximum(w[1:] + w[:-1], 1e-300)
        return (2.0 / dt) * np.sum(d * d / s)

    fval = objective(w)
    for _ in range(max_newton):
        d = w[1:] - w[:-1]
        s = np.maximum(w[1:] + w[:-1], 1e-300)
        g_right = 2 * d / s - (d / s) ** 2
        g_left = -2 * d / s - (d / s) ** 2
        grad = (2.0 / dt) * (g_right[:-1] + g_left[1:])
        if np.max(np.abs(grad)) < tol * (2.0 / dt):
            break
        h_rr = 2 * (s - d) ** 2 / s**3
        h_ll = 2 * (s + d) ** 2 / s**3
        h_lr = -2 * (s**2 - d**2) / s**3
        banded = np.zeros((3, n_grid - 1))
        banded[0, 1:] = (2.0 / dt) * h_lr[1:-1]
        banded[1] = (2.0 / dt) * (h_rr[:-1] + h_ll[1:]) + 1e-30
        banded[2, :-1] = (2.0 / dt) * h_lr[1:-1]
        step = solve_banded((1, 1), banded, -grad)
        alpha = 1.0
        for _ in range(60):
            trial = w.copy()
            trial[1:-1] = w[1:-1] + alpha * step
            if np.all(trial[1:-1] > 0) and np.all(trial[1:-1] <= 1.0):
                ftrial = objective(trial)
                if ftrial <= fval:
                    w, fval = trial, ftrial
                    break
            alpha *= 0.5
        else:
            break
    u = 1.0 - w
    monotone = bool(np.all(np.diff(u) >= -1e-12))
    return fval, u, monotone


def rk4_reference(rhs, y0, t_final, n_steps):
    """Classical fixed-step RK4, independent of the adaptive integrator."""
    y = np.array(y0, dtype=float)
    dt = t_final / n_steps
    for _ in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def w1_one_dimensional(positions_a, masses_a, positions_b, masses_b):
    """Exact W1 on the line via the cumulative distribution formula."""
    xs = np.concatenate([np.ravel(positions_a), np.ravel(positions_b)])
    order = np.argsort(xs, kind="stable")
    xs_sorted = xs[order]
    signed = np.concatenate([np.ravel(masses_a), -np.ravel(masses_b)])[order]
    cdf_gap = np.cumsum(signed)[:-1]
    return float(np.sum(np.abs(cdf_gap) * np.diff(xs_sorted)))
