"""Reference computations written independently of the package code paths."""
import numpy as np
from scipy.integrate import solve_ivp


def eta_quadratic_closed_form(C, M, t):
    """Solution of eta' = 2C(1 + eta + eta**2), eta(0) = M."""
    s3 = np.sqrt(3.0)
    return (s3 * np.tan(s3 * C * t + np.arctan((2 * M + 1) / s3)) - 1) / 2


def backward_ode(coeffs, g, horizon):
    """v(0) for v' = -sum_l c_l v**l on [0, horizon], v(horizon) = g (high-order scipy solve)."""
    c = np.asarray(coeffs, dtype=float)
    rhs = lambda s, v: [np.polyval(c[::-1], v[0])]   # in reversed time s = horizon - t
    sol = solve_ivp(rhs, (0.0, horizon), [g], method="DOP853", rtol=1e-12, atol=1e-14)
    return float(sol.y[0, -1])


def linear_ode_flow(x0, target, rate, t):
    """x' = rate (target - x)."""
    return target + (x0 - target) * np.exp(-rate * t)
