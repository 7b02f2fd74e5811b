"""Explosion horizon, growth bound and moment constants of the branching weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .branching import BranchingLaw, simulate_forest
from .dynamics import Box, Dynamics
from .estimator import dominating_weight


class HorizonError(ValueError):
    """Scheme period too large for the weights to be integrable."""


def _check(C, degree, M):
    if not C > 0:
        raise ValueError("coefficient bound must be positive")
    if not M > 0:
        raise ValueError("bound M must be positive")
    if degree < 2:
        raise ValueError("degree must be >= 2")


def explosion_horizon(C: float, degree: int, M: float) -> float:
    """Lower bound ``h_o`` on the blow-up time of ``eta' = sum_l 2C eta**l, eta(0) = M``."""
    _check(C, degree, M)
    num = (degree - 1) * max(1.0 - M, 0.0) + max(1.0, M) ** (-(degree - 1))
    return num / ((degree + 1) * (degree - 1) * 2.0 * C)


def growth_bound(C: float, degree: int, M: float, h: float) -> float:
    """Bound ``M_h`` on intermediate values over a period ``h``."""
    inner = (max(1.0, M) ** (1 - degree) + (degree - 1) * max(1.0 - M, 0.0)
             - h * degree * (degree - 1) * 2.0 * C)
    if not inner > 0:
        raise HorizonError(f"horizon too large: h={h} leaves no finite growth bound")
    return max(1.0, inner ** (1.0 / (1 - degree)))


def eta_rhs(C: float, degree: int) -> Callable[[float], float]:
    return lambda y: 2.0 * C * sum(y ** ell for ell in range(degree + 1))


def solve_eta(C: float, degree: int, M: float, t: float, n_steps: int = 10_000) -> float:
    """Classical RK4 for ``eta(t)`` with at least ``n_steps`` steps over ``[0, h_o]``."""
    h_o = explosion_horizon(C, degree, M)
    if t < 0 or t > h_o * (1 + 1e-12):
        raise ValueError(f"t={t} outside [0, h_o={h_o}]")
    if t == 0:
        return float(M)
    n = max(1, int(np.ceil(n_steps * t / h_o)))
    dt = t / n
    f = eta_rhs(C, degree)
    y = float(M)
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return y


def check_period(h: float, h_o: float, allow_override: bool = False) -> None:
    """Refuse periods ``h >= h_o`` unless explicitly overridden."""
    if h >= h_o and not allow_override:
        raise HorizonError(
            f"period h={h:.6g} is not below the explosion horizon h_o={h_o:.6g}; "
            "increase the number of steps or pass allow_horizon_override")


@dataclass(frozen=True)
class MomentBounds:
    m1: float
    m1_se: float
    m2: float
    m2_se: float


def _still_box():
    box = Box([-1.0], [1.0])
    zero = lambda x: np.zeros_like(x)
    return Dynamics(zero, lambda x: np.zeros(len(x)), box, euler_dt=1.0)


def moment_bounds(law: BranchingLaw, coeff_bound: float, M: float, h: float, n_trees: int, rng,
                  degree: int = None, batch: int = 50_000) -> MomentBounds:
    """Monte Carlo means of ``q_h V^M_h`` and ``qbar_h V^M_h``.

    ``q`` counts survivors and ``qbar`` all particles born by ``h``. Spatial
    motion does not enter these weights, so a motionless particle is used.
    """
    degree = law.max_offspring if degree is None else degree
    h_o = explosion_horizon(coeff_bound, max(degree, 2), M)
    if not h < h_o:
        raise HorizonError(f"h={h} must be below h_o={h_o}")
    dyn = _still_box()
    s1 = []
    s2 = []
    done = 0
    while done < n_trees:
        m = min(batch, n_trees - done)
        forest = simulate_forest(law, dyn, [0.0], h, m, rng)
        vm = dominating_weight(forest, law, coeff_bound, M)
        q = forest.count_per_tree(forest.survivor)
        qbar = np.bincount(forest.tree, minlength=m)
        s1.append(q * vm)
        s2.append(qbar * vm)
        done += m
    s1 = np.concatenate(s1)
    s2 = np.concatenate(s2)
    se = lambda v: float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("inf")
    return MomentBounds(float(s1.mean()), se(s1), float(s2.mean()), se(s2))


def sample_dominating_weight(law: BranchingLaw, coeff_bound: float, M: float, t: float,
                             n_trees: int, rng, batch: int = 50_000) -> np.ndarray:
    """Samples of ``V^M_t`` over ``n_trees`` independent trees."""
    dyn = _still_box()
    out = []
    done = 0
    while done < n_trees:
        m = min(batch, n_trees - done)
        forest = simulate_forest(law, dyn, [0.0], t, m, rng)
        out.append(dominating_weight(forest, law, coeff_bound, M))
        done += m
    return np.concatenate(out)


@dataclass
class BoundsReport:
    h_o: float
    growth: float
    coeff_bound: float
    degree: int
    M: float
    kernel_lipschitz: float
    L1: float = float("nan")
    L2: float = float("nan")
    moments: MomentBounds = None
    extra: dict = field(default_factory=dict)

    def eta(self, t: float) -> float:
        return solve_eta(self.coeff_bound, self.degree, self.M, t)

    def as_dict(self) -> dict:
        out = {
            "h_o": self.h_o, "M_h_o": self.growth, "coeff_bound": self.coeff_bound,
            "degree": self.degree, "M": self.M, "kernel_lipschitz": self.kernel_lipschitz,
            "L1": self.L1, "L2": self.L2,
        }
        if self.moments is not None:
            out.update(M1_h=self.moments.m1, M1_h_se=self.moments.m1_se,
                       M2_h=self.moments.m2, M2_h_se=self.moments.m2_se)
        out.update(self.extra)
        return out


def bounds_report(driver, M: float) -> BoundsReport:
    """Horizon, growth bound and Lipschitz constants for a fitted driver."""
    from .driver import lipschitz_constants

    C = driver.coeff_bound
    if C <= 0:
        return BoundsReport(float("inf"), max(1.0, M), 0.0, driver.degree, M,
                            driver.kernel_lipschitz, 0.0, 0.0)
    h_o = explosion_horizon(C, driver.degree, M)
    growth = growth_bound(C, driver.degree, M, h_o)
    l1, l2 = lipschitz_constants(driver, growth)
    return BoundsReport(h_o, growth, C, driver.degree, M, driver.kernel_lipschitz, l1, l2)
