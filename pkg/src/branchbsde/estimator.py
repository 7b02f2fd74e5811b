"""Branching functional and adaptive Monte Carlo estimates of its mean."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .branching import DEFAULT_NODE_CAP, BranchingLaw, ParticleTree, simulate_forest
from .driver import LocalPolynomialDriver
from .dynamics import Dynamics

Terminal = Callable[[np.ndarray], np.ndarray]
Prior = Callable[[np.ndarray, np.ndarray], np.ndarray]


def truncate(v, bound):
    """Clamp ``v`` to ``[-bound, bound]``."""
    if np.any(np.asarray(bound) <= 0):
        raise ValueError("bound must be positive")
    return np.clip(v, -bound, bound)


def _tree_product(forest: ParticleTree, weights: np.ndarray) -> np.ndarray:
    out = np.ones(forest.n_trees)
    np.multiply.at(out, forest.tree, weights)
    return out


def functional_values(forest: ParticleTree, terminal: Terminal, prior: Prior, t: float,
                      law: BranchingLaw, driver: LocalPolynomialDriver) -> np.ndarray:
    """Per-tree value of the branching functional started at time ``t``.

    Survivors contribute ``terminal(X) / Fbar(horizon - birth)``; a node that
    branches into ``k`` children at time ``T`` contributes
    ``sum_j a_{j,k}(t + T, X) phi_j(prior(t + T, X)) / (p_k rho(lifetime))``.
    """
    surv = forest.survivor
    w = np.empty(forest.n_nodes)
    if surv.any():
        xs = forest.x_end[surv]
        w[surv] = np.asarray(terminal(xs), dtype=float) / law.survival(forest.horizon - forest.birth[surv])
    dead = ~surv
    if dead.any():
        s = t + forest.death[dead]
        xd = forest.x_end[dead]
        xi = forest.offspring[dead]
        coef = driver.branch_factor(s, xd, xi, prior(s, xd))
        w[dead] = coef / (law.offspring_probs[xi] * law.density(forest.lifetime[dead]))
    return _tree_product(forest, w)


def evaluate_functional(tree: ParticleTree, terminal: Terminal, prior: Prior, t: float,
                        t_next: float, law: BranchingLaw, driver: LocalPolynomialDriver) -> float:
    if tree.n_trees != 1:
        raise ValueError("evaluate_functional expects a single tree; use functional_values")
    if not np.isclose(tree.horizon, t_next - t):
        raise ValueError("tree horizon must equal t_next - t")
    return float(functional_values(tree, terminal, prior, t, law, driver)[0])


def dominating_weight(forest: ParticleTree, law: BranchingLaw, coeff_bound: float,
                      bound: float) -> np.ndarray:
    """Per-tree product of ``bound / Fbar`` over survivors and ``2C / (p rho)`` over branchings."""
    surv = forest.survivor
    w = np.empty(forest.n_nodes)
    w[surv] = bound / law.survival(forest.horizon - forest.birth[surv])
    dead = ~surv
    xi = forest.offspring[dead]
    w[dead] = 2.0 * coeff_bound / (law.offspring_probs[xi] * law.density(forest.lifetime[dead]))
    return _tree_product(forest, w)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_err: float
    n_samples: int
    hit_cap: bool


class _Running:
    """Streaming mean/variance (Welford merge of batch moments)."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def add(self, values):
        nb = values.size
        if nb == 0:
            return
        mb = float(values.mean())
        m2b = float(np.sum((values - mb) ** 2))
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n

    @property
    def std_err(self):
        if self.n < 2:
            return float("inf")
        return float(np.sqrt(self.m2 / (self.n - 1) / self.n))


def adaptive_mean(sampler: Callable[[int], np.ndarray], tol: float, cap: int, batch: int) -> McEstimate:
    """Draw batches from ``sampler(n)`` until the standard error drops below ``tol`` or ``cap``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not cap >= batch >= 2:
        raise ValueError("need cap >= batch >= 2")
    acc = _Running()
    while True:
        acc.add(np.asarray(sampler(min(batch, cap - acc.n)), dtype=float))
        if acc.std_err < tol:
            return McEstimate(acc.mean, acc.std_err, acc.n, False)
        if acc.n >= cap:
            return McEstimate(acc.mean, acc.std_err, acc.n, True)


def mc_estimate(t: float, x, terminal: Terminal, prior: Prior, law: BranchingLaw, dyn: Dynamics,
                driver: LocalPolynomialDriver, t_next: float, tol: float, cap: int,
                batch: int, rng, node_cap: int = DEFAULT_NODE_CAP) -> McEstimate:
    """Adaptive Monte Carlo estimate of the branching functional at ``(t, x)``.

    A zero driver never contributes through branchings, so particles are not
    killed and the estimate reduces to plain Monte Carlo of ``terminal(X)``.
    """
    horizon = t_next - t
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if driver.is_zero:
        def sampler(n):
            xs = dyn.simulate(np.broadcast_to(x, (n, x.size)), np.full(n, horizon), rng)
            return terminal(xs)
    else:
        def sampler(n):
            forest = simulate_forest(law, dyn, x, horizon, n, rng, node_cap=node_cap)
            return functional_values(forest, terminal, prior, t, law, driver)
    return adaptive_mean(sampler, tol, cap, batch)


def plain_monte_carlo(x, terminal: Terminal, dyn: Dynamics, horizon: float, n: int, batch: int, rng):
    """Mean and standard error of ``terminal(X_horizon)`` over ``n`` Euler paths."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    acc = _Running()
    while acc.n < n:
        m = min(batch, n - acc.n)
        acc.add(np.asarray(terminal(dyn.simulate(np.broadcast_to(x, (m, x.size)), np.full(m, horizon), rng))))
    return acc.mean, acc.std_err
