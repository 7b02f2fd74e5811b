"""Backward schemes: Method A, Method B (sub-grid priors) and Picard iterations."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .bounds import BoundsReport, bounds_report, check_period
from .branching import DEFAULT_NODE_CAP, BranchingLaw
from .driver import LocalPolynomialDriver
from .estimator import mc_estimate, truncate
from .grid import ValueGrid
from .problem import Problem

METHODS = ("A", "B", "picard")


@dataclass
class SchemeConfig:
    method: str = "A"
    n_steps: int = 20
    n_substeps: int = 1
    picard_iterations: int = 1
    grid_step: float = 0.4
    interpolation: str = "monotone-quadratic"
    tol: float = 0.002
    cap: int = 10_000
    batch: int = 256
    euler_dt: Optional[float] = None
    lifetime_rate: float = 0.4
    offspring: Union[str, Sequence[float]] = "auto"
    n_pieces: int = 20
    degree: int = 2
    seed: int = 0
    workers: int = 1
    allow_horizon_override: bool = False
    node_cap: int = DEFAULT_NODE_CAP

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("n_steps", "n_substeps", "picard_iterations", "cap", "batch", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.cap >= self.batch >= 2:
            raise ValueError("need cap >= batch >= 2")
        if not self.tol > 0 or not self.grid_step > 0:
            raise ValueError("tol and grid_step must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        if not isinstance(d["offspring"], str):
            d["offspring"] = [float(p) for p in d["offspring"]]
        return d


@dataclass
class SchemeResult:
    """Grids at the macro dates plus per-node Monte Carlo diagnostics."""

    dates: np.ndarray
    grids: list
    std_err: list
    n_samples: list
    hit_cap: list
    step_seconds: list
    bounds: BoundsReport
    law: BranchingLaw
    iterations: list = field(default_factory=list)

    @property
    def initial(self) -> ValueGrid:
        return self.grids[0]

    @property
    def cap_hits(self) -> int:
        return int(sum(int(np.sum(h)) for h in self.hit_cap if h is not None))


def point_rng(seed: int, i: int, j: int, k: int) -> np.random.Generator:
    """Stream for macro date ``i``, sub-date ``j`` and grid node ``k``."""
    return np.random.default_rng(np.random.SeedSequence([seed, i, j, k]))


def offspring_law(driver: LocalPolynomialDriver, cfg: SchemeConfig, box=None) -> BranchingLaw:
    """Offspring law from the config; ``"auto"`` weights powers by coefficient size."""
    L = driver.degree
    if isinstance(cfg.offspring, str):
        if cfg.offspring == "uniform":
            return BranchingLaw.uniform(L, cfg.lifetime_rate)
        if cfg.offspring != "auto":
            raise ValueError(f"unknown offspring rule {cfg.offspring!r}")
        size = power_bounds(driver, box)
        if size.sum() == 0:
            return BranchingLaw.uniform(L, cfg.lifetime_rate)
        # mix with uniform so every power keeps positive probability
        p = 0.9 * size / size.sum() + 0.1 / (L + 1)
        return BranchingLaw(p / p.sum(), cfg.lifetime_rate)
    p = np.asarray(cfg.offspring, dtype=float)
    if p.size != L + 1:
        raise ValueError(f"offspring law needs {L + 1} probabilities")
    return BranchingLaw(p, cfg.lifetime_rate)


def power_bounds(driver: LocalPolynomialDriver, box=None) -> np.ndarray:
    """``max_{j,t,x} |a_{j,l}|`` per power ``l`` (sampled on ``box`` when x terms exist)."""
    L = driver.degree
    out = np.zeros(L + 1)
    if box is None or (driver.scale is None and driver.shift is None and driver.x_nodes is None):
        c = np.abs(driver.coeffs).max(axis=(0, 1, 2))
        out[: c.size] = c
        return out
    d = box.dim
    n = {1: 201, 2: 21, 3: 9}.get(d, 5)
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(box.lower, box.upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    times = [0.0] if driver.slice_times is None else driver.slice_times[:: max(1, len(driver.slice_times) // 50)]
    for t in times:
        a = np.abs(driver.coefficients(t, pts)).max(axis=(0, 1))
        out[: a.size] = np.maximum(out[: a.size], a)
    return out


class _Context:
    def __init__(self, problem: Problem, driver: LocalPolynomialDriver, law: BranchingLaw,
                 cfg: SchemeConfig):
        self.problem = problem
        self.driver = driver
        self.law = law
        self.cfg = cfg
        dyn = problem.dynamics
        if cfg.euler_dt is not None:
            dyn = replace(dyn, euler_dt=cfg.euler_dt)
        self.dyn = dyn
        self.h = problem.horizon / cfg.n_steps
        self.dates = np.linspace(0.0, problem.horizon, cfg.n_steps + 1)
        self.report = bounds_report(driver, problem.bound)
        check_period(self.h, self.report.h_o, cfg.allow_horizon_override)
        self.template = ValueGrid.uniform(dyn.box, cfg.grid_step, cfg.interpolation)
        self.nodes = self.template.nodes()

    def estimate(self, t, t_next, terminal, prior, key, bound):
        cfg = self.cfg

        def job(k):
            rng = point_rng(cfg.seed, key[0], key[1], k)
            return mc_estimate(t, self.nodes[k], terminal, prior, self.law, self.dyn, self.driver,
                               t_next, cfg.tol, cfg.cap, cfg.batch, rng, node_cap=cfg.node_cap)

        ks = range(len(self.nodes))
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                ests = list(pool.map(job, ks))
        else:
            ests = [job(k) for k in ks]
        mean = np.array([e.mean for e in ests])
        grid = self.template.with_values(truncate(mean, bound))
        return (grid, np.array([e.std_err for e in ests]), np.array([e.n_samples for e in ests]),
                np.array([e.hit_cap for e in ests]))

    def terminal_grid(self) -> ValueGrid:
        return self.template.set_from(self.problem.terminal)


def _prepare(problem, driver, law, cfg):
    if law is None:
        law = offspring_law(driver, cfg, problem.dynamics.box)
    if law.max_offspring < driver.degree:
        raise ValueError("offspring law must cover every power of the driver")
    return _Context(problem, driver, law, cfg)


def _empty_result(ctx):
    n = ctx.cfg.n_steps
    return SchemeResult(ctx.dates, [None] * (n + 1), [None] * (n + 1), [None] * (n + 1),
                        [None] * (n + 1), [0.0] * n, ctx.report, ctx.law)


def run_method_a(problem: Problem, driver: LocalPolynomialDriver, law: Optional[BranchingLaw],
                 cfg: SchemeConfig) -> SchemeResult:
    """Backward sweep using the next date's grid as both terminal and prior."""
    ctx = _prepare(problem, driver, law, cfg)
    res = _empty_result(ctx)
    n = cfg.n_steps
    res.grids[n] = ctx.terminal_grid()
    for i in range(n - 1, -1, -1):
        start = time.perf_counter()
        nxt = res.grids[i + 1]
        prior = lambda s, x, g=nxt: g.interpolate(x)
        out = ctx.estimate(ctx.dates[i], ctx.dates[i + 1], nxt.interpolate, prior, (i, 0),
                           problem.bound)
        res.grids[i], res.std_err[i], res.n_samples[i], res.hit_cap[i] = out
        res.step_seconds[i] = time.perf_counter() - start
    return res


def run_method_b(problem: Problem, driver: LocalPolynomialDriver, law: Optional[BranchingLaw],
                 cfg: SchemeConfig) -> SchemeResult:
    """Backward sweep with priors read from a sub-grid of each macro interval."""
    ctx = _prepare(problem, driver, law, cfg)
    res = _empty_result(ctx)
    n, nsub = cfg.n_steps, cfg.n_substeps
    hsub = ctx.h / nsub
    growth = ctx.report.growth
    res.grids[n] = ctx.terminal_grid()
    for i in range(n - 1, -1, -1):
        start = time.perf_counter()
        t_i, t_next = ctx.dates[i], ctx.dates[i + 1]
        sub = [None] * (nsub + 1)
        sub[nsub] = res.grids[i + 1]
        for j in range(nsub - 1, -1, -1):

            def prior(s, x, j=j, sub=sub, t_i=t_i):
                kappa = np.clip(np.ceil((s - t_i) / hsub - 1e-9).astype(int), j + 1, nsub)
                out = np.empty(len(s))
                for kk in np.unique(kappa):
                    sel = kappa == kk
                    out[sel] = sub[kk].interpolate(x[sel])
                return out

            bound = problem.bound if j == 0 else growth
            out = ctx.estimate(t_i + j * hsub, t_next, res.grids[i + 1].interpolate, prior,
                               (i, j), bound)
            sub[j] = out[0]
            if j == 0:
                res.grids[i], res.std_err[i], res.n_samples[i], res.hit_cap[i] = out
        res.step_seconds[i] = time.perf_counter() - start
    return res


def run_picard(problem: Problem, driver: LocalPolynomialDriver, law: Optional[BranchingLaw],
               cfg: SchemeConfig) -> SchemeResult:
    """Picard iterations with priors linearly interpolated in time from the previous iterate.

    ``result.iterations[m]`` holds the date grids of iterate ``m``; iterate 0
    is the problem's prior. Random streams do not depend on ``m``.
    """
    ctx = _prepare(problem, driver, law, cfg)
    n = cfg.n_steps
    prev = [ctx.template.set_from(lambda x, t=t: problem.prior_at(t, x)) for t in ctx.dates]
    prev[n] = ctx.terminal_grid()
    iterations = [prev]
    res = None
    for _ in range(cfg.picard_iterations):
        res = _empty_result(ctx)
        res.grids[n] = ctx.terminal_grid()
        for i in range(n - 1, -1, -1):
            start = time.perf_counter()
            t_i, t_next = ctx.dates[i], ctx.dates[i + 1]

            def prior(s, x, lo=prev[i], hi=prev[i + 1], t_i=t_i):
                w = (s - t_i) / ctx.h
                a = lo.interpolate(x)
                return w * (hi.interpolate(x) - a) + a

            out = ctx.estimate(t_i, t_next, res.grids[i + 1].interpolate, prior, (i, 0),
                               problem.bound)
            res.grids[i], res.std_err[i], res.n_samples[i], res.hit_cap[i] = out
            res.step_seconds[i] = time.perf_counter() - start
        iterations.append(res.grids)
        prev = res.grids
    res.iterations = iterations
    return res


def run_scheme(problem: Problem, driver: LocalPolynomialDriver, law: Optional[BranchingLaw],
               cfg: SchemeConfig) -> SchemeResult:
    return {"A": run_method_a, "B": run_method_b, "picard": run_picard}[cfg.method](
        problem, driver, law, cfg)

