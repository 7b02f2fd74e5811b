"""Benchmark problems with closed-form or certified reference solutions."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .driver import LocalPolynomialDriver, fit_local_polynomial, fit_time_sliced
from .dynamics import Box, Dynamics
from .problem import Problem
from .scheme import SchemeConfig

N_TIME_SLICES = 1000


@dataclass
class BenchmarkProblem:
    name: str
    problem: Problem
    reference: Optional[Callable]
    config: SchemeConfig
    certified: bool = True
    residual: float = 0.0
    params: dict = field(default_factory=dict)

    def make_driver(self, n_pieces: Optional[int] = None, degree: Optional[int] = None
                    ) -> LocalPolynomialDriver:
        return self.problem.make_driver(n_pieces or self.config.n_pieces,
                                        degree or self.config.degree)


def _state(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


# -- PDE residual ------------------------------------------------------------

def _sample_points(problem: Problem, density: int, step: float):
    box = problem.dynamics.box
    margin = 2 * step
    ts = np.linspace(margin, problem.horizon - margin, density)
    axes = [np.linspace(lo, hi, density) for lo, hi in zip(box.lower, box.upper)]
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    return ts, xs


def pde_residual(problem: Problem, v: Callable, sample_density: int = 21,
                 step: float = 1e-4, step_t: float = 1e-4) -> float:
    """Max of ``|v_t + mu . grad v + 1/2 tr(a D^2 v) + f(t, x, v)|`` by central differences."""
    ts, xs = _sample_points(problem, sample_density, max(step, step_t))
    dyn = problem.dynamics
    d = xs.shape[1]
    mu = np.asarray(dyn.drift(xs), dtype=float).reshape(-1, d)
    sig = np.asarray(dyn.vol(xs), dtype=float)
    if sig.ndim <= 1:
        a = np.broadcast_to(sig, (len(xs),))[:, None, None] ** 2 * np.eye(d)
    else:
        a = np.einsum("nij,nkj->nik", sig, sig)
    eye = np.eye(d) * step
    worst = 0.0
    for t in ts:
        v0 = v(t, xs)
        vt = (v(t + step_t, xs) - v(t - step_t, xs)) / (2 * step_t)
        res = vt
        for i in range(d):
            vp, vm = v(t, xs + eye[i]), v(t, xs - eye[i])
            res = res + mu[:, i] * (vp - vm) / (2 * step)
            res = res + 0.5 * a[:, i, i] * (vp - 2 * v0 + vm) / step ** 2
        for i, j in itertools.combinations(range(d), 2):
            if not np.any(a[:, i, j]):
                continue
            e = eye[i] + eye[j]
            f = eye[i] - eye[j]
            vij = (v(t, xs + e) - v(t, xs + f) - v(t, xs - f) + v(t, xs - e)) / (4 * step ** 2)
            res = res + a[:, i, j] * vij
        res = res + problem.driver_fn(t, xs, v0)
        worst = max(worst, float(np.max(np.abs(res))))
    return worst


# -- toy problem ---------------------------------------------------------------

def toy_problem(alpha: float = 0.5, horizon: float = 1.0, bound: float = 1.0,
                euler_dt: float = 0.002) -> BenchmarkProblem:
    """One-dimensional problem with solution ``exp(-alpha (T - t)) cos(x)``."""
    lo, hi = np.pi / 8, 7 * np.pi / 8
    ybar = np.cos(lo)
    T = horizon

    def drift(x):
        return 0.1 * (np.pi / 2 - x)

    def vol1(x):
        return 0.2 * (hi - x) * (x - lo)

    def vol(x):
        return vol1(x)[:, 0]

    def fhat(t, y):
        y = np.asarray(y, dtype=float)
        a = np.exp(-alpha * (T - t))
        edge = ybar * a
        root = np.sqrt(np.maximum(a * a - y * y, 0.0))
        r_edge = np.sqrt(a * a - edge * edge)
        tangent = r_edge - edge / r_edge * (np.abs(y) - edge)
        return np.where(np.abs(y) <= edge, root, tangent)

    def driver_fn(t, x, y):
        x = _state(x)[:, 0]
        return drift(x) * fhat(t, y) + (-alpha + 0.5 * vol1(x) ** 2) * y

    box = Box([lo], [hi])
    dyn = Dynamics(drift, vol, box, euler_dt)

    def make_driver(n_pieces, degree):
        times = np.linspace(0.0, T, N_TIME_SLICES)
        base = fit_time_sliced(fhat, bound, n_pieces, degree, times)
        n_coef = base.coeffs.shape[-1]

        def scale(t, x):
            return drift(x[:, 0])

        def shift(t, x):
            out = np.zeros((len(x), n_coef))
            out[:, 1] = -alpha + 0.5 * vol1(x[:, 0]) ** 2
            return out

        return base.with_x_terms(scale=scale, shift=shift, box=box)

    def reference(t, x):
        return np.exp(-alpha * (T - t)) * np.cos(_state(x)[:, 0])

    problem = Problem(dyn, lambda x: np.cos(_state(x)[:, 0]), bound, T, driver_fn=driver_fn,
                      make_driver=make_driver, x0=np.array([np.pi / 2]), name="toy")
    cfg = SchemeConfig(method="A", n_steps=20, grid_step=0.4, tol=0.002, cap=10_000,
                       euler_dt=euler_dt, n_pieces=20, degree=2)
    bench = BenchmarkProblem("toy", problem, reference, cfg,
                             params={"alpha": alpha, "ybar": ybar, "x_lo": lo, "x_hi": hi})
    bench.residual = pde_residual(problem, reference)
    return bench


# -- harder problems on [0, 2]^d ------------------------------------------------

U, V = 0.1, 0.2


def _hard_dynamics(d, euler_dt):
    def drift(x):
        return U * (1.0 - x)

    def vol(x):
        return V * np.prod((2.0 - x) * x, axis=1)

    return Dynamics(drift, vol, Box(np.zeros(d), 2 * np.ones(d)), euler_dt)


def _certify(bench: BenchmarkProblem, candidate, tol: float) -> BenchmarkProblem:
    res = pde_residual(bench.problem, candidate, sample_density=11 if bench.problem.dim == 1 else 5)
    bench.residual = res
    bench.certified = res <= tol
    bench.reference = candidate if bench.certified else None
    return bench


CERTIFY_TOL = 1e-5


def hard_problem_1(C: float = 0.5, horizon: float = 1.0, bound: float = 50.0,
                   euler_dt: float = 0.000125, fit_domain=None) -> BenchmarkProblem:
    """One-dimensional problem with a time-dependent driver in ``log(y)``."""
    T = horizon
    dyn = _hard_dynamics(1, euler_dt)

    def f(t, y):
        y = np.asarray(y, dtype=float)
        phi = np.log(y) - (T - t) / 2
        return y * (0.5 - V ** 2 / (2 * C ** 2) * (phi * (2 * C - phi)) ** 2 - U * (C - phi))

    def driver_fn(t, x, y):
        return f(t, y)

    if fit_domain is None:
        fit_domain = (0.5, 1.2 * np.exp(2 * abs(C) + T / 2))

    def make_driver(n_pieces, degree):
        times = np.linspace(0.0, T, N_TIME_SLICES)
        return fit_time_sliced(f, fit_domain, n_pieces, degree, times)

    def candidate(t, x):
        return np.exp(C * _state(x)[:, 0] + (T - t) / 2)

    problem = Problem(dyn, lambda x: np.exp(C * _state(x)[:, 0]), bound, T, driver_fn=driver_fn,
                      make_driver=make_driver, x0=np.array([1.0]), name="hard1")
    cfg = SchemeConfig(method="A", n_steps=40, grid_step=0.2, tol=0.00025, cap=200_000,
                       euler_dt=euler_dt, n_pieces=10, degree=3, allow_horizon_override=True)
    bench = BenchmarkProblem("hard1", problem, None, cfg,
                             params={"C": C, "fit_domain": list(fit_domain)})
    return _certify(bench, candidate, CERTIFY_TOL)


def hard_problem_2(d: int = 1, C: float = 0.5, c: float = 0.5, horizon: float = 1.0,
                   bound: float = 50.0, euler_dt: float = 0.000125, variant: str = "verbatim",
                   fit_domain=(0.5, 5.0)) -> BenchmarkProblem:
    """Driver ``f1(y) + f2(t, x)`` in dimension ``d <= 3``.

    ``variant="verbatim"`` transcribes ``f2`` as published; ``"consistent"``
    multiplies the first bracket by the exponential so that
    ``exp(C mean(x) + (T - t)/2)`` solves the equation.
    """
    if not 1 <= d <= 3:
        raise ValueError("tensor grids support d in 1..3")
    if variant not in ("verbatim", "consistent"):
        raise ValueError("variant must be 'verbatim' or 'consistent'")
    T = horizon
    dyn = _hard_dynamics(d, euler_dt)

    def f1(y):
        y = np.asarray(y, dtype=float)
        return 0.2 * (y + np.sin(np.pi / 2 * y))

    def f2(t, x):
        x = _state(x)
        s = np.asarray(dyn.vol(x), dtype=float)
        tau = (T - t) / 2
        if variant == "consistent":
            v = np.exp(C / d * x.sum(axis=1) + tau)
            mu = np.asarray(dyn.drift(x)).sum(axis=1)
            return v * (0.5 - (0.2 + C / d * mu) - s ** 2 * C ** 2 / (2 * d)) - 0.2 * np.sin(np.pi / 2 * v)
        if d == 1:
            x1 = x[:, 0]
            mu = dyn.drift(x)[:, 0]
            return (0.5 - (0.2 + C * mu) - s ** 2 * c ** 2 / 2 * np.exp(C * x1 + tau)
                    - 0.2 * np.sin(np.pi / 2 * np.exp(c * x1 + tau)))
        m = C / d * x.sum(axis=1)
        return (0.5 - (0.2 + m) - s ** 2 * c ** 2 / (2 * d) * np.exp(m + tau)
                - 0.2 * np.sin(np.pi / 2 * np.exp(m + tau)))

    def driver_fn(t, x, y):
        return f1(y) + f2(t, x)

    def make_driver(n_pieces, degree):
        base = fit_local_polynomial(lambda x, y: f1(y), fit_domain, n_pieces, degree)
        n_coef = base.coeffs.shape[-1]

        def shift(t, x):
            out = np.zeros((len(x), n_coef))
            out[:, 0] = f2(t, x)
            return out

        drv = base.with_x_terms(shift=shift, box=dyn.box)
        # the shift is time dependent: bound it over a few dates as well
        times = np.linspace(0.0, T, 11)
        bound_t = max(np.abs(shift(t, dyn.box.clamp(_grid_sample(dyn.box)))).max() for t in times)
        return replace(drv, coeff_bound=max(drv.coeff_bound, 1.01 * (bound_t + np.abs(base.coeffs).max())))

    def candidate(t, x):
        return np.exp(C * _state(x).mean(axis=1) + (T - t) / 2)

    problem = Problem(dyn, lambda x: np.exp(C * _state(x).mean(axis=1)), bound, T,
                      driver_fn=driver_fn, make_driver=make_driver, x0=np.ones(d),
                      name=f"hard2_d{d}")
    steps = {1: 40, 2: 80, 3: 160}[d]
    pieces = {1: 10, 2: 20, 3: 80}[d]
    cfg = SchemeConfig(method="A", n_steps=steps, grid_step=0.2, tol=0.00025, cap=200_000,
                       euler_dt=euler_dt, n_pieces=pieces, degree=3, allow_horizon_override=True)
    bench = BenchmarkProblem(f"hard2_d{d}", problem, None, cfg,
                             params={"d": d, "C": C, "c": c, "variant": variant})
    return _certify(bench, candidate, CERTIFY_TOL)


def _grid_sample(box: Box, n: int = 11):
    axes = [np.linspace(lo, hi, n) for lo, hi in zip(box.lower, box.upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)


def self_convergent_reference(bench: BenchmarkProblem, cfg: Optional[SchemeConfig] = None,
                              refine: int = 2):
    """Reference at ``t = 0`` from a refined run when no certified closed form exists.

    Runs the scheme at ``cfg`` and at ``n_steps * refine`` with ``tol / refine``;
    returns the refined initial grid and the sup-distance between both runs.
    """
    from .scheme import run_scheme

    cfg = cfg or bench.config
    fine = replace(cfg, n_steps=cfg.n_steps * refine, tol=cfg.tol / refine,
                   allow_horizon_override=True)
    drv = bench.make_driver(cfg.n_pieces, cfg.degree)
    coarse = run_scheme(bench.problem, drv, None, replace(cfg, allow_horizon_override=True))
    fine_res = run_scheme(bench.problem, drv, None, fine)
    gap = float(np.max(np.abs(coarse.initial.values - fine_res.initial.values)))
    return fine_res.initial, gap


REGISTRY = {
    "toy": toy_problem,
    "hard1": hard_problem_1,
    "hard2": hard_problem_2,
}


def get_benchmark(name: str, **params) -> BenchmarkProblem:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**params)
