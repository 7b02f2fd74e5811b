"""Estimator-style wrapper around the backward schemes."""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .branching import DEFAULT_NODE_CAP
from .problem import Problem
from .scheme import SchemeConfig, run_scheme
from .testcases import BenchmarkProblem


class BranchingBSDESolver(BaseEstimator):
    """Solve ``v_t + L v + f(t, x, v) = 0`` on a grid; ``predict`` interpolates ``v(t, .)``.

    Hyper-parameters mirror :class:`SchemeConfig`. ``fit`` takes a
    :class:`Problem` (with ``make_driver``) or a :class:`BenchmarkProblem`.
    """

    def __init__(self, method="A", n_steps=20, n_substeps=1, picard_iterations=1, grid_step=0.4,
                 interpolation="monotone-quadratic", tol=0.002, cap=10_000, batch=256,
                 euler_dt=None, lifetime_rate=0.4, offspring="auto", n_pieces=20, degree=2,
                 seed=0, workers=1, allow_horizon_override=False, node_cap=DEFAULT_NODE_CAP):
        self.method = method
        self.n_steps = n_steps
        self.n_substeps = n_substeps
        self.picard_iterations = picard_iterations
        self.grid_step = grid_step
        self.interpolation = interpolation
        self.tol = tol
        self.cap = cap
        self.batch = batch
        self.euler_dt = euler_dt
        self.lifetime_rate = lifetime_rate
        self.offspring = offspring
        self.n_pieces = n_pieces
        self.degree = degree
        self.seed = seed
        self.workers = workers
        self.allow_horizon_override = allow_horizon_override
        self.node_cap = node_cap

    def _config(self) -> SchemeConfig:
        return SchemeConfig(**{f.name: getattr(self, f.name) for f in fields(SchemeConfig)})

    def fit(self, problem, y=None, driver=None):
        if isinstance(problem, BenchmarkProblem):
            problem = problem.problem
        if not isinstance(problem, Problem):
            raise TypeError("fit expects a Problem or BenchmarkProblem")
        cfg = self._config()
        if driver is None:
            if problem.make_driver is None:
                raise ValueError("problem has no make_driver; pass a fitted driver")
            driver = problem.make_driver(cfg.n_pieces, cfg.degree)
        self.result_ = run_scheme(problem, driver, None, cfg)
        self.driver_ = driver
        self.dates_ = self.result_.dates
        self.grids_ = self.result_.grids
        self.bounds_ = self.result_.bounds
        self.n_features_in_ = problem.dim
        return self

    def predict(self, X, t: float = 0.0) -> np.ndarray:
        check_is_fitted(self, "grids_")
        X = check_array(X, ensure_2d=True, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        i = int(np.argmin(np.abs(self.dates_ - t)))
        if not np.isclose(self.dates_[i], t, rtol=0, atol=1e-12):
            raise ValueError(f"t={t} is not a scheme date")
        return self.grids_[i].interpolate(X)
