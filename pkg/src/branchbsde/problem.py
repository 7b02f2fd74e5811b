"""Semilinear problem description shared by the scheme, benchmarks and CLI."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import Dynamics


@dataclass
class Problem:
    """Terminal value problem ``v_t + L v + f(t, x, v) = 0``, ``v(T, .) = g``.

    Callables are vectorised: ``terminal(x)`` and ``prior(t, x)`` take an
    ``(n, d)`` array, ``driver_fn(t, x, y)`` additionally ``y`` of shape
    ``(n,)``. ``prior`` defaults to ``g`` held constant in time.
    """

    dynamics: Dynamics
    terminal: Callable[[np.ndarray], np.ndarray]
    bound: float
    horizon: float
    driver_fn: Optional[Callable] = None
    prior: Optional[Callable] = None
    make_driver: Optional[Callable] = None
    x0: Optional[np.ndarray] = None
    name: str = "problem"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError("bound M must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon T must be positive")

    @property
    def dim(self) -> int:
        return self.dynamics.dim

    def prior_at(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.prior is None:
            return np.asarray(self.terminal(x), dtype=float)
        return np.asarray(self.prior(t, x), dtype=float)
