"""Forward SDE on a compact box, simulated with the explicit Euler scheme."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned compact box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def clamp(self, x):
        return np.clip(x, self.lower, self.upper)

    def contains(self, x, tol: float = 0.0):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - tol) & (x <= self.upper + tol), axis=-1)


@dataclass(frozen=True)
class Dynamics:
    """``dX = drift(X) dt + vol(X) dW`` restricted to ``box``.

    ``drift`` maps an ``(n, d)`` array to ``(n, d)``. ``vol`` returns either
    ``(n,)`` (scalar times identity) or ``(n, d, d)``. Positions are clamped
    to the box after every Euler step, so the coefficients are only ever
    evaluated inside it.
    """

    drift: Callable[[np.ndarray], np.ndarray]
    vol: Callable[[np.ndarray], np.ndarray]
    box: Box
    euler_dt: float = 0.002

    def __post_init__(self):
        if not self.euler_dt > 0:
            raise ValueError("euler_dt must be positive")

    @property
    def dim(self) -> int:
        return self.box.dim

    def step(self, x, h, rng):
        """One Euler step of sizes ``h`` (shape (n,)) from positions ``x``."""
        n, d = x.shape
        noise = rng.standard_normal((n, d))
        mu = np.asarray(self.drift(x), dtype=float).reshape(n, d)
        sig = np.asarray(self.vol(x), dtype=float)
        sq = np.sqrt(h)[:, None]
        if sig.ndim <= 1:
            diff = np.broadcast_to(sig, (n,))[:, None] * noise
        else:
            diff = np.einsum("nij,nj->ni", sig.reshape(n, d, d), noise)
        return self.box.clamp(x + mu * h[:, None] + diff * sq)

    def simulate(self, x0, durations, rng, record: bool = False):
        """Advance ``n`` independent particles by their own ``durations``.

        Returns final positions ``(n, d)``; with ``record=True`` also a list
        of ``(positions, times)`` per particle.
        """
        x = self.box.clamp(np.array(x0, dtype=float, ndmin=2))
        n = x.shape[0]
        remaining = np.broadcast_to(np.asarray(durations, dtype=float), (n,)).copy()
        if np.any(remaining < 0):
            raise ValueError("durations must be nonnegative")
        # steps of euler_dt, the last one partial; the 1e-12 guard avoids a spurious tiny step
        n_steps = np.ceil(remaining / self.euler_dt - 1e-12).astype(int)
        hist = [x.copy()] if record else None
        dts = [np.zeros(n)] if record else None
        for k in range(int(n_steps.max(initial=0))):
            act = np.flatnonzero(n_steps > k)
            last = n_steps[act] == k + 1
            h = np.where(last, remaining[act], self.euler_dt)
            x[act] = self.step(x[act], h, rng)
            remaining[act] -= h
            if record:
                hist.append(x.copy())
                step = np.zeros(n)
                step[act] = h
                dts.append(step)
        if not record:
            return x
        hist = np.stack(hist)
        times = np.cumsum(np.stack(dts), axis=0)
        paths = [(hist[: n_steps[i] + 1, i], times[: n_steps[i] + 1, i]) for i in range(n)]
        return x, paths


def simulate_path(dyn: Dynamics, x0, duration: float, rng):
    """Euler path of one particle; returns ``(positions, times, final)``."""
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    final, paths = dyn.simulate(x0[None, :], [duration], rng, record=True)
    positions, times = paths[0]
    return positions, times, final[0]
