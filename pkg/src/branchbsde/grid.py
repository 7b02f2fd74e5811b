"""Tensor grids of values with multilinear or range-limited quadratic interpolation.

Limited quadratic mode, per axis and per cell ``[x_i, x_{i+1}]``:

    q(x) = mean of the Lagrange quadratics on (x_{i-1}, x_i, x_{i+1})
           and (x_i, x_{i+1}, x_{i+2}), whichever exist
    I(x) = clip(q(x), min(v_i, v_{i+1}), max(v_i, v_{i+1}))

Axes are reduced one at a time (last axis first), each stage clipped to the
values of the two in-cell lines, so the result stays inside the envelope of
the ``2**d`` cell corners. Affine data are reproduced exactly.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .dynamics import Box

MODES = ("linear", "monotone-quadratic")


def _axis_weights(nodes: np.ndarray, q: np.ndarray):
    """Stencil start, 4-point weights and in-cell offset for queries ``q`` on one axis."""
    n = nodes.size
    cell = np.clip(np.searchsorted(nodes, q, side="right") - 1, 0, n - 2)
    if n == 2:
        w = np.zeros((q.size, 4))
        t = (q - nodes[0]) / (nodes[1] - nodes[0])
        w[:, 0], w[:, 1] = 1 - t, t
        return np.zeros(q.size, dtype=int), w, np.zeros(q.size, dtype=int)
    start = np.clip(cell - 1, 0, n - 4) if n >= 4 else np.zeros_like(cell)
    w = np.zeros((q.size, 4))
    count = np.zeros(q.size)
    for lead in (cell - 1, cell):
        ok = (lead >= 0) & (lead + 2 <= n - 1)
        lead = np.clip(lead, 0, n - 3)
        pts = nodes[lead[:, None] + np.arange(3)]
        for a in range(3):
            num = np.ones(q.size)
            for b in range(3):
                if a != b:
                    num *= (q - pts[:, b]) / (pts[:, a] - pts[:, b])
            col = lead + a - start
            np.add.at(w, (np.flatnonzero(ok), col[ok]), num[ok])
        count += ok
    w /= count[:, None]
    return start, w, cell - start


@dataclass(frozen=True, eq=False)
class ValueGrid:
    """Values on a tensor grid over ``box``."""

    axes: tuple
    values: np.ndarray
    mode: str = "monotone-quadratic"

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        if any(a.size < 2 for a in axes):
            raise ValueError("each axis needs at least two nodes")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != tuple(a.size for a in axes):
            raise ValueError("values shape does not match axes")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, box: Box, step: float, mode: str = "monotone-quadratic", fill: float = 0.0):
        """Uniform grid with spacing as close to ``step`` as the box allows."""
        axes = []
        for lo, hi in zip(box.lower, box.upper):
            n = max(2, int(round((hi - lo) / step)) + 1)
            axes.append(np.linspace(lo, hi, n))
        return cls(tuple(axes), np.full([a.size for a in axes], float(fill)), mode)

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def box(self) -> Box:
        return Box([a[0] for a in self.axes], [a[-1] for a in self.axes])

    def nodes(self) -> np.ndarray:
        """Node coordinates in C order, shape (n_nodes, d)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    def with_values(self, values) -> "ValueGrid":
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.shape))

    def set_from(self, f: Callable[[np.ndarray], np.ndarray]) -> "ValueGrid":
        return self.with_values(np.asarray(f(self.nodes()), dtype=float))

    def map_nodes(self, op: Callable[[np.ndarray], np.ndarray]) -> "ValueGrid":
        return self.with_values(op(self.values.ravel()))

    def interpolate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        x = x.reshape(-1, self.dim) if x.ndim != 2 else x
        box = self.box
        if not np.all(box.contains(x, tol=1e-9)):
            raise ValueError("query outside the grid box")
        x = box.clamp(x)
        if self.mode == "linear":
            rgi = RegularGridInterpolator(self.axes, self.values, method="linear")
            return rgi(x)
        return self._limited_quadratic(x)

    __call__ = interpolate

    def _limited_quadratic(self, x):
        n = x.shape[0]
        d = self.dim
        stencils = [_axis_weights(a, x[:, k]) for k, a in enumerate(self.axes)]
        # gather the 4**d stencil values per query
        offsets = np.array(list(itertools.product(range(4), repeat=d)))
        idx = []
        for k in range(d):
            start = stencils[k][0]
            idx.append(np.minimum(start[:, None] + offsets[None, :, k], self.axes[k].size - 1))
        vals = self.values[tuple(idx)].reshape((n,) + (4,) * d)
        for k in reversed(range(d)):
            _, w, c = stencils[k]
            wk = w.reshape((n,) + (1,) * k + (4,))
            q = np.sum(vals * wk, axis=-1)
            lo_line = np.take_along_axis(vals, c.reshape((n,) + (1,) * (k + 1)), axis=-1)[..., 0]
            hi_line = np.take_along_axis(vals, (c + 1).clip(max=3).reshape((n,) + (1,) * (k + 1)),
                                         axis=-1)[..., 0]
            vals = np.clip(q, np.minimum(lo_line, hi_line), np.maximum(lo_line, hi_line))
        return vals

    def to_csv(self, path) -> None:
        """One row per node: coordinates then value."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(self.dim)] + ["value"])
            for node, v in zip(self.nodes(), self.values.ravel()):
                w.writerow([repr(float(c)) for c in node] + [repr(float(v))])


def grid_from_function(box: Box, step: float, f, mode: str = "monotone-quadratic") -> ValueGrid:
    return ValueGrid.uniform(box, step, mode).set_from(f)


def stack_values(grids: Sequence[ValueGrid]) -> np.ndarray:
    return np.stack([g.values for g in grids])
