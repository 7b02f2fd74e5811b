"""Local polynomial drivers.

A driver of the form

    f(t, x, y, y') = sum_j sum_l a_{j,l}(t, x) * y**l * phi_j(y')

where the kernels ``phi_j`` form a partition of unity in the prior value
``y'`` with at most two of them active at any point. Coefficients are
stored as monomials in ``y`` and combined with optional x-dependent terms:

    a_{j,l}(t, x) = scale(t, x) * c[slice(t), j, l] + shift(t, x)[l]

which covers the separable drivers used by the benchmarks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from math import comb
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import BSpline

FORMAT_TAG = "branchbsde/local-polynomial-driver/1"

XTerm = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _as_states(x, n=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if n is None or x.shape[0] == n else x.reshape(1, -1)
    if n is not None and x.shape[0] == 1 and n > 1:
        x = np.broadcast_to(x, (n, x.shape[1]))
    return x


@dataclass(frozen=True, eq=False)
class LocalPolynomialDriver:
    """Piecewise polynomial driver blended by ramp kernels.

    Parameters
    ----------
    knots : array of shape (n_pieces + 1,)
        Cell boundaries of the fitted y-domain.
    coeffs : array of shape (n_slices, n_xnodes, n_pieces, degree + 1)
        Monomial coefficients in ``y`` per time slice, x node and piece.
    band : float
        Width of the transition band centred on each interior knot.
    slice_times : array of shape (n_slices,), optional
        Times of the slices; the nearest slice is used at evaluation.
    x_nodes : array of shape (n_xnodes,), optional
        First-coordinate nodes over which coefficients are linearly
        interpolated.
    scale, shift : callables, optional
        ``scale(t, x) -> (n,)`` multiplies the tabulated coefficients,
        ``shift(t, x) -> (n, degree + 1)`` is added to every piece.
    coeff_bound : float
        Uniform bound on ``|a_{j,l}|``.
    fit_residual, lipschitz_y : float
        Reported by the fitter; ``nan`` when unknown.
    """

    knots: np.ndarray
    coeffs: np.ndarray
    band: float
    coeff_bound: float
    slice_times: Optional[np.ndarray] = None
    x_nodes: Optional[np.ndarray] = None
    scale: Optional[XTerm] = None
    shift: Optional[XTerm] = None
    fit_residual: float = float("nan")
    lipschitz_y: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        coeffs = np.asarray(self.coeffs, dtype=float)
        if coeffs.ndim != 4:
            raise ValueError("coeffs must have shape (n_slices, n_xnodes, n_pieces, degree + 1)")
        if knots.shape != (coeffs.shape[2] + 1,):
            raise ValueError("knots must have n_pieces + 1 entries")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if coeffs.shape[2] > 1 and not 0 < self.band <= np.min(np.diff(knots)):
            raise ValueError("band must be positive and not exceed the smallest cell")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coeffs", coeffs)

    # -- structure -------------------------------------------------------
    @property
    def n_pieces(self) -> int:
        return self.coeffs.shape[2]

    @property
    def degree(self) -> int:
        """Polynomial degree bound, never below 2."""
        return max(2, self.coeffs.shape[3] - 1)

    @property
    def kernel_lipschitz(self) -> float:
        return 0.0 if self.n_pieces == 1 else 1.0 / self.band

    @property
    def domain(self) -> tuple:
        return float(self.knots[0]), float(self.knots[-1])

    @property
    def is_zero(self) -> bool:
        return self.scale is None and self.shift is None and not np.any(self.coeffs)

    # -- kernels ---------------------------------------------------------
    def _active(self, y_prior):
        """Return ``(lo, hi, w_lo, w_hi)``: the two candidate pieces and weights."""
        y = np.asarray(y_prior, dtype=float)
        if self.n_pieces == 1:
            zero = np.zeros(y.shape, dtype=int)
            return zero, zero, np.ones(y.shape), np.zeros(y.shape)
        inner = self.knots[1:-1]
        # nearest interior knot decides the pair (i - 1, i)
        mids = 0.5 * (inner[1:] + inner[:-1])
        i = np.searchsorted(mids, y) + 1
        centre = self.knots[i]
        w_hi = np.clip((y - centre) / self.band + 0.5, 0.0, 1.0)
        return i - 1, i, 1.0 - w_hi, w_hi

    def kernels(self, y_prior) -> np.ndarray:
        """Kernel values ``phi_j(y')`` as an array of shape ``(n, n_pieces)``."""
        y = np.atleast_1d(np.asarray(y_prior, dtype=float))
        lo, hi, w_lo, w_hi = self._active(y)
        out = np.zeros((y.size, self.n_pieces))
        rows = np.arange(y.size)
        out[rows, lo] += w_lo
        out[rows, hi] += w_hi
        return out

    # -- coefficients ----------------------------------------------------
    def _slice_index(self, t, n):
        if self.slice_times is None or len(self.slice_times) == 1:
            return np.zeros(n, dtype=int)
        st = self.slice_times
        mids = 0.5 * (st[1:] + st[:-1])
        return np.searchsorted(mids, np.broadcast_to(np.asarray(t, dtype=float), (n,)))

    def _table(self, t, x, n):
        """Coefficients ``c`` gathered to shape (n, n_pieces, n_coef)."""
        s = self._slice_index(t, n)
        if self.x_nodes is None or len(self.x_nodes) == 1:
            return self.coeffs[s, 0]
        xn = self.x_nodes
        x0 = np.clip(x[:, 0], xn[0], xn[-1])
        k = np.clip(np.searchsorted(xn, x0) - 1, 0, len(xn) - 2)
        w = ((x0 - xn[k]) / (xn[k + 1] - xn[k]))[:, None, None]
        return (1.0 - w) * self.coeffs[s, k] + w * self.coeffs[s, k + 1]

    def coefficients(self, t, x) -> np.ndarray:
        """Full coefficient table ``a_{j,l}(t, x)`` with shape (n, n_pieces, n_coef)."""
        x = _as_states(x)
        n = x.shape[0]
        a = self._table(t, x, n)
        if self.scale is not None:
            a = a * np.asarray(self.scale(np.broadcast_to(t, (n,)), x), dtype=float)[:, None, None]
        if self.shift is not None:
            a = a + np.asarray(self.shift(np.broadcast_to(t, (n,)), x), dtype=float)[:, None, :]
        return a

    def evaluate(self, t, x, y, y_prior) -> np.ndarray:
        """Vectorised ``f(t, x, y, y')``; only the two active pieces are touched."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        y_prior = np.broadcast_to(np.asarray(y_prior, dtype=float), y.shape)
        x = _as_states(x, y.size)
        a = self.coefficients(t, x)
        lo, hi, w_lo, w_hi = self._active(y_prior)
        rows = np.arange(y.size)
        powers = y[:, None] ** np.arange(a.shape[2])
        p_lo = np.sum(a[rows, lo] * powers, axis=1)
        p_hi = np.sum(a[rows, hi] * powers, axis=1)
        return w_lo * p_lo + w_hi * p_hi

    def branch_factor(self, t, x, power, y_prior) -> np.ndarray:
        """``sum_j a_{j,power}(t, x) phi_j(y')`` for integer array ``power``."""
        power = np.atleast_1d(np.asarray(power, dtype=int))
        n = power.size
        if n == 0:
            return np.zeros(0)
        x = _as_states(x, n)
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        lo, hi, w_lo, w_hi = self._active(np.broadcast_to(y_prior, (n,)))
        c = self._table(t, x, n)
        rows = np.arange(n)
        n_coef = c.shape[2]
        pw = np.minimum(power, n_coef - 1)
        inside = power < n_coef
        val = (w_lo * c[rows, lo, pw] + w_hi * c[rows, hi, pw]) * inside
        if self.scale is not None:
            val = val * np.asarray(self.scale(t, x), dtype=float)
        if self.shift is not None:
            sh = np.asarray(self.shift(t, x), dtype=float)
            # kernels sum to one, so the shift passes through unchanged
            val = val + np.where(inside, sh[rows, pw], 0.0)
        return val

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "knots": self.knots.tolist(),
            "band": self.band,
            "coeff_bound": self.coeff_bound,
            "fit_residual": self.fit_residual,
            "lipschitz_y": self.lipschitz_y,
            "slice_times": None if self.slice_times is None else np.asarray(self.slice_times).tolist(),
            "x_nodes": None if self.x_nodes is None else np.asarray(self.x_nodes).tolist(),
            "coeffs_shape": list(self.coeffs.shape),
            "coeffs": self.coeffs.ravel().tolist(),
            "has_x_terms": self.scale is not None or self.shift is not None,
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str, scale: Optional[XTerm] = None, shift: Optional[XTerm] = None):
        """Rebuild a driver; x-dependent callables are not serialised and must be reattached."""
        d = json.loads(text)
        if d.get("format") != FORMAT_TAG:
            raise ValueError(f"unrecognised driver format {d.get('format')!r}")
        if d["has_x_terms"] and scale is None and shift is None:
            raise ValueError("driver was saved with x-dependent terms; pass scale/shift")
        return cls(
            knots=np.array(d["knots"]),
            coeffs=np.array(d["coeffs"]).reshape(d["coeffs_shape"]),
            band=d["band"],
            coeff_bound=d["coeff_bound"],
            slice_times=None if d["slice_times"] is None else np.array(d["slice_times"]),
            x_nodes=None if d["x_nodes"] is None else np.array(d["x_nodes"]),
            scale=scale,
            shift=shift,
            fit_residual=d["fit_residual"],
            lipschitz_y=d["lipschitz_y"],
            meta=d.get("meta", {}),
        )

    # -- constructors ----------------------------------------------------
    @classmethod
    def zero(cls, domain=(-1.0, 1.0), degree: int = 2):
        return cls(
            knots=np.asarray(domain, dtype=float),
            coeffs=np.zeros((1, 1, 1, degree + 1)),
            band=float(domain[1] - domain[0]),
            coeff_bound=0.0,
            fit_residual=0.0,
            lipschitz_y=0.0,
        )

    @classmethod
    def polynomial(cls, coefficients: Sequence[float], domain=(-1.0, 1.0)):
        """Single-piece driver ``sum_l c_l y**l`` with ``phi_1 == 1``."""
        c = np.asarray(coefficients, dtype=float)
        if c.size < 3:
            c = np.pad(c, (0, 3 - c.size))
        return cls(
            knots=np.asarray(domain, dtype=float),
            coeffs=c.reshape(1, 1, 1, -1),
            band=float(domain[1] - domain[0]),
            coeff_bound=float(np.max(np.abs(c))),
        )

    def with_x_terms(self, scale=None, shift=None, box=None, n_per_axis=None,
                     margin: float = 0.01):
        """Attach x-dependent terms and recompute the coefficient bound on ``box``."""
        drv = replace(self, scale=scale, shift=shift)
        if box is None:
            return drv
        bound = coefficient_bound(drv, box, n_per_axis=n_per_axis) * (1.0 + margin)
        return replace(drv, coeff_bound=bound)


def coefficient_bound(driver: LocalPolynomialDriver, box, n_per_axis=None) -> float:
    """Sampled ``max |a_{j,l}(t, x)|`` over a tensor sample of ``box`` and all slices."""
    if hasattr(box, "lower"):
        box = (box.lower, box.upper)
    lower, upper = (np.atleast_1d(np.asarray(b, dtype=float)) for b in box)
    d = lower.size
    if n_per_axis is None:
        n_per_axis = {1: 1001, 2: 61, 3: 21}.get(d, 9)
    axes = [np.linspace(lo, hi, n_per_axis) for lo, hi in zip(lower, upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    times = [0.0] if driver.slice_times is None else driver.slice_times
    best = 0.0
    for t in times:
        a = driver.coefficients(t, pts)
        best = max(best, float(np.max(np.abs(a))))
    return best


def _spline_pieces(ys, values, knots, degree):
    """Least-squares spline of ``values`` (shape (n_rhs, n)) with the given cell knots.

    Returns monomial coefficients of shape (n_rhs, n_pieces, degree + 1).
    """
    k = degree
    t = np.concatenate([[knots[0]] * k, knots, [knots[-1]] * k])
    B = BSpline.design_matrix(ys, t, k).toarray()
    c, *_ = np.linalg.lstsq(B, values.T, rcond=None)
    spl = BSpline(t, c, k, extrapolate=True)
    mids = 0.5 * (knots[1:] + knots[:-1])
    # Taylor coefficients around each cell midpoint, shape (k+1, n_pieces, n_rhs)
    taylor = np.stack([spl.derivative(m)(mids) / np.prod(np.arange(1, m + 1)) if m else spl(mids)
                       for m in range(k + 1)])
    out = np.zeros((values.shape[0], len(mids), k + 1))
    for m in range(k + 1):
        for ell in range(m + 1):
            out[:, :, ell] += (taylor[m] * (comb(m, ell) * (-mids[:, None]) ** (m - ell))).T
    return out


def _cell_knots(domain, n_pieces):
    lo, hi = (float(v) for v in domain)
    if not hi > lo:
        raise ValueError(f"empty domain {domain!r}")
    if n_pieces < 1:
        raise ValueError("n_pieces must be >= 1")
    return np.linspace(lo, hi, n_pieces + 1)


def _fit_sample(knots, per_cell=16):
    return np.linspace(knots[0], knots[-1], per_cell * (len(knots) - 1) + 1)


def fit_local_polynomial(f, domain, n_pieces: int, degree: int = 2, x_samples=None,
                         band_fraction: float = 0.05, n_check: int = 10_000):
    """Fit a local polynomial driver to ``f(x, y)`` on ``domain``.

    ``domain`` is ``M`` (meaning ``[-M, M]``) or a ``(lo, hi)`` pair. The
    interval is split into ``n_pieces`` equal cells and a least-squares
    spline of the given degree is fitted per x sample; coefficients are
    linearly interpolated between x samples (first coordinate).
    """
    if degree not in (1, 2, 3):
        raise ValueError(f"degree must be 1, 2 or 3, got {degree}")
    if np.ndim(domain) == 0:
        domain = (-float(domain), float(domain))
    knots = _cell_knots(domain, n_pieces)
    if x_samples is None:
        x_samples = [np.zeros(1)]
    xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in x_samples]
    if len(xs) > 1:
        order = np.argsort([x[0] for x in xs])
        xs = [xs[i] for i in order]
    ys = _fit_sample(knots)
    values = np.stack([np.asarray(f(x, ys), dtype=float) * np.ones_like(ys) for x in xs])
    if not np.all(np.isfinite(values)):
        raise ValueError("f is not finite on the fitting domain")
    coeffs = _spline_pieces(ys, values, knots, degree)[None]
    x_nodes = np.array([x[0] for x in xs]) if len(xs) > 1 else None
    cell = knots[1] - knots[0]
    drv = LocalPolynomialDriver(
        knots=knots, coeffs=coeffs, band=band_fraction * cell,
        coeff_bound=float(np.max(np.abs(coeffs))), x_nodes=x_nodes,
    )
    ycheck = np.linspace(knots[0], knots[-1], n_check)
    resid, lip = 0.0, 0.0
    for x in xs:
        approx = drv.evaluate(0.0, x[None, :], ycheck, ycheck)
        resid = max(resid, float(np.max(np.abs(approx - f(x, ycheck)))))
        lip = max(lip, float(np.max(np.abs(np.diff(approx) / np.diff(ycheck)))))
    return replace(drv, fit_residual=resid, lipschitz_y=lip)


def fit_time_sliced(f, domain, n_pieces: int, degree: int, times,
                    band_fraction: float = 0.05, n_check: int = 2_001):
    """Fit ``f(t, y)`` separately on each time slice; all slices share knots and kernels."""
    if degree not in (1, 2, 3):
        raise ValueError(f"degree must be 1, 2 or 3, got {degree}")
    if np.ndim(domain) == 0:
        domain = (-float(domain), float(domain))
    knots = _cell_knots(domain, n_pieces)
    times = np.asarray(times, dtype=float)
    ys = _fit_sample(knots)
    values = np.stack([np.asarray(f(t, ys), dtype=float) * np.ones_like(ys) for t in times])
    if not np.all(np.isfinite(values)):
        raise ValueError("f is not finite on the fitting domain")
    coeffs = _spline_pieces(ys, values, knots, degree)[:, None]
    drv = LocalPolynomialDriver(
        knots=knots, coeffs=coeffs, band=band_fraction * (knots[1] - knots[0]),
        coeff_bound=float(np.max(np.abs(coeffs))), slice_times=times,
    )
    ycheck = np.linspace(knots[0], knots[-1], n_check)
    resid, lip = 0.0, 0.0
    x0 = np.zeros((1, 1))
    for t in times:
        approx = drv.evaluate(t, x0, ycheck, ycheck)
        resid = max(resid, float(np.max(np.abs(approx - f(t, ycheck)))))
        lip = max(lip, float(np.max(np.abs(np.diff(approx) / np.diff(ycheck)))))
    return replace(drv, fit_residual=resid, lipschitz_y=lip)


def eval_driver(d: LocalPolynomialDriver, x, y, y_prior, t: float = 0.0) -> float:
    """Scalar evaluation of ``f(t, x, y, y')``."""
    return float(d.evaluate(t, np.atleast_1d(np.asarray(x, dtype=float))[None, :], [y], [y_prior])[0])


def lipschitz_constants(d: LocalPolynomialDriver, growth: float):
    """Lipschitz constants of the driver in ``y`` and ``y'`` on ``[-growth, growth]``."""
    if growth < 1:
        raise ValueError("growth bound must be >= 1")
    C, L = d.coeff_bound, d.degree
    l1 = 2.0 * C * sum(ell * growth ** (ell - 1) for ell in range(1, L + 1))
    l2 = d.kernel_lipschitz * sum(2.0 * C * growth ** ell for ell in range(L + 1))
    return l1, l2


def driver_error(f, d: LocalPolynomialDriver, samples, t: float = 0.0) -> float:
    """``max |f(x, y) - f_loc(x, y, y)|`` over ``(x, y)`` samples."""
    samples = list(samples)
    if not samples:
        raise ValueError("samples must be nonempty")
    err = 0.0
    for x, y in samples:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        approx = d.evaluate(t, x[None, :], [y], [y])[0]
        err = max(err, abs(float(f(x, y)) - approx))
    return err
