import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from branchbsde.dynamics import Box
from branchbsde.estimator import truncate
from branchbsde.grid import ValueGrid, grid_from_function

LO, HI = np.pi / 8, 7 * np.pi / 8
MODES = ["linear", "monotone-quadratic"]


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_node_exactness(mode, dim):
    box = Box([0.0] * dim, [1.0] * dim)
    g = ValueGrid.uniform(box, 0.25, mode)
    vals = np.random.default_rng(dim).normal(size=g.shape)
    g = g.with_values(vals)
    assert np.array_equal(g.interpolate(g.nodes()), vals.ravel())


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("dim", [1, 2, 3])
def test_affine_reproduction(mode, dim):
    rng = np.random.default_rng(10 + dim)
    box = Box([-1.0] * dim, [2.0] * dim)
    w, b = rng.normal(size=dim), rng.normal()
    g = grid_from_function(box, 0.5, lambda x: x @ w + b, mode)
    q = rng.uniform(-1, 2, (1000, dim))
    assert np.max(np.abs(g.interpolate(q) - (q @ w + b))) <= 1e-10


def test_quadratic_mode_beats_linear_on_cosine():
    box = Box([LO], [HI])
    q = np.linspace(LO, HI, 5001)[:, None]
    err = {}
    for mode in MODES:
        g = grid_from_function(box, 0.2, lambda x: np.cos(x[:, 0]), mode)
        err[mode] = np.max(np.abs(g.interpolate(q) - np.cos(q[:, 0])))
    assert err["monotone-quadratic"] <= err["linear"]


def _envelope_ok(g, q):
    vals = g.interpolate(q)
    for k, row in enumerate(q):
        idx = []
        for a, x in zip(g.axes, row):
            c = min(max(np.searchsorted(a, x, side="right") - 1, 0), a.size - 2)
            idx.append(slice(c, c + 2))
        corner = g.values[tuple(idx)]
        if not corner.min() - 1e-12 <= vals[k] <= corner.max() + 1e-12:
            return False
    return True


@given(arrays(float, (9,), elements=st.floats(-5, 5)), st.integers(0, 2**31))
def test_range_preserving_1d(values, seed):
    g = ValueGrid((np.linspace(0, 1, 9),), values)
    q = np.random.default_rng(seed).uniform(0, 1, (200, 1))
    assert _envelope_ok(g, q)


@given(arrays(float, (5, 6), elements=st.floats(-5, 5)), st.integers(0, 2**31))
def test_range_preserving_2d(values, seed):
    g = ValueGrid((np.linspace(0, 1, 5), np.linspace(-1, 1, 6)), values)
    q = np.random.default_rng(seed).uniform([0, -1], [1, 1], (100, 2))
    assert _envelope_ok(g, q)


def test_cosine_stays_in_local_range():
    g = grid_from_function(Box([LO], [HI]), 0.2, lambda x: np.cos(x[:, 0]))
    assert _envelope_ok(g, np.linspace(LO, HI, 2001)[:, None])


def test_query_outside_rejected_and_boundary_tolerance():
    g = ValueGrid.uniform(Box([0.0], [1.0]), 0.5)
    g.interpolate([[1.0 + 1e-10]])
    with pytest.raises(ValueError):
        g.interpolate([[1.1]])


def test_set_from_and_map_nodes():
    box = Box([LO], [HI])
    g = ValueGrid.uniform(box, 0.4).set_from(lambda x: np.zeros(len(x)))
    assert np.all(g.interpolate(np.random.default_rng(0).uniform(LO, HI, (50, 1))) == 0)
    exact = lambda x: np.exp(-0.5) * np.cos(x[:, 0])
    g = g.set_from(exact)
    assert np.array_equal(g.interpolate(g.nodes()), exact(g.nodes()))
    wide = g.with_values(np.linspace(-3, 3, g.values.size))
    clipped = wide.map_nodes(lambda v: truncate(v, 1.0))
    assert clipped.values.min() >= -1 and clipped.values.max() <= 1


def test_toy_grid_size():
    g = ValueGrid.uniform(Box([LO], [HI]), 0.4)
    assert g.shape == (7,)


def test_csv_export(tmp_path):
    g = grid_from_function(Box([0.0, 0.0], [1.0, 1.0]), 0.5, lambda x: x[:, 0] + 2 * x[:, 1])
    path = tmp_path / "g.csv"
    g.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x0", "x1", "value"]
    assert len(rows) == 10
    assert float(rows[-1][2]) == 3.0
