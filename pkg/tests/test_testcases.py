import numpy as np
import pytest

from branchbsde.bounds import bounds_report
from branchbsde.dynamics import Box, Dynamics
from branchbsde.problem import Problem
from branchbsde.testcases import (REGISTRY, get_benchmark, hard_problem_1, hard_problem_2,
                                  pde_residual, toy_problem)


@pytest.fixture(scope="module")
def toy():
    return toy_problem()


def test_toy_reference_values(toy):
    x = np.linspace(np.pi / 8, 7 * np.pi / 8, 11)[:, None]
    assert np.allclose(toy.reference(1.0, x), np.cos(x[:, 0]), atol=0)
    assert toy.reference(0.0, np.array([[np.pi / 2]]))[0] == pytest.approx(0.0, abs=1e-16)
    assert toy.reference(0.0, np.array([[np.pi / 4]]))[0] == pytest.approx(0.428882, abs=1e-6)


def test_toy_residual(toy):
    assert toy.certified
    assert toy.residual <= 1e-6


def test_perturbed_candidate_has_residual(toy):
    bumped = lambda t, x: toy.reference(t, x) + 0.01
    assert pde_residual(toy.problem, bumped) > 1e-3


def test_trivial_residual_is_zero():
    dyn = Dynamics(lambda x: np.zeros_like(x), lambda x: np.zeros(len(x)), Box([0.0], [1.0]))
    prob = Problem(dyn, lambda x: np.ones(len(x)), 1.0, 1.0, driver_fn=lambda t, x, y: 0.0 * y)
    assert pde_residual(prob, lambda t, x: np.full(len(x), 0.7)) == 0.0


@pytest.mark.parametrize("factory", [toy_problem, hard_problem_1,
                                     lambda: hard_problem_2(2, variant="consistent")])
def test_reference_matches_terminal(factory):
    b = factory()
    box = b.problem.dynamics.box
    x = np.random.default_rng(0).uniform(box.lower, box.upper, (1000, box.dim))
    assert np.max(np.abs(b.reference(b.problem.horizon, x) - b.problem.terminal(x))) <= 1e-10
    assert np.max(np.abs(b.reference(0.0, x))) <= b.problem.bound


def test_hard_problem_certification_outcomes():
    assert hard_problem_1().certified
    verbatim = hard_problem_2(1)
    assert not verbatim.certified and verbatim.reference is None and verbatim.residual > 0.1
    assert hard_problem_2(1, variant="consistent").certified


def test_hard_problem_2_dimension_limits():
    with pytest.raises(ValueError):
        hard_problem_2(4)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_default_configs_pass_gate_or_declare_override(name):
    b = get_benchmark(name)
    d = b.make_driver()
    rep = bounds_report(d, b.problem.bound)
    h = b.problem.horizon / b.config.n_steps
    assert h < rep.h_o or b.config.allow_horizon_override


def test_unknown_benchmark():
    with pytest.raises(KeyError):
        get_benchmark("nope")
