import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from branchbsde.solver import BranchingBSDESolver
from branchbsde.testcases import toy_problem


def test_params_round_trip():
    s = BranchingBSDESolver(n_steps=10, tol=0.01)
    p = s.get_params()
    assert p["n_steps"] == 10 and p["tol"] == 0.01
    assert clone(s).get_params() == p
    s.set_params(cap=999)
    assert s.cap == 999


def test_fit_predict_toy():
    b = toy_problem()
    s = BranchingBSDESolver(n_steps=10, tol=0.01, cap=512, batch=128, euler_dt=0.01)
    with pytest.raises(NotFittedError):
        s.predict([[1.0]])
    s.fit(b)
    x = np.array([[np.pi / 2], [1.0]])
    v = s.predict(x)
    assert v.shape == (2,)
    assert np.all(np.abs(v - b.reference(0.0, x)) < 0.1)
    assert np.allclose(s.predict(x, t=1.0), np.cos(x[:, 0]), atol=1e-3)
    with pytest.raises(ValueError):
        s.predict(x, t=0.55)
    with pytest.raises(ValueError):
        s.predict([[1.0, 2.0]])


def test_fit_rejects_other_inputs():
    with pytest.raises(TypeError):
        BranchingBSDESolver().fit(np.zeros((3, 1)))
