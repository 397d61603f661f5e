import math
import warnings

import numpy as np
import pytest

from conftest import SIR_B, sir_spec
from statetrans import ModelSpec, NonFiniteStateError
from statetrans.ode import ode_rhs, ode_solve


def ode_sir(beta=0.3, gamma=0.1, N=1000.0, state=(990.0, 10.0, 0.0), num_steps=50, time_delta=1.0):
    return sir_spec("ode", beta=beta, gamma=gamma, state=state, num_steps=num_steps, time_delta=time_delta, N=N)


def test_rhs_example():
    d = ode_rhs(ode_sir(), 0.0, np.array([[990.0, 10.0, 0.0]]))
    assert np.allclose(d, [[-2.97, 1.97, 1.0]], atol=1e-12)
    assert np.all(ode_rhs(ode_sir(), 0.0, np.array([[1000.0, 0.0, 0.0]])) == 0)


def test_beta_zero_decay():
    spec = ode_sir(beta=0.0, gamma=0.5, state=(0.0, 10.0, 0.0), num_steps=2)
    sol = ode_solve(spec)
    assert abs(sol.states[2, 0, 1] - 10 * math.exp(-1)) < 1e-6
    assert sol.times.tolist() == [0.0, 1.0, 2.0]


def test_zero_rates_constant():
    spec = ode_sir(beta=0.0, gamma=0.0, num_steps=5)
    sol = ode_solve(spec)
    assert np.all(sol.states == spec.initial_state)


def test_conservation():
    spec = ode_sir(num_steps=200)
    sol = ode_solve(spec)
    drift = np.abs(sol.states.sum(axis=2) - 1000.0) / 1000.0
    assert drift.max() <= 1e-8


def test_rk4_order():
    T = 20
    ref = ode_solve(ode_sir(num_steps=T), substeps=512).states[-1]
    errs = [np.abs(ode_solve(ode_sir(num_steps=T), substeps=h).states[-1] - ref).max() for h in (1, 2, 4, 8)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.5


def test_matches_euler_oracle():
    spec = ode_sir(num_steps=2)
    sol = ode_solve(spec, substeps=20)
    # forward Euler written out by hand, step 1e-4
    S, I, R = 990.0, 10.0, 0.0
    h = 1e-4
    for _ in range(20_000):
        inf, rec = 0.3 * I / 1000.0 * S, 0.1 * I
        S, I, R = S - h * inf, I + h * (inf - rec), R + h * rec
    assert np.abs(sol.states[-1, 0] - [S, I, R]).max() <= 1e-4


def test_dopri5_agrees_with_rk4():
    spec = ode_sir(num_steps=60)
    a = ode_solve(spec).states
    b = ode_solve(spec, method="dopri5", rtol=1e-10, atol=1e-10).states
    assert np.abs(a - b).max() < 1e-4
    with pytest.raises(ValueError):
        ode_solve(spec, method="euler")


def test_negative_states_warn_not_clamp():
    spec = ModelSpec("ode", np.array([[-1], [1]]), (lambda t, x: 30.0,), np.array([[1.0, 0.0]]), 1)
    with pytest.warns(RuntimeWarning):
        sol = ode_solve(spec, substeps=1)
    assert sol.states.min() < 0


def test_non_finite_state_raises():
    spec = ModelSpec("ode", SIR_B, (lambda t, x: 1e300, lambda t, x: 1e300), np.array([[1e10, 1e10, 0.0]]), 3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(NonFiniteStateError):
            ode_solve(spec)
