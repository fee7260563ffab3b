import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funnelmpc.errors import NonFiniteState
from funnelmpc.integrate import (
    Trajectory,
    euler_step,
    hermite_interpolate,
    integrate_adaptive,
    integrate_fixed,
    rk4_step,
)
from funnelmpc.plant import MassOnCar


def decay(t, x):
    return -x


def growth(t, x):
    return x


def oscillator(t, x):
    return np.array([x[1], -x[0]])


def test_rk4_zero_field_leaves_state_unchanged():
    x = np.array([1.5, -2.0])
    assert np.array_equal(rk4_step(lambda t, x: np.zeros_like(x), 0.0, x, 0.1), x)


def test_rk4_single_step_is_fourth_order_taylor_polynomial():
    h = 0.1
    expected = 1 + h + h**2 / 2 + h**3 / 6 + h**4 / 24  # 1.1051708333...
    got = rk4_step(growth, 0.0, np.array([1.0]), h)[0]
    assert got == pytest.approx(expected, abs=1e-15)


def test_rk4_hundred_steps_reach_exp_minus_one():
    traj = integrate_fixed(decay, 0.0, np.array([1.0]), 1.0, 0.01)
    assert traj.final[0] == pytest.approx(math.exp(-1), abs=1e-8)
    assert len(traj.times) == 101


def test_euler_decay_is_exact_product():
    traj = integrate_fixed(decay, 0.0, np.array([1.0]), 1.0, 0.1, method="euler")
    assert traj.final[0] == pytest.approx(0.9**10, abs=1e-14)


def test_fixed_grid_constant_field():
    traj = integrate_fixed(lambda t, x: np.zeros_like(x), 0.0, np.array([1.0, 2.0]), 1.0, 0.25)
    assert len(traj.times) == 5
    assert traj.times[0] == 0.0 and abs(traj.times[-1] - 1.0) < 1e-12
    assert np.all(traj.states == [1.0, 2.0])


def test_uncontrolled_plant_at_rest_stays_at_rest():
    plant = MassOnCar()
    traj = integrate_fixed(lambda t, z: plant.dynamics(z, 0.0), 0.0, np.zeros(4), 1.0, 0.01)
    assert np.all(traj.states == 0.0)


@pytest.mark.parametrize("method,factor", [("rk4", 16.0), ("euler", 2.0)])
def test_convergence_order(method, factor):
    def err(h):
        return abs(integrate_fixed(decay, 0.0, np.array([1.0]), 1.0, h, method).final[0]
                   - math.exp(-1))

    ratio = err(0.02) / err(0.01)
    assert ratio == pytest.approx(factor, rel=0.2)


def test_adaptive_decay():
    traj = integrate_adaptive(decay, 0.0, np.array([1.0]), 1.0, rtol=1e-9, atol=1e-9)
    assert traj.final[0] == pytest.approx(0.36787944, abs=1e-7)
    assert traj.times[-1] == 1.0


def test_adaptive_oscillator_returns_to_start():
    traj = integrate_adaptive(oscillator, 0.0, np.array([1.0, 0.0]), 2 * math.pi,
                              rtol=1e-10, atol=1e-12)
    assert np.allclose(traj.final, [1.0, 0.0], atol=1e-6)


def test_adaptive_zero_field_exact():
    x0 = np.array([0.3, -0.7])
    traj = integrate_adaptive(lambda t, x: np.zeros_like(x), 0.0, x0, 2.0,
                              t_eval=np.linspace(0, 2, 11))
    assert np.all(traj.states == x0)


def test_adaptive_includes_requested_times_with_dense_accuracy():
    grid = np.linspace(0.0, 2 * math.pi, 57)
    traj = integrate_adaptive(oscillator, 0.0, np.array([1.0, 0.0]), 2 * math.pi,
                              rtol=1e-10, atol=1e-12, t_eval=grid)
    rows = np.isin(traj.times, grid)
    assert rows.sum() == len(grid)
    assert np.allclose(traj.states[rows, 0], np.cos(traj.times[rows]), atol=1e-6)


@pytest.mark.slow
def test_adaptive_and_fixed_agree_on_uncontrolled_plant():
    plant = MassOnCar()
    rng = np.random.default_rng(3)
    z0 = rng.uniform(-1, 1, 4)

    def f(t, z):
        return plant.dynamics(z, 0.0)

    grid = np.linspace(0.0, 10.0, 101)
    ad = integrate_adaptive(f, 0.0, z0, 10.0, rtol=1e-9, atol=1e-9, t_eval=grid)
    fx = integrate_fixed(f, 0.0, z0, 10.0, 1e-4)
    a = ad.states[np.isin(ad.times, grid)]
    b = fx.states[::1000]
    assert np.max(np.abs(a - b)) < 1e-6


def test_adaptive_rejects_non_finite_trial_steps():
    # the field is undefined beyond x = 2; the solution reaches it at t = ln 2
    def f(t, x):
        return np.where(x < 2.0, x, np.nan)

    traj = integrate_adaptive(f, 0.0, np.array([1.0]), 0.6)
    assert traj.final[0] == pytest.approx(math.exp(0.6), rel=1e-6)
    with pytest.raises(NonFiniteState):
        integrate_adaptive(f, 0.0, np.array([1.0]), 1.0)


def test_non_finite_field_raises_in_fixed_step():
    with pytest.raises(NonFiniteState), np.errstate(all="ignore"):
        euler_step(lambda t, x: x * np.inf * 0.0, 0.0, np.array([1.0]), 0.1)


def test_deterministic_repeat():
    a = integrate_adaptive(oscillator, 0.0, np.array([1.0, 0.0]), 3.0, t_eval=[0.5, 1.5])
    b = integrate_adaptive(oscillator, 0.0, np.array([1.0, 0.0]), 3.0, t_eval=[0.5, 1.5])
    assert a.times.tobytes() == b.times.tobytes()
    assert a.states.tobytes() == b.states.tobytes()


def test_trajectory_sample_matches_hermite():
    traj = integrate_adaptive(oscillator, 0.0, np.array([1.0, 0.0]), 1.0, rtol=1e-10, atol=1e-12)
    x = traj.sample([0.123, 0.77])
    assert np.allclose(x[:, 0], np.cos([0.123, 0.77]), atol=1e-6)


def test_trajectory_requires_two_samples():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0]), np.array([[1.0]]))


@given(t=st.floats(0.0, 1.0))
def test_hermite_reproduces_cubics(t):
    p = np.poly1d([0.7, -1.2, 0.4, 2.0])
    x, dx = hermite_interpolate(0.0, 1.0, p(0.0), p(1.0), p.deriv()(0.0), p.deriv()(1.0), t)
    assert x == pytest.approx(p(t), abs=1e-12)
    assert dx == pytest.approx(p.deriv()(t), abs=1e-12)


@settings(max_examples=50)
@given(a=st.floats(-3.0, 3.0), h=st.floats(1e-3, 0.5))
def test_rk4_on_linear_field_is_taylor_truncation(a, h):
    got = rk4_step(lambda t, x: a * x, 0.0, np.array([1.0]), h)[0]
    z = a * h
    assert got == pytest.approx(1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24, rel=1e-12, abs=1e-14)
