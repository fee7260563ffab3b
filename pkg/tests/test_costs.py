import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from funnelmpc.costs import StageCost, stage_cost_classical, stage_cost_funnel
from funnelmpc.errors import FunnelViolation


def test_classical_value():
    e = np.array([[1.0], [2.0]])
    k = np.array([1.0, 1.0])
    assert StageCost("classical", 0.005).evaluate(e, k, np.array([2.0])) == pytest.approx(5.02)


def test_funnel_value():
    e = np.zeros((2, 1))
    k = np.array([1.0, 1.5625])
    assert StageCost("funnel", 0.005).evaluate(e, k, np.array([0.0])) == pytest.approx(2.5625)


def test_invalid_cost_settings():
    with pytest.raises(ValueError):
        StageCost("quadratic")
    with pytest.raises(ValueError):
        StageCost("classical", 0.0)


def _tracking_state(t):
    return np.array([math.cos(t), -math.sin(t), 0.0, 0.0])


def test_perfect_tracking(r2):
    plant, spec, ref = r2
    t = 0.7
    z = _tracking_state(t)
    assert stage_cost_classical(plant, spec, ref, t, z, np.zeros(1), 0.005) == pytest.approx(0.0, abs=1e-28)
    assert stage_cost_funnel(plant, spec, ref, t, z, np.zeros(1), 0.005) == pytest.approx(2.0)


def test_outside_funnel(r2):
    plant, spec, ref = r2
    z = np.array([20.0, 0.0, 0.0, 0.0])
    assert stage_cost_funnel(plant, spec, ref, 0.0, z, np.zeros(1), 0.005) == math.inf
    with pytest.raises(FunnelViolation):
        stage_cost_classical(plant, spec, ref, 0.0, z, np.zeros(1), 0.005)
    e = np.zeros((2, 1))
    k = np.array([1.0, np.nan])
    assert StageCost("classical").evaluate(e, k, np.zeros(1)) == math.inf


def test_batched_evaluation_shapes():
    rng = np.random.default_rng(0)
    e = rng.normal(size=(2, 7, 1))
    k = 1 + rng.random((2, 7))
    u = rng.normal(size=(7, 1))
    out = StageCost("classical").evaluate(e, k, u)
    assert out.shape == (7,)
    assert out[3] == pytest.approx(np.sum(e[:, 3] ** 2) + 0.005 * u[3, 0] ** 2)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["classical", "funnel"]), st.floats(1e-4, 10.0), st.floats(-5, 5), st.floats(-5, 5))
def test_linear_in_control_weight(kind, lam, e0, u0):
    e = np.array([[e0], [0.5 * e0]])
    k = np.array([1.0, 2.0])
    u = np.array([u0])
    c1 = StageCost(kind, lam).evaluate(e, k, u)
    c2 = StageCost(kind, 2 * lam).evaluate(e, k, u)
    base = StageCost(kind, lam).evaluate(e, k, np.zeros(1))
    assert c2 - c1 == pytest.approx(c1 - base, rel=1e-9, abs=1e-12)
    assert c1 - base == pytest.approx(lam * u0 ** 2, rel=1e-9, abs=1e-12)
