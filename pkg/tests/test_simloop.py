import math

import numpy as np
import pytest

from funnelmpc.costs import StageCost
from funnelmpc.errors import FunnelViolation, GridMismatch
from funnelmpc.funnel import ReferenceSignal, funnel_control
from funnelmpc.simloop import (
    build_record,
    performance_measure,
    sample_rows,
    simulate_fc_continuous,
    simulate_fc_zoh,
    zoh_discretize,
)

Z0 = np.zeros(4)


@pytest.fixture(scope="module")
def fc_r2(r2):
    plant, spec, ref = r2
    return simulate_fc_continuous(plant, spec, ref, Z0, 3.0)


def test_continuous_fc_r2_feasible(fc_r2):
    assert fc_r2.feasible
    assert fc_r2.min_margin > 1e-6
    assert fc_r2.t[-1] == 3.0
    assert np.allclose(np.diff(fc_r2.t), 1e-3)


def test_continuous_fc_r3_feasible(r3):
    plant, spec, ref = r3
    rec = simulate_fc_continuous(plant, spec, ref, Z0, 1.0)
    assert rec.feasible and rec.min_margin > 0


def test_zero_reference_at_rest_gives_zero_input(r2):
    plant, spec, _ = r2
    ref = ReferenceSignal(amplitude=0.0)
    rec = simulate_fc_zoh(plant, spec, ref, Z0, 1.0, 0.01)
    assert np.all(rec.u == 0.0)
    assert np.all(rec.z == 0.0)
    rec = simulate_fc_continuous(plant, spec, ref, Z0, 1.0)
    assert np.all(rec.u == 0.0)


def test_fine_zoh_approaches_continuous(r2, fc_r2):
    plant, spec, ref = r2
    tau = 1e-4
    rec = simulate_fc_zoh(plant, spec, ref, Z0, 3.0, tau, check_points=0)
    idx = np.arange(0, len(rec.t), 10)
    gap = np.max(np.abs(rec.y[idx] - fc_r2.y))
    assert gap < 1e-3


def test_stored_input_is_control_law(r2):
    plant, spec, ref = r2
    rec = simulate_fc_zoh(plant, spec, ref, Z0, 1.0, 1 / 100)
    for j in range(0, len(rec.t), 7):
        u = funnel_control(plant, spec, ref, rec.t[j], rec.z[j])
        assert rec.u[j, 0] == pytest.approx(u[0], rel=1e-12, abs=1e-12)


def test_input_is_held_between_samples(r2):
    plant, spec, ref = r2
    tau = 1 / 50
    rec = simulate_fc_zoh(plant, spec, ref, Z0, 1.0, tau)
    A, B, _ = plant.state_space()
    Ad, Bd = zoh_discretize(A, B, tau)
    # each step is the exact flow under one constant input
    for j in range(len(rec.t) - 1):
        assert np.allclose(rec.z[j + 1], Ad @ rec.z[j] + Bd @ rec.u[j], rtol=1e-12, atol=1e-13)


def test_zoh_coarser_sampling_degrades(r2):
    plant, spec, ref = r2
    fine = simulate_fc_zoh(plant, spec, ref, Z0, 3.0, 1 / 600)
    coarse = simulate_fc_zoh(plant, spec, ref, Z0, 3.0, 1 / 300)
    assert fine.feasible
    assert coarse.min_margin < fine.min_margin


def test_zoh_violation_is_recorded_not_raised(r2):
    plant, spec, ref = r2
    rec = simulate_fc_zoh(plant, spec, ref, Z0, 10.0, 1 / 40)
    assert not rec.feasible
    assert rec.first_violation_time is not None and rec.first_violation_time < 10.0
    assert performance_measure(rec, StageCost(), 1 / 40) == math.inf


def test_infeasible_initial_state_raises(r2):
    plant, spec, ref = r2
    z = np.array([7.0, 0.0, 0.0, 0.0])
    with pytest.raises(FunnelViolation):
        simulate_fc_continuous(plant, spec, ref, z, 1.0)
    with pytest.raises(FunnelViolation):
        simulate_fc_zoh(plant, spec, ref, z, 1.0, 0.01)
    with pytest.raises(ValueError):
        simulate_fc_zoh(plant, spec, ref, Z0, 1.0, 0.0)


def test_performance_measure_trivial_cases(r2):
    plant, spec, _ = r2
    ref = ReferenceSignal(amplitude=0.0)
    t = np.linspace(0.0, 1.0, 41)
    z = np.zeros((41, 4))
    rec = build_record(plant, spec, ref, t, z, np.zeros(41), meta={"t_end": 1.0})
    assert performance_measure(rec, StageCost("classical"), 1 / 40) == 0.0
    # one unit gain per level at each of the 41 samples
    assert performance_measure(rec, StageCost("funnel"), 1 / 40) == pytest.approx(82.0)
    # every other sample only
    assert performance_measure(rec, StageCost("funnel"), 1 / 20) == pytest.approx(42.0)
    with pytest.raises(GridMismatch):
        sample_rows(rec, 1 / 30)


def test_performance_measure_matches_manual_sum(r2):
    plant, spec, ref = r2
    rec = simulate_fc_zoh(plant, spec, ref, Z0, 1.0, 1 / 200)
    cost = StageCost("classical", 0.005)
    idx = np.arange(0, 201, 5)
    manual = np.sum(rec.e[idx] ** 2) + 0.005 * np.sum(rec.u[idx] ** 2)
    assert performance_measure(rec, cost, 1 / 40) == pytest.approx(manual, rel=1e-12)


def test_random_feasible_starts_stay_inside(r2, feasible_states):
    plant, spec, ref = r2
    for t0, z0 in feasible_states(plant, spec, ref, 10, seed=21, t_max=2.0):
        rec = simulate_fc_continuous(plant, spec, ref, z0, t0 + 1.0, t0=t0)
        assert rec.feasible, (t0, z0)


def test_zoh_deterministic(r2):
    plant, spec, ref = r2
    a = simulate_fc_zoh(plant, spec, ref, Z0, 0.5, 1 / 300)
    b = simulate_fc_zoh(plant, spec, ref, Z0, 0.5, 1 / 300)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.u, b.u)
