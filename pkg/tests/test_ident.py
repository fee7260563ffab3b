import math

import numpy as np
import pytest
from sklearn.base import clone

from funnelmpc.errors import AllStartsFailed
from funnelmpc.funnel import ReferenceSignal
from funnelmpc.ident import (
    IdentResult,
    LearningData,
    MassOnCarIdentifier,
    ParamBox,
    collect_learning_data,
    identification_objective,
    identify,
    prediction_error,
    simulate_output,
)
from funnelmpc.simloop import simulate_fc_zoh

TAU = 1e-3
TRUTH = np.array([math.pi / 4, 4.0, 1.0, 2.0, 1.0])
Z0 = np.zeros(4)


@pytest.fixture(scope="module")
def data_short(r2):
    plant, spec, ref = r2
    return collect_learning_data(plant, spec, ref, Z0, TAU, 0.2)


def test_learning_data_shape(r2):
    plant, spec, ref = r2
    data = collect_learning_data(plant, spec, ref, Z0, TAU, 0.1)
    assert data.n_samples == 101
    assert data.times[-1] == pytest.approx(0.1)


def test_learning_data_validation():
    with pytest.raises(ValueError):
        LearningData(0.0, np.ones(5), np.ones(5))
    with pytest.raises(ValueError):
        LearningData(TAU, np.ones(5), np.ones(4))
    with pytest.raises(ValueError):
        LearningData(TAU, np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        LearningData(TAU, np.array([1.0, np.nan, 0.0]), np.ones(3))


def test_zero_reference_gives_no_excitation(r2):
    plant, spec, _ = r2
    data = collect_learning_data(plant, spec, ReferenceSignal(amplitude=0.0), Z0, TAU, 0.1)
    assert np.all(data.u == 0) and np.all(data.y == 0)
    with pytest.raises(ValueError):
        identify(data, multistart=1)


def test_replay_matches_closed_loop(r2, data_short):
    plant, spec, ref = r2
    rec = simulate_fc_zoh(plant, spec, ref, Z0, 0.2, TAU)
    y_hat = simulate_output(TRUTH, Z0, rec.u[:, 0], TAU)
    assert np.allclose(y_hat, rec.y[:, 0], rtol=1e-10, atol=1e-12)


def test_objective_at_truth_is_tiny(data_short):
    assert identification_objective(TRUTH, Z0, data_short) < 1e-10


def test_long_convolution_path_agrees():
    # above the FFT threshold the forced response switches to fftconvolve
    rng = np.random.default_rng(0)
    u = rng.normal(size=5000)
    y_long = simulate_output(TRUTH, Z0 + 0.1, u, TAU)
    y_short = simulate_output(TRUTH, Z0 + 0.1, u[:4000], TAU)
    assert np.allclose(y_long[:4000], y_short, rtol=1e-9, atol=1e-11)


def test_point_box_returns_truth(data_short):
    box = ParamBox.point(TRUTH, Z0)
    res = identify(data_short, box=box, multistart=2)
    assert np.array_equal(res.theta, TRUTH)
    assert np.array_equal(res.z0, Z0)
    assert res.residual < 1e-10


def test_fit_respects_box_and_is_self_consistent(data_short):
    box = ParamBox(m1=(3.0, 5.0), k=(1.5, 2.5), z0=((-0.1, 0.1),) * 4)
    res = identify(data_short, box=box, multistart=2, seed=3, max_fev=400)
    assert np.all(res.theta >= box.lower) and np.all(res.theta <= box.upper)
    assert np.all(res.z0 >= box.z0_lower) and np.all(res.z0 <= box.z0_upper)
    assert res.residual == pytest.approx(identification_objective(res.theta, res.z0, data_short),
                                         rel=1e-9, abs=1e-20)
    assert res.residual == min(s["objective"] for s in res.starts)
    assert isinstance(res, IdentResult)
    assert set(res.as_dict()) >= {"alpha", "m1", "z0_3", "residual"}


def test_fit_is_deterministic(data_short):
    a = identify(data_short, multistart=2, seed=5, max_fev=200)
    b = identify(data_short, multistart=2, seed=5, max_fev=200)
    assert np.array_equal(a.theta, b.theta) and a.residual == b.residual


def test_all_starts_failed():
    # the residual overflows for every candidate
    data = LearningData(TAU, np.zeros(50), np.full(50, 1e300))
    with pytest.raises(AllStartsFailed):
        identify(data, multistart=2, max_fev=20)


def test_invalid_boxes():
    with pytest.raises(ValueError):
        ParamBox(m1=(3.0, 2.0))
    with pytest.raises(ValueError):
        ParamBox(alpha=(0.0, 2.0))
    with pytest.raises(ValueError):
        ParamBox(k=(0.0, 1.0))
    with pytest.raises(ValueError):
        ParamBox(z0=((0.0, 1.0),) * 3)


def test_estimator_api(data_short):
    est = MassOnCarIdentifier(tau=TAU, multistart=1, max_fev=100, seed=2)
    params = est.get_params()
    assert params["multistart"] == 1 and params["tau"] == TAU
    other = clone(est).set_params(seed=9)
    assert other.seed == 9 and est.seed == 2
    X = data_short.u[:, None]
    est.fit(X, data_short.y)
    y_hat = est.predict(X)
    assert y_hat.shape == data_short.y.shape
    assert np.allclose(y_hat, simulate_output(est.theta_, est.z0_, data_short.u, TAU))
    with pytest.raises(ValueError):
        est.fit(np.ones((10, 2)), np.ones(10))


def test_prediction_gap_grows_with_time(r2):
    plant, spec, ref = r2
    data = collect_learning_data(plant, spec, ref, Z0, TAU, 0.1)
    res = identify(data, multistart=1, max_fev=300)
    two, sup, gap = prediction_error(res, plant, spec, ref, t_end=20.0, return_gap=True)
    assert two == pytest.approx(np.linalg.norm(gap)) and sup == pytest.approx(np.max(np.abs(gap)))
    t = TAU * np.arange(len(gap))
    assert np.corrcoef(t, np.abs(gap))[0, 1] > 0
    exact = identify(data, box=ParamBox.point(TRUTH, Z0), multistart=1)
    two_exact, _ = prediction_error(exact, plant, spec, ref, t_end=20.0)
    assert two_exact < 1e-6 < two
