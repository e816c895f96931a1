import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fdtfit.estimators import (
    LangevinEstimator,
    LinearSDEEstimator,
    RationalResponseRegressor,
    TriadEstimator,
)
from fdtfit.exceptions import InvalidInputError
from fdtfit.models import LinearModel
from fdtfit.response import ResponseCurve
from fdtfit.simulate import SimConfig, integrate


@pytest.mark.parametrize("cls", [RationalResponseRegressor, LinearSDEEstimator, TriadEstimator,
                                 LangevinEstimator])
def test_params_round_trip_through_clone(cls):
    est = cls()
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    key = next(iter(params))
    est.set_params(**{key: params[key]})


def test_regressor_scalar_fit_and_predict():
    t = np.linspace(0, 6, 50)
    y = 2 * np.exp(-t) - np.exp(-2 * t)
    reg = RationalResponseRegressor(m=2).fit(t, y)
    pred = reg.predict(t)
    assert pred.shape == t.shape
    assert np.allclose(pred, y, atol=1e-8)
    assert reg.score(t, y) > 0.999999
    assert np.allclose(reg.predict([0.0], derivative_order=1), [0.0], atol=1e-6)


def test_regressor_pade_from_samples():
    t = np.arange(200) * 0.01
    reg = RationalResponseRegressor(m=1, method="pade").fit(t, np.exp(-0.7 * t))
    assert reg.report_ is None
    assert abs(reg.approximant_.betas[0, 0, 0] + 0.7) < 1e-3


def test_regressor_matrix_curve():
    t = np.linspace(0, 5, 40)
    C = np.array([[-1.0, 0.5], [0.0, -2.0]])
    from fdtfit.numerics import expm

    curve = ResponseCurve(t, np.array([expm(s * C) for s in t]), 100)
    reg = RationalResponseRegressor(m=1).fit(curve)
    assert reg.predict(t).shape == (40, 2, 2)
    assert np.allclose(reg.approximant_.G, C, atol=1e-6)


def test_regressor_errors():
    with pytest.raises(NotFittedError):
        RationalResponseRegressor().predict([0.0])
    with pytest.raises(InvalidInputError):
        RationalResponseRegressor(m=0).fit([0, 1, 2], [1, 0.5, 0.2])
    with pytest.raises(InvalidInputError):
        RationalResponseRegressor(method="spline").fit([0, 1, 2], [1, 0.5, 0.2])
    with pytest.raises(InvalidInputError):
        RationalResponseRegressor().fit([0, 1, 2], [1, 0.5])


def test_linear_estimator_from_array_and_trajectory():
    model = LinearModel([[-1.0]], [[np.sqrt(2.0)]])
    tr = integrate(model, SimConfig(dt=0.01, n_steps=500_000, seed=2))
    a = LinearSDEEstimator().fit(tr)
    b = LinearSDEEstimator(dt_effective=0.01).fit(tr.states)
    assert np.allclose(a.C_, b.C_)
    assert abs(a.C_[0, 0] + 1) < 0.08 and a.status_ == "exact"
    with pytest.raises(InvalidInputError):
        LinearSDEEstimator().fit(tr.states)
