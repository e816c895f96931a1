import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fdtfit.exceptions import GridMismatchError, InvalidInputError, SampleSizeError, UnsupportedError
from fdtfit.models import LangevinModel, LinearModel, Observable, TriadModel, langevin_quadrature_moments
from fdtfit.numerics import expm
from fdtfit.response import (
    EssentialStats,
    ResponseCurve,
    StatEntry,
    _batch_sums_direct,
    _batch_sums_fft,
    batch_means,
    conjugate_variable,
    equilibrium_moments,
    estimate_response,
    fd_weights,
    finite_difference_derivatives,
    lag_grid,
)
from fdtfit.simulate import SimConfig, Trajectory, ensemble, integrate

OU2 = LinearModel([[-1.0, 1.0], [0.0, -2.0]], np.eye(2))


def test_conjugate_variable_examples():
    assert np.allclose(conjugate_variable(TriadModel(), np.array([0.1, 0.0, 0.0])), [5.0, 0, 0])
    assert np.allclose(conjugate_variable(LangevinModel(), np.array([3.0, 0.5])), [0.0, 0.5])
    # D chosen so the stationary covariance is diag(1, 4)
    lin = LinearModel(-np.eye(2), np.diag([np.sqrt(2.0), np.sqrt(8.0)]))
    assert np.allclose(conjugate_variable(lin, np.array([1.0, 2.0])), [1.0, 0.5])
    with pytest.raises(UnsupportedError):
        conjugate_variable(object(), np.zeros(2))


@given(st.integers(50, 400), st.integers(1, 3), st.integers(0, 1000), st.data())
def test_fft_sums_equal_direct(T, q, seed, data):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(T, q)), rng.normal(size=(T, 2))
    lo = data.draw(st.integers(0, T - 2))
    hi = data.draw(st.integers(lo + 1, T))
    steps = np.unique(rng.integers(0, T + 20, size=8))
    d = _batch_sums_direct(A, B, lo, hi, steps)
    f = _batch_sums_fft(A, B, lo, hi, steps)
    assert np.allclose(d, f, atol=1e-10 * max(1.0, np.abs(d).max()))


def test_methods_agree_on_curve():
    tr = integrate(OU2, SimConfig(dt=0.01, n_steps=300_000, seed=1))
    lags = lag_grid(0.01, 1.0)
    a = estimate_response(tr, Observable("identity", 2), OU2, lags, method="direct")
    b = estimate_response(tr, Observable("identity", 2), OU2, lags, method="fft")
    assert np.allclose(a.values, b.values, rtol=1e-10, atol=1e-13)
    assert np.allclose(a.stderr, b.stderr, rtol=1e-8, atol=1e-13)


@pytest.fixture(scope="module")
def ou_run():
    return ensemble(OU2, SimConfig(dt=1e-3, n_steps=22_000_000, subsample_stride=10, seed=31,
                                   n_chains=2))


def test_ou_response_matches_matrix_exponential(ou_run):
    lags = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    curve = estimate_response(ou_run, Observable("identity", 2), OU2, lags)
    exact = np.array([expm(t * OU2.C) for t in lags])
    z = np.abs(curve.values - exact) / curve.stderr
    assert np.all(z <= 3.0), z.max()


def test_lag_zero_is_normalized_second_moment():
    m = TriadModel()
    tr = integrate(m, SimConfig(dt=2e-4, n_steps=200_000, subsample_stride=5, seed=2))
    curve = estimate_response(tr, Observable("identity", 3), m, [0.0, 0.01], min_pairs=100)
    X = tr.states
    assert np.allclose(curve.values[0], X.T @ X / len(X) / m.sigma_eq2, rtol=1e-12)


def test_estimator_is_linear_in_observable():
    m = TriadModel()
    tr = integrate(m, SimConfig(dt=2e-4, n_steps=100_000, subsample_stride=5, seed=3))
    lags = [0.0, 0.01, 0.05]
    ident, quad = Observable("identity", 3), Observable("quadratic_triad", 3)
    k1 = estimate_response(tr, ident, m, lags, min_pairs=100)
    k2 = estimate_response(tr, quad, m, lags, min_pairs=100)
    k3 = estimate_response(tr, lambda s: 2.0 * ident(s) - 0.5 * quad(s), m, lags, min_pairs=100)
    assert np.allclose(k3.values, 2.0 * k1.values - 0.5 * k2.values, rtol=1e-12, atol=1e-14)


def test_grid_and_sample_errors():
    tr = integrate(OU2, SimConfig(dt=0.01, n_steps=20_000, seed=1))
    with pytest.raises(GridMismatchError):
        estimate_response(tr, Observable("identity", 2), OU2, [0.0, 0.015])
    with pytest.raises(SampleSizeError):
        estimate_response(tr, Observable("identity", 2), OU2, [0.0, 179.0])
    with pytest.raises(InvalidInputError):
        estimate_response(tr, Observable("identity", 2), OU2, [0.0, 0.0])
    with pytest.raises(InvalidInputError):
        estimate_response(tr, Observable("identity", 3), OU2, [0.0])


def _exact_curve(fn, h=0.01, n=200):
    t = np.arange(n) * h
    return ResponseCurve(t, fn(t), 1)


def test_fd_first_derivative_of_exponential():
    e = finite_difference_derivatives(_exact_curve(lambda t: np.exp(-t)), 1, 0.0)
    assert abs(float(e.value[0, 0]) + 1.0) < 1e-3
    assert e.method == "finite-difference" and e.error_estimate is not None


def test_fd_second_derivative_of_cosine():
    e = finite_difference_derivatives(_exact_curve(np.cos), 2, 0.0)
    assert abs(float(e.value[0, 0]) + 1.0) < 1e-3


@pytest.mark.parametrize("order", [1, 2, 3])
def test_fd_interior_anchor(order):
    e = finite_difference_derivatives(_exact_curve(np.sin), order, 1.0)
    exact = [np.cos(1.0), -np.sin(1.0), -np.cos(1.0)][order - 1]
    assert abs(float(e.value[0, 0]) - exact) < 1e-4


def test_fd_errors():
    c = _exact_curve(np.sin)
    with pytest.raises(UnsupportedError):
        finite_difference_derivatives(c, 4, 0.0)
    with pytest.raises(InvalidInputError):
        finite_difference_derivatives(c, 1, 0.123)
    with pytest.raises(InvalidInputError):
        finite_difference_derivatives(c, 1, float(c.times[-1]))


@given(st.integers(1, 3), st.integers(0, 4))
def test_fd_weights_exact_on_polynomials(order, extra):
    offsets = np.arange(order + 1 + extra)
    w = fd_weights(offsets, order)
    for p in range(offsets.size):
        coeffs = np.zeros(p + 1)
        coeffs[-1] = 1.0
        vals = offsets.astype(float) ** p
        exact = float(np.prod(np.arange(p, p - order, -1))) * 0.0**max(p - order, 0) if p >= order else 0.0
        assert abs(w @ vals - exact) < 1e-9 * max(1, np.abs(w).sum())


def test_fd_stderr_propagated_from_batches(ou_run):
    curve = estimate_response(ou_run, Observable("identity", 2), OU2, lag_grid(0.01, 0.1))
    e = finite_difference_derivatives(curve, 1, 0.0)
    assert e.stderr.shape == (2, 2) and np.all(e.stderr > 0)
    assert np.all(np.abs(e.value - OU2.C) <= 3 * e.stderr + 0.01)


def test_batch_means_iid():
    x = np.random.default_rng(0).normal(size=100_000)
    m, se = batch_means(x, 50)
    assert abs(se - 1 / np.sqrt(1e5)) < 0.25 / np.sqrt(1e5)


def test_curve_export_roundtrip(tmp_path):
    t = np.array([0.0, 0.1, 0.2])
    v = np.arange(12.0).reshape(3, 2, 2)
    c = ResponseCurve(t, v, 10, stderr=0.1 * v)
    c.to_csv(tmp_path / "c.csv")
    c.to_json(tmp_path / "c.json")
    for back in (ResponseCurve.from_csv(tmp_path / "c.csv"), ResponseCurve.from_json(tmp_path / "c.json")):
        assert np.array_equal(back.times, t) and np.array_equal(back.values, v)
        assert np.allclose(back.stderr, 0.1 * v)


def test_curve_invariants():
    with pytest.raises(InvalidInputError):
        ResponseCurve([0.0, 0.0], np.zeros(2), 1)
    with pytest.raises(InvalidInputError):
        ResponseCurve([0.0, 1.0], [0.0, np.nan], 1)
    with pytest.raises(InvalidInputError):
        ResponseCurve([0.0, 1.0], np.zeros(2), 0)


def test_essential_stats_container():
    s = EssentialStats([StatEntry(0, 0.0, 1.0, "analytic")])
    s.add(StatEntry(1, 2.5, -0.1, "rational-fit"))
    assert (1, 2.5) in s and s.value(1, 2.5)[0, 0] == -0.1
    with pytest.raises(InvalidInputError):
        s.add(StatEntry(0, 0.0, 2.0, "analytic"))
    with pytest.raises(InvalidInputError):
        StatEntry(-1, 0.0, 1.0, "analytic")
    with pytest.raises(InvalidInputError):
        StatEntry(0, -1.0, 1.0, "analytic")
    with pytest.raises(InvalidInputError):
        StatEntry(0, 0.0, 1.0, "guess")
    assert len(EssentialStats.from_moments([1.0, -0.5])) == 2


@pytest.fixture(scope="module")
def langevin_scaled_run():
    model = LangevinModel(epsilon=0.2, a=2.0, x0=1.0)
    cfg = SimConfig(dt=2.5e-3, n_steps=20_000_000, subsample_stride=10, seed=12)
    return model, integrate(model, cfg)


def test_equilibrium_moments_velocity(langevin_scaled_run):
    model, tr = langevin_scaled_run
    mom = equilibrium_moments(tr, model)
    assert abs(mom.E_v2 - model.kBT) <= 3 * mom.stderr["E_v2"]
    assert abs(mom.E_v4 - 3 * model.kBT**2) <= 3 * mom.stderr["E_v4"]
    q = langevin_quadrature_moments(model)
    assert abs(mom.E_Upp - q.E_Upp) <= 3 * mom.stderr["E_Upp"]


def test_scale_and_offset_round_trip(langevin_scaled_run):
    model, tr = langevin_scaled_run
    mom = equilibrium_moments(tr, model)
    unit = langevin_quadrature_moments(model.replace(a=1.0, x0=0.0))
    a_t = np.sqrt(unit.Var_x / mom.Var_x)
    x0_t = mom.E_x - unit.E_x / a_t
    se_a = 0.5 * a_t * mom.stderr["Var_x"] / mom.Var_x
    se_x0 = np.hypot(mom.stderr["E_x"], unit.E_x / a_t**2 * se_a)
    assert abs(a_t - 2.0) <= 3 * se_a
    assert abs(x0_t - 1.0) <= 3 * se_x0


def test_equilibrium_moments_needs_samples():
    tr = Trajectory(np.zeros((10, 2)), 0.1)
    with pytest.raises(SampleSizeError):
        equilibrium_moments(tr, LangevinModel())
