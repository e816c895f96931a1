import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fdtfit.exceptions import InvalidInputError, SingularSystemError
from fdtfit.rational import (
    RationalApproximant,
    decay_init,
    derivative_statistics,
    least_squares_fit,
    pade_match_at_zero,
    paper_fit_grid,
)
from fdtfit.response import EssentialStats, ResponseCurve


def test_order_one_is_exponential():
    g = RationalApproximant([[[1.0]]], [[[-1.0]]])
    assert np.isclose(g.eval(0.0)[0, 0], 1.0)
    assert np.isclose(g.eval(1.0)[0, 0], np.exp(-1.0))
    assert np.isclose(g.eval(1.0, 1)[0, 0], -np.exp(-1.0))
    assert g.is_stable


def test_companion_structure_of_G():
    g = RationalApproximant([1.0, 0.0], [0.0, -1.0])
    # g'' = -g with g(0) = 1, g'(0) = 0
    t = np.linspace(0, 3, 7)
    assert np.allclose(g.eval(t)[:, 0, 0], np.cos(t))
    assert not g.is_stable
    with pytest.raises(InvalidInputError):
        g.eval(-1.0)


@given(st.integers(1, 3), st.sampled_from([1, 2]), st.integers(0, 2), st.integers(0, 10**6))
def test_derivatives_match_finite_differences(m, q, order, seed):
    rng = np.random.default_rng(seed)
    betas = rng.normal(scale=0.5, size=(m, q, q))
    betas[0] -= 2 * np.eye(q)
    g = RationalApproximant(rng.normal(size=(m, q, q)), betas)
    t, h = 0.7, 1e-4
    fd = (g.eval(t + h, order) - g.eval(t - h, order)) / (2 * h)
    exact = g.eval(t, order + 1)
    assert np.allclose(fd, exact, rtol=1e-5, atol=1e-6 * max(1.0, np.abs(exact).max()))


def test_pade_recovers_two_exponentials():
    # 2e^{-t} - e^{-2t}: M_n = 2(-1)^n - (-2)^n
    M = [np.array([[2 * (-1.0) ** n - (-2.0) ** n]]) for n in range(4)]
    g = pade_match_at_zero(M, 2)
    t = np.linspace(0, 5, 11)
    assert np.allclose(g.eval(t)[:, 0, 0], 2 * np.exp(-t) - np.exp(-2 * t), atol=1e-12)
    assert np.allclose(np.sort(g.eigenvalues().real), [-2.0, -1.0])


@given(st.integers(1, 3), st.sampled_from([1, 2, 3]), st.integers(0, 10**6))
def test_pade_matches_derivatives_at_zero(m, q, seed):
    rng = np.random.default_rng(seed)
    M = [rng.normal(size=(q, q)) for _ in range(2 * m)]
    try:
        g = pade_match_at_zero(M, m)
    except SingularSystemError:
        return
    for k in range(2 * m):
        assert np.allclose(g.eval(0.0, k), M[k], rtol=1e-6, atol=1e-6 * np.abs(M[k]).max())


def test_pade_accepts_essential_stats():
    stats = EssentialStats.from_moments([1.0, -0.5])
    g = pade_match_at_zero(stats, 1)
    assert np.isclose(g.betas[0, 0, 0], -0.5) and np.isclose(g.alphas[0, 0, 0], 1.0)
    with pytest.raises(InvalidInputError):
        pade_match_at_zero(stats, 2)


def test_pade_singular_names_minor():
    # M_1 = 0 makes the order-2 Hankel matrix singular
    M = [np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))]
    with pytest.raises(SingularSystemError, match="leading block minor of order 1"):
        pade_match_at_zero(M, 2)


def _random_stable(rng, m, q):
    """Block companion with well-separated stable roots, then a small generic perturbation."""
    roots = -np.array([0.4, 1.0, 2.2])[:m]
    poly = np.poly(roots)  # lambda^m + c_1 lambda^{m-1} + ... ; beta_i = -c_i
    betas = np.stack([-poly[i + 1] * np.eye(q) for i in range(m)])
    betas += 0.03 * rng.normal(size=betas.shape)
    g = RationalApproximant(rng.normal(size=(m, q, q)), betas)
    assert np.all(g.eigenvalues().real < -0.1)
    return g


@pytest.mark.parametrize("m", [1, 2, 3])
@pytest.mark.parametrize("q", [1, 3])
def test_exact_samples_are_recovered(m, q):
    rng = np.random.default_rng(100 * m + q)
    g = _random_stable(rng, m, q)
    times = np.linspace(0.0, 8.0, 90)
    curve = ResponseCurve(times, g.eval(times), 1000)
    fit, rep = least_squares_fit(curve, m)
    assert rep.residual <= 1e-8, rep.residual
    assert np.allclose(fit.eval(times), g.eval(times), atol=1e-4)


def test_noisy_fit_stays_within_noise():
    rng = np.random.default_rng(5)
    times = np.linspace(0.0, 6.0, 60)
    clean = 2 * np.exp(-times) - np.exp(-2 * times)
    noisy = clean + 0.01 * rng.normal(size=times.size)
    fit, rep = least_squares_fit(ResponseCurve(times, noisy, 1000), 2)
    assert np.max(np.abs(fit.eval(times)[:, 0, 0] - clean)) < 0.03
    assert rep.converged


def test_trace_is_monotone():
    times = paper_fit_grid(0.01)
    curve = ResponseCurve(times, np.exp(-0.3 * times) * np.cos(times), 1000)
    _, rep = least_squares_fit(curve, 2)
    assert np.all(np.diff(rep.trace) <= 1e-15)


def test_fit_input_checks():
    curve = ResponseCurve(np.linspace(0, 1, 4), np.ones(4), 10)
    with pytest.raises(InvalidInputError, match="at least 5 time points"):
        least_squares_fit(curve, 2)
    with pytest.raises(InvalidInputError):
        least_squares_fit(curve, 0)
    with pytest.raises(InvalidInputError):
        least_squares_fit(ResponseCurve(np.linspace(0, 1, 9), np.ones(9), 10), 1,
                          weights=-np.ones(9))


def test_weights_force_interpolation():
    times = np.linspace(0, 4, 30)
    vals = np.exp(-times) + 0.3 * np.exp(-5 * times)
    w = np.ones(times.size)
    w[0] = 1e8
    fit, _ = least_squares_fit(ResponseCurve(times, vals, 100), 1, weights=w)
    assert abs(fit.eval(0.0)[0, 0] - vals[0]) < 1e-4


def test_targets_pin_derivative():
    times = np.linspace(0, 4, 30)
    vals = np.exp(-times) + 0.3 * np.exp(-5 * times)
    targets = [(1, 0.0, np.array([[-2.5]]), 1e8)]
    fit, _ = least_squares_fit(ResponseCurve(times, vals, 100), 2, targets=targets)
    assert abs(fit.eval(0.0, 1)[0, 0] + 2.5) < 1e-3


def test_paper_grid_sizes():
    g = paper_fit_grid(0.001)
    assert g.size == 84 and g[0] == 0.0 and np.isclose(g[-1], 60.0)
    coarse = paper_fit_grid(0.1)
    assert coarse.size < 84 and np.allclose(coarse / 0.1, np.rint(coarse / 0.1))


def test_decay_init_candidates_are_stable():
    times = np.linspace(0, 10, 50)
    curve = ResponseCurve(times, np.exp(-0.5 * times), 100)
    for _, betas in decay_init(curve, 3):
        assert RationalApproximant(np.ones_like(betas), betas).is_stable


def test_derivative_statistics_flags_and_stderr():
    rng = np.random.default_rng(1)
    times = np.linspace(0, 6, 40)
    batches = np.exp(-times)[None, :] + 0.02 * rng.normal(size=(20, times.size))
    curve = ResponseCurve(times, batches.mean(0), 1000,
                          stderr=np.full(times.size, 0.02 / np.sqrt(20)),
                          batch_values=batches[:, :, None, None],
                          batch_weights=np.full(20, 1 / 20))
    g, rep = least_squares_fit(curve, 1, jackknife_groups=10)
    assert len(rep.jackknife) == 10
    stats = derivative_statistics(g, [0.0, 2.5], [0, 1, 2], report=rep)
    assert len(stats) == 6
    e0 = stats.get(0, 0.0)
    assert e0.stderr is not None and 0 < float(e0.stderr[0, 0]) < 0.05
    assert "high-order" in stats.get(2, 2.5).flags
    assert "high-order" not in stats.get(1, 0.0).flags


def test_serialization_round_trip():
    g = _random_stable(np.random.default_rng(3), 2, 2)
    back = RationalApproximant.from_dict(g.to_dict())
    assert np.array_equal(back.alphas, g.alphas) and np.array_equal(back.betas, g.betas)
    v = RationalApproximant.from_vector(g.to_vector(), 2, 2)
    assert np.array_equal(v.G, g.G)
