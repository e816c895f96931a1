import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fdtfit.exceptions import BracketError, InvalidInputError, MatrixRootError, SingularSystemError
from fdtfit.numerics import (
    bracketed_root,
    damped_least_squares,
    expm,
    lyapunov_solve,
    psd_project,
    spd_sqrt,
    sym_skew_split,
)

floats = st.floats(-3, 3, allow_nan=False)


def test_expm_zero_is_identity():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))


def test_expm_diagonal():
    out = expm(np.diag([-1.0, -2.0]))
    assert np.allclose(out, np.diag([np.exp(-1), np.exp(-2)]), rtol=1e-14, atol=0)


def test_expm_nilpotent_truncates():
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(expm(N), np.eye(2) + N)


def test_expm_large_norm_warns():
    with pytest.warns(RuntimeWarning):
        expm(np.diag([-2e4, -1.0]))


def test_expm_overflow_raises():
    with pytest.raises(FloatingPointError):
        expm(np.diag([1e3, 0.0]))


@given(st.lists(floats, min_size=3, max_size=3), st.lists(floats, min_size=3, max_size=3))
def test_expm_commuting_sum_is_product(a, b):
    A, B = np.diag(a), np.diag(b)
    assert np.allclose(expm(A + B), expm(A) @ expm(B), rtol=1e-12, atol=0)


def test_expm_matches_series_oracle(rng):
    # truncated Taylor series of a small matrix as an independent oracle
    A = 0.3 * rng.normal(size=(4, 4))
    series, term = np.eye(4), np.eye(4)
    for k in range(1, 40):
        term = term @ A / k
        series = series + term
    assert np.allclose(expm(A), series, rtol=1e-13, atol=1e-15)


def test_lyapunov_scalar_and_identity():
    assert np.allclose(lyapunov_solve(-1.0, 2.0), 1.0)
    assert np.allclose(lyapunov_solve(-np.eye(2), 2 * np.eye(2)), np.eye(2))


def test_lyapunov_nonnormal_residual():
    C = np.array([[-1.0, 1.0], [0.0, -2.0]])
    Q = np.eye(2)
    S = lyapunov_solve(C, Q)
    assert np.abs(C @ S + S @ C.T + Q).max() < 1e-10


def test_lyapunov_matches_scipy(rng):
    from scipy.linalg import solve_continuous_lyapunov

    from conftest import random_stable

    for n in (1, 2, 3, 5):
        C = random_stable(rng, n)
        D = rng.normal(size=(n, n))
        S = lyapunov_solve(C, D @ D.T)
        assert np.allclose(S, solve_continuous_lyapunov(C, -D @ D.T), rtol=1e-10, atol=1e-12)


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_lyapunov_symmetric_and_residual_small(n, seed):
    from conftest import random_stable

    rng = np.random.default_rng(seed)
    C = random_stable(rng, n)
    D = rng.normal(size=(n, n))
    Q = D @ D.T
    S = lyapunov_solve(C, Q)
    assert np.abs(S - S.T).max() <= 1e-12 * max(1.0, np.abs(S).max())
    assert np.linalg.norm(C @ S + S @ C.T + Q) <= 1e-10 * max(np.linalg.norm(Q), 1e-300)


def test_lyapunov_resonant_spectrum_raises():
    with pytest.raises(SingularSystemError):
        lyapunov_solve(np.diag([1.0, -1.0]), np.eye(2))


def test_sym_skew_split_examples():
    S = np.array([[1.0, 2.0], [2.0, 3.0]])
    skew, sym = sym_skew_split(S)
    assert np.array_equal(skew, np.zeros((2, 2))) and np.array_equal(sym, S)
    K = np.array([[0.0, 1.0], [-1.0, 0.0]])
    skew, sym = sym_skew_split(K)
    assert np.array_equal(skew, K) and np.array_equal(sym, np.zeros((2, 2)))


def test_sym_skew_split_triad_drift():
    L = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    Lam = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])
    skew, sym = sym_skew_split(L - Lam)
    assert np.array_equal(skew, L) and np.array_equal(-sym, Lam)


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=9, max_size=9))
def test_sym_skew_recombines_within_one_ulp(vals):
    M = np.array(vals).reshape(3, 3)
    skew, sym = sym_skew_split(M)
    # both halves mix M_ij with M_ji, so round-off is one ulp of the larger
    scale = np.maximum(np.abs(M), np.abs(M.T))
    assert np.all(np.abs(skew + sym - M) <= np.spacing(scale))
    assert np.array_equal(skew, -skew.T) and np.array_equal(sym, sym.T)


def test_spd_sqrt_and_errors(rng):
    A = rng.normal(size=(3, 3))
    P = A @ A.T + np.eye(3)
    R = spd_sqrt(P)
    assert np.allclose(R @ R, P, rtol=1e-12)
    with pytest.raises(MatrixRootError):
        spd_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(MatrixRootError):
        spd_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert np.allclose(spd_sqrt(np.diag([4.0, 0.0]), allow_semidefinite=True), np.diag([2.0, 0]))


def test_psd_project_clips():
    P, w = psd_project(np.diag([1.0, -0.5]))
    assert w == -0.5 and np.allclose(P, np.diag([1.0, 0.0]))


def test_lsq_linear_problem_few_iterations(rng):
    A = rng.normal(size=(20, 3))
    b = rng.normal(size=20)
    res = damped_least_squares(lambda x: A @ x - b, np.zeros(3), jac=lambda x: A)
    ref = np.linalg.lstsq(A, b, rcond=None)[0]
    assert np.allclose(res.x, ref, atol=1e-10)
    assert res.n_iter <= 3


def test_lsq_rosenbrock():
    def fun(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    res = damped_least_squares(fun, [-1.2, 1.0])
    assert res.converged
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-6)
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))


def test_lsq_zero_residual_start_returns_init():
    res = damped_least_squares(lambda x: x - 2.0, [2.0, 2.0])
    assert np.array_equal(res.x, [2.0, 2.0]) and res.n_iter == 0


def test_lsq_iteration_cap_flags():
    def fun(x):
        return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

    res = damped_least_squares(fun, [-1.2, 1.0], max_iter=2)
    assert not res.converged and "maximum" in res.message


def test_root_examples():
    r = bracketed_root(lambda x: x * x - 2.0, 1.0, 2.0, tol=1e-12)
    assert abs(r - np.sqrt(2.0)) <= 1e-12
    assert bracketed_root(lambda x: x, -1.0, 1.0) == 0.0


def test_root_no_sign_change_carries_trace():
    with pytest.raises(BracketError) as info:
        bracketed_root(lambda x: x * x + 1.0, -1.0, 1.0)
    assert len(info.value.trace) == 2


def test_root_bad_interval():
    with pytest.raises(InvalidInputError):
        bracketed_root(lambda x: x, 1.0, 0.0)


def test_root_frozen_noise_is_deterministic():
    def make(seed):
        noise = np.random.default_rng(seed).normal(size=1000) * 1e-3
        grid = np.linspace(0, 1, 1000)
        return lambda x: 0.5 - x + np.interp(x, grid, noise)

    f = make(7)
    tr1, tr2 = [], []
    r1 = bracketed_root(f, 0.0, 1.0, tol=1e-9, trace=tr1)
    r2 = bracketed_root(make(7), 0.0, 1.0, tol=1e-9, trace=tr2)
    assert r1 == r2 and tr1 == tr2
    assert abs(f(r1)) < 1e-6
