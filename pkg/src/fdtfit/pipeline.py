"""From equilibrium trajectories to recovered parameters.

Each ``estimate_*`` function measures the essential statistics a solver in
:mod:`fdtfit.estimate` needs, with batch standard errors, and calls it.
Only the data and the family's equilibrium density enter; the generating
parameters are never looked at.
"""

from __future__ import annotations

import numpy as np

from .estimate import LangevinSolveConfig, solve_langevin, solve_linear, solve_triad
from .exceptions import InvalidInputError
from .models import LangevinModel, Observable
from .rational import derivative_statistics, least_squares_fit, paper_fit_grid
from .response import (
    N_BATCHES,
    batch_means,
    estimate_response,
    finite_difference_derivatives,
)

__all__ = [
    "estimate_linear",
    "estimate_triad",
    "estimate_langevin",
    "langevin_response_fit",
]


def _as_list(trajectories):
    trajs = trajectories if isinstance(trajectories, (list, tuple)) else [trajectories]
    if not trajs:
        raise InvalidInputError("no trajectories given")
    return list(trajs)


def _stacked(trajs):
    return np.concatenate([t.states for t in trajs])


def _short_lags(trajs, n):
    return np.arange(n) * trajs[0].dt_effective


def _identity(states):
    return np.asarray(states, dtype=float)


def estimate_linear(trajectories, *, n_batches=N_BATCHES):
    """Fit ``dx = Cx dt + D dW`` to equilibrium samples.

    ``S`` is the sample covariance, ``M_0 = k(0)`` and ``M_1`` a one-sided
    finite difference of the response with ``B(x) = S^{-1} x``.
    """
    trajs = _as_list(trajectories)
    X = _stacked(trajs)
    S = np.atleast_2d(np.cov(X, rowvar=False))
    S_inv = np.linalg.inv(S)
    curve = estimate_response(trajs, _identity, None, _short_lags(trajs, 4),
                              n_batches=n_batches, conjugate=lambda x: x @ S_inv)
    m1 = finite_difference_derivatives(curve, 1, 0.0)
    report = solve_linear(curve.values[0], m1.value, S)
    report.diagnostics.update(n_samples=int(X.shape[0]), M0_stderr=curve.stderr[0],
                              M1_stderr=m1.stderr, dt_effective=trajs[0].dt_effective)
    return report


def estimate_triad(trajectories, *, sigma_eq_data=None, n_batches=N_BATCHES):
    """Recover all triad parameters from equilibrium samples.

    ``sigma_eq_data`` defaults to the root of the mean per-component sample
    variance, which is what the isotropic equilibrium density needs.
    """
    trajs = _as_list(trajectories)
    X = _stacked(trajs)
    if X.shape[1] != 3:
        raise InvalidInputError("triad data must be three-dimensional")
    if sigma_eq_data is None:
        sigma_eq_data = float(np.sqrt(np.mean(np.var(X, axis=0))))
    s2 = float(sigma_eq_data) ** 2
    conj = lambda x: np.asarray(x) / s2  # noqa: E731
    quad = Observable("quadratic_triad", 3)
    lags = _short_lags(trajs, 6)
    k_id = estimate_response(trajs, _identity, None, lags, n_batches=n_batches, conjugate=conj)
    k_q = estimate_response(trajs, quad, None, lags, n_batches=n_batches, conjugate=conj)
    m1 = finite_difference_derivatives(k_id, 1, 0.0)
    m2 = finite_difference_derivatives(k_id, 2, 0.0)
    q1 = finite_difference_derivatives(k_q, 1, 0.0)
    report = solve_triad(k_id.values[0], m1.value, m2.value, q1.value, sigma_eq_data,
                         stderr={"M0": k_id.stderr[0], "M2": m2.stderr, "Q1": q1.stderr})
    report.diagnostics.update(
        n_samples=int(X.shape[0]), dt_effective=trajs[0].dt_effective,
        M0_stderr=k_id.stderr[0], M1_stderr=m1.stderr, M2_stderr=m2.stderr,
        Q1_stderr=q1.stderr,
    )
    return report


def langevin_response_fit(trajectories, *, kBT_ref=1.0, m=2, fit="anchored", grid=None,
                          anchors=(2.5, 5.0), jackknife_groups=10, anchor_weight=1e6,
                          n_batches=N_BATCHES):
    """Velocity response of Langevin data and its order-``m`` rational fit.

    Parameters
    ----------
    fit : {"anchored", "plain"}
        ``"plain"`` is the unweighted least-squares fit on ``grid``.
        ``"anchored"`` adds the conditions ``g(0) = k(0)`` and ``g'(0) =
        M_1`` (one-sided finite difference) with weight ``anchor_weight``.
    grid : array_like, optional
        Fit grid; :func:`fdtfit.rational.paper_fit_grid` by default.

    Returns
    -------
    dict
        ``curve``, ``fd`` (dict of finite-difference entries at zero),
        ``g``, ``report`` and ``stats`` (derivative statistics of ``g`` at 0
        and the anchors, orders 0..3).
    """
    if fit not in ("anchored", "plain"):
        raise InvalidInputError(f"fit must be 'anchored' or 'plain', got {fit!r}")
    trajs = _as_list(trajectories)
    dt_eff = trajs[0].dt_effective
    ref = LangevinModel(kBT=kBT_ref)
    obs = Observable("velocity", 2)
    conj = lambda x: np.column_stack([np.zeros(len(x)), np.asarray(x)[:, 1] / kBT_ref])  # noqa: E731
    grid = paper_fit_grid(dt_eff) if grid is None else np.asarray(grid, dtype=float)
    curve = estimate_response(trajs, obs, ref, grid, n_batches=n_batches,
                              conjugate=conj).entry(1, 1)
    short = estimate_response(trajs, obs, ref, _short_lags(trajs, 6), n_batches=n_batches,
                              conjugate=conj).entry(1, 1)
    fd = {k: finite_difference_derivatives(short, k, 0.0) for k in (1, 2)}
    targets = None
    if fit == "anchored":
        targets = [(0, 0.0, short.values[0], anchor_weight),
                   (1, 0.0, fd[1].value, anchor_weight)]
    g, report = least_squares_fit(curve, m, targets=targets,
                                  jackknife_groups=jackknife_groups)
    stats = derivative_statistics(g, [0.0] + [float(t) for t in anchors], [0, 1, 2, 3],
                                  report=report)
    return {"curve": curve, "short": short, "fd": fd, "g": g, "report": report,
            "stats": stats}


def _fd_at(trajs, obs, ref, conj, anchor, order, n_batches, half=3):
    dt_eff = trajs[0].dt_effective
    k0 = int(round(anchor / dt_eff))
    lo = max(k0 - half, 0)
    lags = np.arange(lo, k0 + half + 1) * dt_eff
    curve = estimate_response(trajs, obs, ref, lags, n_batches=n_batches,
                              conjugate=conj).entry(1, 1)
    return finite_difference_derivatives(curve, order, lags[k0 - lo])


def estimate_langevin(trajectories, *, kBT_ref=1.0, source="fd", m=2, fit="plain",
                      config=None, inner_time_factor=4.0, threads=1, n_batches=N_BATCHES):
    """Recover ``(epsilon, gamma, kBT, a, x0)`` from Langevin samples.

    Parameters
    ----------
    source : {"fd", "fit"}
        Where ``M_0``, ``M_1`` and the targets ``k'(t_j)`` (or ``M_2``) come
        from. ``"fd"`` uses the lag-0 value and finite differences of the
        measured response, which carry no ansatz bias. ``"fit"`` takes them
        from the order-``m`` rational fit (``fit`` selects plain or
        anchored least squares, see :func:`langevin_response_fit`).
    config : LangevinSolveConfig, optional
        Unless given, the nested simulations cover ``inner_time_factor``
        times the data's time span so their noise stays below that of the
        data.

    The position mean and variance come from batch means of the data.
    """
    if source not in ("fd", "fit"):
        raise InvalidInputError(f"source must be 'fd' or 'fit', got {source!r}")
    trajs = _as_list(trajectories)
    span = sum(len(t) for t in trajs) * trajs[0].dt_effective
    if config is None:
        config = LangevinSolveConfig(inner_time=inner_time_factor * span)
    x = _stacked(trajs)[:, 0]
    (mean, mean2), (se_mean, _) = batch_means(np.column_stack([x, x * x]), n_batches)
    var = float(mean2 - mean**2)
    _, se_var = batch_means((x - mean) ** 2, n_batches)
    extra = {}

    def pick(entry):
        return float(np.ravel(entry.value)[0]), float(np.ravel(entry.stderr)[0])

    if source == "fd":
        ref = LangevinModel(kBT=kBT_ref)
        obs = Observable("velocity", 2)
        conj = lambda s: np.column_stack([np.zeros(len(s)), np.asarray(s)[:, 1] / kBT_ref])  # noqa: E731
        short = estimate_response(trajs, obs, ref, _short_lags(trajs, 6), n_batches=n_batches,
                                  conjugate=conj).entry(1, 1)
        M0, se0 = float(short.values[0, 0, 0]), float(short.stderr[0, 0, 0])
        M1, se1 = pick(finite_difference_derivatives(short, 1, 0.0))
        if config.route == "kprime":
            targets = {float(t): pick(_fd_at(trajs, obs, ref, conj, float(t), 1, n_batches))
                       for t in config.anchors}
        else:
            targets = {0.0: pick(finite_difference_derivatives(short, 2, 0.0))}
    else:
        res = langevin_response_fit(trajs, kBT_ref=kBT_ref, m=m, fit=fit,
                                    anchors=config.anchors, n_batches=n_batches)
        stats = res["stats"]
        M0, se0 = pick(stats.get(0, 0.0))
        M1, se1 = pick(stats.get(1, 0.0))
        if fit == "anchored":
            # the fit is pinned to these; jackknife refits would hide their noise
            M0, se0 = float(res["short"].values[0, 0, 0]), float(res["short"].stderr[0, 0, 0])
            M1, se1 = pick(res["fd"][1])
        if config.route == "kprime":
            targets = {float(t): pick(stats.get(1, float(t))) for t in config.anchors}
        else:
            targets = {0.0: pick(stats.get(2, 0.0))}
        extra = dict(fit_report=res["report"].to_dict(), fit_approximant=res["g"].to_dict(),
                     essential_statistics=stats.to_dict())
    report = solve_langevin(M0, M1, targets,
                            {"E_x": float(mean), "Var_x": var, "E_x_se": float(se_mean),
                             "Var_x_se": float(se_var)},
                            kBT_ref=kBT_ref, config=config, stderr={"M0": se0, "M1": se1},
                            threads=threads)
    report.diagnostics.update(n_samples=int(x.size), dt_effective=trajs[0].dt_effective,
                              source=source, m=m, fit=fit, **extra)
    return report
