"""scikit-learn style wrappers around the fitting and estimation routines.

All estimators follow the usual contract: hyperparameters are set in
``__init__`` and exposed through ``get_params``/``set_params``; ``fit``
returns ``self`` and stores results in attributes with a trailing
underscore.

The SDE estimators take equilibrium trajectories as ``X``: a
:class:`~fdtfit.simulate.Trajectory`, a list of them, or a plain array of
shape ``(n_samples, state_dim)`` together with ``dt_effective``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .estimate import LangevinSolveConfig
from .exceptions import InvalidInputError
from .pipeline import estimate_langevin, estimate_linear, estimate_triad
from .rational import least_squares_fit, pade_match_at_zero
from .response import ResponseCurve, finite_difference_derivatives
from .simulate import Trajectory

__all__ = [
    "RationalResponseRegressor",
    "LinearSDEEstimator",
    "TriadEstimator",
    "LangevinEstimator",
]


def _trajectories(X, dt_effective):
    if isinstance(X, Trajectory):
        return [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(t, Trajectory) for t in X):
        return list(X)
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InvalidInputError(f"X must be trajectories or a 2-D array, got shape {arr.shape}")
    if dt_effective is None:
        raise InvalidInputError("dt_effective is required when X is a plain array")
    return [Trajectory(arr, float(dt_effective))]


class RationalResponseRegressor(RegressorMixin, BaseEstimator):
    """Order-``m`` rational approximant ``g(t) = E_1^T exp(tG) alpha`` fitted to a response.

    Parameters
    ----------
    m : int
        Number of ``q x q`` blocks.
    method : {"ls", "pade"}
        ``"ls"``: least squares on the samples. ``"pade"``: match the first
        ``2m`` derivatives at ``t = 0``, estimated by finite differences of
        the samples (which must then start at 0 on a uniform grid).
    max_iter : int
        Iteration cap of the least-squares solver.
    jackknife_groups : int
        Refits on leave-group-out batch curves for standard errors; needs a
        :class:`ResponseCurve` with batch curves.

    Attributes
    ----------
    approximant_ : RationalApproximant
    report_ : FitReport or None
        Least-squares diagnostics (``None`` for ``"pade"``).
    """

    def __init__(self, m=1, method="ls", max_iter=400, jackknife_groups=0):
        self.m = m
        self.method = method
        self.max_iter = max_iter
        self.jackknife_groups = jackknife_groups

    @staticmethod
    def _curve(X, y, sample_weight=None):
        if isinstance(X, ResponseCurve):
            return X
        t = np.asarray(X, dtype=float).reshape(-1)
        K = np.asarray(y, dtype=float)
        if K.shape[0] != t.size:
            raise InvalidInputError(f"X has {t.size} times but y has {K.shape[0]} rows")
        return ResponseCurve(t, K if K.ndim == 3 else K.reshape(t.size, 1, 1), t.size)

    def fit(self, X, y=None, sample_weight=None):
        """Fit to times ``X`` (shape ``(J,)`` or ``(J, 1)``) and values ``y``.

        ``y`` has shape ``(J,)`` for a scalar response or ``(J, q, q)``.
        ``X`` may also be a :class:`ResponseCurve`, in which case ``y`` is
        ignored.
        """
        if int(self.m) < 1:
            raise InvalidInputError(f"m must be >= 1, got {self.m}")
        if self.method not in ("ls", "pade"):
            raise InvalidInputError(f"method must be 'ls' or 'pade', got {self.method!r}")
        curve = self._curve(X, y)
        self._scalar = curve.shape == (1, 1) and not (
            isinstance(X, ResponseCurve) or np.ndim(y) == 3)
        if self.method == "pade":
            stats = [curve.values[0]] + [
                finite_difference_derivatives(curve, k, 0.0).value
                for k in range(1, 2 * int(self.m))
            ]
            self.approximant_ = pade_match_at_zero(stats, int(self.m))
            self.report_ = None
        else:
            self.approximant_, self.report_ = least_squares_fit(
                curve, int(self.m), weights=sample_weight, max_iter=self.max_iter,
                jackknife_groups=self.jackknife_groups)
        return self

    def predict(self, X, derivative_order=0):
        """``g^(derivative_order)`` at the times ``X``."""
        check_is_fitted(self, "approximant_")
        t = np.asarray(X, dtype=float).reshape(-1)
        out = self.approximant_.eval(t, derivative_order)
        return out[:, 0, 0] if self._scalar else out


class _SDEEstimator(BaseEstimator):
    def _store(self, report):
        self.report_ = report
        self.model_ = report.recovered
        self.status_ = report.status
        self.stderr_ = dict(report.stderr)


class LinearSDEEstimator(_SDEEstimator):
    """Drift ``C`` and diffusion ``D D^T`` of ``dx = Cx dt + D dW`` from equilibrium data.

    Attributes
    ----------
    C_, DDt_ : ndarray
    model_ : LinearModel
    report_ : EstimationReport
    """

    def __init__(self, dt_effective=None, n_batches=50):
        self.dt_effective = dt_effective
        self.n_batches = n_batches

    def fit(self, X, y=None):
        report = estimate_linear(_trajectories(X, self.dt_effective), n_batches=self.n_batches)
        self._store(report)
        self.DDt_ = report.diagnostics["DDt"]
        self.C_ = None if report.recovered is None else report.recovered.C
        return self


class TriadEstimator(_SDEEstimator):
    """All triad parameters (``B``, ``L``, ``Lambda``, ``sigma``) from equilibrium data.

    Attributes
    ----------
    B_, L_, Lambda_ : ndarray
    sigma_ : float
    model_ : TriadModel
    report_ : EstimationReport
    """

    def __init__(self, dt_effective=None, sigma_eq_data=None, n_batches=50):
        self.dt_effective = dt_effective
        self.sigma_eq_data = sigma_eq_data
        self.n_batches = n_batches

    def fit(self, X, y=None):
        report = estimate_triad(_trajectories(X, self.dt_effective),
                                sigma_eq_data=self.sigma_eq_data, n_batches=self.n_batches)
        self._store(report)
        model = report.recovered
        self.B_ = report.diagnostics["B_from_Q1"]
        if model is not None:
            self.L_, self.Lambda_, self.sigma_ = model.L, model.Lambda, model.sigma
        return self


class LangevinEstimator(_SDEEstimator):
    """``(epsilon, gamma, kBT, a, x0)`` of the Morse-potential Langevin model.

    Parameters
    ----------
    kBT_ref : float
        Temperature used in the data's conjugate variable.
    source : {"fd", "fit"}
        Origin of ``M_0``, ``M_1`` and the anchor slopes, see
        :func:`fdtfit.pipeline.estimate_langevin`.
    m : int
        Rational order when ``source="fit"``.
    route, anchors, eps_init, bracket, inner_seed
        Forwarded to :class:`LangevinSolveConfig`.
    inner_time_factor : float
        Length of the nested simulations relative to the data span.

    Attributes
    ----------
    epsilon_, gamma_, kBT_, a_, x0_ : float
    model_ : LangevinModel
    report_ : EstimationReport
    """

    def __init__(self, dt_effective=None, kBT_ref=1.0, source="fd", m=2, route="kprime",
                 anchors=(2.5, 5.0), eps_init=0.2, bracket=(0.1, 10.0), inner_seed=12345,
                 inner_time_factor=4.0, threads=1):
        self.dt_effective = dt_effective
        self.kBT_ref = kBT_ref
        self.source = source
        self.m = m
        self.route = route
        self.anchors = anchors
        self.eps_init = eps_init
        self.bracket = bracket
        self.inner_seed = inner_seed
        self.inner_time_factor = inner_time_factor
        self.threads = threads

    def fit(self, X, y=None):
        trajs = _trajectories(X, self.dt_effective)
        span = sum(len(t) for t in trajs) * trajs[0].dt_effective
        cfg = LangevinSolveConfig(route=self.route, anchors=tuple(self.anchors),
                                  eps_init=self.eps_init, bracket=tuple(self.bracket),
                                  inner_seed=self.inner_seed,
                                  inner_time=self.inner_time_factor * span)
        report = estimate_langevin(trajs, kBT_ref=self.kBT_ref, source=self.source, m=self.m,
                                   config=cfg, threads=self.threads)
        self._store(report)
        for name in ("epsilon", "gamma", "kBT", "a", "x0"):
            setattr(self, name + "_", getattr(report.recovered, name))
        return self
