"""Fluctuation-dissipation estimates of linear response operators.

For samples ``x_i`` of the unperturbed equilibrium process the response of
an observable ``A`` to a constant forcing is the two-point average

    k_A(t_j) ~ 1/(N - j) * sum_i A(x_{i+j}) (x) B(x_i)

where ``B`` is the conjugate variable of the forcing with respect to the
(known) equilibrium density. Standard errors come from non-overlapping batch
means; the per-batch curves are kept on the :class:`ResponseCurve` so that
derived quantities (finite-difference derivatives, fitted statistics) get
consistent error bars.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from math import factorial

import numpy as np
import scipy.fft

from .exceptions import (
    GridMismatchError,
    InvalidInputError,
    SampleSizeError,
    UnsupportedError,
)
from .models import (
    LangevinEqMoments,
    LangevinModel,
    LinearModel,
    Observable,
    TriadModel,
    equilibrium_covariance,
    potential_derivatives,
)

__all__ = [
    "ResponseCurve",
    "StatEntry",
    "EssentialStats",
    "LangevinEqMoments",
    "conjugate_variable",
    "estimate_response",
    "finite_difference_derivatives",
    "fd_weights",
    "equilibrium_moments",
    "batch_means",
    "lag_grid",
]

N_BATCHES = 50
METHODS = ("analytic", "finite-difference", "rational-fit")


def batch_means(values, n_batches=N_BATCHES, axis=0):
    """Mean and batch-means standard error of a correlated series.

    The series is cut into ``n_batches`` contiguous pieces (the remainder is
    spread over the first pieces, nothing is dropped).
    """
    values = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    n = values.shape[0]
    if n < 2 * n_batches:
        raise SampleSizeError(f"need at least {2 * n_batches} samples, got {n}")
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    sums = np.add.reduceat(values, edges[:-1], axis=0)
    counts = np.diff(edges).reshape((-1,) + (1,) * (values.ndim - 1))
    means = sums / counts
    mean = values.mean(axis=0)
    se = _weighted_batch_se(means, counts, mean)
    return mean, se


def _weighted_batch_se(means, counts, mean):
    w = counts / counts.sum()
    nb = means.shape[0]
    var = np.sum(w**2 * (means - mean) ** 2, axis=0) * nb / (nb - 1)
    return np.sqrt(var)


@dataclass
class ResponseCurve:
    """Estimated response ``k_A(t)`` on a time grid.

    Attributes
    ----------
    times : ndarray, shape (J,)
        Strictly increasing, ``times[0]`` is usually 0.
    values : ndarray, shape (J, q, n)
    n_samples : int
        Number of sample pairs behind the largest lag.
    stderr : ndarray, shape (J, q, n), optional
    batch_values : ndarray, shape (n_batches, J, q, n), optional
        Per-batch estimates; ``values`` is their count-weighted mean.
    batch_weights : ndarray, shape (n_batches,), optional
    """

    times: np.ndarray
    values: np.ndarray
    n_samples: int
    stderr: np.ndarray | None = None
    batch_values: np.ndarray | None = None
    batch_weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        if values.ndim != 3 or values.shape[0] != self.times.size:
            raise InvalidInputError(
                f"values must have shape (J, q, n) with J={self.times.size}, "
                f"got {values.shape}"
            )
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("response values must be finite")
        if int(self.n_samples) <= 0:
            raise InvalidInputError("n_samples must be positive")
        self.values = values
        self.n_samples = int(self.n_samples)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float).reshape(values.shape)

    @property
    def shape(self):
        return self.values.shape[1:]

    def entry(self, i, j):
        """Scalar curve of the ``(i, j)`` matrix entry."""
        bv = None if self.batch_values is None else self.batch_values[:, :, i : i + 1, j : j + 1]
        se = None if self.stderr is None else self.stderr[:, i : i + 1, j : j + 1]
        return ResponseCurve(self.times, self.values[:, i : i + 1, j : j + 1],
                             self.n_samples, se, bv, self.batch_weights, dict(self.meta))

    def subset(self, index):
        """Curve restricted to the time indices ``index``."""
        index = np.asarray(index)
        bv = None if self.batch_values is None else self.batch_values[:, index]
        se = None if self.stderr is None else self.stderr[index]
        return ResponseCurve(self.times[index], self.values[index], self.n_samples, se,
                             bv, self.batch_weights, dict(self.meta))

    def batch_statistic(self, fn):
        """Apply ``fn`` to the curve and to every batch curve.

        Returns ``(value, stderr)``; ``stderr`` is None without batches.
        ``fn`` maps a ``(J, q, n)`` array to anything array-like.
        """
        value = np.asarray(fn(self.values), dtype=float)
        if self.batch_values is None:
            return value, None
        per_batch = np.array([fn(b) for b in self.batch_values], dtype=float)
        w = self.batch_weights.reshape((-1,) + (1,) * value.ndim)
        return value, _weighted_batch_se(per_batch, w, value)

    # -- export
    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "values": self.values.tolist(),
            "stderr": None if self.stderr is None else self.stderr.tolist(),
            "n_samples": self.n_samples,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["times"], d["values"], d["n_samples"], d.get("stderr"),
                   meta=d.get("meta", {}))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_csv(self, path):
        """Columns ``t, k_11 .. k_qn, se_11 .. se_qn`` (1-based entry labels)."""
        q, n = self.shape
        labels = [f"{i + 1}{j + 1}" for i in range(q) for j in range(n)]
        header = ["t"] + [f"k_{s}" for s in labels]
        if self.stderr is not None:
            header += [f"se_{s}" for s in labels]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(v)) for v in self.values[k].ravel()]
                if self.stderr is not None:
                    row += [repr(float(v)) for v in self.stderr[k].ravel()]
                writer.writerow(row)

    @classmethod
    def from_csv(cls, path, n_samples=1):
        with open(path) as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = np.array([[float(v) for v in row] for row in reader])
        k_cols = [i for i, h in enumerate(header) if h.startswith("k_")]
        se_cols = [i for i, h in enumerate(header) if h.startswith("se_")]
        last = header[k_cols[-1]][2:]
        q, n = int(last[0]), int(last[1:])
        values = rows[:, k_cols].reshape(-1, q, n)
        se = rows[:, se_cols].reshape(-1, q, n) if se_cols else None
        return cls(rows[:, 0], values, n_samples, se)


@dataclass
class StatEntry:
    """One essential statistic: the ``order``-th derivative of ``k_A`` at ``anchor``."""

    order: int
    anchor: float
    value: np.ndarray
    method: str
    stderr: np.ndarray | None = None
    error_estimate: float | None = None
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if int(self.order) < 0:
            raise InvalidInputError("derivative order must be >= 0")
        if float(self.anchor) < 0:
            raise InvalidInputError("anchor time must be >= 0")
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}")
        self.order = int(self.order)
        self.anchor = float(self.anchor)
        self.value = np.atleast_2d(np.asarray(self.value, dtype=float))

    def to_dict(self):
        return {
            "order": self.order,
            "anchor": self.anchor,
            "value": self.value.tolist(),
            "method": self.method,
            "stderr": None if self.stderr is None else np.asarray(self.stderr).tolist(),
            "error_estimate": self.error_estimate,
            "flags": list(self.flags),
        }


@dataclass
class EssentialStats:
    """Ordered collection of :class:`StatEntry` keyed by ``(order, anchor)``."""

    entries: list = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        entries, self.entries = list(self.entries), []
        for e in entries:
            self.add(e)

    def add(self, entry):
        if (entry.order, entry.anchor) in self:
            raise InvalidInputError(
                f"duplicate statistic for order {entry.order} at t={entry.anchor}"
            )
        self.entries.append(entry)
        return self

    def __contains__(self, key):
        order, anchor = key
        return any(e.order == order and np.isclose(e.anchor, anchor) for e in self.entries)

    def get(self, order, anchor=0.0):
        for e in self.entries:
            if e.order == order and np.isclose(e.anchor, anchor):
                return e
        raise KeyError((order, anchor))

    def value(self, order, anchor=0.0):
        return self.get(order, anchor).value

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @classmethod
    def from_moments(cls, moments, provenance="analytic", anchor=0.0):
        """Pack ``[M0, M1, ...]`` (scalars or matrices) as analytic entries."""
        return cls([StatEntry(i, anchor, m, "analytic") for i, m in enumerate(moments)],
                   provenance)

    def to_dict(self):
        return {"provenance": self.provenance, "entries": [e.to_dict() for e in self.entries]}


# ---------------------------------------------------------------- estimators


def conjugate_variable(model, states):
    """Conjugate variable ``B(x)`` for a constant forcing.

    ``model`` supplies the known equilibrium density: for the linear family
    ``B(x) = S^{-1} x`` with ``S`` the Lyapunov covariance, for the triad
    ``B(x) = x / sigma_eq^2`` and for Langevin (forcing on the velocity)
    ``B(x, v) = (0, v / kBT)``.
    """
    states = np.asarray(states, dtype=float)
    if isinstance(model, LangevinModel):
        out = np.zeros_like(states)
        out[..., 1] = states[..., 1] / model.kBT
        return out
    if isinstance(model, TriadModel):
        return states / model.sigma_eq2
    if isinstance(model, LinearModel):
        S = equilibrium_covariance(model)
        return np.linalg.solve(S, states.T).T if states.ndim > 1 else np.linalg.solve(S, states)
    raise UnsupportedError(f"no closed-form equilibrium for {type(model).__name__}")


def lag_steps(lags, dt_effective):
    """Convert lag times to integer sample offsets, checking they are on the grid."""
    lags = np.atleast_1d(np.asarray(lags, dtype=float))
    steps = np.rint(lags / dt_effective).astype(np.int64)
    off = np.abs(steps * dt_effective - lags)
    if np.any(off > 1e-9 * np.maximum(1.0, np.abs(lags))) or np.any(steps < 0):
        bad = lags[off > 1e-9 * np.maximum(1.0, np.abs(lags))]
        raise GridMismatchError(
            f"lags {bad[:5].tolist()} are not multiples of dt_effective={dt_effective}"
        )
    return steps


def lag_grid(dt_effective, t_max, spacing=None):
    """Uniform lag grid ``0, h, 2h, ...`` up to ``t_max`` on multiples of ``dt_effective``."""
    stride = 1 if spacing is None else max(1, int(round(spacing / dt_effective)))
    n = int(math.floor(t_max / (stride * dt_effective) + 1e-9))
    return np.arange(n + 1) * stride * dt_effective


def _batch_sums_direct(A, Bc, lo, hi, steps):
    T = A.shape[0]
    sums = np.zeros((steps.size, A.shape[1], Bc.shape[1]))
    for k, j in enumerate(steps):
        end = min(hi, T - j)
        if end > lo:
            sums[k] = A[lo + j : end + j].T @ Bc[lo:end]
    return sums


def _batch_sums_fft(A, Bc, lo, hi, steps):
    # zero padding past hi (for B) and past the chain end (for A) makes the
    # circular correlation equal the truncated lagged sums
    T = A.shape[0]
    top = min(T, hi + int(steps.max()))
    n = scipy.fft.next_fast_len(top - lo + (hi - lo))
    sums = np.zeros((steps.size, A.shape[1], Bc.shape[1]))
    acols = [a for a in range(A.shape[1]) if np.any(A[lo:top, a])]
    bcols = [b for b in range(Bc.shape[1]) if np.any(Bc[lo:hi, b])]
    if not acols or not bcols:
        return sums
    FA = scipy.fft.rfft(A[lo:top, acols], n, axis=0)
    FB = np.conj(scipy.fft.rfft(Bc[lo:hi, bcols], n, axis=0))
    # lags reaching past the chain end have no pairs in this batch
    live = steps < top - lo
    for ia, a in enumerate(acols):
        for ib, b in enumerate(bcols):
            sums[live, a, b] = scipy.fft.irfft(FA[:, ia] * FB[:, ib], n)[steps[live]]
    return sums


def estimate_response(trajectories, observable, model, lags, *, n_batches=N_BATCHES,
                      min_pairs=10_000, method="auto", conjugate=None):
    """Time-average estimate of ``k_A`` at the requested lags.

    Parameters
    ----------
    trajectories : Trajectory or list of Trajectory
        Equilibrium samples; chains are never paired across boundaries.
    observable : Observable or callable
        Maps states ``(T, n)`` to ``(T, q)``.
    model : ModelSpec
        Only its equilibrium density is used, through
        :func:`conjugate_variable`.
    lags : array_like
        Lag times, integer multiples of ``dt_effective``.
    n_batches : int
        Total number of batches used for the standard errors.
    min_pairs : int
        Minimum number of pairs at the largest lag.
    conjugate : callable, optional
        Replaces :func:`conjugate_variable`; maps states ``(T, n)`` to
        ``(T, n)``. Used when the equilibrium density is estimated from the
        data rather than taken from ``model``.
    method : {"auto", "direct", "fft"}
        Lagged products summed directly per lag, or all lags at once through
        FFT cross-correlation. ``"auto"`` picks FFT for more than 32 lags.

    Returns
    -------
    ResponseCurve
    """
    trajs = trajectories if isinstance(trajectories, (list, tuple)) else [trajectories]
    dt_eff = trajs[0].dt_effective
    if any(not np.isclose(t.dt_effective, dt_eff, rtol=1e-12) for t in trajs):
        raise InvalidInputError("all trajectories must share dt_effective")
    if isinstance(observable, Observable) and model is not None:
        observable.check(model)
    if conjugate is None:
        def conjugate(states):
            return conjugate_variable(model, states)
    steps = lag_steps(lags, dt_eff)
    order = np.argsort(steps)
    if np.any(np.diff(steps[order]) == 0):
        raise InvalidInputError("duplicate lags")
    max_step = int(steps.max())
    n_pairs = sum(max(len(t) - max_step, 0) for t in trajs)
    if n_pairs < min_pairs:
        raise SampleSizeError(
            f"only {n_pairs} sample pairs at lag {max_step * dt_eff:g}; need {min_pairs}"
        )

    if method not in ("auto", "direct", "fft"):
        raise InvalidInputError(f"unknown method {method!r}")
    use_fft = method == "fft" or (method == "auto" and steps.size > 32)
    kernel = _batch_sums_fft if use_fft else _batch_sums_direct

    per_chain = max(1, -(-n_batches // len(trajs)))
    batch_sums, batch_counts = [], []
    for traj in trajs:
        A = np.asarray(observable(traj.states), dtype=float)
        Bc = np.asarray(conjugate(traj.states), dtype=float)
        if A.ndim == 1:
            A = A[:, None]
        T = len(traj)
        edges = np.linspace(0, T, per_chain + 1).astype(np.int64)
        for b in range(per_chain):
            lo, hi = int(edges[b]), int(edges[b + 1])
            batch_sums.append(kernel(A, Bc, lo, hi, steps))
            batch_counts.append(np.clip(np.minimum(hi, T - steps) - lo, 0, None)
                                .astype(float))
    sums = np.array(batch_sums)
    counts = np.array(batch_counts)
    total = counts.sum(axis=0)
    values = sums.sum(axis=0) / total[:, None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        batch_values = sums / counts[:, :, None, None]
    # a batch can miss the longest lags near the end of a chain; give it the mean there
    empty = counts == 0
    if np.any(empty):
        batch_values[empty] = np.broadcast_to(values, batch_values.shape)[empty]
    weights = counts / total
    nb = counts.shape[0]
    se = np.sqrt(np.sum(weights[:, :, None, None] ** 2 * (batch_values - values) ** 2,
                        axis=0) * nb / (nb - 1))
    # batch weights for derived statistics: share of pairs at lag zero
    bw = counts[:, order[0]] / counts[:, order[0]].sum()
    times = steps * dt_eff
    srt = np.argsort(times)
    return ResponseCurve(
        times[srt], values[srt], int(n_pairs), se[srt], batch_values[:, srt], bw,
        meta={"dt_effective": dt_eff, "n_chains": len(trajs), "n_batches": nb,
              "observable": getattr(observable, "kind", "custom")},
    )


def fd_weights(offsets, order):
    """Finite-difference weights on integer ``offsets`` for the ``order``-th derivative.

    Solves the moment conditions ``sum_k w_k k^m / m! = [m == order]``.
    """
    offsets = np.asarray(offsets, dtype=float)
    p = offsets.size
    V = np.array([[o**m / factorial(m) for o in offsets] for m in range(p)])
    rhs = np.zeros(p)
    rhs[order] = 1.0
    return np.linalg.solve(V, rhs)


def _stencil(times, anchor_index, order, n_points, one_sided):
    if anchor_index + 1 >= times.size:
        raise InvalidInputError("curve grid too short for the requested stencil")
    h = times[anchor_index + 1] - times[anchor_index]
    if one_sided:
        offsets = np.arange(n_points)
    else:
        half = n_points // 2
        offsets = np.arange(-half, half + 1)
    idx = anchor_index + offsets
    if idx.min() < 0 or idx.max() >= times.size:
        raise InvalidInputError("curve grid too short for the requested stencil")
    expected = times[anchor_index] + offsets * h
    if not np.allclose(times[idx], expected, rtol=1e-9, atol=1e-12):
        raise InvalidInputError("stencil needs uniformly spaced lags around the anchor")
    return idx, fd_weights(offsets, order) / h**order, h


def finite_difference_derivatives(curve, order, anchor=0.0, *, accuracy=3):
    """Finite-difference estimate of ``k_A^(order)(anchor)`` for order 1..3.

    At ``anchor = 0`` a one-sided stencil of ``order + accuracy`` points is
    used (four points for the slope); elsewhere a centred stencil with
    ``order + accuracy`` rounded up to odd. The returned ``error_estimate``
    is the largest entrywise change when the stencil is shortened by one
    point, a proxy for the truncation error at this spacing. The
    ``stderr`` is propagated through the batch curves when available.
    """
    order = int(order)
    if not 1 <= order <= 3:
        raise UnsupportedError(f"finite-difference order must be 1..3, got {order}")
    times = curve.times
    hits = np.flatnonzero(np.isclose(times, anchor, rtol=0, atol=1e-9 * max(1.0, anchor)))
    if hits.size == 0:
        raise InvalidInputError(f"anchor {anchor} is not on the curve grid")
    k = int(hits[0])
    one_sided = k == 0
    n_points = order + accuracy
    if not one_sided and n_points % 2 == 0:
        n_points += 1
    idx, w, h = _stencil(times, k, order, n_points, one_sided)
    idx_lo, w_lo, _ = _stencil(times, k, order, n_points - (1 if one_sided else 2),
                               one_sided)

    def apply(values):
        return np.tensordot(w, values[idx], axes=1)

    value, se = curve.batch_statistic(apply)
    lower = np.tensordot(w_lo, curve.values[idx_lo], axes=1)
    return StatEntry(order, float(times[k]), value, "finite-difference", stderr=se,
                     error_estimate=float(np.max(np.abs(value - lower))))


def equilibrium_moments(trajectories, model, *, n_batches=N_BATCHES, min_samples=100_000):
    """Monte Carlo equilibrium moments of a Langevin trajectory.

    ``model`` is the candidate whose potential is averaged; the samples
    must come from that model's equilibrium.
    """
    trajs = trajectories if isinstance(trajectories, (list, tuple)) else [trajectories]
    states = np.concatenate([t.states for t in trajs])
    if states.shape[0] < min_samples:
        raise SampleSizeError(f"need {min_samples} samples, got {states.shape[0]}")
    if states.shape[1] != 2:
        raise InvalidInputError("equilibrium_moments expects (x, v) Langevin states")
    x, v = states[:, 0], states[:, 1]
    U = [potential_derivatives(model, x, k) for k in range(5)]
    cols = np.column_stack([U[2], U[2] ** 2, U[1] * U[3], U[4], x, x * x, v * v, v**4])
    mean, se = batch_means(cols, n_batches)
    # variance through the batch means of x and x^2
    edges = np.linspace(0, x.size, n_batches + 1).astype(int)
    cnt = np.diff(edges)
    bx = np.add.reduceat(x, edges[:-1]) / cnt
    bx2 = np.add.reduceat(x * x, edges[:-1]) / cnt
    var_x = mean[5] - mean[4] ** 2
    var_b = bx2 - bx**2
    var_se = float(_weighted_batch_se(var_b, cnt, var_x))
    names = ["E_Upp", "E_Upp2", "E_UpUppp", "E_U4", "E_x"]
    stderr = dict(zip(names, se[:5].tolist()))
    stderr.update(Var_x=var_se, E_v2=float(se[6]), E_v4=float(se[7]))
    return LangevinEqMoments(
        E_Upp=float(mean[0]), E_Upp2=float(mean[1]), E_UpUppp=float(mean[2]),
        E_U4=float(mean[3]), E_x=float(mean[4]), Var_x=float(var_x),
        E_v2=float(mean[6]), E_v4=float(mean[7]), stderr=stderr,
        n_samples=int(x.size),
    )
