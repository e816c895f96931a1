"""Order-m rational approximants of response kernels.

In the Laplace variable ``lambda = 1/s`` the approximant is

    R(lambda) = (I - sum_i lambda^i beta_i)^{-1} sum_i lambda^i alpha_i,

with the sums running over ``i = 1..m``. Its inverse transform is the
time-domain kernel

    g(t) = E_1^T exp(t G) [alpha_1; ...; alpha_m],

where ``G`` is the block companion matrix with ``beta_1..beta_m`` in the
first block column and identity blocks on the block superdiagonal. Because
``d/dt`` acts as multiplication by ``G``, all derivatives are exact.

Two ways of fixing the coefficients are provided: Padé matching of
``M_i = k^(i)(0)`` for ``i < 2m`` and a least-squares fit to a sampled
curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidInputError, SingularSystemError
from .numerics import damped_least_squares, expm
from .response import EssentialStats, ResponseCurve, StatEntry

__all__ = [
    "RationalApproximant",
    "FitReport",
    "pade_match_at_zero",
    "least_squares_fit",
    "derivative_statistics",
    "paper_fit_grid",
    "decay_init",
]

# exp(t * max|Re eig G|) above this is treated as overflow
_MAX_EXPONENT = 700.0


@dataclass
class RationalApproximant:
    """``g(t) = E_1^T exp(tG) alpha`` with ``m`` blocks of size ``q x q``."""

    alphas: np.ndarray
    betas: np.ndarray

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float)
        betas = np.asarray(self.betas, dtype=float)
        if alphas.ndim == 1:
            alphas = alphas[:, None, None]
        if betas.ndim == 1:
            betas = betas[:, None, None]
        if alphas.ndim != 3 or alphas.shape[1] != alphas.shape[2]:
            raise InvalidInputError(f"alphas must have shape (m, q, q), got {alphas.shape}")
        if betas.shape != alphas.shape:
            raise InvalidInputError("alphas and betas must have the same shape")
        if alphas.shape[0] < 1:
            raise InvalidInputError("order m must be >= 1")
        self.alphas, self.betas = alphas, betas

    @property
    def m(self):
        return self.alphas.shape[0]

    @property
    def q(self):
        return self.alphas.shape[1]

    @property
    def G(self):
        m, q = self.m, self.q
        G = np.zeros((m * q, m * q))
        for i in range(m):
            G[i * q : (i + 1) * q, :q] = self.betas[i]
            if i + 1 < m:
                G[i * q : (i + 1) * q, (i + 1) * q : (i + 2) * q] = np.eye(q)
        return G

    @property
    def alpha_stack(self):
        return self.alphas.reshape(self.m * self.q, self.q)

    def eigenvalues(self):
        return np.linalg.eigvals(self.G)

    @property
    def is_stable(self):
        return bool(np.all(self.eigenvalues().real < 0))

    def __call__(self, t, derivative_order=0):
        return self.eval(t, derivative_order)

    def eval(self, t, derivative_order=0):
        """``g^(derivative_order)(t)``; ``t`` scalar gives ``(q, q)``, array gives ``(J, q, q)``."""
        scalar = np.ndim(t) == 0
        times = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(times < 0):
            raise InvalidInputError("g is only defined for t >= 0")
        rows = _basis(self.G, times, self.q)  # (J, q, mq) = E1^T exp(tG)
        G = self.G
        vec = np.linalg.matrix_power(G, int(derivative_order)) @ self.alpha_stack
        out = rows @ vec
        return out[0] if scalar else out

    def to_dict(self):
        return {"m": self.m, "q": self.q, "alphas": self.alphas.tolist(),
                "betas": self.betas.tolist()}

    @classmethod
    def from_dict(cls, d):
        approx = cls(d["alphas"], d["betas"])
        if "m" in d and int(d["m"]) != approx.m:
            raise InvalidInputError("stored m does not match the coefficient blocks")
        return approx

    def to_vector(self):
        return np.concatenate([self.alphas.ravel(), self.betas.ravel()])

    @classmethod
    def from_vector(cls, vec, m, q):
        vec = np.asarray(vec, dtype=float)
        k = m * q * q
        return cls(vec[:k].reshape(m, q, q), vec[k:].reshape(m, q, q))


def _basis(G, times, q):
    """``E_1^T exp(t G)`` for every ``t``; shape ``(J, q, mq)``."""
    w, V = np.linalg.eig(G)
    growth = np.max(times) * max(np.max(w.real), 0.0)
    if growth > _MAX_EXPONENT:
        raise FloatingPointError(
            f"exp(tG) overflows: t * max Re(eig) = {growth:.3g} exceeds {_MAX_EXPONENT}"
        )
    if np.linalg.cond(V) < 1e8:
        Vinv = np.linalg.inv(V)
        head = V[:q]  # E1^T V
        ex = np.exp(np.outer(times, w))  # (J, mq)
        out = np.einsum("ik,jk,kl->jil", head, ex, Vinv)
        return out.real
    return np.array([expm(t * G)[:q] for t in times])


# ---------------------------------------------------------------- Padé matching


def _moments_from_stats(stats, count):
    if isinstance(stats, EssentialStats):
        try:
            return [np.atleast_2d(stats.value(i, 0.0)) for i in range(count)]
        except KeyError as exc:
            raise InvalidInputError(f"missing essential statistic {exc.args[0]}") from None
    moments = [np.atleast_2d(np.asarray(M, dtype=float)) for M in stats]
    if len(moments) < count:
        raise InvalidInputError(f"need {count} moments, got {len(moments)}")
    return moments[:count]


def pade_match_at_zero(stats, m=1):
    """Approximant whose first ``2m`` derivatives at zero equal ``M_0..M_{2m-1}``.

    ``stats`` is an :class:`EssentialStats` with entries at anchor 0, or a
    plain sequence of matrices. The betas solve the block Hankel system
    ``sum_i beta_i M_{r-i} = M_r`` for ``r = m..2m-1``; then
    ``alpha_k = M_{k-1} - sum_{i<k} beta_i M_{k-1-i}``.

    Raises
    ------
    SingularSystemError
        When the Hankel matrix is singular; the message names the first
        singular leading block minor.
    """
    if m < 1:
        raise InvalidInputError("order m must be >= 1")
    M = _moments_from_stats(stats, 2 * m)
    q = M[0].shape[0]
    H = np.zeros((m * q, m * q))
    for i in range(m):
        for c in range(m):
            # block row i multiplies beta_{i+1}
            H[i * q : (i + 1) * q, c * q : (c + 1) * q] = M[m + c - i - 1]
    R = np.hstack(M[m : 2 * m])  # (q, mq)
    scale = max(np.abs(H).max(), 1e-300)
    if np.linalg.cond(H) > 1e13:
        for k in range(1, m + 1):
            minor = H[: k * q, : k * q]
            if np.linalg.cond(minor) > 1e13 or abs(np.linalg.det(minor / scale)) < 1e-13:
                raise SingularSystemError(
                    f"Padé matching system is singular: leading block minor of "
                    f"order {k} (built from M_{m - k}..M_{m + k - 2}) is degenerate"
                )
        raise SingularSystemError("Padé matching system is singular")
    B = np.linalg.solve(H.T, R.T).T  # [beta_1 .. beta_m]
    betas = np.stack([B[:, i * q : (i + 1) * q] for i in range(m)])
    alphas = np.empty_like(betas)
    for k in range(1, m + 1):
        acc = M[k - 1].copy()
        for i in range(1, k):
            acc -= betas[i - 1] @ M[k - 1 - i]
        alphas[k - 1] = acc
    return RationalApproximant(alphas, betas)


# ---------------------------------------------------------------- least squares


def paper_fit_grid(dt_effective, t_max=60.0, n_points=84, t_split=5.0, t_first=0.05):
    """Fit grid denser near zero: 0, geometric on ``[t_first, t_split)``, uniform on ``[t_split, t_max]``.

    Points are rounded to multiples of ``dt_effective``; duplicates created
    by rounding are dropped, so the result can be slightly shorter than
    ``n_points``.
    """
    n_uniform = (n_points - 1) // 2 + 2
    n_geo = n_points - 1 - n_uniform
    geo = np.geomspace(t_first, t_split, n_geo + 1)[:-1]
    uni = np.linspace(t_split, t_max, n_uniform)
    grid = np.concatenate([[0.0], geo, uni])
    grid = np.unique(np.rint(grid / dt_effective)) * dt_effective
    return grid


@dataclass
class FitReport:
    """Diagnostics of :func:`least_squares_fit`."""

    residual: float
    rms: float
    n_iter: int
    converged: bool
    message: str
    trace: list
    grid: list
    flags: list = field(default_factory=list)
    g0_check: dict = field(default_factory=dict)
    init: str = ""
    jackknife: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "residual": self.residual,
            "rms": self.rms,
            "n_iter": self.n_iter,
            "converged": self.converged,
            "message": self.message,
            "trace": list(self.trace),
            "grid": list(self.grid),
            "flags": list(self.flags),
            "g0_check": self.g0_check,
            "init": self.init,
            "n_jackknife": len(self.jackknife),
        }


def _companion_betas(roots, q):
    """Betas whose companion matrix has the given eigenvalues (repeated per block)."""
    coeffs = np.real(np.poly(roots))  # lambda^m + c_1 lambda^{m-1} + ...
    return np.stack([-c * np.eye(q) for c in coeffs[1:]])


def _parse_targets(targets, q):
    conds = []
    for order, anchor, value, weight in targets or ():
        value = np.atleast_2d(np.asarray(value, dtype=float))
        if value.shape != (q, q) or float(weight) < 0 or float(anchor) < 0:
            raise InvalidInputError("each target needs a q x q value, weight >= 0, anchor >= 0")
        conds.append((int(order), float(anchor), value, float(weight)))
    return conds


def _solve_alphas(betas, times, K, sqrt_w, conds=()):
    m, q = betas.shape[0], betas.shape[1]
    G = RationalApproximant(np.zeros_like(betas), betas).G
    Phi = _basis(G, times, q)  # (J, q, mq)
    A = (sqrt_w[:, None, None] * Phi).reshape(-1, m * q)
    rhs = (sqrt_w[:, None, None] * K).reshape(-1, q)
    rows, vals = [A], [rhs]
    for order, t, val, wt in conds:
        # d^k/dt^k E1^T exp(tG) = E1^T exp(tG) G^k
        phi = _basis(G, np.array([t]), q)[0] @ np.linalg.matrix_power(G, order)
        rows.append(np.sqrt(wt) * phi)
        vals.append(np.sqrt(wt) * val)
    alpha, *_ = np.linalg.lstsq(np.vstack(rows), np.vstack(vals), rcond=None)
    return alpha.reshape(m, q, q)


def decay_init(curve, m):
    """Starting betas from decay rates log-spaced over the curve's time scales.

    The fastest rate comes from the initial slope (or the first grid
    spacing), the slowest from the time at which ``|k|`` drops below 5% of
    ``|k(0)|`` (or the end of the grid). Candidates with real roots and
    with complex pairs (for oscillating kernels) are returned.
    """
    t = curve.times
    K = curve.values
    q = K.shape[1]
    amp = np.abs(K).reshape(len(t), -1).max(axis=1)
    span = t[-1] - t[0]
    below = np.flatnonzero(amp < 0.05 * amp[0]) if amp[0] > 0 else []
    t_slow = t[below[0]] if len(below) else span
    slope_rate = None
    if len(t) > 1 and amp[0] > 0:
        d = np.abs(K[1] - K[0]).max() / (t[1] - t[0]) / amp[0]
        slope_rate = d if d > 0 else None
    fast = slope_rate if slope_rate else 1.0 / max(t[1] - t[0], 1e-12)
    fast = max(fast, 2.0 / max(t_slow, 1e-12))
    slow = 1.0 / max(span, 1e-12)
    fast = max(fast, 4.0 * slow)
    rates = np.geomspace(slow, fast, m) if m > 1 else np.array([fast])
    cands = [("real", _companion_betas(-rates, q))]
    if m >= 2:
        # complex pairs at the same rates, frequencies spread over the span
        roots = []
        freqs = np.geomspace(2 * np.pi / max(span, 1e-12), 2 * np.pi / max(t_slow / 4, 1e-12),
                             m // 2)
        for k in range(m // 2):
            r = rates[min(2 * k, m - 1)] if m > 1 else rates[0]
            roots += [-r + 1j * freqs[k], -r - 1j * freqs[k]]
        if m % 2:
            roots.append(-rates[-1])
        cands.append(("complex", _companion_betas(np.array(roots), q)))
    return cands


def least_squares_fit(curve, m, init=None, weights=None, *, targets=None, max_iter=400,
                      jackknife_groups=0):
    """Fit ``g_m`` to a sampled response curve by nonlinear least squares.

    Minimizes ``sum_i w_i ||k(t_i) - g_m(t_i)||_F^2`` with a Levenberg-
    Marquardt iteration. The betas are optimized first with the alphas
    eliminated by linear least squares (variable projection); the full
    parameter vector is then polished jointly. The reported ``trace`` is the
    objective after every accepted step of both stages, hence non-increasing.

    Parameters
    ----------
    curve : ResponseCurve
        Estimated kernel; all its time points are used.
    m : int
        Order of the approximant.
    init : RationalApproximant, EssentialStats, "decay" or None
        Starting point. Essential statistics with ``M_0..M_{2m-1}`` go
        through :func:`pade_match_at_zero`. ``None`` tries the Padé start
        from finite-difference ``M_0, M_1`` (order 1 only) and the
        :func:`decay_init` candidates, keeping the best fit.
    weights : array_like, optional
        Per-time weights ``w_i``. Large weights at chosen points reproduce
        interpolation there.
    targets : sequence of (order, anchor, value, weight), optional
        Extra matching conditions ``g^(order)(anchor) = value`` added to the
        objective as ``weight * ||g^(order)(anchor) - value||_F^2``. With a
        large weight this pins, for instance, ``g(0)`` and ``g'(0)`` to
        separately estimated ``M_0`` and ``M_1``.
    jackknife_groups : int
        When positive and the curve carries batch curves, refit on
        delete-one-group subsamples to obtain uncertainties; the refits are
        stored on ``report.jackknife``.

    Returns
    -------
    approximant : RationalApproximant
    report : FitReport
    """
    if m < 1:
        raise InvalidInputError("order m must be >= 1")
    times = curve.times
    K = curve.values
    q, n = K.shape[1:]
    if q != n:
        raise InvalidInputError(f"rational fits need square responses, got {q}x{n}")
    n_par = 2 * m * q * q
    if times.size < n_par + 1:
        raise InvalidInputError(
            f"need at least {n_par + 1} time points for an order-{m} fit, got {times.size}"
        )
    w = np.ones(times.size) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != times.shape or np.any(w < 0):
        raise InvalidInputError("weights must be non-negative, one per time point")
    sqrt_w = np.sqrt(w)
    conds = _parse_targets(targets, q)
    n_res = K.size + q * q * len(conds)

    def residual_of(g):
        r = (sqrt_w[:, None, None] * (K - g.eval(times))).ravel()
        extra = [np.sqrt(wt) * (val - g.eval(t, order)).ravel()
                 for order, t, val, wt in conds]
        return np.concatenate([r] + extra) if extra else r

    def full_residual(vec):
        g = RationalApproximant.from_vector(vec, m, q)
        try:
            return residual_of(g)
        except FloatingPointError:
            return np.full(n_res, np.inf)

    def varpro_residual(bvec):
        betas = bvec.reshape(m, q, q)
        try:
            alphas = _solve_alphas(betas, times, K, sqrt_w, conds)
            return residual_of(RationalApproximant(alphas, betas))
        except (FloatingPointError, np.linalg.LinAlgError):
            return np.full(n_res, np.inf)

    starts = []
    if isinstance(init, RationalApproximant):
        if init.m != m or init.q != q:
            raise InvalidInputError("init approximant has the wrong shape")
        starts.append(("given", init.betas))
    elif isinstance(init, EssentialStats):
        starts.append(("pade", pade_match_at_zero(init, m).betas))
    elif init == "decay":
        starts.extend(decay_init(curve, m))
    elif init is None:
        if m == 1 and times[0] == 0.0 and times.size >= 4:
            from .response import finite_difference_derivatives

            try:
                M1 = finite_difference_derivatives(curve, 1, 0.0).value
                starts.append(("pade", pade_match_at_zero([K[0], M1], 1).betas))
            except (InvalidInputError, SingularSystemError):
                pass
        starts.extend(decay_init(curve, m))
    else:
        raise InvalidInputError(f"unsupported init {init!r}")

    best = None
    for label, betas0 in starts:
        r0 = varpro_residual(np.asarray(betas0, dtype=float).ravel())
        if not np.all(np.isfinite(r0)):
            continue
        stage1 = damped_least_squares(varpro_residual, np.asarray(betas0).ravel(),
                                      max_iter=max_iter)
        if best is None or stage1.cost < best[1].cost:
            best = (label, stage1)
    if best is None:
        raise InvalidInputError("no finite starting point for the fit")
    label, stage1 = best
    betas = stage1.x.reshape(m, q, q)
    alphas = _solve_alphas(betas, times, K, sqrt_w, conds)
    x0 = RationalApproximant(alphas, betas).to_vector()
    stage2 = damped_least_squares(full_residual, x0, max_iter=max_iter)
    approx = RationalApproximant.from_vector(stage2.x, m, q)
    trace = list(stage1.trace) + [c for c in stage2.trace[1:]]
    # stage 2 starts from the variable-projection optimum; keep the trace monotone
    if stage2.trace[0] > stage1.trace[-1]:
        trace = list(stage1.trace) + [c for c in stage2.trace if c <= stage1.trace[-1]]

    flags = []
    if not approx.is_stable:
        flags.append("unstable: G has eigenvalues with non-negative real part")
    if not (stage1.converged and stage2.converged):
        flags.append("not converged")
    g0_check = {}
    if times[0] == 0.0:
        diff = np.abs(approx.eval(0.0) - K[0])
        g0_check = {"max_abs_diff": float(diff.max())}
        if curve.stderr is not None:
            se = np.maximum(curve.stderr[0], 1e-300)
            ok = bool(np.all(diff <= 2 * se))
            g0_check.update(within_2_stderr=ok, max_z=float(np.max(diff / se)))
            if not ok:
                flags.append("g(0) differs from k(0) by more than 2 stderr")
    report = FitReport(
        residual=float(stage2.cost),
        rms=float(np.sqrt(stage2.cost / K.size)),
        n_iter=stage1.n_iter + stage2.n_iter,
        converged=bool(stage1.converged and stage2.converged),
        message=stage2.message,
        trace=trace,
        grid=times.tolist(),
        flags=flags,
        g0_check=g0_check,
        init=label,
    )
    if jackknife_groups and curve.batch_values is not None:
        report.jackknife = _jackknife_fits(curve, m, approx, weights, jackknife_groups,
                                           max_iter, targets)
    return approx, report


def _jackknife_fits(curve, m, approx, weights, n_groups, max_iter, targets=None):
    nb = curve.batch_values.shape[0]
    n_groups = min(n_groups, nb)
    groups = np.array_split(np.arange(nb), n_groups)
    bw = curve.batch_weights
    fits = []
    for g in groups:
        keep = np.setdiff1d(np.arange(nb), g)
        wk = bw[keep] / bw[keep].sum()
        vals = np.tensordot(wk, curve.batch_values[keep], axes=1)
        sub = ResponseCurve(curve.times, vals, curve.n_samples)
        fit, _ = least_squares_fit(sub, m, init=approx, weights=weights, targets=targets,
                                   max_iter=max_iter)
        fits.append(fit)
    return fits


def derivative_statistics(g, anchors, orders, *, report=None, rel_tol=0.1):
    """Evaluate ``g^(i)(t_j)`` for all requested orders and anchors.

    With a ``report`` carrying jackknife refits each entry gets a jackknife
    standard error; entries whose standard error exceeds ``rel_tol`` times
    their magnitude are flagged ``large-uncertainty``. Orders of two and
    more are always flagged ``high-order`` since least-squares fits
    constrain them only weakly.
    """
    stats = EssentialStats(provenance=f"rational-fit m={g.m}")
    jk = report.jackknife if report is not None else []
    for t in np.atleast_1d(anchors):
        for i in np.atleast_1d(orders):
            value = g.eval(float(t), int(i))
            se = None
            flags = []
            if len(jk) >= 2:
                reps = np.array([f.eval(float(t), int(i)) for f in jk])
                k = len(reps)
                se = np.sqrt((k - 1) / k * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))
                if np.any(se > rel_tol * np.abs(value) + 1e-12):
                    flags.append("large-uncertainty")
            if int(i) >= 2:
                flags.append("high-order")
            stats.add(StatEntry(int(i), float(t), value, "rational-fit", stderr=se,
                                flags=flags))
    return stats
