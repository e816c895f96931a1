"""Dense linear-algebra and solver kernels shared by the other modules.

Everything here is desk scale: matrices are at most a dozen rows, so the
methods favour clarity over asymptotic speed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import (
    BracketError,
    InvalidInputError,
    MatrixRootError,
    SingularSystemError,
)

__all__ = [
    "expm",
    "lyapunov_solve",
    "sym_skew_split",
    "spd_sqrt",
    "psd_project",
    "LSQResult",
    "damped_least_squares",
    "bracketed_root",
    "forward_difference_jacobian",
]

# ||A|| above which expm results are flagged as unreliable.
EXPM_NORM_LIMIT = 1e4


def _square(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


def expm(a):
    """Matrix exponential by scaling and squaring with a Padé core.

    Backed by :func:`scipy.linalg.expm` (Al-Mohy & Higham 2009). A
    ``RuntimeWarning`` is issued when ``||a||_1`` exceeds
    ``EXPM_NORM_LIMIT`` and ``FloatingPointError`` is raised if the result
    overflows.
    """
    a = _square(a)
    norm = np.linalg.norm(a, 1)
    if norm > EXPM_NORM_LIMIT:
        warnings.warn(
            f"expm argument has norm {norm:.3g} > {EXPM_NORM_LIMIT:g}; "
            "accuracy is not guaranteed",
            RuntimeWarning,
            stacklevel=2,
        )
    out = scipy.linalg.expm(a)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"expm overflowed (||A||_1 = {norm:.3g})")
    return out


def lyapunov_solve(c, q):
    """Solve ``C S + S C^T + Q = 0`` for symmetric ``S``.

    Uses the Kronecker form ``(I (x) C + C (x) I) vec(S) = -vec(Q)``, which
    is fine for the n <= 12 systems this package deals with.

    Raises
    ------
    SingularSystemError
        If two eigenvalues of ``C`` sum to zero, so no unique solution exists.
    """
    c = _square(c, "C")
    q = _square(q, "Q")
    n = c.shape[0]
    if q.shape != (n, n):
        raise InvalidInputError(f"Q must be {n}x{n}, got {q.shape}")
    eye = np.eye(n)
    kron = np.kron(eye, c) + np.kron(c, eye)
    # vec is column-major; the operator is symmetric in that choice anyway
    rhs = -q.reshape(-1, order="F")
    cond = np.linalg.cond(kron)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystemError(
            "Lyapunov operator is singular: eigenvalues of C sum to ~0"
        )
    s = np.linalg.solve(kron, rhs).reshape(n, n, order="F")
    return 0.5 * (s + s.T)


def sym_skew_split(m):
    """Return ``(skew, sym)`` with ``skew = (M - M^T)/2`` and ``sym = (M + M^T)/2``."""
    m = _square(m)
    return 0.5 * (m - m.T), 0.5 * (m + m.T)


def spd_sqrt(a, *, name="matrix", allow_semidefinite=False):
    """Symmetric (principal) square root of a symmetric positive definite matrix.

    Parameters
    ----------
    a : array_like, shape (n, n)
    allow_semidefinite : bool
        Accept zero eigenvalues (within round-off) instead of raising.
    """
    a = _square(a, name)
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-10 * scale:
        raise MatrixRootError(f"{name} is not symmetric")
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    tol = 1e-12 * scale
    if allow_semidefinite:
        if w.min() < -tol:
            raise MatrixRootError(
                f"{name} is indefinite (smallest eigenvalue {w.min():.3g})"
            )
        w = np.clip(w, 0.0, None)
    else:
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            raise MatrixRootError(
                f"{name} is not positive definite (smallest eigenvalue {w.min():.3g})"
            ) from None
    root = (v * np.sqrt(w)) @ v.T
    return 0.5 * (root + root.T)


def psd_project(a):
    """Symmetrize ``a`` and clip negative eigenvalues to zero.

    Returns
    -------
    projected : ndarray
    min_eig : float
        Smallest eigenvalue before clipping.
    """
    a = _square(a)
    a = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(a)
    projected = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (projected + projected.T), float(w.min())


def forward_difference_jacobian(fun, x, f0=None):
    """Forward-difference Jacobian with step ``sqrt(eps) * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)
    if f0 is None:
        f0 = np.asarray(fun(x), dtype=float)
    h = np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(x))
    jac = np.empty((f0.size, x.size))
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h[i]
        jac[:, i] = (np.asarray(fun(xp), dtype=float) - f0) / h[i]
    return jac


@dataclass
class LSQResult:
    """Outcome of :func:`damped_least_squares`.

    ``cost`` is the plain sum of squared residuals. ``trace`` holds the cost
    after every accepted step, starting with the initial cost, so it is
    non-increasing by construction.
    """

    x: np.ndarray
    cost: float
    n_iter: int
    n_fev: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)


def damped_least_squares(
    fun,
    x0,
    jac=None,
    *,
    max_iter=500,
    ftol=1e-14,
    xtol=1e-14,
    gtol=1e-14,
    damping=1e-3,
):
    """Minimize ``sum(fun(x)**2)`` by Levenberg-Marquardt iteration.

    Parameters
    ----------
    fun : callable
        Maps a parameter vector to a residual vector.
    x0 : array_like
        Starting point.
    jac : callable, optional
        Returns the Jacobian of ``fun``; forward differences when omitted.
    max_iter : int
        Maximum number of Jacobian evaluations.
    ftol, xtol, gtol : float
        Stop when the relative cost reduction, relative step length or the
        gradient infinity-norm fall below these.
    damping : float
        Initial Marquardt parameter, relative to ``diag(J^T J)``.

    Returns
    -------
    LSQResult
        The best iterate seen. ``converged`` is False only when the
        iteration budget ran out.
    """
    x = np.array(x0, dtype=float).ravel()
    r = np.asarray(fun(x), dtype=float).ravel()
    n_fev = 1
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("residual is not finite at the starting point")
    cost = float(r @ r)
    trace = [cost]
    if cost == 0.0:
        return LSQResult(x, cost, 0, n_fev, True, "zero residual at start", trace)

    lam = damping
    for it in range(1, max_iter + 1):
        if jac is None:
            J = forward_difference_jacobian(fun, x, r)
            n_fev += x.size
        else:
            J = np.asarray(jac(x), dtype=float).reshape(r.size, x.size)
        grad = J.T @ r
        if np.max(np.abs(grad)) <= gtol * max(1.0, cost):
            return LSQResult(x, cost, it, n_fev, True, "gradient below gtol", trace)
        diag = np.sum(J * J, axis=0)
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1.0))

        accepted = False
        while lam < 1e16:
            aug = np.vstack([J, np.diag(np.sqrt(lam * diag))])
            rhs = np.concatenate([-r, np.zeros(x.size)])
            step = np.linalg.lstsq(aug, rhs, rcond=None)[0]
            x_new = x + step
            r_new = np.asarray(fun(x_new), dtype=float).ravel()
            n_fev += 1
            cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
            if cost_new < cost:
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            # no descent direction left at machine precision: a stationary point
            return LSQResult(x, cost, it, n_fev, True, "no further descent", trace)

        reduction = (cost - cost_new) / cost
        small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)
        x, r, cost = x_new, r_new, cost_new
        trace.append(cost)
        lam = max(lam / 3.0, 1e-15)
        if cost == 0.0 or reduction < ftol or small_step:
            return LSQResult(x, cost, it, n_fev, True, "converged", trace)

    return LSQResult(x, cost, max_iter, n_fev, False, "maximum iterations reached", trace)


def bracketed_root(f, lo, hi, tol=1e-8, *, max_iter=200, trace=None):
    """Find a root of ``f`` in ``[lo, hi]`` by bisection.

    Deterministic: the same ``f`` and bracket always yield the same
    sequence of evaluations. Every ``(x, f(x))`` pair is appended to
    ``trace`` when a list is supplied.

    Raises
    ------
    BracketError
        If ``f(lo)`` and ``f(hi)`` have the same sign.
    """
    if trace is None:
        trace = []
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise InvalidInputError(f"need lo < hi, got [{lo}, {hi}]")
    flo = float(f(lo))
    trace.append((lo, flo))
    if flo == 0.0:
        return lo
    fhi = float(f(hi))
    trace.append((hi, fhi))
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(
            f"no sign change on [{lo:g}, {hi:g}]: f = ({flo:.4g}, {fhi:.4g})", trace
        )
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        fmid = float(f(mid))
        trace.append((mid, fmid))
        if fmid == 0.0:
            return mid
        if np.sign(fmid) == np.sign(flo):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)
