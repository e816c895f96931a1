"""Recover model parameters from essential statistics.

Each solver inverts the matching conditions ``khat^(i)(t_j; theta) = M_ij``
for one model family:

* linear SDEs: closed form from ``M_0``, ``M_1`` and the sample covariance;
* the triad: closed form from ``M_0``, ``M_1``, the quadratic-observable
  slope and (as a cross-check) ``M_2``;
* Langevin dynamics: temperature and friction in closed form, the energy
  scale by a scalar root search over nested simulations, length scale and
  offset from the position moments.

Results come back as an :class:`EstimationReport` listing every matching
condition with its residual.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BracketError, InvalidInputError, MatrixRootError, SingularSystemError
from .models import (
    LangevinEqMoments,
    LangevinModel,
    LinearModel,
    Observable,
    TriadModel,
    langevin_quadrature_moments,
    model_to_dict,
)
from .numerics import bracketed_root, psd_project, spd_sqrt, sym_skew_split
from .response import EssentialStats, StatEntry

__all__ = [
    "EstimationReport",
    "solve_linear",
    "solve_triad",
    "LangevinSolveConfig",
    "solve_langevin",
    "scale_equilibrium",
    "triad_m2_summands",
]

STATUSES = ("exact", "converged", "flagged")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


@dataclass
class EstimationReport:
    """Outcome of a parameter solve.

    Attributes
    ----------
    recovered : LinearModel, TriadModel, LangevinModel or None
        None only when the recovered numbers violate the family's
        invariants (for instance an unstable drift); ``status`` is then
        ``"flagged"``.
    residuals : dict
        One scalar per matching condition or consistency check.
    inputs : dict
        The statistics that went in.
    diagnostics : dict
        Solver trace, seeds, sample sizes, flags.
    status : {"exact", "converged", "flagged"}
    stderr : dict
        Standard errors of the recovered parameters, when available.
    """

    recovered: object
    residuals: dict
    inputs: dict
    diagnostics: dict
    status: str
    stderr: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise InvalidInputError(f"status must be one of {STATUSES}")

    @property
    def flags(self):
        return list(self.diagnostics.get("flags", []))

    def to_dict(self):
        return _jsonable({
            "recovered": None if self.recovered is None else model_to_dict(self.recovered),
            "residuals": self.residuals,
            "inputs": self.inputs,
            "diagnostics": self.diagnostics,
            "status": self.status,
            "stderr": self.stderr,
        })

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self):
        """Human-readable table of recovered parameters and residuals."""
        lines = [f"status: {self.status}"]
        if self.recovered is not None:
            for name, value in model_to_dict(self.recovered).items():
                if name == "family":
                    continue
                se = self.stderr.get(name)
                val = np.array2string(np.asarray(value), precision=6, suppress_small=True)
                lines.append(f"  {name:<8} {val}" + (f"  +/- {_fmt(se)}" if se is not None else ""))
        lines.append("residuals:")
        for name, value in self.residuals.items():
            lines.append(f"  {name:<24} {_fmt(value)}")
        for flag in self.flags:
            lines.append(f"flag: {flag}")
        for note in self.diagnostics.get("notes", []):
            lines.append(f"note: {note}")
        return "\n".join(lines)


def _fmt(value):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return f"{float(arr):.6g}"
    return np.array2string(arr, precision=4)


def _as_matrix(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return a


# ---------------------------------------------------------------- linear SDEs


def solve_linear(M0, M1, S_data, *, tol=1e-10):
    """Drift and diffusion of ``dx = Cx dt + D dW`` from ``M_0``, ``M_1``.

    With ``B(x) = S^{-1} x`` built from the data covariance ``S``, the model
    response is ``khat(t) = exp(tC~) S~ S^{-1}``, so ``S~ = M_0 S``,
    ``C~ = M_1 M_0^{-1}`` and ``D~ D~^T = -C~ S~ - S~ C~^T`` from the
    Lyapunov equation. The returned ``D`` is the symmetric root of that
    product; only ``D D^T`` is identifiable.

    Parameters
    ----------
    M0, M1 : array_like, shape (n, n)
        Response and its slope at ``t = 0``.
    S_data : array_like, shape (n, n)
        Covariance used in the conjugate variable.
    tol : float
        Relative tolerance for negative eigenvalues of ``D~ D~^T``; below
        ``-tol * ||D~ D~^T||`` the report is flagged.
    """
    M0 = _as_matrix(M0, "M0")
    M1 = _as_matrix(M1, "M1")
    S = _as_matrix(S_data, "S_data")
    n = M0.shape[0]
    if M1.shape != (n, n) or S.shape != (n, n):
        raise InvalidInputError("M0, M1 and S_data must have the same shape")
    try:
        np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError:
        raise InvalidInputError("S_data must be symmetric positive definite") from None
    if np.linalg.cond(M0) > 1e12:
        raise SingularSystemError("M0 is singular; the lag-0 response must be invertible")

    flags = []
    S_t = M0 @ S
    asym = float(np.abs(S_t - S_t.T).max() / max(np.abs(S_t).max(), 1e-300))
    S_t = 0.5 * (S_t + S_t.T)
    C_t = M1 @ np.linalg.inv(M0)
    Q = -C_t @ S_t - S_t @ C_t.T
    Q_psd, min_eig = psd_project(Q)
    scale = max(np.abs(Q).max(), 1e-300)
    if min_eig < -tol * scale:
        flags.append(f"D D^T indefinite: smallest eigenvalue {min_eig:.3g} clipped to 0")
    D_t = spd_sqrt(Q_psd, name="D D^T", allow_semidefinite=True)

    DDt = D_t @ D_t.T
    residuals = {
        "lyapunov": float(np.linalg.norm(C_t @ S_t + S_t @ C_t.T + DDt)
                          / max(np.linalg.norm(DDt), 1e-300)),
        "M0_match": float(np.abs(S_t @ np.linalg.inv(S) - M0).max()),
        "M1_match": float(np.abs(C_t @ S_t @ np.linalg.inv(S) - M1).max()),
        "S_tilde_asymmetry": asym,
        "DDt_min_eigenvalue": min_eig,
    }
    try:
        recovered = LinearModel(C_t, D_t)
    except InvalidInputError as exc:
        recovered = None
        flags.append(f"recovered drift invalid: {exc}")
    status = "flagged" if flags else "exact"
    return EstimationReport(
        recovered=recovered,
        residuals=residuals,
        inputs={"M0": M0, "M1": M1, "S_data": S},
        diagnostics={"flags": flags, "S_tilde": S_t, "DDt": DDt},
        status=status,
    )


# ---------------------------------------------------------------- triad


def solve_triad(M0, M1, M2, Q1, sigma_eq_data, *, stderr=None, iso_tol=0.05, z_tol=4.0):
    """All triad parameters from ``M_0``, ``M_1``, ``M_2`` and the quadratic slope.

    Parameters
    ----------
    M0, M1, M2 : array_like, shape (3, 3)
        Derivatives at zero of the identity-observable response.
    Q1 : array_like, shape (3, 3)
        Slope at zero of the response of ``(x2 x3, x1 x3, x1 x2)``.
    sigma_eq_data : float
        Equilibrium standard deviation used in the conjugate variable
        ``x / sigma_eq^2``.
    stderr : dict, optional
        Standard errors of ``"M0"``, ``"M2"`` and ``"Q1"`` (3x3 arrays). The
        isotropy, diagonality and ``B^2`` checks compare against them when
        present and fall back to relative tolerances otherwise.
    iso_tol : float
        Relative tolerance of the isotropy check on ``M_0`` and of the
        diagonality check on ``Q1`` when no standard errors are given.
    z_tol : float
        Deviation, in standard errors, beyond which those two checks flag.

    Notes
    -----
    With ``r = sigma~_eq^2 / sigma_eq^2 = tr(M_0)/3`` the conditions read
    ``M_1 = r (L - Lambda)`` and ``diag(Q1) sigma_eq^2 / sigma~_eq^4 =
    (B2 + B3, B1 + B3, B1 + B2)``. The latter is linear in ``B`` and fixes
    its sign, which ``M_2`` (quadratic in ``B``) cannot.
    """
    M0, M1, M2, Q1 = (_as_matrix(a, n) for a, n in
                      ((M0, "M0"), (M1, "M1"), (M2, "M2"), (Q1, "Q1")))
    if any(a.shape != (3, 3) for a in (M0, M1, M2, Q1)):
        raise InvalidInputError("triad statistics must be 3x3")
    sigma_eq2 = float(sigma_eq_data) ** 2
    if not sigma_eq2 > 0:
        raise InvalidInputError("sigma_eq_data must be positive")
    flags = []
    r = float(np.trace(M0)) / 3.0
    if not r > 0:
        raise InvalidInputError("M0 must have a positive trace")
    stderr = dict(stderr or {})
    dev_m0 = np.abs(M0 - r * np.eye(3))
    aniso = float(dev_m0.max() / r)
    off_q = np.abs(Q1 - np.diag(np.diag(Q1)))
    q_nondiag = float(off_q.max() / max(np.abs(np.diag(Q1)).max(), 1e-300))
    if "M0" in stderr:
        z = float(np.max(dev_m0 / np.maximum(np.atleast_2d(stderr["M0"]), 1e-300)))
        if z > z_tol:
            flags.append(f"M0 is not isotropic ({z:.3g} stderr)")
    elif aniso > iso_tol:
        flags.append(f"M0 is not isotropic (relative deviation {aniso:.3g})")
    if "Q1" in stderr:
        z = float(np.max(off_q / np.maximum(np.atleast_2d(stderr["Q1"]), 1e-300)))
        if z > z_tol:
            flags.append(f"Q1 is not diagonal (off-diagonal at {z:.3g} stderr)")
    elif q_nondiag > iso_tol:
        flags.append(f"Q1 is not diagonal (relative off-diagonal {q_nondiag:.3g})")

    sig_eq2_t = r * sigma_eq2
    sigma_t = np.sqrt(2.0 * sig_eq2_t)
    LmL = M1 / r
    L_t, sym = sym_skew_split(LmL)
    Lam_t = -sym
    d = np.diag(Q1) * sigma_eq2 / sig_eq2_t**2
    B_t = d.sum() / 2.0 - d
    B_sq_m2 = np.diag(LmL @ LmL - M2 / r) / sig_eq2_t

    residuals = {
        "B_sum": float(B_t.sum()),
        "B_squared_gap": (B_t**2 - B_sq_m2).tolist(),
        "M0_anisotropy": aniso,
        "Q1_offdiagonal": q_nondiag,
    }
    if stderr and "M2" in stderr:
        # propagate the M2 errors into B^2 and compare within 3 stderr
        se_m2 = np.diag(np.atleast_2d(stderr["M2"])) / (r * sig_eq2_t)
        se_b2 = se_m2.copy()
        if "Q1" in stderr:
            se_d = np.diag(np.atleast_2d(stderr["Q1"])) * sigma_eq2 / sig_eq2_t**2
            # B_i = (d_j + d_k - d_i)/2, errors assumed independent across entries
            se_b = 0.5 * np.sqrt(np.sum(se_d**2))
            se_b2 = np.sqrt(se_m2**2 + (2 * np.abs(B_t) * se_b) ** 2)
        z = np.abs(B_t**2 - B_sq_m2) / np.maximum(se_b2, 1e-300)
        residuals["B_squared_z"] = z.tolist()
        if np.any(z > 3):
            flags.append("B from Q1 disagrees with B^2 from M2 beyond 3 stderr")
    else:
        gap = np.abs(B_t**2 - B_sq_m2)
        if np.any(gap > 1e-6 * max(1.0, np.abs(B_t**2).max())):
            flags.append("B from Q1 disagrees with B^2 from M2")

    try:
        np.linalg.cholesky(Lam_t)
    except np.linalg.LinAlgError:
        flags.append("recovered Lambda is not positive definite")
    recovered = None
    try:
        recovered = TriadModel(B1=float(B_t[0]), B2=float(B_t[1]), L=L_t, Lambda=Lam_t,
                               sigma=float(sigma_t))
    except (InvalidInputError, MatrixRootError) as exc:
        flags.append(f"recovered triad invalid: {exc}")
    return EstimationReport(
        recovered=recovered,
        residuals=residuals,
        inputs={"M0": M0, "M1": M1, "M2": M2, "Q1": Q1, "sigma_eq_data": float(sigma_eq_data)},
        diagnostics={"flags": flags, "B_from_Q1": B_t, "B_squared_from_M2": B_sq_m2},
        status="flagged" if flags else "exact",
    )


# ---------------------------------------------------------------- whitening


def scale_equilibrium(stats, cov):
    """Essential statistics of the whitened variable ``z = S^{-1/2} x``.

    For the identity observable ``k_z(t) = S^{-1/2} k_x(t) S^{1/2}``, so
    every entry is conjugated by the covariance root. With the identity
    covariance this is a no-op.

    Parameters
    ----------
    stats : EssentialStats or sequence of (n, n) arrays
    cov : array_like, shape (n, n)
        Symmetric positive definite equilibrium covariance.

    Notes
    -----
    Whitening matters for the triad: at the data scale ``M_2`` carries the
    bilinear coefficients only through ``sigma_eq^2 diag(B^2)``, so when
    ``sigma_eq << 1`` they are buried under the ``(L - Lambda)^2`` term.
    See :func:`triad_m2_summands`.
    """
    cov = _as_matrix(cov, "cov")
    if np.linalg.cond(cov) > 1e12:
        raise SingularSystemError("covariance is singular")
    root = spd_sqrt(cov, name="cov")
    inv_root = np.linalg.inv(root)

    def conj(m):
        m = np.atleast_2d(np.asarray(m, dtype=float))
        return inv_root @ m @ root

    if isinstance(stats, EssentialStats):
        out = EssentialStats(provenance=(stats.provenance + " whitened").strip())
        for e in stats:
            se = None
            if e.stderr is not None:
                # entrywise errors mix under conjugation; bound by absolute values
                se = np.abs(inv_root) @ np.atleast_2d(e.stderr) @ np.abs(root)
            out.add(StatEntry(e.order, e.anchor, conj(e.value), e.method, se,
                              e.error_estimate, list(e.flags)))
        return out
    return [conj(m) for m in stats]


def triad_m2_summands(model, *, unit_equilibrium=False):
    """Norms of the two summands of the triad ``M_2`` (without the ``r`` factor).

    Returns ``(b_term, linear_term)`` with ``b_term = ||s diag(B^2)||`` and
    ``linear_term = ||(L - Lambda)^2||``, where ``s`` is the equilibrium
    variance, or 1 with ``unit_equilibrium=True`` (the whitened scale).
    """
    LmL = model.L - model.Lambda
    s = 1.0 if unit_equilibrium else model.sigma_eq2
    b_term = float(np.linalg.norm(s * np.diag(model.B**2)))
    return b_term, float(np.linalg.norm(LmL @ LmL))


# ---------------------------------------------------------------- Langevin


@dataclass
class LangevinSolveConfig:
    """Settings of :func:`solve_langevin`.

    Attributes
    ----------
    route : {"kprime", "m2"}
        Match ``k'(t_j)`` at ``anchors`` (default) or ``M_2``.
    anchors : tuple of float
        Times ``t_j`` for the ``kprime`` route.
    eps_init : float
        Initial guess; the bracket is ``[bracket[0] * eps_init, bracket[1] * eps_init]``.
    bracket : tuple of float
    tol : float
        Bisection stops when the bracket in ``log(eps)`` is narrower than this.
    moments : {"quadrature", "simulation"}
        How the unit-scale position moments ``E^{1,0}[x]``, ``Var^{1,0}[x]``
        are obtained.
    inner_dt, inner_stride : float, int
        Integrator step and subsampling of the nested simulations.
    inner_time : float
        Simulated time per nested run (after burn-in).
    inner_seed : int
        Seed shared by all candidates (common random numbers).
    inner_chains : int
        Independent chains per nested run; ``inner_time`` is split among them.
    slope_step : float
        Relative step in ``eps`` for the local sensitivity used in the
        standard error of ``a`` and ``x0``.
    profile_step, profile_steps : float, int
        Step in ``log(eps)`` and maximum number of steps per side when
        searching the ``chi^2 + 1`` interval that sets the standard error
        of ``eps``.
    """

    route: str = "kprime"
    anchors: tuple = (2.5, 5.0)
    eps_init: float = 0.2
    bracket: tuple = (0.1, 10.0)
    tol: float = 5e-3
    moments: str = "quadrature"
    inner_dt: float = 5e-3
    inner_stride: int = 10
    inner_time: float = 8e4
    inner_seed: int = 12345
    inner_chains: int = 1
    slope_step: float = 0.25
    profile_step: float = 0.35
    profile_steps: int = 6

    def __post_init__(self):
        if self.route not in ("kprime", "m2"):
            raise InvalidInputError(f"route must be 'kprime' or 'm2', got {self.route!r}")
        if self.moments not in ("quadrature", "simulation"):
            raise InvalidInputError("moments must be 'quadrature' or 'simulation'")
        if not (self.eps_init > 0 and 0 < self.bracket[0] < 1 < self.bracket[1]):
            raise InvalidInputError("need eps_init > 0 and bracket factors lo < 1 < hi")
        if self.route == "kprime":
            dt_eff = self.inner_dt * self.inner_stride
            for t in self.anchors:
                if abs(round(t / dt_eff) * dt_eff - t) > 1e-9 * max(1.0, t):
                    raise InvalidInputError(
                        f"anchor {t} is not a multiple of the inner sampling interval {dt_eff}"
                    )

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


class _LangevinProblem:
    """Predictions of the candidate model as functions of ``eps`` (cached)."""

    def __init__(self, gamma, kBT, data_mean, data_var, cfg, threads=1):
        self.gamma, self.kBT = gamma, kBT
        self.data_mean, self.data_var = data_mean, data_var
        self.cfg = cfg
        self.threads = threads
        self._unit = {}
        self._pred = {}
        self.n_simulations = 0

    def unit_moments(self, eps):
        """``(E^{1,0}[x], Var^{1,0}[x])`` at energy scale ``eps``."""
        if eps not in self._unit:
            unit = LangevinModel(epsilon=eps, gamma=self.gamma, kBT=self.kBT, a=1.0, x0=0.0)
            if self.cfg.moments == "quadrature":
                mom = langevin_quadrature_moments(unit)
                self._unit[eps] = (mom.E_x, mom.Var_x, 0.0, 0.0)
            else:
                x = np.concatenate([t.states[:, 0] for t in self._simulate(unit)])
                from .response import batch_means

                (mean, m2), (se_m, _) = batch_means(np.column_stack([x, x * x]))
                var = m2 - mean**2
                _, se_v = batch_means((x - mean) ** 2)
                self._unit[eps] = (float(mean), float(var), float(se_m), float(se_v))
        return self._unit[eps]

    def candidate(self, eps):
        E10, V10, _, _ = self.unit_moments(eps)
        # x = x0 + y / a with y at unit scale, so Var[x] = Var^{1,0} / a^2
        a = float(np.sqrt(V10 / self.data_var))
        x0 = float(self.data_mean - E10 / a)
        return LangevinModel(epsilon=eps, gamma=self.gamma, kBT=self.kBT, a=a, x0=x0)

    def _simulate(self, model):
        from .simulate import SimConfig, ensemble

        cfg = self.cfg
        n_ret = int(round(cfg.inner_time / cfg.inner_dt / cfg.inner_chains))
        burn = max(int(round(0.05 * n_ret)), 1)
        sim = SimConfig(dt=cfg.inner_dt, n_steps=n_ret + burn,
                        subsample_stride=cfg.inner_stride, burn_in_steps=burn,
                        seed=cfg.inner_seed, n_chains=cfg.inner_chains)
        self.n_simulations += 1
        trajs = ensemble(model, sim, threads=self.threads)
        return trajs

    def predict(self, eps):
        """Model values ``(value, stderr)`` of the matched statistics at ``eps``."""
        if eps in self._pred:
            return self._pred[eps]
        model = self.candidate(eps)
        if self.cfg.route == "m2":
            mom = langevin_quadrature_moments(model)
            value = np.array([self.gamma**2 - mom.E_Upp])
            se = np.zeros(1)
        else:
            from .response import estimate_response

            trajs = self._simulate(model)
            obs = Observable.for_model("velocity_rate", model)
            # the conjugate variable uses the candidate temperature, as for M_0
            curve = estimate_response(trajs, obs, model, list(self.cfg.anchors), min_pairs=1000)
            value = curve.values[:, 1, 1].copy()
            se = curve.stderr[:, 1, 1].copy()
        self._pred[eps] = (value, se)
        return value, se


def solve_langevin(M0, M1, targets, data_moments, *, kBT_ref=1.0, config=None,
                   stderr=None, threads=1):
    """Recover ``(epsilon, gamma, kBT, a, x0)`` of the Langevin model.

    Parameters
    ----------
    M0, M1 : float
        Velocity response and its slope at zero (from a fitted ``g_m``).
    targets : dict
        For the ``kprime`` route ``{t_j: (value, stderr)}`` with the data
        estimates of ``k'(t_j)``; for the ``m2`` route ``{0.0: (M2, stderr)}``.
    data_moments : LangevinEqMoments or dict
        Needs ``E_x`` and ``Var_x`` (with ``stderr`` entries if available).
    kBT_ref : float
        Temperature used in the data's conjugate variable ``v / kBT_ref``.
    config : LangevinSolveConfig, optional
    stderr : dict, optional
        Standard errors of ``M0`` and ``M1``.
    threads : int
        Chains run in parallel inside each nested simulation.

    Returns
    -------
    EstimationReport
        ``status`` is ``"converged"`` unless a check failed.

    Raises
    ------
    BracketError
        When the residual has no sign change on the bracket; the error
        carries the residual trace.
    """
    cfg = config or LangevinSolveConfig()
    stderr = dict(stderr or {})
    M0, M1 = float(M0), float(M1)
    if not M0 > 0:
        raise InvalidInputError(f"M0 must be positive, got {M0}")
    if not M1 < 0:
        raise InvalidInputError(f"M1 must be negative, got {M1}")
    if isinstance(data_moments, LangevinEqMoments):
        mean, var = data_moments.require("E_x", "Var_x")
        se_mean = data_moments.stderr.get("E_x", 0.0)
        se_var = data_moments.stderr.get("Var_x", 0.0)
    else:
        mean, var = float(data_moments["E_x"]), float(data_moments["Var_x"])
        se_mean = float(data_moments.get("E_x_se", 0.0))
        se_var = float(data_moments.get("Var_x_se", 0.0))
    if not (np.isfinite(mean) and np.isfinite(var) and var > 0):
        raise InvalidInputError("data moments must be finite with positive variance")

    kBT_t = M0 * kBT_ref
    gamma_t = -M1 / M0
    se_M0, se_M1 = float(stderr.get("M0", 0.0)), float(stderr.get("M1", 0.0))

    if cfg.route == "kprime":
        keys = [float(t) for t in cfg.anchors]
    else:
        keys = [0.0]
    try:
        target = np.array([float(np.ravel(targets[k][0])[0]) for k in keys])
        se_target = np.array([float(np.ravel(targets[k][1])[0]) for k in keys])
    except KeyError as exc:
        raise InvalidInputError(f"missing target at t = {exc.args[0]}") from None

    prob = _LangevinProblem(gamma_t, kBT_t, mean, var, cfg, threads)
    lo = np.log(cfg.eps_init * cfg.bracket[0])
    hi = np.log(cfg.eps_init * cfg.bracket[1])

    # slope-weighted normal-equation residual: decreasing in eps across the
    # bracket by construction, its root is the weighted least-squares match
    p_lo, s_lo = prob.predict(float(np.exp(lo)))
    p_hi, s_hi = prob.predict(float(np.exp(hi)))
    slope = (p_hi - p_lo) / (hi - lo)
    var_tot = se_target**2 + 0.5 * (s_lo**2 + s_hi**2)
    var_tot = np.where(var_tot > 0, var_tot, 1.0)
    weights = slope / var_tot

    def residual(u):
        pred, _ = prob.predict(float(np.exp(u)))
        return float(np.sum(weights * (target - pred)))

    trace = []
    try:
        u_root = bracketed_root(residual, lo, hi, tol=cfg.tol, trace=trace)
    except BracketError as exc:
        exc.trace = [(float(np.exp(u)), r) for u, r in exc.trace]
        raise
    eps_t = float(np.exp(u_root))
    flags = []
    # monotonicity up to the Monte Carlo noise of the residual itself
    _, s_mid = prob.predict(float(np.exp(u_root)))
    noise = float(np.sqrt(np.sum(weights**2 * s_mid**2)))
    rs = [r for _, r in sorted(trace)]
    rise = max([b - a for a, b in zip(rs, rs[1:])] + [0.0])
    if rise > noise:
        flags.append(f"residual not monotone along the bisection trace (rise {rise:.3g} "
                     f"exceeds its noise level {noise:.3g})")

    # profile interval: walk outward in log(eps) until chi^2 rises by one;
    # the local slope alone understates the error where the response is flat
    def chi2(eps):
        pred, s = prob.predict(float(eps))
        v = se_target**2 + s**2
        return float(np.sum((target - pred) ** 2 / np.where(v > 0, v, 1.0)))

    c_root = chi2(eps_t)
    bounds, notes = [], []
    for sign in (-1.0, 1.0):
        u_prev, c_prev, edge = u_root, c_root, None
        for k in range(1, cfg.profile_steps + 1):
            u = min(max(u_root + sign * k * cfg.profile_step, lo), hi)
            c = chi2(np.exp(u))
            if c >= c_root + 1.0:
                f = (c_root + 1.0 - c_prev) / (c - c_prev)
                edge = u_prev + f * (u - u_prev)
                break
            u_prev, c_prev = u, c
            if u in (lo, hi):
                break
        if edge is None:
            edge = u_prev
            notes.append(f"eps interval open on the {'lower' if sign < 0 else 'upper'} side "
                         f"(chi^2 rises by less than one up to eps = {np.exp(u_prev):.3g})")
        bounds.append(float(np.exp(edge)))
    se_eps = max(eps_t - bounds[0], bounds[1] - eps_t)

    # local sensitivity of the scale parameters to eps
    h = cfg.slope_step
    e_lo, e_hi = eps_t * np.exp(-h), eps_t * np.exp(h)
    p_root, s_root = prob.predict(eps_t)

    model = prob.candidate(eps_t)
    E10, V10, se_E10, se_V10 = prob.unit_moments(eps_t)
    V10l = prob.unit_moments(float(e_lo))[1]
    V10h = prob.unit_moments(float(e_hi))[1]
    dlnV = (np.log(V10h) - np.log(V10l)) / (e_hi - e_lo)
    a_t = model.a
    se_a = 0.5 * a_t * np.sqrt((se_var / var) ** 2 + (se_V10 / V10) ** 2
                               + (dlnV * se_eps) ** 2)
    # x0 = E[x] - E^{1,0}(eps) / a(eps, Var[x])
    dx0 = (prob.candidate(float(e_hi)).x0 - prob.candidate(float(e_lo)).x0) / (e_hi - e_lo)
    se_x0 = np.sqrt(se_mean**2 + (E10 / (2 * a_t * var) * se_var) ** 2 + (dx0 * se_eps) ** 2
                    + (se_E10 / a_t) ** 2 + (E10 / (2 * a_t * V10) * se_V10) ** 2)

    residuals = {f"target_t={k:g}": float(target[i] - p_root[i]) for i, k in enumerate(keys)}
    residuals["weighted_residual"] = float(np.sum(weights * (target - p_root)))
    residuals["variance_match"] = float(V10 / a_t**2 - var)
    residuals["mean_match"] = float(E10 / a_t + model.x0 - mean)
    se = {
        "kBT": se_M0 * kBT_ref,
        "gamma": float(np.hypot(se_M1 / M0, M1 * se_M0 / M0**2)),
        "epsilon": se_eps,
        "a": float(se_a),
        "x0": float(se_x0),
    }
    return EstimationReport(
        recovered=model,
        residuals=residuals,
        inputs={"M0": M0, "M1": M1, "targets": {str(k): [target[i], se_target[i]]
                                               for i, k in enumerate(keys)},
                "E_x": mean, "Var_x": var, "kBT_ref": kBT_ref},
        diagnostics={
            "flags": flags,
            "trace": [(float(np.exp(u)), r) for u, r in trace],
            "bracket": [float(np.exp(lo)), float(np.exp(hi))],
            "weights": weights,
            "n_simulations": prob.n_simulations,
            "config": cfg.to_dict(),
            "prediction_at_root": p_root,
            "eps_interval": bounds,
            "notes": notes,
            "prediction_stderr_at_root": s_root,
        },
        status="flagged" if flags else "converged",
        stderr=se,
    )
