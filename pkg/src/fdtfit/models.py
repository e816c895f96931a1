"""The three parametric SDE families and their closed-form response statistics.

Each family is a small frozen dataclass that validates itself on
construction. ``ModelSpec`` is simply the union of the three classes; every
instance carries a ``family`` tag and a ``state_dim``.

Families
--------
linear
    ``dx = C x dt + D dW``.
triad
    ``dx = [B(x, x) + L x - Lambda x] dt + sigma Lambda^{1/2} dW`` with
    ``B(x, x) = (B1 x2 x3, B2 x1 x3, B3 x1 x2)`` and ``B3 = -B1 - B2``.
langevin
    ``dx = v dt``, ``dv = [-U'(x) - gamma v] dt + sqrt(2 gamma kBT) dW`` with
    the Morse-plus-retainer potential ``U(x) = U0(a (x - x0))``,
    ``U0(y) = epsilon (exp(-2y) - 2 exp(-y) + 0.01 y^2)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Union

import numpy as np
from scipy import integrate

from .exceptions import (
    IncompleteInputError,
    InvalidInputError,
    MatrixRootError,
    UnsupportedError,
)
from .numerics import spd_sqrt

__all__ = [
    "LinearModel",
    "TriadModel",
    "LangevinModel",
    "ModelSpec",
    "Observable",
    "LangevinEqMoments",
    "drift",
    "diffusion",
    "potential_derivatives",
    "triad_M0_M1_M2",
    "triad_quadratic_response_slope",
    "langevin_M_formulas",
    "langevin_quadrature_moments",
    "equilibrium_covariance",
    "model_to_dict",
    "model_from_dict",
    "dumps",
    "loads",
]

PAPER_TRIAD_L = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
PAPER_TRIAD_LAMBDA = np.array([[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]])


def _matrix(a, name):
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


def _positive(value, name):
    value = float(value)
    if not (np.isfinite(value) and value > 0):
        raise InvalidInputError(f"{name} must be positive, got {value}")
    return value


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Linear SDE ``dx = C x dt + D dW`` with ``C`` stable."""

    C: np.ndarray
    D: np.ndarray

    family = "linear"

    def __post_init__(self):
        C = _matrix(self.C, "C")
        D = _matrix(self.D, "D")
        if C.shape[0] != C.shape[1]:
            raise InvalidInputError(f"C must be square, got {C.shape}")
        if D.shape[0] != C.shape[0]:
            raise InvalidInputError(
                f"D must have {C.shape[0]} rows to match C, got {D.shape}"
            )
        eig = np.linalg.eigvals(C)
        if np.max(eig.real) >= 0:
            raise InvalidInputError(
                f"C is not stable (max real eigenvalue {np.max(eig.real):.3g})"
            )
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def state_dim(self):
        return self.C.shape[0]

    @property
    def noise_dim(self):
        return self.D.shape[1]


@dataclass(frozen=True, eq=False)
class TriadModel:
    """Triad turbulence model; ``B3`` is derived so energy is conserved."""

    B1: float = 0.5
    B2: float = 1.0
    L: np.ndarray = field(default_factory=lambda: PAPER_TRIAD_L.copy())
    Lambda: np.ndarray = field(default_factory=lambda: PAPER_TRIAD_LAMBDA.copy())
    sigma: float = 0.2

    family = "triad"
    state_dim = 3
    noise_dim = 3

    def __post_init__(self):
        L = _matrix(self.L, "L")
        Lam = _matrix(self.Lambda, "Lambda")
        if L.shape != (3, 3) or Lam.shape != (3, 3):
            raise InvalidInputError("L and Lambda must be 3x3")
        if np.any(L + L.T != 0):
            raise InvalidInputError("L must be skew-symmetric (L + L^T == 0)")
        if np.any(Lam != Lam.T):
            raise InvalidInputError("Lambda must be symmetric")
        try:
            np.linalg.cholesky(Lam)
        except np.linalg.LinAlgError:
            raise MatrixRootError("Lambda is not positive definite") from None
        for name in ("B1", "B2"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise InvalidInputError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "sigma", _positive(self.sigma, "sigma"))
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "Lambda", Lam)

    @property
    def B3(self):
        return -self.B1 - self.B2

    @property
    def B(self):
        return np.array([self.B1, self.B2, self.B3])

    @property
    def sigma_eq2(self):
        """Equilibrium variance per coordinate, ``sigma^2 / 2``."""
        return 0.5 * self.sigma**2


@dataclass(frozen=True, eq=False)
class LangevinModel:
    """Unit-mass Langevin particle in a Morse potential with a weak quadratic retainer."""

    epsilon: float = 0.2
    gamma: float = 0.5
    kBT: float = 1.0
    a: float = 1.0
    x0: float = 1.0

    family = "langevin"
    state_dim = 2
    noise_dim = 1

    def __post_init__(self):
        for name in ("epsilon", "gamma", "kBT", "a"):
            object.__setattr__(self, name, _positive(getattr(self, name), name))
        x0 = float(self.x0)
        if not np.isfinite(x0):
            raise InvalidInputError("x0 must be finite")
        object.__setattr__(self, "x0", x0)

    def potential(self, x, order=0):
        return potential_derivatives(self, x, order)

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return LangevinModel(**values)


ModelSpec = Union[LinearModel, TriadModel, LangevinModel]
_FAMILIES = {"linear": LinearModel, "triad": TriadModel, "langevin": LangevinModel}


def _check_model(model):
    if not isinstance(model, (LinearModel, TriadModel, LangevinModel)):
        raise UnsupportedError(f"unsupported model type {type(model).__name__}")


def _state(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.state_dim,):
        raise InvalidInputError(
            f"{model.family} state must have length {model.state_dim}, "
            f"got shape {x.shape}"
        )
    return x


def drift(model, x):
    """Drift vector field ``a(x)``.

    ``x`` may be a single state of length ``state_dim`` or a stack of states
    with shape ``(..., state_dim)``.
    """
    _check_model(model)
    x = _state(model, x)
    if model.family == "linear":
        return x @ model.C.T
    if model.family == "triad":
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        quad = np.stack(
            [model.B1 * x2 * x3, model.B2 * x1 * x3, model.B3 * x1 * x2], axis=-1
        )
        return quad + x @ (model.L - model.Lambda).T
    pos, vel = x[..., 0], x[..., 1]
    acc = -potential_derivatives(model, pos, 1) - model.gamma * vel
    return np.stack([vel, acc], axis=-1)


def diffusion(model):
    """Constant diffusion matrix, shape ``(state_dim, noise_dim)``."""
    _check_model(model)
    if model.family == "linear":
        return model.D.copy()
    if model.family == "triad":
        return model.sigma * spd_sqrt(model.Lambda, name="Lambda")
    return np.array([[0.0], [np.sqrt(2.0 * model.gamma * model.kBT)]])


def _u0_derivative(y, order, eps):
    e1 = np.exp(-y)
    e2 = e1 * e1
    if order == 0:
        return eps * (e2 - 2.0 * e1 + 0.01 * y * y)
    if order == 1:
        return eps * (-2.0 * e2 + 2.0 * e1 + 0.02 * y)
    if order == 2:
        return eps * (4.0 * e2 - 2.0 * e1 + 0.02)
    if order == 3:
        return eps * (-8.0 * e2 + 2.0 * e1)
    return eps * (16.0 * e2 - 2.0 * e1)


def potential_derivatives(model, x, order):
    """``U^(order)(x) = a^order * U0^(order)(a (x - x0))`` for ``order`` in 0..4."""
    order = int(order)
    if not 0 <= order <= 4:
        raise UnsupportedError(f"potential derivative order must be 0..4, got {order}")
    y = model.a * (np.asarray(x, dtype=float) - model.x0)
    return model.a**order * _u0_derivative(y, order, model.epsilon)


def equilibrium_covariance(model):
    """Stationary covariance for the Gaussian families."""
    _check_model(model)
    if model.family == "linear":
        from .numerics import lyapunov_solve

        return lyapunov_solve(model.C, model.D @ model.D.T)
    if model.family == "triad":
        return model.sigma_eq2 * np.eye(3)
    raise UnsupportedError("the Langevin equilibrium is not Gaussian in x")


# ---------------------------------------------------------------- triad statistics


def triad_M0_M1_M2(model, sigma_eq2_data=None):
    """Exact ``M0, M1, M2`` of the mean response for a triad model.

    ``sigma_eq2_data`` is the equilibrium variance of the data the conjugate
    variable is built from; it defaults to the model's own, so that
    ``M0 = I``.
    """
    s_model = model.sigma_eq2
    s_data = s_model if sigma_eq2_data is None else float(sigma_eq2_data)
    ratio = s_model / s_data
    drift_lin = model.L - model.Lambda
    M0 = ratio * np.eye(3)
    M1 = ratio * drift_lin
    M2 = ratio * (drift_lin @ drift_lin - s_model * np.diag(model.B**2))
    return M0, M1, M2


def triad_quadratic_response_slope(model, sigma_eq2_data=None):
    """Slope at zero of the response of ``A = (x2 x3, x1 x3, x1 x2)``.

    Equals ``(s_model^2 / s_data) diag(B2 + B3, B1 + B3, B1 + B2)``. It is
    linear in the ``B_i`` and so fixes the sign that the mean response
    cannot.
    """
    s_model = model.sigma_eq2
    s_data = s_model if sigma_eq2_data is None else float(sigma_eq2_data)
    B1, B2, B3 = model.B
    return (s_model**2 / s_data) * np.diag([B2 + B3, B1 + B3, B1 + B2])


# ---------------------------------------------------------------- Langevin statistics


@dataclass
class LangevinEqMoments:
    """Equilibrium averages needed by the Langevin response formulas.

    Any field may be ``None`` when it was not computed; ``*_se`` fields
    hold standard errors (zero for quadrature).
    """

    E_Upp: float | None = None
    E_Upp2: float | None = None
    E_UpUppp: float | None = None
    E_U4: float | None = None
    E_x: float | None = None
    Var_x: float | None = None
    E_v2: float | None = None
    E_v4: float | None = None
    stderr: dict = field(default_factory=dict)
    n_samples: int | None = None

    def __post_init__(self):
        if self.Var_x is not None and not self.Var_x > 0:
            raise InvalidInputError(f"Var[x] must be positive, got {self.Var_x}")
        if self.E_v2 is not None and not self.E_v2 > 0:
            raise InvalidInputError(f"E[v^2] must be positive, got {self.E_v2}")
        if self.E_v4 is not None and self.E_v2 is not None:
            if self.E_v4 < self.E_v2**2 * (1 - 1e-12):
                raise InvalidInputError("E[v^4] < E[v^2]^2 violates Jensen")

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise IncompleteInputError(f"missing equilibrium moments: {missing}")
        return tuple(getattr(self, n) for n in names)


def langevin_M_formulas(model, eq_moments, kBT_data=None):
    """Derivatives ``M_0..M_5`` at ``t = 0`` of the velocity response.

    Parameters
    ----------
    model : LangevinModel
        Candidate parameters (``gamma``, ``kBT``).
    eq_moments : LangevinEqMoments
        Equilibrium averages of ``U''``, ``(U'')^2``, ``U' U'''`` and
        ``U''''`` under the candidate model.
    kBT_data : float, optional
        Temperature used in the conjugate variable ``v / kBT_data``.
        Defaults to ``model.kBT``, which gives ``M0 = 1``.

    Returns
    -------
    ndarray, shape (6,)
    """
    Upp, Upp2, UpUppp, U4 = eq_moments.require("E_Upp", "E_Upp2", "E_UpUppp", "E_U4")
    g = model.gamma
    kT = model.kBT
    ratio = kT / (kT if kBT_data is None else float(kBT_data))
    M = np.array(
        [
            1.0,
            -g,
            g**2 - Upp,
            2 * g * Upp - g**3,
            -3 * kT * U4 + Upp2 + 3 * UpUppp - 3 * g**2 * Upp + g**4,
            13 * g * kT * U4 - 3 * g * Upp2 - 13 * g * UpUppp + 4 * g**3 * Upp - g**5,
        ]
    )
    return ratio * M


def _gibbs_bracket(model, n_sd=40.0):
    # the retainer dominates far out: U ~ 0.01 eps (a(x-x0))^2
    width = n_sd * np.sqrt(model.kBT / (0.02 * model.epsilon))
    lo_y = -np.log(1.0 + 60.0 * model.kBT / model.epsilon) / 2.0 - 1.0
    return model.x0 + lo_y / model.a, model.x0 + width / model.a


def langevin_quadrature_moments(model):
    """Equilibrium moments of a Langevin model by adaptive quadrature.

    The position marginal is proportional to ``exp(-U(x) / kBT)`` and the
    velocity is ``N(0, kBT)``, so everything reduces to 1-D integrals.
    """
    lo, hi = _gibbs_bracket(model)
    u_min = potential_derivatives(model, model.x0, 0)
    kT = model.kBT

    def weight(x):
        return np.exp(-(potential_derivatives(model, x, 0) - u_min) / kT)

    breaks = [model.x0, model.x0 + 5.0 / model.a, model.x0 + 50.0 / model.a]
    breaks = [b for b in breaks if lo < b < hi]

    def expect(fn):
        val, _ = integrate.quad(lambda x: weight(x) * fn(x), lo, hi, points=breaks,
                                limit=1000, epsabs=0.0, epsrel=1e-12)
        return val

    Z = expect(lambda x: 1.0)
    U = lambda x, k: potential_derivatives(model, x, k)  # noqa: E731
    E_x = expect(lambda x: x) / Z
    return LangevinEqMoments(
        E_Upp=expect(lambda x: U(x, 2)) / Z,
        E_Upp2=expect(lambda x: U(x, 2) ** 2) / Z,
        E_UpUppp=expect(lambda x: U(x, 1) * U(x, 3)) / Z,
        E_U4=expect(lambda x: U(x, 4)) / Z,
        E_x=E_x,
        Var_x=expect(lambda x: (x - E_x) ** 2) / Z,
        E_v2=kT,
        E_v4=3.0 * kT**2,
        stderr={},
    )


# ---------------------------------------------------------------- observables


@dataclass(frozen=True)
class Observable:
    """Test function ``A(x)`` whose response is estimated.

    kinds
        ``identity``: ``A(x) = x``. ``velocity``: ``A = (0, v)``.
        ``quadratic_triad``: ``A = (x2 x3, x1 x3, x1 x2)``.
        ``velocity_rate``: ``A = (0, -U'(x) - gamma v)``, i.e. the generator
        applied to the velocity observable; its response is the time
        derivative of the velocity response. Requires ``model``.
    """

    kind: str
    output_dim: int
    model: object = None

    KINDS = ("identity", "velocity", "quadratic_triad", "velocity_rate")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise UnsupportedError(f"unknown observable kind {self.kind!r}")
        if self.kind == "velocity_rate" and not isinstance(self.model, LangevinModel):
            raise InvalidInputError("velocity_rate needs the Langevin model it belongs to")

    @classmethod
    def for_model(cls, kind, model):
        dims = {
            "identity": model.state_dim,
            "velocity": 2,
            "quadratic_triad": 3,
            "velocity_rate": 2,
        }
        if kind not in dims:
            raise UnsupportedError(f"unknown observable kind {kind!r}")
        obs = cls(kind, dims[kind], model if kind == "velocity_rate" else None)
        obs.check(model)
        return obs

    def check(self, model):
        """Raise unless this observable makes sense for ``model``."""
        ok = {
            "identity": self.output_dim == model.state_dim,
            "velocity": model.family == "langevin" and self.output_dim == 2,
            "quadratic_triad": model.family == "triad" and self.output_dim == 3,
            "velocity_rate": model.family == "langevin" and self.output_dim == 2,
        }[self.kind]
        if not ok:
            raise InvalidInputError(
                f"observable {self.kind!r} (dim {self.output_dim}) does not fit "
                f"a {model.family} model"
            )

    def __call__(self, states):
        states = np.asarray(states, dtype=float)
        if self.kind == "identity":
            return states
        if self.kind == "velocity":
            out = np.zeros_like(states)
            out[..., 1] = states[..., 1]
            return out
        if self.kind == "quadratic_triad":
            x1, x2, x3 = states[..., 0], states[..., 1], states[..., 2]
            return np.stack([x2 * x3, x1 * x3, x1 * x2], axis=-1)
        m = self.model
        out = np.zeros_like(states)
        out[..., 1] = -potential_derivatives(m, states[..., 0], 1) - m.gamma * states[..., 1]
        return out

    def to_dict(self):
        return {"kind": self.kind, "output_dim": self.output_dim}


# ---------------------------------------------------------------- serialization


def model_to_dict(model):
    """JSON-ready dictionary; matrices are nested row-major lists."""
    _check_model(model)
    out = {"family": model.family}
    for f in fields(model):
        value = getattr(model, f.name)
        out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
    return out


def model_from_dict(data):
    """Inverse of :func:`model_to_dict`; raises ``InvalidInputError`` on bad fields."""
    if not isinstance(data, dict) or "family" not in data:
        raise InvalidInputError("model document needs a 'family' field")
    family = data["family"]
    if family not in _FAMILIES:
        raise UnsupportedError(f"unknown model family {family!r}")
    cls = _FAMILIES[family]
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names - {"family", "state_dim"}
    if unknown:
        raise InvalidInputError(f"unknown fields for {family} model: {sorted(unknown)}")
    if family == "linear":
        missing = names - set(data)
        if missing:
            raise InvalidInputError(f"linear model is missing fields: {sorted(missing)}")
    kwargs = {k: v for k, v in data.items() if k in names}
    model = cls(**kwargs)
    if "state_dim" in data and int(data["state_dim"]) != model.state_dim:
        raise InvalidInputError(
            f"state_dim {data['state_dim']} does not match {family} model "
            f"({model.state_dim})"
        )
    return model


def dumps(model, **kwargs):
    doc = model_to_dict(model)
    doc["state_dim"] = model.state_dim
    return json.dumps(doc, **kwargs)


def loads(text):
    return model_from_dict(json.loads(text))
