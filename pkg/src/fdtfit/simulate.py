"""Equilibrium trajectory generation.

Integrator
----------
The default scheme is the weak trapezoidal method (Anderson & Mattingly,
2011) with stage parameter ``theta = 1/2``. For ``dx = a(x) dt + b dW`` with
constant ``b`` one step of size ``h`` reads::

    y*      = y_n + a(y_n) h/2 + b sqrt(h/2) xi_1
    y_{n+1} = y*  + (2 a(y*) - a(y_n)) h/2 + b sqrt(h/2) xi_2

with independent standard normal vectors ``xi_1, xi_2``. In general the
second-stage noise amplitude is ``sqrt(2 b b^T(y*) - b b^T(y_n))``; with
constant diffusion this has the same law as ``b``, so ``b`` is used
directly. On linear drifts the deterministic part reproduces
``exp(C h)`` to second order.

``euler_maruyama_oracle`` runs the explicit Euler-Maruyama scheme with the
same bookkeeping. It exists to cross-check stationary moments.

Random numbers
--------------
Chain ``c`` of a run with seed ``s`` draws from
``numpy.random.PCG64(numpy.random.SeedSequence(s, spawn_key=(c,)))``,
i.e. ``SeedSequence(s).spawn(n)[c]``. Each chain first draws its
equilibrium initial state (if requested) and then the integration noise in
fixed chunks of ``NOISE_CHUNK`` steps, so the output depends only on
``(model, config, c)`` and not on scheduling.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from .exceptions import BlowUpError, InvalidInputError
from .models import (
    LangevinModel,
    _gibbs_bracket,
    diffusion,
    equilibrium_covariance,
    model_to_dict,
    potential_derivatives,
)

__all__ = [
    "SimConfig",
    "Trajectory",
    "integrate",
    "ensemble",
    "euler_maruyama_oracle",
    "chain_rng",
    "model_hash",
]

NOISE_CHUNK = 1 << 16
SCHEMES = ("weak_trapezoidal", "euler_maruyama")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``burn_in_steps=None`` means 10% of ``n_steps``. ``initial_state`` is
    either a state vector or the string ``"equilibrium-draw"``.
    """

    dt: float
    n_steps: int
    subsample_stride: int = 1
    burn_in_steps: int | None = None
    seed: int = 0
    n_chains: int = 1
    initial_state: object = "equilibrium-draw"

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidInputError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "dt", float(self.dt))
        for name in ("n_steps", "subsample_stride", "n_chains"):
            value = int(getattr(self, name))
            if value < 1:
                raise InvalidInputError(f"{name} must be >= 1, got {value}")
            object.__setattr__(self, name, value)
        burn = self.n_steps // 10 if self.burn_in_steps is None else int(self.burn_in_steps)
        if burn < 0:
            raise InvalidInputError("burn_in_steps must be >= 0")
        if self.n_steps <= burn:
            raise InvalidInputError("n_steps must exceed burn_in_steps")
        object.__setattr__(self, "burn_in_steps", burn)
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", seed)
        init = self.initial_state
        if isinstance(init, str):
            if init != "equilibrium-draw":
                raise InvalidInputError(f"unknown initial_state {init!r}")
        else:
            init = tuple(float(v) for v in np.ravel(init))
            object.__setattr__(self, "initial_state", init)

    @property
    def n_retained(self):
        return (self.n_steps - self.burn_in_steps) // self.subsample_stride

    @property
    def dt_effective(self):
        return self.dt * self.subsample_stride

    def replace(self, **changes):
        values = asdict(self)
        values.update(changes)
        return SimConfig(**values)

    def to_dict(self):
        d = asdict(self)
        if not isinstance(d["initial_state"], str):
            d["initial_state"] = list(d["initial_state"])
        return d


@dataclass
class Trajectory:
    """Retained equilibrium samples of one chain.

    ``states[k]`` is the state at time ``(burn_in + (k + 1) * stride) * dt``.
    """

    states: np.ndarray
    dt_effective: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim == 1:
            self.states = self.states[:, None]

    def __len__(self):
        return self.states.shape[0]

    @property
    def state_dim(self):
        return self.states.shape[1]

    @property
    def times(self):
        return self.dt_effective * np.arange(1, len(self) + 1)

    def save(self, path):
        """Write ``<path>.npy`` (float64 states) and ``<path>.json`` (metadata)."""
        path = os.fspath(path)
        base = path[:-4] if path.endswith(".npy") else path
        np.save(base + ".npy", self.states)
        sidecar = {"dt_effective": self.dt_effective, "shape": list(self.states.shape),
                   "dtype": "float64", "layout": "row-major, one row per sample",
                   "meta": self.meta}
        with open(base + ".json", "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
        return base + ".npy", base + ".json"

    @classmethod
    def load(cls, path):
        path = os.fspath(path)
        base = path[:-4] if path.endswith((".npy", ".csv")) else path
        base = base[:-5] if base.endswith(".json") else base
        states = np.load(base + ".npy")
        with open(base + ".json") as fh:
            sidecar = json.load(fh)
        return cls(states, float(sidecar["dt_effective"]), sidecar.get("meta", {}))

    def to_csv(self, path):
        """One row per retained sample: ``t, x_1, ..., x_n``."""
        header = "t," + ",".join(f"x{i + 1}" for i in range(self.state_dim))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def model_hash(model):
    """SHA-256 of the model's canonical JSON form."""
    text = json.dumps(model_to_dict(model), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def chain_rng(seed, chain):
    """Generator for chain ``chain`` of a run seeded with ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(chain),))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------- numba kernels
# Drift kernels share the signature (x, p, out) with the parameters packed in p.


@numba.njit(cache=True, nogil=True)
def _drift_linear(x, p, out):
    n = x.shape[0]
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += p[i * n + j] * x[j]
        out[i] = acc


@numba.njit(cache=True, nogil=True)
def _drift_triad(x, p, out):
    # p = (B1, B2, B3, (L - Lambda) row-major)
    out[0] = p[0] * x[1] * x[2]
    out[1] = p[1] * x[0] * x[2]
    out[2] = p[2] * x[0] * x[1]
    for i in range(3):
        out[i] += p[3 + 3 * i] * x[0] + p[4 + 3 * i] * x[1] + p[5 + 3 * i] * x[2]


@numba.njit(cache=True, nogil=True)
def _drift_langevin(x, p, out):
    # p = (epsilon, gamma, a, x0)
    a = p[2]
    y = a * (x[0] - p[3])
    e1 = np.exp(-y)
    du = a * p[0] * (-2.0 * e1 * e1 + 2.0 * e1 + 0.02 * y)
    out[0] = x[1]
    out[1] = -du - p[1] * x[1]


@numba.njit(cache=True, nogil=True)
def _advance(drift, x, p, bmat, dt, noise, scheme, out, out_pos, step0, burn, stride):
    """Integrate ``noise.shape[0]`` steps in place; return the next output slot.

    Returns ``-(step)`` when a non-finite state appears.
    """
    n = x.shape[0]
    d = bmat.shape[1]
    a0 = np.empty(n)
    a1 = np.empty(n)
    ys = np.empty(n)
    sq = np.sqrt(0.5 * dt) if scheme == 0 else np.sqrt(dt)
    for k in range(noise.shape[0]):
        step = step0 + k + 1
        drift(x, p, a0)
        if scheme == 0:
            for i in range(n):
                acc = 0.0
                for j in range(d):
                    acc += bmat[i, j] * noise[k, 0, j]
                ys[i] = x[i] + 0.5 * dt * a0[i] + sq * acc
            drift(ys, p, a1)
            for i in range(n):
                acc = 0.0
                for j in range(d):
                    acc += bmat[i, j] * noise[k, 1, j]
                x[i] = ys[i] + 0.5 * dt * (2.0 * a1[i] - a0[i]) + sq * acc
        else:
            for i in range(n):
                acc = 0.0
                for j in range(d):
                    acc += bmat[i, j] * noise[k, 0, j]
                x[i] = x[i] + dt * a0[i] + sq * acc
        for i in range(n):
            if not np.isfinite(x[i]):
                return -step
        if step > burn and (step - burn) % stride == 0:
            if out_pos < out.shape[0]:
                for i in range(n):
                    out[out_pos, i] = x[i]
            out_pos += 1
    return out_pos


def _packed(model):
    if model.family == "linear":
        return _drift_linear, np.ascontiguousarray(model.C, dtype=float).ravel()
    if model.family == "triad":
        lin = model.L - model.Lambda
        return _drift_triad, np.concatenate([model.B, lin.ravel()])
    return _drift_langevin, np.array([model.epsilon, model.gamma, model.a, model.x0])


def _sample_gibbs_position(model, rng, size=1):
    """Rejection sampling from ``exp(-U(x)/kBT)`` on the documented bracket."""
    lo, hi = _gibbs_bracket(model, n_sd=12.0)
    u_min = potential_derivatives(model, model.x0, 0)
    out = []
    while len(out) < size:
        cand = rng.uniform(lo, hi, size=256)
        accept = rng.uniform(size=256) < np.exp(
            -(potential_derivatives(model, cand, 0) - u_min) / model.kBT
        )
        out.extend(cand[accept].tolist())
    return np.array(out[:size])


def equilibrium_draw(model, rng):
    """One state drawn from the model's equilibrium distribution."""
    if isinstance(model, LangevinModel):
        x = _sample_gibbs_position(model, rng)[0]
        v = rng.normal(0.0, np.sqrt(model.kBT))
        return np.array([x, v])
    cov = equilibrium_covariance(model)
    return rng.multivariate_normal(np.zeros(model.state_dim), cov, method="cholesky")


def _run_chain(model, cfg, chain, scheme):
    if scheme not in SCHEMES:
        raise InvalidInputError(f"unknown scheme {scheme!r}")
    rng = chain_rng(cfg.seed, chain)
    if isinstance(cfg.initial_state, str):
        x = equilibrium_draw(model, rng)
    else:
        x = np.array(cfg.initial_state, dtype=float)
        if x.shape != (model.state_dim,):
            raise InvalidInputError(
                f"initial_state must have length {model.state_dim}, got {x.size}"
            )
    x = np.ascontiguousarray(x, dtype=float)
    drift_fn, params = _packed(model)
    bmat = np.ascontiguousarray(diffusion(model), dtype=float)
    n_stage = 2 if scheme == "weak_trapezoidal" else 1
    scheme_id = SCHEMES.index(scheme)
    out = np.empty((cfg.n_retained, model.state_dim))
    pos = 0
    step = 0
    while step < cfg.n_steps:
        k = min(NOISE_CHUNK, cfg.n_steps - step)
        noise = rng.standard_normal((k, n_stage, bmat.shape[1]))
        pos = _advance(drift_fn, x, params, bmat, cfg.dt, noise, scheme_id, out,
                       pos, step, cfg.burn_in_steps, cfg.subsample_stride)
        if pos < 0:
            raise BlowUpError(-pos, chain if cfg.n_chains > 1 else None)
        step += k
    meta = {
        "config": cfg.to_dict(),
        "model": model_to_dict(model),
        "model_hash": model_hash(model),
        "integrator": scheme,
        "chain": chain,
        "seed_rule": "PCG64(SeedSequence(seed, spawn_key=(chain,)))",
    }
    return Trajectory(out, cfg.dt_effective, meta)


def integrate(model, cfg, *, scheme="weak_trapezoidal"):
    """Simulate one equilibrium trajectory (chain 0) of ``model``.

    Stability is the caller's job; keep ``dt * ||Jacobian of drift||``
    below about 0.5.

    Raises
    ------
    BlowUpError
        If the state becomes non-finite; carries the step index.
    """
    return _run_chain(model, cfg, 0, scheme)


def euler_maruyama_oracle(model, cfg):
    """Same contract as :func:`integrate` with the Euler-Maruyama scheme."""
    return _run_chain(model, cfg, 0, "euler_maruyama")


def ensemble(model, cfg, *, scheme="weak_trapezoidal", threads=1):
    """``cfg.n_chains`` independent trajectories, returned in chain order.

    Chains may run on ``threads`` worker threads (the kernels release the
    GIL); the result does not depend on ``threads``.
    """
    chains = range(cfg.n_chains)
    if threads <= 1 or cfg.n_chains == 1:
        return [_run_chain(model, cfg, c, scheme) for c in chains]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(_run_chain, model, cfg, c, scheme) for c in chains]
        return [f.result() for f in futures]
