"""Increment laws, model states and terminal events.

Every sampler is vectorized over particles: it receives the current model
state of all particles (shape ``(m,)``), a ``numpy.random.Generator`` and
returns ``(new_state, xi)`` with ``xi`` of shape ``(m, d)``.  Each call draws
a fixed-size ``(m, draws)`` block, so particle ``i`` always consumes row ``i``
of the stage stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import exp_family as ef
from .errors import ConfigError, DomainError


@dataclass(frozen=True, eq=False)
class ModelSpec:
    kind: str  # "iid" or "markov_additive"
    dim: int
    sampler: Callable
    initial_state: float = 0.0
    cumulant: Optional[ef.CumulantModel] = None
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("iid", "markov_additive"):
            raise ConfigError(f"unknown model kind {self.kind!r}", "model.kind")

    def initial_states(self, m):
        return np.full(m, float(self.initial_state))


def sample_increment(model, state, rng):
    state = np.asarray(state, dtype=float)
    new_state, xi = model.sampler(state, rng)
    return new_state, np.asarray(xi, dtype=float).reshape(len(state), model.dim)


# ----------------------------------------------------------------- i.i.d. laws

def iid_walk(draw, dim, cumulant=None, name="iid", params=None):
    """Generic i.i.d. hook: ``draw(rng, m)`` returns ``m`` increments."""

    def sampler(state, rng):
        return state, np.asarray(draw(rng, len(state)), dtype=float).reshape(len(state), dim)

    return ModelSpec("iid", dim, sampler, 0.0, cumulant, name, dict(params or {}))


def gaussian_walk(mean=0.0, var=1.0):
    sd = float(np.sqrt(var))

    def draw(rng, m):
        return mean + sd * rng.standard_normal((m, 1))

    return iid_walk(draw, 1, ef.gaussian_cumulant(mean, var), "gaussian",
                    {"mean": mean, "var": var})


def two_point_walk(lo, hi, p):
    """Increments equal ``hi`` with probability p and ``lo`` otherwise."""

    def draw(rng, m):
        return np.where(rng.random((m, 1)) < p, float(hi), float(lo))

    return iid_walk(draw, 1, ef.two_point_cumulant(lo, hi, p), "two_point",
                    {"lo": lo, "hi": hi, "p": p})


def bernoulli_walk(p):
    spec = two_point_walk(0.0, 1.0, p)
    return ModelSpec("iid", 1, spec.sampler, 0.0, ef.bernoulli_cumulant(p),
                     "bernoulli", {"p": p})


def point_mass_walk(value=1.0):
    def draw(rng, m):
        return np.full((m, 1), float(value))

    return iid_walk(draw, 1, ef.point_mass_cumulant(value), "point_mass",
                    {"value": value})


def mixture_square_walk():
    """X is an equal mixture of N(1,1) and N(-1,1); the increment is (X, X^2)."""

    def draw(rng, m):
        u = rng.random(m)
        z = rng.standard_normal(m)
        x = np.where(u < 0.5, 1.0, -1.0) + z
        return np.column_stack([x, x * x])

    return iid_walk(draw, 2, ef.mixture_square_cumulant(), "mixture_square", {})


# ------------------------------------------------------ Markov additive model

def lambda_pw(x):
    """Identity on [-1, 1], slope one half outside, continuous and increasing."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 1, 0.5 * (x + 1), np.where(x < -1, 0.5 * (x - 1), x))


def nonlinear_ar_walk(x0=0.0, drift=lambda_pw):
    """``X_{t+1} = drift(X_t) + zeta``, observed increment ``xi = X_{t+1} + gamma``."""

    def sampler(state, rng):
        e = rng.standard_normal((len(state), 2))
        new = drift(state) + e[:, 0]
        return new, (new + e[:, 1])[:, None]

    return ModelSpec("markov_additive", 1, sampler, float(x0), None,
                     "nonlinear_ar", {"x0": x0})


def u_drift(x, theta):
    return np.exp(2.1 * theta * np.maximum(np.asarray(x, dtype=float), 0.0))


def log_u_drift(x, theta):
    return 2.1 * theta * np.maximum(np.asarray(x, dtype=float), 0.0)


# ----------------------------------------------------------------------- events

def g_identity(mu):
    return np.asarray(mu, dtype=float)[..., 0]


def g_self_normalized(mu):
    """``y / sqrt(v)``; ``-inf`` where ``v <= 0`` so those points never qualify."""
    mu = np.asarray(mu, dtype=float)
    y, v = mu[..., 0], mu[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        out = y / np.sqrt(np.where(v > 0, v, 1.0))
    return np.where(v > 0, out, -np.inf)


G_FUNCTIONS = {"identity": g_identity, "self_normalized": g_self_normalized}


@dataclass(frozen=True, eq=False)
class EventSpec:
    kind: str  # "fixed_horizon" or "boundary_crossing"
    g: Callable = g_identity
    b: float = 0.0
    n: int = 1
    c: float = 0.0
    n0: int = 1
    n1: int = 1

    def __post_init__(self):
        if self.kind == "fixed_horizon":
            if self.n < 1:
                raise ConfigError("horizon must be >= 1", "event.n")
        elif self.kind == "boundary_crossing":
            if not 1 <= self.n0 <= self.n1:
                raise ConfigError("need 1 <= n0 <= n1", "event.n0")
        else:
            raise ConfigError(f"unknown event kind {self.kind!r}", "event.kind")

    @property
    def horizon(self):
        return self.n if self.kind == "fixed_horizon" else self.n1

    def check_against(self, model):
        """Require ``b > g(mu0)`` when the increment mean is known."""
        if self.kind == "fixed_horizon" and model.cumulant is not None:
            g0 = float(self.g(model.cumulant.mean))
            if not self.b > g0:
                raise ConfigError(f"b={self.b} must exceed g(mean)={g0}", "event.b")


def crossing_statistic(event, S, t):
    """``t * g(S_t / t)`` for each row of ``S``."""
    return t * event.g(np.asarray(S, dtype=float) / t)


def event_holds(event, S, crossed=None):
    """Terminal indicator.

    For a fixed horizon ``S`` holds the sums ``S_n`` and the test is
    ``g(S_n/n) >= b``.  For boundary crossing the caller tracks whether some
    stage ``n0 <= t <= n1`` had ``t g(S_t/t) >= c`` and passes it as ``crossed``.
    """
    if event.kind == "fixed_horizon":
        val = event.g(np.asarray(S, dtype=float) / event.n)
        if np.any(np.isnan(val)):
            raise DomainError("g undefined at a terminal mean")
        return val >= event.b
    if crossed is None:
        raise ValueError("boundary-crossing events need the crossing record")
    return np.asarray(crossed, dtype=bool)


# ------------------------------------------------------------- drift diagnostic

@dataclass
class DriftReport:
    x: np.ndarray
    ratio: np.ndarray
    se: np.ndarray
    flagged: np.ndarray


def check_drift_numeric(model, theta, rho, grid, psi_theta, n_inner=100_000, seed=0):
    """MC estimate of ``E_x[exp(theta xi - psi) u(X_1)] / u(x)`` on a grid of x.

    Points with ``x > rho`` whose estimate exceeds one by more than three
    standard errors are flagged.
    """
    rng = np.random.default_rng(seed)
    grid = np.asarray(grid, dtype=float)
    ratio = np.empty_like(grid)
    se = np.empty_like(grid)
    for k, x in enumerate(grid):
        state = np.full(n_inner, x)
        new, xi = sample_increment(model, state, rng)
        logv = theta * xi[:, 0] - psi_theta + log_u_drift(new, theta) - log_u_drift(x, theta)
        v = np.exp(logv)
        ratio[k] = v.mean()
        se[k] = v.std(ddof=1) / np.sqrt(n_inner)
    flagged = (grid > rho) & (ratio > 1 + 3 * se)
    return DriftReport(grid, ratio, se, flagged)
