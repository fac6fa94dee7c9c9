"""Perron-eigenvalue approximation of the cumulant of a Markov additive walk.

The modulated walk of the nonlinear AR(1) model is replaced by a finite-state
chain on a uniform grid.  The log of the Perron root of the tilted matrix
``(exp(theta x_j) p_ij)`` approximates the cumulant of the state part of the
increment; the Gaussian observation noise adds ``theta^2 / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import BracketError, NonConvergence

POWER_RTOL = 1e-12
POWER_MAXITER = 100_000
SCAN_GRID = np.round(np.arange(1, 41) * 0.05, 10)


@dataclass(frozen=True, eq=False)
class DiscreteChain:
    states: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        P = self.transition
        if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != len(self.states):
            raise ValueError("transition must be square and match the state grid")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to one")

    @property
    def n_states(self):
        return len(self.states)


def gaussian_ar_chain(states, drift):
    """Chain with ``p_ij`` proportional to ``exp(-(x_j - drift(x_i))^2 / 2)``."""
    x = np.asarray(states, dtype=float)
    z = -0.5 * (x[None, :] - drift(x)[:, None]) ** 2
    z -= z.max(axis=1, keepdims=True)
    P = np.exp(z)
    P /= P.sum(axis=1, keepdims=True)
    return DiscreteChain(x, P)


def discretize_example5(n_states=1000, offset=-2.505, step=0.01, drift=None):
    """Grid ``x_i = i * step + offset`` for i = 1..n_states, AR drift ``lambda_pw``."""
    from .models import lambda_pw

    if n_states < 2 or step <= 0:
        raise ValueError("need n_states >= 2 and step > 0")
    x = np.arange(1, n_states + 1) * step + offset
    return gaussian_ar_chain(x, lambda_pw if drift is None else drift)


def _tilted(chain, theta):
    shift = theta * chain.states
    top = shift.max()
    return chain.transition * np.exp(shift - top)[None, :], top


def _power(M, v0=None):
    v = np.ones(M.shape[0]) if v0 is None else np.array(v0, dtype=float)
    v /= v.max()
    lam_old = np.nan
    for _ in range(POWER_MAXITER):
        y = M @ v
        lam = y.max()
        v = y / lam
        if abs(lam - lam_old) <= POWER_RTOL * lam:
            return lam, v
        lam_old = lam
    raise NonConvergence(f"power iteration stalled after {POWER_MAXITER} iterations")


def perron(chain, theta, v0=None):
    """``(log Perron root, right Perron vector)`` of the tilted matrix."""
    if chain.n_states == 1:
        return float(theta * chain.states[0]), np.ones(1)
    A, top = _tilted(chain, theta)
    lam, v = _power(A, v0)
    return float(np.log(lam) + top), v


def log_perron(chain, theta):
    return perron(chain, theta)[0]


def log_perron_slope(chain, theta):
    """Derivative in theta of the log Perron root.

    With ``dA/dtheta = A diag(x)`` and left/right Perron vectors l, r, the
    derivative ``l' A diag(x) r / (lambda l' r)`` reduces to
    ``sum_j l_j x_j r_j / sum_j l_j r_j``.
    """
    if chain.n_states == 1:
        return float(chain.states[0])
    A, _ = _tilted(chain, theta)
    _, r = _power(A)
    _, l = _power(A.T)
    return float(np.dot(l * chain.states, r) / np.dot(l, r))


def psi_markov(chain, theta):
    """Cumulant of ``xi = X + gamma`` with standard normal observation noise."""
    return 0.5 * theta ** 2 + log_perron(chain, theta)


def psi_markov_slope(chain, theta):
    return theta + log_perron_slope(chain, theta)


def solve_tilt(chain, slope, equation="mean"):
    """Positive tilt for the level ``slope``.

    ``equation="mean"`` solves ``psi'(theta) = slope``, the tilt whose mean
    increment equals the level.  ``equation="chord"`` solves
    ``psi(theta) = slope * theta`` away from the trivial root at zero.
    Both scan ``theta = 0.05, 0.10, ..., 2.00`` for a sign change and then
    refine with Brent's method.
    """
    if equation == "mean":
        def f(t):
            return psi_markov_slope(chain, t) - slope
    elif equation == "chord":
        def f(t):
            return psi_markov(chain, t) - slope * t
    else:
        raise ValueError(f"unknown equation {equation!r}")

    prev_t, prev_f = None, None
    for t in SCAN_GRID:
        ft = f(t)
        if prev_f is not None and prev_f < 0 <= ft:
            return brentq(f, prev_t, t, xtol=1e-12, rtol=4 * np.finfo(float).eps)
        prev_t, prev_f = t, ft
    raise BracketError(f"no positive root for slope={slope} on (0.05, 2.0]")
