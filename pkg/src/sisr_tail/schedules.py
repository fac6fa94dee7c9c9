"""Resampling-weight schedules.

All schedules work in log space on whole populations.  ``log_weight`` gets a
:class:`ParticleView` for stage ``t`` and returns the log weights plus the
updated per-particle cache (the adaptive kinds keep the running exponent
``theta_hat' S - t psi(theta_hat)`` there so it travels with each lineage).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exp_family import LevelSet
from .models import EventSpec, crossing_statistic, log_u_drift

KINDS = ("uniform", "fixed_tilt", "adaptive_tilt", "stopped_fixed",
         "stopped_adaptive", "drift_weighted")


@dataclass
class ParticleView:
    """Population summaries available to a schedule at stage ``t``."""

    xi: np.ndarray        # (m, d) increment at stage t
    S: np.ndarray         # (m, d) running sum after stage t
    S_prev: np.ndarray    # (m, d)
    x: np.ndarray         # (m,) model state after stage t
    x_prev: np.ndarray    # (m,)
    live: np.ndarray      # (m,) bool, not stopped before stage t
    cache: np.ndarray     # (m,) schedule cache from stage t-1


@dataclass(frozen=True, eq=False)
class WeightSchedule:
    kind: str
    theta: Optional[np.ndarray] = None
    psi_theta: float = 0.0
    levelset: Optional[LevelSet] = None
    stopping: Optional[EventSpec] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind in ("fixed_tilt", "stopped_fixed", "drift_weighted") and self.theta is None:
            raise ValueError(f"{self.kind} needs a tilt theta")
        if self.kind in ("adaptive_tilt", "stopped_adaptive") and self.levelset is None:
            raise ValueError(f"{self.kind} needs a level set")
        if self.kind.startswith("stopped") and (
                self.stopping is None or self.stopping.kind != "boundary_crossing"):
            raise ValueError("stopped schedules need a boundary-crossing stopping rule")

    @property
    def is_stopped(self):
        return self.kind.startswith("stopped")

    def log_weight(self, view, t):
        m = len(view.x)
        cache = view.cache
        kind = self.kind
        if kind == "uniform":
            return np.zeros(m), cache
        if kind in ("fixed_tilt", "stopped_fixed", "drift_weighted"):
            lw = view.xi @ np.atleast_1d(self.theta) - self.psi_theta
            if kind == "drift_weighted":
                th = float(np.atleast_1d(self.theta)[0])
                lw = lw + (log_u_drift(view.x, th) - log_u_drift(view.x_prev, th))
            if kind == "stopped_fixed":
                lw = np.where(view.live, lw, 0.0)
            return lw, cache
        # adaptive kinds
        model = self.levelset.model
        if kind == "stopped_adaptive":
            idx = np.flatnonzero(view.live)
        else:
            idx = np.arange(m)
        new_cache = cache.copy()
        if idx.size:
            th = self.levelset.argmax(view.S[idx], t)
            new_cache[idx] = np.einsum("ij,ij->i", th, view.S[idx]) - t * model.psi(th)
        return new_cache - cache, new_cache

    def advance_stop(self, live, S, t):
        """Live flags after stage ``t``: stop at the first ``t >= n0`` with
        ``t g(S_t/t) >= c``, and at ``n1`` in any case."""
        ev = self.stopping
        if t >= ev.n1:
            return np.zeros_like(live)
        if t < ev.n0:
            return live.copy()
        return live & ~(crossing_statistic(ev, S, t) >= ev.c)


def uniform():
    return WeightSchedule("uniform")


def fixed_tilt(theta, psi_theta):
    return WeightSchedule("fixed_tilt", np.atleast_1d(np.asarray(theta, float)), float(psi_theta))


def adaptive_tilt(levelset):
    return WeightSchedule("adaptive_tilt", levelset=levelset)


def stopped_fixed(theta, psi_theta, stopping):
    return WeightSchedule("stopped_fixed", np.atleast_1d(np.asarray(theta, float)),
                          float(psi_theta), stopping=stopping)


def stopped_adaptive(levelset, stopping):
    return WeightSchedule("stopped_adaptive", levelset=levelset, stopping=stopping)


def drift_weighted(theta, psi_theta=0.0):
    """Tilt ``theta`` times the drift ratio ``u(X_t)/u(X_{t-1})``.

    ``psi_theta`` is a constant shift of every log weight and therefore has no
    effect on normalized weights or on the estimate.
    """
    return WeightSchedule("drift_weighted", np.atleast_1d(np.asarray(theta, float)),
                          float(psi_theta))
