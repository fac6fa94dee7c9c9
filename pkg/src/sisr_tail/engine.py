"""Sequential importance sampling with resampling (SISR).

Sampling uses the nominal law at every stage, so the likelihood factor
``log_L`` stays zero; it is kept so that ``f_n = L * 1{event}`` has the general
form.  A run of horizon n performs ``mutate`` at stages 1..n and resampling
at stages 1..n-1.  Survivors carry ``log_h`` such that
``m_t w_t^(i) = h_{t-1} / h_t`` at every selection step, and each particle
remembers the first-generation ancestor it descends from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DegenerateWeights, DomainError, PopulationCollapse
from .models import crossing_statistic, event_holds, sample_increment
from .schedules import ParticleView, WeightSchedule

LOG_UNDERFLOW = -700.0
PURPOSE_MUTATE = 0
PURPOSE_RESAMPLE = 1


def stage_rng(seed, subgroup, stage, purpose):
    """Counter-based generator keyed by ``(seed, subgroup, stage, purpose)``."""
    ss = np.random.SeedSequence([int(seed), int(subgroup), int(stage), int(purpose)])
    return np.random.Generator(np.random.Philox(ss))


def gamma(x):
    """``(x - floor x)(1 - x + floor x) / x`` for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("gamma is defined for x > 0")
    frac = x - np.floor(x)
    out = frac * (1.0 - frac) / x
    return float(out) if out.ndim == 0 else out


@dataclass
class SisrResult:
    estimate: float
    variance: float  # sigma-hat squared; the SE of the estimate is sqrt(variance / m)
    m: int
    m_final: int
    log_wbar: np.ndarray

    @property
    def se(self):
        return float(np.sqrt(self.variance / self.m))


class ParticleSystem:
    """Population of ``m`` particles evolving under a model and a schedule."""

    def __init__(self, m, model, schedule, event, resampler="bootstrap", seed=0, subgroup=0):
        if m < 2:
            raise ConfigError("need at least 2 particles", "m")
        if resampler not in ("bootstrap", "residual"):
            raise ConfigError(f"unknown resampler {resampler!r}", "resampler")
        self.m = int(m)
        self.model, self.schedule, self.event = model, schedule, event
        self.resampler = resampler
        self.seed, self.subgroup = seed, subgroup
        d = model.dim
        self.t = 0
        self.S = np.zeros((m, d))
        self.x = model.initial_states(m)
        self.log_h = np.zeros(m)
        self.log_L = np.zeros(m)
        self.origin = np.arange(m)
        self.live = np.ones(m, dtype=bool)
        self.crossed = np.zeros(m, dtype=bool)
        self.cache = np.zeros(m)
        self.corrections = np.zeros(m)
        self.log_w = None
        self.log_wbar = []
        self.counts = None
        self.parents = None

    @property
    def size(self):
        return len(self.x)

    def mutate(self):
        t = self.t + 1
        rng = stage_rng(self.seed, self.subgroup, t, PURPOSE_MUTATE)
        x_prev, S_prev = self.x, self.S
        self.x, xi = sample_increment(self.model, x_prev, rng)
        self.S = S_prev + xi
        view = ParticleView(xi, self.S, S_prev, self.x, x_prev, self.live, self.cache)
        self.log_w, self.cache = self.schedule.log_weight(view, t)
        if self.schedule.is_stopped:
            self.live = self.schedule.advance_stop(self.live, self.S, t)
        ev = self.event
        if ev.kind == "boundary_crossing" and ev.n0 <= t <= ev.n1:
            self.crossed |= crossing_statistic(ev, self.S, t) >= ev.c
        self.log_wbar.append(float(logsumexp(self.log_w) - np.log(self.size)))
        self.t = t
        return self

    def normalized_weights(self):
        lw = self.log_w
        if not np.all(np.isfinite(lw) | (lw == -np.inf)) or np.all(lw == -np.inf):
            raise DegenerateWeights(f"non-finite log weights at stage {self.t}")
        top = lw.max()
        e = np.exp(lw - top)
        total = e.sum()
        if np.log(total) + top < LOG_UNDERFLOW:
            raise DegenerateWeights(
                f"sum of weights underflows at stage {self.t} (log sum {np.log(total) + top:.1f})")
        return e, total

    def resample(self):
        if self.resampler == "bootstrap":
            return self.resample_bootstrap()
        return self.resample_residual()

    def resample_bootstrap(self):
        e, total = self.normalized_weights()
        mt = self.size
        scaled = mt * e / total
        rng = stage_rng(self.seed, self.subgroup, self.t, PURPOSE_RESAMPLE)
        u = rng.random(self.m)
        cdf = np.cumsum(e / total)
        cdf[-1] = 1.0
        parents = np.minimum(np.searchsorted(cdf, u, side="right"), mt - 1)
        counts = np.bincount(parents, minlength=mt)
        return self._select(parents, counts, scaled)

    def resample_residual(self):
        e, total = self.normalized_weights()
        mt = self.size
        scaled = mt * e / total
        rng = stage_rng(self.seed, self.subgroup, self.t, PURPOSE_RESAMPLE)
        u = rng.random(mt)
        base = np.floor(scaled)
        counts = (base + (u < scaled - base)).astype(np.int64)
        if counts.sum() == 0:
            raise PopulationCollapse(f"no offspring at stage {self.t}")
        parents = np.repeat(np.arange(mt), counts)
        return self._select(parents, counts, scaled)

    def _select(self, parents, counts, scaled):
        self.corrections += np.bincount(self.origin, weights=counts - scaled, minlength=self.m)
        self.counts = counts
        self.parents = parents
        self.log_h = self.log_h[parents] - np.log(scaled[parents])
        self.S = self.S[parents]
        self.x = self.x[parents]
        self.log_L = self.log_L[parents]
        self.origin = self.origin[parents]
        self.live = self.live[parents]
        self.crossed = self.crossed[parents]
        self.cache = self.cache[parents]
        self.log_w = self.log_w[parents]
        return self

    def terminal_values(self):
        """``f_n h_{n-1}`` per particle."""
        hit = event_holds(self.event, self.S, self.crossed)
        return np.where(hit, np.exp(self.log_L + self.log_h), 0.0)

    def estimate(self):
        return float(self.terminal_values().sum() / self.size)

    def variance_estimate(self, alpha=None):
        f = self.terminal_values()
        if alpha is None:
            alpha = float(f.sum() / self.size)
        A = np.bincount(self.origin, weights=f, minlength=self.m)
        return float(np.mean((A - (1.0 + self.corrections) * alpha) ** 2))


def run_sisr(model, event, schedule, m, resampler="bootstrap", seed=0, subgroup=0):
    """Run one particle system to the event horizon and return the estimates."""
    ps = ParticleSystem(m, model, schedule, event, resampler, seed, subgroup)
    n = event.horizon
    for t in range(1, n + 1):
        ps.mutate()
        if t < n:
            ps.resample()
    alpha = ps.estimate()
    return SisrResult(alpha, ps.variance_estimate(alpha), ps.m, ps.size,
                      np.array(ps.log_wbar))


def direct_mc(model, event, m, seed=0, subgroup=0):
    """Plain Monte Carlo: fraction of ``m`` nominal paths in the event and its SE."""
    if m < 2:
        raise ConfigError("need at least 2 paths", "m")
    ps = ParticleSystem(m, model, WeightSchedule("uniform"), event, "bootstrap", seed, subgroup)
    for _ in range(event.horizon):
        ps.mutate()
    hits = event_holds(event, ps.S, ps.crossed)
    a = float(hits.mean())
    return a, float(np.sqrt(a * (1 - a) / m))
