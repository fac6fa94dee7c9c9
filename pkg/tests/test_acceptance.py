"""End-to-end acceptance checks; each test records a PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from scipy.stats import binom, norm

from sisr_tail import engine as en
from sisr_tail import exp_family as ef
from sisr_tail import harness
from sisr_tail import models as md
from sisr_tail import schedules as sc
from sisr_tail import spectral

TABLE1 = {15: (1.10e-3, 0.07e-3), 20: (1.9e-4, 0.2e-4), 25: (4.0e-5, 0.7e-5)}
TABLE2 = {15: (8.31e-4, 0.48e-4), 20: (2.42e-4, 0.19e-4), 25: (6.33e-5, 0.44e-5)}
BINOMIAL_EXACT = float(binom.sf(6, 8, 0.3))


def combined_check(rep, ref, ref_se):
    tol = 3 * math.hypot(ref_se, rep.se)
    return abs(rep.estimate - ref) <= tol, tol


@pytest.fixture(scope="module")
def table1_reports():
    return {cfg.n: harness.run_config(cfg) for cfg in harness.table1_configs()}


@pytest.fixture(scope="module")
def binomial_replicates():
    model = md.bernoulli_walk(0.3)
    ev = md.EventSpec("fixed_horizon", md.g_identity, b=0.875, n=8)
    sch = harness.build_schedule({"kind": "fixed_tilt", "theta": "auto"}, model, ev)
    out = {}
    for rs in ("bootstrap", "residual"):
        res = [en.run_sisr(model, ev, sch, 200, rs, seed=1000 + s) for s in range(500)]
        out[rs] = (np.array([r.estimate for r in res]),
                   np.array([r.variance / r.m for r in res]))
    return out


@pytest.mark.parametrize("n", [15, 20, 25])
def test_table1_reproduction(n, table1_reports, record):
    rep = table1_reports[n]
    ref, ref_se = TABLE1[n]
    ok, tol = combined_check(rep, ref, ref_se)
    fast = rep.seconds < 120
    assert record(1, ok and fast,
                  f"table 1 n={n}: {rep.estimate:.4e} ± {rep.se:.2e} vs {ref:.3e}, "
                  f"|diff|={abs(rep.estimate - ref):.2e} tol={tol:.2e}, {rep.seconds:.0f}s")


@pytest.mark.parametrize("n", [15, 20, 25])
def test_table2_reproduction(n, record):
    cfg = next(c for c in harness.table2_configs() if c.n == n and c.schedule["theta"] == 0.273)
    rep = harness.run_config(cfg)
    ref, ref_se = TABLE2[n]
    ok, tol = combined_check(rep, ref, ref_se)
    fast = rep.seconds < 120
    assert record(2, ok and fast,
                  f"table 2 n={n} theta=0.273: {rep.estimate:.4e} ± {rep.se:.2e} vs {ref:.3e}, "
                  f"|diff|={abs(rep.estimate - ref):.2e} tol={tol:.2e}, {rep.seconds:.0f}s")


def test_spectral_tilt(record):
    t0 = time.perf_counter()
    theta = spectral.solve_tilt(spectral.discretize_example5(1000, -2.505, 0.01), 2.5)
    secs = time.perf_counter() - t0
    ok = abs(theta - 0.273) <= 0.001 and secs < 30
    assert record(3, ok, f"solve_tilt = {theta:.5f} (target 0.273 ± 0.001), {secs:.1f}s")


def test_rate_minimum(record):
    model = md.mixture_square_walk().cumulant
    t0 = time.perf_counter()
    I, mu = ef.compute_I(model, md.g_self_normalized, 2 ** -0.5)
    secs = time.perf_counter() - t0
    dist = float(np.linalg.norm(mu - np.array([1.0, 2.0])))
    ok = abs(I - 0.324) <= 0.002 and dist <= 0.01 and secs < 5
    assert record(4, ok, f"I = {I:.5f} (target 0.324 ± 0.002) at mu* = ({mu[0]:.4f}, "
                         f"{mu[1]:.4f}), distance to (1,2) {dist:.4f} (max 0.01), {secs:.1f}s")


def test_gaussian_oracle(record):
    cfg = harness.oracle_configs("gaussian")[0]
    rep = harness.run_config(cfg)
    exact = float(norm.sf(4.0))
    ok = abs(rep.estimate - exact) <= 3 * rep.se and rep.seconds < 60
    assert record(5, ok, f"gaussian n=25 b=0.8: {rep.estimate:.4e} ± {rep.se:.2e} vs "
                         f"exact {exact:.4e}, {rep.seconds:.1f}s")


def test_binomial_oracle(binomial_replicates, record):
    t0 = time.perf_counter()
    rep = harness.run_config(harness.oracle_configs("binomial")[0])
    est, _ = binomial_replicates["bootstrap"]
    se_rep = est.std(ddof=1) / math.sqrt(len(est))
    ok_sisr = abs(rep.estimate - BINOMIAL_EXACT) <= 3 * rep.se
    ok_direct = abs(rep.direct_estimate - BINOMIAL_EXACT) <= 3 * rep.direct_se
    ok_unbiased = abs(est.mean() - BINOMIAL_EXACT) <= 3 * se_rep
    secs = time.perf_counter() - t0
    assert record(6, ok_sisr and ok_direct and ok_unbiased and secs < 120,
                  f"exact {BINOMIAL_EXACT:.4e}; SISR {rep.estimate:.4e} ± {rep.se:.1e}; "
                  f"direct {rep.direct_estimate:.4e} ± {rep.direct_se:.1e}; "
                  f"mean of {len(est)} replicates {est.mean():.4e} ± {se_rep:.1e}")


@pytest.mark.parametrize("resampler", ["bootstrap", "residual"])
def test_variance_estimator_consistency(resampler, binomial_replicates, record):
    est, pred = binomial_replicates[resampler]
    emp = est.var(ddof=1)
    rel = abs(pred.mean() / emp - 1)
    assert record(7, rel <= 0.25, f"{resampler}: mean sigma^2/m {pred.mean():.3e} vs "
                                  f"replicate variance {emp:.3e}, rel. error {rel:.3f} (max 0.25)")


def test_variance_ordering(record):
    model = md.gaussian_walk()
    ev = md.EventSpec("fixed_horizon", md.g_identity, b=0.8, n=15)
    sch = sc.fixed_tilt(0.8, 0.32)
    var = {}
    for rs in ("bootstrap", "residual"):
        est = [en.run_sisr(model, ev, sch, 1000, rs, seed=5000 + s).estimate for s in range(400)]
        var[rs] = np.var(est, ddof=1)
    ratio = var["residual"] / var["bootstrap"]
    assert record(8, ratio <= 1.15, f"Var residual / Var bootstrap = {ratio:.3f} over 400 "
                                    "replicates (max 1.15)")


def test_structural_invariants(record):
    failures = []
    gauss = md.gaussian_walk()
    ev = md.EventSpec("fixed_horizon", md.g_identity, b=0.8, n=6)

    ps = en.ParticleSystem(128, gauss, sc.fixed_tilt(0.8, 0.32), ev, seed=1)
    for _ in range(5):
        ps.mutate()
        h_prev = ps.log_h.copy()
        e, total = ps.normalized_weights()
        mw = ps.size * e / total
        ps.resample_bootstrap()
        if ps.counts.sum() != 128:
            failures.append("bootstrap offspring sum")
        if np.max(np.abs(np.log(mw[ps.parents]) - (h_prev[ps.parents] - ps.log_h))) > 1e-10:
            failures.append("h/w bookkeeping")

    ps = en.ParticleSystem(64, gauss, sc.uniform(), ev, "residual").mutate()
    snap = [a.tobytes() for a in (ps.S, ps.x, ps.log_h, ps.origin)]
    ps.resample_residual()
    if snap != [a.tobytes() for a in (ps.S, ps.x, ps.log_h, ps.origin)]:
        failures.append("residual no-op")

    cum = ef.mixture_square_cumulant()
    L = ef.LevelSet(cum, 0.33)
    sch = sc.adaptive_tilt(L)
    ps = en.ParticleSystem(16, md.mixture_square_walk(), sch,
                           md.EventSpec("fixed_horizon", md.g_self_normalized, b=0.7, n=10))
    total = np.zeros(16)
    for t in range(1, 9):
        ps.mutate()
        total += ps.log_w
        th = L.argmax(ps.S, t)
        exact = np.einsum("ij,ij->i", th, ps.S) - t * cum.psi(th)
        if np.max(np.abs(total - exact)) > 1e-10:
            failures.append("adaptive telescoping")
            break

    if en.gamma(3.0) != 0.0:
        failures.append("gamma at integer")
    for model in (ef.gaussian_cumulant(), ef.bernoulli_cumulant(0.3), cum):
        if abs(float(model.psi(np.zeros(model.dim)))) > 1e-10:
            failures.append(f"psi(0) {model.name}")
    if abs(spectral.log_perron(spectral.discretize_example5(), 0.0)) > 1e-10:
        failures.append("log_perron(0)")

    cfg = harness.oracle_configs("binomial")[0]
    a, b = harness.run_config(cfg, threads=1), harness.run_config(cfg, threads=3)
    if (a.subgroup_estimates, a.estimate, a.se) != (b.subgroup_estimates, b.estimate, b.se):
        failures.append("determinism under threads")
    assert record(9, not failures, "structural invariants" + (
        f": broken {failures}" if failures else " all hold"))


def test_variance_reduction_headline(table1_reports, record):
    rep = table1_reports[15]
    ratio = rep.variance_ratio
    ok = ratio is not None and ratio >= 8
    shown = "n/a" if ratio is None else f"{ratio:.2f}"
    assert record(10, ok, f"(se_direct / se_sisr)^2 at n=15 = {shown} (min 8); direct "
                          f"{rep.direct_estimate:.3e} ± {rep.direct_se:.2e}, SISR se {rep.se:.2e}")
