"""Experiment orchestration: configuration, subgroup runs, direct MC, reports."""

from __future__ import annotations

import copy
import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import exp_family as ef
from . import models as md
from . import schedules as sc
from . import spectral
from .engine import direct_mc, run_sisr
from .errors import ConfigError, SisrError

SCHEMA_VERSION = 1
DIRECT_SUBGROUP = 2 ** 31
CSV_HEADER = ["method", "n", "theta", "estimate", "se", "m", "k", "r", "seed", "seconds"]

_TOP_FIELDS = {"schema_version", "label", "model", "event", "schedule", "resampler",
               "k", "r", "m", "seed", "direct_mc"}
_MODEL_FIELDS = {
    "gaussian": {"mean", "var"},
    "bernoulli": {"p"},
    "two_point": {"lo", "hi", "p"},
    "point_mass": {"value"},
    "mixture_square": set(),
    "nonlinear_ar": {"x0"},
}
_EVENT_FIELDS = {
    "fixed_horizon": {"g", "b", "n"},
    "boundary_crossing": {"g", "c", "n0", "n1"},
}
_SCHEDULE_FIELDS = {
    "uniform": set(),
    "fixed_tilt": {"theta"},
    "adaptive_tilt": {"I"},
    "stopped_fixed": {"theta"},
    "stopped_adaptive": {"I"},
    "drift_weighted": {"theta"},
}


# ------------------------------------------------------------------ validation

def _require(d, key, where):
    if key not in d:
        raise ConfigError("missing required field", f"{where}{key}")
    return d[key]


def _section(doc, key):
    v = _require(doc, key, "")
    if not isinstance(v, dict):
        raise ConfigError("expected a JSON object", key)
    return dict(v)


def _no_extra(d, allowed, where):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field(s) {extra}", where.rstrip(".") or "config")


def _number(v, name, integer=False, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError("expected a number", name)
    if integer and (not isinstance(v, int)):
        raise ConfigError("expected an integer", name)
    if not math.isfinite(v):
        raise ConfigError("expected a finite number", name)
    if positive and v <= 0:
        raise ConfigError("must be positive", name)
    return v


@dataclass
class ExperimentConfig:
    """Validated single-run configuration.  ``raw`` keeps the parsed JSON."""

    raw: dict
    label: str
    model: dict
    event: dict
    schedule: dict
    resampler: str
    k: int
    r: int
    seed: int
    direct: bool

    @property
    def m(self):
        return self.k * self.r

    @property
    def n(self):
        ev = self.event
        return ev["n"] if ev["kind"] == "fixed_horizon" else ev["n1"]


def parse_config(doc):
    """Validate a config mapping and return an :class:`ExperimentConfig`."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _no_extra(doc, _TOP_FIELDS, "")
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported version {version!r}", "schema_version")

    model = _section(doc, "model")
    name = _require(model, "name", "model.")
    if name not in _MODEL_FIELDS:
        raise ConfigError(f"unknown model {name!r}", "model.name")
    _no_extra(model, _MODEL_FIELDS[name] | {"name"}, "model.")
    for key in _MODEL_FIELDS[name]:
        if key in model:
            _number(model[key], f"model.{key}")
    if name in ("bernoulli", "two_point"):
        p = _number(_require(model, "p", "model."), "model.p")
        if not 0 < p < 1:
            raise ConfigError("must lie in (0, 1)", "model.p")
    if name == "two_point":
        _require(model, "lo", "model.")
        _require(model, "hi", "model.")
    if name == "gaussian" and "var" in model:
        _number(model["var"], "model.var", positive=True)

    event = _section(doc, "event")
    kind = _require(event, "kind", "event.")
    if kind not in _EVENT_FIELDS:
        raise ConfigError(f"unknown event kind {kind!r}", "event.kind")
    _no_extra(event, _EVENT_FIELDS[kind] | {"kind"}, "event.")
    event.setdefault("g", "identity")
    if event["g"] not in md.G_FUNCTIONS:
        raise ConfigError(f"unknown g {event['g']!r}", "event.g")
    if kind == "fixed_horizon":
        _number(_require(event, "b", "event."), "event.b")
        _number(_require(event, "n", "event."), "event.n", integer=True, positive=True)
    else:
        _number(_require(event, "c", "event."), "event.c")
        n0 = _number(_require(event, "n0", "event."), "event.n0", integer=True, positive=True)
        n1 = _number(_require(event, "n1", "event."), "event.n1", integer=True, positive=True)
        if n0 > n1:
            raise ConfigError("n0 must not exceed n1", "event.n0")
    if event["g"] == "self_normalized" and name != "mixture_square":
        raise ConfigError("self_normalized g needs a two-dimensional increment", "event.g")

    sched = _section(doc, "schedule") if "schedule" in doc else {"kind": "uniform"}
    skind = _require(sched, "kind", "schedule.")
    if skind not in _SCHEDULE_FIELDS:
        raise ConfigError(f"unknown schedule {skind!r}", "schedule.kind")
    _no_extra(sched, _SCHEDULE_FIELDS[skind] | {"kind"}, "schedule.")
    for key in _SCHEDULE_FIELDS[skind]:
        v = sched.setdefault(key, "auto")
        if v != "auto":
            if isinstance(v, list):
                for i, x in enumerate(v):
                    _number(x, f"schedule.{key}[{i}]")
            else:
                _number(v, f"schedule.{key}")
    if skind.startswith("stopped") and kind != "boundary_crossing":
        raise ConfigError("stopped schedules need a boundary_crossing event", "schedule.kind")
    if skind == "drift_weighted" and name != "nonlinear_ar":
        raise ConfigError("drift weights apply to the nonlinear_ar model", "schedule.kind")

    resampler = doc.get("resampler", "bootstrap")
    if resampler not in ("bootstrap", "residual"):
        raise ConfigError(f"unknown resampler {resampler!r}", "resampler")
    k = _number(_require(doc, "k", ""), "k", integer=True)
    r = _number(_require(doc, "r", ""), "r", integer=True)
    if k < 2:
        raise ConfigError("subgroup size must be >= 2", "k")
    if r < 2:
        raise ConfigError("need at least 2 subgroups for a standard error", "r")
    if "m" in doc and doc["m"] != k * r:
        raise ConfigError(f"m={doc['m']} differs from k*r={k * r}", "m")
    seed = _require(doc, "seed", "")
    _number(seed, "seed", integer=True)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("must be an unsigned 64-bit integer", "seed")
    direct = doc.get("direct_mc", False)
    if not isinstance(direct, bool):
        raise ConfigError("expected true or false", "direct_mc")
    label = doc.get("label", "")
    if not isinstance(label, str):
        raise ConfigError("expected a string", "label")
    return ExperimentConfig(copy.deepcopy(doc), label, model, event, sched, resampler,
                            k, r, int(seed), direct)


def load_config(path):
    """Read a JSON file holding one config or ``{"runs": [...]}``."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    if isinstance(doc, dict) and "runs" in doc:
        _no_extra(doc, {"runs"}, "")
        if not isinstance(doc["runs"], list) or not doc["runs"]:
            raise ConfigError("expected a non-empty list", "runs")
        configs = []
        for i, run in enumerate(doc["runs"]):
            try:
                configs.append(parse_config(run))
            except ConfigError as exc:
                raise ConfigError(str(exc), f"runs[{i}]") from None
        return configs
    return [parse_config(doc)]


# ----------------------------------------------------------------- construction

def build_model(spec):
    name = spec["name"]
    if name == "gaussian":
        return md.gaussian_walk(spec.get("mean", 0.0), spec.get("var", 1.0))
    if name == "bernoulli":
        return md.bernoulli_walk(spec["p"])
    if name == "two_point":
        return md.two_point_walk(spec["lo"], spec["hi"], spec["p"])
    if name == "point_mass":
        return md.point_mass_walk(spec.get("value", 1.0))
    if name == "mixture_square":
        return md.mixture_square_walk()
    if name == "nonlinear_ar":
        return md.nonlinear_ar_walk(spec.get("x0", 0.0))
    raise ConfigError(f"unknown model {name!r}", "model.name")


def build_event(spec):
    g = md.G_FUNCTIONS[spec["g"]]
    if spec["kind"] == "fixed_horizon":
        return md.EventSpec("fixed_horizon", g, b=float(spec["b"]), n=int(spec["n"]))
    return md.EventSpec("boundary_crossing", g, c=float(spec["c"]),
                        n0=int(spec["n0"]), n1=int(spec["n1"]))


def _target_level(event):
    return event.b if event.kind == "fixed_horizon" else event.c / event.n0


def build_schedule(spec, model, event):
    """Resolve ``"auto"`` parameters and construct the schedule.

    Tilts default to the mean-matching tilt at the target level (fixed
    horizon), the positive root of psi (stopped fixed tilt), or the spectral
    tilt (nonlinear AR model).  Rate bounds default to the rate minimum over
    the target set.
    """
    kind = spec["kind"]
    cum = model.cumulant
    if kind == "uniform":
        return sc.uniform()
    if kind in ("adaptive_tilt", "stopped_adaptive"):
        if cum is None:
            raise ConfigError("adaptive weights need a closed-form cumulant", "schedule.kind")
        I = spec["I"]
        if I == "auto":
            I, _ = ef.compute_I(cum, event.g, _target_level(event))
        levelset = ef.LevelSet(cum, float(I))
        if kind == "adaptive_tilt":
            return sc.adaptive_tilt(levelset)
        return sc.stopped_adaptive(levelset, event)
    theta = spec["theta"]
    if kind == "drift_weighted":
        if theta == "auto":
            theta = spectral.solve_tilt(spectral.discretize_example5(), event.b)
        return sc.drift_weighted(float(theta))
    if cum is None:
        raise ConfigError("tilted weights need a closed-form cumulant", "schedule.kind")
    if theta == "auto":
        if kind == "stopped_fixed":
            theta = ef.theta_star(cum)
        elif model.dim == 1 and event.g is md.g_identity:
            theta = ef.theta_of_mu(cum, np.array([event.b]))
        else:
            raise ConfigError("cannot infer a tilt for this event; give theta", "schedule.theta")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (model.dim,):
        raise ConfigError(f"expected {model.dim} tilt component(s)", "schedule.theta")
    psi = float(np.asarray(cum.psi(theta)))
    if kind == "fixed_tilt":
        return sc.fixed_tilt(theta, psi)
    return sc.stopped_fixed(theta, psi, event)


# --------------------------------------------------------------------- running

@dataclass
class RunReport:
    label: str
    method: str
    n: int
    theta: Optional[float]
    estimate: float
    se: float
    subgroup_estimates: list
    m: int
    k: int
    r: int
    seed: int
    seconds: float
    direct_estimate: Optional[float] = None
    direct_se: Optional[float] = None
    variance_ratio: Optional[float] = None
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _schedule_theta(schedule):
    if schedule.theta is None or schedule.theta.size != 1:
        return None
    return float(schedule.theta[0])


def run_subgroups(model, event, schedule, k, r, resampler="bootstrap", seed=0, threads=1):
    """Run ``r`` independent systems of ``k`` particles.

    Returns ``(mean, se, estimates)`` with ``se = sd / sqrt(r)``.  The fold is
    over subgroup index, so results do not depend on ``threads``.
    """

    def one(i):
        try:
            return run_sisr(model, event, schedule, k, resampler, seed, i).estimate
        except SisrError as exc:
            raise type(exc)(f"subgroup {i}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            est = list(pool.map(one, range(r)))
    else:
        est = [one(i) for i in range(r)]
    est = np.array(est)
    mean = float(np.sum(est) / r)
    sd = float(np.sqrt(np.sum((est - mean) ** 2) / (r - 1)))
    return mean, sd / math.sqrt(r), est


def run_config(cfg, threads=1):
    """Run one configuration, optionally with a direct-MC companion."""
    model = build_model(cfg.model)
    event = build_event(cfg.event)
    event.check_against(model)
    schedule = build_schedule(cfg.schedule, model, event)
    t0 = time.perf_counter()
    mean, se, est = run_subgroups(model, event, schedule, cfg.k, cfg.r, cfg.resampler,
                                  cfg.seed, threads)
    report = RunReport(
        label=cfg.label, method=f"sisr-{cfg.resampler}", n=cfg.n,
        theta=_schedule_theta(schedule), estimate=mean, se=se,
        subgroup_estimates=[float(x) for x in est], m=cfg.m, k=cfg.k, r=cfg.r,
        seed=cfg.seed, seconds=time.perf_counter() - t0, config=cfg.raw)
    if cfg.direct:
        a, s = direct_mc(model, event, cfg.m, cfg.seed, DIRECT_SUBGROUP)
        report.direct_estimate, report.direct_se = a, s
        report.variance_ratio = variance_ratio(s, se)
    return report


def variance_ratio(se_direct, se_sisr):
    """``(se_direct / se_sisr)^2``, or None when direct MC saw no hits."""
    if se_direct == 0 or se_sisr == 0:
        return None
    return (se_direct / se_sisr) ** 2


def run_direct(cfg):
    model = build_model(cfg.model)
    event = build_event(cfg.event)
    t0 = time.perf_counter()
    a, s = direct_mc(model, event, cfg.m, cfg.seed, DIRECT_SUBGROUP)
    return RunReport(label=cfg.label, method="direct", n=cfg.n, theta=None, estimate=a,
                     se=s, subgroup_estimates=[], m=cfg.m, k=cfg.k, r=cfg.r,
                     seed=cfg.seed, seconds=time.perf_counter() - t0, config=cfg.raw)


# --------------------------------------------------------------------- presets

TABLE1_N = (15, 20, 25)
TABLE2_N = (15, 20, 25)
TABLE2_THETA = (0.1, 0.2, 0.273, 0.3, 0.4)


def table1_configs(seed=20080601, I="auto"):
    return [parse_config({
        "schema_version": SCHEMA_VERSION, "label": f"table1 n={n}",
        "model": {"name": "mixture_square"},
        "event": {"kind": "fixed_horizon", "g": "self_normalized", "b": 2 ** -0.5, "n": n},
        "schedule": {"kind": "adaptive_tilt", "I": I},
        "resampler": "bootstrap", "k": 100, "r": 100, "seed": seed, "direct_mc": True,
    }) for n in TABLE1_N]


def table2_configs(seed=20080602):
    out = []
    for n in TABLE2_N:
        for i, theta in enumerate(TABLE2_THETA):
            out.append(parse_config({
                "schema_version": SCHEMA_VERSION, "label": f"table2 n={n} theta={theta}",
                "model": {"name": "nonlinear_ar", "x0": 0.0},
                "event": {"kind": "fixed_horizon", "g": "identity", "b": 2.5, "n": n},
                "schedule": {"kind": "drift_weighted", "theta": theta},
                "resampler": "bootstrap", "k": 100, "r": 100, "seed": seed,
                "direct_mc": i == 0,
            }))
    return out


def oracle_configs(name, seed=1):
    if name == "gaussian":
        return [parse_config({
            "schema_version": SCHEMA_VERSION, "label": "gaussian oracle",
            "model": {"name": "gaussian", "mean": 0.0, "var": 1.0},
            "event": {"kind": "fixed_horizon", "g": "identity", "b": 0.8, "n": 25},
            "schedule": {"kind": "fixed_tilt", "theta": "auto"},
            "k": 100, "r": 100, "seed": seed, "direct_mc": False,
        })]
    if name == "binomial":
        return [parse_config({
            "schema_version": SCHEMA_VERSION, "label": "binomial oracle",
            "model": {"name": "bernoulli", "p": 0.3},
            "event": {"kind": "fixed_horizon", "g": "identity", "b": 0.875, "n": 8},
            "schedule": {"kind": "fixed_tilt", "theta": "auto"},
            "k": 100, "r": 100, "seed": seed, "direct_mc": True,
        })]
    raise ConfigError(f"unknown oracle {name!r}", "oracle")


def oracle_value(name):
    """Exact tail probability for the oracle presets."""
    from scipy.stats import binom, norm

    if name == "gaussian":
        return float(norm.sf(0.8 * math.sqrt(25)))
    if name == "binomial":
        return float(binom.sf(6, 8, 0.3))
    raise ConfigError(f"unknown oracle {name!r}", "oracle")


# --------------------------------------------------------------------- reports

def format_pm(mean, se):
    """``(a ± b) × 10^k`` with two decimals in the mantissa."""
    if mean == 0 and se == 0:
        return "0"
    scale = mean if mean > 0 else se
    e = int(math.floor(math.log10(scale)))
    f = 10.0 ** e
    return f"({mean / f:.2f} ± {se / f:.2f}) × 10^{e}"


def csv_rows(reports):
    rows = []
    for rep in reports:
        rows.append([rep.method, rep.n, "" if rep.theta is None else rep.theta,
                     repr(rep.estimate), repr(rep.se), rep.m, rep.k, rep.r, rep.seed,
                     f"{rep.seconds:.3f}"])
        if rep.direct_estimate is not None:
            rows.append(["direct", rep.n, "", repr(rep.direct_estimate), repr(rep.direct_se),
                         rep.m, "", "", rep.seed, ""])
    return rows


def console_table(reports):
    lines = [f"{'run':<28} {'n':>3} {'theta':>7}  {'estimate':<28} {'direct':<28} ratio"]
    for rep in reports:
        theta = "" if rep.theta is None else f"{rep.theta:g}"
        direct = ratio = ""
        if rep.direct_estimate is not None:
            direct = format_pm(rep.direct_estimate, rep.direct_se)
            ratio = "n/a" if rep.variance_ratio is None else f"{rep.variance_ratio:.1f}"
        lines.append(f"{rep.label or rep.method:<28} {rep.n:>3} {theta:>7}  "
                     f"{format_pm(rep.estimate, rep.se):<28} {direct:<28} {ratio}")
    return "\n".join(lines)


def write_outputs(reports, out_dir, stem="report"):
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, f"{stem}.json")
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(json_path, "w") as fh:
        json.dump({"schema_version": SCHEMA_VERSION,
                   "reports": [r.to_dict() for r in reports]}, fh, indent=2)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        w.writerows(csv_rows(reports))
    return json_path, csv_path


def run_experiment(configs, out_dir=None, threads=1, stem="report", echo=print):
    """Run configs in order, write JSON and CSV when ``out_dir`` is given."""
    reports = [run_config(cfg, threads) for cfg in configs]
    if out_dir is not None:
        write_outputs(reports, out_dir, stem)
    if echo is not None:
        echo(console_table(reports))
    return reports
