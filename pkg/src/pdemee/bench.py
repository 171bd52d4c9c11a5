"""Replication harness, efficiency sweeps and the simplified-setting
relative-efficiency formula with its Monte-Carlo check.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import logging
import time
import warnings

import numpy as np

from .core import build_proximal_outcomes, compute_weights
from .errors import ConfigError, NonConvergenceError, NumericError, SingularJacobianError
from .estimators import EstimatorSpec, Kind, fit
from .gee import GeeSpec, fit_gee
from .simgen import (GenerativeConfig, generate_simplified_trial, generate_trial,
                     replication_rng, true_parameters)

log = logging.getLogger(__name__)

FIT_FAILURES = (NonConvergenceError, SingularJacobianError, NumericError)
FAILED_FIT_WARN_FRACTION = 0.05


# default estimator line-ups for simulation reports

def standard_estimators(moderated=False):
    """pd-EMEE, EMEE, GEE.ind, GEE.exch with controls (1, Z)."""
    mods = (0, 1) if moderated else (0,)
    ctl = (0, 1)
    tag = "S=(1,Z)" if moderated else "S=1"
    return [
        EstimatorSpec(kind=Kind.PD_EMEE, moderator_cols=mods, control_cols=ctl,
                      label=f"pd-EMEE {tag}"),
        EstimatorSpec(kind=Kind.EMEE, moderator_cols=mods, control_cols=ctl,
                      label=f"EMEE {tag}"),
        GeeSpec("independent", moderator_cols=mods, control_cols=ctl, label=f"GEE.ind {tag}"),
        GeeSpec("exchangeable", moderator_cols=mods, control_cols=ctl, label=f"GEE.exch {tag}"),
    ]


def _fit_any(data, outcomes, spec, weight_cache):
    if isinstance(spec, GeeSpec):
        return fit_gee(data, outcomes, spec)
    key = (spec.numerator, spec.k, spec.moderator_cols)
    if key not in weight_cache:
        weight_cache[key] = compute_weights(data, outcomes, spec.numerator, k=spec.k,
                                            moderator_cols=spec.moderator_cols)
    return fit(data, outcomes, spec, weights=weight_cache[key])


def _replicate(args):
    gen_config, specs, rep = args
    data = generate_trial(gen_config, rep)
    outcomes = build_proximal_outcomes(data.sub_outcome, data.delta)
    cache = {}
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for spec in specs:
            try:
                f = _fit_any(data, outcomes, spec, cache)
            except FIT_FAILURES as exc:
                out.append(None)
                log.debug("replication %d, %s failed: %s", rep, spec.name, exc)
                continue
            se_u, ci_u = f.beta_interval(adjusted=False)
            se_a, ci_a = f.beta_interval(adjusted=True)
            out.append((f.beta_hat, se_u, ci_u, se_a, ci_a))
    return out


def _map(func, jobs, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(func, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    return [func(j) for j in jobs]


@dataclass
class SimulationReport:
    """Per-estimator, per-parameter replication summary.

    ``estimates[label]`` holds the raw ``[reps, p]`` estimates with NaN rows
    for failed fits so relative efficiencies can be recomputed.
    """

    records: list
    replications: int
    failed: dict
    wall_time: float
    estimates: dict = field(repr=False)
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def record(self, estimator, parameter):
        for r in self.records:
            if r["estimator"] == estimator and r["parameter"] == parameter:
                return r
        raise KeyError((estimator, parameter))

    def relative_efficiency(self, reference, improved, index=0):
        """Var(reference) / Var(improved) over replications where both converged."""
        x = self.estimates[reference][:, index]
        y = self.estimates[improved][:, index]
        ok = np.isfinite(x) & np.isfinite(y)
        return variance_ratio(x[ok], y[ok])

    def to_json(self):
        return {
            "replications": self.replications,
            "failed": self.failed,
            "wall_time": self.wall_time,
            "config": self.config,
            "warnings": self.warnings,
            "records": self.records,
        }


REPORT_COLUMNS = ("estimator", "parameter", "true", "n_ok", "Bias", "SD", "RMSE",
                  "CP.unadj", "CP.adj", "SE.unadj.median", "SE.adj.median")


def summarize_estimates(est, ci_u, ci_a, se_u, se_a, truth):
    """Metrics for one parameter; arrays are over successful replications."""
    m = est.size
    if m == 0:
        return {"n_ok": 0, "Bias": None, "SD": None, "RMSE": None, "CP.unadj": None,
                "CP.adj": None, "SE.unadj.median": None, "SE.adj.median": None}
    bias = float(est.mean() - truth)
    sd = float(est.std()) if m > 1 else None
    rmse = float(np.sqrt(np.mean((est - truth) ** 2)))
    cover_u = float(np.mean((ci_u[:, 0] <= truth) & (truth <= ci_u[:, 1])))
    cover_a = float(np.mean((ci_a[:, 0] <= truth) & (truth <= ci_a[:, 1])))
    return {"n_ok": int(m), "Bias": bias, "SD": sd, "RMSE": rmse, "CP.unadj": cover_u,
            "CP.adj": cover_a, "SE.unadj.median": float(np.median(se_u)),
            "SE.adj.median": float(np.median(se_a))}


def run_replications(gen_config, estimator_specs, reps, true_values=None, threads=1):
    """Fit every spec on ``reps`` simulated trials and summarize.

    ``true_values`` is a vector applied to every estimator, a dict keyed by
    estimator name, or None to use the generative model's oracle (marginal
    beta0 for one moderator, (0.1, 0.2) for two).
    """
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    specs = list(estimator_specs)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("estimator labels must be unique")
    start = time.perf_counter()
    results = _map(_replicate, [(gen_config, specs, r) for r in range(reps)], threads)
    wall = time.perf_counter() - start

    records, failed, estimates, notes = [], {}, {}, []
    for j, spec in enumerate(specs):
        p = len(spec.moderator_cols)
        truth = _truth_for(true_values, spec, gen_config, p)
        rows = [r[j] for r in results]
        ok = [r for r in rows if r is not None]
        failed[spec.name] = len(rows) - len(ok)
        est = np.full((reps, p), np.nan)
        for i, r in enumerate(rows):
            if r is not None:
                est[i] = r[0]
        estimates[spec.name] = est
        if failed[spec.name] > FAILED_FIT_WARN_FRACTION * reps:
            msg = f"{spec.name}: {failed[spec.name]} of {reps} fits failed"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        for k in range(p):
            if ok:
                b = np.array([r[0][k] for r in ok])
                ci_u = np.array([r[2][k] for r in ok])
                ci_a = np.array([r[4][k] for r in ok])
                se_u = np.array([r[1][k] for r in ok])
                se_a = np.array([r[3][k] for r in ok])
            else:
                b = ci_u = ci_a = se_u = se_a = np.empty((0,))
            rec = {"estimator": spec.name, "parameter": _param_name(spec, k),
                   "true": float(truth[k])}
            rec.update(summarize_estimates(b, ci_u.reshape(-1, 2), ci_a.reshape(-1, 2),
                                           se_u, se_a, truth[k]))
            records.append(rec)
    config = {"n": gen_config.n, "T": gen_config.T, "delta": gen_config.delta,
              "p_a": gen_config.p_a, "seed": gen_config.seed, "gamma": gen_config.gamma,
              "reps": reps, "se_type": "sandwich"}
    return SimulationReport(records=records, replications=reps, failed=failed, wall_time=wall,
                            estimates=estimates, config=config, warnings=notes)


def _param_name(spec, k):
    if len(spec.moderator_cols) == 1:
        return "beta0"
    return f"beta{k + 1}"


def _truth_for(true_values, spec, gen_config, p):
    if true_values is None:
        return true_parameters(gen_config, moderated=p == 2)
    if isinstance(true_values, dict):
        return np.atleast_1d(np.asarray(true_values[spec.name], dtype=float))
    return np.atleast_1d(np.asarray(true_values, dtype=float))


# relative efficiency

def variance_ratio(x, y):
    """``var(x) / var(y)`` with its leave-one-out jackknife standard error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    m = x.size
    if m < 3:
        raise ConfigError("need at least 3 paired replications for a variance ratio")
    vx, vy = x.var(ddof=1), y.var(ddof=1)
    if vy == 0:
        if vx == 0:
            return 1.0, 0.0
        return float("inf"), float("nan")
    ratio = vx / vy
    loo_x = _loo_var(x)
    loo_y = _loo_var(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        loo = np.where(loo_y > 0, loo_x / loo_y, ratio)
    se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean()) ** 2))
    return float(ratio), float(se)


def _loo_var(x):
    m = x.size
    s1, s2 = x.sum(), (x ** 2).sum()
    r1 = s1 - x
    r2 = s2 - x ** 2
    return np.maximum(r2 - r1 ** 2 / (m - 1), 0.0) / (m - 2)


@dataclass
class EfficiencyCurve:
    axis: str
    points: list   # (x, rel_eff, mc_se)
    replications: int = 0
    failed: int = 0

    def to_rows(self):
        return [{"axis": self.axis, "x": x, "rel_eff": r, "mc_se": s} for x, r, s in self.points]


def _pair_for(axis, x, base):
    ctl = (0, 1)
    if axis == "K":
        k = int(x)
        return (base,
                EstimatorSpec(kind=Kind.REF_REGIME_EMEE, k=k, control_cols=ctl, label="EMEE"),
                EstimatorSpec(kind=Kind.REF_REGIME, k=k, control_cols=ctl, label="pd-EMEE"))
    if axis == "Delta":
        cfg = base.with_(delta=int(x))
    elif axis == "RandProb":
        cfg = base.with_(p_a=float(x))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    return (cfg, EstimatorSpec(kind=Kind.EMEE, control_cols=ctl, label="EMEE"),
            EstimatorSpec(kind=Kind.PD_EMEE, control_cols=ctl, label="pd-EMEE"))


def efficiency_sweep(axis, grid, base_config, reps, threads=1):
    """Relative efficiency Var(EMEE)/Var(pd-EMEE) of the marginal effect along one axis.

    ``axis`` is ``"Delta"``, ``"RandProb"`` or ``"K"`` (reference-regime
    horizon at ``base_config.delta``).  Each grid point reuses the base seed, so
    replications at different grid points share random streams.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    points, failed = [], 0
    for x in grid:
        cfg, emee, pd = _pair_for(axis, x, base_config)
        report = run_replications(cfg, [emee, pd], reps, true_values=[0.0], threads=threads)
        failed += sum(report.failed.values())
        re, se = report.relative_efficiency("EMEE", "pd-EMEE")
        points.append((x, re, se))
        log.info("sweep %s=%s: RE=%.3f (se %.3f)", axis, x, re, se)
    return EfficiencyCurve(axis=axis, points=points, replications=reps, failed=failed)


# simplified one-decision setting

def analytic_relative_efficiency(p, q, delta):
    """Asymptotic Var(EMEE)/Var(pd-EMEE) in the i.i.d. one-decision setting."""
    if not (0 < p < 1 and 0 < q < 1) or delta < 1:
        raise ConfigError("need p, q in (0, 1) and delta >= 1")
    if delta == 1:
        return 1.0
    hit = 1 - (1 - q) ** delta
    if p == q:
        return hit / (q * delta * (1 - p) ** (delta - 1))
    return hit / ((1 - p) ** delta - (1 - q) ** delta) * (q - p) / q


def simplified_estimates(data, p):
    """Closed-form roots of the simplified pd-EMEE and EMEE equations at t = 0.

    With the nuisance part fixed at zero and S = 1 the equation
    ``sum exp(-A b) Y W (A - p) = 0`` gives
    ``exp(b) = (1 - p) sum_{A=1} Y W / (p sum_{A=0} Y W)``.
    Weights are formed directly from the window: the factor for offset ``s``
    is ``1(A_s = 0) / (1 - p)``, kept by the per-decision weight only while no
    event has been seen.  Returns ``(beta_pd, beta_emee)``; NaN when a sum
    vanishes.
    """
    d = data.delta
    window = data.sub_outcome[:, 1: d + 1]
    y = window.max(axis=1)
    seen = np.concatenate([np.zeros((data.n, 1)), np.maximum.accumulate(window, axis=1)[:, :-1]],
                          axis=1)[:, 1:]          # event before offset s, s = 1..d-1
    factor = (data.treatment[:, 1:d] == 0) / (1 - p)
    w_full = factor.prod(axis=1)
    w_pd = np.where(seen == 1, 1.0, factor).prod(axis=1)
    a = data.treatment[:, 0]
    out = []
    for w in (w_pd, w_full):
        num = (1 - p) * np.sum(y * w * (a == 1))
        den = p * np.sum(y * w * (a == 0))
        out.append(np.log(num / den) if num > 0 and den > 0 else np.nan)
    return tuple(out)


def simplified_relative_efficiency_mc(p, q, delta, n=4000, reps=1000, seed=0):
    """Monte-Carlo Var(EMEE)/Var(pd-EMEE) in the simplified setting, with jackknife SE."""
    pd, em = np.empty(reps), np.empty(reps)
    for r in range(reps):
        data = generate_simplified_trial(p, q, delta, n, rng=replication_rng(seed, r))
        pd[r], em[r] = simplified_estimates(data, p)
    ok = np.isfinite(pd) & np.isfinite(em)
    return variance_ratio(em[ok], pd[ok])
