"""Command-line front end: ``pdemee --config run.json --mode fit|simulate|sweep``.

Run configuration (JSON)::

    {
      "mode": "fit",                       # fit | simulate | sweep
      "seed": 0, "reps": 1000, "threads": 1, "out_dir": "out",
      "input": {"path": "data.csv", "delta": 3,
                "moderators": ["day"], "controls": ["day"],
                "transforms": {"day": "day-index"}},
      "estimators": [
        {"kind": "pd-emee", "moderators": ["intercept", "day"],
         "controls": ["intercept", "day"],
         "numerator": {"policy": "constant", "value": 0.6}},
        {"kind": "gee", "correlation": "exchangeable"}
      ],
      "inference": {"eta": 0.05, "residual_correction": true, "t_critical": true},
      "solver": {"tol": 1e-10, "max_iter": 100},
      "generative": {"n": 100, "T": 100, "delta": 3, "p_a": 0.2, "gamma": 0.5},
      "moderated": false,
      "sweep": {"axis": "Delta", "grid": [1, 2, 3]}
    }

Command-line flags override the matching config keys.  Outputs are written
atomically into ``out_dir``: ``coefficients.csv`` (fit), ``report.csv`` and
``report.json`` (simulate), ``curve.csv`` and ``report.json`` (sweep).  A
one-line JSON summary goes to standard output.  Exit codes: 2 configuration,
3 data, 4 numeric failure, 5 non-convergence.
"""
import argparse
from dataclasses import dataclass, field, replace
import json
import logging
import os
import sys

from . import __version__
from .bench import REPORT_COLUMNS, efficiency_sweep, standard_estimators, run_replications
from .core import (Constant, EmpiricalMean, LogisticOnS, RandProb, build_proximal_outcomes,
                   default_numerator)
from .errors import ConfigError, PdEmeeError, exit_code_for
from .estimators import EstimatorSpec, Kind, SolverConfig, fit
from .gee import GeeSpec, fit_gee
from .inference import InferenceConfig, summarize
from .io import atomic_write_csv, atomic_write_json, ingest_csv, records_to_rows
from .simgen import GenerativeConfig

log = logging.getLogger("pdemee")

MODES = ("fit", "simulate", "sweep")
SWEEP_AXES = ("Delta", "RandProb", "K")
COEF_COLUMNS = ("estimator", "term", "estimate", "se", "ci_low", "ci_high", "p_value",
                "reference", "df", "degenerate", "se_unadj", "iterations")
CURVE_COLUMNS = ("axis", "x", "rel_eff", "mc_se")


@dataclass
class RunConfig:
    mode: str
    seed: int = 0
    reps: int = 1000
    threads: int = 1
    out_dir: str = "."
    input: dict = field(default_factory=dict)
    estimators: list = field(default_factory=list)
    inference: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    generative: dict = field(default_factory=dict)
    moderated: bool = False
    sweep: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("run configuration must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        if "mode" not in raw:
            raise ConfigError("configuration needs a mode (fit, simulate or sweep)")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("seed", "reps", "threads"):
            if not isinstance(getattr(self, name), int) or isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be an integer")
        if self.reps < 1 or self.threads < 1 or self.seed < 0:
            raise ConfigError("reps and threads must be >= 1 and seed >= 0")
        if self.mode == "fit":
            if "path" not in self.input or "delta" not in self.input:
                raise ConfigError("fit mode needs input.path and input.delta")
        if self.mode == "sweep":
            if self.sweep.get("axis") not in SWEEP_AXES:
                raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
            if not self.sweep.get("grid"):
                raise ConfigError("sweep.grid is empty")


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return raw


def _make(cls, values, section):
    if not isinstance(values, dict):
        raise ConfigError(f"{section} must be a JSON object")
    unknown = sorted(set(values) - set(cls.__dataclass_fields__))
    if unknown:
        raise ConfigError(f"unknown {section} keys: {unknown}")
    return cls(**values)


def _numerator(raw):
    if raw is None:
        return None
    policy = raw.get("policy")
    if policy == "constant":
        if "value" not in raw:
            raise ConfigError("constant numerator needs a value")
        return Constant(float(raw["value"]))
    if policy == "empirical-mean":
        return EmpiricalMean()
    if policy == "logistic":
        return LogisticOnS()
    if policy == "rand-prob":
        return RandProb()
    raise ConfigError(f"unknown numerator policy {policy!r}")


def _indices(names, available, what):
    try:
        return tuple(available.index(n) for n in names)
    except ValueError:
        raise ConfigError(f"{what} {names} not among {list(available)}") from None


def build_specs(cfg, moderator_names, control_names):
    """Estimator specs from config entries; feature names are resolved to indices."""
    inference = _make(InferenceConfig, cfg.inference, "inference")
    solver = _make(SolverConfig, cfg.solver, "solver")
    specs = []
    for entry in cfg.estimators:
        entry = dict(entry)
        kind = entry.pop("kind", "pd-emee")
        mods = _indices(entry.pop("moderators", ["intercept"]), moderator_names, "moderators")
        ctls = _indices(entry.pop("controls", list(control_names)), control_names, "controls")
        label = entry.pop("label", None)
        if kind == "gee":
            spec = GeeSpec(entry.pop("correlation", "independent"), moderator_cols=mods,
                           control_cols=ctls, solver=solver, inference=inference, label=label)
        else:
            try:
                kind = Kind(kind)
            except ValueError:
                raise ConfigError(f"unknown estimator kind {kind!r}") from None
            spec = EstimatorSpec(kind=kind, moderator_cols=mods, control_cols=ctls,
                                 numerator=_numerator(entry.pop("numerator", None)),
                                 k=entry.pop("k", None), solver=solver, inference=inference,
                                 label=label)
        if entry:
            raise ConfigError(f"unknown estimator keys: {sorted(entry)}")
        specs.append(spec)
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"estimator labels must be unique, got {names}")
    return specs


def _generative(cfg, **over):
    values = dict(cfg.generative)
    values.update(over)
    values["seed"] = cfg.seed
    return _make(GenerativeConfig, values, "generative")


def run_fit(cfg):
    inp = dict(cfg.input)
    data = ingest_csv(inp.pop("path"), inp.pop("delta"), moderators=inp.pop("moderators", None),
                      controls=inp.pop("controls", None), transforms=inp.pop("transforms", None))
    if inp:
        raise ConfigError(f"unknown input keys: {sorted(inp)}")
    if not cfg.estimators:
        cfg.estimators = [{"kind": "pd-emee"}]
    specs = build_specs(cfg, data.moderator_names, data.control_names)
    outcomes = build_proximal_outcomes(data.sub_outcome, data.delta, lengths=data.lengths)
    rows = []
    inference = _make(InferenceConfig, cfg.inference, "inference")
    for spec in specs:
        if isinstance(spec, GeeSpec):
            result = fit_gee(data, outcomes, spec)
        else:
            if spec.numerator is None:
                spec = replace(spec, numerator=default_numerator(data))
            result = fit(data, outcomes, spec)
        se_unadj, _ = result.beta_interval(adjusted=False)
        for j, row in enumerate(summarize(result, inference)):
            row.update(estimator=result.estimator, se_unadj=float(se_unadj[j]),
                       iterations=result.diagnostics["iterations"])
            rows.append(row)
    path = os.path.join(cfg.out_dir, "coefficients.csv")
    atomic_write_csv(path, records_to_rows(rows, COEF_COLUMNS))
    return {"outputs": [path], "n": data.n, "T": data.T, "delta": data.delta,
            "coefficients": [{k: r[k] for k in ("estimator", "term", "estimate", "se")}
                             for r in rows]}


def run_simulate(cfg):
    gen = _generative(cfg)
    if cfg.estimators:
        names = ("intercept", "Z")
        specs = build_specs(cfg, names, names)
    else:
        specs = standard_estimators(moderated=cfg.moderated)
    report = run_replications(gen, specs, cfg.reps, threads=cfg.threads)
    csv_path = os.path.join(cfg.out_dir, "report.csv")
    json_path = os.path.join(cfg.out_dir, "report.json")
    atomic_write_csv(csv_path, records_to_rows(report.records, REPORT_COLUMNS))
    atomic_write_json(json_path, report.to_json())
    return {"outputs": [csv_path, json_path], "replications": report.replications,
            "failed": report.failed, "wall_time": report.wall_time}


def run_sweep(cfg):
    axis, grid = cfg.sweep["axis"], list(cfg.sweep["grid"])
    gen = _generative(cfg)
    curve = efficiency_sweep(axis, grid, gen, cfg.reps, threads=cfg.threads)
    csv_path = os.path.join(cfg.out_dir, "curve.csv")
    json_path = os.path.join(cfg.out_dir, "report.json")
    atomic_write_csv(csv_path, records_to_rows(curve.to_rows(), CURVE_COLUMNS))
    atomic_write_json(json_path, {"axis": axis, "replications": curve.replications,
                                  "failed": curve.failed, "points": curve.to_rows(),
                                  "base": {"n": gen.n, "T": gen.T, "delta": gen.delta,
                                           "p_a": gen.p_a, "seed": gen.seed}})
    return {"outputs": [csv_path, json_path], "points": len(curve.points)}


RUNNERS = {"fit": run_fit, "simulate": run_simulate, "sweep": run_sweep}


def run(cfg):
    """Dispatch on ``cfg.mode``; returns the summary dict."""
    summary = RUNNERS[cfg.mode](cfg)
    return {"status": "ok", "mode": cfg.mode, **summary}


def parser():
    ap = argparse.ArgumentParser(prog="pdemee", description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--mode", choices=MODES)
    ap.add_argument("--out-dir")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--reps", type=int)
    ap.add_argument("--threads", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"pdemee {__version__}")
    return ap


def main(argv=None):
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        raw = load_config(args.config) if args.config else {}
        for key in ("mode", "out_dir", "seed", "reps", "threads"):
            value = getattr(args, key)
            if value is not None:
                raw[key] = value
        cfg = RunConfig.from_dict(raw)
        summary = run(cfg)
    except PdEmeeError as exc:
        code = exit_code_for(exc)
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps({"status": "error", "error": type(exc).__name__, "message": str(exc),
                          "exit_code": code}))
        return code
    print(json.dumps(summary, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
