"""Command line runner for the entropy estimators and the variational-principle check."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, subset_points
from .covering import CoverageFailure, cover_counts, estimate_bowen_entropy
from .flows import FlowError
from .measures import (
    BUILTIN_MEASURES,
    DiscreteMeasure,
    FrostmanError,
    MeasureError,
    check_mass_bounds,
    frostman_construct,
    upper_local_entropy,
)
from .packing import EstimationError, default_probes, estimate_packing_entropy, packing_counts
from .reparam import GridBudgetExceeded, default_dt

log = logging.getLogger("repball")

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATOR, EXIT_VERDICT = 0, 2, 3, 4
ESTIMATOR_ERRORS = (EstimationError, CoverageFailure, MeasureError, FrostmanError, GridBudgetExceeded, FlowError)

PACKING_COLUMNS = ["system", "set", "eps", "t", "R", "s_fit", "residual", "seed"]
BOWEN_COLUMNS = ["system", "set", "eps", "t", "cover_size", "s_fit", "residual", "seed"]
MEASURE_COLUMNS = ["system", "measure", "eps", "upper_local_entropy", "sample_count", "seed"]
FROSTMAN_COLUMNS = ["system", "level", "atoms", "gamma", "mass", "m_min", "m_max", "seed"]


@dataclass
class Verdict:
    name: str
    passed: bool
    lhs: float
    rhs: float
    margin: float
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "lhs": self.lhs, "rhs": self.rhs,
                "margin": self.margin, "detail": self.detail}


@dataclass
class VPReport:
    system: str
    subset: dict
    per_eps: list = field(default_factory=list)
    measure_entropies: list = field(default_factory=list)
    frostman_result: dict | None = None
    verdicts: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def packing_reference(self) -> float | None:
        vals = [e["packing"]["mean"] for e in self.per_eps if e.get("packing")]
        return max(vals) if vals else None

    def summary(self) -> dict:
        return {
            "system": self.system,
            "subset": self.subset,
            "per_eps": self.per_eps,
            "verdicts": [v.to_dict() for v in self.verdicts],
            "measure_entropies": self.measure_entropies,
            "frostman": self.frostman_result,
            "errors": self.errors,
        }


class _Writer:
    """Single owner of the output files."""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.rows: dict[str, tuple[list, list]] = {}

    def add(self, name, columns, row):
        self.rows.setdefault(name, (columns, []))[1].append(row)

    def flush(self, summary: dict):
        for name, (cols, rows) in self.rows.items():
            with open(os.path.join(self.out_dir, name), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(cols)
                for r in rows:
                    w.writerow([_fmt(r[c]) for c in cols])
        with open(os.path.join(self.out_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 12))
    return v


def load_measure(system, spec: dict, seed: int) -> DiscreteMeasure:
    kind = spec["kind"]
    if kind == "file":
        with open(spec["path"]) as fh:
            return DiscreteMeasure.from_json(system, fh.read())
    return BUILTIN_MEASURES[kind](system, int(spec.get("size", 4000)), int(spec.get("seed", seed)))


def _entropy_pass(cfg, system, writer, report, which):
    """Packing and/or Bowen estimates for every eps and seed, sharing probes."""
    t_window = tuple(cfg.t_window)
    for eps in cfg.eps:
        dt = cfg.dt or default_dt(eps)
        entry = {"eps": eps, "dt": dt}
        for name in which:
            entry[name] = {"per_seed": [], "mean": None}
        for seed in cfg.seeds:
            Z = subset_points(system, cfg.subset, seed)
            probes = default_probes(system, Z, cfg.packing.probe_count, seed)
            opts = cfg.packing
            if "packing" in which:
                try:
                    rows = packing_counts(system, Z, eps, t_window, dt, opts.restarts, seed,
                                          opts.t_step, probes, opts.saturation)
                    est = estimate_packing_entropy(system, Z, eps, t_window, dt, seed=seed, rows=rows)
                    entry["packing"]["per_seed"].append(est.to_dict())
                    s_fit, resid = est.value, est.fit_residual
                except ESTIMATOR_ERRORS as exc:
                    report.errors.append({"estimator": "packing", "eps": eps, "seed": seed, "error": str(exc)})
                    rows, s_fit, resid = getattr(exc, "rows", []), None, None
                for r in rows:
                    writer.add("packing.csv", PACKING_COLUMNS, {
                        "system": system.name, "set": cfg.subset["kind"], "eps": eps, "t": r["t"], "R": r["R"],
                        "s_fit": s_fit, "residual": resid, "seed": seed})
            if "bowen" in which:
                try:
                    rows = cover_counts(system, Z, eps, t_window, dt, opts.restarts, seed, cfg.covering.delta,
                                        opts.t_step, probes, opts.saturation)
                    est = estimate_bowen_entropy(system, Z, eps, t_window, seed, dt=dt, delta=cfg.covering.delta, rows=rows)
                    entry["bowen"]["per_seed"].append(est.to_dict())
                    s_fit, resid = est.value, est.fit_residual
                except ESTIMATOR_ERRORS as exc:
                    report.errors.append({"estimator": "bowen", "eps": eps, "seed": seed, "error": str(exc)})
                    rows, s_fit, resid = [], None, None
                for r in rows:
                    writer.add("bowen.csv", BOWEN_COLUMNS, {
                        "system": system.name, "set": cfg.subset["kind"], "eps": eps, "t": r["t"],
                        "cover_size": r["cover_size"], "s_fit": s_fit, "residual": resid, "seed": seed})
        for name in which:
            vals = [e["value"] for e in entry[name]["per_seed"]]
            entry[name]["mean"] = float(np.mean(vals)) if vals else None
        report.per_eps.append(entry)


def _measure_pass(cfg, system, writer, report):
    if not cfg.measures:
        raise ConfigError("measures", "local entropy needs at least one measure")
    le = cfg.local_entropy
    eps = le.eps if le.eps is not None else cfg.eps[0]
    for i, spec in enumerate(cfg.measures):
        seed = cfg.seeds[0]
        label = spec.get("name", spec["kind"])
        try:
            mu = load_measure(system, spec, seed)
            val = upper_local_entropy(system, mu, eps, le.t_list, le.sample_count, seed, cfg.dt)
        except ESTIMATOR_ERRORS as exc:
            report.errors.append({"estimator": "local-entropy", "measure": label, "error": str(exc)})
            continue
        report.measure_entropies.append({"measure": label, "eps": eps, "upper_local_entropy": val})
        writer.add("local_entropy.csv", MEASURE_COLUMNS, {
            "system": system.name, "measure": label, "eps": eps, "upper_local_entropy": val,
            "sample_count": le.sample_count, "seed": seed})


def _frostman_pass(cfg, system, writer, report):
    ref = report.packing_reference
    if ref is None:
        report.errors.append({"estimator": "frostman", "error": "no packing estimate to scale s from"})
        return
    fo = cfg.frostman
    seed = cfg.seeds[0]
    eps = cfg.eps[-1]
    s = fo.s_factor * ref
    K = subset_points(system, cfg.subset, seed)[: fo.samples]
    try:
        mu, hist = frostman_construct(system, K, s, eps, fo.p_max, seed, cfg.dt, fo.local_draws,
                                      n1=fo.n1, separation=fo.separation)
        bounds = check_mass_bounds(system, hist)
        t_list = frostman_t_list(hist)
        achieved = upper_local_entropy(system, mu, eps, t_list, cfg.local_entropy.sample_count, seed, cfg.dt)
    except ESTIMATOR_ERRORS as exc:
        report.errors.append({"estimator": "frostman", "s": s, "error": str(exc)})
        report.frostman_result = {"s": s, "achieved": None, "error": str(exc)}
        return
    for st in hist:
        writer.add("frostman.csv", FROSTMAN_COLUMNS, {
            "system": system.name, "level": st.level, "atoms": len(st.K), "gamma": float(st.gamma),
            "mass": st.mu.total_mass, "m_min": float(st.m.min()), "m_max": float(st.m.max()), "seed": seed})
    report.frostman_result = {"s": s, "achieved": achieved, "eps": eps, "t_list": list(map(float, t_list)),
                              "step1_sum": hist[0].mu.total_mass, "mass_violations": len(bounds)}


def frostman_t_list(history) -> np.ndarray:
    """Durations spanning the last level's m values, used to read off its local entropy."""
    last = history[-1].m
    lo = float(history[-2].m.max()) if len(history) > 1 else 1.0
    hi = float(last.max())
    return np.linspace(lo, hi, 6)


def run_experiment(cfg: ExperimentConfig, out_dir: str, which=None) -> VPReport:
    """Run the selected estimators and write CSV rows plus summary.json to ``out_dir``."""
    system = cfg.make_system()
    which = list(cfg.estimators if which is None else which)
    report = VPReport(system.name, cfg.subset)
    writer = _Writer(out_dir)
    ent = [w for w in ("packing", "bowen") if w in which]
    if "frostman" in which and "packing" not in ent:
        ent.insert(0, "packing")
    if ent:
        _entropy_pass(cfg, system, writer, report, ent)
    if "local-entropy" in which:
        _measure_pass(cfg, system, writer, report)
    if "frostman" in which:
        _frostman_pass(cfg, system, writer, report)
    writer.flush(report.summary())
    return report


def verify_variational_principle(cfg: ExperimentConfig, out_dir: str) -> VPReport:
    """Both sides of the variational principle plus the packing/Bowen comparison."""
    if not cfg.measures:
        raise ConfigError("measures", "verify-vp needs at least one measure")
    which = ["packing", "bowen", "local-entropy"] + (["frostman"] if cfg.frostman.enabled else [])
    report = run_experiment(cfg, out_dir, which)
    tol = cfg.tolerances
    ref = report.packing_reference
    if report.measure_entropies and ref is not None:
        top = max(m["upper_local_entropy"] for m in report.measure_entropies)
        rhs = ref + tol.measure_slack
        report.verdicts.append(Verdict("(i) measure entropy <= packing", top <= rhs, top, rhs, rhs - top,
                                       "largest upper local entropy vs largest packing estimate"))
    for e in report.per_eps:
        p, b = e.get("packing", {}).get("per_seed", []), e.get("bowen", {}).get("per_seed", [])
        for pe, be in zip(p, b):
            rhs = pe["value"] + tol.slack
            report.verdicts.append(Verdict(f"(ii) bowen <= packing at eps={e['eps']} seed={pe['seed']}",
                                           be["value"] <= rhs, be["value"], rhs, rhs - be["value"]))
    fr = report.frostman_result
    if cfg.frostman.enabled and fr is not None:
        ach = fr.get("achieved")
        rhs = fr["s"] - tol.frostman_slack
        ok = ach is not None and ach >= rhs
        report.verdicts.append(Verdict("(iii) frostman measure entropy >= s", ok,
                                       float("nan") if ach is None else ach, rhs,
                                       float("nan") if ach is None else ach - rhs))
    _Writer(out_dir).flush(report.summary())
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="repball", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("estimate-packing", "estimate-bowen", "local-entropy", "frostman", "verify-vp"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "verify-vp":
            report = verify_variational_principle(cfg, args.out)
        else:
            which = {"estimate-packing": ["packing"], "estimate-bowen": ["bowen"],
                     "local-entropy": ["local-entropy"], "frostman": ["frostman"]}[args.command]
            report = run_experiment(cfg, args.out, which)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for err in report.errors:
        print(f"estimator error: {err}", file=sys.stderr)
    failed = [v for v in report.verdicts if not v.passed]
    for v in report.verdicts:
        print(f"{'PASS' if v.passed else 'FAIL'} {v.name}: {v.lhs:.4f} vs {v.rhs:.4f}")
    if report.errors:
        return EXIT_ESTIMATOR
    if failed:
        return EXIT_VERDICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
