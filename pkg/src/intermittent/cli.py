"""
Command-line entry point: ``intermittent <command> [options]``.

Commands
--------
simulate   stopping times and survival tables of configured detectors
calibrate  thresholds meeting the configured LCPFA / ARL targets
bounds     closed-form bounds and approximations at configured thresholds
qq         geometric QQ data and KS distances at ARL targets
reproduce  published tables (1-5, crosscheck) or figure data; exits 1 on any failed check
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from . import bounds_approx as bounds
from . import oc_montecarlo as montecarlo
from . import reproduce as rp
from .calibrate import CalibrationError, LCPFATarget, calibrate_threshold
from .config import SCHEMA_VERSION, ConfigError, ExperimentConfig, load_config
from .model import ChangeScenario
from .rules import make_detector

FLOAT_FORMAT = "%.17g"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT % v
    if v is None:
        return ""
    return str(v)


def write_csv(path: str, rows: list, columns: list | None = None) -> str:
    """Write dict rows with 17-significant-digit floats."""
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def write_json(path: str, obj) -> str:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _provenance(cfg: ExperimentConfig, command: str, args) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact_version": __version__,
        "command": command,
        "config_hash": cfg.hash,
        "seed": cfg.seed,
        "budget_scale": args.budget_scale,
        "config": cfg.raw,
    }


# thresholds ---------------------------------------------------------------------


def _load_thresholds(cfg: ExperimentConfig) -> dict:
    """``(rule, window) -> threshold`` from the config rules and thresholds file."""
    out = {}
    if cfg.thresholds_file:
        with open(cfg.thresholds_file) as fh:
            doc = json.load(fh)
        for t in doc["thresholds"]:
            out.setdefault((t["rule"], t["window"]), []).append(float(t["threshold"]))
    for r in cfg.rules:
        if r.threshold is not None:
            out[(r.rule, r.window)] = [float(r.threshold)]
    return out


def _thresholds_for(cfg, rule_cfg, table):
    ths = table.get((rule_cfg.rule, rule_cfg.window))
    if not ths:
        raise ConfigError(f"no threshold for {rule_cfg.rule} (window {rule_cfg.window}); set rules[].threshold or thresholds_file")
    return ths


# commands -----------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    table = _load_thresholds(cfg)
    sim = cfg.simulate
    runs, horizon = int(round(sim["runs"] * args.budget_scale)) or 1, int(sim["horizon"])
    post = None
    if sim["nu"] is not None:
        scenario = ChangeScenario(sim["nu"], sim["duration"] or max(cfg.prior.support))
        post = scenario.post_mask(horizon)
    times_rows, surv_rows, summary = [], [], []
    for r in cfg.rules:
        for b in _thresholds_for(cfg, r, table):
            det = make_detector(r.rule, threshold=b, window=r.window, model=cfg.model, **r.detector_kwargs())
            T = montecarlo.simulate_stopping_times(det, cfg.model, runs, horizon, cfg.seed, workers=args.workers, post_mask=post)
            cens = T == 0
            for i, t in enumerate(T):
                times_rows.append({"rule": r.rule, "window": r.window, "threshold": b, "run": i, "time": int(t) if t else horizon, "censored": int(cens[i])})
            s = montecarlo.survival_from_times(T, horizon)
            for j, c in enumerate(s.counts):
                surv_rows.append({"rule": r.rule, "window": r.window, "threshold": b, "j": j, "survivors": int(c), "runs": runs})
            summary.append({"rule": r.rule, "window": r.window, "threshold": b, "runs": runs, "alarms": int((~cens).sum()), "censored": int(cens.sum())})
    write_csv(os.path.join(args.out, "stopping_times.csv"), times_rows, ["rule", "window", "threshold", "run", "time", "censored"])
    write_csv(os.path.join(args.out, "survival.csv"), surv_rows, ["rule", "window", "threshold", "j", "survivors", "runs"])
    write_csv(os.path.join(args.out, "simulate_summary.csv"), summary, ["rule", "window", "threshold", "runs", "alarms", "censored"])
    return 0


def cmd_calibrate(cfg: ExperimentConfig, args) -> int:
    rows, records = [], []
    for r, spec in cfg.specs():
        res = calibrate_threshold(
            spec, cfg.model, cfg.prior, seed=cfg.seed, budget_scale=args.budget_scale, workers=args.workers,
            grid_size=cfg.grid_size, layout="auto",
        )
        is_lcpfa = isinstance(spec.target, LCPFATarget)
        row = {
            "rule": r.rule, "window": r.window, "target_kind": "lcpfa" if is_lcpfa else "arl", "target": res.target,
            "m": cfg.m if is_lcpfa else None, "evaluator": spec.evaluator, "threshold": res.threshold,
            "achieved": float(res.achieved), "se": float(res.se), "evaluations": res.evaluations,
        }
        rows.append(row)
        records.append(row | {"skip_warmup": r.skip_warmup})
    cols = ["rule", "window", "target_kind", "target", "m", "evaluator", "threshold", "achieved", "se", "evaluations"]
    write_csv(os.path.join(args.out, "calibration.csv"), rows, cols)
    write_json(os.path.join(args.out, "thresholds.json"), {"schema_version": SCHEMA_VERSION, "thresholds": records})
    return 0


def cmd_bounds(cfg: ExperimentConfig, args) -> int:
    table = _load_thresholds(cfg)
    rows = []
    for r in cfg.rules:
        for b in _thresholds_for(cfg, r, table):
            base = {"rule": r.rule, "window": r.window, "threshold": b}
            if r.rule == "wl_cusum":
                rows.append(base | {"quantity": "lcpfa_upper", "value": bounds.wl_lcpfa_upper(cfg.model, b, r.window, cfg.m), "method": "lemma3"})
                rows.append(base | {"quantity": "lpd_lower", "value": bounds.wl_lpd_lower(cfg.model, b, r.window, cfg.prior), "method": "lemma3"})
            elif r.rule in ("fma", "mfma"):
                rows.append(base | {"quantity": "lcpfa_upper", "value": bounds.fma_lcpfa_upper(cfg.model, b, r.window, cfg.m), "method": "lemma4"})
                if r.window <= cfg.prior.min_duration:
                    rows.append(base | {"quantity": "lpd_lower", "value": bounds.fma_lpd_lower(cfg.model, b, r.window, cfg.prior), "method": "lemma4"})
                if r.rule == "fma":
                    rows.append(base | {"quantity": "arl_lai", "value": bounds.fma_arl_lai(cfg.model, b, r.window), "method": "lai"})
                    try:
                        nz = bounds.fma_arl_noonan_zhigljavsky(cfg.model, b, r.window).value
                        rows.append(base | {"quantity": "arl_noonan_zhigljavsky", "value": nz, "method": "noonan_zhigljavsky"})
                    except bounds.InvalidRegime:
                        pass
            else:
                rows.append(base | {"quantity": "lpfa_approx", "value": bounds.cusum_lpfa_approx(cfg.model, b, cfg.m), "method": "renewal_c"})
                rows.append(base | {"quantity": "lpfa_approx_corrected", "value": bounds.cusum_lpfa_approx(cfg.model, b, cfg.m, corrected=True), "method": "renewal_c"})
                rows.append(base | {"quantity": "pd_approx", "value": bounds.cusum_pd_approx(cfg.model, b, cfg.prior), "method": "pd_renewal"})
                rows.append(base | {"quantity": "pd_approx_corrected", "value": bounds.cusum_pd_approx(cfg.model, b, cfg.prior, corrected=True), "method": "pd_renewal"})
    write_csv(os.path.join(args.out, "bounds.csv"), rows, ["rule", "window", "threshold", "quantity", "value", "method"])
    return 0


def cmd_qq(cfg: ExperimentConfig, args) -> int:
    gammas = cfg.arl_targets or (rp.QQ_ARL,)
    pairs, summary = [], []
    for g in gammas:
        for r in cfg.rules:
            rep = rp.qq_study(
                model=cfg.model, budgets=cfg.budgets, seed=cfg.seed, workers=args.workers, grid_size=cfg.grid_size,
                gamma=g, rules=(r.rule,), case=cfg.case, windows={r.rule: r.window}, skip_warmup=r.skip_warmup,
            )
            pairs += [row | {"arl_target": g} for row in rep.tables["qq"]]
            summary += [row | {"arl_target": g} for row in rep.tables["qq_summary"]]
    write_csv(os.path.join(args.out, "qq.csv"), pairs, ["arl_target", "rule", "prob", "geometric", "empirical"])
    write_csv(os.path.join(args.out, "qq_summary.csv"), summary, ["arl_target", "rule", "window", "threshold", "arl", "arl_se", "ks", "runs"])
    return 0


CHECK_COLUMNS = ["target", "quantity", "rule", "point", "value", "reference", "deviation", "tolerance", "kind", "passed", "se", "note"]


def _write_reproduction(rep: rp.Reproduction, out: str):
    if rep.checks:
        write_csv(os.path.join(out, f"{rep.target}_checks.csv"), [c.as_dict() for c in rep.checks], CHECK_COLUMNS)
    for name, rows in rep.tables.items():
        if rows:
            cols = list(dict.fromkeys(k for r in rows for k in r))
            write_csv(os.path.join(out, f"{rep.target}_{name}.csv"), rows, cols)
    if rep.thresholds:
        write_json(os.path.join(out, f"{rep.target}_thresholds.json"), {"schema_version": SCHEMA_VERSION, "thresholds": rep.thresholds})


def cmd_reproduce(cfg: ExperimentConfig, args) -> int:
    targets = list(rp.TABLES) + list(rp.FIGURES) if args.target == "all" else [args.target]
    kw = dict(model=cfg.model, budgets=cfg.budgets, seed=cfg.seed, workers=args.workers)
    failed = False
    for t in targets:
        if t in rp.TABLES:
            fn = rp.TABLES[t]
            rep = fn(**kw) if t in ("3", "5") else fn(**kw, grid_size=cfg.grid_size)
            rep.target = f"table{t}" if t.isdigit() else t
            for c in rep.checks:
                c.target = rep.target
        elif t in rp.FIGURES:
            rep = rp.figure(t, **kw, grid_size=cfg.grid_size)
        else:
            raise ConfigError(f"unknown reproduction target {t!r}")
        _write_reproduction(rep, args.out)
        n_fail = sum(not c.passed for c in rep.checks)
        print(f"{rep.target}: {len(rep.checks) - n_fail}/{len(rep.checks)} checks passed")
        for c in rep.checks:
            if not c.passed:
                print(f"  FAIL {c.quantity} {c.rule} {c.point}: value={c.value:.6g} reference={c.reference:.6g} deviation={c.deviation:.4g} tolerance={c.tolerance:.4g}")
        failed |= n_fail > 0
    return 1 if failed else 0


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "bounds": cmd_bounds,
    "qq": cmd_qq,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intermittent", description="Detection of intermittent changes: simulation, calibration and reproduction.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", default="results", help="output directory (default: results)")
    common.add_argument("--budget-scale", type=float, default=1.0, help="multiply every Monte Carlo budget")
    common.add_argument("--workers", type=int, default=1, help="worker processes for Monte Carlo")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "calibrate", "bounds", "qq"):
        sub.add_parser(name, parents=[common], help=COMMANDS[name].__name__.replace("cmd_", ""))
    rep = sub.add_parser("reproduce", parents=[common], help="reproduce a table or figure")
    rep.add_argument("target", choices=list(rp.TABLES) + list(rp.FIGURES) + ["all"])
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not args.budget_scale > 0 or not math.isfinite(args.budget_scale):
        print("error: --budget-scale must be positive", file=sys.stderr)
        return 2
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, seed=args.seed, budget_scale=args.budget_scale)
        os.makedirs(args.out, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", montecarlo.SamplingWarning)
            status = COMMANDS[args.command](cfg, args)
        write_json(os.path.join(args.out, f"{args.command}_provenance.json"), _provenance(cfg, args.command, args))
    except (ConfigError, CalibrationError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return status


if __name__ == "__main__":
    sys.exit(main())
