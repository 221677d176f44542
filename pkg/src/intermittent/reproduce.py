"""
Reproduction pipelines for the published tables and figure data.

Each pipeline runs calibrate -> evaluate -> tabulate and returns a
:class:`Reproduction`: a list of checks (value, reference, deviation,
tolerance, verdict) plus plain tables for export.  Reference values are the
published numbers; thresholds that were not published are recovered by
calibration (Tables 1, 2 and 4) or from the published outputs themselves
(Tables 3 and 5, see ``TABLE3_THRESHOLDS`` and ``TABLE5_THRESHOLDS``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bounds_approx as bounds
from . import oc_integral as integral
from . import oc_montecarlo as montecarlo
from ._rng import NULL_STREAM
from .calibrate import ARLTarget, CalibrationSpec, LCPFATarget, calibrate_many, calibrate_threshold
from .model import DurationPrior, GaussianChangeModel
from .rules import make_detector

__all__ = [
    "Case",
    "CASE1",
    "CASE2",
    "Budgets",
    "Check",
    "Reproduction",
    "lpd_table",
    "table1",
    "table2",
    "table3",
    "table4",
    "table5",
    "ie_mc_crosscheck",
    "qq_study",
    "FIGURES",
    "figure",
    "TABLES",
]

RULES = ("wl_cusum", "cusum", "fma", "mfma")
ALPHAS = (0.1, 0.05, 0.02, 0.01, 0.005, 1e-3, 1e-4)
MC_SCAN = montecarlo.POLICY_MAX_J


@dataclass(frozen=True)
class Case:
    """Duration support, LCPFA window and rule windows of one scenario."""

    name: str
    durations: tuple
    m: int

    @property
    def prior(self) -> DurationPrior:
        return DurationPrior.uniform(self.durations)

    def window(self, rule: str):
        if rule == "cusum":
            return None
        return max(self.durations) if rule == "wl_cusum" else min(self.durations)


CASE1 = Case("case1", tuple(range(5, 11)), 10)
CASE2 = Case("case2", tuple(range(7, 16)), 15)


@dataclass(frozen=True)
class Budgets:
    """Full-scale Monte Carlo run counts; ``scaled`` applies ``--budget-scale``."""

    lcpfa: int = 10**7
    lpd: int = 10**6
    arl: int = 10**6
    qq: int = 10**7
    table4_arl: int = 10**5
    scale: float = 1.0

    def runs(self, name: str, floor: int = 1000) -> int:
        return max(floor, int(round(getattr(self, name) * self.scale)))

    @property
    def full_scale(self) -> bool:
        return self.scale >= 1.0


@dataclass
class Check:
    """One reproduced number against its reference."""

    target: str
    quantity: str
    rule: str
    point: str
    value: float
    reference: float
    deviation: float
    tolerance: float
    kind: str
    passed: bool
    se: float = float("nan")
    note: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Reproduction:
    target: str
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    thresholds: list = field(default_factory=list)
    results: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, **kw) -> Check:
        c = Check(target=self.target, **kw)
        self.checks.append(c)
        return c

    def merge(self, other: "Reproduction") -> "Reproduction":
        self.checks += other.checks
        self.tables.update(other.tables)
        self.thresholds += other.thresholds
        return self


def _abs_check(rep, quantity, rule, point, value, reference, tol, se=float("nan"), note=""):
    dev = abs(value - reference)
    return rep.add(
        quantity=quantity, rule=rule, point=point, value=value, reference=reference, deviation=dev,
        tolerance=tol, kind="abs", passed=bool(dev <= tol), se=se, note=note,
    )


def _rel_check(rep, quantity, rule, point, value, reference, tol, se=float("nan"), note=""):
    dev = abs(value - reference) / abs(reference)
    return rep.add(
        quantity=quantity, rule=rule, point=point, value=value, reference=reference, deviation=dev,
        tolerance=tol, kind="rel", passed=bool(dev <= tol), se=se, note=note,
    )


def _sig_round(x: float, digits: int) -> float:
    if x == 0 or not math.isfinite(x):
        return x
    return round(x, digits - 1 - int(math.floor(math.log10(abs(x)))))


def _sig_check(rep, quantity, rule, point, value, reference, digits):
    dev = abs(_sig_round(value, digits) - _sig_round(reference, digits))
    return rep.add(
        quantity=quantity, rule=rule, point=point, value=value, reference=reference, deviation=dev,
        tolerance=0.0, kind=f"sig{digits}", passed=bool(dev == 0.0),
    )


def _lcpfa_label(alpha):
    return f"lcpfa={alpha:g}"


# published values ---------------------------------------------------------------

# (LPD, SE) per rule and LCPFA level; CUSUM values come from integral equations
# and carry no SE.
TABLE1 = {
    "wl_cusum": [(0.7444, 0.0013), (0.6350, 0.0016), (0.4970, 0.0017), (0.3950, 0.0016), (0.3139, 0.0015), (0.1730, 0.0010), (0.0639, 0.0005)],
    "cusum": [(0.7415, None), (0.6326, None), (0.4769, None), (0.3655, None), (0.2794, None), (0.1290, None), (0.0305, None)],
    "fma": [(0.7291, 0.0014), (0.6214, 0.0016), (0.4719, 0.0018), (0.3841, 0.0017), (0.2977, 0.0014), (0.1558, 0.0009), (0.0514, 0.0003)],
    "mfma": [(0.7672, 0.0012), (0.6631, 0.0016), (0.5126, 0.0018), (0.4181, 0.0018), (0.3258, 0.0015), (0.1666, 0.0009), (0.0556, 0.003)],
}
TABLE2 = {
    "wl_cusum": [(0.8549, 0.0007), (0.7829, 0.0010), (0.6770, 0.0012), (0.5842, 0.0013), (0.5129, 0.0013), (0.3250, 0.0012), (0.1629, 0.0008)],
    "cusum": [(0.8551, None), (0.7812, None), (0.6676, None), (0.5738, None), (0.4953, None), (0.3167, None), (0.1370, None)],
    "fma": [(0.8514, 0.0007), (0.7680, 0.0010), (0.6528, 0.0013), (0.5552, 0.0014), (0.4716, 0.0014), (0.2824, 0.0011), (0.1205, 0.0006)],
    "mfma": [(0.8734, 0.0007), (0.7945, 0.0009), (0.6797, 0.0012), (0.5813, 0.0014), (0.4947, 0.0015), (0.2962, 0.0012), (0.1262, 0.0046)],
}

# Thresholds behind the bounds tables, recovered from the printed bounds.
TABLE3_THRESHOLDS = {
    "wl_cusum": (2.85, 3.50, 4.35, 5.00, 5.65),
    "mfma": (2.215, 2.85, 3.65, 4.20, 4.67),
}
TABLE3 = {
    "wl_cusum": {
        "lcpfa_bound": (0.4724, 0.2507, 0.0939, 0.0413, 0.0174),
        "lcpfa_mc": (0.0999, 0.0497, 0.0195, 0.0096, 0.0049),
        "lpd_bound": (0.612, 0.521, 0.403, 0.320, 0.246),
        "lpd_mc": (0.744, 0.635, 0.490, 0.389, 0.304),
    },
    "mfma": {
        "lcpfa_bound": (0.1617, 0.0806, 0.0294, 0.0136, 0.0067),
        "lcpfa_mc": (0.0985, 0.0493, 0.0191, 0.0097, 0.0049),
        "lpd_bound": (0.551, 0.438, 0.304, 0.224, 0.166),
        "lpd_mc": (0.767, 0.664, 0.514, 0.407, 0.321),
    },
}

TABLE4_ALPHAS = (0.1, 0.01, 1e-3, 1e-4)
# (measured LCPFA, LCPFA_exp, deviation in percent)
TABLE4 = {
    "wl_cusum": [(9.91e-2, 9.31e-2, 6.0), (9.45e-3, 9.31e-3, 1.5), (10.1e-4, 10.0e-4, 0.9), (9.6e-5, 9.9e-5, 3.3)],
    "cusum": [(9.79e-2, 9.45e-2, 3.5), (10.4e-3, 10.1e-3, 2.3), (10.2e-4, 10.3e-4, 1.0), (9.7e-5, 10.8e-5, 11.8)],
    "fma": [(9.81e-2, 8.78e-2, 10.5), (10.2e-3, 9.81e-3, 4.0), (9.70e-4, 9.70e-4, 0.1), (9.3e-5, 9.7e-5, 3.7)],
    "mfma": [(9.72e-2, 9.33e-2, 4.1), (10.1e-3, 10.1e-3, 0.2), (9.60e-4, 9.70e-4, 0.9), (9.3e-5, 9.2e-5, 0.7)],
}

# Thresholds of the FMA ARL table.  The printed values are rounded to two
# decimals; these are the points at which both printed approximations round
# to their printed values.
TABLE5_THRESHOLDS = (2.25, 2.894080, 3.699154, 4.182200, 4.665250, 5.711866, 7.0)
TABLE5 = {
    "mc": (109.63, 211.47, 545.50, 1026.43, 2032.5, 10488, 108960),
    "noonan_zhigljavsky": (114.11, 217.36, 555.88, 1047.30, 2077.6, 10902, 115490),
    "lai": (59.44, 126.17, 359.36, 713.09, 1477.7, 8325.4, 92946),
}
TABLE5_WINDOW = 5


# shared building blocks -------------------------------------------------------------


def _specs(rule, case, alphas):
    kw = {"skip_warmup": True} if rule == "fma" else {}
    return [CalibrationSpec(rule, LCPFATarget(a, case.m), case.window(rule), "mc", **kw) for a in alphas]


def _detector(rule, case_or_window, model, threshold=0.0, skip_warmup=True):
    """Detector as used by the pipelines; the classical FMA skips its warm-up."""
    window = case_or_window.window(rule) if isinstance(case_or_window, Case) else case_or_window
    kw = {"skip_warmup": True} if rule == "fma" and skip_warmup else {}
    return make_detector(rule, threshold=threshold, window=window, model=model, **kw)


def _lpd_rows(rule, case, model, thresholds, runs, seed, workers):
    det = _detector(rule, case, model, thresholds[0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", montecarlo.SamplingWarning)
        scans = montecarlo.lpd_scan(det, model, case.prior, None, runs, seed, thresholds=thresholds, workers=workers)
    return [scans[float(b)] for b in thresholds]


def _lpd_min(rows):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", montecarlo.SamplingWarning)
        est, nu = montecarlo._lpd_min(rows)
    return est, nu


def lpd_table(case: Case, alphas, rules=RULES, *, model=None, budgets=Budgets(), seed=0, workers=1, grid_size=integral.DEFAULT_GRID_SIZE):
    """Calibrate every rule to each LCPFA level and evaluate its LPD.

    Returns ``{rule: [entry per alpha]}``; each entry holds the threshold,
    achieved LCPFA (with SE for Monte Carlo), LPD with SE, the minimising
    onset and the full onset scan.
    """
    model = model or GaussianChangeModel()
    alphas = tuple(alphas)
    out = {}
    nu_max = max(case.durations)
    for rule in rules:
        entries = []
        if rule == "cusum":
            for a in alphas:
                cal = calibrate_threshold(
                    CalibrationSpec("cusum", LCPFATarget(a, case.m), None, "ie"), model, grid_size=grid_size, layout="auto"
                )
                oc = integral.cusum_characteristics(model, cal.threshold, case.m, case.prior, grid_size, layout="auto", nu_max=nu_max)
                entries.append({
                    "alpha": a, "threshold": cal.threshold, "lcpfa": oc["lcpfa"].value, "lcpfa_se": 0.0,
                    "lpd": oc["lpd"].value, "lpd_se": 0.0, "nu": oc["lpd"].argopt, "arl": oc["arl"],
                    "evaluator": "ie", "rows": None,
                })
        else:
            cals = calibrate_many(
                _specs(rule, case, alphas), model, seed=seed, budget_scale=budgets.scale, workers=workers,
                final_runs=budgets.runs("lcpfa"),
            )
            thresholds = [c.threshold for c in cals]
            all_rows = _lpd_rows(rule, case, model, thresholds, budgets.runs("lpd"), seed, workers)
            for a, cal, rows in zip(alphas, cals, all_rows):
                est, nu = _lpd_min(rows)
                entries.append({
                    "alpha": a, "threshold": cal.threshold, "lcpfa": cal.achieved, "lcpfa_se": cal.se,
                    "lpd": est.value, "lpd_se": est.se, "nu": nu, "arl": float("nan"), "evaluator": "mc", "rows": rows,
                })
        out[rule] = entries
    return out


def _threshold_records(target, case, results):
    recs = []
    for rule, entries in results.items():
        for e in entries:
            recs.append({
                "target": target, "case": case.name, "rule": rule, "window": case.window(rule), "m": case.m,
                "alpha": e["alpha"], "threshold": e["threshold"], "achieved": e["lcpfa"], "se": e["lcpfa_se"],
                "evaluator": e["evaluator"],
            })
    return recs


def _summary_table(results):
    rows = []
    for rule, entries in results.items():
        for e in entries:
            rows.append({k: e[k] for k in ("alpha", "threshold", "lcpfa", "lcpfa_se", "lpd", "lpd_se", "nu", "arl")} | {"rule": rule})
    return rows


def _lpd_reproduction(name, case, reference, alphas, *, model, budgets, seed, workers, grid_size, rules=RULES):
    model = model or GaussianChangeModel()
    results = lpd_table(case, alphas, rules, model=model, budgets=budgets, seed=seed, workers=workers, grid_size=grid_size)
    rep = Reproduction(name)
    k = 3.0 if budgets.full_scale else 10.0
    for rule, entries in results.items():
        for e in entries:
            i = ALPHAS.index(e["alpha"])
            ref, ref_se = reference[rule][i]
            if ref_se is None:
                # integral-equation column: use the mean SE reported for the other rules
                ref_se = float(np.mean([reference[r][i][1] for r in reference if reference[r][i][1] is not None]))
            _abs_check(
                rep, "lpd", rule, _lcpfa_label(e["alpha"]), e["lpd"], ref, k * ref_se, se=e["lpd_se"],
                note=f"threshold={e['threshold']:.6g}; nu*={e['nu']}; tolerance={k:g} reported SE",
            )
    rep.tables["lpd"] = _summary_table(results)
    rep.tables["lpd_scan"] = _scan_table(results)
    rep.thresholds = _threshold_records(name, case, results)
    rep.results = results
    return rep


def _scan_table(results):
    rows = []
    for rule, entries in results.items():
        for e in entries:
            for r in e["rows"] or ():
                rows.append({"rule": rule, "alpha": e["alpha"], "nu": r["nu"], "survivors": r["survivors"], "lpd": r["lpd"], "se": r["se"]})
    return rows


def table1(*, model=None, budgets=Budgets(), seed=0, workers=1, grid_size=integral.DEFAULT_GRID_SIZE, alphas=ALPHAS[:4]):
    """Case 1 LPD at matched LCPFA for all four rules."""
    return _lpd_reproduction("table1", CASE1, TABLE1, alphas, model=model, budgets=budgets, seed=seed, workers=workers, grid_size=grid_size)


def table2(*, model=None, budgets=Budgets(), seed=0, workers=1, grid_size=integral.DEFAULT_GRID_SIZE, alphas=(0.1, 0.01)):
    """Case 2 LPD at matched LCPFA for all four rules."""
    return _lpd_reproduction("table2", CASE2, TABLE2, alphas, model=model, budgets=budgets, seed=seed, workers=workers, grid_size=grid_size)


def ie_mc_crosscheck(case: Case = CASE1, alphas=ALPHAS[:4], *, model=None, budgets=Budgets(), seed=0, workers=1, grid_size=integral.DEFAULT_GRID_SIZE, thresholds=None):
    """CUSUM LCPFA and LPD from integral equations against Monte Carlo."""
    model = model or GaussianChangeModel()
    nu_max = max(case.durations)
    if thresholds is None:
        thresholds = [
            calibrate_threshold(CalibrationSpec("cusum", LCPFATarget(a, case.m), None, "ie"), model, grid_size=grid_size, layout="auto").threshold
            for a in alphas
        ]
    rep = Reproduction("crosscheck")
    det = make_detector("cusum", threshold=thresholds[0], model=model)
    floor = min(thresholds)
    rec = montecarlo.simulate_records(det, model, budgets.runs("lcpfa"), MC_SCAN + case.m, seed, floor, stream=NULL_STREAM + 64, workers=workers)
    lpd_rows = _lpd_rows("cusum", case, model, list(thresholds), budgets.runs("lpd"), seed + 1, workers)
    table = []
    for a, b, rows in zip(alphas, thresholds, lpd_rows):
        oc = integral.cusum_characteristics(model, b, case.m, case.prior, grid_size, layout="auto", nu_max=nu_max)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", montecarlo.SamplingWarning)
            lc, _ = montecarlo.lcpfa_estimate(rec.survival(b), case.m, scan=MC_SCAN)
        lp, nu = _lpd_min(rows)
        label = _lcpfa_label(a)
        _abs_check(rep, "lcpfa", "cusum", label, lc.value, oc["lcpfa"].value, 3 * lc.se, se=lc.se, note=f"threshold={b:.6g}; reference=integral equations")
        _abs_check(rep, "lpd", "cusum", label, lp.value, oc["lpd"].value, 3 * lp.se, se=lp.se, note=f"threshold={b:.6g}; reference=integral equations")
        table.append({
            "alpha": a, "threshold": b, "lcpfa_ie": oc["lcpfa"].value, "lcpfa_mc": lc.value, "lcpfa_se": lc.se,
            "lpd_ie": oc["lpd"].value, "lpd_mc": lp.value, "lpd_se": lp.se, "nu_ie": oc["lpd"].argopt, "nu_mc": nu,
        })
    rep.tables["crosscheck"] = table
    return rep


def table3(*, model=None, budgets=Budgets(), seed=0, workers=1):
    """Closed-form bounds against Monte Carlo for WL CUSUM and mFMA (Case 1)."""
    model = model or GaussianChangeModel()
    case = CASE1
    rep = Reproduction("table3")
    table = []
    for rule, ths in TABLE3_THRESHOLDS.items():
        M = case.window(rule)
        ref = TABLE3[rule]
        det = _detector(rule, case, model, ths[0])
        rec = montecarlo.simulate_records(det, model, budgets.runs("lcpfa"), MC_SCAN + case.m, seed, min(ths), workers=workers)
        lpd_rows = _lpd_rows(rule, case, model, list(ths), budgets.runs("lpd"), seed, workers)
        for i, (b, rows) in enumerate(zip(ths, lpd_rows)):
            if rule == "wl_cusum":
                ub = bounds.wl_lcpfa_upper(model, b, M, case.m)
                lb = bounds.wl_lpd_lower(model, b, M, case.prior)
            else:
                ub = bounds.fma_lcpfa_upper(model, b, M, case.m)
                lb = bounds.fma_lpd_lower(model, b, M, case.prior)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", montecarlo.SamplingWarning)
                lc, _ = montecarlo.lcpfa_estimate(rec.survival(b), case.m, scan=MC_SCAN)
            lp, nu = _lpd_min(rows)
            point = f"b={b:g}"
            # printed bounds carry 4 (LCPFA) and 3 (LPD) decimals
            _abs_check(rep, "lcpfa_bound", rule, point, ub, ref["lcpfa_bound"][i], 1e-4, note="printed to 4 decimals")
            _abs_check(rep, "lpd_bound", rule, point, lb, ref["lpd_bound"][i], 1e-3, note="printed to 3 decimals")
            rep.add(
                quantity="lcpfa_dominance", rule=rule, point=point, value=lc.value, reference=ub, deviation=lc.value - ub,
                tolerance=3 * lc.se, kind="upper", passed=bool(lc.value <= ub + 3 * lc.se), se=lc.se,
                note="Monte Carlo LCPFA must not exceed the upper bound",
            )
            rep.add(
                quantity="lpd_dominance", rule=rule, point=point, value=lp.value, reference=lb, deviation=lb - lp.value,
                tolerance=3 * lp.se, kind="lower", passed=bool(lp.value + 3 * lp.se >= lb), se=lp.se,
                note="Monte Carlo LPD must not fall below the lower bound",
            )
            table.append({
                "rule": rule, "threshold": b, "lcpfa_bound": ub, "lcpfa_mc": lc.value, "lcpfa_se": lc.se,
                "lcpfa_mc_published": ref["lcpfa_mc"][i], "lpd_bound": lb, "lpd_mc": lp.value, "lpd_se": lp.se,
                "lpd_mc_published": ref["lpd_mc"][i], "nu": nu,
            })
    rep.tables["bounds"] = table
    return rep


def table4(*, model=None, budgets=Budgets(), seed=0, workers=1, grid_size=integral.DEFAULT_GRID_SIZE, alphas=TABLE4_ALPHAS):
    """Measured LCPFA against its geometric approximation from the ARL."""
    model = model or GaussianChangeModel()
    case = CASE1
    rep = Reproduction("table4")
    table = []
    for rule in RULES:
        if rule == "cusum":
            entries = []
            for a in alphas:
                cal = calibrate_threshold(CalibrationSpec("cusum", LCPFATarget(a, case.m), None, "ie"), model, grid_size=grid_size, layout="auto")
                oc = integral.cusum_characteristics(model, cal.threshold, case.m, None, grid_size, layout="auto")
                entries.append((a, cal.threshold, oc["lcpfa"].value, 0.0, oc["arl"], 0.0))
        else:
            cals = calibrate_many(
                _specs(rule, case, alphas), model, seed=seed, budget_scale=budgets.scale, workers=workers, final_runs=budgets.runs("lcpfa")
            )
            entries = []
            for a, cal in zip(alphas, cals):
                det = _detector(rule, case, model, cal.threshold)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", montecarlo.SamplingWarning)
                    arl = montecarlo.arl_estimate(det, model, budgets.runs("table4_arl"), seed, workers=workers)
                entries.append((a, cal.threshold, cal.achieved, cal.se, arl.value, arl.se))
        for i, (a, b, lc, lc_se, arl, arl_se) in enumerate(entries):
            exp = bounds.lcpfa_from_arl_geometric(arl, case.m)
            dev = abs(lc - exp) / lc
            printed = TABLE4[rule][i][2] / 100.0
            rep.add(
                quantity="lcpfa_exp_deviation", rule=rule, point=_lcpfa_label(a), value=dev, reference=printed,
                deviation=dev, tolerance=2 * printed, kind="rel", passed=bool(dev <= 2 * printed), se=lc_se / lc if lc else float("nan"),
                note=f"threshold={b:.6g}; lcpfa={lc:.4g}; lcpfa_exp={exp:.4g}; arl={arl:.6g}",
            )
            table.append({
                "rule": rule, "alpha": a, "threshold": b, "lcpfa": lc, "lcpfa_se": lc_se, "arl": arl, "arl_se": arl_se,
                "lcpfa_exp": exp, "deviation": dev, "published_deviation": printed,
            })
    rep.tables["lcpfa_exp"] = table
    return rep


def table5(*, model=None, budgets=Budgets(), seed=0, workers=1, thresholds=TABLE5_THRESHOLDS):
    """Classical FMA ARL: Monte Carlo against the Lai and Noonan-Zhigljavsky approximations."""
    model = model or GaussianChangeModel()
    rep = Reproduction("table5")
    runs = budgets.runs("arl")
    mc_tol = 0.02 if runs >= 10**6 else 0.05
    table = []
    for i, b in enumerate(thresholds):
        lai = bounds.fma_arl_lai(model, b, TABLE5_WINDOW)
        nz = bounds.fma_arl_noonan_zhigljavsky(model, b, TABLE5_WINDOW).value
        det = _detector("fma", TABLE5_WINDOW, model, b)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", montecarlo.SamplingWarning)
            mc = montecarlo.arl_estimate(det, model, runs, seed, workers=workers)
        point = f"b={b:.6g}"
        _sig_check(rep, "arl_lai", "fma", point, lai, TABLE5["lai"][i], 4)
        _sig_check(rep, "arl_noonan_zhigljavsky", "fma", point, nz, TABLE5["noonan_zhigljavsky"][i], 5)
        _rel_check(rep, "arl_mc", "fma", point, mc.value, TABLE5["mc"][i], mc_tol, se=mc.se, note=f"runs={runs}")
        table.append({
            "threshold": b, "arl_mc": mc.value, "arl_mc_se": mc.se, "arl_noonan_zhigljavsky": nz, "arl_lai": lai,
            "deviation_nz": abs(nz - mc.value) / mc.value, "deviation_lai": abs(lai - mc.value) / mc.value,
        })
    rep.tables["fma_arl"] = table
    return rep


# QQ exponentiality ---------------------------------------------------------------

QQ_ARL = 200.0
KS_LIMIT = 0.01


def _arl_threshold(rule, window, model, gamma, *, budgets, seed, workers, grid_size, skip_warmup=True):
    if rule == "cusum":
        spec = CalibrationSpec("cusum", ARLTarget(gamma), None, "ie", 1e-4)
        return calibrate_threshold(spec, model, grid_size=grid_size, layout="auto").threshold
    kw = {"skip_warmup": True} if rule == "fma" and skip_warmup else {}
    spec = CalibrationSpec(rule, ARLTarget(gamma), window, "mc", **kw)
    return calibrate_threshold(spec, model, seed=seed, budget_scale=budgets.scale, workers=workers).threshold


def qq_study(
    *, model=None, budgets=Budgets(), seed=0, workers=1, grid_size=integral.DEFAULT_GRID_SIZE, gamma=QQ_ARL,
    rules=RULES, case=CASE1, windows=None, skip_warmup=True,
):
    """Geometric QQ data and KS distance of no-change stopping times at ARL ~ gamma.

    ``windows`` optionally overrides the case windows per rule.
    """
    model = model or GaussianChangeModel()
    rep = Reproduction("qq")
    pairs, summary = [], []
    runs = budgets.runs("qq")
    for rule in rules:
        window = (windows or {}).get(rule, case.window(rule))
        b = _arl_threshold(rule, window, model, gamma, budgets=budgets, seed=seed, workers=workers, grid_size=grid_size, skip_warmup=skip_warmup)
        det = _detector(rule, window, model, b, skip_warmup)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", montecarlo.SamplingWarning)
            est, T = montecarlo.arl_estimate(det, model, runs, seed + 7, workers=workers, return_times=True)
        qq, ks = montecarlo.qq_geometric_data(T)
        rep.add(
            quantity="ks_geometric", rule=rule, point=f"arl={gamma:g}", value=ks, reference=0.0, deviation=ks,
            tolerance=KS_LIMIT, kind="upper", passed=bool(ks < KS_LIMIT), note=f"threshold={b:.6g}; arl={est.value:.6g}; runs={runs}",
        )
        for p, (t, e) in zip(np.linspace(0.01, 0.99, 99), qq):
            pairs.append({"rule": rule, "prob": p, "geometric": t, "empirical": e})
        summary.append({"rule": rule, "window": window, "threshold": b, "arl": est.value, "arl_se": est.se, "ks": ks, "runs": runs})
    rep.tables["qq"] = pairs
    rep.tables["qq_summary"] = summary
    return rep


# figure data -------------------------------------------------------------------


def _fig_lcpfa_vs_ell(model, budgets, seed, workers, grid_size, alpha=0.1):
    """LCPFA curve ``1 - P(T > l+m)/P(T > l)`` against ``l`` at LCPFA ~ alpha."""
    case = CASE1
    rows = []
    horizon = 100
    for rule in RULES:
        if rule == "cusum":
            cal = calibrate_threshold(CalibrationSpec("cusum", LCPFATarget(alpha, case.m), None, "ie"), model, grid_size=grid_size, layout="auto")
            grid, (K,) = integral._kernels(model, cal.threshold, grid_size, "auto")
            ratios, _ = integral.propagate(K, horizon + case.m, integral._unit(K.n, grid.start_cell))
            curve = integral._lcpfa_from_ratios(ratios, ratios[-1], case.m, False)[: horizon + 1]
            rows += [{"rule": rule, "method": "ie", "ell": l, "lcpfa": v, "se": 0.0, "threshold": cal.threshold} for l, v in enumerate(curve)]
            det = make_detector("cusum", threshold=cal.threshold, model=model)
            b = cal.threshold
        else:
            (cal,) = calibrate_many(_specs(rule, case, [alpha]), model, seed=seed, budget_scale=budgets.scale, workers=workers, final_runs=budgets.runs("lcpfa"))
            b = cal.threshold
            det = _detector(rule, case, model, b)
        surv = montecarlo.estimate_survival(det, model, budgets.runs("lpd"), horizon + case.m, seed, workers=workers)
        curve, se = montecarlo.lcpfa_curve(surv, case.m)
        rows += [{"rule": rule, "method": "mc", "ell": l, "lcpfa": v, "se": s, "threshold": b} for l, (v, s) in enumerate(zip(curve, se))]
    return rows


def _fig_pd_vs_k(model, budgets, seed, workers, grid_size, alpha, minimiser_only):
    case = CASE1
    res = lpd_table(case, [alpha], ("wl_cusum", "fma", "mfma"), model=model, budgets=budgets, seed=seed, workers=workers, grid_size=grid_size)
    cal = calibrate_threshold(CalibrationSpec("cusum", LCPFATarget(alpha, case.m), None, "ie"), model, grid_size=grid_size, layout="auto")
    res["cusum"] = [{"alpha": alpha, "threshold": cal.threshold, "rows": _lpd_rows("cusum", case, model, [cal.threshold], budgets.runs("lpd"), seed, workers)[0]}]
    out = []
    ks = case.prior.support
    for rule in RULES:
        e = res[rule][0]
        rows = e["rows"]
        if minimiser_only:
            _, nu = _lpd_min(rows)
            rows = [r for r in rows if r["nu"] == nu]
        for r in rows:
            for k, pd in zip(ks, r["pd_k"]):
                out.append({"rule": rule, "nu": r["nu"], "k": k, "pd": pd, "survivors": r["survivors"], "threshold": e["threshold"]})
    return out


def _fig_lpd_vs_lcpfa(case, model, budgets, seed, workers, grid_size):
    res = lpd_table(case, ALPHAS, RULES, model=model, budgets=budgets, seed=seed, workers=workers, grid_size=grid_size)
    return _summary_table(res)


def _fig_window_sizes(model, budgets, seed, workers, grid_size):
    rows = []
    for rule in ("wl_cusum", "mfma"):
        for M in (5, 10):
            case = Case(f"case1_M{M}", CASE1.durations, CASE1.m)
            specs = [CalibrationSpec(rule, LCPFATarget(a, case.m), M, "mc") for a in ALPHAS]
            cals = calibrate_many(specs, model, seed=seed, budget_scale=budgets.scale, workers=workers, final_runs=budgets.runs("lcpfa"))
            ths = [c.threshold for c in cals]
            det = make_detector(rule, threshold=ths[0], window=M, model=model)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", montecarlo.SamplingWarning)
                scans = montecarlo.lpd_scan(det, model, case.prior, None, budgets.runs("lpd"), seed, thresholds=ths, workers=workers)
            for a, c in zip(ALPHAS, cals):
                est, nu = _lpd_min(scans[float(c.threshold)])
                rows.append({"rule": rule, "window": M, "alpha": a, "threshold": c.threshold, "lcpfa": c.achieved, "lpd": est.value, "lpd_se": est.se, "nu": nu})
    return rows


FIGURES = (
    "lcpfa_vs_ell",
    "pd_vs_k_by_nu",
    "pd_vs_k_min",
    "lpd_vs_lcpfa_case1",
    "lpd_vs_lcpfa_case2",
    "window_sizes",
    "qq",
)


def figure(name: str, *, model=None, budgets=Budgets(), seed=0, workers=1, grid_size=integral.DEFAULT_GRID_SIZE) -> Reproduction:
    """Plot-ready data for one figure (no checks except for ``qq``)."""
    model = model or GaussianChangeModel()
    kw = dict(model=model, budgets=budgets, seed=seed, workers=workers, grid_size=grid_size)
    if name == "qq":
        return qq_study(**kw)
    rep = Reproduction(name)
    args = (model, budgets, seed, workers, grid_size)
    if name == "lcpfa_vs_ell":
        rep.tables[name] = _fig_lcpfa_vs_ell(*args)
    elif name == "pd_vs_k_by_nu":
        rep.tables[name] = _fig_pd_vs_k(*args, alpha=0.1, minimiser_only=False)
    elif name == "pd_vs_k_min":
        rep.tables[name] = _fig_pd_vs_k(*args, alpha=0.05, minimiser_only=True)
    elif name == "lpd_vs_lcpfa_case1":
        rep.tables[name] = _fig_lpd_vs_lcpfa(CASE1, *args)
    elif name == "lpd_vs_lcpfa_case2":
        rep.tables[name] = _fig_lpd_vs_lcpfa(CASE2, *args)
    elif name == "window_sizes":
        rep.tables[name] = _fig_window_sizes(*args)
    else:
        raise ValueError(f"unknown figure {name!r}; expected one of {FIGURES}")
    return rep


TABLES = {"1": table1, "2": table2, "3": table3, "4": table4, "5": table5, "crosscheck": ie_mc_crosscheck}
