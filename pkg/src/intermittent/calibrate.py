"""
Threshold calibration.

A threshold is found by bisection on a monotone operating characteristic:
LCPFA (decreasing in ``b``) or ARL (increasing in ``b``).  Four evaluators
are available:

``ie``
    integral equations (CUSUM only), deterministic.
``mc``
    Monte Carlo with common random numbers: one sample of score records
    answers every trial threshold exactly, so bisection runs on a fixed
    random function.  Budgets escalate in stages, each stage narrowing the
    bracket for the next one.
``bound``
    the closed-form LCPFA upper bounds of the window-limited rules.
``exp_approx``
    converts an LCPFA target into an ARL target through the geometric
    relation and matches the ARL (IE for CUSUM, Monte Carlo otherwise).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import bounds_approx as bounds
from . import oc_integral as integral
from . import oc_montecarlo as montecarlo
from .model import GaussianChangeModel
from .rules import fma_warmup_thresholds, make_detector

__all__ = [
    "LCPFATarget",
    "ARLTarget",
    "CalibrationSpec",
    "CalibrationResult",
    "CalibrationError",
    "calibrate_threshold",
    "calibrate_many",
    "fma_warmup_thresholds",
    "ThresholdCalibrator",
    "MC_STAGES",
    "LCPFA_SCAN",
]

EVALUATORS = ("ie", "mc", "bound", "exp_approx")
DEFAULT_TOLERANCE = {"ie": 1e-3, "bound": 1e-3, "mc": 0.02, "exp_approx": 0.02}
MC_STAGES = (10**5, 10**6, 10**7)
LCPFA_SCAN = montecarlo.POLICY_MAX_J
DEFAULT_BRACKET = (0.0, 20.0)


class CalibrationError(RuntimeError):
    """Bracket, monotonicity or budget failure during calibration."""


@dataclass(frozen=True)
class LCPFATarget:
    alpha: float
    m: int

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")


@dataclass(frozen=True)
class ARLTarget:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")


@dataclass(frozen=True)
class CalibrationSpec:
    rule: str
    target: LCPFATarget | ARLTarget
    window: int | None = None
    evaluator: str = "mc"
    tolerance: float | None = None
    bracket: tuple = DEFAULT_BRACKET
    skip_warmup: bool = False

    def __post_init__(self):
        if self.evaluator not in EVALUATORS:
            raise ValueError(f"evaluator must be one of {EVALUATORS}")
        if self.evaluator == "ie" and self.rule != "cusum":
            raise ValueError("the integral-equation evaluator supports CUSUM only")
        if self.evaluator == "bound" and self.rule == "cusum":
            raise ValueError("no closed-form LCPFA bound for CUSUM")
        if self.skip_warmup and self.rule != "fma":
            raise ValueError("skip_warmup applies to the classical FMA only")
        if self.evaluator == "bound" and not isinstance(self.target, LCPFATarget):
            raise ValueError("bound evaluator needs an LCPFA target")
        if not self.bracket[0] < self.bracket[1]:
            raise ValueError("bracket must satisfy b_lo < b_hi")

    def detector(self, model, threshold=0.0):
        kw = {"skip_warmup": True} if self.skip_warmup else {}
        return make_detector(self.rule, threshold=threshold, window=self.window, model=model, **kw)

    @property
    def tol(self) -> float:
        return self.tolerance if self.tolerance is not None else DEFAULT_TOLERANCE[self.evaluator]


@dataclass
class CalibrationResult:
    threshold: float
    target: float
    achieved: float
    se: float
    evaluations: int
    evaluator: str
    info: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "target": self.target,
            "achieved": self.achieved,
            "se": self.se,
            "evaluations": self.evaluations,
            "evaluator": self.evaluator,
            **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool))},
        }


def _bisect(f, target, lo, hi, decreasing, tol, max_iter=200, xtol=1e-10):
    """Bisection on a monotone ``f`` until ``|f/target - 1| <= tol``.

    Returns ``(b, value, evaluations, points)``.  ``points`` lists every
    ``(b, value)`` visited, used afterwards for the monotonicity check.
    """
    points = []

    def ev(b):
        v = f(b)
        points.append((b, v))
        return v

    def above(v):
        # True when b must increase
        return v > target if decreasing else v < target

    f_lo, f_hi = ev(lo), ev(hi)
    if above(f_hi) or not above(f_lo):
        if abs(f_lo / target - 1) <= tol:
            return lo, f_lo, len(points), points
        if abs(f_hi / target - 1) <= tol:
            return hi, f_hi, len(points), points
        raise CalibrationError(f"bracket [{lo}, {hi}] does not straddle the target {target} ({f_lo}, {f_hi})")
    best = None
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        v = ev(mid)
        if best is None or abs(v / target - 1) < abs(best[1] / target - 1):
            best = (mid, v)
        if abs(v / target - 1) <= tol or hi - lo < xtol:
            break
        if above(v):
            lo = mid
        else:
            hi = mid
    return best[0], best[1], len(points), points


def _check_monotone(points, decreasing, slack):
    pts = sorted(points)
    vals = np.array([v for _, v in pts])
    d = np.diff(vals) if decreasing else -np.diff(vals)
    if np.any(d > slack):
        raise CalibrationError("evaluated operating characteristic is not monotone in the threshold")


def _target_value(target):
    return target.alpha if isinstance(target, LCPFATarget) else target.gamma


def _ie_lcpfa(model, m, grid_size, layout):
    return lambda b: integral.lcpfa_cusum(model, b, m, grid_size, layout=layout).value


def _ie_arl(model, grid_size, layout):
    return lambda b: integral.arl_cusum(model, b, grid_size, layout=layout)


def _calibrate_ie(spec, model, grid_size, layout, coarse_grid=1000):
    """Coarse bisection on a small grid, then secant steps on the full grid.

    Both characteristics are close to exponential in ``b`` so the secant
    on ``log`` values usually lands within tolerance in one or two steps.
    """
    target = _target_value(spec.target)
    is_lcpfa = isinstance(spec.target, LCPFATarget)
    lo, hi = spec.bracket
    lo = max(lo, 1e-6)

    def make(n, lay):
        return _ie_lcpfa(model, spec.target.m, n, lay) if is_lcpfa else _ie_arl(model, n, lay)

    evals = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integral.ConvergenceWarning)
        if grid_size <= coarse_grid:
            b, v, n, pts = _bisect(make(grid_size, layout), target, lo, hi, is_lcpfa, spec.tol)
            _check_monotone(pts, is_lcpfa, 1e-9)
            return CalibrationResult(b, target, v, 0.0, n, "ie", {"grid_size": grid_size, "layout": layout})
        b0, _, evals, _ = _bisect(make(coarse_grid, "log"), target, lo, hi, is_lcpfa, 1e-6)
        f = make(grid_size, layout)
        pts = [(b0, f(b0))]
        b1 = b0 + (1 if is_lcpfa else -1) * math.log(pts[0][1] / target)
        for _ in range(6):
            if abs(pts[-1][1] / target - 1) <= spec.tol:
                break
            pts.append((b1, f(b1)))
            (x0, y0), (x1, y1) = pts[-2], pts[-1]
            slope = (math.log(y1) - math.log(y0)) / (x1 - x0) if x1 != x0 else 0.0
            if not np.isfinite(slope) or slope == 0.0 or (slope > 0) == is_lcpfa:
                break
            b1 = x1 + (math.log(target) - math.log(y1)) / slope
        evals += len(pts)
        b, v = min(pts, key=lambda p: abs(p[1] / target - 1))
        if abs(v / target - 1) > spec.tol:
            # fall back to bisection around the coarse root
            b, v, n, more = _bisect(f, target, max(lo, b0 - 0.05), min(hi, b0 + 0.05), is_lcpfa, spec.tol)
            evals += n
            pts += more
    _check_monotone(pts, is_lcpfa, 1e-9)
    return CalibrationResult(b, target, v, 0.0, evals, "ie", {"grid_size": grid_size, "layout": layout})


def _calibrate_bound(spec, model):
    M = spec.window
    m = spec.target.m
    f = (lambda b: bounds.wl_lcpfa_upper(model, b, M, m)) if spec.rule == "wl_cusum" else (
        lambda b: bounds.fma_lcpfa_upper(model, b, M, m)
    )
    b, v, n, pts = _bisect(f, spec.target.alpha, *spec.bracket, True, spec.tol)
    _check_monotone(pts, True, 1e-12)
    return CalibrationResult(b, spec.target.alpha, v, 0.0, n, "bound")


class _MCLCPFA:
    """LCPFA of one detector on a fixed sample of score records."""

    def __init__(self, detector, model, m, runs, seed, floor, stage, workers, scan):
        horizon = scan + m
        self.m, self.scan = m, scan
        self.records = montecarlo.simulate_records(
            detector, model, runs, horizon, seed, floor, stream=montecarlo.NULL_STREAM + 16 * stage, workers=workers
        )
        self.cache = {}

    def estimate(self, b):
        if b not in self.cache:
            with warnings.catch_warnings():
                # the scan is capped on purpose; a maximiser at the cap is expected
                warnings.simplefilter("ignore", montecarlo.SamplingWarning)
                est, _ = montecarlo.lcpfa_estimate(self.records.survival(b), self.m, scan=self.scan)
            self.cache[b] = est
        return self.cache[b]

    def __call__(self, b):
        return self.estimate(b).value


def _stage_budgets(budget_scale, final_runs=None):
    runs = [max(1000, int(round(n * budget_scale))) for n in MC_STAGES]
    if final_runs is not None:
        runs = [r for r in runs if r < final_runs] + [int(final_runs)]
    return runs


def _calibrate_mc_lcpfa(specs, model, *, seed, budget_scale, workers, scan, final_runs=None):
    """Calibrate several LCPFA targets of one rule on shared samples."""
    spec0 = specs[0]
    m = spec0.target.m
    det = spec0.detector(model)
    brackets = [tuple(s.bracket) for s in specs]
    results = [None] * len(specs)
    evals = [0] * len(specs)
    budgets = _stage_budgets(budget_scale, final_runs)
    for stage, runs in enumerate(budgets):
        floor = min(lo for lo, _ in brackets)
        ev = _MCLCPFA(det, model, m, runs, seed, floor, stage, workers, scan)
        for i, s in enumerate(specs):
            lo, hi = brackets[i]
            # widen the carried bracket until it straddles the target on this sample
            for _ in range(8):
                flo, fhi = ev(lo), ev(hi)
                if flo >= s.target.alpha >= fhi or lo <= s.bracket[0] and hi >= s.bracket[1]:
                    break
                w = hi - lo
                lo, hi = max(s.bracket[0], lo - w), min(s.bracket[1], hi + w)
                lo = max(lo, floor)
            b, v, n, pts = _bisect(ev, s.target.alpha, lo, hi, True, 1e-4 if stage == len(budgets) - 1 else 1e-3)
            evals[i] += n
            slack = 4 * max(ev.estimate(p[0]).se for p in pts if np.isfinite(ev.estimate(p[0]).se))
            _check_monotone(pts, True, slack)
            est = ev.estimate(b)
            # next bracket: a few SEs around the root, mapped to the threshold scale
            width = max(0.02, 6.0 * est.se / max(est.value, 1e-300))
            brackets[i] = (max(s.bracket[0], b - width), min(s.bracket[1], b + width))
            results[i] = (b, est, runs)
    out = []
    for s, (b, est, runs), n in zip(specs, results, evals):
        alpha = s.target.alpha
        ok = abs(est.value - alpha) <= 2 * est.se or abs(est.value / alpha - 1) <= s.tol
        if not ok:
            raise CalibrationError(f"MC budget exhausted: LCPFA {est.value} vs target {alpha} (SE {est.se})")
        out.append(
            CalibrationResult(b, alpha, est.value, est.se, n, "mc", {"runs": runs, "argmax": est.argopt, "scan": scan})
        )
    return out


def _mc_arl_function(detector, model, runs, seed, cap, workers):
    """ARL(b) on one sample of records with horizon ``cap`` (censored beyond)."""
    rec = montecarlo.simulate_records(detector, model, runs, cap, seed, -np.inf, stream=montecarlo.ARL_STREAM + 32, workers=workers)

    def arl(b):
        T = rec.stopping_times(b)
        cens = T == 0
        values = np.where(cens, cap, T).astype(float)
        if cens.any():
            alarms = (~cens).sum()
            hazard = alarms / values.sum() if alarms else 0.0
            values[cens] += (1 - hazard) / hazard if hazard > 0 else math.inf
        if not np.isfinite(values).all():
            return montecarlo.EstimateWithSE(math.inf, math.inf, runs, None, {"censored": int(cens.sum())})
        return montecarlo.EstimateWithSE(float(values.mean()), float(values.std(ddof=1) / math.sqrt(runs)), runs, None, {"censored": int(cens.sum())})

    return arl


def _calibrate_arl(spec, model, gamma, *, seed, budget_scale, workers, grid_size, layout, evaluator):
    if spec.rule == "cusum":
        ie_spec = CalibrationSpec("cusum", ARLTarget(gamma), None, "ie", 1e-4, spec.bracket)
        r = _calibrate_ie(ie_spec, model, grid_size, layout)
        r.evaluator = evaluator
        return r
    det = spec.detector(model)
    runs = max(1000, int(round(10**5 * budget_scale)))
    cap = int(20 * gamma) + 100
    f = _mc_arl_function(det, model, runs, seed, cap, workers)
    cache = {}

    def g(b):
        if b not in cache:
            cache[b] = f(b)
        return cache[b].value

    b, v, n, pts = _bisect(g, gamma, *spec.bracket, False, 1e-4)
    est = cache[b]
    return CalibrationResult(b, gamma, v, est.se, n, evaluator, {"runs": runs, "cap": cap})


def calibrate_many(
    specs,
    model=None,
    *,
    seed: int = 0,
    budget_scale: float = 1.0,
    workers: int = 1,
    grid_size: int = integral.DEFAULT_GRID_SIZE,
    layout: str = "uniform",
    scan: int = LCPFA_SCAN,
    final_runs: int | None = None,
):
    """Calibrate a list of specs; Monte Carlo LCPFA specs that share rule,
    window and ``m`` are solved on common samples."""
    model = model or GaussianChangeModel()
    specs = list(specs)
    out = [None] * len(specs)
    groups = {}
    for i, s in enumerate(specs):
        if s.evaluator == "mc" and isinstance(s.target, LCPFATarget):
            groups.setdefault((s.rule, s.window, s.target.m, s.skip_warmup), []).append(i)
        else:
            out[i] = calibrate_threshold(
                s, model, seed=seed, budget_scale=budget_scale, workers=workers, grid_size=grid_size, layout=layout
            )
    for idx in groups.values():
        res = _calibrate_mc_lcpfa(
            [specs[i] for i in idx], model, seed=seed, budget_scale=budget_scale, workers=workers, scan=scan, final_runs=final_runs
        )
        for i, r in zip(idx, res):
            out[i] = r
    return out


def calibrate_threshold(
    spec: CalibrationSpec,
    model=None,
    prior_context=None,
    *,
    seed: int = 0,
    budget_scale: float = 1.0,
    workers: int = 1,
    grid_size: int = integral.DEFAULT_GRID_SIZE,
    layout: str = "uniform",
    scan: int = LCPFA_SCAN,
) -> CalibrationResult:
    """Find the threshold meeting ``spec.target``.

    ``prior_context`` (a :class:`DurationPrior`) is accepted so that callers
    can attach the LPD context to results; calibration itself targets the
    false-alarm side only.
    """
    model = model or GaussianChangeModel()
    if spec.evaluator == "ie":
        res = _calibrate_ie(spec, model, grid_size, layout)
    elif spec.evaluator == "bound":
        res = _calibrate_bound(spec, model)
    elif spec.evaluator == "exp_approx":
        if isinstance(spec.target, LCPFATarget):
            gamma = bounds.arl_from_lcpfa_geometric(spec.target.m, spec.target.alpha)
        else:
            gamma = spec.target.gamma
        res = _calibrate_arl(
            spec, model, gamma, seed=seed, budget_scale=budget_scale, workers=workers, grid_size=grid_size, layout=layout, evaluator="exp_approx"
        )
        res.info["arl_target"] = gamma
        if isinstance(spec.target, LCPFATarget):
            res.target = spec.target.alpha
            res.info["arl"] = res.achieved
            res.achieved = bounds.lcpfa_from_arl_geometric(res.achieved, spec.target.m)
    elif isinstance(spec.target, ARLTarget):
        res = _calibrate_arl(
            spec, model, spec.target.gamma, seed=seed, budget_scale=budget_scale, workers=workers, grid_size=grid_size, layout=layout, evaluator="mc"
        )
    else:
        (res,) = _calibrate_mc_lcpfa([spec], model, seed=seed, budget_scale=budget_scale, workers=workers, scan=scan)
    if prior_context is not None:
        res.info["prior_support"] = ",".join(map(str, prior_context.support))
    return res


class ThresholdCalibrator(BaseEstimator):
    """Estimator wrapper: ``fit()`` finds the threshold, ``detector_`` uses it.

    Parameters
    ----------
    rule : {'cusum', 'wl_cusum', 'fma', 'mfma'}
    window : int or None
    alpha, m : LCPFA target (used when ``arl`` is None)
    arl : float, optional
        ARL target instead of an LCPFA target.
    evaluator : {'ie', 'mc', 'bound', 'exp_approx'}
    """

    def __init__(
        self,
        rule="cusum",
        window=None,
        alpha=0.05,
        m=10,
        arl=None,
        evaluator="ie",
        tolerance=None,
        bracket=DEFAULT_BRACKET,
        model=None,
        seed=0,
        budget_scale=1.0,
        workers=1,
        grid_size=integral.DEFAULT_GRID_SIZE,
        skip_warmup=False,
    ):
        self.rule = rule
        self.window = window
        self.alpha = alpha
        self.m = m
        self.arl = arl
        self.evaluator = evaluator
        self.tolerance = tolerance
        self.bracket = bracket
        self.model = model
        self.seed = seed
        self.budget_scale = budget_scale
        self.workers = workers
        self.grid_size = grid_size
        self.skip_warmup = skip_warmup

    def fit(self, X=None, y=None):
        target = ARLTarget(self.arl) if self.arl is not None else LCPFATarget(self.alpha, self.m)
        spec = CalibrationSpec(
            self.rule, target, self.window, self.evaluator, self.tolerance, tuple(self.bracket), self.skip_warmup
        )
        model = self.model or GaussianChangeModel()
        self.result_ = calibrate_threshold(
            spec, model, seed=self.seed, budget_scale=self.budget_scale, workers=self.workers, grid_size=self.grid_size
        )
        self.threshold_ = self.result_.threshold
        self.detector_ = spec.detector(model, self.threshold_).fit()
        return self

    def predict(self, X):
        """Alarm times of the calibrated detector (see ``BaseDetector.predict``)."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "detector_")
        return self.detector_.predict(X)
