"""
Monte Carlo estimation of LCPFA, LPD and ARL for any detector.

All simulations are organised in fixed-size blocks of runs.  Block ``i`` of
stream ``s`` draws from ``SeedSequence(seed, spawn_key=(s, ..., i))`` and
block results are reduced in block order, so estimates are bit-identical
whatever the number of worker processes.

The LCPFA machinery stores *records* of the running maximum of each path's
score (see :class:`ScoreRecords`).  Because the first passage of a
non-decreasing path over ``b`` is a non-increasing function of ``b``, the
records of one simulated sample give the exact stopping time of every path
for any threshold above the recording floor.  Calibration can therefore
bisect on a single sample (common random numbers) instead of re-simulating
at each trial threshold.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._rng import ARL_STREAM, BLOCK_SIZE, CHANGE_STREAM, NULL_STREAM, block_rng, blocks
from .model import DurationPrior

__all__ = [
    "SurvivalEstimate",
    "EstimateWithSE",
    "ScoreRecords",
    "PolicyUnsatisfiable",
    "SamplingWarning",
    "default_horizon",
    "simulate_records",
    "estimate_survival",
    "survival_from_times",
    "lcpfa_curve",
    "lcpfa_estimate",
    "lpd_estimate",
    "lpd_scan",
    "arl_estimate",
    "simulate_stopping_times",
    "qq_geometric_data",
]

QUASI_STATIONARY_ALLOWANCE = 200
POLICY_MAX_J = 30
POLICY_MIN_HITS = 1000
MIN_SURVIVORS = 1000
_CHUNK_ELEMENTS = 1 << 22


class PolicyUnsatisfiable(RuntimeError):
    """The sampling policy would need more runs than the configured cap."""


class SamplingWarning(UserWarning):
    """Estimate is usable but its sampling assumptions are strained."""


def default_horizon(m: int) -> int:
    return POLICY_MAX_J + int(m) + QUASI_STATIONARY_ALLOWANCE


@dataclass
class SurvivalEstimate:
    """Counts of runs surviving past each step: ``counts[j] = #{T > j}``."""

    horizon: int
    counts: np.ndarray
    runs: int
    seed_base: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.horizon + 1,):
            raise ValueError("counts must have length horizon + 1")
        if self.counts[0] != self.runs:
            raise ValueError("counts[0] must equal the number of runs")
        if np.any(np.diff(self.counts) > 0):
            raise ValueError("counts must be non-increasing")

    @property
    def survival(self) -> np.ndarray:
        """``p_j = counts[j] / K``, unbiased for ``P(T > j)``."""
        return self.counts / self.runs

    @property
    def hits(self) -> np.ndarray:
        """``hits[j-1] = #{T = j}`` for ``j = 1..horizon``."""
        return -np.diff(self.counts)


@dataclass
class EstimateWithSE:
    value: float
    se: float
    n_effective: int
    argopt: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def relative_se(self) -> float:
        return self.se / self.value if self.value else math.inf


def survival_from_times(times, horizon: int, seed_base: int = 0) -> SurvivalEstimate:
    """Survival counts from stopping times (``0`` or ``> horizon`` = no alarm)."""
    t = np.asarray(times, dtype=np.int64)
    K = t.size
    stopped = t[(t >= 1) & (t <= horizon)]
    hits = np.bincount(stopped, minlength=horizon + 1)
    counts = K - np.cumsum(hits)
    return SurvivalEstimate(horizon, counts, K, seed_base)


# simulation kernels ---------------------------------------------------------


def _first_alarm(Z, b):
    """1-based first index with ``Z >= b`` per row; 0 when none."""
    alarm = Z >= b
    hit = alarm.any(axis=1)
    return np.where(hit, alarm.argmax(axis=1) + 1, 0)


def _records_block(detector, model, seed, key, n, horizon, floor, post_mask=None):
    rng = block_rng(seed, *key)
    post = False if post_mask is None else post_mask[None, :]
    lam = model.sample_llr(rng, (n, horizon), post=post)
    Z = detector.scores(lam, any_threshold=True)
    runmax = np.maximum.accumulate(Z, axis=1)
    new = np.empty_like(runmax, dtype=bool)
    new[:, 0] = True
    np.greater(runmax[:, 1:], runmax[:, :-1], out=new[:, 1:])
    new &= runmax >= floor
    rows, cols = np.nonzero(new)
    return rows.astype(np.int32), (cols + 1).astype(np.int32), runmax[rows, cols]


def _map_blocks(fn, tasks, workers):
    if workers is None or workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=int(workers)) as ex:
        return list(ex.map(fn, *zip(*tasks)))


@dataclass
class ScoreRecords:
    """Record highs of per-path running maxima of a threshold-free score.

    For each simulated path, every time its running maximum increases to a
    value ``>= floor`` is stored as ``(row, time, value)``.  Rows are sorted
    and, within a row, times and values increase.
    """

    rows: np.ndarray
    times: np.ndarray
    values: np.ndarray
    runs: int
    horizon: int
    floor: float
    seed: int = 0

    def stopping_times(self, b: float) -> np.ndarray:
        """First passage of each path over ``b`` (0 = none within horizon)."""
        if b < self.floor:
            raise ValueError(f"threshold {b} below the recording floor {self.floor}")
        mask = self.values >= b
        r = self.rows[mask]
        t = self.times[mask]
        T = np.zeros(self.runs, dtype=np.int64)
        if r.size:
            first = np.ones(r.size, dtype=bool)
            first[1:] = r[1:] != r[:-1]
            T[r[first]] = t[first]
        return T

    def survival(self, b: float) -> SurvivalEstimate:
        return survival_from_times(self.stopping_times(b), self.horizon, self.seed)


def simulate_records(
    detector,
    model,
    runs: int,
    horizon: int,
    seed: int,
    floor: float = -np.inf,
    *,
    stream: int = NULL_STREAM,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> ScoreRecords:
    """Simulate ``runs`` no-change paths and keep their score records."""
    det = _bind(detector, model)
    tasks = [(det, model, seed, (stream, i), n, horizon, floor) for i, n in blocks(runs, block_size)]
    parts = _map_blocks(_records_block, tasks, workers)
    offset = 0
    rows, times, values = [], [], []
    for (i, n), (r, t, v) in zip(blocks(runs, block_size), parts):
        rows.append(r.astype(np.int64) + offset)
        times.append(t)
        values.append(v)
        offset += n
    return ScoreRecords(
        np.concatenate(rows), np.concatenate(times), np.concatenate(values), int(runs), int(horizon), float(floor), seed
    )


def _times_block(detector, model, seed, key, n, horizon, post_mask=None):
    rng = block_rng(seed, *key)
    post = False if post_mask is None else post_mask[None, :]
    lam = model.sample_llr(rng, (n, horizon), post=post)
    return _first_alarm(detector.scores(lam), detector.threshold_)


def simulate_stopping_times(
    detector, model, runs: int, horizon: int, seed: int, *, stream=NULL_STREAM, workers=1, block_size=BLOCK_SIZE, post_mask=None
) -> np.ndarray:
    """Stopping times of ``runs`` paths truncated at ``horizon`` (0 = none)."""
    det = _bind(detector, model)
    tasks = [(det, model, seed, (stream, i), n, horizon, post_mask) for i, n in blocks(runs, block_size)]
    return np.concatenate(_map_blocks(_times_block, tasks, workers))


def _bind(detector, model):
    if detector.model is not model:
        detector = detector.set_params(model=model)
    return detector.fit()


def estimate_survival(
    detector,
    model,
    runs_policy="hits",
    horizon: int | None = None,
    seed: int = 0,
    *,
    workers: int = 1,
    run_cap: int = 10**8,
    exceedance: bool = False,
    block_size: int = BLOCK_SIZE,
) -> SurvivalEstimate:
    """Survival table of a detector under no change.

    ``runs_policy`` is either a fixed number of runs or ``"hits"``: keep
    adding blocks until every event ``{T = j}``, ``j <= 30``, has been seen at
    least 1000 times (``exceedance=True`` counts ``{T >= j}`` instead).
    """
    horizon = int(horizon or default_horizon(10))
    det = _bind(detector, model)
    if runs_policy == "hits":
        if horizon < POLICY_MAX_J:
            raise ValueError("the hit-count policy needs horizon >= 30")
        hits = np.zeros(horizon + 1, dtype=np.int64)
        parts, done, i = [], 0, 0
        while True:
            if done >= run_cap:
                raise PolicyUnsatisfiable(f"policy not met after {done} runs (cap {run_cap})")
            n = min(block_size, run_cap - done)
            T = _times_block(det, model, seed, (NULL_STREAM, i), n, horizon)
            parts.append(T)
            hits += np.bincount(T[T > 0], minlength=horizon + 1)
            done += n
            i += 1
            h = hits[1 : POLICY_MAX_J + 1]
            if exceedance:
                tail = done - np.concatenate([[0], np.cumsum(hits[1:POLICY_MAX_J])])
                h = tail
            if h.min() >= POLICY_MIN_HITS:
                break
        return survival_from_times(np.concatenate(parts), horizon, seed)
    runs = int(runs_policy)
    if runs < 1:
        raise ValueError("runs must be >= 1")
    T = simulate_stopping_times(det, model, runs, horizon, seed, workers=workers, block_size=block_size)
    return survival_from_times(T, horizon, seed)


# LCPFA ----------------------------------------------------------------------


def lcpfa_curve(survival: SurvivalEstimate, m: int):
    """``1 - p_{l+m}/p_l`` and its first-order SE for ``l = 0..horizon-m``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if survival.horizon < m:
        raise ValueError("horizon shorter than m")
    p = survival.survival
    K = survival.runs
    num, den = p[m:], p[: p.size - m]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / den, np.nan)
        se = np.sqrt(r * (1 - r) / (K * den))
    return 1.0 - r, se


def lcpfa_estimate(survival: SurvivalEstimate, m: int, scan: int | None = None):
    """Maximum over ``l`` of ``1 - p_{l+m}/p_l`` with its SE at the maximiser.

    ``scan`` caps the largest ``l`` considered (default ``horizon - m``).
    Returns ``(EstimateWithSE, argmax_l)``.
    """
    curve, se = lcpfa_curve(survival, m)
    if scan is not None:
        curve, se = curve[: int(scan) + 1], se[: int(scan) + 1]
    if np.all(np.isnan(curve)):
        # every run stopped before m steps
        return EstimateWithSE(1.0, 0.0, survival.runs, 0), 0
    i = int(np.nanargmax(curve))
    if i == curve.size - 1:
        warnings.warn("LCPFA maximiser sits at the end of the scan range", SamplingWarning, stacklevel=2)
    n_eff = int(survival.counts[i])
    est = EstimateWithSE(float(curve[i]), float(se[i]), n_eff, i, {"scan": curve.size - 1})
    return est, i


# LPD ------------------------------------------------------------------------


def _lpd_block(detector, model, seed, key, n, nu, kmax, thresholds):
    rng = block_rng(seed, *key)
    H = nu + kmax
    post = np.zeros(H, dtype=bool)
    post[nu:] = True
    lam = model.sample_llr(rng, (n, H), post=post[None, :])
    Z = detector.scores(lam, any_threshold=len(thresholds) > 1)
    runmax = np.maximum.accumulate(Z, axis=1)
    out = []
    for b in thresholds:
        crossed = runmax >= b
        alive = ~crossed[:, nu - 1] if nu > 0 else np.ones(n, dtype=bool)
        # det_k[i] = T_i <= nu + k
        det = crossed[alive][:, nu:]
        out.append((int(alive.sum()), det.sum(axis=0).astype(np.float64), det))
    return out


def lpd_scan(
    detector,
    model,
    prior: DurationPrior,
    nu_scan=None,
    runs: int = 100_000,
    seed: int = 0,
    *,
    thresholds=None,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
):
    """Conditional detection probabilities for every onset in ``nu_scan``.

    Returns a dict ``threshold -> list of per-nu rows`` with keys ``nu``,
    ``survivors``, ``pd_k`` (``P(T <= nu+k | T > nu)`` per support point),
    ``lpd`` (prior-weighted) and ``se``.  All thresholds share one sample.
    """
    det = _bind(detector, model)
    thresholds = [det.threshold_] if thresholds is None else [float(b) for b in thresholds]
    nu_scan = sorted(set(range(prior.max_duration + 1) if nu_scan is None else (int(v) for v in nu_scan)))
    if not nu_scan:
        raise ValueError("nu_scan must not be empty")
    ks = np.array(prior.support)
    w = prior.probabilities
    kmax = prior.max_duration
    result = {b: [] for b in thresholds}
    for nu in nu_scan:
        tasks = [(det, model, seed, (CHANGE_STREAM, nu, i), n, nu, kmax, thresholds) for i, n in blocks(runs, block_size)]
        parts = _map_blocks(_lpd_block, tasks, workers)
        for j, b in enumerate(thresholds):
            surv = 0
            s1 = s2 = 0.0
            counts = np.zeros(kmax)
            for part in parts:
                n_alive, cnt, det_mat = part[j]
                surv += n_alive
                counts += cnt
                x = det_mat[:, ks - 1].astype(np.float64) @ w
                s1 += math.fsum(x)
                s2 += math.fsum(x * x)
            if surv == 0:
                result[b].append({"nu": nu, "survivors": 0, "pd_k": np.full(ks.size, np.nan), "lpd": np.nan, "se": np.nan})
                continue
            mean = s1 / surv
            var = max(s2 / surv - mean * mean, 0.0)
            se = math.sqrt(var / max(surv - 1, 1))
            result[b].append(
                {"nu": nu, "survivors": surv, "pd_k": counts[ks - 1] / surv, "lpd": mean, "se": se}
            )
    return result


def lpd_estimate(
    detector,
    model,
    prior: DurationPrior,
    nu_scan=None,
    runs: int = 100_000,
    seed: int = 0,
    *,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
):
    """LPD: minimum over onsets of the prior-weighted conditional detection
    probability.  Returns ``(EstimateWithSE, argmin_nu)``."""
    rows = next(iter(lpd_scan(detector, model, prior, nu_scan, runs, seed, workers=workers, block_size=block_size).values()))
    return _lpd_min(rows)


def _lpd_min(rows):
    ok = [r for r in rows if r["survivors"] > 0]
    if len(ok) < len(rows):
        warnings.warn("some onsets have no surviving runs and were skipped", SamplingWarning, stacklevel=3)
    if not ok:
        raise RuntimeError("no onset in the scan has surviving runs")
    best = min(ok, key=lambda r: r["lpd"])
    if any(r["survivors"] < MIN_SURVIVORS for r in ok):
        warnings.warn(f"fewer than {MIN_SURVIVORS} surviving runs at some onset", SamplingWarning, stacklevel=3)
    est = EstimateWithSE(float(best["lpd"]), float(best["se"]), int(best["survivors"]), best["nu"])
    return est, best["nu"]


# ARL ------------------------------------------------------------------------


def _prefix_len(detector):
    return 1 if detector.kind == "cusum" else detector.window - 1


def _arl_block(detector, model, seed, key, n, cap, first_chunk):
    """Run ``n`` paths until alarm or ``cap``; return (times, censored mask)."""
    rng = block_rng(seed, *key)
    b = detector.threshold_
    T = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    t0 = 0
    carry = None
    chunk = max(first_chunk, _prefix_len(detector) + 1)
    plen = _prefix_len(detector)
    while active.size and t0 < cap:
        c = min(chunk, cap - t0)
        lam = model.sample_llr(rng, (active.size, c))
        if carry is None:
            Z = detector.scores(lam)
            full = lam
        else:
            full = np.concatenate([carry, lam], axis=1)
            Z = detector.scores(full)[:, carry.shape[1] :]
        hit = _first_alarm(Z, b)
        stopped = hit > 0
        T[active[stopped]] = t0 + hit[stopped]
        keep = ~stopped
        active = active[keep]
        if detector.kind == "cusum":
            carry = np.maximum(Z[keep, -1:], 0.0)
        elif plen > 0:
            carry = full[keep, -plen:]
        else:
            carry = np.empty((keep.sum(), 0))
        t0 += c
        chunk = min(chunk * 2, max(256, _CHUNK_ELEMENTS // max(active.size, 1)))
    censored = np.zeros(n, dtype=bool)
    censored[active] = True
    T[active] = cap
    return T, censored


def arl_estimate(
    detector,
    model,
    runs: int = 100_000,
    seed: int = 0,
    cap: int = 10**7,
    *,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
    first_chunk: int = 256,
    return_times: bool = False,
):
    """Average run length to false alarm with standard error.

    Runs still silent at ``cap`` are censored; their residual life is
    closed geometrically with the overall hazard estimate.  More than 0.1%
    censored runs triggers a :class:`SamplingWarning`.
    """
    det = _bind(detector, model)
    tasks = [(det, model, seed, (ARL_STREAM, i), n, int(cap), first_chunk) for i, n in blocks(runs, block_size)]
    parts = _map_blocks(_arl_block, tasks, workers)
    T = np.concatenate([p[0] for p in parts])
    cens = np.concatenate([p[1] for p in parts])
    n_cens = int(cens.sum())
    values = T.astype(np.float64)
    if n_cens:
        alarms = runs - n_cens
        hazard = alarms / float(T.sum()) if alarms else 0.0
        values[cens] += (1.0 - hazard) / hazard if hazard > 0 else math.inf
        if n_cens > 1e-3 * runs:
            warnings.warn(f"{n_cens} of {runs} runs censored at {cap}", SamplingWarning, stacklevel=2)
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0
    est = EstimateWithSE(mean, se, int(runs), None, {"censored": n_cens, "cap": int(cap)})
    if return_times:
        return est, T
    return est


# QQ -------------------------------------------------------------------------


def qq_geometric_data(stopping_times, probs=None):
    """Quantile pairs against the geometric law with parameter ``K / sum T``.

    Returns ``(pairs, ks)`` where ``pairs`` is an array of
    ``(theoretical, empirical)`` quantiles at ``probs`` (default 99 evenly
    spaced levels) and ``ks`` the Kolmogorov-Smirnov distance between the
    empirical cdf and the fitted geometric cdf over the observed support.
    """
    T = np.asarray(stopping_times, dtype=np.int64)
    if T.size < 1000:
        raise ValueError("need at least 1000 stopping times")
    if np.any(T < 1):
        raise ValueError("stopping times must be >= 1")
    p = T.size / float(T.sum())
    probs = np.linspace(0.01, 0.99, 99) if probs is None else np.asarray(probs, dtype=float)
    if p >= 1.0:
        theo = np.ones_like(probs)
    else:
        theo = np.maximum(1.0, np.ceil(np.log1p(-probs) / np.log1p(-p)))
    emp = np.quantile(T, probs, method="inverted_cdf").astype(float)
    # KS over integer support: compare cdfs at every attained value
    ts = np.unique(T)
    ecdf = np.searchsorted(np.sort(T), ts, side="right") / T.size
    gcdf = -np.expm1(ts * np.log1p(-p)) if p < 1 else np.ones(ts.size)
    below = np.concatenate([[0.0], ecdf[:-1]])
    gbelow = -np.expm1((ts - 1) * np.log1p(-p)) if p < 1 else np.where(ts > 1, 1.0, 0.0)
    ks = float(max(np.max(np.abs(ecdf - gcdf)), np.max(np.abs(below - gbelow))))
    return np.column_stack([theo, emp]), ks
