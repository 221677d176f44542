"""
Stopping rules for intermittent changes.

Four rules are provided, all as scikit-learn style estimators:

- :class:`CUSUM` -- Page's CUSUM, ``V_n = max(0, V_{n-1}) + lambda_n``.
- :class:`WindowLimitedCUSUM` -- the largest sum of the last ``j`` LLRs,
  ``1 <= j <= min(n, window)``.
- :class:`FMA` -- finite moving average of the last ``min(n, window)`` LLRs,
  compared to a single threshold from the first observation on.
- :class:`ModifiedFMA` -- FMA whose first ``window - 1`` thresholds are
  lowered so that a truncated window crosses with the same pre-change
  probability as a full one.

Each detector works in two modes.  The streaming mode (:meth:`step`) keeps a
small state and consumes one LLR at a time; the batch mode
(:meth:`transform`, :meth:`predict`, :meth:`scores`) processes a whole matrix
of streams (one stream per row) with vectorised numpy code and is what the
Monte Carlo evaluators use.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import minimum_filter1d
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .model import ChangeScenario, GaussianChangeModel, generate

__all__ = [
    "ThresholdSchedule",
    "BaseDetector",
    "CUSUM",
    "WindowLimitedCUSUM",
    "FMA",
    "ModifiedFMA",
    "Censored",
    "make_detector",
    "running_max_statistic",
    "run_to_stop",
    "fma_warmup_thresholds",
]


@dataclass(frozen=True)
class ThresholdSchedule:
    """Base threshold ``b`` plus optional thresholds for steps ``1..len(warmup)``."""

    base: float
    warmup: tuple = field(default_factory=tuple)

    def at(self, n: int) -> float:
        if 1 <= n <= len(self.warmup):
            return self.warmup[n - 1]
        return self.base

    def vector(self, n_steps: int) -> np.ndarray:
        out = np.full(n_steps, self.base, dtype=float)
        k = min(len(self.warmup), n_steps)
        out[:k] = self.warmup[:k]
        return out


class Censored(int):
    """Stopping time censored at the horizon (compares equal to the horizon)."""

    def __repr__(self):
        return f"Censored({int(self)})"


def fma_warmup_thresholds(model, window: int, threshold: float) -> list:
    """Warm-up thresholds ``b_n = H_n^{-1}(H_M(b))`` for ``n = 1..M-1``.

    ``H_n`` is the pre-change cdf of the sum of ``n`` LLRs.  For the Gaussian
    model this is ``-n q/2 + sqrt(n/M) (b + M q/2)``.
    """
    window = int(window)
    if window < 2:
        raise ValueError("window must be >= 2 for a warm-up schedule")
    if not np.isfinite(threshold):
        return [float(threshold)] * (window - 1)
    if isinstance(model, GaussianChangeModel):
        q = model.q
        n = np.arange(1, window)
        b_n = -n * q / 2 + np.sqrt(n / window) * (threshold + window * q / 2)
        return [float(v) for v in b_n]
    p = model.llr_sum_cdf(window, threshold, "pre")
    if p <= 0:
        return [-np.inf] * (window - 1)
    if p >= 1:
        return [np.inf] * (window - 1)
    return [float(model.llr_sum_quantile(n, p, "pre")) for n in range(1, window)]


def _check_streams(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return X[None, :], True
    if X.ndim != 2:
        raise ValueError(f"expected a 1-d stream or a 2-d array of streams; got shape {X.shape}")
    if X.shape[1] == 0:
        raise ValueError("streams must contain at least one observation")
    if np.isnan(X).any():
        raise ValueError("streams contain NaN")
    return X, False


def _prefix_sums(llr: np.ndarray) -> np.ndarray:
    """``P[:, n] = lambda_1 + ... + lambda_n`` with ``P[:, 0] = 0``."""
    P = np.empty((llr.shape[0], llr.shape[1] + 1))
    P[:, 0] = 0.0
    np.cumsum(llr, axis=1, out=P[:, 1:])
    return P


class BaseDetector(BaseEstimator):
    """Common machinery; subclasses define the statistic."""

    kind = None
    _has_window = True

    def _validate_params(self):
        if self._has_window:
            if not isinstance(self.window, (int, np.integer)) or self.window < 1:
                raise ValueError(f"window must be a positive integer; got {self.window!r}")
        if self.threshold is None or np.isnan(self.threshold):
            raise ValueError("threshold must be a number (use ThresholdCalibrator to find one)")

    def _build_schedule(self) -> ThresholdSchedule:
        return ThresholdSchedule(float(self.threshold))

    def fit(self, X=None, y=None):
        """Validate parameters and build the threshold schedule.

        The rules have no data-dependent parameters; ``X`` is accepted for
        pipeline compatibility and ignored.
        """
        self._validate_params()
        self.model_ = self.model if self.model is not None else GaussianChangeModel()
        self.schedule_ = self._build_schedule()
        self.threshold_ = self.schedule_.base
        self.reset()
        return self

    def _ensure_fitted(self):
        try:
            check_is_fitted(self, "schedule_")
        except NotFittedError:
            self.fit()

    # streaming ------------------------------------------------------------
    def reset(self):
        self.steps_taken_ = 0
        self.alarmed_ = False
        self.statistic_ = 0.0
        self._reset_state()
        return self

    def step(self, llr: float):
        """Consume one LLR; return ``(statistic, alarm)``.

        After the first alarm the detector is frozen and keeps returning the
        alarm value; call :meth:`reset` to start a new cycle.
        """
        self._ensure_fitted()
        if self.alarmed_:
            return self.statistic_, True
        self.steps_taken_ += 1
        stat = self._update(float(llr))
        self.statistic_ = stat
        self.alarmed_ = stat >= self.schedule_.at(self.steps_taken_)
        return stat, self.alarmed_

    # batch ----------------------------------------------------------------
    def transform(self, X):
        """Detection statistic at every step of every stream (LLRs computed
        from observations through the model)."""
        self._ensure_fitted()
        X, single = _check_streams(X)
        out = self._batch_statistic(self.model_.llr(X))
        return out[0] if single else out

    def scores(self, llr, *, any_threshold: bool = False):
        """Scores ``Z`` such that the rule alarms at step n iff ``Z[:, n-1] >= threshold_``.

        With ``any_threshold=True`` the scores must not depend on the current
        threshold (so one simulated sample can be re-thresholded at any level);
        rules that cannot provide that raise ``ValueError``.
        """
        self._ensure_fitted()
        llr = np.asarray(llr, dtype=float)
        return self._batch_statistic(llr)

    def predict(self, X):
        """First alarm time of each stream (1-based); 0 when no alarm."""
        self._ensure_fitted()
        X, single = _check_streams(X)
        Z = self.scores(self.model_.llr(X))
        alarm = Z >= self.threshold_
        hit = alarm.any(axis=1)
        t = np.where(hit, alarm.argmax(axis=1) + 1, 0)
        return int(t[0]) if single else t

    def _batch_statistic(self, llr: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _reset_state(self):
        raise NotImplementedError

    def _update(self, llr: float) -> float:
        raise NotImplementedError


class CUSUM(BaseDetector):
    """Page's CUSUM.

    Parameters
    ----------
    threshold : float
        Alarm when ``V_n >= threshold``.
    model : observation model, optional
        Defaults to ``GaussianChangeModel(1, 1)``.
    """

    kind = "cusum"
    _has_window = False

    def __init__(self, threshold=5.0, model=None):
        self.threshold = threshold
        self.model = model

    @property
    def window(self):
        return None

    def _reset_state(self):
        self._v = 0.0
        self.running_max_ = 0.0

    def _update(self, llr):
        self._v = max(0.0, self._v) + llr
        self.running_max_ = max(self.running_max_, self._v)
        return self._v

    def running_max_statistic(self) -> float:
        """Running maximum of the CUSUM path since the last reset (0 at start)."""
        return self.running_max_

    def _batch_statistic(self, llr):
        P = _prefix_sums(llr)
        return P[:, 1:] - np.minimum.accumulate(P[:, :-1], axis=1)


class WindowLimitedCUSUM(BaseDetector):
    """Window-limited CUSUM: ``max_{1<=j<=min(n,M)} (lambda_{n-j+1} + ... + lambda_n)``."""

    kind = "wl_cusum"

    def __init__(self, threshold=5.0, window=10, model=None):
        self.threshold = threshold
        self.window = window
        self.model = model

    def _reset_state(self):
        self._buf = deque(maxlen=self.window)

    def _update(self, llr):
        self._buf.append(llr)
        # CUSUM recursion re-run over the window
        v = -math.inf
        for x in self._buf:
            v = max(0.0, v) + x
        return v

    def _batch_statistic(self, llr):
        P = _prefix_sums(llr)
        M = self.window
        prev = P[:, :-1]
        if M == 1:
            lo = prev
        else:
            lo = minimum_filter1d(prev, M, axis=1, mode="nearest", origin=(M - 1) // 2)
        return P[:, 1:] - lo


class FMA(BaseDetector):
    """Finite moving average of the last ``min(n, window)`` LLRs.

    ``skip_warmup=True`` gives the variant that cannot stop before a full
    window has been observed.
    """

    kind = "fma"

    def __init__(self, threshold=5.0, window=5, model=None, skip_warmup=False):
        self.threshold = threshold
        self.window = window
        self.model = model
        self.skip_warmup = skip_warmup

    def _build_schedule(self):
        if self.skip_warmup and self.window > 1:
            return ThresholdSchedule(float(self.threshold), (math.inf,) * (self.window - 1))
        return ThresholdSchedule(float(self.threshold))

    def _reset_state(self):
        self._buf = deque(maxlen=self.window)

    def _update(self, llr):
        self._buf.append(llr)
        return math.fsum(self._buf)

    def _batch_statistic(self, llr):
        P = _prefix_sums(llr)
        M = self.window
        H = llr.shape[1]
        out = P[:, 1:].copy()
        if H >= M:
            out[:, M - 1 :] -= P[:, : H - M + 1]
        return out

    def scores(self, llr, *, any_threshold=False):
        Z = super().scores(llr)
        if self.skip_warmup:
            Z[:, : self.window - 1] = -np.inf
        return Z


class ModifiedFMA(FMA):
    """FMA with warm-up thresholds ``b_n = H_n^{-1}(H_M(b))`` for ``n < M``."""

    kind = "mfma"

    def __init__(self, threshold=5.0, window=5, model=None):
        self.threshold = threshold
        self.window = window
        self.model = model

    skip_warmup = False

    def _build_schedule(self):
        if self.window == 1:
            return ThresholdSchedule(float(self.threshold))
        warm = fma_warmup_thresholds(self.model_, self.window, self.threshold)
        return ThresholdSchedule(float(self.threshold), tuple(warm))

    def scores(self, llr, *, any_threshold=False):
        self._ensure_fitted()
        llr = np.asarray(llr, dtype=float)
        S = self._batch_statistic(llr)
        k = min(self.window - 1, S.shape[1])
        if k == 0:
            return S
        n = np.arange(1, k + 1)
        if getattr(self.model_, "continuous", False) and hasattr(self.model_, "warmup_score"):
            S[:, :k] = self.model_.warmup_score(n, S[:, :k], self.window)
        elif any_threshold:
            raise ValueError("threshold-free scores need a continuous model")
        else:
            # shift so that S_n >= b_n  <=>  Z_n >= b
            S[:, :k] += self.threshold_ - np.asarray(self.schedule_.warmup[:k])
        return S


_KINDS = {
    "cusum": CUSUM,
    "wl_cusum": WindowLimitedCUSUM,
    "fma": FMA,
    "mfma": ModifiedFMA,
}


def make_detector(kind: str, threshold=5.0, window=None, model=None, **kwargs):
    """Build a detector from its kind name (``cusum``, ``wl_cusum``, ``fma``, ``mfma``)."""
    try:
        cls = _KINDS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown rule {kind!r}; expected one of {sorted(_KINDS)}") from None
    if cls is CUSUM:
        if window is not None:
            raise ValueError("CUSUM takes no window")
        return CUSUM(threshold=threshold, model=model)
    if window is None:
        raise ValueError(f"{kind} needs a window")
    return cls(threshold=threshold, window=int(window), model=model, **kwargs)


def running_max_statistic(detector) -> float:
    if not isinstance(detector, CUSUM):
        raise TypeError("running maximum statistic is defined for CUSUM only")
    detector._ensure_fitted()
    return detector.running_max_statistic()


def run_to_stop(detector, model, scenario: ChangeScenario, seed: int, horizon: int):
    """Run a fresh copy of ``detector`` on generated data until the first alarm.

    Returns the alarm time, or ``Censored(horizon)`` when there is none.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    det = detector.set_params(model=model).fit() if detector.model is not model else detector.fit()
    det.reset()
    y = generate(model, scenario, horizon, seed)
    lam = model.llr(y)
    for n in range(horizon):
        _, alarm = det.step(lam[n])
        if alarm:
            return n + 1
    return Censored(horizon)
