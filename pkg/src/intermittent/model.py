"""
Observation models for intermittent changes.

A model supplies the instantaneous log-likelihood ratio (LLR) of one
observation, the exact laws of LLR partial sums under the nominal (``pre``)
and the changed (``post``) regimes, and a sampler.  Detection rules and the
evaluators only talk to a model through this surface, so other families can
be added without touching them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import special

from ._rng import substream

__all__ = [
    "Regime",
    "GaussianChangeModel",
    "TwoPointLLRModel",
    "ChangeScenario",
    "DurationPrior",
    "INFINITY",
    "norm_cdf",
    "norm_sf",
    "norm_ppf",
    "generate",
]

INFINITY = math.inf


class Regime(str, enum.Enum):
    PRE = "pre"
    POST = "post"

    @classmethod
    def coerce(cls, value) -> "Regime":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"regime must be 'pre' or 'post'; got {value!r}") from None


def norm_cdf(x):
    return special.ndtr(x)


def norm_sf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def norm_ppf(p):
    return special.ndtri(p)


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise ValueError("probability must lie strictly inside (0, 1)")
    return p


@dataclass(frozen=True)
class GaussianChangeModel:
    """Mean shift in i.i.d. Gaussian noise.

    Pre-change observations are N(0, sigma^2), post-change N(mu, sigma^2).
    The LLR of one observation is ``(mu/sigma^2) y - mu^2/(2 sigma^2)`` and
    its law depends on the signal-to-noise ratio ``q = mu^2/sigma^2`` only:
    N(-q/2, q) before the change and N(q/2, q) during it.
    """

    mu: float = 1.0
    sigma: float = 1.0

    continuous = True

    def __post_init__(self):
        if not np.isfinite(self.mu) or self.mu == 0:
            raise ValueError(f"mu must be finite and non-zero; got {self.mu}")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError(f"sigma must be positive; got {self.sigma}")

    @property
    def q(self) -> float:
        return self.mu**2 / self.sigma**2

    def llr(self, y):
        y = np.asarray(y, dtype=float)
        out = (self.mu / self.sigma**2) * y - self.mu**2 / (2 * self.sigma**2)
        return out if out.ndim else float(out)

    def _llr_sum_z(self, n, x, regime):
        regime = Regime.coerce(regime)
        nq = np.asarray(n, dtype=float) * self.q
        shift = nq / 2 if regime is Regime.PRE else -nq / 2
        return (np.asarray(x, dtype=float) + shift) / np.sqrt(nq)

    def llr_sum_cdf(self, n, x, regime="pre"):
        """P(lambda_1 + ... + lambda_n < x) under the given regime."""
        _check_n(n)
        out = norm_cdf(self._llr_sum_z(n, x, regime))
        return out if np.ndim(out) else float(out)

    def llr_sum_sf(self, n, x, regime="pre"):
        """P(lambda_1 + ... + lambda_n >= x); accurate in the upper tail."""
        _check_n(n)
        out = norm_sf(self._llr_sum_z(n, x, regime))
        return out if np.ndim(out) else float(out)

    def llr_sum_quantile(self, n, p, regime="pre"):
        _check_n(n)
        p = _check_prob(p)
        regime = Regime.coerce(regime)
        nq = np.asarray(n, dtype=float) * self.q
        mean = -nq / 2 if regime is Regime.PRE else nq / 2
        out = mean + np.sqrt(nq) * norm_ppf(p)
        return out if np.ndim(out) else float(out)

    def lr_cdf(self, v, regime="pre"):
        """cdf of the likelihood ratio exp(lambda_1); zero for v <= 0."""
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        pos = v > 0
        if np.any(pos):
            with np.errstate(divide="ignore"):
                out[pos] = norm_cdf(self._llr_sum_z(1, np.log(v[pos]), regime))
        return out if out.ndim else float(out)

    def warmup_score(self, n, s, window):
        """Map a partial LLR sum of ``n < window`` terms onto the full-window
        scale, i.e. ``H_window^{-1}(H_n(s))``, so that ``s >= b_n`` exactly
        when the score is ``>= b``."""
        n = np.asarray(n, dtype=float)
        q = self.q
        return -window * q / 2 + np.sqrt(window / n) * (np.asarray(s, dtype=float) + n * q / 2)

    def sample(self, rng: np.random.Generator, size, post=False):
        """Draw observations; ``post`` is a bool or a boolean mask broadcastable to ``size``."""
        y = rng.standard_normal(size)
        y *= self.sigma
        if np.any(post):
            y += self.mu * np.asarray(post, dtype=float)
        return y

    def sample_llr(self, rng: np.random.Generator, size, post=False):
        """Draw LLRs directly (same stream as ``llr(sample(...))``)."""
        z = rng.standard_normal(size)
        q = self.q
        sq = math.sqrt(q)
        z *= sq
        post = np.asarray(post, dtype=bool)
        if post.ndim == 0:
            z += q / 2 if post else -q / 2
        else:
            z += np.where(post, q / 2, -q / 2)
        return z


def _check_n(n):
    if np.any(np.asarray(n) < 1):
        raise ValueError("number of summands must be >= 1")


@dataclass(frozen=True)
class TwoPointLLRModel:
    """LLR taking the two values ``+up`` and ``-down``.

    ``p_pre`` and ``p_post`` are the probabilities of ``+up`` before and
    during the change.  Observations *are* the LLR values, so ``llr`` is the
    identity.  Partial sums are lattice-valued and their laws are binomial,
    which makes every operating characteristic computable exactly by
    enumeration; the model exists mainly as an oracle for tests.
    """

    up: float = 1.0
    down: float = 1.0
    p_pre: float = 0.3
    p_post: float = 0.7

    continuous = False

    def __post_init__(self):
        if self.up <= 0 or self.down <= 0:
            raise ValueError("up and down must be positive")
        for p in (self.p_pre, self.p_post):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")

    def _p(self, regime):
        return self.p_pre if Regime.coerce(regime) is Regime.PRE else self.p_post

    def llr(self, y):
        y = np.asarray(y, dtype=float)
        return y if y.ndim else float(y)

    def sum_support(self, n):
        """Support points of the n-term sum (ascending) and their pre/post pmfs."""
        k = np.arange(n + 1)
        values = k * self.up - (n - k) * self.down
        return values

    def _pmf(self, n, regime):
        p = self._p(regime)
        k = np.arange(n + 1)
        logc = special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
        with np.errstate(divide="ignore"):
            lp = np.where(k > 0, k * np.log(p) if p > 0 else -np.inf, 0.0)
            lq = np.where(n - k > 0, (n - k) * np.log1p(-p) if p < 1 else -np.inf, 0.0)
        return np.exp(logc + lp + lq)

    def llr_sum_cdf(self, n, x, regime="pre"):
        """P(S_n < x) (strict, matching the alarm event S_n >= x)."""
        _check_n(n)
        values = self.sum_support(int(n))
        pmf = self._pmf(int(n), regime)
        x = np.asarray(x, dtype=float)
        out = (pmf[None, :] * (values[None, :] < x.reshape(-1, 1))).sum(axis=1).reshape(x.shape)
        return out if out.ndim else float(out)

    def llr_sum_sf(self, n, x, regime="pre"):
        out = 1.0 - np.asarray(self.llr_sum_cdf(n, x, regime))
        return out if out.ndim else float(out)

    def llr_sum_quantile(self, n, p, regime="pre"):
        """Smallest support point s with P(S_n >= s) <= 1 - p (inf if none)."""
        _check_n(n)
        p = _check_prob(p)
        values = self.sum_support(int(n))
        pmf = self._pmf(int(n), regime)
        tail = np.cumsum(pmf[::-1])[::-1]  # P(S_n >= values[i])
        flat = np.atleast_1d(p)
        out = np.empty(flat.shape)
        for i, pi in enumerate(flat):
            ok = np.nonzero(tail <= 1 - pi + 1e-15)[0]
            out[i] = values[ok[0]] if ok.size else np.inf
        out = out.reshape(np.shape(p))
        return out if out.ndim else float(out)

    def lr_cdf(self, v, regime="pre"):
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        pos = v > 0
        out[pos] = self.llr_sum_cdf(1, np.log(v[pos]), regime)
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size, post=False):
        p = np.where(np.asarray(post, dtype=bool), self.p_post, self.p_pre)
        u = rng.random(size)
        return np.where(u < p, self.up, -self.down)

    sample_llr = sample


@dataclass(frozen=True)
class ChangeScenario:
    """Change onset and duration.

    ``nu`` is the index of the last pre-change observation (``INFINITY`` for
    no change); observations ``nu+1 .. nu+duration`` are post-change.
    """

    nu: float = INFINITY
    duration: int = 1

    def __post_init__(self):
        if self.nu != INFINITY and (self.nu < 0 or int(self.nu) != self.nu):
            raise ValueError(f"nu must be a non-negative integer or INFINITY; got {self.nu}")
        if self.nu != INFINITY and self.duration < 1:
            raise ValueError(f"duration must be >= 1; got {self.duration}")

    @property
    def no_change(self) -> bool:
        return self.nu == INFINITY

    def post_mask(self, length: int) -> np.ndarray:
        """Boolean mask over times 1..length marking post-change observations."""
        t = np.arange(1, length + 1)
        if self.no_change:
            return np.zeros(length, dtype=bool)
        return (t >= self.nu + 1) & (t <= self.nu + self.duration)


@dataclass(frozen=True)
class DurationPrior:
    """Weights over possible change durations (support = positive weights)."""

    weights: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        w = {int(k): float(v) for k, v in dict(self.weights).items() if v != 0}
        if not w:
            raise ValueError("prior must have non-empty support")
        if any(k < 1 for k in w):
            raise ValueError("durations must be positive integers")
        if any(v < 0 for v in w.values()):
            raise ValueError("weights must be non-negative")
        total = sum(w.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1; got {total!r}")
        object.__setattr__(self, "weights", dict(sorted(w.items())))

    @classmethod
    def uniform(cls, durations: Iterable[int]) -> "DurationPrior":
        durations = sorted(set(int(k) for k in durations))
        n = len(durations)
        return cls({k: 1.0 / n for k in durations})

    @property
    def support(self) -> tuple:
        return tuple(self.weights)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array(list(self.weights.values()))

    @property
    def min_duration(self) -> int:
        return self.support[0]

    @property
    def max_duration(self) -> int:
        return self.support[-1]


def generate(model, scenario: ChangeScenario, length: int, seed: int) -> np.ndarray:
    """Deterministic synthetic observations for one scenario."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.Generator(np.random.PCG64(substream(seed, 0)))
    return model.sample(rng, length, post=scenario.post_mask(length))
