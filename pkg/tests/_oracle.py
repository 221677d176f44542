"""Exhaustive enumeration oracle for the two-point LLR model.

Everything here is written from the defining sums, independently of the
library's batch and streaming code paths.
"""

import itertools

import numpy as np
from scipy import stats


def regimes(n, nu=None, duration=None):
    """Per-step regime flags (True = post-change) for steps 1..n."""
    if nu is None:
        return np.zeros(n, dtype=bool)
    t = np.arange(1, n + 1)
    return (t > nu) & (t <= nu + duration)


def all_paths(model, n, post):
    """Every +up/-down path of length n with its probability."""
    ups = np.array(list(itertools.product([True, False], repeat=n)))
    lam = np.where(ups, model.up, -model.down)
    p = np.where(post, model.p_post, model.p_pre)[None, :]
    prob = np.prod(np.where(ups, p, 1 - p), axis=1)
    return lam, prob


def lattice_warmup(model, M, b):
    """mFMA warm-up thresholds from binomial tails: the smallest support
    point whose n-sum exceedance does not exceed that of the M-sum at b."""
    k_M = np.arange(M + 1)
    vals_M = k_M * model.up - (M - k_M) * model.down
    target = stats.binom.pmf(k_M, M, model.p_pre)[vals_M >= b].sum()
    out = []
    for n in range(1, M):
        best = np.inf
        for k in range(n, -1, -1):
            s = k * model.up - (n - k) * model.down
            if stats.binom.sf(k - 1, n, model.p_pre) <= target + 1e-15:
                best = s
            else:
                break
        out.append(best)
    return out


def statistics(kind, lam, M=None):
    """Statistic paths (rows) from the defining window sums."""
    K, n = lam.shape
    out = np.empty((K, n))
    for t in range(1, n + 1):
        if kind in ("cusum", "wl_cusum"):
            L = t if kind == "cusum" else min(t, M)
            out[:, t - 1] = np.max([lam[:, t - j : t].sum(axis=1) for j in range(1, L + 1)], axis=0)
        else:
            out[:, t - 1] = lam[:, max(0, t - M) : t].sum(axis=1)
    return out


def alarm_matrix(kind, lam, b, M=None, model=None):
    """Boolean matrix of threshold crossings, per-step thresholds for mFMA."""
    base = "fma" if kind == "mfma" else kind
    S = statistics(base, lam, M)
    thr = np.full(lam.shape[1], float(b))
    if kind == "mfma":
        warm = lattice_warmup(model, M, b)
        k = min(len(warm), lam.shape[1])
        thr[:k] = warm[:k]
    return S >= thr[None, :] - 1e-12


def survival(kind, model, n, b, M=None, nu=None, duration=None):
    """Exact P(T > j), j = 0..n."""
    post = regimes(n, nu, duration)
    lam, prob = all_paths(model, n, post)
    A = alarm_matrix(kind, lam, b, M, model)
    alive = ~np.cumsum(A, axis=1).astype(bool)
    return np.concatenate([[1.0], (prob[:, None] * alive).sum(axis=0)])


def streaming_survival(det, model, n, runs, seed, nu=None, duration=None):
    """P(T > j) from a detector stepped one observation at a time."""
    rng = np.random.default_rng(seed)
    post = regimes(n, nu, duration)
    X = model.sample(rng, (runs, n), post=np.broadcast_to(post, (runs, n)))
    det.fit()
    counts = np.zeros(n + 1)
    for row in X:
        det.reset()
        T = n + 1
        for t, x in enumerate(row, start=1):
            if det.step(x)[1]:
                T = t
                break
        counts[:T] += 1
    return counts / runs
