"""
Closed-form bounds and approximations for the four rules.

Everything here is a pure function of the model and the design parameters:
upper bounds on LCPFA and lower bounds on LPD for the window-limited rules,
ARL lower bounds implied by the false-alarm classes, exponential
(geometric) conversions between ARL and LCPFA, renewal-theoretic CUSUM
approximations, and two ARL approximations for the classical FMA.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .model import DurationPrior, GaussianChangeModel, norm_cdf, norm_sf

__all__ = [
    "Method",
    "ApproximationResult",
    "wl_lcpfa_upper",
    "wl_lpd_lower",
    "fma_lcpfa_upper",
    "fma_lpd_lower",
    "gamma_from_lcpfa",
    "gamma_from_lupfa",
    "arl_from_lcpfa_geometric",
    "lcpfa_from_arl_geometric",
    "cusum_constant_C",
    "siegmund_constant",
    "cusum_hazard_constant",
    "cusum_arl_approx",
    "cusum_lpfa_approx",
    "cusum_pd_approx",
    "fma_arl_lai",
    "fma_arl_noonan_zhigljavsky",
    "InvalidRegime",
    "SIEGMUND_RHO",
]

SIEGMUND_RHO = 0.582597
NZ_SHIFT = 0.8239


class Method(str, enum.Enum):
    LEMMA3 = "lemma3"
    LEMMA4 = "lemma4"
    PROP2 = "prop2"
    PROP3 = "prop3"
    EXP_CONVERSION = "exp_conversion"
    RENEWAL_C = "renewal_c"
    SIEGMUND = "siegmund"
    LAI = "lai"
    NOONAN_ZHIGLJAVSKY = "noonan_zhigljavsky"
    PD_RENEWAL = "pd_renewal"


@dataclass(frozen=True)
class ApproximationResult:
    value: float
    method: Method
    validity_note: str = ""

    def __float__(self):
        return float(self.value)


class InvalidRegime(ValueError):
    """Approximation evaluated outside the range where it is defined."""


def _model(model):
    return model if model is not None else GaussianChangeModel()


def _check_window(M, name="M"):
    if int(M) != M or M < 1:
        raise ValueError(f"{name} must be a positive integer; got {M!r}")
    return int(M)


# window-limited rules -------------------------------------------------------


def wl_lcpfa_upper(model, b: float, M: int, m: int) -> float:
    """``1 - [prod_{k=1..M} P_pre(S_k < b)]^m`` for the window-limited CUSUM."""
    model = _model(model)
    M, m = _check_window(M), _check_window(m, "m")
    k = np.arange(1, M + 1)
    log_prod = float(np.sum(np.log(model.llr_sum_cdf(k, b, "pre"))))
    return -math.expm1(m * log_prod)


def wl_lpd_lower(model, b: float, M: int, prior: DurationPrior) -> float:
    """``sum_k pi_k P_post(S_{min(k,M)} >= b)`` for the window-limited CUSUM."""
    model = _model(model)
    M = _check_window(M)
    ks = np.minimum(np.array(prior.support), M)
    return float(np.dot(prior.probabilities, model.llr_sum_sf(ks, b, "post")))


def fma_lcpfa_upper(model, b: float, M: int, m: int) -> float:
    """``1 - P_pre(S_M < b)^m`` for the (modified) FMA."""
    model = _model(model)
    M, m = _check_window(M), _check_window(m, "m")
    return -math.expm1(m * math.log(model.llr_sum_cdf(M, b, "pre")))


def fma_lpd_lower(model, b: float, M: int, prior: DurationPrior) -> float:
    """``P_post(S_M >= b)``; requires every possible duration to be >= M."""
    model = _model(model)
    M = _check_window(M)
    if M > prior.min_duration:
        raise ValueError(f"window {M} exceeds the shortest duration {prior.min_duration}")
    return float(model.llr_sum_sf(M, b, "post"))


# class relations and exponential conversions -------------------------------


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1); got {alpha}")


def gamma_from_lcpfa(m: int, alpha: float) -> float:
    """ARL lower bound ``1 + m (1 - alpha) / alpha`` implied by LCPFA <= alpha."""
    _check_window(m, "m")
    _check_alpha(alpha)
    return 1.0 + m * (1.0 - alpha) / alpha


def gamma_from_lupfa(m: int, alpha: float) -> float:
    """ARL lower bound ``1 + (m/2)(floor(1/alpha) - 1)`` implied by LUPFA <= alpha."""
    _check_window(m, "m")
    _check_alpha(alpha)
    return 1.0 + 0.5 * m * (math.floor(1.0 / alpha) - 1)


def arl_from_lcpfa_geometric(m: int, alpha: float) -> float:
    """ARL of a geometric stopping time whose m-step conditional PFA is alpha."""
    _check_window(m, "m")
    _check_alpha(alpha)
    # 1 - (1-alpha)^(1/m), written to keep precision for small alpha
    return -1.0 / math.expm1(math.log1p(-alpha) / m)


def lcpfa_from_arl_geometric(arl: float, m: int) -> float:
    """``1 - (1 - 1/ARL)^m``."""
    if not arl > 1:
        raise ValueError(f"ARL must exceed 1; got {arl}")
    if m == 0:
        return 0.0
    return -math.expm1(m * math.log1p(-1.0 / arl))


# CUSUM renewal approximations -----------------------------------------------


def cusum_constant_C(model=None, n_terms: int = 10_000, tol: float = 1e-14) -> ApproximationResult:
    """Renewal constant ``C = (2/q) exp(-2 sum_t Phi(-sqrt(q t)/2) / t)``.

    The series is summed until a term drops below ``tol`` (or ``n_terms``
    terms have been used).  The Siegmund value is in ``validity_note``.
    """
    q = _model(model).q
    s = 0.0
    for t in range(1, int(n_terms) + 1):
        term = norm_cdf(-0.5 * math.sqrt(q * t)) / t
        s += term
        if term < tol:
            break
    C = (2.0 / q) * math.exp(-2.0 * s)
    return ApproximationResult(C, Method.RENEWAL_C, f"siegmund={siegmund_constant(model).value!r}; terms={t}")


def siegmund_constant(model=None) -> ApproximationResult:
    """Corrected Brownian approximation ``exp(-0.582597 sqrt(q))``; good for q <= 2."""
    q = _model(model).q
    note = "accurate for moderate q" if q <= 2 else "q > 2: approximation degrades"
    return ApproximationResult(math.exp(-SIEGMUND_RHO * math.sqrt(q)), Method.SIEGMUND, note)


def cusum_hazard_constant(model=None) -> ApproximationResult:
    """``(q/2) C^2``: the constant ``K`` in ``ARL ~ e^b / K`` for the Gaussian CUSUM.

    The series ``C`` above is the overshoot correction ``nu(sqrt q)``; the
    asymptotic ARL of Page's CUSUM also carries the Kullback-Leibler number
    ``q/2`` and a second overshoot factor.  At q = 1 this constant is about
    0.157 while ``C`` itself is about 0.560.
    """
    q = _model(model).q
    C = cusum_constant_C(model).value
    return ApproximationResult(0.5 * q * C * C, Method.RENEWAL_C, "K = (q/2) C^2")


def _renewal_constant(model, corrected):
    return cusum_hazard_constant(model).value if corrected else cusum_constant_C(model).value


def cusum_arl_approx(model, b: float, *, corrected: bool = False) -> float:
    """``e^b / C`` (``corrected=True`` uses :func:`cusum_hazard_constant` instead of ``C``)."""
    return math.exp(b) / _renewal_constant(model, corrected)


def cusum_lpfa_approx(model, b: float, m: int, *, corrected: bool = False) -> float:
    """``1 - exp(-m C e^{-b})`` (``corrected=True`` as in :func:`cusum_arl_approx`)."""
    C = _renewal_constant(model, corrected)
    return -math.expm1(-m * C * math.exp(-b))


def cusum_pd_approx(model, b: float, prior: DurationPrior, *, corrected: bool = False) -> float:
    """``sum_k pi_k Phi(k / sqrt(b s2 / mu^3) + b / mu)``.

    ``mu = q/2`` and ``s2 = q`` are the post-change mean and variance of the
    LLR increments.  The default evaluates the expression exactly as stated
    by its source; its argument is at least ``b / mu`` so the value is close
    to 1 for any useful threshold.  ``corrected=True`` uses the centred
    normal limit of the detection delay,
    ``Phi((k - b/mu) / sqrt(b s2 / mu^3))``.
    """
    q = _model(model).q
    mu, s2 = q / 2.0, q
    ks = np.array(prior.support, dtype=float)
    scale = math.sqrt(b * s2 / mu**3) if b > 0 else 0.0
    if scale == 0.0:
        arg = np.full(ks.shape, np.inf)
    elif corrected:
        arg = (ks - b / mu) / scale
    else:
        arg = ks / scale + b / mu
    return float(np.dot(prior.probabilities, norm_cdf(arg)))


# FMA ARL approximations -----------------------------------------------------


def fma_arl_lai(model, b: float, M: int) -> float:
    """``1 / (1 - Phi((b + M q/2) / sqrt(M q)))``; asymptotically exact as b grows."""
    q = _model(model).q
    M = _check_window(M)
    return 1.0 / norm_sf((b + M * q / 2.0) / math.sqrt(M * q))


def _phi(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _nz_F1(h, hM):
    return norm_cdf(h) * norm_cdf(hM) - _phi(hM) * (h * norm_cdf(h) + _phi(h))


def _nz_F2(h, hM):
    sp = math.sqrt(math.pi)
    Ph, ph = norm_cdf(h), _phi(h)
    PhM, phM = norm_cdf(hM), _phi(hM)
    closed = (
        0.5 * phM**2 * ((h * h - 1 + sp * h) * Ph + (h + sp) * ph)
        - phM * PhM * ((h + hM) * Ph + ph)
        + Ph * PhM**2
    )

    def f(x):
        return norm_cdf(h - x) * (_phi(hM + x) * norm_cdf(hM - x) - sp * phM**2 * norm_cdf(math.sqrt(2.0) * x))

    upper = hM + 12.0
    tail, _ = integrate.quad(f, 0.0, max(upper, 1.0), epsabs=1e-12, epsrel=1e-12, limit=200)
    return closed + tail


def fma_arl_noonan_zhigljavsky(model, b: float, M: int, *, additive_windows: int = 2) -> ApproximationResult:
    """MOSUM approximation of the classical FMA ARL.

    The threshold is standardised to ``h = (b + M q/2) / sqrt(M q)`` and
    ``h_M = h + 0.8239 / sqrt(M)``; the approximation is

        ARL = -M F2 / (theta^2 log theta) + additive_windows * M,

    with ``theta = F2 / F1``.  ``additive_windows=2`` reproduces the
    published reference values; ``1`` gives the expression as commonly
    printed.
    """
    model = _model(model)
    M = _check_window(M)
    q = model.q
    h = (b + M * q / 2.0) / math.sqrt(M * q)
    hM = h + NZ_SHIFT / math.sqrt(M)
    F1 = _nz_F1(h, hM)
    F2 = _nz_F2(h, hM)
    theta = F2 / F1 if F1 > 0 else math.nan
    if not 0.0 < theta < 1.0:
        raise InvalidRegime(f"theta = {theta!r} outside (0, 1) at b={b}, M={M}")
    value = -M * F2 / (theta**2 * math.log(theta)) + additive_windows * M
    note = "" if q == 1.0 else "evaluated on the standardised scale; intended for q = 1"
    return ApproximationResult(value, Method.NOONAN_ZHIGLJAVSKY, note)
