"""
CUSUM operating characteristics from the integral-equation framework.

The CUSUM statistic is tracked on the likelihood-ratio scale
``R_n = exp(V_n)``, which obeys ``R_n = max(1, R_{n-1}) * Lambda_n`` and alarms
once ``R_n >= B = exp(b)``.  The survival function
``rho_l(r) = P(no alarm within l steps | R_0 = r)`` solves a Fredholm equation
on ``[0, B]``; piecewise-constant collocation at cell midpoints turns it into
the matrix recursion ``rho_l = K rho_{l-1}`` with

    K[i, j] = F(x_{j+1} / max(1, r_i)) - F(x_j / max(1, r_i)),

``F`` being the cdf of ``Lambda_1`` in the relevant regime.

Evaluators propagate the *distribution* of the discretised statistic forward
in time (``p_t = K_t^T p_{t-1}`` started at the cell that holds ``R_0 = 1``).
This is algebraically the same product of kernels as the backward recursion,
but it keeps the time order of pre- and post-change kernels explicit and
yields every ``P(T > l)`` of one scenario in a single pass.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import DurationPrior, GaussianChangeModel, Regime, TwoPointLLRModel

__all__ = [
    "Grid",
    "KernelMatrix",
    "ConvergenceWarning",
    "IEResult",
    "make_grid",
    "build_kernel",
    "survival_iterate",
    "propagate",
    "lcpfa_cusum",
    "lpd_cusum",
    "arl_cusum",
    "cusum_characteristics",
    "LatticeCUSUM",
]

DEFAULT_GRID_SIZE = 10_000
DEFAULT_L_MAX = 500
RATIO_TOL = 1e-10
HAZARD_RTOL = 1e-9
AUTO_MAX_SPACING = 0.05
_ROW_BLOCK = 512


class ConvergenceWarning(UserWarning):
    """The survival ratio did not stabilise within the scan range."""


@dataclass(frozen=True)
class Grid:
    """Cell boundaries ``0 = x_0 < ... < x_N = B`` with ``1`` among them."""

    boundaries: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.boundaries, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("grid needs at least two boundaries")
        if x[0] != 0.0 or np.any(np.diff(x) <= 0):
            raise ValueError("boundaries must start at 0 and increase strictly")
        object.__setattr__(self, "boundaries", x)

    @property
    def n_cells(self) -> int:
        return self.boundaries.size - 1

    @property
    def B(self) -> float:
        return float(self.boundaries[-1])

    @property
    def midpoints(self) -> np.ndarray:
        x = self.boundaries
        return 0.5 * (x[:-1] + x[1:])

    @property
    def start_cell(self) -> int:
        """Index of the cell holding ``r = 1`` (the CUSUM start ``V_0 = 0``).

        Any cell lying in ``[0, 1]`` has the same survival (the statistic
        restarts from 1), so the last one below 1 is used; when ``B <= 1``
        the whole range is below 1 and the last cell is returned.
        """
        below = np.nonzero(self.boundaries[1:] <= 1.0)[0]
        return int(below[-1]) if below.size else 0


def make_grid(b: float, n_cells: int = DEFAULT_GRID_SIZE, layout: str = "uniform") -> Grid:
    """Grid on ``[0, e^b]`` with a boundary exactly at 1.

    ``layout="uniform"`` spaces boundaries (almost) evenly in the
    likelihood-ratio scale: cells are split between ``[0, 1]`` and
    ``[1, B]`` in proportion to their lengths, each part being uniform.
    ``layout="log"`` keeps one cell for ``[0, 1]`` and spaces the rest
    evenly in ``V = log R`` on ``[0, b]``; it resolves the region near the
    reflecting barrier far better when ``b`` is large.  ``layout="auto"``
    uses the uniform layout while its spacing ``B / n_cells`` stays below
    0.05 and the log layout beyond.
    """
    n_cells = int(n_cells)
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    B = math.exp(b)
    if layout == "auto":
        layout = "uniform" if B / n_cells <= AUTO_MAX_SPACING else "log"
    if B <= 1.0 or n_cells == 1:
        return Grid(np.linspace(0.0, B, n_cells + 1))
    if layout == "uniform":
        n_low = min(max(1, int(round(n_cells / B))), n_cells - 1)
        low = np.linspace(0.0, 1.0, n_low + 1)
        high = np.linspace(1.0, B, n_cells - n_low + 1)
    elif layout == "log":
        low = np.array([0.0, 1.0])
        high = np.exp(np.linspace(0.0, b, n_cells))
        high[0], high[-1] = 1.0, B
    else:
        raise ValueError(f"unknown layout {layout!r}; expected 'uniform', 'log' or 'auto'")
    return Grid(np.concatenate([low, high[1:]]))


@dataclass(frozen=True)
class KernelMatrix:
    regime: Regime
    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def build_kernel(model, grid: Grid, regime="pre", dtype=np.float64) -> KernelMatrix:
    """Collocation matrix of the CUSUM survival equation in one regime."""
    regime = Regime.coerce(regime)
    x = grid.boundaries
    r = grid.midpoints
    N = grid.n_cells
    K = np.empty((N, N), dtype=dtype)
    scale = np.maximum(1.0, r)
    flat = np.nonzero(scale == 1.0)[0]
    if flat.size:
        row = np.diff(model.lr_cdf(x, regime))
        K[flat] = row
    rest = np.nonzero(scale > 1.0)[0]
    for s in range(0, rest.size, _ROW_BLOCK):
        idx = rest[s : s + _ROW_BLOCK]
        F = model.lr_cdf(x[None, :] / scale[idx, None], regime)
        K[idx] = np.diff(F, axis=1)
    np.clip(K, 0.0, 1.0, out=K)
    return KernelMatrix(regime, K)


def survival_iterate(kernel_sequence, start=None) -> list:
    """Backward recursion ``rho_l = K_l rho_{l-1}``, ``rho_0 = start`` (ones).

    Returns ``[rho_0, rho_1, ..., rho_L]``.  ``rho_l`` is the survival over
    the *last* ``l`` steps of the sequence, so for a time-varying sequence
    ``kernel_sequence`` must be listed in reverse time order (last
    observation first) to read the full-horizon survival from ``rho_L``.
    """
    kernels = list(kernel_sequence)
    if not kernels:
        raise ValueError("empty kernel sequence")
    n = kernels[0].n
    if any(k.n != n for k in kernels):
        raise ValueError("kernels must share a grid")
    rho = np.ones(n) if start is None else np.asarray(start, dtype=float).copy()
    out = [rho]
    for k in kernels:
        rho = k.entries @ rho
        out.append(rho)
    return out


def _matvec_t(K: np.ndarray, p: np.ndarray) -> np.ndarray:
    return p @ K


def propagate(kernels, n_steps: int, start, *, normalise=True):
    """Forward propagation of the discretised law of the statistic.

    ``kernels`` is either one :class:`KernelMatrix` or a callable mapping the
    step index ``t = 1..n_steps`` to one.  Returns ``(step_ratios, state)``
    where ``step_ratios[t-1] = P(T > t) / P(T > t-1)`` and ``state`` is the
    conditional law given survival (normalised) after the last step.
    """
    p = np.asarray(start, dtype=float).copy()
    ratios = np.empty(n_steps)
    get = kernels if callable(kernels) else (lambda t: kernels)
    for t in range(1, n_steps + 1):
        p = _matvec_t(get(t).entries, p)
        mass = p.sum()
        ratios[t - 1] = mass
        if normalise and mass > 0:
            p /= mass
    return ratios, p


def _unit(n, i):
    e = np.zeros(n)
    e[i] = 1.0
    return e


@dataclass
class IEResult:
    """Value with the scan location and convergence diagnostics."""

    value: float
    argopt: int
    quasi_stationary: float = float("nan")
    converged: bool = True
    steps: int = 0


class _PreChangeScan:
    """Shared pre-change propagation from the start cell.

    Keeps the normalised conditional law after every step (when requested)
    and the one-step survival ratios, stopping once three successive ratios
    agree to ``RATIO_TOL`` in absolute terms and the one-step hazards agree
    to ``HAZARD_RTOL`` relatively (the latter matters for large thresholds,
    where the first hazards are tiny and change slowly in absolute terms).
    """

    def __init__(self, K_pre: KernelMatrix, start_cell: int, L_max: int, keep_states: bool, min_steps: int = 0):
        n = K_pre.n
        p = _unit(n, start_cell)
        self.states = [p.copy()] if keep_states else None
        ratios = []
        converged = False
        for t in range(1, L_max + 1):
            p = _matvec_t(K_pre.entries, p)
            mass = p.sum()
            ratios.append(mass)
            if mass > 0:
                p /= mass
            if keep_states:
                self.states.append(p.copy())
            if t >= max(3, min_steps) and _stable(ratios):
                converged = True
                break
            if mass == 0:
                converged = True
                break
        self.ratios = np.array(ratios)
        self.converged = converged
        self.final_state = p

    @property
    def lam(self) -> float:
        return float(self.ratios[-1])


def _stable(ratios):
    for a, c in ((ratios[-1], ratios[-2]), (ratios[-2], ratios[-3])):
        d = abs(a - c)
        if d >= RATIO_TOL or d > HAZARD_RTOL * (1.0 - a):
            return False
    return True


def _kernels(model, b, grid_size, layout, regimes=("pre",)):
    grid = make_grid(b, grid_size, layout)
    return grid, [build_kernel(model, grid, r) for r in regimes]


def _lcpfa_from_ratios(ratios: np.ndarray, lam: float, m: int, converged: bool):
    L = ratios.size
    # extend with the stabilised ratio so every window of m steps is complete
    ext = np.concatenate([ratios, np.full(m, lam)]) if converged else ratios
    logs = np.log(np.clip(ext, 1e-300, None))
    c = np.concatenate([[0.0], np.cumsum(logs)])
    n_windows = (L if converged else L - m) + 1
    if n_windows < 1:
        raise ValueError("scan range shorter than m")
    vals = -np.expm1(c[m : m + n_windows] - c[:n_windows])
    return vals


def lcpfa_cusum(
    model=None,
    b: float = 5.0,
    m: int = 10,
    grid_size: int = DEFAULT_GRID_SIZE,
    L_max: int = DEFAULT_L_MAX,
    *,
    layout: str = "uniform",
    return_curve: bool = False,
):
    """LCPFA of CUSUM: ``1 - inf_l rho_{l+m}(1) / rho_l(1)``.

    Returns an :class:`IEResult` whose ``value`` is the supremum over the
    scanned ``l``, ``argopt`` its location and ``quasi_stationary`` the
    stabilised value ``1 - lambda*^m``.  A :class:`ConvergenceWarning` is
    issued when the ratio has not stabilised and the maximum sits at the
    end of the scan.
    """
    model = model or GaussianChangeModel()
    if m < 1:
        raise ValueError("m must be >= 1")
    grid, (K,) = _kernels(model, b, grid_size, layout)
    scan = _PreChangeScan(K, grid.start_cell, L_max, keep_states=False, min_steps=m + 1)
    return _lcpfa_result(scan, m, return_curve)


def _lcpfa_result(scan, m, return_curve=False):
    vals = _lcpfa_from_ratios(scan.ratios, scan.lam, m, scan.converged)
    i = int(np.argmax(vals))
    qs = -math.expm1(m * math.log(scan.lam)) if scan.lam > 0 else 1.0
    if not scan.converged and i == vals.size - 1:
        warnings.warn("LCPFA scan did not converge; maximum at the scan boundary", ConvergenceWarning, stacklevel=3)
    res = IEResult(float(vals[i]), i, qs, scan.converged, scan.ratios.size)
    if return_curve:
        return res, vals
    return res


def _lpd_from_scan(K_post, scan_states, prior: DurationPrior):
    ks = np.array(prior.support)
    w = prior.probabilities
    kmax = int(ks.max())
    out = np.empty(len(scan_states))
    for nu, p0 in enumerate(scan_states):
        r, _ = propagate(K_post, kmax, p0)
        surv = np.cumprod(r)  # P(T > nu+k | T > nu)
        out[nu] = float(np.dot(w, 1.0 - surv[ks - 1]))
    return out


def lpd_cusum(
    model=None,
    b: float = 5.0,
    prior: DurationPrior | None = None,
    grid_size: int = DEFAULT_GRID_SIZE,
    L_max: int = DEFAULT_L_MAX,
    *,
    layout: str = "uniform",
    nu_max: int | None = None,
    return_curve: bool = False,
):
    """LPD of CUSUM: ``inf_l sum_k pi_k P(T <= l+k | T > l, change of length k at l)``.

    The onset ``l`` is scanned from 0 until the pre-change law of the
    statistic stabilises (or up to ``nu_max`` when given).
    """
    model = model or GaussianChangeModel()
    prior = prior or DurationPrior.uniform(range(5, 11))
    grid, (K_pre, K_post) = _kernels(model, b, grid_size, layout, ("pre", "post"))
    limit = L_max if nu_max is None else int(nu_max)
    scan = _PreChangeScan(K_pre, grid.start_cell, limit, keep_states=True)
    states = scan.states if nu_max is None else scan.states[: int(nu_max) + 1]
    vals = _lpd_from_scan(K_post, states, prior)
    i = int(np.argmin(vals))
    if nu_max is None and not scan.converged and i == vals.size - 1:
        warnings.warn("LPD scan did not converge; minimum at the scan boundary", ConvergenceWarning, stacklevel=2)
    res = IEResult(float(vals[i]), i, float(vals[-1]), scan.converged, len(states) - 1)
    if return_curve:
        return res, vals
    return res


def _arl_from_scan(scan):
    surv = np.concatenate([[1.0], np.cumprod(scan.ratios)])
    lam = scan.lam
    total = math.fsum(surv)
    if lam >= 1.0:
        return math.inf
    return total + surv[-1] * lam / (1.0 - lam)


def arl_cusum(
    model=None,
    b: float = 5.0,
    grid_size: int = DEFAULT_GRID_SIZE,
    L_max: int = 100_000,
    *,
    layout: str = "uniform",
) -> float:
    """ARL to false alarm ``sum_l rho_l(1)`` with a geometric tail closure."""
    model = model or GaussianChangeModel()
    grid, (K,) = _kernels(model, b, grid_size, layout)
    scan = _PreChangeScan(K, grid.start_cell, L_max, keep_states=False)
    if not scan.converged:
        warnings.warn("ARL tail closure applied before the ratio stabilised", ConvergenceWarning, stacklevel=2)
    return _arl_from_scan(scan)


def cusum_characteristics(
    model=None,
    b: float = 5.0,
    m: int = 10,
    prior: DurationPrior | None = None,
    grid_size: int = DEFAULT_GRID_SIZE,
    L_max: int = DEFAULT_L_MAX,
    *,
    layout: str = "uniform",
    nu_max: int | None = None,
) -> dict:
    """LCPFA, LPD and ARL from one pair of kernels (saves rebuilding them)."""
    model = model or GaussianChangeModel()
    regimes = ("pre", "post") if prior is not None else ("pre",)
    grid, kernels = _kernels(model, b, grid_size, layout, regimes)
    scan = _PreChangeScan(kernels[0], grid.start_cell, L_max, keep_states=prior is not None, min_steps=m + 1)
    out = {"b": b, "lcpfa": _lcpfa_result(scan, m), "arl": _arl_from_scan(scan)}
    if prior is not None:
        states = scan.states if nu_max is None else scan.states[: int(nu_max) + 1]
        vals = _lpd_from_scan(kernels[1], states, prior)
        i = int(np.argmin(vals))
        out["lpd"] = IEResult(float(vals[i]), i, float(vals[-1]), scan.converged, len(states) - 1)
    return out


class LatticeCUSUM:
    """Exact CUSUM survival for a two-point LLR model on a lattice.

    When ``up`` and ``down`` are integer multiples of a common unit, the
    reflected statistic ``W_n = max(0, V_n)`` lives on ``{0, u, 2u, ...}``
    below ``b`` and is a finite Markov chain; its sub-stochastic transition
    matrix plays the role of the collocation kernel, without any
    discretisation error.
    """

    def __init__(self, model: TwoPointLLRModel, b: float, unit: float | None = None):
        if not isinstance(model, TwoPointLLRModel):
            raise TypeError("LatticeCUSUM needs a TwoPointLLRModel")
        unit = unit or math.gcd(_as_int(model.up), _as_int(model.down)) or 1.0
        up, down = model.up / unit, model.down / unit
        if abs(up - round(up)) > 1e-12 or abs(down - round(down)) > 1e-12:
            raise ValueError("up and down must be integer multiples of unit")
        self.model, self.b, self.unit = model, float(b), float(unit)
        self._up, self._down = int(round(up)), int(round(down))
        # states 0..S-1 hold W = s*unit < b
        self.n_states = max(0, int(math.ceil(self.b / unit - 1e-12)))

    def kernel(self, regime="pre") -> np.ndarray:
        p = self.model._p(regime)
        S = self.n_states
        K = np.zeros((S, S))
        for s in range(S):
            nxt = s + self._up
            if nxt < S:
                K[s, nxt] += p
            K[s, max(0, s - self._down)] += 1.0 - p
        return K

    def survival(self, regimes) -> np.ndarray:
        """``P(T > t)`` for ``t = 0..len(regimes)`` given per-step regimes."""
        if self.n_states == 0:
            return np.concatenate([[1.0], np.zeros(len(regimes))])
        Ks = {"pre": self.kernel("pre"), "post": self.kernel("post")}
        p = _unit(self.n_states, 0)
        out = [1.0]
        for reg in regimes:
            p = p @ Ks[Regime.coerce(reg).value]
            out.append(p.sum())
        return np.array(out)


def _as_int(v):
    return int(v) if float(v).is_integer() else 0
