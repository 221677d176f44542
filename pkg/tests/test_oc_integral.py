import math
import warnings

import numpy as np
import pytest

from intermittent import bounds_approx as bounds
from intermittent import oc_integral as ie
from intermittent.model import DurationPrior

N = 1500
CASE1 = DurationPrior.uniform(range(5, 11))


@pytest.mark.parametrize("layout", ["uniform", "log", "auto"])
@pytest.mark.parametrize("b", [0.5, 3.0, 8.0])
def test_grid_structure(b, layout):
    g = ie.make_grid(b, 200, layout)
    x = g.boundaries
    assert x[0] == 0.0 and x[-1] == pytest.approx(math.exp(b), rel=1e-15)
    assert np.all(np.diff(x) > 0)
    assert 1.0 in x
    assert g.n_cells == 200
    np.testing.assert_array_equal(g.midpoints, 0.5 * (x[:-1] + x[1:]))
    assert x[g.start_cell + 1] <= 1.0 and g.midpoints[g.start_cell] < 1.0


def test_grid_below_one_and_errors():
    g = ie.make_grid(-1.0, 10)
    # every cell below 1 restarts the statistic at 1, so any of them is valid
    assert g.B < 1 and 0 <= g.start_cell < g.n_cells
    with pytest.raises(ValueError):
        ie.make_grid(2.0, 0)
    with pytest.raises(ValueError):
        ie.make_grid(2.0, 10, "cubic")
    with pytest.raises(ValueError):
        ie.Grid(np.array([0.0, 2.0, 1.0]))


def test_auto_layout_switches_on_spacing():
    assert np.allclose(np.diff(ie.make_grid(3.0, 1000, "auto").boundaries[-10:]), math.exp(3.0) / 1000, rtol=0.1)
    log_grid = ie.make_grid(10.0, 1000, "auto")
    np.testing.assert_array_equal(log_grid.boundaries, ie.make_grid(10.0, 1000, "log").boundaries)


@pytest.mark.parametrize("regime", ["pre", "post"])
def test_kernel_rows_telescope(gauss, regime):
    g = ie.make_grid(3.0, 300)
    K = ie.build_kernel(gauss, g, regime).entries
    assert K.min() >= 0.0 and K.max() <= 1.0
    expected = gauss.lr_cdf(g.B / np.maximum(1.0, g.midpoints), regime) - gauss.lr_cdf(0.0, regime)
    np.testing.assert_allclose(K.sum(axis=1), expected, atol=1e-13)
    assert np.all(K.sum(axis=1) <= 1.0 + 1e-15)


def test_kernel_degenerate_cases(gauss):
    one = ie.build_kernel(gauss, ie.make_grid(1.0, 1), "pre").entries
    r = 0.5 * math.e
    assert one.shape == (1, 1)
    assert one[0, 0] == pytest.approx(gauss.lr_cdf(math.e / max(1.0, r)) - gauss.lr_cdf(0.0), abs=1e-15)
    tiny = ie.build_kernel(gauss, ie.make_grid(-40.0, 5), "pre").entries
    assert tiny.max() < 1e-12


def test_survival_iterate_basics(gauss):
    g = ie.make_grid(3.0, 200)
    K = ie.build_kernel(gauss, g, "pre")
    rhos = ie.survival_iterate([K] * 30)
    np.testing.assert_array_equal(rhos[0], np.ones(200))
    np.testing.assert_allclose(rhos[1], K.entries.sum(axis=1))
    stacked = np.array(rhos)
    assert np.all(np.diff(stacked, axis=0) <= 1e-15)
    with pytest.raises(ValueError):
        ie.survival_iterate([])
    with pytest.raises(ValueError):
        ie.survival_iterate([K, ie.build_kernel(gauss, ie.make_grid(3.0, 10), "pre")])


def test_forward_propagation_matches_backward_recursion(gauss):
    # P(T > l + k) for a change after l pre-change steps, both directions
    g = ie.make_grid(3.0, 300)
    Kpre, Kpost = ie.build_kernel(gauss, g, "pre"), ie.build_kernel(gauss, g, "post")
    ell, k = 4, 6
    backward = ie.survival_iterate([Kpost] * k + [Kpre] * ell)[-1][g.start_cell]
    r_pre, state = ie.propagate(Kpre, ell, ie._unit(g.n_cells, g.start_cell))
    r_post, _ = ie.propagate(Kpost, k, state)
    forward = np.prod(r_pre) * np.prod(r_post)
    assert forward == pytest.approx(backward, rel=1e-12)
    # the first l steps are shared with the no-change run
    pre_only = ie.survival_iterate([Kpre] * ell)[-1][g.start_cell]
    assert np.prod(r_pre) == pytest.approx(pre_only, rel=1e-13)


def test_lcpfa_reference_values(gauss):
    # frozen from this implementation at N = 1500 (auto layout); guards regressions
    res = ie.lcpfa_cusum(gauss, 2.8289, 10, N, layout="auto")
    assert res.converged
    assert res.value == pytest.approx(0.1000, abs=2e-4)
    assert res.value == pytest.approx(res.quasi_stationary, abs=1e-10)


def test_lcpfa_is_quasi_stationary_and_additive(gauss):
    res1 = ie.lcpfa_cusum(gauss, 3.5, 4, N)
    res2 = ie.lcpfa_cusum(gauss, 3.5, 6, N)
    res = ie.lcpfa_cusum(gauss, 3.5, 10, N)
    lam1 = 1 - res1.quasi_stationary
    lam2 = 1 - res2.quasi_stationary
    assert res.quasi_stationary == pytest.approx(1 - lam1 * lam2, abs=1e-12)
    lam = (1 - res1.quasi_stationary) ** 0.25
    assert res.quasi_stationary == pytest.approx(1 - lam**10, abs=1e-10)
    assert res.value == pytest.approx(res.quasi_stationary, abs=1e-10)


def test_lcpfa_curve_increases_to_supremum(gauss):
    res, curve = ie.lcpfa_cusum(gauss, 4.0, 10, N, return_curve=True)
    assert curve[0] < curve[-1]
    assert res.value == pytest.approx(curve.max())


def test_lcpfa_strictly_decreasing_in_b(gauss):
    values = [ie.lcpfa_cusum(gauss, b, 10, 800, layout="auto").value for b in np.linspace(1.0, 7.0, 10)]
    assert np.all(np.diff(values) < 0)


def test_lcpfa_rejects_bad_m(gauss):
    with pytest.raises(ValueError):
        ie.lcpfa_cusum(gauss, 3.0, 0, 100)


def test_convergence_warning_on_short_scan(gauss):
    with pytest.warns(ie.ConvergenceWarning):
        ie.lcpfa_cusum(gauss, 6.0, 2, 400, L_max=3)


def test_lpd_limits(gauss):
    assert ie.lpd_cusum(gauss, 1e-3, CASE1, 50).value == pytest.approx(1.0, abs=1e-3)
    long = DurationPrior.uniform([400])
    assert ie.lpd_cusum(gauss, 3.0, long, 400).value > 1 - 1e-9


def test_lpd_reference_value(gauss):
    res = ie.lpd_cusum(gauss, 2.8289, CASE1, N, layout="auto")
    assert res.argopt == 0
    # frozen from this implementation at N = 1500
    assert res.value == pytest.approx(0.7477, abs=5e-4)


def test_lpd_nu_max_limits_scan(gauss):
    res, curve = ie.lpd_cusum(gauss, 3.0, CASE1, 400, nu_max=4, return_curve=True)
    assert curve.size == 5


def test_arl_limits(gauss):
    # b -> 0+: the statistic restarts at every step without alarm, so T is
    # geometric with success probability P(lambda > 0) = Phi(-sqrt(q)/2)
    p0 = gauss.llr_sum_sf(1, 0.0)
    assert ie.arl_cusum(gauss, 1e-9, 50) == pytest.approx(1.0 / p0, rel=1e-6)
    assert ie.arl_cusum(gauss, 8.0, N, layout="auto") > 10_000


@pytest.mark.parametrize("b", [5.0, 6.0, 7.0])
def test_arl_against_renewal_asymptotics(gauss, b):
    arl = ie.arl_cusum(gauss, b, N, layout="auto")
    assert arl >= 500
    assert abs(bounds.cusum_arl_approx(gauss, b, corrected=True) - arl) / arl < 0.15
    # the uncorrected constant misses by a factor of about 1/((q/2) C) = 3.6
    assert bounds.cusum_arl_approx(gauss, b) < 0.5 * arl


@pytest.mark.parametrize("b", [3.0, 4.0, 5.0, 6.0])
def test_arl_and_lcpfa_consistent(gauss, b):
    c = ie.cusum_characteristics(gauss, b, 10, grid_size=N, layout="auto")
    approx = bounds.lcpfa_from_arl_geometric(c["arl"], 10)
    assert abs(approx - c["lcpfa"].quasi_stationary) / c["lcpfa"].quasi_stationary < 0.12


def test_characteristics_agree_with_single_calls(gauss):
    c = ie.cusum_characteristics(gauss, 3.2, 10, CASE1, grid_size=600)
    assert c["lcpfa"].value == pytest.approx(ie.lcpfa_cusum(gauss, 3.2, 10, 600).value, rel=1e-12)
    assert c["lpd"].value == pytest.approx(ie.lpd_cusum(gauss, 3.2, CASE1, 600).value, rel=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert c["arl"] == pytest.approx(ie.arl_cusum(gauss, 3.2, 600), rel=1e-9)


def test_lattice_cusum_kernel(two_point):
    lat = ie.LatticeCUSUM(two_point, 3.0)
    K = lat.kernel("pre")
    assert lat.n_states == 3
    np.testing.assert_allclose(K.sum(axis=1), [1.0, 1.0, 0.7])
    assert lat.survival(["pre"] * 3)[0] == 1.0
    with pytest.raises(TypeError):
        ie.LatticeCUSUM(object(), 3.0)
