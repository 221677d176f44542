import math
import warnings

import numpy as np
import pytest

from intermittent import oc_montecarlo as mc
from intermittent.model import DurationPrior
from intermittent.rules import CUSUM, FMA, ModifiedFMA, WindowLimitedCUSUM

CASE1 = DurationPrior.uniform(range(5, 11))


def geometric_detector(gauss, p):
    """Window-1 FMA: alarms independently at each step with probability p."""
    b = float(gauss.llr_sum_quantile(1, 1.0 - p))
    return FMA(threshold=b, window=1, model=gauss)


def test_survival_from_times_counts():
    s = mc.survival_from_times([1, 3, 3, 0, 7], horizon=5)
    assert s.counts.tolist() == [5, 4, 4, 2, 2, 2]
    assert s.hits.tolist() == [1, 0, 2, 0, 0]
    np.testing.assert_allclose(s.survival, s.counts / 5)


def test_survival_estimate_validation():
    with pytest.raises(ValueError):
        mc.SurvivalEstimate(2, np.array([3, 2]), 3)
    with pytest.raises(ValueError):
        mc.SurvivalEstimate(1, np.array([2, 2]), 3)
    with pytest.raises(ValueError):
        mc.SurvivalEstimate(2, np.array([3, 1, 2]), 3)


def test_degenerate_detector_stops_at_one(gauss):
    det = FMA(threshold=-np.inf, window=1)
    s = mc.estimate_survival(det, gauss, 1000, horizon=40, seed=1)
    assert s.counts[0] == 1000 and np.all(s.counts[1:] == 0)


def test_geometric_survival(gauss):
    p = 0.05
    s = mc.estimate_survival(geometric_detector(gauss, p), gauss, 50_000, horizon=40, seed=2)
    K = s.runs
    for j in (1, 5, 10, 20, 40):
        exact = (1 - p) ** j
        assert abs(s.survival[j] - exact) < 4 * math.sqrt(exact * (1 - exact) / K)


def test_geometric_lcpfa_is_flat(gauss):
    p, m = 0.02, 10
    s = mc.estimate_survival(geometric_detector(gauss, p), gauss, 100_000, horizon=60, seed=3)
    curve, se = mc.lcpfa_curve(s, m)
    exact = 1 - (1 - p) ** m
    assert np.all(np.abs(curve[:40] - exact) < 5 * se[:40])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", mc.SamplingWarning)
        est, ell = mc.lcpfa_estimate(s, m, scan=30)
    assert 0 <= ell <= 30
    assert abs(est.value - exact) < 5 * est.se + 0.003


def test_lcpfa_se_formula():
    s = mc.survival_from_times([1, 2, 2, 3, 0, 0, 0, 0], horizon=4)
    curve, se = mc.lcpfa_curve(s, 1)
    p = s.survival
    r = p[1] / p[0]
    assert curve[0] == pytest.approx(1 - r)
    assert se[0] == pytest.approx(math.sqrt(r * (1 - r) / (8 * p[0])))
    with pytest.raises(ValueError):
        mc.lcpfa_curve(s, 0)
    with pytest.raises(ValueError):
        mc.lcpfa_curve(s, 5)


def test_lcpfa_boundary_warning(gauss):
    det = CUSUM(threshold=4.0)
    s = mc.estimate_survival(det, gauss, 5000, horizon=20, seed=4)
    with pytest.warns(mc.SamplingWarning):
        mc.lcpfa_estimate(s, 10)


def test_all_stopped_before_m():
    s = mc.survival_from_times([1] * 10, horizon=12)
    est, ell = mc.lcpfa_estimate(s, 10)
    assert est.value == 1.0 and ell == 0


def test_hit_count_policy(gauss):
    s = mc.estimate_survival(geometric_detector(gauss, 0.05), gauss, "hits", horizon=40, seed=5)
    assert s.hits[:30].min() >= mc.POLICY_MIN_HITS
    with pytest.raises(mc.PolicyUnsatisfiable):
        mc.estimate_survival(CUSUM(threshold=6.0), gauss, "hits", horizon=40, seed=5, run_cap=20_000)
    with pytest.raises(ValueError):
        mc.estimate_survival(CUSUM(threshold=6.0), gauss, "hits", horizon=20)


@pytest.mark.parametrize("det", [CUSUM(threshold=3.0), WindowLimitedCUSUM(threshold=3.0, window=10), FMA(threshold=2.0, window=5)])
def test_records_reproduce_direct_simulation(gauss, det):
    rec = mc.simulate_records(det, gauss, 3000, 80, seed=6, floor=1.0)
    for b in (1.0, 2.0, 3.0, 4.5):
        d = det.set_params(threshold=b)
        direct = mc.simulate_stopping_times(d, gauss, 3000, 80, seed=6)
        np.testing.assert_array_equal(rec.stopping_times(b), direct)
    with pytest.raises(ValueError):
        rec.stopping_times(0.5)


@pytest.mark.parametrize("workers", [2])
def test_worker_invariance(gauss, workers):
    det = WindowLimitedCUSUM(threshold=3.0, window=10)
    kw = dict(horizon=60, seed=9, block_size=1000)
    a = mc.estimate_survival(det, gauss, 4000, workers=1, **kw)
    b = mc.estimate_survival(det, gauss, 4000, workers=workers, **kw)
    np.testing.assert_array_equal(a.counts, b.counts)
    la = mc.lpd_scan(det, gauss, CASE1, [0, 3], 3000, 9, workers=1, block_size=1000)
    lb = mc.lpd_scan(det, gauss, CASE1, [0, 3], 3000, 9, workers=workers, block_size=1000)
    for ra, rb in zip(next(iter(la.values())), next(iter(lb.values()))):
        assert ra["lpd"] == rb["lpd"] and ra["se"] == rb["se"]


def test_seed_determinism(gauss):
    det = CUSUM(threshold=3.0)
    a = mc.simulate_stopping_times(det, gauss, 2000, 50, seed=11)
    b = mc.simulate_stopping_times(det, gauss, 2000, 50, seed=11)
    c = mc.simulate_stopping_times(det, gauss, 2000, 50, seed=12)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_lpd_always_alarmed(gauss):
    with pytest.warns(mc.SamplingWarning):
        est, nu = mc.lpd_estimate(CUSUM(threshold=-np.inf), gauss, CASE1, [0], runs=500)
    assert est.value == 1.0 and nu == 0


def test_lpd_conditioning_on_survival(gauss):
    det = ModifiedFMA(threshold=3.0, window=5)
    rows = next(iter(mc.lpd_scan(det, gauss, CASE1, [0, 2, 5], 20_000, 1).values()))
    assert rows[0]["survivors"] == 20_000
    assert rows[1]["survivors"] < 20_000
    for r in rows:
        assert 0 <= r["lpd"] <= 1 and r["se"] > 0
        assert np.all(np.diff(r["pd_k"]) >= 0)
    with pytest.raises(ValueError):
        mc.lpd_scan(det, gauss, CASE1, [], 10)


def test_lpd_shared_sample_matches_single_threshold(gauss):
    det = CUSUM(threshold=3.0)
    multi = mc.lpd_scan(det, gauss, CASE1, [0, 1], 4000, 3, thresholds=[2.0, 3.0])
    single = mc.lpd_scan(det.set_params(threshold=3.0), gauss, CASE1, [0, 1], 4000, 3)
    assert [r["lpd"] for r in multi[3.0]] == [r["lpd"] for r in single[3.0]]


def test_arl_deterministic_alarm(gauss):
    est = mc.arl_estimate(FMA(threshold=-np.inf, window=1), gauss, 1000, seed=1)
    assert est.value == 1.0 and est.se == 0.0


def test_arl_geometric(gauss):
    p = 0.01
    est = mc.arl_estimate(geometric_detector(gauss, p), gauss, 20_000, seed=2)
    assert abs(est.value - 1 / p) < 4 * est.se
    assert est.se == pytest.approx(math.sqrt(1 - p) / p / math.sqrt(20_000), rel=0.05)


def test_arl_censoring_closure(gauss):
    p = 0.01
    det = geometric_detector(gauss, p)
    with pytest.warns(mc.SamplingWarning):
        est = mc.arl_estimate(det, gauss, 20_000, seed=3, cap=50)
    assert est.info["censored"] > 0
    # the geometric tail closure is exact in mean for a memoryless stopping time
    assert abs(est.value - 1 / p) < 5 * est.se


def test_arl_return_times(gauss):
    est, T = mc.arl_estimate(CUSUM(threshold=2.0), gauss, 2000, seed=4, return_times=True)
    assert T.shape == (2000,) and T.min() >= 1
    assert est.value == pytest.approx(T.mean())


def test_qq_geometric_self_fit():
    rng = np.random.default_rng(0)
    T = rng.geometric(0.01, 200_000)
    pairs, ks = mc.qq_geometric_data(T)
    assert pairs.shape == (99, 2)
    assert ks < 0.005
    assert np.max(np.abs(pairs[:, 0] - pairs[:, 1]) / pairs[:, 0]) < 0.1


def test_qq_constant_input_deviates():
    _, ks = mc.qq_geometric_data(np.full(5000, 100))
    assert ks > 0.3


def test_qq_errors():
    with pytest.raises(ValueError):
        mc.qq_geometric_data([1, 2, 3])
    with pytest.raises(ValueError):
        mc.qq_geometric_data(np.zeros(2000, dtype=int))
