import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact import conformal as cp
from artifact.core_data import NormalizedDataset
from artifact.mcd_net import NetConfig, init_model, predict_point


# --- quantiles -------------------------------------------------------------

def test_adjusted_level_examples():
    assert cp.adjusted_quantile_level(9, 0.1) == pytest.approx(0.9)
    assert cp.adjusted_quantile_level(2000, 0.1) == 1801 / 2001
    assert cp.adjusted_quantile_level(1, 0.5) == 0.5


def test_conformal_quantile_examples():
    assert cp.conformal_quantile(np.arange(1, 10), 0.1) == 9
    assert cp.conformal_quantile([5.0], 0.5) == 5
    assert cp.conformal_quantile([1, 2, 3], 0.1) == math.inf
    with pytest.raises(ValueError):
        cp.conformal_quantile([], 0.1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_conformal_quantile_matches_sorted_oracle(scores, alpha):
    n = len(scores)
    k = math.ceil((n + 1) * (1 - alpha) - 1e-9)
    expected = math.inf if k > n else sorted(scores)[k - 1]
    assert cp.conformal_quantile(scores, alpha) == expected


def test_uniform_scores_quantile_range():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert 0.885 <= cp.conformal_quantile(rng.uniform(size=2000), 0.1) <= 0.915


def test_quantile_monotone_in_level():
    s = np.random.default_rng(1).normal(size=200)
    qs = [cp.conformal_quantile(s, a) for a in np.linspace(0.5, 0.01, 30)]
    assert all(a <= b for a, b in zip(qs, qs[1:]))


def test_empirical_quantile_convention():
    col = np.arange(1.0, 11.0)[::-1]
    assert cp.empirical_quantile(col, 0.1) == 1.0  # k = ceil(10 * 0.1) = 1
    assert cp.empirical_quantile(col, 0.9) == 9.0  # k = ceil(10 * 0.9) = 9
    assert cp.empirical_quantile(col, 0.95) == 10.0


# --- scores ----------------------------------------------------------------

UNIT_BAND = np.array([[0.0, 0.0], [1.0, 1.0]])


def test_mcp_score_examples():
    assert cp.score_mcp(UNIT_BAND, [0.5, 0.5], 0.1) == pytest.approx(-0.5)
    assert cp.score_mcp(UNIT_BAND, [1.4, 0.5], 0.1) == pytest.approx(0.4)


def test_mcp_score_brute_force():
    rng = np.random.default_rng(2)
    Y, y = rng.normal(size=(10, 6)), rng.normal(size=6)
    best = -math.inf
    for t in range(6):
        col = sorted(Y[:, t])
        lo, hi = col[0], col[8]  # k = 1 and k = 9 of 10
        best = max(best, lo - y[t], y[t] - hi)
    assert cp.score_mcp(Y, y, 0.1) == pytest.approx(best)


def test_mmcp_score_examples():
    Y = np.array([[-1.0, -2.0], [1.0, 2.0]])
    assert cp.score_mmcp(Y, [2.0, -2.0]) == pytest.approx(2.0)
    assert cp.score_mmcp(Y, [0.0, 0.0]) == 0.0


def test_mmcp_score_brute_force():
    rng = np.random.default_rng(3)
    Y, y = rng.normal(size=(30, 5)), rng.normal(size=5)
    vals = []
    for t in range(5):
        m = sum(Y[:, t]) / 30
        s = math.sqrt(sum((v - m) ** 2 for v in Y[:, t]) / 30)
        vals.append(abs(y[t] - m) / s)
    assert cp.score_mmcp(Y, y) == pytest.approx(max(vals))


def test_pcp_score_examples_and_brute_force():
    assert cp.score_pcp(UNIT_BAND, [0.5, 0.5]) == pytest.approx(math.sqrt(0.5))
    assert cp.score_pcp(UNIT_BAND, [1.0, 1.0]) == 0.0
    rng = np.random.default_rng(4)
    Y, y = rng.normal(size=(50, 24)), rng.normal(size=24)
    best = min(math.dist(row, y) for row in Y)
    assert cp.score_pcp(Y, y) == pytest.approx(best)
    assert cp.pcp_contains(Y, y, best) and not cp.pcp_contains(Y, y, best * 0.999)


def test_score_dimension_mismatch():
    with pytest.raises(ValueError):
        cp.score_pcp(np.ones((3, 2)), np.ones(3))


# --- CCP -------------------------------------------------------------------

def _ccp_scan(R, alpha):
    n = R.shape[0]
    target = math.ceil((n + 1) * (1 - alpha) - 1e-9)
    cols = np.sort(R, axis=0)
    for k in range(1, n + 1):
        if np.sum(np.all(R <= cols[k - 1], axis=1)) >= target:
            return cols[k - 1]
    raise AssertionError


def test_ccp_one_dim_equals_split_cp():
    r = np.random.default_rng(5).exponential(size=137)
    for a in (0.05, 0.1, 0.3):
        assert cp.calibrate_ccp(r[:, None], a)[0] == cp.conformal_quantile(r, a)


def test_ccp_comonotone_columns_use_marginal_quantile():
    r = np.random.default_rng(6).uniform(size=99)
    R = np.column_stack([r, 3 * r + 1])
    q = cp.calibrate_ccp(R, 0.1)
    np.testing.assert_allclose(q, [cp.conformal_quantile(R[:, 0], 0.1), cp.conformal_quantile(R[:, 1], 0.1)])


def test_ccp_independent_columns_coverage_and_minimality():
    rng = np.random.default_rng(7)
    n, alpha = 2000, 0.1
    R = rng.exponential(size=(n, 2))
    q = cp.calibrate_ccp(R, alpha)
    np.testing.assert_array_equal(q, _ccp_scan(R, alpha))
    cover = np.sum(np.all(R <= q, axis=1)) / (n + 1)
    level = cp.adjusted_quantile_level(n, alpha)
    assert level <= cover <= level + 2 / (n + 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 4), st.floats(0.02, 0.6), st.integers(0, 10 ** 6))
def test_ccp_bisection_matches_linear_scan(n, T, alpha, seed):
    R = np.random.default_rng(seed).exponential(size=(n, T))
    q = cp.calibrate_ccp(R, alpha)
    if math.ceil((n + 1) * (1 - alpha) - 1e-9) > n:
        assert np.all(np.isinf(q))
    else:
        np.testing.assert_array_equal(q, _ccp_scan(R, alpha))


# --- calibration -----------------------------------------------------------

def test_small_calibration_set_gives_infinite_threshold():
    cfg = NetConfig(hidden_width=8)
    model = init_model(4, 3, cfg, seed=0)
    rng = np.random.default_rng(0)
    cal = NormalizedDataset(rng.uniform(size=(3, 4)), rng.uniform(size=(3, 3)), 3)
    for kind in cp.KINDS:
        c = cp.calibrate(kind, model, cal, 0.1, S=5, seed=0)
        assert not c.finite and c.n == 3
        with pytest.raises(ValueError, match="infinite"):
            cp.region(kind, c, np.zeros((5, 3)))


def test_perfect_model_without_dropout_gives_zero_mmcp_threshold():
    cfg = NetConfig(hidden_width=8, dropout_p=(0.0, 0.0))
    model = init_model(4, 3, cfg, seed=0)
    X = np.random.default_rng(1).uniform(size=(30, 4))
    # truth from the same pass-repeated code path, so residuals are exactly zero
    truth = np.stack([cp.mcd_sample(model, x, 4, seed=0)[0] for x in X])
    np.testing.assert_allclose(truth, predict_point(model, X), atol=1e-14)
    cal = NormalizedDataset(X, truth, 3)
    assert cp.calibrate("MMCP", model, cal, 0.1, S=4, seed=0).qhat == 0.0


def test_calibration_is_reproducible():
    model = init_model(4, 3, NetConfig(hidden_width=8), seed=0)
    rng = np.random.default_rng(2)
    cal = NormalizedDataset(rng.uniform(size=(40, 4)), rng.uniform(size=(40, 3)), 3)
    a = cp.calibrate("PCP", model, cal, 0.1, S=20, seed=5)
    b = cp.calibrate("PCP", model, cal, 0.1, S=20, seed=5)
    assert a.qhat == b.qhat
    with pytest.raises(ValueError):
        cp.calibrate("PCP", model, cal.subset([]), 0.1, S=20, seed=5)


def test_mcp_uses_doubled_target_by_default():
    rng = np.random.default_rng(3)
    samples = [rng.normal(size=(20, 2)) for _ in range(50)]
    truths = rng.normal(size=(50, 2))
    c = cp.calibrate_from_samples("MCP", samples, truths, 0.1)
    assert c.band_alpha == 0.1 and c.alpha == pytest.approx(0.2)
    c2 = cp.calibrate_from_samples("MCP", samples, truths, 0.05, band_alpha=0.05)
    assert c2.alpha == 0.05


def test_calibrator_json_round_trip(tmp_path):
    for c in (cp.ConformalCalibrator("PCP", 0.1, math.inf, 3),
              cp.ConformalCalibrator("CCP", 0.1, [0.1, math.inf], 5),
              cp.ConformalCalibrator("MCP", 0.2, -0.01, 50, band_alpha=0.1, seed=3)):
        c.save(tmp_path / "c.json")
        d = cp.ConformalCalibrator.load(tmp_path / "c.json")
        assert d.kind == c.kind and d.alpha == c.alpha and d.n == c.n and d.band_alpha == c.band_alpha
        np.testing.assert_array_equal(d.qhat, c.qhat)


def _synthetic_task(n, rng, T=4, S=40):
    """Exchangeable pairs: samples and truth drawn from the same scaled distribution."""
    scale = rng.uniform(0.02, 0.08, size=(n, 1))
    centre = rng.uniform(0.3, 0.7, size=(n, T))
    samples = [c + s * rng.standard_normal((S, T)) for c, s in zip(centre, scale)]
    truths = centre + 1.3 * scale * rng.standard_normal((n, T))
    return samples, truths


@pytest.mark.parametrize("kind", cp.KINDS)
def test_finite_sample_coverage(kind):
    rng = np.random.default_rng(11)
    alpha, n_cal, n_test = 0.1, 500, 3000
    cs, ct = _synthetic_task(n_cal, rng)
    ts, tt = _synthetic_task(n_test, rng)
    c = cp.calibrate_from_samples(kind, cs, ct, alpha)
    target = 1 - c.alpha
    hit = np.mean([cp.region_contains(c, Y, y) for Y, y in zip(ts, tt)])
    delta = 3 * math.sqrt(target * (1 - target) / n_test)
    assert target - delta <= hit <= target + 1 / (n_cal + 1) + delta


# --- regions ---------------------------------------------------------------

def test_pcp_box_is_conservative():
    rng = np.random.default_rng(13)
    cs, ct = _synthetic_task(300, rng)
    c = cp.calibrate_from_samples("PCP", cs, ct, 0.1)
    for Y, y in zip(*_synthetic_task(300, rng)):
        if cp.region_contains(c, Y, y):
            assert cp.region("PCP", c, Y, clip=False).contains(y)


def test_pcp_region_box_and_clip():
    c = cp.ConformalCalibrator("PCP", 0.1, 0.5, 10)
    r = cp.region("PCP", c, UNIT_BAND, clip=False)
    np.testing.assert_allclose(r.lower, [-0.5, -0.5])
    np.testing.assert_allclose(r.upper, [1.5, 1.5])
    rc = cp.region("PCP", c, UNIT_BAND)
    np.testing.assert_allclose(rc.lower, [0, 0])
    np.testing.assert_allclose(rc.upper, [1, 1])


def test_mmcp_region_example():
    Y = np.array([[0.4], [0.6]])  # mu 0.5, sigma 0.1
    r = cp.region("MMCP", cp.ConformalCalibrator("MMCP", 0.1, 2.0, 10), Y)
    np.testing.assert_allclose([r.lower[0], r.upper[0]], [0.3, 0.7])


def test_mcp_zero_threshold_is_raw_band():
    Y = np.random.default_rng(8).uniform(size=(30, 3))
    c = cp.ConformalCalibrator("MCP", 0.2, 0.0, 10, band_alpha=0.1)
    r = cp.region("MCP", c, Y)
    lo, hi = cp.quantile_band(Y, 0.1)
    np.testing.assert_array_equal(r.lower, lo)
    np.testing.assert_array_equal(r.upper, hi)


def test_kind_mismatch_rejected():
    with pytest.raises(ValueError):
        cp.region("PCP", cp.ConformalCalibrator("MMCP", 0.1, 1.0, 10), UNIT_BAND)


def test_region_properties():
    rng = np.random.default_rng(9)
    Y = rng.normal(0.5, 0.3, size=(40, 6))
    mu = Y.mean(axis=0)
    for kind, q in (("MMCP", 1.5), ("CCP", np.full(6, 0.2)), ("PCP", 0.3), ("MCP", 0.1)):
        c = cp.ConformalCalibrator(kind, 0.1, q, 10, band_alpha=0.1 if kind == "MCP" else None)
        raw = cp.region(kind, c, Y, clip=False)
        clipped = cp.region(kind, c, Y)
        assert np.all(clipped.width <= raw.width + 1e-15)
        assert np.all((clipped.lower >= 0) & (clipped.upper <= 1) & (clipped.lower <= clipped.upper))
        if kind in ("MMCP", "CCP"):
            np.testing.assert_allclose(raw.upper - mu, mu - raw.lower)
        if kind == "PCP":
            assert np.all((raw.lower <= Y) & (Y <= raw.upper))


def test_baselines():
    Y = np.random.default_rng(10).uniform(size=(500, 24))
    r = cp.baseline_region("naive_joint", Y, 0.1, clip=False)
    lo, hi = cp.quantile_band(Y, 0.1 / 24)
    np.testing.assert_array_equal(r.lower, lo)
    np.testing.assert_array_equal(r.upper, hi)
    col = np.tile(np.arange(1.0, 11.0)[:, None], (1, 2))
    ind = cp.baseline_region("individual", col, 0.1, clip=False)
    np.testing.assert_array_equal(ind.lower, [1, 1])
    np.testing.assert_array_equal(ind.upper, [9, 9])
    const = cp.baseline_region("individual", np.full((10, 3), 0.4), 0.1)
    np.testing.assert_array_equal(const.width, 0)
    with pytest.raises(ValueError):
        cp.baseline_region("bogus", Y, 0.1)


def test_point_mean():
    np.testing.assert_allclose(cp.baseline_point_mean([[1, 3], [3, 1]]), [2, 2])
    np.testing.assert_array_equal(cp.baseline_point_mean([[4.0, 5.0]]), [4, 5])
    Y = np.random.default_rng(12).normal(size=(1000, 3))
    running = np.zeros(3)
    for i, row in enumerate(Y, start=1):
        running += (row - running) / i
    np.testing.assert_allclose(cp.baseline_point_mean(Y), running, atol=1e-12)
