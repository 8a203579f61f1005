import csv
import itertools

import numpy as np
import pytest

from artifact.bidding import (
    arc_elasticity, beta_sweep, incentive_profile, optimal_bid, pi_benchmark, settle,
    write_sensitivity_csv,
)

BETAS = np.round(np.arange(1, 10) / 10, 10)


def test_incentive_profile():
    np.testing.assert_allclose(incentive_profile(0.2, [100, 50]), [20, 10])
    assert np.all(incentive_profile(0.0, [100, 50]) == 0)
    np.testing.assert_allclose(incentive_profile(1.0, [100, 50]), [100, 50])
    with pytest.raises(ValueError):
        incentive_profile(1.5, [1])


def test_optimal_bid_example():
    d = optimal_bid([3, 4, 5], [10, -2, 5], 0.1)
    np.testing.assert_allclose(d.bids, [3, 0, 5])
    assert d.predicted_profit == pytest.approx(49.5)
    z = optimal_bid(np.zeros(4), np.ones(4), 0.3)
    assert np.all(z.bids == 0) and z.predicted_profit == 0


def test_optimal_bid_matches_vertex_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        T = int(rng.integers(1, 11))
        lo = rng.uniform(0, 5, size=T)
        lam = rng.uniform(-1, 3, size=T)
        beta = float(rng.uniform(0, 0.95))
        best = max(sum((1 - beta) * lam[t] * x[t] for t in range(T))
                   for x in itertools.product(*[(0.0, lo[t]) for t in range(T)]))
        d = optimal_bid(lo, lam, beta)
        assert d.predicted_profit == pytest.approx(best, abs=1e-12)
        assert np.all(d.bids <= lo) and np.all(d.bids >= 0)


def test_settle_examples():
    r = settle([1, 1], [2, 2], [10, 20], 0.1)
    assert r.R == pytest.approx(27) and r.R1 == pytest.approx(27) and r.R2 == pytest.approx(27)
    r = settle([1, 1], [2, 0], [10, 20], 0.1)
    assert r.gamma == 0.5
    assert (r.R, r.R1, r.R2) == pytest.approx((27, 7, 12))
    assert settle([3, 4], [0, 0], [5, 6], 1.0).R == 0


def test_settlement_identities_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        x = rng.uniform(0, 5, size=24) * (rng.random(24) < 0.8)
        y = x + rng.uniform(-1, 3, size=24)
        lam = rng.uniform(0, 0.3, size=24)
        beta = float(rng.choice(BETAS))
        r = settle(x, y, lam, beta)
        assert r.R1 <= r.R + 1e-12 and r.R2 <= r.R + 1e-12
        if r.gamma == 0:
            assert r.R1 == pytest.approx(r.R, rel=1e-9) and r.R2 == pytest.approx(r.R, rel=1e-9)
        assert r.R2 == pytest.approx((1 - r.gamma - beta) * np.sum(lam * x))


def test_pi_benchmark_examples():
    lam = np.full(24, 100.0)
    assert pi_benchmark(np.full(24, 2.0), lam, BETAS) == pytest.approx((4320.0, 0.1))
    assert pi_benchmark(np.zeros(24), lam, BETAS)[0] == 0
    with pytest.raises(ValueError):
        pi_benchmark(np.ones(3), np.ones(3), [])


def test_pi_benchmark_ignores_non_positive_prices():
    assert pi_benchmark([1, 1], [-5, 10], [0.0])[0] == 10


def test_arc_elasticity():
    assert arc_elasticity([0.1, 0.2], [100, 103])[0] == pytest.approx(0.03)
    assert np.all(arc_elasticity(BETAS, np.full(9, 7.0)) == 0)


def test_argmax_invariance_under_price_scaling():
    rng = np.random.default_rng(2)
    lo = rng.uniform(0, 3, size=24)
    lam = rng.uniform(-0.1, 0.3, size=24)
    a, b = optimal_bid(lo, lam, 0.2), optimal_bid(lo, 7 * lam, 0.2)
    np.testing.assert_array_equal(a.bids > 0, b.bids > 0)
    assert b.predicted_profit == pytest.approx(7 * a.predicted_profit)


def test_smaller_lower_bound_never_raises_gamma():
    rng = np.random.default_rng(3)
    for _ in range(100):
        y = rng.uniform(0, 2, size=24)
        lo = rng.uniform(0, 2, size=24)
        lo2 = lo * rng.uniform(0, 1, size=24)
        lam = np.ones(24)
        g1 = settle(optimal_bid(lo, lam, 0.1).bids, y, lam, 0.1).gamma
        g2 = settle(optimal_bid(lo2, lam, 0.1).bids, y, lam, 0.1).gamma
        # fewer or equal overbid hours; the share can only move with the active set
        n1 = np.sum((lo > 0) & (y < lo))
        n2 = np.sum((lo2 > 0) & (y < lo2))
        assert n2 <= n1
        assert g1 >= 0 and g2 >= 0


def _sweep_inputs(n=30, T=24, seed=4, overbid=False):
    rng = np.random.default_rng(seed)
    truths, lowers, prices = [], [], []
    lam = rng.uniform(0.05, 0.2, size=(n, T))
    base = rng.uniform(50, 100, size=(n, T))
    for k, b in enumerate(BETAS):
        y = base * (1 + 0.01 * k)
        truths.append(y)
        lowers.append(y * (1.2 if overbid else 0.8))
        prices.append(lam)
    return lowers, truths, prices


def test_beta_sweep_overbid_free_and_csv(tmp_path):
    rep = beta_sweep("CCP", BETAS, *_sweep_inputs())
    assert np.all(rep.beta_star == 0.1) and rep.share_beta_min == 1
    for k in ("R", "R1", "R2"):
        assert rep.table[k] == pytest.approx(rep.table["R"], abs=1e-9)
        assert rep.table[k] <= 100
    assert rep.elasticity.size == 8
    write_sensitivity_csv([rep], tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert len(rows) == 9 and rows[0]["beta"] == "0.1"


def test_beta_sweep_overbidding_penalised():
    rep = beta_sweep("mean", BETAS, *_sweep_inputs(overbid=True))
    assert rep.table["R1"] < rep.table["R"] and rep.table["R2"] < 0


def test_beta_sweep_validation():
    lowers, truths, prices = _sweep_inputs()
    with pytest.raises(ValueError):
        beta_sweep("x", BETAS, lowers[:-1], truths, prices)
    with pytest.raises(ValueError):
        beta_sweep("x", BETAS, lowers, truths, prices, criterion="bogus")
