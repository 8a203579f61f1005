"""Up-regulation capacity bidding, settlement and revenue-sharing sweeps.

Prices passed here must be in DKK per kWh-hour so that profits come out in
DKK (the pipeline converts DKK/MWh capacity prices with ``/ 1000``).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .metrics import conditional_overbid_gamma

SELECTION_CRITERIA = ("R", "R1", "R2")


def incentive_profile(beta: float, capacity_price) -> np.ndarray:
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    return beta * np.asarray(capacity_price, dtype=float)


@dataclass
class BidDecision:
    bids: np.ndarray
    beta: float
    incentive: np.ndarray
    predicted_profit: float


def optimal_bid(lower, capacity_price, beta: float) -> BidDecision:
    """Bid the region's lower bound in every hour with a positive net price.

    The objective is separable and linear, so each hour sits at one of its
    bounds ``0`` or ``l_t``.
    """
    lo = np.asarray(getattr(lower, "lower", lower), dtype=float)
    lam = np.asarray(capacity_price, dtype=float)
    if lo.shape != lam.shape:
        raise ValueError("lower bound and price vector differ in shape")
    if not 0 <= beta < 1:
        raise ValueError("beta must lie in [0, 1)")
    margin = (1 - beta) * lam
    x = np.where(margin > 0, np.maximum(lo, 0.0), 0.0)
    return BidDecision(x, beta, incentive_profile(beta, lam), float(np.sum(margin * x)))


@dataclass
class ProfitReport:
    R: float
    R1: float
    R2: float
    gamma: float
    bid_value: float
    pi_profit: float | None = None
    beta: float | None = None

    def percent_of_pi(self) -> dict:
        if not self.pi_profit:
            return {k: float("nan") for k in ("R", "R1", "R2")}
        return {k: 100 * getattr(self, k) / self.pi_profit for k in ("R", "R1", "R2")}


def settle(bids, truth, capacity_price, beta: float) -> ProfitReport:
    """Unadjusted, hourly-settled and daily-settled aggregator profit.

    Prosumer incentives ``beta * sum(price * bid)`` are paid in full under
    both settlements.
    """
    x = np.asarray(bids, dtype=float)
    y = np.asarray(truth, dtype=float)
    lam = np.asarray(capacity_price, dtype=float)
    if not (x.shape == y.shape == lam.shape):
        raise ValueError("bids, truth and prices must share a shape")
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    value = float(np.sum(lam * x))
    gamma = conditional_overbid_gamma(x, y)
    R = (1 - beta) * value
    R1 = float(np.sum(np.where(x <= y, lam * x, 0.0))) - beta * value
    R2 = (1 - gamma - beta) * value
    return ProfitReport(R, R1, R2, gamma, value, beta=beta)


def pi_benchmark(truth, capacity_price, beta_grid):
    """Best perfect-information profit over the grid and the beta attaining it.

    ``truth`` is either one vector used for every beta, or one row per grid
    entry when the available flexibility itself depends on beta.
    """
    grid = np.asarray(beta_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty beta grid")
    if np.any(grid < 0) or np.any(grid >= 1):
        raise ValueError("beta grid must lie in [0, 1)")
    lam = np.asarray(capacity_price, dtype=float)
    y = np.asarray(truth, dtype=float)
    Y = np.broadcast_to(y, (grid.size, lam.size)) if y.ndim == 1 else y
    if Y.shape != (grid.size, lam.size):
        raise ValueError("truth rows must match the beta grid")
    value = np.sum(np.where(lam > 0, lam, 0.0) * Y, axis=1)
    profits = (1 - grid) * value
    k = int(np.argmax(profits))
    return float(profits[k]), float(grid[k])


def arc_elasticity(betas, volumes) -> np.ndarray:
    """Percentage change in volume over percentage change in beta between neighbours."""
    b = np.asarray(betas, dtype=float)
    v = np.asarray(volumes, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = (np.diff(v) / v[:-1]) / (np.diff(b) / b[:-1])
    return np.where(np.isfinite(e), e, 0.0)


@dataclass
class SensitivityReport:
    """Per-beta means for one bidding method plus per-scenario beta*."""

    method: str
    betas: np.ndarray
    mean_R: np.ndarray
    mean_R1: np.ndarray
    mean_R2: np.ndarray
    mean_gamma: np.ndarray
    mean_bid_value: np.ndarray
    bid_volume: np.ndarray
    pct_pi: dict
    beta_star: np.ndarray
    elasticity: np.ndarray
    criterion: str = "R1"
    table: dict = field(default_factory=dict)
    per_scenario: dict = field(default_factory=dict)

    @property
    def mean_elasticity(self) -> float:
        return float(np.mean(self.elasticity)) if self.elasticity.size else 0.0

    @property
    def share_beta_min(self) -> float:
        return float(np.mean(self.beta_star == self.betas.min()))

    def rows(self) -> list:
        out = []
        for k, b in enumerate(self.betas):
            out.append({
                "method": self.method, "beta": repr(float(b)),
                "mean_R": repr(float(self.mean_R[k])), "mean_R1": repr(float(self.mean_R1[k])),
                "mean_R2": repr(float(self.mean_R2[k])), "mean_gamma": repr(float(self.mean_gamma[k])),
                "mean_bid_value": repr(float(self.mean_bid_value[k])),
                "pct_PI_R": repr(float(self.pct_pi["R"][k])),
                "pct_PI_R1": repr(float(self.pct_pi["R1"][k])),
                "pct_PI_R2": repr(float(self.pct_pi["R2"][k])),
            })
        return out


SENSITIVITY_COLUMNS = ["method", "beta", "mean_R", "mean_R1", "mean_R2", "mean_gamma",
                       "mean_bid_value", "pct_PI_R", "pct_PI_R1", "pct_PI_R2"]


def beta_sweep(method: str, betas, lowers, truths, capacity_prices,
               criterion: str = "R1") -> SensitivityReport:
    """Bid, settle and summarize one method across the beta grid.

    ``lowers[k]``, ``truths[k]`` and ``capacity_prices[k]`` are ``(n, T)``
    arrays for grid entry ``k``; row ``j`` is the same underlying scenario
    for every ``k``.  Percentages are ratios of mean profit to mean
    perfect-information profit.  ``table`` holds the profits at each
    scenario's beta* (selected by ``criterion``) as a share of PI.
    """
    if criterion not in SELECTION_CRITERIA:
        raise ValueError(f"criterion must be one of {SELECTION_CRITERIA}")
    betas = np.asarray(betas, dtype=float)
    if len(lowers) != betas.size or len(truths) != betas.size or len(capacity_prices) != betas.size:
        raise ValueError("need one dataset per beta")
    n = np.asarray(truths[0]).shape[0]
    prof = {k: np.zeros((betas.size, n)) for k in ("R", "R1", "R2", "gamma", "value", "volume")}
    for k, beta in enumerate(betas):
        for j in range(n):
            lam = capacity_prices[k][j]
            bid = optimal_bid(lowers[k][j], lam, beta)
            rep = settle(bid.bids, truths[k][j], lam, beta)
            prof["R"][k, j], prof["R1"][k, j], prof["R2"][k, j] = rep.R, rep.R1, rep.R2
            prof["gamma"][k, j], prof["value"][k, j] = rep.gamma, rep.bid_value
            prof["volume"][k, j] = bid.bids.sum()
    pi = np.array([
        pi_benchmark(np.stack([truths[k][j] for k in range(betas.size)]),
                     capacity_prices[0][j], betas)[0]
        for j in range(n)
    ])
    mean_pi = pi.mean()

    def pct(v):
        return 100 * v / mean_pi if mean_pi > 0 else np.full_like(v, np.nan)

    best = np.argmax(prof[criterion], axis=0)
    cols = np.arange(n)
    table = {k: float(pct(prof[k][best, cols].mean())) for k in ("R", "R1", "R2")}
    volume = prof["volume"].sum(axis=1)
    return SensitivityReport(
        method, betas,
        prof["R"].mean(axis=1), prof["R1"].mean(axis=1), prof["R2"].mean(axis=1),
        prof["gamma"].mean(axis=1), prof["value"].mean(axis=1), volume,
        {k: pct(prof[k].mean(axis=1)) for k in ("R", "R1", "R2")},
        betas[best], arc_elasticity(betas, volume), criterion, table,
        {**prof, "pi": pi},
    )


def write_sensitivity_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SENSITIVITY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerows(r.rows())
