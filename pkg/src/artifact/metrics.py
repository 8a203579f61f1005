"""Interval quality and P90 compliance metrics.

All functions take bounds and truths as ``(n, T)`` arrays in kW.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

P90_LIMIT = 0.10


@dataclass
class EvalBatch:
    lower: np.ndarray
    upper: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.lower = np.atleast_2d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_2d(np.asarray(self.upper, dtype=float))
        self.truth = np.atleast_2d(np.asarray(self.truth, dtype=float))
        if not (self.lower.shape == self.upper.shape == self.truth.shape):
            raise ValueError("lower, upper and truth must share a shape")
        if self.truth.shape[0] == 0:
            raise ValueError("empty evaluation batch")

    @classmethod
    def from_regions(cls, regions, truths) -> "EvalBatch":
        regions = list(regions)
        return cls([r.lower for r in regions], [r.upper for r in regions], list(truths))

    @property
    def horizon(self) -> int:
        return self.truth.shape[1]


def picp(batch: EvalBatch):
    inside = (batch.lower <= batch.truth) & (batch.truth <= batch.upper)
    return inside.mean(axis=0), float(np.all(inside, axis=1).mean())


def mpiw(batch: EvalBatch):
    marginal = (batch.upper - batch.lower).mean(axis=0)
    return marginal, float(marginal.mean())


def interval_score(batch: EvalBatch, alpha: float):
    """Width plus (2/alpha)-weighted mean exceedances below and above the bounds."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    lo, hi, y = batch.lower, batch.upper, batch.truth
    lpen = (2 / alpha) * np.where(y <= lo, lo - y, 0.0).mean(axis=0)
    upen = (2 / alpha) * np.where(hi <= y, y - hi, 0.0).mean(axis=0)
    marginal = mpiw(batch)[0] + lpen + upen
    return marginal, float(marginal.mean())


def overbid_frequency(truth, lower):
    """Fraction of hours with truth strictly below the lower bound (per row if 2-D)."""
    y = np.asarray(truth, dtype=float)
    lo = np.asarray(lower, dtype=float)
    if y.shape != lo.shape:
        raise ValueError("truth and lower bound differ in shape")
    return (y < lo).mean(axis=-1)


def p90_compliant(batch_or_truth, lower=None):
    """Mean daily overbid frequency and whether it stays below 10 %."""
    if isinstance(batch_or_truth, EvalBatch):
        y, lo = batch_or_truth.truth, batch_or_truth.lower
    else:
        y, lo = np.atleast_2d(batch_or_truth), np.atleast_2d(lower)
        if y.shape[0] == 0:
            raise ValueError("empty evaluation batch")
    mean = float(np.mean(overbid_frequency(y, lo)))
    return mean, mean < P90_LIMIT


def conditional_overbid_gamma(bid, truth) -> float:
    """Share of positive-bid hours in which the bid exceeds the truth (0 if no bids)."""
    x = np.asarray(bid, dtype=float)
    y = np.asarray(truth, dtype=float)
    if x.shape != y.shape:
        raise ValueError("bid and truth differ in shape")
    if np.any(x < 0):
        raise ValueError("bids must be nonnegative")
    active = x > 0
    n = int(active.sum())
    if n == 0:
        return 0.0
    return float(np.sum(active & (y < x)) / n)


@dataclass
class MetricReport:
    method: str
    expected_coverage: float
    picp_marginal: np.ndarray | None
    picp_joint: float | None
    mpiw_marginal: np.ndarray | None
    mpiw_joint: float | None
    is_marginal: np.ndarray | None
    is_joint: float | None
    overbid_daily: np.ndarray

    @property
    def mean_overbid(self) -> float:
        return float(np.mean(self.overbid_daily))

    def row(self) -> dict:
        def f(v):
            return "" if v is None else repr(float(v))
        return {
            "method": self.method,
            "expected_coverage": repr(float(self.expected_coverage)),
            "joint_PICP": f(self.picp_joint),
            "joint_MPIW": f(self.mpiw_joint),
            "joint_IS": f(self.is_joint),
            "mean_overbid": repr(self.mean_overbid),
        }

    def to_json(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        d["mean_overbid"] = self.mean_overbid
        return d


def evaluate_intervals(method: str, batch: EvalBatch, alpha: float,
                       expected_coverage: float) -> MetricReport:
    pm, pj = picp(batch)
    wm, wj = mpiw(batch)
    im, ij = interval_score(batch, alpha)
    return MetricReport(method, expected_coverage, pm, pj, wm, wj, im, ij,
                        overbid_frequency(batch.truth, batch.lower))


def evaluate_point(method: str, point, truth) -> MetricReport:
    """Point forecasts only support the overbid metric."""
    point = np.atleast_2d(point)
    return MetricReport(method, float("nan"), None, None, None, None, None, None,
                        overbid_frequency(np.atleast_2d(truth), point))


REPORT_COLUMNS = ["method", "expected_coverage", "joint_PICP", "joint_MPIW", "joint_IS", "mean_overbid"]


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def write_reports_json(reports, path) -> None:
    Path(path).write_text(json.dumps([r.to_json() for r in reports], indent=1))
