"""Split conformal calibration over MC-dropout sample matrices.

Score kinds
-----------
MCP    max over hours of the distance outside the [Q(alpha), Q(1-alpha)] band
MMCP   max over hours of |y - mu| / sigma
PCP    distance from y to the nearest MC sample
CCP    per-hour thresholds on |y - mu| found by an empirical-copula search

Quantile convention: ``Q(v, tau)`` is the k-th smallest value with
``k = ceil(n * tau)`` clamped to ``[1, n]``.  Scores, regions and baselines
all use it.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mcd_net import SIGMA_FLOOR, mcd_sample, sample_mean_std

KINDS = ("MCP", "MMCP", "PCP", "CCP")
BASELINES = ("individual", "naive_joint")

_EPS = 1e-9


def _order_index(n: int, tau) -> np.ndarray:
    k = np.ceil(np.asarray(tau, dtype=float) * n - _EPS).astype(int)
    return np.clip(k, 1, n) - 1


def empirical_quantile(values: np.ndarray, tau, axis: int = 0) -> np.ndarray:
    """Order-statistic quantile along ``axis`` ("higher" convention)."""
    v = np.sort(np.asarray(values, dtype=float), axis=axis)
    idx = _order_index(v.shape[axis], tau)
    return np.take(v, idx, axis=axis)


def adjusted_quantile_level(n: int, alpha: float) -> float:
    return _rank(n, alpha) / (n + 1)


def _rank(n: int, alpha: float) -> int:
    if n < 1:
        raise ValueError("calibration size must be at least 1")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return math.ceil((n + 1) * (1 - alpha) - _EPS)


def conformal_quantile(scores, alpha: float) -> float:
    """k-th smallest score with k = ceil((n+1)(1-alpha)), or +inf if k > n."""
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("no calibration scores")
    if not np.all(np.isfinite(s)):
        raise ValueError("calibration scores must be finite")
    k = _rank(s.size, alpha)
    if k > s.size:
        return math.inf
    return float(np.partition(s, k - 1)[k - 1])


# --- scores ----------------------------------------------------------------

def _check(Y, y):
    Y = np.asarray(Y, dtype=float)
    y = np.asarray(y, dtype=float)
    if Y.ndim != 2 or y.shape != (Y.shape[1],):
        raise ValueError(f"sample matrix {Y.shape} and truth {y.shape} are incompatible")
    return Y, y


def quantile_band(Y, alpha: float):
    Y = np.sort(np.asarray(Y, dtype=float), axis=0)
    S = Y.shape[0]
    return Y[_order_index(S, alpha)], Y[_order_index(S, 1 - alpha)]


def score_mcp(Y, y, alpha: float) -> float:
    Y, y = _check(Y, y)
    lo, hi = quantile_band(Y, alpha)
    return float(np.max(np.maximum(lo - y, y - hi)))


def score_mmcp(Y, y) -> float:
    Y, y = _check(Y, y)
    mu, sigma = sample_mean_std(Y)
    return float(np.max(np.abs(y - mu) / sigma))


def score_pcp(Y, y) -> float:
    Y, y = _check(Y, y)
    return float(np.sqrt(np.min(np.sum((Y - y) ** 2, axis=1))))


def pcp_contains(Y, y, qhat: float) -> bool:
    """Exact membership in the union of balls of radius ``qhat`` around the rows of ``Y``."""
    return score_pcp(Y, y) <= qhat


def ccp_residuals(Y, y) -> np.ndarray:
    Y, y = _check(Y, y)
    return np.abs(y - Y.mean(axis=0))


def calibrate_ccp(residuals, alpha: float) -> np.ndarray:
    """Smallest common per-column rank whose thresholds jointly cover enough rows.

    With ``k* = ceil((n+1)(1-alpha))``, finds the smallest ``k`` in ``1..n``
    such that at least ``k*`` rows have every residual at or below the
    column's k-th order statistic.  ``k* > n`` gives +inf everywhere.
    """
    R = np.asarray(residuals, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    n, T = R.shape
    if n == 0:
        raise ValueError("no calibration residuals")
    if not np.all(np.isfinite(R)):
        raise ValueError("residuals must be finite")
    target = _rank(n, alpha)
    if target > n:
        return np.full(T, math.inf)
    cols = np.sort(R, axis=0)

    def covered(k):
        return int(np.sum(np.all(R <= cols[k - 1], axis=1)))

    lo, hi = 1, n  # covered(n) == n >= target
    while lo < hi:
        mid = (lo + hi) // 2
        if covered(mid) >= target:
            hi = mid
        else:
            lo = mid + 1
    return cols[lo - 1].copy()


# --- calibration -----------------------------------------------------------

@dataclass
class ConformalCalibrator:
    """Calibrated threshold(s) for one score kind.

    ``alpha`` is the miscoverage the region targets.  For MCP the quantile
    band is taken at ``band_alpha`` and the target is ``1 - 2 * band_alpha``
    unless configured otherwise.
    """

    kind: str
    alpha: float
    qhat: float | np.ndarray
    n: int
    band_alpha: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.kind == "CCP":
            self.qhat = np.asarray(self.qhat, dtype=float)
            if np.any(self.qhat < 0):
                raise ValueError("CCP thresholds must be nonnegative")
        else:
            self.qhat = float(self.qhat)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.qhat)))

    def to_json(self) -> dict:
        q = self.qhat
        if self.kind == "CCP":
            q = [v if math.isfinite(v) else "inf" for v in q.tolist()]
        elif not math.isfinite(q):
            q = "inf"
        return {"kind": self.kind, "alpha": self.alpha, "n": self.n, "qhat": q,
                "band_alpha": self.band_alpha, "seed": self.seed}

    @classmethod
    def from_json(cls, d: dict) -> "ConformalCalibrator":
        q = d["qhat"]
        q = [float(v) for v in q] if isinstance(q, list) else float(q)
        return cls(d["kind"], d["alpha"], q, d["n"], d.get("band_alpha"), d.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "ConformalCalibrator":
        return cls.from_json(json.loads(Path(path).read_text()))


def sample_seed(seed: int, stream: int, j: int) -> np.random.SeedSequence:
    """Seed for MC sampling of item ``j`` in ``stream``; independent of processing order."""
    return np.random.SeedSequence([int(seed), int(stream), int(j)])


def score(kind: str, Y, y, band_alpha: float | None = None) -> float:
    if kind == "MCP":
        return score_mcp(Y, y, band_alpha)
    if kind == "MMCP":
        return score_mmcp(Y, y)
    if kind == "PCP":
        return score_pcp(Y, y)
    raise ValueError(f"no scalar score for {kind!r}")


def calibrate_from_samples(kind: str, samples, truths, alpha: float,
                           band_alpha: float | None = None, seed=None) -> ConformalCalibrator:
    """Calibrate from precomputed sample matrices (one per calibration item).

    For MCP ``alpha`` is the band level and the conformal target is
    ``2 * alpha`` unless ``band_alpha`` is given explicitly.
    """
    truths = list(truths)
    if len(truths) == 0:
        raise ValueError("empty calibration set")
    if kind == "MCP":
        if band_alpha is None:
            band_alpha, alpha = alpha, 2 * alpha
    if kind == "CCP":
        R = np.stack([ccp_residuals(Y, y) for Y, y in zip(samples, truths)])
        q = calibrate_ccp(R, alpha)
    else:
        s = [score(kind, Y, y, band_alpha) for Y, y in zip(samples, truths)]
        q = conformal_quantile(s, alpha)
    return ConformalCalibrator(kind, alpha, q, len(truths), band_alpha, seed)


def calibrate(kind: str, model, cal_set, alpha: float, S: int, seed: int,
              band_alpha: float | None = None, stream: int = 1) -> ConformalCalibrator:
    """Run MC dropout on every calibration item and calibrate ``kind``."""
    if len(cal_set) == 0:
        raise ValueError("empty calibration set")
    samples = (mcd_sample(model, x, S, sample_seed(seed, stream, j))
               for j, x in enumerate(cal_set.inputs))
    return calibrate_from_samples(kind, samples, cal_set.outputs, alpha, band_alpha, seed)


# --- regions ---------------------------------------------------------------

@dataclass
class PredictionRegion:
    lower: np.ndarray
    upper: np.ndarray
    kind: str
    alpha: float

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper bounds differ in shape")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    def clip(self, lo: float = 0.0, hi: float = 1.0) -> "PredictionRegion":
        return PredictionRegion(np.clip(self.lower, lo, hi), np.clip(self.upper, lo, hi),
                                self.kind, self.alpha)

    def contains(self, y) -> bool:
        y = np.asarray(y, dtype=float)
        return bool(np.all((self.lower <= y) & (y <= self.upper)))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def region(kind: str, calibrator: ConformalCalibrator, Y, clip: bool = True) -> PredictionRegion:
    """Bounding box of the calibrated region for sample matrix ``Y``."""
    if calibrator.kind != kind:
        raise ValueError(f"calibrator is for {calibrator.kind}, not {kind}")
    if not calibrator.finite:
        raise ValueError(f"{kind} threshold is infinite: calibration set too small for alpha")
    Y = np.asarray(Y, dtype=float)
    q = calibrator.qhat
    if kind == "MCP":
        lo, hi = quantile_band(Y, calibrator.band_alpha)
        lo, hi = lo - q, hi + q
        # a negative threshold can empty a narrow band; collapse it to its midpoint
        mid = 0.5 * (lo + hi)
        lo, hi = np.minimum(lo, mid), np.maximum(hi, mid)
    elif kind == "MMCP":
        mu, sigma = sample_mean_std(Y)
        lo, hi = mu - q * sigma, mu + q * sigma
    elif kind == "PCP":
        lo, hi = Y.min(axis=0) - q, Y.max(axis=0) + q
    else:
        mu = Y.mean(axis=0)
        lo, hi = mu - q, mu + q
    r = PredictionRegion(lo, hi, kind, calibrator.alpha)
    return r.clip() if clip else r


def region_contains(calibrator: ConformalCalibrator, Y, y) -> bool:
    """Membership in the calibrated region itself (exact ball union for PCP, box otherwise)."""
    if calibrator.kind == "PCP":
        return pcp_contains(Y, y, calibrator.qhat)
    return region(calibrator.kind, calibrator, Y, clip=False).contains(y)


def baseline_region(kind: str, Y, alpha: float, clip: bool = True) -> PredictionRegion:
    """Uncalibrated per-hour quantile bands (individual or Bonferroni-corrected)."""
    Y = np.asarray(Y, dtype=float)
    if kind == "individual":
        tail = alpha
    elif kind == "naive_joint":
        tail = alpha / Y.shape[1]
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    lo, hi = quantile_band(Y, tail)
    r = PredictionRegion(lo, hi, kind, alpha)
    return r.clip() if clip else r


def baseline_point_mean(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 1:
        raise ValueError("need at least one sample row")
    return Y.mean(axis=0)


__all__ = [
    "KINDS", "BASELINES", "SIGMA_FLOOR", "empirical_quantile", "adjusted_quantile_level",
    "conformal_quantile", "quantile_band", "score_mcp", "score_mmcp", "score_pcp",
    "pcp_contains", "region_contains", "ccp_residuals", "calibrate_ccp", "ConformalCalibrator", "calibrate",
    "calibrate_from_samples", "PredictionRegion", "region", "baseline_region",
    "baseline_point_mean", "sample_seed",
]
