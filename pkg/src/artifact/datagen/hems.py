"""Surrogate home energy management LP.

One prosumer-day is a linear program over six length-T variable groups
``[c, d, g+, g-, y, soc]``::

    min  sum_t  P_t g+_t - S_t g-_t - I_t y_t
    s.t. soc_t = soc_{t-1} + sqrt(eta) c_t - d_t / sqrt(eta) - a_t y_t / sqrt(eta)
         g+_t - g-_t = load_t - solar_t + c_t - d_t
         y_t / sqrt(eta) <= soc_{t-1}
         c_t / b_ch + d_t / b_dis + y_t / b_dis <= 1
         soc_0 = b_cap / 2,  b_cap / 2 <= soc_T,  0 <= soc_t <= b_cap
         0 <= c <= b_ch,  0 <= d <= b_dis,  0 <= y <= b_dis,  g+, g- >= 0

A tiny cost on ``c``, ``d`` and ``y`` picks the least-activity optimum among
ties so results do not depend on solver pivoting.  Independent prosumers of
one scenario are solved together as a single block-diagonal LP.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from ..core_data import MarketScenario, ProsumerAssets

TIE_BREAK = 1e-7
N_GROUPS = 6
SOC_START = 0.5
FEAS_TOL = 1e-9


@dataclass(frozen=True)
class ProsumerDay:
    """Inputs of one prosumer for one scenario."""

    market: MarketScenario
    load: np.ndarray
    solar: np.ndarray

    def __post_init__(self):
        T = self.market.horizon
        for name in ("load", "solar"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (T,):
                raise ValueError(f"{name} must have length {T}")
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, v)


@dataclass
class HemsSolution:
    y: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    g_import: np.ndarray
    g_export: np.ndarray
    soc: np.ndarray
    objective: float

    def violations(self, day: ProsumerDay, assets: ProsumerAssets, tol: float = 1e-6) -> list:
        """Names of the invariants this schedule breaks after re-simulation."""
        out = []
        a = assets
        scale = tol * max(1.0, a.b_cap, a.b_dis, a.b_ch)
        flows = (self.y, self.charge, self.discharge, self.g_import, self.g_export)
        if any(np.any(v < -scale) for v in flows):
            out.append("negative flow")
        soc = resimulate(self, day.market.activation, a)
        if np.max(np.abs(soc - self.soc)) > scale:
            out.append("soc dynamics")
        if np.any(soc < -scale) or np.any(soc > a.b_cap + scale):
            out.append("soc bounds")
        if soc[-1] < SOC_START * a.b_cap - scale:
            out.append("terminal soc")
        if np.any(self.y > a.b_dis + scale) or np.any(self.charge > a.b_ch + scale) \
                or np.any(self.discharge > a.b_dis + scale):
            out.append("power limits")
        budget = self.charge / a.b_ch + self.discharge / a.b_dis + self.y / a.b_dis
        if np.any(budget > 1 + FEAS_TOL + tol):
            out.append("power budget")
        prev = np.concatenate([[SOC_START * a.b_cap], soc[:-1]])
        if np.any(self.y / np.sqrt(a.eta_rt) > prev + scale):
            out.append("deliverability")
        net = day.load - day.solar + self.charge - self.discharge
        if np.max(np.abs(self.g_import - self.g_export - net)) > scale:
            out.append("grid balance")
        return out


def resimulate(sol: HemsSolution, activation, assets: ProsumerAssets) -> np.ndarray:
    """State of charge implied by the returned flows."""
    r = np.sqrt(assets.eta_rt)
    step = r * sol.charge - sol.discharge / r - np.asarray(activation) * sol.y / r
    return SOC_START * assets.b_cap + np.cumsum(step)


def objective_value(day: ProsumerDay, g_import, g_export, y) -> float:
    m = day.market
    return float(m.purchase_price @ g_import - m.sale_price @ g_export - m.incentive @ y)


def _pattern(T: int):
    """Triplets of one prosumer block with symbolic coefficient tags.

    Columns are c, d, g+, g-, y, soc (offsets 0, T, ..., 5T).  Tags index the
    per-prosumer coefficient table built in :func:`_coefficients`.
    """
    t = np.arange(T)
    col = {g: k * T + t for k, g in enumerate(("c", "d", "gp", "gm", "y", "soc"))}
    prev = col["soc"][:-1]
    eq = [  # soc_t - soc_{t-1} - r c_t + d_t / r + a_t y_t / r = soc_0 [t = 0]
        (t, col["soc"], 0), (t[1:], prev, 1), (t, col["c"], 2), (t, col["d"], 3), (t, col["y"], 4),
        # g+_t - g-_t - c_t + d_t = load_t - solar_t
        (T + t, col["gp"], 0), (T + t, col["gm"], 1), (T + t, col["c"], 1), (T + t, col["d"], 0),
    ]
    ub = [  # y_t / r - soc_{t-1} <= soc_0 [t = 0]
        (t, col["y"], 5), (t[1:], prev, 1),
        # c_t / b_ch + (d_t + y_t) / b_dis <= 1
        (T + t, col["c"], 6), (T + t, col["d"], 7), (T + t, col["y"], 7),
    ]
    return [_stack(parts) for parts in (eq, ub)]


def _stack(parts):
    rows = np.concatenate([np.broadcast_to(r, np.shape(c)) for r, c, _ in parts])
    cols = np.concatenate([c for _, c, _ in parts])
    tags = np.concatenate([np.full(np.size(c), g) for _, c, g in parts])
    return rows, cols, tags


def _coefficients(a: ProsumerAssets) -> np.ndarray:
    """Coefficient table per tag; tag 4 varies by hour through the activation."""
    r = np.sqrt(a.eta_rt)
    return np.array([1.0, -1.0, -r, 1 / r, np.nan, 1 / r, 1 / a.b_ch, 1 / a.b_dis])


def _vectors(day: ProsumerDay, a: ProsumerAssets):
    m = day.market
    T = m.horizon
    soc0 = SOC_START * a.b_cap
    first = np.zeros(T)
    first[0] = soc0
    b_eq = np.concatenate([first, day.load - day.solar])
    b_ub = np.concatenate([first, np.ones(T)])
    tb = np.full(T, TIE_BREAK)
    cost = np.concatenate([tb, tb, m.purchase_price, -m.sale_price, tb - m.incentive, np.zeros(T)])
    lo = np.zeros(N_GROUPS * T)
    lo[-1] = soc0  # terminal state of charge
    hi = np.concatenate([np.full(T, a.b_ch), np.full(T, a.b_dis), np.full(T, np.inf),
                         np.full(T, np.inf), np.full(T, a.b_dis), np.full(T, a.b_cap)])
    return cost, b_eq, b_ub, lo, hi


def _assemble(days, assets, T: int):
    n = len(days)
    width = N_GROUPS * T
    mats = []
    for rows, cols, tags in _pattern(T):
        vals = []
        for d, a in zip(days, assets):
            coef = _coefficients(a)
            v = coef[tags]
            act = tags == 4
            v[act] = d.market.activation[cols[act] - 4 * T] / np.sqrt(a.eta_rt)
            vals.append(v)
        off = np.arange(n)[:, None]
        mats.append(coo_matrix(
            (np.concatenate(vals), ((off * 2 * T + rows).ravel(), (off * width + cols).ravel())),
            shape=(n * 2 * T, n * width)).tocsc())
    vecs = [_vectors(d, a) for d, a in zip(days, assets)]
    cost, b_eq, b_ub, lo, hi = (np.concatenate([v[k] for v in vecs]) for k in range(5))
    return cost, mats[0], b_eq, mats[1], b_ub, lo, hi


def _unpack(x: np.ndarray, day: ProsumerDay) -> HemsSolution:
    T = day.market.horizon
    c, d, gp, gm, y, soc = (np.maximum(x[k * T:(k + 1) * T], 0.0) for k in range(N_GROUPS))
    return HemsSolution(y, c, d, gp, gm, soc, objective_value(day, gp, gm, y))


def solve_cluster(days, assets) -> list:
    """Solve every prosumer of one scenario in a single block-diagonal LP."""
    days, assets = list(days), list(assets)
    if len(days) != len(assets) or not days:
        raise ValueError("need one asset record per prosumer day")
    T = days[0].market.horizon
    if any(d.market.horizon != T for d in days):
        raise ValueError("all prosumer days must share the horizon")
    cost, A_eq, b_eq, A_ub, b_ub, lo, hi = _assemble(days, assets, T)
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=np.column_stack([lo, hi]), method="highs")
    if res.status != 0:
        raise RuntimeError(f"HEMS LP failed: {res.message}")
    n = N_GROUPS * T
    return [_unpack(res.x[i * n:(i + 1) * n], d) for i, d in enumerate(days)]


def surrogate_hems(day: ProsumerDay, assets: ProsumerAssets) -> HemsSolution:
    return solve_cluster([day], [assets])[0]


def idle_schedule(day: ProsumerDay, assets: ProsumerAssets) -> HemsSolution:
    """The always-feasible schedule with no battery use and no reservation."""
    T = day.market.horizon
    net = day.load - day.solar
    gp, gm = np.maximum(net, 0.0), np.maximum(-net, 0.0)
    z = np.zeros(T)
    return HemsSolution(z, z.copy(), z.copy(), gp, gm, np.full(T, SOC_START * assets.b_cap),
                        objective_value(day, gp, gm, z))
