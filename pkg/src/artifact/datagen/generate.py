"""Scenario sampling, aggregation and dataset generation."""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..core_data import Dataset, LabeledSample, MarketScenario, ScenarioInput
from .activation import synthesize_activation
from .catalog import AssetCatalog, sample_prosumers
from .hems import ProsumerDay, solve_cluster
from .pools import ScenarioPools

ASSET_STREAM = 0
RANDOM_STREAM = 1
BETA_STREAM = 2


@dataclass(frozen=True)
class IncentiveMode:
    """``beta is None`` draws random hourly multipliers, otherwise a fixed share."""

    beta: float | None = None

    def __post_init__(self):
        if self.beta is not None and not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")

    @classmethod
    def parse(cls, text) -> "IncentiveMode":
        if isinstance(text, IncentiveMode):
            return text
        if text in (None, "random"):
            return cls()
        if isinstance(text, str) and text.startswith("fixed_beta(") and text.endswith(")"):
            return cls(float(text[len("fixed_beta("):-1]))
        if isinstance(text, (int, float)):
            return cls(float(text))
        raise ValueError(f"unknown incentive mode {text!r}")

    def __str__(self) -> str:
        return "random" if self.beta is None else f"fixed_beta({self.beta!r})"


@dataclass(frozen=True)
class Scenario:
    market: MarketScenario
    days: tuple  # ProsumerDay per prosumer


def sample_scenario(pools: ScenarioPools, assets, seed, incentive_mode="random",
                    activation=(0.1, 0.7)) -> Scenario:
    """One shared market draw plus independent load and solar per prosumer."""
    mode = IncentiveMode.parse(incentive_mode)
    rng = np.random.default_rng(seed)
    T = pools.horizon
    k = rng.integers(pools.sale_price.shape[0])
    lam_u = pools.capacity_price[rng.integers(pools.capacity_price.shape[0])]
    act = synthesize_activation(activation[0], activation[1], T, rng=rng)
    m = rng.uniform(0.0, 1.0, size=T)  # drawn in every mode to keep streams aligned
    share = m if mode.beta is None else np.full(T, mode.beta)
    market = MarketScenario(pools.purchase_price[k], pools.sale_price[k], lam_u, act,
                            share * lam_u / 1000.0)
    tilts = pools.tilts
    days = []
    for a in assets:
        load = pools.load[rng.integers(pools.load.shape[0])]
        unit = pools.solar[tilts[rng.integers(len(tilts))]]
        solar = a.pv_kw * unit[rng.integers(unit.shape[0])]
        days.append(ProsumerDay(market, load, solar))
    return Scenario(market, tuple(days))


def aggregate(days, solutions, assets) -> LabeledSample:
    """Sum per-prosumer profiles, ratings and reserved capacity."""
    days, solutions, assets = list(days), list(solutions), list(assets)
    if not days or not (len(days) == len(solutions) == len(assets)):
        raise ValueError("need matching, non-empty prosumer lists")
    T = days[0].market.horizon
    if any(d.load.size != T for d in days) or any(s.y.size != T for s in solutions):
        raise ValueError("mismatched horizon")
    inp = ScenarioInput(
        days[0].market,
        np.sum([d.load for d in days], axis=0),
        np.sum([d.solar for d in days], axis=0),
        float(sum(a.b_dis for a in assets)),
        float(sum(a.b_cap for a in assets)),
    )
    y = np.clip(np.sum([s.y for s in solutions], axis=0), 0.0, inp.b_dis_agg)
    return LabeledSample(inp, y)


@dataclass
class GenerationConfig:
    n_prosumers: int = 20
    n_scenarios: int = 1000
    seed: int = 0
    incentive_mode: str = "random"
    activation_rate: float = 0.1
    activation_rho: float = 0.7

    def __post_init__(self):
        if self.n_prosumers < 1 or self.n_scenarios < 1:
            raise ValueError("n_prosumers and n_scenarios must be positive")
        IncentiveMode.parse(self.incentive_mode)
        synthesize_activation(self.activation_rate, self.activation_rho, 1, seed=0)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "GenerationConfig":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "GenerationConfig":
        return cls.from_json(json.loads(Path(path).read_text()))


def fixed_assets(catalog: AssetCatalog, n_prosumers: int, seed: int) -> list:
    return sample_prosumers(catalog, n_prosumers, np.random.SeedSequence([seed, ASSET_STREAM]))


def _stream(mode: IncentiveMode) -> int:
    return RANDOM_STREAM if mode.beta is None else BETA_STREAM


def _run_chunk(args):
    pools, assets, seed, stream, mode, activation, indices = args
    rows = []
    for j in indices:
        sc = sample_scenario(pools, assets, np.random.SeedSequence([seed, stream, j]), mode, activation)
        sols = solve_cluster(sc.days, assets)
        s = aggregate(sc.days, sols, assets)
        rows.append((s.input.features(), s.output, s.input.b_dis_agg, sc.market.capacity_price))
    return rows


def generate(pools: ScenarioPools, catalog: AssetCatalog, n_prosumers: int, n_scenarios: int,
             seed: int, incentive_mode="random", activation=(0.1, 0.7), assets=None,
             threads: int = 1) -> Dataset:
    """Build a dataset scenario by scenario.

    Scenario ``j`` uses only the seed ``(seed, stream, j)``, where the stream
    separates random-incentive data from fixed-share data, so every fixed
    share sees the same underlying scenarios.  Output order is the scenario
    index whatever the worker count.
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be positive")
    mode = IncentiveMode.parse(incentive_mode)
    assets = fixed_assets(catalog, n_prosumers, seed) if assets is None else list(assets)
    if len(assets) != n_prosumers:
        raise ValueError("asset list does not match n_prosumers")
    stream = _stream(mode)
    idx = np.arange(n_scenarios)
    workers = max(1, min(int(threads), n_scenarios))
    chunks = [c for c in np.array_split(idx, workers * 4 if workers > 1 else 1) if c.size]
    jobs = [(pools, assets, seed, stream, mode, tuple(activation), c.tolist()) for c in chunks]
    if workers == 1:
        rows = [r for job in jobs for r in _run_chunk(job)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = [r for part in ex.map(_run_chunk, jobs) for r in part]
    X, Y, bdis, lam = (np.array([r[k] for r in rows]) for k in range(4))
    return Dataset(X, Y, pools.horizon, bdis, lam)


def generate_from_config(cfg: GenerationConfig, pools: ScenarioPools, catalog: AssetCatalog,
                         threads: int = 1) -> Dataset:
    return generate(pools, catalog, cfg.n_prosumers, cfg.n_scenarios, cfg.seed, cfg.incentive_mode,
                    (cfg.activation_rate, cfg.activation_rho), threads=threads)
