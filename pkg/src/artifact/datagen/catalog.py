"""Battery catalog, PV size distribution and prosumer asset sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ..core_data import ProsumerAssets

MULTIPLIER_RANGE = (1.2, 1.7)


@dataclass(frozen=True)
class BatteryModel:
    name: str
    capacity_kwh: float
    discharge_kw: float
    charge_kw: float
    efficiency: float


@dataclass
class AssetCatalog:
    batteries: list
    pv_sizes: np.ndarray
    pv_probs: np.ndarray

    def __post_init__(self):
        self.pv_sizes = np.asarray(self.pv_sizes, dtype=float)
        self.pv_probs = np.asarray(self.pv_probs, dtype=float)
        if not self.batteries:
            raise ValueError("catalog has no battery models")
        if self.pv_sizes.size == 0 or self.pv_sizes.shape != self.pv_probs.shape:
            raise ValueError("PV sizes and probabilities must be non-empty and aligned")
        if abs(self.pv_probs.sum() - 1) > 1e-9 or np.any(self.pv_probs < 0):
            raise ValueError("PV probabilities must be nonnegative and sum to 1")
        for b in self.batteries:
            if min(b.capacity_kwh, b.discharge_kw, b.charge_kw) <= 0 or not 0 < b.efficiency <= 1:
                raise ValueError(f"invalid battery model {b}")

    @classmethod
    def from_json(cls, d: dict) -> "AssetCatalog":
        bats = [BatteryModel(**b) for b in d["battery_models"]]
        pv = d["pv_distribution"]
        return cls(bats, [p["size_kw"] for p in pv], [p["probability"] for p in pv])

    def to_json(self) -> dict:
        return {
            "battery_models": [b.__dict__ for b in self.batteries],
            "pv_distribution": [{"size_kw": float(s), "probability": float(p)}
                                for s, p in zip(self.pv_sizes, self.pv_probs)],
        }

    @classmethod
    def load(cls, path) -> "AssetCatalog":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    def nearest_battery(self, target_kwh: float) -> BatteryModel:
        """Closest model by capacity; ties go to the larger battery."""
        caps = np.array([b.capacity_kwh for b in self.batteries])
        dist = np.abs(caps - target_kwh)
        best = np.flatnonzero(np.isclose(dist, dist.min(), rtol=0, atol=1e-12))
        return self.batteries[int(best[np.argmax(caps[best])])]


def default_catalog() -> AssetCatalog:
    text = resources.files("artifact.data").joinpath("catalog.json").read_text()
    return AssetCatalog.from_json(json.loads(text))


def sample_prosumers(catalog: AssetCatalog, n: int, seed) -> list:
    """Draw PV sizes, size batteries at 1.2-1.7 x PV and snap to the catalog."""
    if n < 1:
        raise ValueError("need at least one prosumer")
    rng = np.random.default_rng(seed)
    pv = rng.choice(catalog.pv_sizes, size=n, p=catalog.pv_probs)
    mult = rng.uniform(*MULTIPLIER_RANGE, size=n)
    out = []
    for size, m in zip(pv, mult):
        b = catalog.nearest_battery(m * size)
        out.append(ProsumerAssets(float(size), b.capacity_kwh, b.discharge_kw, b.charge_kw, b.efficiency))
    return out


def assets_to_json(assets) -> list:
    return [a.__dict__ for a in assets]


def assets_from_json(rows) -> list:
    return [ProsumerAssets(**r) for r in rows]
