"""Daily profile pools for scenario sampling.

The bundled pools are synthetic stand-ins for market, load and PV data:
seasonal sinusoids with daily shapes and noise.  Real data can replace them
as CSV files with one daily profile per row and ``T`` columns.

Pool directory layout::

    sale_price.csv        DKK/kWh
    purchase_price.csv    DKK/kWh, row-aligned with sale_price.csv
    capacity_price.csv    DKK/MWh
    load.csv              kWh per hour, one household
    solar_tilt<deg>.csv   kWh per hour for a 1 kW array
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

TILTS = (25, 36, 40, 42, 47, 58, 69)
LATITUDE = 56.0
ELECTRICITY_TAX = 0.76  # DKK/kWh
VAT = 0.25


@dataclass
class ScenarioPools:
    purchase_price: np.ndarray
    sale_price: np.ndarray
    capacity_price: np.ndarray
    load: np.ndarray
    solar: dict  # tilt -> (days, T)

    def __post_init__(self):
        self.purchase_price = np.atleast_2d(np.asarray(self.purchase_price, dtype=float))
        self.sale_price = np.atleast_2d(np.asarray(self.sale_price, dtype=float))
        self.capacity_price = np.atleast_2d(np.asarray(self.capacity_price, dtype=float))
        self.load = np.atleast_2d(np.asarray(self.load, dtype=float))
        self.solar = {int(k): np.atleast_2d(np.asarray(v, dtype=float)) for k, v in self.solar.items()}
        T = self.sale_price.shape[1]
        pools = [self.purchase_price, self.sale_price, self.capacity_price, self.load, *self.solar.values()]
        if not self.solar or any(p.shape[0] == 0 for p in pools):
            raise ValueError("every pool must be non-empty")
        if any(p.shape[1] != T for p in pools):
            raise ValueError("all pool profiles must have the same length")
        if self.purchase_price.shape != self.sale_price.shape:
            raise ValueError("purchase and sale pools must be row-aligned")
        if np.any(self.purchase_price < self.sale_price):
            raise ValueError("purchase price below sale price in pool")
        if np.any(self.load < 0) or any(np.any(v < 0) for v in self.solar.values()):
            raise ValueError("load and solar profiles must be nonnegative")
        if np.any(self.capacity_price < 0):
            raise ValueError("capacity prices must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.sale_price.shape[1]

    @property
    def tilts(self) -> list:
        return sorted(self.solar)

    def to_dir(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        _write(d / "purchase_price.csv", self.purchase_price)
        _write(d / "sale_price.csv", self.sale_price)
        _write(d / "capacity_price.csv", self.capacity_price)
        _write(d / "load.csv", self.load)
        for tilt, arr in self.solar.items():
            _write(d / f"solar_tilt{tilt}.csv", arr)

    @classmethod
    def from_dir(cls, directory) -> "ScenarioPools":
        d = Path(directory)
        solar = {int(p.stem.removeprefix("solar_tilt")): _read(p) for p in sorted(d.glob("solar_tilt*.csv"))}
        return cls(_read(d / "purchase_price.csv"), _read(d / "sale_price.csv"),
                   _read(d / "capacity_price.csv"), _read(d / "load.csv"), solar)


def _write(path: Path, arr: np.ndarray) -> None:
    np.savetxt(path, arr, delimiter=",", fmt="%.6g")


def _read(path: Path) -> np.ndarray:
    if not Path(path).exists():
        raise FileNotFoundError(f"missing pool file {path}")
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite value")
    return arr


def default_pools() -> ScenarioPools:
    with resources.as_file(resources.files("artifact.data").joinpath("pools")) as d:
        return ScenarioPools.from_dir(d)


# --- synthetic generators ---------------------------------------------------

def _bump(hours, centre, width):
    return np.exp(-0.5 * ((hours - centre) / width) ** 2)


def synth_prices(n: int, T: int, rng: np.random.Generator):
    """Day-ahead sale prices and retail purchase prices.

    Purchase = (spot + premium + time-of-use grid tariff + electricity tax) * (1 + VAT),
    with a winter-heavy peak tariff.
    """
    h = np.arange(T) * 24.0 / T
    doy = rng.integers(0, 365, size=n)
    season = 1 + 0.25 * np.cos(2 * np.pi * doy / 365)
    level = 0.75 * season * rng.lognormal(0.0, 0.35, size=n)
    shape = 1 + 0.25 * _bump(h, 8, 1.5) + 0.4 * _bump(h, 18.5, 2) - 0.25 * _bump(h, 3.5, 2)
    midday_dip = (0.1 + 0.3 * (1 - (season - 0.75) / 0.5))[:, None] * _bump(h, 13, 2.5)
    sale = level[:, None] * (shape - midday_dip) + rng.normal(0, 0.06, size=(n, T))
    sale = np.maximum(sale, -0.2)
    peak = 0.6 + 0.75 * (season - 0.75) / 0.5
    tariff = np.where((h >= 17) & (h < 21), peak[:, None], np.where((h >= 6) & (h < 17), 0.45, 0.15))
    purchase = (sale + tariff + ELECTRICITY_TAX + 0.05) * (1 + VAT)
    return np.maximum(purchase, sale), sale


def synth_capacity_prices(n: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """mFRR up-regulation capacity prices in DKK/MWh, with occasional zero hours."""
    h = np.arange(T) * 24.0 / T
    level = rng.lognormal(np.log(110), 0.55, size=n)
    shape = 0.7 + 0.5 * _bump(h, 8, 2) + 0.7 * _bump(h, 18, 2.5)
    p = level[:, None] * shape * rng.lognormal(0, 0.3, size=(n, T))
    p[rng.random((n, T)) < 0.03] = 0.0
    return p


def synth_load(n: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """Household consumption, workdays and non-workdays mixed 5:2."""
    h = np.arange(T) * 24.0 / T
    work = 0.25 + 0.6 * _bump(h, 7, 1) + 1.0 * _bump(h, 18.5, 2) + 0.2 * _bump(h, 13, 3)
    free = 0.25 + 0.7 * _bump(h, 10, 2) + 0.4 * _bump(h, 13.5, 2.5) + 0.9 * _bump(h, 19, 2)
    shapes = np.where((rng.random(n) < 5 / 7)[:, None], work, free)
    shapes = shapes / shapes.sum(axis=1, keepdims=True)
    daily = rng.lognormal(np.log(10.0), 0.35, size=n)
    noise = rng.gamma(6.0, 1 / 6.0, size=(n, T))
    return daily[:, None] * shapes * noise


def synth_solar(tilt: float, n_days: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """Hourly output of a 1 kW array at ``tilt`` degrees, one row per day of year."""
    h = np.arange(T) * 24.0 / T + 0.5 * 24.0 / T
    days = np.arange(n_days) % 365
    decl = 23.44 * np.sin(2 * np.pi * (days - 81) / 365)
    lat = np.radians(LATITUDE)
    cos_ha = -np.tan(lat) * np.tan(np.radians(decl))
    half_day = np.degrees(np.arccos(np.clip(cos_ha, -1, 1))) / 15.0
    rise, length = 12 - half_day, 2 * half_day
    noon_elev = 90 - LATITUDE + decl
    gain = np.clip(np.cos(np.radians(LATITUDE - decl - tilt)), 0.2, None)
    peak = 0.85 * np.sin(np.radians(np.clip(noon_elev, 1, 90))) ** 0.4 * gain
    frac = (h[None, :] - rise[:, None]) / length[:, None]
    clear = np.where((frac > 0) & (frac < 1), np.sin(np.pi * np.clip(frac, 0, 1)) ** 1.3, 0.0)
    cloud = rng.beta(2.0, 1.3, size=n_days)[:, None]
    hourly = np.clip(rng.normal(1, 0.15, size=(n_days, T)), 0.3, 1.3)
    return np.clip(peak[:, None] * clear * cloud * hourly, 0.0, 1.0)


def build_synthetic_pools(seed: int = 2024, T: int = 24, n_price: int = 730,
                          n_capacity: int = 1250, n_load: int = 3000,
                          n_solar: int = 365) -> ScenarioPools:
    rng = np.random.default_rng(seed)
    purchase, sale = synth_prices(n_price, T, rng)
    cap = synth_capacity_prices(n_capacity, T, rng)
    load = synth_load(n_load, T, rng)
    solar = {t: synth_solar(t, n_solar, T, rng) for t in TILTS}
    return ScenarioPools(purchase, sale, cap, load, solar)


if __name__ == "__main__":  # regenerate the bundled pools
    import sys

    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "data" / "pools"
    build_synthetic_pools().to_dir(out)
    print(f"wrote pools to {out}")
