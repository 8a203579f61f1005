"""Domain types, dataset container, min-max scaling, splitting and CSV I/O.

Feature layout (6T + 1 inputs, fixed for the whole package)::

    [purchase(T), sale(T), incentive(T), activation(T), load(T), solar(T),
     b_cap_agg / b_dis_agg]

Prices are DKK/kWh except the capacity price, which is DKK/MWh.  Energies
are kWh per hour and powers kW, so for a one hour market time unit the two
are numerically interchangeable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HORIZON = 24
N_BLOCKS = 6
BLOCK_NAMES = ("purchase", "sale", "incentive", "activation", "load", "solar")


def n_inputs(horizon: int) -> int:
    return N_BLOCKS * horizon + 1


def _vec(x, name: str, horizon: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if horizon is not None and arr.size != horizon:
        raise ValueError(f"{name} has length {arr.size}, expected {horizon}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_binary(a: np.ndarray, name: str) -> None:
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ValueError(f"{name} must contain only 0 or 1")


@dataclass(frozen=True)
class MarketScenario:
    """Market inputs shared by every prosumer in a scenario."""

    purchase_price: np.ndarray
    sale_price: np.ndarray
    capacity_price: np.ndarray  # DKK/MWh
    activation: np.ndarray
    incentive: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.purchase_price).size
        for name in ("purchase_price", "sale_price", "capacity_price", "activation", "incentive"):
            object.__setattr__(self, name, _vec(getattr(self, name), name, T))
        _check_binary(self.activation, "activation")
        if np.any(self.purchase_price < self.sale_price):
            raise ValueError("purchase price must not be below sale price")
        if np.any(self.incentive < 0):
            raise ValueError("incentive must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.purchase_price.size


@dataclass(frozen=True)
class ProsumerAssets:
    pv_kw: float
    b_cap: float
    b_dis: float
    b_ch: float
    eta_rt: float

    def __post_init__(self):
        if self.pv_kw < 0:
            raise ValueError("pv_kw must be nonnegative")
        if self.b_cap <= 0 or self.b_dis <= 0 or self.b_ch <= 0:
            raise ValueError("battery capacity and power ratings must be positive")
        if not 0 < self.eta_rt <= 1:
            raise ValueError("round-trip efficiency must lie in (0, 1]")


@dataclass(frozen=True)
class ScenarioInput:
    """Cluster-level input set for one scenario."""

    market: MarketScenario
    load_agg: np.ndarray
    solar_agg: np.ndarray
    b_dis_agg: float
    b_cap_agg: float

    def __post_init__(self):
        T = self.market.horizon
        object.__setattr__(self, "load_agg", _vec(self.load_agg, "load_agg", T))
        object.__setattr__(self, "solar_agg", _vec(self.solar_agg, "solar_agg", T))
        if np.any(self.load_agg < 0) or np.any(self.solar_agg < 0):
            raise ValueError("load and solar must be nonnegative")
        if not (self.b_dis_agg > 0 and self.b_cap_agg > 0):
            raise ValueError("aggregated battery ratings must be positive")

    def features(self) -> np.ndarray:
        """Raw feature vector in the package layout (length 6T + 1)."""
        m = self.market
        return np.concatenate([
            m.purchase_price, m.sale_price, m.incentive, m.activation,
            self.load_agg, self.solar_agg, [self.b_cap_agg / self.b_dis_agg],
        ])


@dataclass(frozen=True)
class LabeledSample:
    input: ScenarioInput
    output: np.ndarray

    def __post_init__(self):
        y = _vec(self.output, "output", self.input.market.horizon)
        if np.any(y < 0) or np.any(y > self.input.b_dis_agg * (1 + 1e-9)):
            raise ValueError("output must lie in [0, b_dis_agg]")
        object.__setattr__(self, "output", y)


@dataclass
class Dataset:
    """Row-stacked scenarios.

    ``inputs`` holds raw features in the package layout and ``outputs`` the
    aggregated reserved capacity in kW.  ``b_dis_agg`` and
    ``capacity_price`` are needed to rebuild a :class:`ScenarioInput` and to
    settle bids; they are optional for pure learning tasks.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    horizon: int = HORIZON
    b_dis_agg: np.ndarray | None = None
    capacity_price: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        T = int(self.horizon)
        if T <= 0:
            raise ValueError("horizon must be positive")
        n = self.inputs.shape[0]
        if self.inputs.shape != (n, n_inputs(T)):
            raise ValueError(f"inputs must have shape (n, {n_inputs(T)}), got {self.inputs.shape}")
        if self.outputs.shape != (n, T):
            raise ValueError(f"outputs must have shape ({n}, {T}), got {self.outputs.shape}")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("dataset contains non-finite values")
        _check_binary(self.block("activation"), "activation")
        if self.b_dis_agg is not None:
            self.b_dis_agg = np.asarray(self.b_dis_agg, dtype=float).reshape(n)
        if self.capacity_price is not None:
            self.capacity_price = np.asarray(self.capacity_price, dtype=float).reshape(n, T)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def block(self, name: str) -> np.ndarray:
        k = BLOCK_NAMES.index(name)
        T = self.horizon
        return self.inputs[:, k * T:(k + 1) * T]

    @property
    def battery_ratio(self) -> np.ndarray:
        return self.inputs[:, -1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.inputs[idx], self.outputs[idx], self.horizon,
            None if self.b_dis_agg is None else self.b_dis_agg[idx],
            None if self.capacity_price is None else self.capacity_price[idx],
        )

    def sample(self, j: int) -> LabeledSample:
        if self.b_dis_agg is None or self.capacity_price is None:
            raise ValueError("dataset lacks market metadata needed to rebuild a sample")
        market = MarketScenario(
            self.block("purchase")[j], self.block("sale")[j], self.capacity_price[j],
            self.block("activation")[j], self.block("incentive")[j],
        )
        b_dis = float(self.b_dis_agg[j])
        inp = ScenarioInput(market, self.block("load")[j], self.block("solar")[j],
                            b_dis, float(self.battery_ratio[j]) * b_dis)
        return LabeledSample(inp, self.outputs[j])

    @classmethod
    def from_samples(cls, samples: list[LabeledSample]) -> "Dataset":
        if not samples:
            raise ValueError("no samples")
        T = samples[0].input.market.horizon
        if any(s.input.market.horizon != T for s in samples):
            raise ValueError("samples do not share a horizon")
        return cls(
            np.stack([s.input.features() for s in samples]),
            np.stack([s.output for s in samples]),
            T,
            np.array([s.input.b_dis_agg for s in samples]),
            np.stack([s.input.market.capacity_price for s in samples]),
        )


@dataclass
class Scaler:
    """Min-max scaler for the first 6T inputs and all T outputs.

    The trailing battery feature is already divided by ``bdis_divisor`` and
    passes through unchanged.  Constant features map to 0.
    """

    mins: np.ndarray
    maxs: np.ndarray
    bdis_divisor: float
    horizon: int

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=float)
        self.maxs = np.asarray(self.maxs, dtype=float)
        if self.mins.shape != (N_BLOCKS * self.horizon + self.horizon,):
            raise ValueError("scaler arrays have the wrong length")
        if np.any(self.maxs < self.mins):
            raise ValueError("scaler max below min")
        if not self.bdis_divisor > 0:
            raise ValueError("bdis_divisor must be positive")

    @property
    def _span(self) -> np.ndarray:
        span = self.maxs - self.mins
        return np.where(span > 0, span, 1.0)

    def _split(self):
        k = N_BLOCKS * self.horizon
        return (self.mins[:k], self._span[:k]), (self.mins[k:], self._span[k:])

    def transform_inputs(self, x: np.ndarray) -> np.ndarray:
        (lo, span), _ = self._split()
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., :-1] = (x[..., :-1] - lo) / span
        return out

    def inverse_inputs(self, z: np.ndarray) -> np.ndarray:
        (lo, span), _ = self._split()
        z = np.asarray(z, dtype=float)
        out = z.copy()
        out[..., :-1] = z[..., :-1] * span + lo
        return out

    def transform_outputs(self, y: np.ndarray) -> np.ndarray:
        _, (lo, span) = self._split()
        return (np.asarray(y, dtype=float) - lo) / span

    def inverse_outputs(self, z: np.ndarray) -> np.ndarray:
        _, (lo, span) = self._split()
        return np.asarray(z, dtype=float) * span + lo

    def output_span(self) -> np.ndarray:
        """kW per normalized unit, per hour (0 for constant hours)."""
        k = N_BLOCKS * self.horizon
        return self.maxs[k:] - self.mins[k:]

    def to_json(self) -> dict:
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist(),
                "bdis_divisor": float(self.bdis_divisor), "horizon": int(self.horizon)}

    @classmethod
    def from_json(cls, d: dict) -> "Scaler":
        return cls(d["mins"], d["maxs"], d["bdis_divisor"], int(d["horizon"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Scaler":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class NormalizedDataset:
    inputs: np.ndarray
    outputs: np.ndarray
    horizon: int = HORIZON

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "NormalizedDataset":
        idx = np.asarray(idx, dtype=int)
        return NormalizedDataset(self.inputs[idx], self.outputs[idx], self.horizon)


def fit_scaler(dataset: Dataset) -> Scaler:
    if len(dataset) == 0:
        raise ValueError("cannot fit a scaler on an empty dataset")
    T = dataset.horizon
    k = N_BLOCKS * T
    data = np.hstack([dataset.inputs[:, :k], dataset.outputs])
    if dataset.b_dis_agg is not None:
        divisor = float(np.mean(dataset.b_dis_agg))
    else:
        divisor = 1.0
    return Scaler(data.min(axis=0), data.max(axis=0), divisor, T)


def apply_scaler(scaler: Scaler, dataset: Dataset) -> NormalizedDataset:
    if dataset.horizon != scaler.horizon:
        raise ValueError(f"dataset horizon {dataset.horizon} does not match scaler {scaler.horizon}")
    return NormalizedDataset(scaler.transform_inputs(dataset.inputs),
                             scaler.transform_outputs(dataset.outputs), dataset.horizon)


def normalize(dataset: Dataset) -> tuple[NormalizedDataset, Scaler]:
    """Fit a scaler on ``dataset`` and return the transformed copy."""
    scaler = fit_scaler(dataset)
    return apply_scaler(scaler, dataset), scaler


def split(dataset, n_train: int, n_cal: int, n_test: int, seed: int):
    """Shuffle with ``seed`` and cut into disjoint train/cal/test subsets."""
    n = len(dataset)
    if min(n_train, n_cal, n_test) < 0:
        raise ValueError("split sizes must be nonnegative")
    if n_train + n_cal + n_test > n:
        raise ValueError(f"requested {n_train + n_cal + n_test} samples from a dataset of {n}")
    perm = split_indices(n, n_train, n_cal, n_test, seed)
    return tuple(dataset.subset(p) for p in perm)


def split_indices(n: int, n_train: int, n_cal: int, n_test: int, seed: int):
    if n_train + n_cal + n_test > n:
        raise ValueError(f"requested {n_train + n_cal + n_test} samples from a dataset of {n}")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = n_train, n_train + n_cal
    return perm[:a], perm[a:b], perm[b:b + n_test]


# --- CSV I/O ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_header(line: str) -> int:
    line = line.strip()
    if not line.startswith("T="):
        raise ValueError(f"bad header {line!r}, expected 'T=<int>'")
    try:
        T = int(line[2:])
    except ValueError:
        raise ValueError(f"bad header {line!r}") from None
    if T <= 0:
        raise ValueError("horizon must be positive")
    return T


def _parse_rows(lines, width: int, path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed number") from None
        rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(len(rows), width)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{path}: non-finite value")
    return arr


def market_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".market.csv")


def write_dataset(dataset: Dataset, path) -> None:
    """Write ``dataset`` as CSV; market metadata goes to a ``.market.csv`` sidecar."""
    T = dataset.horizon
    act = slice(3 * T, 4 * T)
    lines = [f"T={T}"]
    for x, y in zip(dataset.inputs, dataset.outputs):
        fields = [_fmt(v) for v in x]
        fields[act] = [str(int(v)) for v in x[act]]
        lines.append(",".join(fields + [_fmt(v) for v in y]))
    Path(path).write_text("\n".join(lines) + "\n")
    side = market_path(path)
    if dataset.b_dis_agg is not None and dataset.capacity_price is not None:
        mlines = [f"T={T}"]
        for b, lu in zip(dataset.b_dis_agg, dataset.capacity_price):
            mlines.append(",".join([_fmt(b)] + [_fmt(v) for v in lu]))
        side.write_text("\n".join(mlines) + "\n")
    elif side.exists():
        side.unlink()


def read_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    T = _parse_header(lines[0])
    arr = _parse_rows(lines[1:], n_inputs(T) + T, path)
    inputs, outputs = arr[:, :n_inputs(T)], arr[:, n_inputs(T):]
    b_dis = cap = None
    side = market_path(path)
    if side.exists():
        mlines = side.read_text().splitlines()
        if _parse_header(mlines[0]) != T:
            raise ValueError(f"{side}: horizon does not match {path}")
        m = _parse_rows(mlines[1:], 1 + T, side)
        if m.shape[0] != arr.shape[0]:
            raise ValueError(f"{side}: row count does not match {path}")
        b_dis, cap = m[:, 0], m[:, 1:]
    return Dataset(inputs, outputs, T, b_dis, cap)
