"""Pipeline steps behind the command-line interface.

Each step reads its inputs from the work directory, writes its outputs and
a manifest recording the config it used and a SHA-256 of every output.
Downstream steps check the whole upstream chain and refuse inputs whose
content or config no longer matches.

Work directory layout::

    data/       D.csv, D_beta_<beta>.csv (+ .market.csv sidecars), assets.json
    model/      model.json, scaler.json, split.json, training_curve.csv
    calibrate/  <kind>.json per conformal method
    evaluate/   table2.csv, region_coverage.csv, hourly_mpiw.csv, hourly_lower.csv,
                metrics.json
    bid/        table3.csv, beta_sensitivity.csv, bid_summary.json
    report.md
    manifests/  <step>.json
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import conformal as cp
from .bidding import beta_sweep, write_sensitivity_csv
from .core_data import (HORIZON, Dataset, Scaler, apply_scaler, fit_scaler, read_dataset, split_indices,
                        write_dataset)
from .datagen.catalog import AssetCatalog, assets_to_json, default_catalog
from .datagen.generate import fixed_assets, generate
from .datagen.pools import ScenarioPools, default_pools
from .mcd_net import Model, NetConfig, mcd_sample, train
from .metrics import EvalBatch, evaluate_intervals, evaluate_point, write_reports_csv, write_reports_json

logger = logging.getLogger(__name__)

METHODS = ("mean", "individual", "naive_joint", "MCP", "MMCP", "PCP", "CCP")
STEPS = ("generate", "train", "calibrate", "evaluate", "bid", "report")
CAL_STREAM, TEST_STREAM, BETA_STREAM = 1, 2, 3


class ValidationError(ValueError):
    """Bad configuration or missing, stale or malformed inputs."""


@dataclass
class RunConfig:
    workdir: str = "run"
    pools: str | None = None
    catalog: str | None = None
    horizon: int = HORIZON
    n_prosumers: int = 20
    n_train: int = 3000
    n_cal: int = 800
    n_test: int = 3000
    n_beta: int = 100
    S: int = 300
    alpha: float = 0.1
    betas: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    seed: int = 0
    methods: tuple = METHODS
    activation_rate: float = 0.1
    activation_rho: float = 0.7
    mcp_band_alpha: float | None = None
    criterion: str = "R1"
    heatmap_rows: int = 50
    net: dict = field(default_factory=dict)

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.methods = tuple(self.methods)
        sizes = (self.horizon, self.n_prosumers, self.n_train, self.n_cal, self.n_test, self.n_beta, self.S)
        if any(int(s) != s or s < 1 for s in sizes):
            raise ValidationError("sizes must be positive integers")
        if self.S < 2:
            raise ValidationError("S must be at least 2")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not self.betas or any(not 0 <= b < 1 for b in self.betas):
            raise ValidationError("beta grid must be non-empty and inside [0, 1)")
        if list(self.betas) != sorted(set(self.betas)):
            raise ValidationError("beta grid must be strictly increasing")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValidationError(f"unknown methods {sorted(unknown)}; choose from {METHODS}")
        if self.criterion not in ("R", "R1", "R2"):
            raise ValidationError("criterion must be R, R1 or R2")
        if self.mcp_band_alpha is not None and not 0 < self.mcp_band_alpha < 0.5:
            raise ValidationError("mcp_band_alpha must lie in (0, 0.5)")
        if not 0 < self.activation_rate < 1 or not 0 <= self.activation_rho < 1:
            raise ValidationError("activation rate must lie in (0, 1) and correlation in [0, 1)")
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")
        try:
            self.net_config()
        except (TypeError, ValueError) as e:
            raise ValidationError(f"invalid net settings: {e}") from None

    def net_config(self) -> NetConfig:
        return NetConfig(**self.net)

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_cal + self.n_test

    @property
    def root(self) -> Path:
        return Path(self.workdir)

    def to_json(self) -> dict:
        d = asdict(self)
        d["betas"], d["methods"] = list(self.betas), list(self.methods)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ValidationError(str(e)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"config file {path} is not valid JSON: {e}") from None
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        return cls.from_json(d)

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_json()
        d.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig.from_json(d)


# Config keys each step depends on (cumulative along the chain).
_STEP_KEYS = {
    "generate": ("pools", "catalog", "horizon", "n_prosumers", "n_train", "n_cal", "n_test",
                 "n_beta", "betas", "seed", "activation_rate", "activation_rho"),
    "train": ("net",),
    "calibrate": ("S", "alpha", "mcp_band_alpha", "methods"),
    "evaluate": ("heatmap_rows",),
    "bid": ("criterion",),
    "report": (),
}


def _config_slice(cfg: RunConfig, step: str) -> dict:
    keys = []
    for s in STEPS[:STEPS.index(step) + 1]:
        keys.extend(_STEP_KEYS[s])
    d = cfg.to_json()
    return {k: d[k] for k in keys}


# --- manifests -------------------------------------------------------------

def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest_path(cfg: RunConfig, step: str) -> Path:
    return cfg.root / "manifests" / f"{step}.json"


def write_manifest(cfg: RunConfig, step: str, outputs) -> dict:
    root = cfg.root
    parent = STEPS[STEPS.index(step) - 1] if step != "generate" else None
    m = {
        "step": step,
        "config": _config_slice(cfg, step),
        "parent": None if parent is None else {parent: file_hash(_manifest_path(cfg, parent))},
        "outputs": {str(Path(p).relative_to(root)): file_hash(p) for p in sorted(map(str, outputs))},
    }
    path = _manifest_path(cfg, step)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(m, indent=1, sort_keys=True) + "\n")
    return m


def check_chain(cfg: RunConfig, upto: str) -> None:
    """Verify every manifest from ``generate`` through ``upto``."""
    for k, step in enumerate(STEPS[:STEPS.index(upto) + 1]):
        path = _manifest_path(cfg, step)
        if not path.exists():
            raise ValidationError(f"missing artifacts: run '{step}' first")
        m = json.loads(path.read_text())
        if m.get("config") != _config_slice(cfg, step):
            raise ValidationError(f"'{step}' outputs were built with a different config; rerun '{step}'")
        if k > 0:
            prev = STEPS[k - 1]
            if m.get("parent") != {prev: file_hash(_manifest_path(cfg, prev))}:
                raise ValidationError(f"'{step}' outputs are stale relative to '{prev}'; rerun '{step}'")
        for rel, digest in m["outputs"].items():
            p = cfg.root / rel
            if not p.exists():
                raise ValidationError(f"missing artifact {p}; rerun '{step}'")
            if file_hash(p) != digest:
                raise ValidationError(f"artifact {p} changed since '{step}' wrote it; rerun '{step}'")


# --- helpers ---------------------------------------------------------------

def _dirs(cfg: RunConfig) -> dict:
    return {k: cfg.root / k for k in ("data", "model", "calibrate", "evaluate", "bid")}


def beta_file(cfg: RunConfig, beta: float) -> Path:
    return _dirs(cfg)["data"] / f"D_beta_{beta:.4f}.csv"


def _load_sources(cfg: RunConfig):
    try:
        pools = default_pools() if cfg.pools is None else ScenarioPools.from_dir(cfg.pools)
        catalog = default_catalog() if cfg.catalog is None else AssetCatalog.load(cfg.catalog)
    except FileNotFoundError as e:
        raise ValidationError(str(e)) from None
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ValidationError(f"malformed catalog: {e}") from None
    if pools.horizon != cfg.horizon:
        raise ValidationError(f"pools have horizon {pools.horizon}, config expects {cfg.horizon}")
    return pools, catalog


def _read(cfg: RunConfig, path: Path) -> Dataset:
    try:
        d = read_dataset(path)
    except FileNotFoundError:
        raise ValidationError(f"missing dataset {path}") from None
    if d.horizon != cfg.horizon:
        raise ValidationError(f"{path}: horizon {d.horizon} does not match config {cfg.horizon}")
    return d


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


# --- steps -----------------------------------------------------------------

def run_generate(cfg: RunConfig, threads: int = 1) -> list:
    pools, catalog = _load_sources(cfg)
    d = _dirs(cfg)["data"]
    d.mkdir(parents=True, exist_ok=True)
    assets = fixed_assets(catalog, cfg.n_prosumers, cfg.seed)
    act = (cfg.activation_rate, cfg.activation_rho)
    outputs = [d / "assets.json"]
    outputs[0].write_text(json.dumps(assets_to_json(assets), indent=1) + "\n")
    logger.info("generating %d scenarios", cfg.n_total)
    data = generate(pools, catalog, cfg.n_prosumers, cfg.n_total, cfg.seed, "random", act, assets, threads)
    write_dataset(data, d / "D.csv")
    outputs += [d / "D.csv", d / "D.market.csv"]
    for beta in cfg.betas:
        logger.info("generating %d scenarios at beta=%g", cfg.n_beta, beta)
        db = generate(pools, catalog, cfg.n_prosumers, cfg.n_beta, cfg.seed, f"fixed_beta({beta!r})",
                      act, assets, threads)
        p = beta_file(cfg, beta)
        write_dataset(db, p)
        outputs += [p, p.with_name(p.stem + ".market.csv")]
    write_manifest(cfg, "generate", outputs)
    return outputs


def _split(cfg: RunConfig, data: Dataset):
    if len(data) < cfg.n_total:
        raise ValidationError(f"dataset has {len(data)} rows, config needs {cfg.n_total}")
    return split_indices(len(data), cfg.n_train, cfg.n_cal, cfg.n_test, cfg.seed)


def run_train(cfg: RunConfig) -> Model:
    check_chain(cfg, "generate")
    dirs = _dirs(cfg)
    data = _read(cfg, dirs["data"] / "D.csv")
    tr, ca, te = _split(cfg, data)
    train_set = data.subset(tr)
    scaler = fit_scaler(train_set)
    model = train(apply_scaler(scaler, train_set), cfg.net_config(), seed=cfg.seed)
    out = dirs["model"]
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")
    scaler.save(out / "scaler.json")
    (out / "split.json").write_text(json.dumps(
        {"train": tr.tolist(), "cal": ca.tolist(), "test": te.tolist()}) + "\n")
    _write_csv(out / "training_curve.csv", ["epoch", "train_mse", "val_mse"],
               [[e, _fmt(a), _fmt(b)] for e, a, b in model.history])
    write_manifest(cfg, "train", [out / n for n in ("model.json", "scaler.json", "split.json",
                                                     "training_curve.csv")])
    return model


def _load_model(cfg: RunConfig):
    m = _dirs(cfg)["model"]
    split = json.loads((m / "split.json").read_text())
    return Model.load(m / "model.json"), Scaler.load(m / "scaler.json"), split


def _samples(model: Model, inputs: np.ndarray, S: int, seed: int, stream: int):
    for j, x in enumerate(inputs):
        yield mcd_sample(model, x, S, cp.sample_seed(seed, stream, j))


def cp_methods(cfg: RunConfig) -> list:
    return [m for m in cfg.methods if m in cp.KINDS]


def run_calibrate(cfg: RunConfig) -> dict:
    check_chain(cfg, "train")
    dirs = _dirs(cfg)
    model, scaler, split = _load_model(cfg)
    cal = apply_scaler(scaler, _read(cfg, dirs["data"] / "D.csv").subset(split["cal"]))
    samples = list(_samples(model, cal.inputs, cfg.S, cfg.seed, CAL_STREAM))
    out = dirs["calibrate"]
    out.mkdir(parents=True, exist_ok=True)
    cals, paths = {}, []
    for kind in cp_methods(cfg):
        c = cp.calibrate_from_samples(kind, samples, cal.outputs, cfg.alpha, cfg.mcp_band_alpha, cfg.seed)
        if not c.finite:
            logger.warning("%s threshold is infinite: %d calibration items are too few for alpha=%g",
                           kind, c.n, c.alpha)
        p = out / f"{kind}.json"
        c.save(p)
        cals[kind], paths = c, paths + [p]
    write_manifest(cfg, "calibrate", paths)
    return cals


def _load_calibrators(cfg: RunConfig) -> dict:
    out = {}
    for kind in cp_methods(cfg):
        c = cp.ConformalCalibrator.load(_dirs(cfg)["calibrate"] / f"{kind}.json")
        if not c.finite:
            raise ValidationError(f"{kind} threshold is infinite; enlarge the calibration set or raise alpha")
        out[kind] = c
    return out


def method_alpha(cfg: RunConfig, method: str, cals: dict) -> float:
    """Miscoverage a method targets (its expected coverage is one minus this)."""
    return cals[method].alpha if method in cals else cfg.alpha


def predict_bounds(cfg: RunConfig, model: Model, scaler: Scaler, cals: dict, inputs: np.ndarray,
                   stream: int, truths: np.ndarray | None = None):
    """Lower and upper bounds in kW for every method; the mean method has lower == upper.

    With normalized ``truths`` also returns, per conformal method, whether
    each truth lies in the calibrated region itself (the ball union for PCP).
    """
    n, T = inputs.shape[0], cfg.horizon
    lo = {m: np.empty((n, T)) for m in cfg.methods}
    hi = {m: np.empty((n, T)) for m in cfg.methods}
    inside = {m: np.zeros(n, dtype=bool) for m in cals}
    for j, Y in enumerate(_samples(model, inputs, cfg.S, cfg.seed, stream)):
        for m in cfg.methods:
            if m == "mean":
                lo[m][j] = hi[m][j] = cp.baseline_point_mean(Y)
            elif m in cp.BASELINES:
                r = cp.baseline_region(m, Y, cfg.alpha)
                lo[m][j], hi[m][j] = r.lower, r.upper
            else:
                r = cp.region(m, cals[m], Y)
                lo[m][j], hi[m][j] = r.lower, r.upper
                if truths is not None:
                    inside[m][j] = cp.region_contains(cals[m], Y, truths[j])
    bounds = {m: (scaler.inverse_outputs(lo[m]), scaler.inverse_outputs(hi[m])) for m in cfg.methods}
    return (bounds, inside) if truths is not None else bounds


def run_evaluate(cfg: RunConfig) -> list:
    check_chain(cfg, "calibrate")
    dirs = _dirs(cfg)
    model, scaler, split = _load_model(cfg)
    cals = _load_calibrators(cfg)
    test = _read(cfg, dirs["data"] / "D.csv").subset(split["test"])
    bounds, inside = predict_bounds(cfg, model, scaler, cals, scaler.transform_inputs(test.inputs),
                                    TEST_STREAM, scaler.transform_outputs(test.outputs))
    reports = []
    for m in cfg.methods:
        lo, hi = bounds[m]
        if m == "mean":
            reports.append(evaluate_point(m, lo, test.outputs))
        else:
            a = method_alpha(cfg, m, cals)
            reports.append(evaluate_intervals(m, EvalBatch(lo, hi, test.outputs), a, 1 - a))
    out = dirs["evaluate"]
    out.mkdir(parents=True, exist_ok=True)
    write_reports_csv(reports, out / "table2.csv")
    write_reports_json(reports, out / "metrics.json")
    hourly = []
    for r in reports:
        if r.mpiw_marginal is None:
            continue
        for t in range(cfg.horizon):
            hourly.append([r.method, t, _fmt(r.mpiw_marginal[t]), _fmt(r.picp_marginal[t])])
    _write_csv(out / "region_coverage.csv", ["method", "expected_coverage", "region_coverage"],
               [[m, _fmt(1 - cals[m].alpha), _fmt(inside[m].mean())] for m in cals])
    _write_csv(out / "hourly_mpiw.csv", ["method", "hour", "mpiw_kW", "picp"], hourly)
    k = min(cfg.heatmap_rows, len(test))
    heat = [[m, j, t, _fmt(bounds[m][0][j, t]), _fmt(test.outputs[j, t])]
            for m in cfg.methods for j in range(k) for t in range(cfg.horizon)]
    _write_csv(out / "hourly_lower.csv", ["method", "scenario", "hour", "lower_kW", "truth_kW"], heat)
    write_manifest(cfg, "evaluate", [out / n for n in ("table2.csv", "metrics.json", "region_coverage.csv",
                                                       "hourly_mpiw.csv", "hourly_lower.csv")])
    return reports


TABLE3_COLUMNS = ["method", "pct_PI_R", "pct_PI_R1", "pct_PI_R2", "share_beta_star_min",
                  "mean_elasticity"]


def bid_reports(cfg: RunConfig) -> dict:
    """Beta sweep per method on the D_beta sets, without writing anything."""
    check_chain(cfg, "evaluate")
    model, scaler, _ = _load_model(cfg)
    cals = _load_calibrators(cfg)
    lowers = {m: [] for m in cfg.methods}
    truths, prices = [], []
    for beta in cfg.betas:
        db = _read(cfg, beta_file(cfg, beta))
        if db.capacity_price is None:
            raise ValidationError(f"missing market sidecar for beta={beta}")
        # one stream for all shares: same dropout masks for the same scenario
        b = predict_bounds(cfg, model, scaler, cals, scaler.transform_inputs(db.inputs), BETA_STREAM)
        for m in cfg.methods:
            lowers[m].append(np.maximum(b[m][0], 0.0))
        truths.append(db.outputs)
        prices.append(db.capacity_price / 1000.0)  # DKK/MWh -> DKK/kWh
    return {m: beta_sweep(m, cfg.betas, lowers[m], truths, prices, cfg.criterion) for m in cfg.methods}


def run_bid(cfg: RunConfig) -> dict:
    reports = bid_reports(cfg)
    out = _dirs(cfg)["bid"]
    out.mkdir(parents=True, exist_ok=True)
    rows = [[m, _fmt(r.table["R"]), _fmt(r.table["R1"]), _fmt(r.table["R2"]), _fmt(r.share_beta_min),
             _fmt(r.mean_elasticity)] for m, r in reports.items()]
    _write_csv(out / "table3.csv", TABLE3_COLUMNS, rows)
    write_sensitivity_csv(reports.values(), out / "beta_sensitivity.csv")
    summary = {m: {"beta_star_counts": {repr(float(b)): int(np.sum(r.beta_star == b)) for b in r.betas},
                   "elasticity": r.elasticity.tolist(), "table": r.table}
               for m, r in reports.items()}
    (out / "bid_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    write_manifest(cfg, "bid", [out / n for n in ("table3.csv", "beta_sensitivity.csv", "bid_summary.json")])
    return reports


def _read_table(path: Path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _markdown(rows: list, cols: list) -> list:
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for r in rows:
        cells = []
        for c in cols:
            v = r[c]
            try:
                v = f"{float(v):.4g}" if c != "method" else v
            except ValueError:
                pass
            cells.append(v)
        lines.append("| " + " | ".join(cells) + " |")
    return lines


def run_report(cfg: RunConfig) -> str:
    check_chain(cfg, "bid")
    dirs = _dirs(cfg)
    t2 = _read_table(dirs["evaluate"] / "table2.csv")
    t3 = _read_table(dirs["bid"] / "table3.csv")
    lines = [f"# Run report (seed {cfg.seed})", "",
             f"{cfg.n_prosumers} prosumers, {cfg.n_train}/{cfg.n_cal}/{cfg.n_test} scenarios, "
             f"S = {cfg.S}, alpha = {cfg.alpha}.", "",
             "## Interval quality on the test set (kW)", ""]
    lines += _markdown(t2, list(t2[0].keys()))
    lines += ["", "## Profit as percent of perfect information", ""]
    lines += _markdown(t3, TABLE3_COLUMNS)
    text = "\n".join(lines) + "\n"
    path = cfg.root / "report.md"
    path.write_text(text)
    write_manifest(cfg, "report", [path])
    return text


def run_all(cfg: RunConfig, threads: int = 1) -> None:
    run_generate(cfg, threads)
    run_train(cfg)
    run_calibrate(cfg)
    run_evaluate(cfg)
    run_bid(cfg)
    run_report(cfg)
