"""Feedforward network with dropout, trained with Adam, used for MC dropout.

Architecture: ``in -> [Linear -> PReLU -> Dropout] x L -> Linear``.  Each
PReLU has a single learned slope.  Dropout is inverted (kept units are
scaled by ``1 / (1 - p)``) so disabling it needs no rescaling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class NetConfig:
    hidden_layers: int = 2
    hidden_width: int = 256
    dropout_p: tuple = (0.22, 0.16)
    learning_rate: float = 3e-4
    batch_size: int = 32
    max_epochs: int = 1000
    patience: int = 50
    val_fraction: float = 0.2
    prelu_init: float = 0.25
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "dropout_p", tuple(float(p) for p in self.dropout_p))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if len(self.dropout_p) != self.hidden_layers:
            raise ValueError("need one dropout probability per hidden layer")
        if any(not 0 <= p < 1 for p in self.dropout_p):
            raise ValueError("dropout probabilities must lie in [0, 1)")
        if self.hidden_layers < 1:
            raise ValueError("need at least one hidden layer")
        if self.hidden_width <= 0 or self.batch_size <= 0 or self.max_epochs < 0:
            raise ValueError("width and batch size must be positive, epochs nonnegative")


@dataclass
class Model:
    """Network parameters plus the config and seed they came from."""

    weights: list
    biases: list
    slopes: np.ndarray
    config: NetConfig
    seed: int | None = None
    history: list = field(default_factory=list)

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list:
        return [*self.weights, *self.biases, self.slopes]

    def copy(self) -> "Model":
        return Model([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                     self.slopes.copy(), self.config, self.seed, list(self.history))

    def to_json(self) -> dict:
        return {
            "shapes": [list(w.shape) for w in self.weights],
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "prelu_slopes": self.slopes.tolist(),
            "config": asdict(self.config),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Model":
        weights = [np.asarray(w, dtype=float).reshape(s) for w, s in zip(d["weights"], d["shapes"])]
        biases = [np.asarray(b, dtype=float) for b in d["biases"]]
        return cls(weights, biases, np.asarray(d["prelu_slopes"], dtype=float),
                   NetConfig(**d["config"]), d.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_json(json.loads(Path(path).read_text()))


def init_model(n_in: int, n_out: int, config: NetConfig, seed: int) -> Model:
    """Kaiming-uniform weights (PReLU gain), zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [n_in] + [config.hidden_width] * config.hidden_layers + [n_out]
    gain2 = 2.0 / (1.0 + config.prelu_init ** 2)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(3.0 * gain2 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    slopes = np.full(config.hidden_layers, config.prelu_init)
    return Model(weights, biases, slopes, config, seed)


def _prelu(z, a):
    return np.where(z > 0, z, a * z)


def forward(model: Model, x: np.ndarray, masks=None, cache: bool = False):
    """Forward pass.  ``masks[k]`` multiplies hidden layer ``k`` (None = no dropout)."""
    h = np.atleast_2d(x)
    if h.shape[-1] != model.n_in:
        raise ValueError(f"input dimension {h.shape[-1]} does not match model ({model.n_in})")
    acts = [h]
    pres = []
    for k in range(model.config.hidden_layers):
        z = h @ model.weights[k] + model.biases[k]
        h = _prelu(z, model.slopes[k])
        if masks is not None and masks[k] is not None:
            h = h * masks[k]
        pres.append(z)
        acts.append(h)
    out = h @ model.weights[-1] + model.biases[-1]
    if cache:
        return out, (acts, pres)
    return out


def dropout_masks(rng: np.random.Generator, n: int, config: NetConfig) -> list:
    """Inverted-dropout masks for ``n`` rows, one array per hidden layer."""
    masks = []
    for p in config.dropout_p:
        if p == 0:
            masks.append(None)
        else:
            keep = rng.random((n, config.hidden_width)) >= p
            masks.append(keep / (1.0 - p))
    return masks


def mse_and_grads(model: Model, x, y, masks=None):
    """Mean squared error over all entries and its gradient for every parameter."""
    out, (acts, pres) = forward(model, x, masks, cache=True)
    diff = out - y
    loss = float(np.mean(diff ** 2))
    g = 2.0 * diff / diff.size
    L = model.config.hidden_layers
    gW = [None] * (L + 1)
    gb = [None] * (L + 1)
    ga = np.zeros(L)
    gW[L] = acts[L].T @ g
    gb[L] = g.sum(axis=0)
    gh = g @ model.weights[L].T
    for k in range(L - 1, -1, -1):
        if masks is not None and masks[k] is not None:
            gh = gh * masks[k]
        z = pres[k]
        pos = z > 0
        ga[k] = np.sum(gh * np.where(pos, 0.0, z))
        gz = gh * np.where(pos, 1.0, model.slopes[k])
        gW[k] = acts[k].T @ gz
        gb[k] = gz.sum(axis=0)
        if k > 0:
            gh = gz @ model.weights[k].T
    return loss, [*gW, *gb, ga]


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _mse(model, x, y) -> float:
    return float(np.mean((forward(model, x) - y) ** 2))


def train(train_set, config: NetConfig = NetConfig(), seed: int = 0,
          max_epochs: int | None = None) -> Model:
    """Fit on a normalized dataset with an 80:20 train/validation split.

    Early stopping restores the parameters with the best validation MSE.
    ``model.history`` holds ``(epoch, train_mse, val_mse)`` rows, epoch 0
    being the initialization.
    """
    x = np.asarray(train_set.inputs, dtype=float)
    y = np.asarray(train_set.outputs, dtype=float)
    if x.shape[0] != y.shape[0]:
        raise ValueError("input and output row counts differ")
    epochs = config.max_epochs if max_epochs is None else max_epochs
    rng = np.random.default_rng(seed)
    perm = rng.permutation(x.shape[0])
    n_val = int(round(config.val_fraction * x.shape[0]))
    if x.shape[0] - n_val < 1:
        raise ValueError("not enough samples to train")
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    xt, yt = x[tr_idx], y[tr_idx]
    xv, yv = (x[val_idx], y[val_idx]) if n_val else (xt, yt)

    model = init_model(x.shape[1], y.shape[1], config, seed)
    params = model.params()
    opt = Adam(params, config.learning_rate, config.adam_betas, config.adam_eps)
    best_val = _mse(model, xv, yv)
    best = model.copy()
    history = [(0, _mse(model, xt, yt), best_val)]
    stale = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(xt.shape[0])
        total = 0.0
        for s in range(0, order.size, config.batch_size):
            b = order[s:s + config.batch_size]
            masks = dropout_masks(rng, b.size, config)
            loss, grads = mse_and_grads(model, xt[b], yt[b], masks)
            if not np.isfinite(loss):
                raise FloatingPointError(f"loss became {loss} at epoch {epoch}, batch starting {s}")
            opt.step(params, grads)
            total += loss * b.size
        val = _mse(model, xv, yv)
        history.append((epoch, total / xt.shape[0], val))
        if val < best_val:
            best_val, best, stale = val, model.copy(), 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (best val %.3g)", epoch, best_val)
                break
    best.history = history
    best.seed = seed
    return best


def predict_point(model: Model, theta: np.ndarray) -> np.ndarray:
    """Deterministic forward pass with dropout disabled."""
    theta = np.asarray(theta, dtype=float)
    out = forward(model, theta)
    return out[0] if theta.ndim == 1 else out


def mcd_sample(model: Model, theta: np.ndarray, S: int, seed, return_masks: bool = False):
    """``S`` stochastic passes for a single input; row ``i`` is pass ``i``.

    Masks for all passes come from one generator seeded with ``seed`` and
    are drawn in pass order, so the result depends only on ``seed``.
    """
    if S < 1:
        raise ValueError("S must be at least 1")
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    if theta.shape[1] != model.n_in:
        raise ValueError(f"input dimension {theta.shape[1]} does not match model ({model.n_in})")
    rng = np.random.default_rng(seed)
    masks = dropout_masks(rng, S, model.config)
    # the first layer is identical for all passes
    z0 = theta @ model.weights[0] + model.biases[0]
    h = np.repeat(_prelu(z0, model.slopes[0]), S, axis=0)
    if masks[0] is not None:
        h = h * masks[0]
    for k in range(1, model.config.hidden_layers):
        h = _prelu(h @ model.weights[k] + model.biases[k], model.slopes[k])
        if masks[k] is not None:
            h = h * masks[k]
    Y = h @ model.weights[-1] + model.biases[-1]
    if return_masks:
        return Y, masks
    return Y


def sample_mean_std(Y: np.ndarray, floor: float = SIGMA_FLOOR):
    """Column means and population standard deviations (divisor S), floored."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 2:
        raise ValueError("need at least two samples to estimate a standard deviation")
    mu = Y.mean(axis=0)
    sigma = np.sqrt(np.mean((Y - mu) ** 2, axis=0))
    return mu, np.maximum(sigma, floor)
