"""Learned data generator: a small fully-connected network (tanh hidden
layers) trained by full-batch Adam with a cosine-annealed learning rate.

Inputs and targets are standardized from the training split; predictions are
de-normalized, so the generator can stand in for the unknown function on its
training domain. Backpropagation is written out by hand and checked against
finite differences by gradient_check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset

HIDDEN_WIDTHS = (128, 256, 128)
CHECKPOINT_VERSION = 1


class NonFiniteLoss(RuntimeError):
    """Training diverged (NaN/inf loss); retry with a smaller learning rate."""


@dataclass
class TrainConfig:
    lr0: float = 0.1
    lr_floor: float = 1e-5
    epochs: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0 or self.epochs < 1:
            raise ValueError("need lr0 > 0 and epochs >= 1")


@dataclass
class MlpGenerator:
    widths: tuple[int, ...]
    weights: list[np.ndarray]        # weights[l]: (widths[l], widths[l+1])
    biases: list[np.ndarray]         # biases[l]: (widths[l+1],)
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    activation: str = "tanh"

    def predict(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.widths[0]:
            raise ValueError(
                f"expected {self.widths[0]} input columns, got {points.shape[1]}")
        a = (points - self.x_mean) / self.x_std
        out = _forward(self.weights, self.biases, a)[0][-1]
        return out[:, 0] * self.y_std + self.y_mean

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.predict(points)


@dataclass
class TrainReport:
    train_losses: np.ndarray         # standardized-scale MSE per epoch
    val_losses: np.ndarray
    best_epoch: int
    val_msre: float


def _init_params(widths, rng):
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights, biases, x):
    """Returns (activations, pre_activations); the last layer is linear."""
    acts = [x]
    zs = []
    a = x
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        zs.append(z)
        a = z if l == last else np.tanh(z)
        acts.append(a)
    return acts, zs


def _backward(weights, acts, zs, targets):
    """Gradients of mean((out - t)^2) w.r.t. every weight and bias."""
    n = targets.shape[0]
    delta = 2.0 * (acts[-1] - targets) / n
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        grads_w[l] = acts[l].T @ delta
        grads_b[l] = delta.sum(axis=0)
        if l > 0:
            # acts[l] is already tanh(zs[l-1]) for every hidden layer
            delta = (delta @ weights[l].T) * (1.0 - acts[l] ** 2)
    return grads_w, grads_b


def cosine_lr(epoch: int, cfg: TrainConfig) -> float:
    frac = epoch / cfg.epochs
    return cfg.lr_floor + 0.5 * (cfg.lr0 - cfg.lr_floor) * (1.0 + np.cos(np.pi * frac))


def train(train_ds: Dataset, val_ds: Dataset,
          cfg: TrainConfig | None = None) -> tuple[MlpGenerator, TrainReport]:
    """Full-batch Adam on standardized data; one gradient step per epoch.

    Returns the parameters that achieved the best validation loss during the
    run, never the final ones. Raises NonFiniteLoss the moment any loss stops
    being finite.
    """
    if cfg is None:
        cfg = TrainConfig()
    if train_ds.d != val_ds.d:
        raise ValueError("train and validation dimensionality differ")
    rng = np.random.default_rng(cfg.seed)

    x_mean = train_ds.X.mean(axis=0)
    x_std = np.maximum(train_ds.X.std(axis=0), 1e-8)
    y_mean = float(train_ds.y.mean())
    y_std = float(max(train_ds.y.std(), 1e-8))

    Xt = (train_ds.X - x_mean) / x_std
    yt = ((train_ds.y - y_mean) / y_std).reshape(-1, 1)
    Xv = (val_ds.X - x_mean) / x_std
    yv = ((val_ds.y - y_mean) / y_std).reshape(-1, 1)

    widths = (train_ds.d,) + HIDDEN_WIDTHS + (1,)
    weights, biases = _init_params(widths, rng)

    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    train_losses = np.empty(cfg.epochs)
    val_losses = np.empty(cfg.epochs)
    best = (np.inf, -1, None, None)
    for epoch in range(cfg.epochs):
        acts, zs = _forward(weights, biases, Xt)
        loss = float(np.mean((acts[-1] - yt) ** 2))
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"training loss diverged at epoch {epoch}")
        gw, gb = _backward(weights, acts, zs, yt)
        lr = cosine_lr(epoch, cfg)
        t = epoch + 1
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for l in range(len(weights)):
            m_w[l] = cfg.beta1 * m_w[l] + (1 - cfg.beta1) * gw[l]
            v_w[l] = cfg.beta2 * v_w[l] + (1 - cfg.beta2) * gw[l] ** 2
            weights[l] = weights[l] - lr * (m_w[l] / bc1) / (np.sqrt(v_w[l] / bc2) + cfg.eps)
            m_b[l] = cfg.beta1 * m_b[l] + (1 - cfg.beta1) * gb[l]
            v_b[l] = cfg.beta2 * v_b[l] + (1 - cfg.beta2) * gb[l] ** 2
            biases[l] = biases[l] - lr * (m_b[l] / bc1) / (np.sqrt(v_b[l] / bc2) + cfg.eps)
        val_out = _forward(weights, biases, Xv)[0][-1]
        val_loss = float(np.mean((val_out - yv) ** 2))
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"validation loss diverged at epoch {epoch}")
        train_losses[epoch] = loss
        val_losses[epoch] = val_loss
        if val_loss < best[0]:
            best = (val_loss, epoch,
                    [w.copy() for w in weights], [b.copy() for b in biases])

    gen = MlpGenerator(widths, best[2], best[3], x_mean, x_std, y_mean, y_std)
    pred = gen.predict(val_ds.X)
    val_msre = float(np.mean(((pred - val_ds.y) / (1.0 + np.abs(val_ds.y))) ** 2))
    report = TrainReport(train_losses, val_losses, best[1], val_msre)
    return gen, report


def predict(gen: MlpGenerator, points: np.ndarray) -> np.ndarray:
    return gen.predict(points)


# ---------------------------------------------------------------------------
# Finite-difference oracle for the hand-written backprop
# ---------------------------------------------------------------------------

def gradient_check(widths: tuple[int, ...], seed: int = 0, n_points: int = 7,
                   h: float = 1e-5) -> float:
    """Max relative error between analytic and central finite-difference
    gradients of the MSE loss, on random data. Keep the widths small."""
    rng = np.random.default_rng(seed)
    weights, biases = _init_params(widths, rng)
    X = rng.normal(size=(n_points, widths[0]))
    y = rng.normal(size=(n_points, 1))

    def loss():
        return float(np.mean((_forward(weights, biases, X)[0][-1] - y) ** 2))

    acts, zs = _forward(weights, biases, X)
    gw, gb = _backward(weights, acts, zs, y)

    worst = 0.0
    for arrays, grads in ((weights, gw), (biases, gb)):
        for arr, g in zip(arrays, grads):
            flat = arr.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss()
                flat[i] = orig - h
                down = loss()
                flat[i] = orig
                fd = (up - down) / (2.0 * h)
                denom = max(abs(fd), abs(gflat[i]), 1e-8)
                worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_generator(gen: MlpGenerator, path: str | Path) -> None:
    payload = {
        "version": np.array([CHECKPOINT_VERSION]),
        "widths": np.array(gen.widths),
        "x_mean": gen.x_mean,
        "x_std": gen.x_std,
        "y_stats": np.array([gen.y_mean, gen.y_std]),
    }
    for l, (w, b) in enumerate(zip(gen.weights, gen.biases)):
        payload[f"w{l}"] = w
        payload[f"b{l}"] = b
    np.savez(path, **payload)


def load_generator(path: str | Path) -> MlpGenerator:
    with np.load(path) as data:
        version = int(data["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        widths = tuple(int(w) for w in data["widths"])
        n_layers = len(widths) - 1
        weights = [data[f"w{l}"] for l in range(n_layers)]
        biases = [data[f"b{l}"] for l in range(n_layers)]
        return MlpGenerator(widths, weights, biases, data["x_mean"],
                            data["x_std"], float(data["y_stats"][0]),
                            float(data["y_stats"][1]))
