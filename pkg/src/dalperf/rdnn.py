"""Feed-forward ReLU regressor with an L1 weight penalty, trained by full-batch Adam."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RdnnSettings:
    width: int = 128
    depths: tuple[int, ...] = (1, 2, 3)
    lambdas: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0)
    learning_rate: float = 1e-3
    epochs: int = 2000
    patience: int = 200
    budget: Optional[int] = None  # max grid points tried, in grid order

    def grid(self) -> list[tuple[int, float]]:
        g = [(d, lam) for d in self.depths for lam in self.lambdas]
        return g[: self.budget] if self.budget else g


@dataclass(eq=False)
class RdnnModel:
    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    l1_lambda: float
    y_offset: float = 0.0
    y_scale: float = 1.0
    epochs_trained: int = 0
    search: list[dict] = field(default_factory=list)
    kind: str = "rdnn"
    division_id: int = 0

    def __post_init__(self):
        for a, b in zip(self.widths[:-1], self.widths[1:]):
            if a <= 0 or b <= 0:
                raise ValueError("layer widths must be positive")
        for k, W in enumerate(self.weights):
            if W.shape != (self.widths[k], self.widths[k + 1]):
                raise ValueError(f"layer {k}: weight shape {W.shape} incompatible with widths {self.widths}")

    @property
    def n_parameters(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def predict(self, X) -> np.ndarray:
        out = forward(self.weights, self.biases, np.atleast_2d(np.asarray(X, dtype=float)))[0]
        return out * self.y_scale + self.y_offset

    def l1_norm(self) -> float:
        return float(sum(np.abs(W).sum() for W in self.weights))

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "l1_lambda": self.l1_lambda,
            "y_offset": self.y_offset,
            "y_scale": self.y_scale,
            "epochs_trained": self.epochs_trained,
            "search": self.search,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RdnnModel":
        widths = [int(w) for w in d["widths"]]
        weights = [np.asarray(W, dtype=float).reshape(widths[k], widths[k + 1]) for k, W in enumerate(d["weights"])]
        return cls(
            widths,
            weights,
            [np.asarray(b, dtype=float) for b in d["biases"]],
            float(d["l1_lambda"]),
            float(d.get("y_offset", 0.0)),
            float(d.get("y_scale", 1.0)),
            int(d.get("epochs_trained", 0)),
            list(d.get("search", [])),
        )


def init_params(widths: Sequence[int], rng: np.random.Generator):
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def forward(weights, biases, X):
    """Returns the flattened output and the per-layer activations (input first)."""
    acts = [X]
    h = X
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        h = z if k == last else np.maximum(z, 0.0)
        acts.append(h)
    return h[:, 0], acts


def l1_scale(weights, lam: float) -> float:
    # penalty is lam * mean|W| over all weight matrices, so lam means the same at any width
    return lam / sum(W.size for W in weights)


def loss_and_grads(weights, biases, X, y, lam: float):
    """MSE + lam * mean|W| and its gradient (L1 subgradient 0 at 0)."""
    pred, acts = forward(weights, biases, X)
    resid = pred - y
    n = X.shape[0]
    s = l1_scale(weights, lam)
    loss = float(np.mean(resid**2)) + s * sum(float(np.abs(W).sum()) for W in weights)
    delta = (2.0 / n) * resid[:, None]
    gW = [None] * len(weights)
    gb = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        gW[k] = acts[k].T @ delta + s * np.sign(weights[k])
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights[k].T) * (acts[k] > 0)
    return loss, gW, gb


def mse(weights, biases, X, y) -> float:
    pred, _ = forward(weights, biases, X)
    return float(np.mean((pred - y) ** 2))


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit_network(
    X,
    y,
    hidden_layers: int,
    lam: float,
    settings: RdnnSettings,
    rng: np.random.Generator,
    *,
    X_val=None,
    y_val=None,
    epochs: Optional[int] = None,
):
    """Train one network.  With a validation set, early-stops and keeps the best epoch.

    Returns (weights, biases, best_epoch, best_validation_mse).
    """
    widths = [X.shape[1]] + [settings.width] * hidden_layers + [1]
    weights, biases = init_params(widths, rng)
    params = weights + biases
    opt = _Adam(params, settings.learning_rate)
    n_layers = len(weights)
    max_epochs = epochs if epochs is not None else settings.epochs
    best = (math.inf, 0, [p.copy() for p in params])
    stale = 0
    for epoch in range(1, max_epochs + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gW, gb = loss_and_grads(weights, biases, X, y, lam)
        if not math.isfinite(loss):
            raise TrainingError(
                f"non-finite training loss at epoch {epoch} (hidden_layers={hidden_layers}, lambda={lam}, rows={len(y)})"
            )
        opt.step(params, gW + gb)
        if X_val is not None:
            score = mse(weights, biases, X_val, y_val)
            if score < best[0]:
                best = (score, epoch, [p.copy() for p in params])
                stale = 0
            else:
                stale += 1
                if stale >= settings.patience:
                    break
    if X_val is None:
        return weights, biases, max_epochs, math.nan
    kept = best[2]
    return kept[:n_layers], kept[n_layers:], best[1], best[0]


def train_rdnn(X, y, settings: RdnnSettings, seed: int) -> RdnnModel:
    """Grid search over depth and L1 strength on a held-out third, then refit on all rows.

    Targets are standardised internally; the model maps outputs back.
    """
    X = np.asarray(X, dtype=float)
    y_raw = np.asarray(y, dtype=float)
    n = len(y_raw)
    if n < 2:
        raise TrainingError("rdnn needs at least 2 rows")
    y_offset = float(np.mean(y_raw))
    y_scale = float(np.std(y_raw))
    if not y_scale > 0:
        y_scale = 1.0
    y = (y_raw - y_offset) / y_scale
    perm = np.random.default_rng(seed).permutation(n)
    n_val = math.ceil(n / 3)
    tr, va = perm[: n - n_val], perm[n - n_val :]

    search = []
    best = None
    for k, (depth, lam) in enumerate(settings.grid()):
        _, _, epoch, score = fit_network(
            X[tr], y[tr], depth, lam, settings, np.random.default_rng([seed, k]), X_val=X[va], y_val=y[va]
        )
        search.append({"hidden_layers": depth, "lambda": lam, "best_epoch": epoch, "val_mse": score})
        if best is None or score < best[2]:
            best = (depth, lam, score, max(epoch, 1))
    depth, lam, _, epochs = best
    weights, biases, _, _ = fit_network(
        X, y, depth, lam, settings, np.random.default_rng([seed, len(search)]), epochs=epochs
    )
    for W in weights:
        if not np.all(np.isfinite(W)):
            raise TrainingError("non-finite weights after refit")
    widths = [X.shape[1]] + [settings.width] * depth + [1]
    return RdnnModel(widths, weights, biases, lam, y_offset, y_scale, epochs, search)


def rdnn_gradient_check(model: RdnnModel, X, y, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences over all parameters.

    Works in the network's own (standardised) output space.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    weights = [W.copy() for W in model.weights]
    biases = [b.copy() for b in model.biases]
    lam = model.l1_lambda
    _, gW, gb = loss_and_grads(weights, biases, X, y, lam)
    worst = 0.0
    for params, grads in ((weights, gW), (biases, gb)):
        for p, g in zip(params, grads):
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                p[idx] = orig + h
                up = loss_and_grads(weights, biases, X, y, lam)[0]
                p[idx] = orig - h
                down = loss_and_grads(weights, biases, X, y, lam)[0]
                p[idx] = orig
                numeric = (up - down) / (2.0 * h)
                analytic = g[idx]
                denom = max(abs(numeric), abs(analytic), 1e-8)
                worst = max(worst, abs(numeric - analytic) / denom)
    return worst
