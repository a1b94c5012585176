"""Regressors trained on a single division: rdnn (default), lr, cart, rf and knn."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .divider import CartParams, CartTree, fit_cart, predict_cart_many
from .rdnn import RdnnModel, RdnnSettings, TrainingError, train_rdnn

KINDS = ("rdnn", "lr", "cart", "rf", "knn")

_RDNN_KEYS = {"width", "depths", "lambdas", "learning_rate", "epochs", "patience"}
_KNOWN = {
    "rdnn": _RDNN_KEYS,
    "lr": {"ridge"},
    "cart": {"min_samples_split", "max_depth"},
    "rf": {"n_trees", "max_features", "bootstrap", "min_samples_split", "max_depth"},
    "knn": {"k"},
}


@dataclass(frozen=True)
class LocalModelSpec:
    kind: str = "rdnn"
    search_budget: Optional[int] = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown local model kind {self.kind!r}; supported: {', '.join(KINDS)}")
        unknown = set(self.overrides) - _KNOWN[self.kind]
        if unknown:
            raise ValueError(f"{self.kind}: unknown overrides {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "search_budget": self.search_budget, "overrides": dict(self.overrides)}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalModelSpec":
        return cls(d["kind"], d.get("search_budget"), dict(d.get("overrides", {})))

    def rdnn_settings(self) -> RdnnSettings:
        o = dict(self.overrides)
        for key in ("depths", "lambdas"):
            if key in o:
                o[key] = tuple(o[key])
        return RdnnSettings(budget=self.search_budget, **o)


@dataclass(eq=False)
class LrModel:
    coefficients: np.ndarray
    intercept: float
    kind: str = "lr"
    division_id: int = 0

    def predict(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.coefficients + self.intercept

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d: dict) -> "LrModel":
        return cls(np.asarray(d["coefficients"], dtype=float), float(d["intercept"]))


@dataclass(eq=False)
class CartModel:
    tree: CartTree
    kind: str = "cart"
    division_id: int = 0

    def predict(self, X) -> np.ndarray:
        return predict_cart_many(self.tree, X)

    def to_dict(self) -> dict:
        return {"tree": self.tree.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CartModel":
        return cls(CartTree.from_dict(d["tree"]))


@dataclass(eq=False)
class RfModel:
    trees: list[CartTree]
    tree_seeds: list[int]
    kind: str = "rf"
    division_id: int = 0

    def predict(self, X) -> np.ndarray:
        # running sum keeps each row's result independent of the batch it arrives in
        total = predict_cart_many(self.trees[0], X)
        for t in self.trees[1:]:
            total = total + predict_cart_many(t, X)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees], "tree_seeds": list(self.tree_seeds)}

    @classmethod
    def from_dict(cls, d: dict) -> "RfModel":
        return cls([CartTree.from_dict(t) for t in d["trees"]], [int(s) for s in d["tree_seeds"]])


@dataclass(eq=False)
class KnnModel:
    rows: np.ndarray
    targets: np.ndarray
    k: int
    kind: str = "knn"
    division_id: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dist = np.sqrt(((X[:, None, :] - self.rows[None, :, :]) ** 2).sum(axis=2))
        # stable sort: equal distances keep stored-row order
        nearest = np.argsort(dist, axis=1, kind="stable")[:, : self.k]
        return self.targets[nearest].mean(axis=1)

    def to_dict(self) -> dict:
        return {"rows": self.rows.tolist(), "targets": self.targets.tolist(), "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        rows = np.asarray(d["rows"], dtype=float)
        return cls(rows.reshape(len(d["targets"]), -1), np.asarray(d["targets"], dtype=float), int(d["k"]))


LocalModel = Any  # one of RdnnModel, LrModel, CartModel, RfModel, KnnModel

_CLASSES = {"rdnn": RdnnModel, "lr": LrModel, "cart": CartModel, "rf": RfModel, "knn": KnnModel}


def fit_lr(X, y, ridge: float = 1e-8) -> LrModel:
    A = np.hstack([X, np.ones((X.shape[0], 1))])
    beta = np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ y)
    return LrModel(beta[:-1], float(beta[-1]))


def fit_rf(X, y, seed: int, n_trees: int = 100, max_features="sqrt", bootstrap: bool = True, **cart) -> RfModel:
    n, p = X.shape
    if max_features == "sqrt":
        max_features = max(1, int(math.sqrt(p)))
    params = CartParams(max_features=max_features, **cart)
    seeds = [int(s) for s in np.random.default_rng(seed).integers(0, 2**63 - 1, size=n_trees)]
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(fit_cart(X[rows], y[rows], params, rng=rng))
    return RfModel(trees, seeds)


def train_local(X, y, spec: LocalModelSpec, seed: int) -> LocalModel:
    """Train one regressor; deterministic in (rows, spec, seed)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < 2:
        raise TrainingError(f"{spec.kind}: need at least 2 rows, got {len(y)}")
    o = spec.overrides
    if spec.kind == "rdnn":
        return train_rdnn(X, y, spec.rdnn_settings(), seed)
    if spec.kind == "lr":
        return fit_lr(X, y, o.get("ridge", 1e-8))
    if spec.kind == "cart":
        return CartModel(fit_cart(X, y, CartParams(**o)))
    if spec.kind == "rf":
        return fit_rf(X, y, seed, **o)
    k = int(o.get("k", 3))
    return KnnModel(X.copy(), y.copy(), max(1, min(k, len(y))))


def predict_local(model: LocalModel, configuration) -> float:
    return float(model.predict(np.asarray(configuration, dtype=float)[None, :])[0])


def local_to_dict(model: LocalModel) -> dict:
    return {"kind": model.kind, "division_id": model.division_id, **model.to_dict()}


def local_from_dict(d: dict) -> LocalModel:
    try:
        cls = _CLASSES[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown local model kind {d.get('kind')!r}") from None
    model = cls.from_dict(d)
    model.division_id = int(d.get("division_id", 0))
    return model
