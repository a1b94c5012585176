"""End-to-end divide-and-learn: dividing, training, routing, predicting, persistence."""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset, OptionSchema, Scaler, apply_scaler, fit_scaler
from .divider import CartParams, CartTree, Division, extract_divisions, fit_cart, merge_small_divisions
from .local import LocalModelSpec, local_from_dict, local_to_dict, train_local
from .rdnn import TrainingError
from .router import RouterClassifier, build_pseudo_labels, smote, train_router

FORMAT_VERSION = 2
SUPPORTED_VERSIONS = (1, 2)


class ArchiveError(ValueError):
    pass


@dataclass(frozen=True)
class DalConfig:
    depth: int = 1
    local: LocalModelSpec = field(default_factory=LocalModelSpec)
    min_division_size: int = 4
    seed: int = 0
    smote_k: int = 5
    router_trees: int = 100
    cart: CartParams = field(default_factory=CartParams)
    jobs: int = 1

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.min_division_size < 1:
            raise ValueError("min_division_size must be >= 1")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "local": self.local.to_dict(),
            "min_division_size": self.min_division_size,
            "seed": self.seed,
            "smote_k": self.smote_k,
            "router_trees": self.router_trees,
            "cart": {"min_samples_split": self.cart.min_samples_split, "max_depth": self.cart.max_depth},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DalConfig":
        return cls(
            depth=int(d["depth"]),
            local=LocalModelSpec.from_dict(d["local"]),
            min_division_size=int(d["min_division_size"]),
            seed=int(d["seed"]),
            smote_k=int(d["smote_k"]),
            router_trees=int(d["router_trees"]),
            cart=CartParams(**d.get("cart", {})),
        )


class PhaseTimings:
    """Seconds spent per phase; the predicting accumulator is thread-safe."""

    def __init__(self, dividing: float = 0.0, training: float = 0.0, predicting: float = 0.0, local=None):
        self.dividing = dividing
        self.training = training
        self.predicting = predicting
        self.local = dict(local or {})  # division id -> own training seconds
        self._lock = threading.Lock()

    def add_predicting(self, seconds: float) -> None:
        with self._lock:
            self.predicting += seconds

    def to_dict(self) -> dict:
        return {
            "dividing": self.dividing,
            "training": self.training,
            "predicting": self.predicting,
            "local": {str(k): v for k, v in self.local.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseTimings":
        return cls(d["dividing"], d["training"], d["predicting"], {int(k): v for k, v in d.get("local", {}).items()})


@dataclass(eq=False)
class DalModel:
    schema: tuple[OptionSchema, ...]
    scaler: Scaler
    tree: CartTree
    divisions: list[Division]
    router: Optional[RouterClassifier]
    local_models: dict[int, object]
    config: DalConfig
    timings: PhaseTimings = field(default_factory=PhaseTimings)
    performance_name: str = "performance"

    def __post_init__(self):
        ids = {d.division_id for d in self.divisions}
        if set(self.local_models) != ids:
            raise ValueError("local models must map one-to-one onto division ids")
        if (self.router is not None) != (len(self.divisions) >= 2):
            raise ValueError("a router is required exactly when there are two or more divisions")

    @property
    def option_names(self) -> list[str]:
        return [o.name for o in self.schema]


@dataclass(frozen=True)
class PredictionRecord:
    configuration: tuple[float, ...]
    division: int
    performance: float


def _train_divisions(Xs, ys, divisions, config: DalConfig, timings: PhaseTimings) -> dict[int, object]:
    def job(dv: Division):
        t0 = time.perf_counter()
        idx = dv.sample_indices
        model = train_local(Xs[idx], ys[idx], config.local, config.seed + dv.division_id)
        model.division_id = dv.division_id
        return dv.division_id, model, time.perf_counter() - t0

    if config.jobs > 1 and len(divisions) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            done = list(pool.map(job, divisions))
    else:
        done = [job(dv) for dv in divisions]
    for did, _, secs in done:
        timings.local[did] = secs
    return {did: model for did, model, _ in done}


def dal_train(train: Dataset, config: DalConfig) -> DalModel:
    """Fit scaler, divide with CART, train one local model per division, then the router."""
    if len(train) < 2:
        raise TrainingError("need at least 2 training rows")
    if config.depth >= 1 and len(train) < 2 * config.min_division_size:
        raise TrainingError(
            f"{len(train)} rows are too few for depth {config.depth} "
            f"(need >= {2 * config.min_division_size}); use depth 0"
        )
    timings = PhaseTimings()

    t0 = time.perf_counter()
    try:
        scaler = fit_scaler(train)
        scaled = apply_scaler(scaler, train)
        Xs, ys = scaled.X, scaled.y
        tree = fit_cart(Xs, ys, config.cart)
        divisions = merge_small_divisions(extract_divisions(tree, config.depth), tree, config.min_division_size)
    except (ValueError, TrainingError) as exc:
        raise TrainingError(f"dividing phase: {exc}") from exc
    timings.dividing = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        local_models = _train_divisions(Xs, ys, divisions, config, timings)
        router = None
        if len(divisions) >= 2:
            labeled = build_pseudo_labels(divisions, Xs)
            balanced = smote(labeled, config.smote_k, config.seed, train.binary_mask)
            router = train_router(balanced, config.seed, config.router_trees)
    except (ValueError, TrainingError, np.linalg.LinAlgError) as exc:
        raise TrainingError(f"training phase: {exc}") from exc
    timings.training = time.perf_counter() - t0

    return DalModel(
        train.schema, scaler, tree, divisions, router, local_models, config, timings, train.performance_header
    )


def _check_width(model: DalModel, X: np.ndarray) -> None:
    if X.shape[1] != len(model.schema):
        raise ValueError(f"configuration has {X.shape[1]} options, model expects {len(model.schema)}")


def dal_predict_many(model: DalModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Route and predict a batch; returns (division ids, predictions in original units)."""
    t0 = time.perf_counter()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_width(model, X)
    Xs = model.scaler.transform_x(X)
    if model.router is None:
        assigned = np.full(X.shape[0], model.divisions[0].division_id, dtype=int)
    else:
        assigned = model.router.predict(Xs)
    pred = np.empty(X.shape[0])
    for did in np.unique(assigned):
        rows = assigned == did
        pred[rows] = model.local_models[int(did)].predict(Xs[rows])
    out = model.scaler.inverse_y(pred)
    model.timings.add_predicting(time.perf_counter() - t0)
    return assigned, out


def dal_predict(model: DalModel, configuration) -> PredictionRecord:
    x = np.asarray(configuration, dtype=float).reshape(1, -1)
    assigned, out = dal_predict_many(model, x)
    if not np.isfinite(out[0]):
        raise TrainingError("non-finite prediction")
    return PredictionRecord(tuple(float(v) for v in x[0]), int(assigned[0]), float(out[0]))


def phase_report(model: DalModel) -> tuple[float, float, float]:
    t = model.timings
    return t.dividing, t.training, t.predicting


# -- persistence ------------------------------------------------------------------------


def model_to_dict(model: DalModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "schema": [o.to_dict() for o in model.schema],
        "performance_name": model.performance_name,
        "scaler": model.scaler.to_dict(),
        "cart": model.tree.to_dict(),
        "divisions": [d.to_dict() for d in model.divisions],
        "router": None if model.router is None else model.router.to_dict(),
        "local_models": {str(k): local_to_dict(m) for k, m in sorted(model.local_models.items())},
        "config": model.config.to_dict(),
        "timings": model.timings.to_dict(),
    }


def _upgrade(doc: dict) -> dict:
    version = doc.get("format_version")
    if isinstance(version, str) and version.isdigit():
        version = int(version)
    if version not in SUPPORTED_VERSIONS:
        raise ArchiveError(
            f"unsupported archive format_version {doc.get('format_version')!r}; "
            f"supported: {', '.join(map(str, SUPPORTED_VERSIONS))}"
        )
    if version == 1:
        # version 1 archives predate phase timings
        doc = dict(doc)
        doc.setdefault("timings", {"dividing": 0.0, "training": 0.0, "predicting": 0.0})
        doc.setdefault("performance_name", "performance")
    return doc


def model_from_dict(doc: dict) -> DalModel:
    if not isinstance(doc, dict):
        raise ArchiveError("malformed archive: top level must be a JSON object")
    doc = _upgrade(doc)
    try:
        return DalModel(
            schema=tuple(OptionSchema.from_dict(o) for o in doc["schema"]),
            scaler=Scaler.from_dict(doc["scaler"]),
            tree=CartTree.from_dict(doc["cart"]),
            divisions=[Division.from_dict(d) for d in doc["divisions"]],
            router=None if doc.get("router") is None else RouterClassifier.from_dict(doc["router"]),
            local_models={int(k): local_from_dict(v) for k, v in doc["local_models"].items()},
            config=DalConfig.from_dict(doc["config"]),
            timings=PhaseTimings.from_dict(doc["timings"]),
            performance_name=doc.get("performance_name", "performance"),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ArchiveError(f"malformed archive: {exc!r}") from exc


def save_model(model: DalModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)), encoding="utf-8")


def load_model(path: str | Path) -> DalModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"malformed archive {path}: {exc}") from exc
    except OSError as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc.strerror}") from exc
    return model_from_dict(doc)
