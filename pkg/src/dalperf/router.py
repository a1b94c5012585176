"""Pseudo-labelling, SMOTE balancing and the random-forest router that picks a division."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .divider import Division


@dataclass(frozen=True, eq=False)
class PseudoLabeledSet:
    X: np.ndarray
    labels: np.ndarray

    @property
    def class_counts(self) -> dict[int, int]:
        return {int(k): int(v) for k, v in sorted(Counter(self.labels.tolist()).items())}


@dataclass(frozen=True, eq=False)
class BalancedSet(PseudoLabeledSet):
    synthetic: np.ndarray = None  # bool flag per row


def build_pseudo_labels(divisions: Sequence[Division], X) -> PseudoLabeledSet:
    """Label each (scaled) configuration with the id of the division holding it."""
    X = np.asarray(X, dtype=float)
    labels = np.full(X.shape[0], -1, dtype=int)
    for dv in divisions:
        idx = np.asarray(dv.sample_indices, dtype=int)
        if len(idx) and (idx.min() < 0 or idx.max() >= X.shape[0]):
            raise ValueError(f"division {dv.division_id} references rows outside the training set")
        if np.any(labels[idx] != -1):
            raise ValueError("divisions overlap; they must partition the training set")
        labels[idx] = dv.division_id
    if np.any(labels == -1):
        raise ValueError("divisions do not cover every training row")
    return PseudoLabeledSet(X.copy(), labels)


def smote(
    labeled: PseudoLabeledSet,
    k: int = 5,
    seed: int = 0,
    binary_mask: Optional[np.ndarray] = None,
) -> BalancedSet:
    """Oversample every minority class up to the majority count.

    Synthetic rows lie on the segment between a random class member and one of its
    k nearest same-class neighbours; binary coordinates are rounded back to 0/1.
    """
    X, labels = labeled.X, labeled.labels
    counts = labeled.class_counts
    if len(counts) < 2:
        raise ValueError("SMOTE needs at least two classes")
    if binary_mask is None:
        binary_mask = np.zeros(X.shape[1], dtype=bool)
    target = max(counts.values())
    rng = np.random.default_rng(seed)
    new_x, new_y = [], []
    for cls, count in counts.items():
        need = target - count
        if need == 0:
            continue
        members = X[labels == cls]
        if count == 1:
            new_x.append(np.repeat(members, need, axis=0))
            new_y.append(np.full(need, cls))
            continue
        kk = min(k, count - 1)
        dist = ((members[:, None, :] - members[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(dist, np.inf)
        neighbours = np.argsort(dist, axis=1, kind="stable")[:, :kk]
        base = rng.integers(0, count, size=need)
        pick = neighbours[base, rng.integers(0, kk, size=need)]
        gap = rng.uniform(0.0, 1.0, size=(need, 1))
        synth = members[base] + gap * (members[pick] - members[base])
        synth[:, binary_mask] = np.round(synth[:, binary_mask])
        new_x.append(synth)
        new_y.append(np.full(need, cls))
    if not new_x:
        return BalancedSet(X.copy(), labels.copy(), np.zeros(len(labels), dtype=bool))
    extra_x = np.vstack(new_x)
    extra_y = np.concatenate(new_y).astype(int)
    flags = np.concatenate([np.zeros(len(labels), dtype=bool), np.ones(len(extra_y), dtype=bool)])
    return BalancedSet(np.vstack([X, extra_x]), np.concatenate([labels, extra_y]), flags)


# -- classification forest --------------------------------------------------------------


@dataclass(eq=False)
class ClassTree:
    """Gini classification tree as parallel node arrays; leaves have feature -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    label: np.ndarray

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.label[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "label": self.label.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassTree":
        return cls(
            np.asarray(d["feature"], dtype=int),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=int),
            np.asarray(d["right"], dtype=int),
            np.asarray(d["label"], dtype=int),
        )

    def same_as(self, other: "ClassTree") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("feature", "threshold", "left", "right", "label")
        )


def _majority(labels: np.ndarray) -> int:
    values, counts = np.unique(labels, return_counts=True)
    return int(values[np.argmax(counts)])  # np.unique sorts, so ties go to the lowest label


def _gini_split(values: np.ndarray, onehot: np.ndarray):
    uniq = np.unique(values)
    if len(uniq) < 2:
        return None
    thresholds = (uniq[:-1] + uniq[1:]) / 2.0
    left = (values[None, :] <= thresholds[:, None]).astype(float)
    n = len(values)
    cl = left @ onehot
    cr = onehot.sum(axis=0)[None, :] - cl
    nl = cl.sum(axis=1)
    nr = cr.sum(axis=1)
    gl = 1.0 - ((cl / nl[:, None]) ** 2).sum(axis=1)
    gr = 1.0 - ((cr / nr[:, None]) ** 2).sum(axis=1)
    score = (nl * gl + nr * gr) / n
    k = int(np.argmin(score))
    return float(thresholds[k]), float(score[k])


def fit_class_tree(X, labels, max_features: Optional[int], rng: np.random.Generator) -> ClassTree:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    classes = np.unique(labels)
    onehot = (labels[:, None] == classes[None, :]).astype(float)
    p = X.shape[1]
    feature, threshold, left, right, label = [], [], [], [], []

    def grow(idx: np.ndarray) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        label.append(_majority(labels[idx]))
        if len(idx) < 2 or np.all(labels[idx] == labels[idx[0]]):
            return node
        sub = X[idx]
        if max_features is None or max_features >= p:
            candidates = range(p)
        else:
            picked, seen = [], 0
            for j in rng.permutation(p):
                if seen == max_features:
                    break
                if sub[:, j].min() < sub[:, j].max():
                    seen += 1
                    picked.append(int(j))
            candidates = sorted(picked)
        best = None
        for j in candidates:
            found = _gini_split(sub[:, j], onehot[idx])
            if found is not None and (best is None or found[1] < best[2]):
                best = (j, found[0], found[1])
        if best is None:
            return node
        j, thr, _ = best
        go_left = sub[:, j] <= thr
        feature[node] = j
        threshold[node] = thr
        left[node] = grow(idx[go_left])
        right[node] = grow(idx[~go_left])
        return node

    grow(np.arange(len(labels)))
    return ClassTree(
        np.asarray(feature, dtype=int),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=int),
        np.asarray(right, dtype=int),
        np.asarray(label, dtype=int),
    )


def vote(tally: Mapping[int, int]) -> int:
    """Most votes wins; ties go to the lowest division id."""
    return min(tally, key=lambda k: (-tally[k], k))


@dataclass(eq=False)
class RouterClassifier:
    trees: list[ClassTree]
    tree_seeds: list[int]

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def votes(self, X) -> np.ndarray:
        return np.vstack([t.predict(X) for t in self.trees])  # trees x rows

    def predict(self, X) -> np.ndarray:
        all_votes = self.votes(X)
        out = np.empty(all_votes.shape[1], dtype=int)
        for i in range(all_votes.shape[1]):
            out[i] = vote(Counter(all_votes[:, i].tolist()))
        return out

    def same_as(self, other: "RouterClassifier") -> bool:
        return self.tree_seeds == other.tree_seeds and all(a.same_as(b) for a, b in zip(self.trees, other.trees))

    def to_dict(self) -> dict:
        return {"tree_seeds": list(self.tree_seeds), "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "RouterClassifier":
        return cls([ClassTree.from_dict(t) for t in d["trees"]], [int(s) for s in d["tree_seeds"]])


def train_router(balanced: PseudoLabeledSet, seed: int, n_trees: int = 100) -> RouterClassifier:
    """Bagged gini trees with sqrt(p) options considered per node."""
    X, labels = balanced.X, balanced.labels
    if len(labels) < 1:
        raise ValueError("router needs at least one row")
    n, p = X.shape
    max_features = max(1, int(math.sqrt(p)))
    seeds = [int(s) for s in np.random.default_rng(seed).integers(0, 2**63 - 1, size=n_trees)]
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        rows = rng.integers(0, n, size=n)
        trees.append(fit_class_tree(X[rows], labels[rows], max_features, rng))
    return RouterClassifier(trees, seeds)


def assign_division(router: RouterClassifier, configuration) -> int:
    return int(router.predict(np.asarray(configuration, dtype=float)[None, :])[0])
