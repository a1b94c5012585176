"""CART regression tree used to divide training samples, and division extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class CartParams:
    min_samples_split: int = 2
    max_depth: int = 20
    # None -> consider every option at each node (random forests pass sqrt(p))
    max_features: Optional[int] = None


@dataclass(eq=False)
class CartNode:
    node_id: int
    depth: int
    sample_indices: np.ndarray
    mean_performance: float
    split: Optional[tuple[int, float]] = None
    children: Optional[tuple[int, int]] = None

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    @property
    def n_samples(self) -> int:
        return len(self.sample_indices)

    def to_dict(self) -> dict:
        return {
            "id": self.node_id,
            "depth": self.depth,
            "samples": self.sample_indices.tolist(),
            "mean": self.mean_performance,
            "split": None if self.split is None else [self.split[0], self.split[1]],
            "children": None if self.children is None else list(self.children),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartNode":
        return cls(
            node_id=int(d["id"]),
            depth=int(d["depth"]),
            sample_indices=np.asarray(d["samples"], dtype=int),
            mean_performance=float(d["mean"]),
            split=None if d["split"] is None else (int(d["split"][0]), float(d["split"][1])),
            children=None if d["children"] is None else (int(d["children"][0]), int(d["children"][1])),
        )

    def same_as(self, other: "CartNode") -> bool:
        return (
            self.node_id == other.node_id
            and self.depth == other.depth
            and np.array_equal(self.sample_indices, other.sample_indices)
            and self.mean_performance == other.mean_performance
            and self.split == other.split
            and self.children == other.children
        )


@dataclass(eq=False)
class CartTree:
    """Node table indexed by id; node 0 is the root and ids follow pre-order."""

    nodes: list[CartNode]
    params: CartParams

    @property
    def root(self) -> CartNode:
        return self.nodes[0]

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def leaves(self) -> list[CartNode]:
        return [n for n in self.nodes if n.is_leaf]

    def parents(self) -> dict[int, int]:
        out = {}
        for n in self.nodes:
            if n.children is not None:
                out[n.children[0]] = n.node_id
                out[n.children[1]] = n.node_id
        return out

    def ancestors(self, node_id: int) -> list[int]:
        """Path from ``node_id`` up to the root, inclusive."""
        parents = self.parents()
        path = [node_id]
        while path[-1] in parents:
            path.append(parents[path[-1]])
        return path

    def same_as(self, other: "CartTree") -> bool:
        return (
            self.params == other.params
            and len(self.nodes) == len(other.nodes)
            and all(a.same_as(b) for a, b in zip(self.nodes, other.nodes))
        )

    def to_dict(self) -> dict:
        p = self.params
        return {
            "params": {
                "min_samples_split": p.min_samples_split,
                "max_depth": p.max_depth,
                "max_features": p.max_features,
            },
            "nodes": [n.to_dict() for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartTree":
        return cls([CartNode.from_dict(n) for n in d["nodes"]], CartParams(**d["params"]))


def split_losses(values: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All midpoint thresholds of one option and their split losses.

    The loss is the within-variance of the left part plus that of the right part,
    each averaged over its own size (not weighted by it).
    """
    uniq = np.unique(values)
    if len(uniq) < 2:
        return np.empty(0), np.empty(0)
    thresholds = (uniq[:-1] + uniq[1:]) / 2.0
    left = values[None, :] <= thresholds[:, None]
    right = ~left
    n_l = left.sum(axis=1)
    n_r = right.sum(axis=1)
    mean_l = (left * y).sum(axis=1) / n_l
    mean_r = (right * y).sum(axis=1) / n_r
    loss_l = (left * (y[None, :] - mean_l[:, None]) ** 2).sum(axis=1) / n_l
    loss_r = (right * (y[None, :] - mean_r[:, None]) ** 2).sum(axis=1) / n_r
    return thresholds, loss_l + loss_r


def best_split(X: np.ndarray, y: np.ndarray, option_index: int) -> Optional[tuple[float, float]]:
    """Loss-minimising threshold for one option, or None when the option is constant."""
    thresholds, losses = split_losses(np.asarray(X, dtype=float)[:, option_index], np.asarray(y, dtype=float))
    if len(thresholds) == 0:
        return None
    k = int(np.argmin(losses))  # first minimum -> smallest threshold on ties
    return float(thresholds[k]), float(losses[k])


def _choose_split(X, y, params: CartParams, rng) -> Optional[tuple[int, float]]:
    p = X.shape[1]
    if params.max_features is None or params.max_features >= p:
        candidates = range(p)
    else:
        # visit options in random order until max_features non-constant ones were scored
        order = rng.permutation(p)
        picked, seen = [], 0
        for j in order:
            if seen == params.max_features:
                break
            if X[:, j].min() < X[:, j].max():
                seen += 1
                picked.append(int(j))
        candidates = sorted(picked)
    best = None
    for j in candidates:
        found = best_split(X, y, j)
        if found is None:
            continue
        if best is None or found[1] < best[2]:
            best = (j, found[0], found[1])
    return None if best is None else (best[0], best[1])


def fit_cart(X, y, params: CartParams | None = None, *, rng: np.random.Generator | None = None) -> CartTree:
    """Grow a regression tree until nodes are pure, too small, or at max depth."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValueError("cannot fit a tree on an empty training set")
    params = params or CartParams()
    if params.max_features is not None and rng is None:
        raise ValueError("feature subsampling needs an rng")
    nodes: list[CartNode] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        yi = y[idx]
        node = CartNode(len(nodes), depth, idx, float(np.mean(yi)))
        nodes.append(node)
        if len(idx) < params.min_samples_split or depth >= params.max_depth or np.all(yi == yi[0]):
            return node.node_id
        chosen = _choose_split(X[idx], yi, params, rng)
        if chosen is None:
            return node.node_id
        j, thr = chosen
        go_left = X[idx, j] <= thr
        node.split = (j, thr)
        left = grow(idx[go_left], depth + 1)
        right = grow(idx[~go_left], depth + 1)
        node.children = (left, right)
        return node.node_id

    grow(np.arange(len(y)), 0)
    return CartTree(nodes, params)


def predict_cart(tree: CartTree, configuration) -> float:
    x = np.asarray(configuration, dtype=float)
    node = tree.root
    while node.split is not None:
        j, thr = node.split
        node = tree.nodes[node.children[0] if x[j] <= thr else node.children[1]]
    return node.mean_performance


def predict_cart_many(tree: CartTree, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0])

    def route(node_id: int, rows: np.ndarray) -> None:
        if len(rows) == 0:
            return
        node = tree.nodes[node_id]
        if node.split is None:
            out[rows] = node.mean_performance
            return
        j, thr = node.split
        go_left = X[rows, j] <= thr
        route(node.children[0], rows[go_left])
        route(node.children[1], rows[~go_left])

    route(0, np.arange(X.shape[0]))
    return out


# -- divisions --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Division:
    division_id: int
    sample_indices: np.ndarray
    source_node: int

    @property
    def size(self) -> int:
        return len(self.sample_indices)

    def to_dict(self) -> dict:
        return {"id": self.division_id, "samples": self.sample_indices.tolist(), "source_node": self.source_node}

    @classmethod
    def from_dict(cls, d: dict) -> "Division":
        return cls(int(d["id"]), np.asarray(d["samples"], dtype=int), int(d["source_node"]))


def extract_divisions(tree: CartTree, d: int) -> list[Division]:
    """Nodes at depth ``d`` plus shallower leaves, ordered left to right."""
    if d < 0:
        raise ValueError("depth must be >= 0")
    out: list[Division] = []

    def walk(node_id: int) -> None:
        node = tree.nodes[node_id]
        if node.depth == d or node.is_leaf:
            out.append(Division(len(out), np.sort(node.sample_indices), node_id))
            return
        walk(node.children[0])
        walk(node.children[1])

    walk(0)
    return out


def merge_small_divisions(divisions: Sequence[Division], tree: CartTree, min_size: int) -> list[Division]:
    """Merge undersized divisions into their sibling (or nearest neighbour) until all fit."""
    parents = tree.parents()
    depth_of = {n.node_id: n.depth for n in tree.nodes}
    divs = [(np.sort(d.sample_indices), d.source_node) for d in divisions]

    def lca(a: int, b: int) -> int:
        up = set(tree.ancestors(a))
        for node in tree.ancestors(b):
            if node in up:
                return node
        return 0

    while len(divs) > 1:
        small = [i for i, (idx, _) in enumerate(divs) if len(idx) < min_size]
        if not small:
            break
        i = min(small, key=lambda k: (len(divs[k][0]), k))
        node = divs[i][1]
        j = None
        parent = parents.get(node)
        if parent is not None:
            sibling = [c for c in tree.nodes[parent].children if c != node][0]
            match = [k for k, (_, src) in enumerate(divs) if src == sibling]
            if match:
                j = match[0]
                merged_source = parent
        if j is None:
            neighbours = [k for k in (i - 1, i + 1) if 0 <= k < len(divs)]
            # deepest common ancestor wins; left neighbour on ties
            j = max(neighbours, key=lambda k: (depth_of[lca(node, divs[k][1])], -k))
            merged_source = lca(node, divs[j][1])
        lo, hi = min(i, j), max(i, j)
        merged = (np.sort(np.concatenate([divs[lo][0], divs[hi][0]])), merged_source)
        divs[lo] = merged
        del divs[hi]
    return [Division(k, idx, src) for k, (idx, src) in enumerate(divs)]


def divide(tree: CartTree, d: int, min_size: int) -> list[Division]:
    return merge_small_divisions(extract_divisions(tree, d), tree, min_size)


def render_tree(
    tree: CartTree,
    option_names: Sequence[str] | None = None,
    divisions: Sequence[Division] = (),
    threshold: Callable[[int, float], float] | None = None,
    value: Callable[[float], float] | None = None,
) -> str:
    """Indented text view; nodes that head a division are tagged with its id.

    ``threshold(j, t)`` and ``value(m)`` map scaled split points and means back for display.
    """
    threshold = threshold or (lambda j, t: t)
    value = value or (lambda m: m)
    tag = {dv.source_node: dv.division_id for dv in divisions}
    lines: list[str] = []

    def name(j: int) -> str:
        return option_names[j] if option_names is not None else f"x{j}"

    def walk(node_id: int, label: str) -> None:
        node = tree.nodes[node_id]
        text = f"{'  ' * node.depth}{label}n={node.n_samples} mean={value(node.mean_performance):.6g}"
        if node_id in tag:
            text += f"  [division {tag[node_id]}]"
        lines.append(text)
        if node.split is not None:
            j, thr = node.split
            shown = threshold(j, thr)
            walk(node.children[0], f"{name(j)} <= {shown:.6g}: ")
            walk(node.children[1], f"{name(j)} > {shown:.6g}: ")

    walk(0, "root: ")
    return "\n".join(lines)
