import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalperf.divider import (
    CartNode,
    CartParams,
    CartTree,
    best_split,
    divide,
    extract_divisions,
    fit_cart,
    merge_small_divisions,
    predict_cart,
    predict_cart_many,
    render_tree,
)


def brute_force_split(X, y):
    """Exhaustive (option, threshold, loss) by direct loops; lowest option then threshold wins ties."""
    best = None
    for j in range(X.shape[1]):
        vals = sorted(set(X[:, j].tolist()))
        for a, b in zip(vals, vals[1:]):
            t = (a + b) / 2
            left = [y[i] for i in range(len(y)) if X[i, j] <= t]
            right = [y[i] for i in range(len(y)) if X[i, j] > t]
            ml, mr = sum(left) / len(left), sum(right) / len(right)
            loss = sum((v - ml) ** 2 for v in left) / len(left) + sum((v - mr) ** 2 for v in right) / len(right)
            if best is None or loss < best[2] - 1e-12:
                best = (j, t, loss)
    return best


def random_small(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 31))
    p = int(rng.integers(1, 5))
    cols = []
    for _ in range(p):
        if rng.random() < 0.5:
            cols.append(rng.integers(0, 2, n).astype(float))
        else:
            cols.append(rng.integers(0, 6, n).astype(float))
    X = np.column_stack(cols)
    y = rng.integers(0, 50, n).astype(float)
    return X, y


def hand_tree(spec):
    """Build a CartTree from nested tuples: leaf = int sample count, internal = (left, right)."""
    nodes = []
    counter = [0]

    def build(s, depth):
        node = CartNode(len(nodes), depth, np.empty(0, dtype=int), 0.0)
        nodes.append(node)
        if isinstance(s, int):
            node.sample_indices = np.arange(counter[0], counter[0] + s)
            counter[0] += s
            return node
        left = build(s[0], depth + 1)
        right = build(s[1], depth + 1)
        node.split = (0, 0.5)
        node.children = (left.node_id, right.node_id)
        node.sample_indices = np.concatenate([left.sample_indices, right.sample_indices])
        return node

    build(spec, 0)
    return CartTree(nodes, CartParams())


def sizes(divs):
    return [d.size for d in divs]


def test_best_split_worked_example():
    X = np.array([[0], [0], [1], [1]], dtype=float)
    y = np.array([10, 12, 100, 104], dtype=float)
    assert best_split(X, y, 0) == (0.5, 5.0)


def test_best_split_constant_option():
    assert best_split(np.ones((5, 1)), np.arange(5.0), 0) is None


def test_best_split_numeric_matches_enumeration():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 10, (20, 1))
    y = rng.normal(size=20)
    j, t, loss = brute_force_split(X, y)
    got = best_split(X, y, 0)
    assert got[0] == t and abs(got[1] - loss) < 1e-9


def test_split_oracle_on_random_trees():
    for seed in range(50):
        X, y = random_small(seed)
        tree = fit_cart(X, y)
        for node in tree.nodes:
            if node.is_leaf:
                continue
            idx = node.sample_indices
            j, t, _ = brute_force_split(X[idx], y[idx])
            assert node.split == (j, t), seed


def test_vp8_root_splits_on_binary_option(vp8):
    tree = fit_cart(vp8.X, vp8.y)
    assert tree.root.split == (0, 0.5)
    right = tree.nodes[tree.root.children[1]]
    assert right.split == (1, 5.5)


def test_vp8_divisions(vp8):
    tree = fit_cart(vp8.X, vp8.y)
    assert sorted(sizes(extract_divisions(tree, 1))) == [8, 10]
    assert sorted(sizes(extract_divisions(tree, 2))) == [5, 5, 8]
    assert sizes(extract_divisions(tree, 0)) == [18]


def test_vp8_leaf_prediction(vp8):
    tree = fit_cart(vp8.X, vp8.y)
    assert predict_cart(tree, [1, 3]) == 112.0


def test_pure_data_single_leaf():
    tree = fit_cart(np.arange(10.0).reshape(5, 2), np.full(5, 7.0))
    assert len(tree.nodes) == 1 and tree.root.mean_performance == 7.0
    assert predict_cart(tree, [100, -3]) == 7.0


def test_empty_training_rejected():
    with pytest.raises(ValueError):
        fit_cart(np.empty((0, 2)), np.empty(0))


def test_negative_depth_rejected(vp8):
    with pytest.raises(ValueError):
        extract_divisions(fit_cart(vp8.X, vp8.y), -1)


def test_manual_traversal_three_levels():
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1], [1, 2], [0, 2]], dtype=float)
    y = np.array([1, 2, 30, 40, 55, 9], dtype=float)
    tree = fit_cart(X, y)
    assert tree.depth >= 2
    for x, target in zip(X, y):
        node = tree.root
        while not node.is_leaf:
            j, thr = node.split
            node = tree.nodes[node.children[0] if x[j] <= thr else node.children[1]]
        assert predict_cart(tree, x) == node.mean_performance == target
    assert np.array_equal(predict_cart_many(tree, X), y)


def test_max_depth_and_min_samples():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(40, 3))
    y = rng.normal(size=40)
    assert fit_cart(X, y, CartParams(max_depth=2)).depth <= 2
    tree = fit_cart(X, y, CartParams(min_samples_split=10))
    assert all(n.n_samples >= 10 for n in tree.nodes if not n.is_leaf)


def test_merge_bdbc_sizes():
    tree = hand_tree((14, 4))
    merged = merge_small_divisions(extract_divisions(tree, 1), tree, 5)
    assert sizes(merged) == [18] and merged[0].source_node == 0


def test_merge_no_op():
    tree = hand_tree(((5, 6), (7, 8)))
    divs = extract_divisions(tree, 2)
    merged = merge_small_divisions(divs, tree, 4)
    assert [d.sample_indices.tolist() for d in merged] == [d.sample_indices.tolist() for d in divs]


def test_merge_siblings():
    tree = hand_tree((6, (2, 2)))
    merged = merge_small_divisions(extract_divisions(tree, 2), tree, 4)
    assert sizes(merged) == [6, 4]
    assert merged[1].source_node == tree.root.children[1]


def test_merge_leaf_with_subtree_sibling():
    tree = hand_tree(((1, (5, 5)), 9))
    divs = extract_divisions(tree, 2)
    assert sizes(divs) == [1, 10, 9]
    assert sizes(merge_small_divisions(divs, tree, 4)) == [11, 9]


def test_merge_nearest_ancestor_when_sibling_split():
    # at d=3 the small leaf's sibling subtree is itself split into two divisions
    tree = hand_tree(((1, (5, 5)), 9))
    divs = extract_divisions(tree, 3)
    assert sizes(divs) == [1, 5, 5, 9]
    merged = merge_small_divisions(divs, tree, 4)
    assert sizes(merged) == [6, 5, 9]
    assert merged[0].source_node == tree.root.children[0]


def test_merge_down_to_one():
    tree = hand_tree((1, 2))
    assert sizes(merge_small_divisions(extract_divisions(tree, 1), tree, 10)) == [3]


def test_render_tree_tags(vp8):
    tree = fit_cart(vp8.X, vp8.y)
    text = render_tree(tree, vp8.option_names, extract_divisions(tree, 1))
    assert "rtQuality <= 0.5" in text and "[division 1]" in text


def test_tree_round_trip(vp8):
    tree = fit_cart(vp8.X, vp8.y)
    assert CartTree.from_dict(tree.to_dict()).same_as(tree)


def _data(draw_seed, n, p):
    rng = np.random.default_rng(draw_seed)
    X = rng.integers(0, 4, (n, p)).astype(float)
    y = rng.normal(size=n).round(2)
    return X, y


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.integers(1, 5), st.integers(0, 6), st.integers(1, 8))
def test_tree_and_division_invariants(seed, n, p, d, min_size):
    X, y = _data(seed, n, p)
    tree = fit_cart(X, y)
    for node in tree.nodes:
        assert abs(node.mean_performance - y[node.sample_indices].mean()) < 1e-12
        assert node.is_leaf == (node.children is None)
        if not node.is_leaf:
            l, r = (tree.nodes[c] for c in node.children)
            j, thr = node.split
            assert l.n_samples > 0 and r.n_samples > 0
            assert np.all(X[l.sample_indices, j] <= thr) and np.all(X[r.sample_indices, j] > thr)
            joined = np.sort(np.concatenate([l.sample_indices, r.sample_indices]))
            assert np.array_equal(joined, np.sort(node.sample_indices))
    assert tree.same_as(fit_cart(X, y))

    raw = extract_divisions(tree, d)
    if tree.depth >= d:
        assert d + 1 <= len(raw) <= 2**d
    else:
        assert len(raw) == len(tree.leaves())
    for divs in (raw, divide(tree, d, min_size)):
        allidx = np.concatenate([dv.sample_indices for dv in divs])
        assert sorted(allidx.tolist()) == list(range(n))
        assert [dv.division_id for dv in divs] == list(range(len(divs)))
    merged = divide(tree, d, min_size)
    assert len(merged) == 1 or all(dv.size >= min_size for dv in merged)

    deeper = extract_divisions(tree, d + 1)
    for dv in deeper:
        owners = [o for o in raw if set(dv.sample_indices) <= set(o.sample_indices)]
        assert len(owners) == 1
