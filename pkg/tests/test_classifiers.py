import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsngae.classifiers import DecisionTree, KnnModel, dt_predict, dt_train, gini, knn_fit, knn_predict


def exhaustive_best_split(x, y, n_classes=13):
    """Brute force over every midpoint; returns (gain, threshold) with lowest-threshold tie-break."""
    parent = gini(np.bincount(y, minlength=n_classes))
    best = (0.0, None)
    values = np.unique(x)
    for lo, hi in zip(values[:-1], values[1:]):
        t = 0.5 * (lo + hi)
        left, right = y[x < t], y[x >= t]
        gain = parent - (len(left) * gini(np.bincount(left, minlength=n_classes))
                         + len(right) * gini(np.bincount(right, minlength=n_classes))) / len(y)
        if gain > best[0] + 1e-9:
            best = (gain, t)
    return best


def oracle_tree_predict(x, y, queries, max_leaves):
    """Independent best-first grower on 1-D data using the exhaustive split search."""
    leaves = [np.arange(len(x))]
    rules = {0: None}
    nodes = {0: (np.arange(len(x)))}
    frontier = []
    counter = itertools.count()

    def consider(node_id):
        idx = nodes[node_id]
        gain, t = exhaustive_best_split(x[idx], y[idx])
        if t is not None and gain > 1e-9:
            frontier.append((-gain, next(counter), node_id, t))
            frontier.sort()

    consider(0)
    n_leaves, next_id = 1, 1
    while frontier and n_leaves < max_leaves:
        _, _, node_id, t = frontier.pop(0)
        idx = nodes[node_id]
        l_id, r_id = next_id, next_id + 1
        next_id += 2
        nodes[l_id], nodes[r_id] = idx[x[idx] < t], idx[x[idx] >= t]
        rules[node_id] = (t, l_id, r_id)
        rules[l_id] = rules[r_id] = None
        n_leaves += 1
        consider(l_id)
        consider(r_id)
    del leaves
    out = []
    for q in queries:
        node = 0
        while rules[node] is not None:
            t, l_id, r_id = rules[node]
            node = l_id if q < t else r_id
        out.append(int(np.argmax(np.bincount(y[nodes[node]], minlength=13))))
    return np.array(out)


@given(
    st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2)), min_size=1, max_size=8),
    st.integers(1, 8),
)
def test_tree_matches_exhaustive_oracle(rows, max_leaves):
    x = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows])
    tree = dt_train(x[:, None], y, max_leaves=max_leaves)
    queries = np.linspace(-1, 6, 29)
    np.testing.assert_array_equal(tree.predict(queries[:, None]), oracle_tree_predict(x, y, queries, max_leaves))
    assert tree.n_leaves <= max_leaves


def test_tree_separates_and_caps_leaves(rng):
    x = rng.normal(size=(300, 4))
    y = (x[:, 2] > 0.3).astype(int) + 2 * (x[:, 0] > 0)
    tree = dt_train(x, y)
    assert (tree.predict(x) == y).all()
    assert dt_train(x, y, max_leaves=2).n_leaves == 2
    assert dt_predict(tree, x[0]) == y[0]


def test_tree_ties_choose_lowest_feature():
    x = np.array([[0, 0], [0, 0], [1, 1], [1, 1]], dtype=float)
    tree = dt_train(x, np.array([0, 0, 1, 1]))
    assert tree.feature[0] == 0 and tree.threshold[0] == 0.5


def test_tree_serialization(rng):
    x = rng.normal(size=(40, 3))
    y = rng.integers(0, 3, size=40)
    tree = dt_train(x, y, max_leaves=6)
    again = DecisionTree.from_dict(tree.to_dict())
    np.testing.assert_array_equal(again.predict(x), tree.predict(x))


def test_tree_input_validation():
    with pytest.raises(ValueError):
        dt_train(np.zeros((0, 2)), np.zeros(0, dtype=int))
    with pytest.raises(ValueError):
        dt_train(np.zeros((2, 2)), np.array([0, 13]))


def brute_knn(xs, ys, q, k):
    d = [float(((r - q) ** 2).sum()) for r in xs]
    order = sorted(range(len(xs)), key=lambda i: (d[i], i))[:k]
    votes = {}
    for i in order:
        votes[ys[i]] = votes.get(ys[i], 0) + 1
    top = max(votes.values())
    for i in order:
        if votes[ys[i]] == top:
            return int(ys[i])


def test_knn_matches_brute_force(rng):
    xs = rng.integers(0, 4, size=(60, 3)).astype(float)  # many distance ties
    ys = rng.integers(0, 5, size=60)
    model = knn_fit(xs, ys, k=3)
    queries = rng.integers(0, 4, size=(200, 3)).astype(float)
    got = model.predict(queries)
    assert all(got[i] == brute_knn(xs, ys, q, 3) for i, q in enumerate(queries))
    assert knn_predict(model, queries[0]) == got[0]


def test_knn_vote_tie_goes_to_nearest():
    model = KnnModel(np.array([[0.0], [1.0], [2.0]]), np.array([7, 4, 9]), k=3)
    assert model.predict(np.array([[0.9]]))[0] == 4


def test_knn_validation():
    with pytest.raises(ValueError):
        KnnModel(np.zeros((2, 2)), np.zeros(2, dtype=int), k=3)
    with pytest.raises(ValueError):
        knn_fit(np.zeros((4, 2)), np.zeros(4, dtype=int)).predict(np.zeros((1, 3)))
