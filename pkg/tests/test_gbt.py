import numpy as np
import pytest

from lwids import flows, gbt, synth
from lwids.gbt import LEAF, GbtConfig, GbtError, GbtModel, Tree
from lwids.metrics import evaluate_labels


def _dataset(X, y, names=None):
    names = names or tuple(f"f{j}" for j in range(X.shape[1]))
    return flows.FlowDataset(flows.FeatureSchema(names, ("numeric",) * len(names)), X, y)


def stump(feature, threshold, a, b, wl=1.0, wr=1.0, gain=1.0, n_features=5):
    t = Tree(np.array([feature, LEAF, LEAF]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
             np.array([2, -1, -1]), np.array([0.0, a, b]), np.array([wl + wr, wl, wr]), np.array([gain, 0, 0]))
    return GbtModel((t,), 0.0, GbtConfig(), tuple(f"f{j}" for j in range(n_features)))


def test_default_config_matches_paper():
    c = GbtConfig()
    assert (c.learning_rate, c.max_depth, c.num_rounds) == (0.3, 6, 100)
    assert (c.l2_leaf_penalty, c.min_child_hessian, c.base_probability) == (1.0, 1.0, 0.5)


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(max_depth=0), dict(num_rounds=0),
                                dict(l2_leaf_penalty=-1), dict(base_probability=1.0), dict(seed=-1)])
def test_config_bounds(kw):
    with pytest.raises(GbtError):
        GbtConfig(**kw)


def test_separable_one_feature_matches_stump_oracle():
    rng = np.random.default_rng(0)
    x = np.r_[rng.uniform(-5, -1, 100), rng.uniform(1, 5, 100)]
    y = (x > 0).astype(int)
    model = gbt.fit(_dataset(x[:, None], y))
    assert evaluate_labels(y, gbt.predict_label(model, x[:, None])).f1 == 1.0
    # hand-built depth-1 stump at the gap midpoint classifies identically
    thr = (x[y == 0].max() + x[y == 1].min()) / 2
    oracle = stump(0, thr, -1.0, 1.0, n_features=1)
    assert np.array_equal(gbt.predict_label(oracle, x[:, None]), gbt.predict_label(model, x[:, None]))
    assert model.trees[0].feature[0] == 0 and model.trees[0].threshold[0] == thr


def test_single_class_error():
    X = np.zeros((10, 2))
    with pytest.raises(GbtError, match="single-class"):
        gbt.fit_arrays(X, np.zeros(10))
    with pytest.raises(GbtError):
        gbt.fit_arrays(np.zeros((0, 2)), np.zeros(0))


def test_zero_tree_model_predicts_base():
    m = GbtModel((), 0.0, GbtConfig(), ("a", "b"))
    assert np.all(gbt.predict_proba(m, np.ones((4, 2))) == 0.5)
    assert np.all(gbt.gain_importance(m) == 0)


def test_large_margin_probability():
    m = GbtModel((Tree.leaf(20.0),), 0.0, GbtConfig(), ("a",))
    assert gbt.predict_proba(m, np.zeros((1, 1)))[0] > 0.9999999


def test_stump_two_distinct_probabilities():
    m = stump(1, 0.0, -0.7, 0.4)
    X = np.random.default_rng(1).normal(size=(50, 5))
    assert len(np.unique(gbt.predict_proba(m, X))) == 2


def test_routing_is_strict_less_than():
    m = stump(0, 1.0, -1.0, 1.0)
    X = np.zeros((2, 5))
    X[0, 0] = 1.0
    X[1, 0] = np.nextafter(1.0, 0.0)
    assert gbt.predict_margin(m, X).tolist() == [1.0, -1.0]


def test_predict_label_threshold():
    m = GbtModel((), 0.0, GbtConfig(), ("a",))
    X = np.zeros((3, 1))
    assert gbt.predict_label(m, X, 0.999).tolist() == [0, 0, 0]
    assert gbt.predict_label(m, X, 0.0001).tolist() == [1, 1, 1]
    # boundary inclusive: probabilities 0.4 / 0.5 / 0.6 via per-row leaves
    t = Tree(np.array([0, LEAF, 0, LEAF, LEAF]), np.array([0.5, 0, 1.5, 0, 0]), np.array([1, -1, 3, -1, -1]),
             np.array([2, -1, 4, -1, -1]), np.array([0, gbt.logit(0.4), 0, 0.0, gbt.logit(0.6)]),
             np.array([3.0, 1, 2, 1, 1]), np.zeros(5))
    m = GbtModel((t,), 0.0, GbtConfig(), ("a",))
    assert gbt.predict_label(m, np.array([[0.0], [1.0], [2.0]])).tolist() == [0, 1, 1]


def test_predict_input_errors():
    m = GbtModel((), 0.0, GbtConfig(), ("a", "b"))
    with pytest.raises(GbtError, match="columns"):
        gbt.predict_proba(m, np.zeros((2, 3)))
    with pytest.raises(GbtError, match="non-finite"):
        gbt.predict_proba(m, np.array([[np.inf, 0.0]]))


def test_gain_importance_stump():
    m = stump(3, 0.0, 1.0, -1.0, gain=7.5)
    assert gbt.gain_importance(m).tolist() == [0, 0, 0, 7.5, 0]


def test_gain_importance_ranks_planted(small_split, small_model):
    spec, _ = small_split
    imp = gbt.gain_importance(small_model)
    assert set(np.argsort(-imp)[: len(spec.planted)]) == set(spec.planted)


def test_single_round_leaf_values_closed_form():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(300, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=300) > 0).astype(float)
    cfg = GbtConfig(num_rounds=1, max_depth=3, learning_rate=0.3, l2_leaf_penalty=1.0)
    model = gbt.fit_arrays(X, y, cfg)
    tree = model.trees[0]
    # independent pass: route each row, accumulate g = p - y, h = p(1-p) at p = 0.5
    leaf_of = np.empty(len(y), dtype=int)
    for i, row in enumerate(X):
        k = 0
        while tree.feature[k] != LEAF:
            k = tree.left[k] if row[tree.feature[k]] < tree.threshold[k] else tree.right[k]
        leaf_of[i] = k
    for k in np.unique(leaf_of):
        G = np.sum(0.5 - y[leaf_of == k])
        H = np.sum(np.full((leaf_of == k).sum(), 0.25))
        assert abs(tree.value[k] - (-0.3 * G / (H + 1.0))) <= 1e-10


def test_loss_monotone_and_structure(small_split):
    _, split = small_split
    losses = []
    cfg = GbtConfig(num_rounds=30, max_depth=4)
    model = gbt.fit(split.train, cfg, on_round=lambda r, m: losses.append(gbt.logistic_loss(split.train.labels, m)))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(losses, losses[1:]))
    # on_round margin agrees with predict_margin
    full = gbt.predict_margin(model, split.train.features)
    assert gbt.logistic_loss(split.train.labels, full) == pytest.approx(losses[-1], rel=1e-12)
    for t in model.trees:
        assert t.depth() <= cfg.max_depth
        for k in range(t.node_count):
            if t.feature[k] != LEAF:
                assert t.cover[k] == pytest.approx(t.cover[t.left[k]] + t.cover[t.right[k]], rel=1e-9)
                assert t.cover[t.left[k]] >= cfg.min_child_hessian
                assert t.gain[k] > 0


def test_fit_deterministic_bytes(small_split, tmp_path):
    _, split = small_split
    cfg = GbtConfig(num_rounds=10)
    gbt.save_model(gbt.fit(split.train, cfg), tmp_path / "a.json")
    gbt.save_model(gbt.fit(split.train, cfg), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_model_roundtrip_predicts_identically(small_model, small_split, tmp_path):
    _, split = small_split
    gbt.save_model(small_model, tmp_path / "m.json")
    back = gbt.load_model(tmp_path / "m.json")
    X = np.random.default_rng(2).normal(scale=4, size=(500, small_model.feature_count))
    assert np.array_equal(gbt.predict_margin(back, X), gbt.predict_margin(small_model, X))
    assert back.feature_names == small_model.feature_names
    assert back.config == small_model.config
    assert np.array_equal(gbt.gain_importance(back), gbt.gain_importance(small_model))


def test_corrupt_fingerprint_rejected(small_model):
    d = gbt.model_to_dict(small_model)
    d["feature_names"] = list(reversed(d["feature_names"]))
    with pytest.raises(GbtError, match="fingerprint"):
        gbt.model_from_dict(d)


def test_tie_break_prefers_lower_feature_index():
    # identical columns give identical gains; the first column must win
    x = np.r_[np.zeros(20), np.ones(20)]
    X = np.column_stack([x, x, x])
    y = x.copy()
    model = gbt.fit_arrays(X, y, GbtConfig(num_rounds=3))
    assert all(t.feature[0] == 0 for t in model.trees)


def test_min_child_hessian_blocks_small_children():
    X = np.arange(10, dtype=float)[:, None]
    y = np.r_[np.zeros(9), 1.0]
    # total hessian is 2.5; min 3 forbids any split
    model = gbt.fit_arrays(X, y, GbtConfig(num_rounds=2, min_child_hessian=3.0))
    assert all(t.node_count == 1 for t in model.trees)
