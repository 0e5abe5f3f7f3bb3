"""Second-order gradient boosting of regression trees on logistic loss.

Split search is exact greedy: every feature is scanned in presorted order
once per tree level, and all open nodes on that level are evaluated in the
same pass. Candidate thresholds sit at midpoints between consecutive
distinct values; a sample goes left iff ``x < threshold``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .flows import FeatureSchema, FlowDataset

LEAF = -1
MODEL_FORMAT = "lwids-gbt/1"


class GbtError(ValueError):
    pass


@dataclass(frozen=True)
class GbtConfig:
    learning_rate: float = 0.3
    max_depth: int = 6
    num_rounds: int = 100
    l2_leaf_penalty: float = 1.0
    min_child_hessian: float = 1.0
    base_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise GbtError("learning_rate must be > 0")
        if self.max_depth < 1:
            raise GbtError("max_depth must be >= 1")
        if self.num_rounds < 1:
            raise GbtError("num_rounds must be >= 1")
        if self.l2_leaf_penalty < 0 or self.min_child_hessian < 0:
            raise GbtError("l2_leaf_penalty and min_child_hessian must be >= 0")
        if not 0.0 < self.base_probability < 1.0:
            raise GbtError("base_probability must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise GbtError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class Tree:
    """One regression tree as parallel node arrays; node 0 is the root.

    ``feature[k] == -1`` marks a leaf. ``value`` holds the shrunken margin
    contribution of leaves (0 at split nodes), ``gain`` the split gain of
    internal nodes (0 at leaves).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray

    @property
    def node_count(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, k: int) -> bool:
        return self.feature[k] == LEAF

    def depth(self) -> int:
        depths = np.zeros(self.node_count, dtype=np.int64)
        for k in range(self.node_count):
            if self.feature[k] != LEAF:
                depths[self.left[k]] = depths[k] + 1
                depths[self.right[k]] = depths[k] + 1
        return int(depths.max())

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls(
            np.array([LEAF]), np.array([0.0]), np.array([-1]), np.array([-1]),
            np.array([float(value)]), np.array([float(cover)]), np.array([0.0]),
        )


@dataclass(frozen=True)
class GbtModel:
    trees: tuple[Tree, ...]
    base_margin: float
    config: GbtConfig
    feature_names: tuple[str, ...]
    encoding_maps: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def feature_count(self) -> int:
        return len(self.feature_names)

    @property
    def schema_fingerprint(self) -> str:
        return FeatureSchema(self.feature_names, ("numeric",) * self.feature_count).fingerprint()


def sigmoid(margin):
    margin = np.asarray(margin, dtype=np.float64)
    out = np.empty_like(margin)
    pos = margin >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-margin[pos]))
    e = np.exp(margin[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def logistic_loss(y, margin) -> float:
    """Mean negative log-likelihood of labels under sigmoid(margin)."""
    y = np.asarray(y, dtype=np.float64)
    margin = np.asarray(margin, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


@numba.njit(cache=True)
def _grow_tree(X, order, grad, hess, max_depth, lam, min_child_h, eta):
    n, d = X.shape
    cap = min(2 ** (max_depth + 1) - 1, 2 * n - 1)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    gain = np.zeros(cap)
    G = np.zeros(cap)
    H = np.zeros(cap)

    node_of = np.zeros(n, np.int64)
    g0 = 0.0
    h0 = 0.0
    for i in range(n):
        g0 += grad[i]
        h0 += hess[i]
    G[0] = g0
    H[0] = h0
    cover[0] = h0
    n_nodes = 1
    level_start = 0
    level_end = 1

    for depth in range(max_depth + 1):
        m = level_end - level_start
        if m == 0:
            break
        best_gain = np.zeros(m)
        best_feat = np.full(m, -1, np.int64)
        best_thr = np.zeros(m)
        best_gl = np.zeros(m)
        best_hl = np.zeros(m)
        if depth < max_depth:
            gl = np.zeros(m)
            hl = np.zeros(m)
            last = np.zeros(m)
            seen = np.zeros(m, np.bool_)
            for f in range(d):
                gl[:] = 0.0
                hl[:] = 0.0
                seen[:] = False
                for t in range(n):
                    i = order[f, t]
                    nd = node_of[i]
                    if nd < level_start:
                        continue
                    s = nd - level_start
                    x = X[i, f]
                    if seen[s] and x > last[s]:
                        hr = H[nd] - hl[s]
                        if hl[s] >= min_child_h and hr >= min_child_h:
                            gr = G[nd] - gl[s]
                            gn = 0.5 * (gl[s] * gl[s] / (hl[s] + lam) + gr * gr / (hr + lam)
                                        - G[nd] * G[nd] / (H[nd] + lam))
                            if gn > best_gain[s]:
                                thr = 0.5 * (last[s] + x)
                                if thr <= last[s]:
                                    thr = x
                                best_gain[s] = gn
                                best_feat[s] = f
                                best_thr[s] = thr
                                best_gl[s] = gl[s]
                                best_hl[s] = hl[s]
                    gl[s] += grad[i]
                    hl[s] += hess[i]
                    last[s] = x
                    seen[s] = True

        for s in range(m):
            nd = level_start + s
            if best_feat[s] >= 0:
                feature[nd] = best_feat[s]
                threshold[nd] = best_thr[s]
                gain[nd] = best_gain[s]
                lc = n_nodes
                rc = n_nodes + 1
                n_nodes += 2
                left[nd] = lc
                right[nd] = rc
                G[lc] = best_gl[s]
                H[lc] = best_hl[s]
                G[rc] = G[nd] - best_gl[s]
                H[rc] = H[nd] - best_hl[s]
                cover[lc] = H[lc]
                cover[rc] = H[rc]
            else:
                value[nd] = -eta * G[nd] / (H[nd] + lam)

        for i in range(n):
            nd = node_of[i]
            if nd >= level_start and feature[nd] >= 0:
                if X[i, feature[nd]] < threshold[nd]:
                    node_of[i] = left[nd]
                else:
                    node_of[i] = right[nd]
        level_start = level_end
        level_end = n_nodes

    # leaves on the final level were closed in the last pass; node_of holds leaf ids
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], cover[:n_nodes], gain[:n_nodes], node_of)


@numba.njit(cache=True)
def _predict_margin(X, base, feature, threshold, left, right, value, offsets):
    n = X.shape[0]
    out = np.full(n, base)
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        acc = base
        for t in range(n_trees):
            k = offsets[t]
            while feature[k] >= 0:
                if X[i, feature[k]] < threshold[k]:
                    k = offsets[t] + left[k]
                else:
                    k = offsets[t] + right[k]
            acc += value[k]
        out[i] = acc
    return out


def _check_training_data(X: np.ndarray, y: np.ndarray) -> None:
    if X.shape[0] == 0:
        raise GbtError("empty training set")
    if X.shape[0] < 2:
        raise GbtError("at least 2 training rows are required")
    if np.unique(y).size < 2:
        raise GbtError("single-class labels: both classes must be present")


def fit_arrays(X, y, config: GbtConfig = GbtConfig(), feature_names=None, encoding_maps=None,
               on_round=None) -> GbtModel:
    """Train on a raw matrix. ``on_round(r, margin)`` is called after each tree."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_training_data(X, y)
    if not np.isfinite(X).all():
        raise GbtError("training matrix contains non-finite cells")
    if feature_names is None:
        feature_names = tuple(f"f{j}" for j in range(X.shape[1]))
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    base = logit(config.base_probability)
    margin = np.full(X.shape[0], base)
    trees = []
    for r in range(config.num_rounds):
        p = sigmoid(margin)
        grad = p - y
        hess = p * (1.0 - p)
        feat, thr, lc, rc, val, cov, gn, leaf_of = _grow_tree(
            X, order, grad, hess, config.max_depth, float(config.l2_leaf_penalty),
            float(config.min_child_hessian), float(config.learning_rate),
        )
        trees.append(Tree(feat, thr, lc, rc, val, cov, gn))
        margin = margin + val[leaf_of]
        if on_round is not None:
            on_round(r, margin)
    return GbtModel(tuple(trees), base, config, tuple(feature_names), dict(encoding_maps or {}))


def fit(train: FlowDataset, config: GbtConfig = GbtConfig(), on_round=None) -> GbtModel:
    """Train a boosted ensemble on a cleaned dataset."""
    return fit_arrays(train.features, train.labels, config, train.schema.feature_names,
                      train.encoding_maps, on_round=on_round)


def _stack_trees(model: GbtModel):
    if not model.trees:
        z = np.zeros(0, np.int64)
        return z, np.zeros(0), z, z, np.zeros(0), np.zeros(1, np.int64)
    offsets = np.zeros(len(model.trees) + 1, np.int64)
    offsets[1:] = np.cumsum([t.node_count for t in model.trees])
    cat = lambda attr, dt: np.ascontiguousarray(np.concatenate([getattr(t, attr) for t in model.trees]), dtype=dt)
    return (cat("feature", np.int64), cat("threshold", np.float64), cat("left", np.int64),
            cat("right", np.int64), cat("value", np.float64), offsets)


def _check_matrix(model: GbtModel, features) -> np.ndarray:
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise GbtError("feature matrix must be two-dimensional")
    if X.shape[1] != model.feature_count:
        raise GbtError(f"feature matrix has {X.shape[1]} columns; model expects {model.feature_count}")
    if not np.isfinite(X).all():
        raise GbtError("feature matrix contains non-finite cells")
    return X


def predict_margin(model: GbtModel, features) -> np.ndarray:
    X = _check_matrix(model, features)
    feat, thr, lc, rc, val, offsets = _stack_trees(model)
    return _predict_margin(X, float(model.base_margin), feat, thr, lc, rc, val, offsets)


def predict_proba(model: GbtModel, features) -> np.ndarray:
    return sigmoid(predict_margin(model, features))


def predict_label(model: GbtModel, features, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise GbtError("threshold must lie in (0, 1)")
    return (predict_proba(model, features) >= threshold).astype(np.int8)


def gain_importance(model: GbtModel) -> np.ndarray:
    """Total split gain per feature over every internal node of every tree."""
    out = np.zeros(model.feature_count)
    for t in model.trees:
        internal = t.feature != LEAF
        np.add.at(out, t.feature[internal], t.gain[internal])
    return out


# -- persistence ------------------------------------------------------------

def _tree_to_nodes(t: Tree) -> list[dict]:
    nodes = []
    for k in range(t.node_count):
        if t.feature[k] == LEAF:
            nodes.append({"id": k, "kind": "leaf", "value": float(t.value[k]), "cover": float(t.cover[k])})
        else:
            nodes.append({
                "id": k, "kind": "split", "feature": int(t.feature[k]), "threshold": float(t.threshold[k]),
                "left": int(t.left[k]), "right": int(t.right[k]), "cover": float(t.cover[k]),
                "gain": float(t.gain[k]),
            })
    return nodes


def _tree_from_nodes(nodes: list[dict]) -> Tree:
    n = len(nodes)
    feature = np.full(n, LEAF, np.int64)
    threshold = np.zeros(n)
    left = np.full(n, -1, np.int64)
    right = np.full(n, -1, np.int64)
    value = np.zeros(n)
    cover = np.zeros(n)
    gain = np.zeros(n)
    for node in nodes:
        k = node["id"]
        cover[k] = node["cover"]
        if node["kind"] == "leaf":
            value[k] = node["value"]
        else:
            feature[k] = node["feature"]
            threshold[k] = node["threshold"]
            left[k] = node["left"]
            right[k] = node["right"]
            gain[k] = node.get("gain", 0.0)
    return Tree(feature, threshold, left, right, value, cover, gain)


def model_to_dict(model: GbtModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "config": asdict(model.config),
        "base_margin": model.base_margin,
        "schema_fingerprint": model.schema_fingerprint,
        "feature_names": list(model.feature_names),
        "encoding_maps": model.encoding_maps,
        "trees": [_tree_to_nodes(t) for t in model.trees],
    }


def model_from_dict(d: dict) -> GbtModel:
    if d.get("format") != MODEL_FORMAT:
        raise GbtError(f"unsupported model format {d.get('format')!r}")
    model = GbtModel(
        trees=tuple(_tree_from_nodes(nodes) for nodes in d["trees"]),
        base_margin=float(d["base_margin"]),
        config=GbtConfig(**d["config"]),
        feature_names=tuple(d["feature_names"]),
        encoding_maps=d.get("encoding_maps", {}),
    )
    if model.schema_fingerprint != d["schema_fingerprint"]:
        raise GbtError("schema fingerprint does not match feature names")
    return model


def save_model(model: GbtModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> GbtModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
