"""Exact tree-path-dependent SHAP values for boosted tree ensembles.

Attributions are in margin (log-odds) space. Node covers from training act
as the background distribution: when a feature is absent from a coalition,
a split on it is replaced by the cover-weighted average of its children.

``explain`` runs the polynomial-time algorithm over every root-to-leaf path
of every tree; ``brute_force_shapley`` enumerates coalitions directly and
serves as its oracle.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from itertools import combinations

import numba
import numpy as np

from .gbt import LEAF, GbtModel, Tree, predict_margin

BRUTE_FORCE_MAX_FEATURES = 12

if "NUMBA_THREADING_LAYER" not in os.environ:
    # any layer works for the per-sample loop; skip the TBB version probe
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


class ShapError(ValueError):
    pass


@dataclass(frozen=True)
class ShapMatrix:
    values: np.ndarray
    expected_value: float

    @property
    def sample_count(self) -> int:
        return self.values.shape[0]

    @property
    def feature_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ImportanceRanking:
    scores: np.ndarray
    order: np.ndarray

    def top(self, k: int) -> list[int]:
        return [int(i) for i in self.order[:k]]


def _check_covers(tree: Tree) -> None:
    if (tree.cover <= 0).any():
        raise ShapError("node with zero cover; the model file is corrupt")


def tree_expectation(tree: Tree) -> float:
    """Cover-weighted mean leaf value (the empty-coalition value)."""
    _check_covers(tree)
    acc = 0.0
    stack = [(0, 1.0)]
    while stack:
        k, w = stack.pop()
        if tree.feature[k] == LEAF:
            acc += w * tree.value[k]
        else:
            c = tree.cover[k]
            stack.append((tree.left[k], w * tree.cover[tree.left[k]] / c))
            stack.append((tree.right[k], w * tree.cover[tree.right[k]] / c))
    return acc


def expected_value(model: GbtModel) -> float:
    return model.base_margin + sum(tree_expectation(t) for t in model.trees)


def _tree_paths(tree: Tree):
    """Root-to-leaf paths with repeated features merged.

    Yields (leaf value, features, zero fractions, lower bounds, upper bounds):
    a sample is "on" the path for feature j iff lower <= x_j < upper.
    """
    out = []
    # each entry: node, {feature: [zero_fraction, lower, upper]} in first-seen order
    stack = [(0, {})]
    while stack:
        k, cond = stack.pop()
        if tree.feature[k] == LEAF:
            feats = list(cond)
            out.append((
                float(tree.value[k]),
                np.array(feats, np.int64),
                np.array([cond[f][0] for f in feats]),
                np.array([cond[f][1] for f in feats]),
                np.array([cond[f][2] for f in feats]),
            ))
            continue
        f = int(tree.feature[k])
        thr = tree.threshold[k]
        for child, go_left in ((tree.right[k], False), (tree.left[k], True)):
            z, lo, hi = cond.get(f, (1.0, -np.inf, np.inf))
            z = z * tree.cover[child] / tree.cover[k]
            if go_left:
                hi = min(hi, thr)
            else:
                lo = max(lo, thr)
            nxt = dict(cond)
            nxt[f] = (z, lo, hi)
            stack.append((child, nxt))
    return out


def _flatten_paths(model: GbtModel):
    values, offsets, feats, zeros, lows, highs = [], [0], [], [], [], []
    for tree in model.trees:
        _check_covers(tree)
        for v, f, z, lo, hi in _tree_paths(tree):
            values.append(v)
            feats.append(f)
            zeros.append(z)
            lows.append(lo)
            highs.append(hi)
            offsets.append(offsets[-1] + f.size)
    cat = lambda parts, dt: (np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt))
    return (np.array(values, np.float64), np.array(offsets, np.int64), cat(feats, np.int64),
            cat(zeros, np.float64), cat(lows, np.float64), cat(highs, np.float64))


@numba.njit(cache=True, parallel=True)
def _path_shap(X, leaf_values, offsets, feats, zeros, lows, highs, phi):
    n = X.shape[0]
    n_paths = leaf_values.shape[0]
    max_len = 0
    for p in range(n_paths):
        max_len = max(max_len, offsets[p + 1] - offsets[p])
    for i in numba.prange(n):
        # per-sample buffers: rows are independent, so threads never share state
        w = np.zeros(max_len + 1)
        ones = np.zeros(max_len + 1)
        zf = np.zeros(max_len + 1)
        for p in range(n_paths):
            a = offsets[p]
            k = offsets[p + 1] - a
            if k == 0:
                continue
            # element 0 is the unit root element
            ones[0] = 1.0
            zf[0] = 1.0
            w[0] = 1.0
            for e in range(1, k + 1):
                j = a + e - 1
                x = X[i, feats[j]]
                o = 1.0 if (lows[j] <= x and x < highs[j]) else 0.0
                z = zeros[j]
                ones[e] = o
                zf[e] = z
                w[e] = 0.0
                for q in range(e - 1, -1, -1):
                    w[q + 1] += o * w[q] * (q + 1) / (e + 1)
                    w[q] = z * w[q] * (e - q) / (e + 1)
            v = leaf_values[p]
            for e in range(1, k + 1):
                o = ones[e]
                z = zf[e]
                total = 0.0
                if o != 0.0:
                    nxt = w[k]
                    for q in range(k - 1, -1, -1):
                        tmp = nxt / ((q + 1) * o)
                        total += tmp
                        nxt = w[q] - tmp * z * (k - q)
                else:
                    for q in range(k - 1, -1, -1):
                        total += w[q] / (z * (k - q))
                total *= k + 1
                phi[i, feats[a + e - 1]] += total * (o - z) * v


def explain(model: GbtModel, features) -> ShapMatrix:
    """Per-sample, per-feature SHAP values with the ensemble expected value."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.feature_count:
        raise ShapError(f"expected a matrix with {model.feature_count} columns, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ShapError("feature matrix contains non-finite cells")
    paths = _flatten_paths(model)
    phi = np.zeros(X.shape)
    _path_shap(X, *paths, phi)
    return ShapMatrix(phi, expected_value(model))


# -- oracle -----------------------------------------------------------------

def _coalition_value(tree: Tree, x, present) -> float:
    """Tree output with features outside ``present`` integrated out by cover."""
    def walk(k):
        if tree.feature[k] == LEAF:
            return tree.value[k]
        f = tree.feature[k]
        if present[f]:
            return walk(tree.left[k] if x[f] < tree.threshold[k] else tree.right[k])
        lc, rc = tree.left[k], tree.right[k]
        return (tree.cover[lc] * walk(lc) + tree.cover[rc] * walk(rc)) / tree.cover[k]
    return walk(0)


def brute_force_shapley(model: GbtModel, sample) -> np.ndarray:
    """Shapley values by enumerating every coalition (feature_count <= 12)."""
    x = np.asarray(sample, dtype=np.float64)
    n = model.feature_count
    if n > BRUTE_FORCE_MAX_FEATURES:
        raise ShapError(f"brute force is limited to {BRUTE_FORCE_MAX_FEATURES} features, model has {n}")
    if x.shape != (n,):
        raise ShapError(f"sample must have {n} entries")
    for t in model.trees:
        _check_covers(t)

    value_cache = {}

    def v(coalition):
        if coalition not in value_cache:
            present = np.zeros(n, dtype=bool)
            present[list(coalition)] = True
            value_cache[coalition] = sum(_coalition_value(t, x, present) for t in model.trees)
        return value_cache[coalition]

    phi = np.zeros(n)
    fact = [math.factorial(k) for k in range(n + 1)]
    for j in range(n):
        others = [f for f in range(n) if f != j]
        for size in range(n):
            weight = fact[size] * fact[n - size - 1] / fact[n]
            for s in combinations(others, size):
                with_j = tuple(sorted(s + (j,)))
                phi[j] += weight * (v(with_j) - v(s))

    full = float(predict_margin(model, x[None, :])[0])
    gap = full - (model.base_margin + v(()))
    if abs(phi.sum() - gap) > 1e-9 * max(1.0, abs(gap)):
        raise AssertionError(f"efficiency violated: sum(phi)={phi.sum()!r}, f(x)-E={gap!r}")
    return phi


def rank_by_mean_abs(shap: ShapMatrix) -> ImportanceRanking:
    if shap.sample_count == 0:
        raise ShapError("cannot rank an empty SHAP matrix")
    scores = np.abs(shap.values).mean(axis=0)
    order = np.lexsort((np.arange(scores.size), -scores))
    return ImportanceRanking(scores, order)
