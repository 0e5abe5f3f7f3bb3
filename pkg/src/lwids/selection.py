"""Feature selection: SHAP-ordered forward wrapper and baseline scorers.

Baselines are the usual filter statistics (chi-squared, one-way ANOVA F,
binned mutual information, absolute Pearson correlation) plus the embedded
split-gain ranking of a trained ensemble.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import gbt, treeshap
from .flows import DatasetSplit, FlowDataset
from .metrics import MetricTriple, evaluate_labels

logger = logging.getLogger(__name__)

METHODS = ("shap_wrapper", "chi2", "anova_f", "mutual_info", "pearson", "embedded")
FILTER_METHODS = ("chi2", "anova_f", "mutual_info", "pearson")
ANOVA_SENTINEL = float(np.finfo(np.float64).max)


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class TraceStep:
    size: int
    feature: int
    metrics: MetricTriple

    def to_dict(self, names=None) -> dict:
        d = {"size": self.size, "added_feature": self.feature}
        if names is not None:
            d["added_name"] = names[self.feature]
        d.update(self.metrics.to_dict())
        return d


@dataclass(frozen=True)
class NextFeatureCheck:
    """Result of adding the next-ranked feature after the wrapper stopped."""

    feature: int
    metrics: MetricTriple
    improves: bool


@dataclass
class SelectionResult:
    method: str
    selected: list[int]
    metrics: MetricTriple | None = None
    trace: list[TraceStep] = field(default_factory=list)
    stopping_f1: float | None = None
    epsilon: float = 0.0
    scores: np.ndarray | None = None
    full_metrics: MetricTriple | None = None
    next_check: NextFeatureCheck | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self, names) -> dict:
        d = {
            "method": self.method,
            "selected": list(self.selected),
            "selected_names": [names[i] for i in self.selected],
            "metrics": self.metrics.to_dict() if self.metrics else None,
        }
        if self.scores is not None:
            d["scores"] = {names[j]: float(s) for j, s in enumerate(self.scores)}
        if self.method == "shap_wrapper":
            d["stopping_f1"] = self.stopping_f1
            d["epsilon"] = self.epsilon
            d["full_model_metrics"] = self.full_metrics.to_dict() if self.full_metrics else None
            d["trace"] = [s.to_dict(names) for s in self.trace]
            if self.next_check is not None:
                d["next_feature_check"] = {
                    "feature": self.next_check.feature,
                    "name": names[self.next_check.feature],
                    **self.next_check.metrics.to_dict(),
                    "improves": self.next_check.improves,
                }
        if self.notes:
            d["notes"] = self.notes
        return d


# -- filter scorers -----------------------------------------------------------

def _xy(train: FlowDataset):
    return train.features, train.labels.astype(np.int64)


def nonnegative_shift(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shift columns with negative entries so their minimum becomes 0."""
    shift = np.minimum(X.min(axis=0), 0.0)
    return X - shift, -shift


def score_chi2(train: FlowDataset, bins: int | None = None) -> np.ndarray:
    """Chi-squared statistic per feature.

    Default convention treats each feature value as a count: observed is the
    per-class column sum, expected splits the column total by class
    frequency. With ``bins`` the feature is quantile-binned instead and the
    contingency-table statistic is returned.
    """
    X, y = _xy(train)
    if bins is not None:
        return np.array([_chi2_contingency(quantile_codes(X[:, j], bins), y) for j in range(X.shape[1])])
    X, shift = nonnegative_shift(X)
    if shift.any():
        logger.info("chi2: shifted %d columns to be nonnegative", int(np.count_nonzero(shift)))
    n = X.shape[0]
    totals = X.sum(axis=0)
    stat = np.zeros(X.shape[1])
    for c in (0, 1):
        observed = X[y == c].sum(axis=0)
        expected = np.count_nonzero(y == c) / n * totals
        ok = expected > 0
        stat[ok] += (observed[ok] - expected[ok]) ** 2 / expected[ok]
    return stat


def _chi2_contingency(codes: np.ndarray, y: np.ndarray) -> float:
    table = np.zeros((codes.max() + 1, 2))
    np.add.at(table, (codes, y), 1.0)
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / table.sum()
    ok = expected > 0
    return float(((table[ok] - expected[ok]) ** 2 / expected[ok]).sum())


def score_anova_f(train: FlowDataset) -> np.ndarray:
    """One-way ANOVA F per feature with (k-1, n-k) degrees of freedom.

    Zero within-class variance with a between-class difference scores
    ``ANOVA_SENTINEL``.
    """
    X, y = _xy(train)
    groups = [X[y == c] for c in (0, 1)]
    if min(g.shape[0] for g in groups) < 2:
        raise SelectionError("ANOVA needs at least 2 samples per class")
    n, k = X.shape[0], len(groups)
    grand = X.mean(axis=0)
    ss_between = sum(g.shape[0] * (g.mean(axis=0) - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean(axis=0)) ** 2).sum(axis=0) for g in groups)
    ms_between = ss_between / (k - 1)
    ms_within = ss_within / (n - k)
    out = np.zeros(X.shape[1])
    pos = ms_within > 0
    out[pos] = ms_between[pos] / ms_within[pos]
    degenerate = ~pos & (ms_between > 0)
    if degenerate.any():
        logger.info("anova: %d features with zero within-class variance", int(degenerate.sum()))
    out[degenerate] = ANOVA_SENTINEL
    return out


def quantile_codes(x: np.ndarray, bins: int) -> np.ndarray:
    """Integer bin of each value using up to ``bins`` quantile bins."""
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1)))
    return np.searchsorted(edges[1:-1], x, side="right").astype(np.int64)


def mutual_info_codes(codes: np.ndarray, y: np.ndarray) -> float:
    """Discrete mutual information (nats) from empirical joint frequencies."""
    codes = np.asarray(codes, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    _, codes = np.unique(codes, return_inverse=True)
    joint = np.zeros((codes.max() + 1, y.max() + 1))
    np.add.at(joint, (codes, y), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(max((joint[nz] * np.log(joint[nz] / (px @ py)[nz])).sum(), 0.0))


def score_mutual_info(train: FlowDataset, bins: int = 32) -> np.ndarray:
    if bins < 2:
        raise SelectionError("bins must be >= 2")
    X, y = _xy(train)
    if X.shape[0] < bins:
        raise SelectionError(f"mutual information with {bins} bins needs at least {bins} rows")
    return np.array([mutual_info_codes(quantile_codes(X[:, j], bins), y) for j in range(X.shape[1])])


def score_pearson(train: FlowDataset) -> np.ndarray:
    """Absolute point-biserial correlation with the label; constant features score 0."""
    X, y = _xy(train)
    if X.shape[0] < 2:
        raise SelectionError("Pearson correlation needs at least 2 samples")
    xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sxx = (xc**2).sum(axis=0)
    syy = float((yc**2).sum())
    out = np.zeros(X.shape[1])
    ok = sxx > 0
    if syy > 0:
        out[ok] = np.abs(yc @ xc[:, ok]) / np.sqrt(sxx[ok] * syy)
    return np.minimum(out, 1.0)


def select_top_k(scores, k: int) -> list[int]:
    """Indices of the k largest scores, descending; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= scores.size:
        raise SelectionError(f"k must lie in [1, {scores.size}], got {k}")
    order = np.lexsort((np.arange(scores.size), -scores))
    return [int(i) for i in order[:k]]


FILTER_SCORERS = {
    "chi2": score_chi2,
    "anova_f": score_anova_f,
    "mutual_info": score_mutual_info,
    "pearson": score_pearson,
}


# -- model-in-the-loop ------------------------------------------------------

def evaluate_method(split: DatasetSplit, config: gbt.GbtConfig, selected, threshold: float = 0.5) -> MetricTriple:
    """Train on the selected train-side columns; test-side positive-class metrics."""
    selected = [int(i) for i in selected]
    if not selected:
        raise SelectionError("no features selected")
    sub = split.select(selected)
    model = gbt.fit(sub.train, config)
    return evaluate_labels(sub.test.labels, gbt.predict_label(model, sub.test.features, threshold))


def explain_rows(split: DatasetSplit, on: str = "train") -> np.ndarray:
    if on == "train":
        return split.train.features
    if on == "all":
        return np.vstack([split.train.features, split.test.features])
    raise SelectionError(f"unknown explanation sample set {on!r}; use 'train' or 'all'")


def select_shap_forward(split: DatasetSplit, config: gbt.GbtConfig = gbt.GbtConfig(), epsilon: float = 0.0,
                        explain_on: str = "train", threshold: float = 0.5,
                        full_model: gbt.GbtModel | None = None) -> SelectionResult:
    """Forward selection in descending mean-|SHAP| order.

    Stops at the first prefix whose test F1 reaches the full model's F1
    minus ``epsilon``. An undefined F1 counts as 0 in that comparison.
    """
    if epsilon < 0:
        raise SelectionError("epsilon must be >= 0")
    if full_model is None:
        full_model = gbt.fit(split.train, config)
    full = evaluate_labels(split.test.labels, gbt.predict_label(full_model, split.test.features, threshold))
    stopping = full.f1_or_zero()

    ranking = treeshap.rank_by_mean_abs(treeshap.explain(full_model, explain_rows(split, explain_on)))
    order = [int(i) for i in ranking.order]
    if not order:
        raise SelectionError("empty ranking")

    chosen: list[int] = []
    trace: list[TraceStep] = []
    for f in order:
        chosen.append(f)
        m = evaluate_method(split, config, chosen, threshold)
        trace.append(TraceStep(len(chosen), f, m))
        logger.info("wrapper step %d: +%s %s", len(chosen), split.schema.feature_names[f], m.render())
        if m.f1_or_zero() >= stopping - epsilon:
            break

    next_check = None
    if len(chosen) < len(order):
        nxt = order[len(chosen)]
        m = evaluate_method(split, config, chosen + [nxt], threshold)
        next_check = NextFeatureCheck(nxt, m, m.f1_or_zero() > trace[-1].metrics.f1_or_zero())

    return SelectionResult(
        method="shap_wrapper",
        selected=chosen,
        metrics=trace[-1].metrics,
        trace=trace,
        stopping_f1=stopping,
        epsilon=float(epsilon),
        scores=ranking.scores,
        full_metrics=full,
        next_check=next_check,
        notes={"explained_on": explain_on},
    )


def select_filter(split: DatasetSplit, method: str, k: int, config: gbt.GbtConfig = gbt.GbtConfig(),
                  threshold: float = 0.5, mi_bins: int = 32) -> SelectionResult:
    if method == "mutual_info":
        scores = score_mutual_info(split.train, mi_bins)
    elif method in FILTER_SCORERS:
        scores = FILTER_SCORERS[method](split.train)
    else:
        raise SelectionError(f"unknown filter method {method!r}")
    notes = {}
    if method == "chi2":
        _, shift = nonnegative_shift(split.train.features)
        if shift.any():
            notes["shifted_columns"] = {split.schema.feature_names[j]: float(s)
                                        for j, s in enumerate(shift) if s}
    selected = select_top_k(scores, k)
    return SelectionResult(method, selected, evaluate_method(split, config, selected, threshold),
                           scores=scores, notes=notes)


def select_embedded(split: DatasetSplit, k: int, config: gbt.GbtConfig = gbt.GbtConfig(),
                    threshold: float = 0.5, full_model: gbt.GbtModel | None = None) -> SelectionResult:
    if full_model is None:
        full_model = gbt.fit(split.train, config)
    scores = gbt.gain_importance(full_model)
    selected = select_top_k(scores, k)
    return SelectionResult("embedded", selected, evaluate_method(split, config, selected, threshold), scores=scores)


def compare_methods(split: DatasetSplit, config: gbt.GbtConfig = gbt.GbtConfig(), k: int | None = None,
                    epsilon: float = 0.0, explain_on: str = "train", threshold: float = 0.5,
                    mi_bins: int = 32) -> list[SelectionResult]:
    """The wrapper plus every baseline; baselines use ``k`` features, or as
    many as the wrapper kept when ``k`` is None."""
    full_model = gbt.fit(split.train, config)
    wrapper = select_shap_forward(split, config, epsilon, explain_on, threshold, full_model)
    k = k or len(wrapper.selected)
    rows = [select_filter(split, m, k, config, threshold, mi_bins) for m in FILTER_METHODS]
    rows.append(select_embedded(split, k, config, threshold, full_model))
    rows.append(wrapper)
    return rows
