"""SHAP values of the boosted tree models.

Attributions are computed with the path-dependent TreeSHAP algorithm: the
expected output given a subset of known features is estimated by following
the known splits and averaging the unknown ones by node cover. Everything
is on the margin scale (log-odds for the logistic objective), where local
accuracy is exact::

    base_value + sum(values) == model.predict_margin(row)

"""

import logging
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from astropy.table import Table
from joblib import Parallel, delayed

from .utils import to_builtin

__all__ = (
    "ShapExplanation",
    "ImportanceReport",
    "tree_shap",
    "shap_values",
    "brute_force_shap",
    "expected_value",
    "global_importance",
)

SCALE = "margin"
BRUTE_FORCE_MAX_FEATURES = 10

logger = logging.getLogger(__name__)


@dataclass
class ShapExplanation:
    """Attributions of one row (1D ``values``) or several rows (2D)."""

    values: np.ndarray
    base_value: float
    model_output: np.ndarray
    feature_names: list
    scale: str = SCALE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.model_output = np.asarray(self.model_output, dtype=float)

    def as_dict(self):
        """Attributions of a single-row explanation, by feature name."""
        if self.values.ndim != 1:
            raise ValueError("only for single-row explanations")
        return dict(zip(self.feature_names, self.values.tolist()))


def _tree_expected_value(tree):
    leaves = tree.is_leaf
    cover = tree.node_sample_weight
    if cover[0] <= 0:
        return float(tree.values[0])
    return float(np.sum(tree.values[leaves] * cover[leaves]) / cover[0])


def expected_value(model):
    """Cover-weighted mean margin of the model, the base value of the
    attributions."""
    return model.base_score + sum(_tree_expected_value(t) for t in model.trees)


# The path is stored as four parallel arrays: feature index, fraction of
# "zero" paths (feature unknown) and "one" paths (feature known) flowing
# through, and the permutation weight.


def _extend(path, zero, one, feature):
    feats, zeros, ones, weights = path
    weights = np.append(weights, 0.0 if len(feats) else 1.0)
    feats = np.append(feats, feature)
    zeros = np.append(zeros, zero)
    ones = np.append(ones, one)
    depth = len(feats) - 1
    for i in range(depth - 1, -1, -1):
        weights[i + 1] += one * weights[i] * (i + 1) / (depth + 1)
        weights[i] = zero * weights[i] * (depth - i) / (depth + 1)
    return feats, zeros, ones, weights


def _unwind(path, index):
    feats, zeros, ones, weights = (a.copy() for a in path)
    depth = len(feats) - 1
    zero, one = zeros[index], ones[index]
    total = weights[depth]
    for j in range(depth - 1, -1, -1):
        if one != 0:
            tmp = weights[j]
            weights[j] = total * (depth + 1) / ((j + 1) * one)
            total = tmp - weights[j] * zero * (depth - j) / (depth + 1)
        else:
            weights[j] = weights[j] * (depth + 1) / (zero * (depth - j))
    keep = np.arange(depth + 1) != index
    return feats[keep], zeros[keep], ones[keep], weights[:depth]


def _unwound_sum(path, index):
    return float(np.sum(_unwind(path, index)[3]))


def _tree_shap_recurse(tree, x, phi, node, path, zero, one, feature):
    path = _extend(path, zero, one, feature)
    if tree.is_leaf[node]:
        feats, zeros, ones, _ = path
        for i in range(1, len(feats)):
            w = _unwound_sum(path, i)
            phi[feats[i]] += w * (ones[i] - zeros[i]) * tree.values[node]
        return

    split = tree.features[node]
    value = x[split]
    if np.isnan(value):
        hot = tree.children_default[node]
    elif value < tree.thresholds[node]:
        hot = tree.children_left[node]
    else:
        hot = tree.children_right[node]
    cold = (
        tree.children_right[node]
        if hot == tree.children_left[node]
        else tree.children_left[node]
    )
    cover = tree.node_sample_weight

    incoming_zero = incoming_one = 1.0
    previous = np.flatnonzero(path[0][1:] == split)
    if previous.size:
        k = int(previous[0]) + 1
        incoming_zero, incoming_one = path[1][k], path[2][k]
        path = _unwind(path, k)

    for child, one_fraction in ((hot, incoming_one), (cold, 0.0)):
        fraction = cover[child] / cover[node] if cover[node] > 0 else 0.5
        _tree_shap_recurse(
            tree,
            x,
            phi,
            child,
            path,
            incoming_zero * fraction,
            one_fraction,
            split,
        )


def _tree_shap_tree(tree, x, n_features):
    phi = np.zeros(n_features)
    empty = (
        np.zeros(0, dtype=int),
        np.zeros(0),
        np.zeros(0),
        np.zeros(0),
    )
    _tree_shap_recurse(tree, x, phi, 0, empty, 1.0, 1.0, -1)
    return phi


def _row_shap(model, row):
    phi = np.zeros(len(model.feature_names))
    for tree in model.trees:
        phi += _tree_shap_tree(tree, row, phi.size)
    return phi


def tree_shap(model, row):
    """SHAP values of one row.

    Parameters
    ----------
    model : `~dysgraph.boost.GbtModel`
        The model.
    row : sequence or dict
        Feature values in the model order, or a dict by feature name
        (missing keys are missing values).

    Returns
    -------
    `ShapExplanation`

    """
    if isinstance(row, dict):
        unknown = set(row) - set(model.feature_names)
        if unknown:
            raise KeyError(f"unknown features: {', '.join(sorted(unknown))}")
        row = [row.get(name) for name in model.feature_names]
        row = [np.nan if v is None else v for v in row]
    row = np.asarray(row, dtype=float)
    if row.shape != (len(model.feature_names),):
        raise ValueError("row does not match the model features")
    return ShapExplanation(
        values=_row_shap(model, row),
        base_value=expected_value(model),
        model_output=model.predict_margin(row)[0],
        feature_names=model.feature_names,
    )


def shap_values(model, X, n_jobs=1):
    """SHAP values of every row of ``X`` (array or FeatureMatrix).

    Returns a `ShapExplanation` with ``values`` of shape (n_rows,
    n_features) and the margin of each row in ``model_output``.
    """
    X = model.as_array(X)
    if n_jobs == 1:
        phi = [_row_shap(model, row) for row in X]
    else:
        phi = Parallel(n_jobs=n_jobs)(delayed(_row_shap)(model, row) for row in X)
    values = np.array(phi).reshape(X.shape[0], len(model.feature_names))
    return ShapExplanation(
        values=values,
        base_value=expected_value(model),
        model_output=model.predict_margin(X),
        feature_names=model.feature_names,
    )


def _conditional_expectation(tree, x, known):
    """Expected tree output when only the ``known`` features are fixed."""

    def recurse(node):
        if tree.is_leaf[node]:
            return tree.values[node]
        left, right = tree.children_left[node], tree.children_right[node]
        feature = tree.features[node]
        if known[feature]:
            value = x[feature]
            if np.isnan(value):
                return recurse(tree.children_default[node])
            return recurse(left if value < tree.thresholds[node] else right)
        wl = tree.node_sample_weight[left]
        wr = tree.node_sample_weight[right]
        return (recurse(left) * wl + recurse(right) * wr) / (wl + wr)

    return recurse(0)


def brute_force_shap(model, row):
    """Exact Shapley values by enumeration of all feature coalitions.

    Uses the same cover-weighted conditional expectation as `tree_shap`,
    so both agree up to rounding. Limited to 10 features.
    """
    row = np.asarray(row, dtype=float)
    n = len(model.feature_names)
    if n > BRUTE_FORCE_MAX_FEATURES:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_FEATURES} features")

    def value(coalition):
        known = np.zeros(n, dtype=bool)
        known[list(coalition)] = True
        return model.base_score + sum(
            _conditional_expectation(t, row, known) for t in model.trees
        )

    cache = {
        coalition: value(coalition)
        for size in range(n + 1)
        for coalition in combinations(range(n), size)
    }
    phi = np.zeros(n)
    for coalition, v in cache.items():
        size = len(coalition)
        if size == n:
            continue
        weight = (
            math.factorial(size) * math.factorial(n - size - 1) / math.factorial(n)
        )
        for i in set(range(n)) - set(coalition):
            with_i = tuple(sorted(coalition + (i,)))
            phi[i] += weight * (cache[with_i] - v)
    return phi


class ImportanceReport:
    """Global feature importance from the SHAP values of a matrix.

    Features are ranked by decreasing mean |SHAP| (ties in catalog order).
    ``sign`` is the sign of the correlation between the feature value and its
    attribution: +1 when higher values push towards the positive class (or
    higher scores), 0 when undefined.
    """

    def __init__(self, explanation, X, subject_ids, target=None, top_k=10):
        self.explanation = explanation
        self.X = np.asarray(X, dtype=float)
        self.subject_ids = list(subject_ids)
        self.target = target
        self.top_k = top_k
        values = explanation.values
        self.feature_names = list(explanation.feature_names)
        self.mean_abs = np.abs(values).mean(axis=0) if len(values) else np.zeros(0)
        self.sign = np.array(
            [_corr_sign(self.X[:, j], values[:, j]) for j in range(values.shape[1])],
            dtype=int,
        )
        self.ranking = [
            self.feature_names[j] for j in np.argsort(-self.mean_abs, kind="stable")
        ]

    def __repr__(self):
        return f"<ImportanceReport({self.target}, top={self.ranking[:3]})>"

    def top(self, k=None):
        k = self.top_k if k is None else k
        index = {name: j for j, name in enumerate(self.feature_names)}
        return [
            {
                "rank": rank,
                "feature": name,
                "mean_abs_shap": float(self.mean_abs[index[name]]),
                "sign": int(self.sign[index[name]]),
            }
            for rank, name in enumerate(self.ranking[:k], start=1)
        ]

    def table(self):
        """Per-row attributions, one column per feature."""
        cols = [self.subject_ids] + list(self.explanation.values.T)
        table = Table(cols, names=["subject_id"] + self.feature_names)
        table["base_value"] = np.full(len(table), self.explanation.base_value)
        table["model_output"] = self.explanation.model_output
        return table

    def long_table(self):
        """(subject_id, feature, value, shap) rows for beeswarm plots."""
        n, nfeat = self.explanation.values.shape
        table = Table(
            [
                np.repeat(self.subject_ids, nfeat),
                np.tile(self.feature_names, n),
                np.ma.masked_invalid(self.X.ravel()),
                self.explanation.values.ravel(),
            ],
            names=["subject_id", "feature", "value", "shap"],
            masked=True,
        )
        return table

    def to_dict(self):
        return to_builtin(
            {
                "target": self.target,
                "scale": self.explanation.scale,
                "base_value": self.explanation.base_value,
                "n_rows": len(self.subject_ids),
                "top": self.top(),
                "mean_abs_shap": dict(zip(self.feature_names, self.mean_abs)),
            }
        )


def _corr_sign(x, phi):
    keep = ~np.isnan(x)
    x, phi = x[keep], phi[keep]
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(phi) == 0:
        return 0
    return int(np.sign(np.corrcoef(x, phi)[0, 1]))


def global_importance(model, matrix, top_k=10, target=None, n_jobs=1):
    """SHAP values of every row of a FeatureMatrix and their global summary.

    Returns
    -------
    `ImportanceReport`

    """
    if matrix.n_rows == 0:
        raise ValueError("empty matrix")
    X = model.as_array(matrix)
    explanation = shap_values(model, X, n_jobs=n_jobs)
    total = explanation.base_value + explanation.values.sum(axis=1)
    err = np.abs(total - explanation.model_output)
    logger.debug("max local accuracy error: %.2e", err.max())
    report = ImportanceReport(
        explanation, X, matrix.subject_ids, target=target, top_k=top_k
    )
    logger.info("%s: top features %s", target, ", ".join(report.ranking[:3]))
    return report
