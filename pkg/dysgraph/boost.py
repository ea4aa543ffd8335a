"""Gradient-boosted decision trees, cross-validation and evaluation metrics.

The trainer is a second-order (Newton) booster with exact greedy split
finding: each round fits one regression tree to the gradients and hessians
of the objective, with the usual regularizations (``reg_lambda``, ``gamma``,
``min_child_weight``) and row/column sampling. Missing values (NaN) are
routed to a default direction learned for each split.

Trees are stored as flat node arrays, node 0 being the root::

    children_left, children_right, children_default : int, -1 for leaves
    features : int, -1 for leaves
    thresholds : float, a row goes left when ``x < threshold``
    values : float, the node weight (already scaled by the learning rate)
    node_sample_weight : float, the hessian sum (cover) of the node

"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np
from astropy.table import Table
from joblib import Parallel, delayed
from mpdaf.tools import progressbar
from scipy.special import expit
from sklearn.model_selection import RepeatedStratifiedKFold, train_test_split

from .flags import Diagnostic
from .settings import HPSQC_COLUMNS, HPSQC_RANGES, PARAM_GRID
from .stats import ConfoundRegressor
from .utils import to_builtin, write_json, write_table

__all__ = (
    "GbtConfig",
    "GbtModel",
    "GbtTrainingError",
    "Tree",
    "EvalReport",
    "SearchResult",
    "sample_config",
    "fit_gbt",
    "train",
    "predict",
    "classification_metrics",
    "regression_metrics",
    "stratified_repeated_kfold",
    "cross_validate",
    "random_search",
    "objective_for",
    "score_range_for",
)

LOGISTIC = "logistic"
SQUARED_ERROR = "squared_error"
OBJECTIVES = (LOGISTIC, SQUARED_ERROR)
MODEL_FORMAT = "dysgraph-gbt"
MODEL_FORMAT_VERSION = 1
HESSIAN_MIN = 1e-16

CLASSIFICATION_METRICS = ("BACC", "MCC", "SEN", "SPE")
REGRESSION_METRICS = ("MAE", "MSE", "RMSE", "EER")

logger = logging.getLogger(__name__)


class GbtTrainingError(ValueError):
    """Raised for degenerate targets and invalid training configurations."""


@dataclass(frozen=True)
class GbtConfig:
    """Hyperparameters of the booster."""

    learning_rate: float = 0.3
    gamma: float = 0.0
    max_depth: int = 6
    subsample: float = 1.0
    colsample_bylevel: float = 1.0
    colsample_bytree: float = 1.0
    min_child_weight: float = 1.0
    scale_pos_weight: float = 1.0
    n_rounds: int = 100
    reg_lambda: float = 1.0
    objective: str = LOGISTIC
    seed: int = 0
    early_stopping_rounds: Optional[int] = None
    validation_fraction: float = 0.2

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise GbtTrainingError(f"unknown objective {self.objective}")
        if not self.learning_rate > 0:
            raise GbtTrainingError("learning_rate must be positive")
        if self.gamma < 0 or self.reg_lambda < 0 or self.min_child_weight < 0:
            raise GbtTrainingError("gamma, reg_lambda, min_child_weight must be >= 0")
        if self.max_depth < 0 or self.n_rounds < 0:
            raise GbtTrainingError("max_depth and n_rounds must be >= 0")
        for name in ("subsample", "colsample_bylevel", "colsample_bytree"):
            if not 0 < getattr(self, name) <= 1:
                raise GbtTrainingError(f"{name} must be in (0, 1]")
        if self.scale_pos_weight <= 0:
            raise GbtTrainingError("scale_pos_weight must be positive")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise GbtTrainingError("early_stopping_rounds must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise GbtTrainingError("validation_fraction must be in (0, 1)")

    def replace(self, **kwargs):
        return replace(self, **kwargs)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise GbtTrainingError(f"unknown parameters: {', '.join(sorted(unknown))}")
        return cls(**d)


def sample_config(rng, grid=None):
    """Draw one value per grid field, uniformly and in the grid order.

    Returns a dict of parameters. Values are converted to the types of the
    `GbtConfig` fields.
    """
    grid = PARAM_GRID if grid is None else grid
    types = {f.name: f.type for f in fields(GbtConfig)}
    params = {}
    for name, values in grid.items():
        value = values[int(rng.integers(len(values)))]
        params[name] = int(value) if types.get(name) is int else float(value)
    return params


def objective_for(target):
    """Objective used for a target column."""
    return LOGISTIC if target == "diagnosis" else SQUARED_ERROR


def score_range_for(target, y=None):
    """Range used to normalize the MAE into the EER of a score.

    HPSQ-C scores use their theoretical range, other targets the observed
    range of ``y``.

    >>> score_range_for('hpsqc_total')
    40
    >>> score_range_for('total')
    40

    """
    name = HPSQC_COLUMNS.get(target, target)
    if name in HPSQC_RANGES:
        return HPSQC_RANGES[name]
    if y is None:
        raise ValueError(f"no theoretical range for {target}")
    y = np.asarray(y, dtype=float)
    return float(np.nanmax(y) - np.nanmin(y))


# -- trees --------------------------------------------------------------------------


class Tree:
    """One regression tree stored as flat arrays."""

    arrays = (
        "children_left",
        "children_right",
        "children_default",
        "features",
        "thresholds",
        "values",
        "node_sample_weight",
    )

    def __init__(
        self,
        children_left,
        children_right,
        children_default,
        features,
        thresholds,
        values,
        node_sample_weight,
    ):
        self.children_left = np.asarray(children_left, dtype=int)
        self.children_right = np.asarray(children_right, dtype=int)
        self.children_default = np.asarray(children_default, dtype=int)
        self.features = np.asarray(features, dtype=int)
        self.thresholds = np.asarray(thresholds, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.node_sample_weight = np.asarray(node_sample_weight, dtype=float)

    def __repr__(self):
        return f"<Tree({self.n_nodes} nodes, depth {self.max_depth})>"

    @property
    def n_nodes(self):
        return len(self.values)

    @property
    def is_leaf(self):
        return self.children_left < 0

    @property
    def max_depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if not self.is_leaf[node]:
                depth[self.children_left[node]] = depth[node] + 1
                depth[self.children_right[node]] = depth[node] + 1
        return int(depth.max()) if self.n_nodes else 0

    def apply(self, X):
        """Return the leaf index reached by each row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            idx = np.flatnonzero(self.children_left[node] >= 0)
            if idx.size == 0:
                return node
            nd = node[idx]
            x = X[idx, self.features[nd]]
            node[idx] = np.where(
                np.isnan(x),
                self.children_default[nd],
                np.where(
                    x < self.thresholds[nd],
                    self.children_left[nd],
                    self.children_right[nd],
                ),
            )

    def predict(self, X):
        return self.values[self.apply(X)]

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in self.arrays}

    @classmethod
    def from_dict(cls, d):
        return cls(**{name: d[name] for name in cls.arrays})


class _TreeBuilder:
    """Exact greedy growth of one tree from gradients and hessians."""

    def __init__(self, X, grad, hess, config, rng):
        self.X = X
        self.grad = grad
        self.hess = hess
        self.config = config
        self.rng = rng
        self.nodes = []
        self.level_features = {}

    def _sample_features(self, candidates, fraction):
        k = max(1, int(math.floor(fraction * len(candidates))))
        if k >= len(candidates):
            return candidates
        return np.sort(self.rng.choice(candidates, k, replace=False))

    def _features_at(self, depth):
        if depth not in self.level_features:
            self.level_features[depth] = self._sample_features(
                self.tree_features, self.config.colsample_bylevel
            )
        return self.level_features[depth]

    def build(self, rows):
        self.tree_features = self._sample_features(
            np.arange(self.X.shape[1]), self.config.colsample_bytree
        )
        self._grow(rows, 0)
        columns = list(zip(*self.nodes))
        return Tree(*columns)

    def _score(self, G, H):
        return G ** 2 / (H + self.config.reg_lambda)

    def _weight(self, G, H):
        denom = H + self.config.reg_lambda
        return -G / denom * self.config.learning_rate if denom > 0 else 0.0

    def _grow(self, rows, depth):
        G = float(self.grad[rows].sum())
        H = float(self.hess[rows].sum())
        node = len(self.nodes)
        # left, right, default, feature, threshold, value, cover
        self.nodes.append([-1, -1, -1, -1, 0.0, self._weight(G, H), H])
        if depth >= self.config.max_depth or self.X.shape[1] == 0:
            return node
        split = self._find_split(rows, G, H, self._features_at(depth))
        if split is None:
            return node

        feature, threshold, default_left = split
        x = self.X[rows, feature]
        go_left = np.where(np.isnan(x), default_left, x < threshold)
        left = self._grow(rows[go_left], depth + 1)
        right = self._grow(rows[~go_left], depth + 1)
        self.nodes[node][:5] = [
            left,
            right,
            left if default_left else right,
            int(feature),
            float(threshold),
        ]
        return node

    def _find_split(self, rows, G, H, feats):
        """Best split of a node over the candidate features.

        Returns (feature, threshold, default_left) or None when no split has
        a positive gain. Ties go to the lowest feature index, then the lowest
        threshold.
        """
        if rows.size < 2 or feats.size == 0:
            return None
        cfg = self.config
        Xn = self.X[np.ix_(rows, feats)]
        order = np.argsort(Xn, axis=0, kind="stable")
        vs = np.take_along_axis(Xn, order, axis=0)
        missing = np.isnan(vs)
        gs = np.where(missing, 0.0, self.grad[rows][order])
        hs = np.where(missing, 0.0, self.hess[rows][order])
        cg, ch = np.cumsum(gs, axis=0), np.cumsum(hs, axis=0)
        Gm, Hm = G - cg[-1], H - ch[-1]
        GL, HL = cg[:-1], ch[:-1]

        with np.errstate(invalid="ignore", divide="ignore"):
            valid = ~missing[:-1] & ~missing[1:] & (vs[1:] > vs[:-1])
            parent = self._score(G, H)
            gains = []
            for gl, hl in ((GL, HL), (GL + Gm, HL + Hm)):
                hr = H - hl
                ok = valid & (hl >= cfg.min_child_weight) & (hr >= cfg.min_child_weight)
                gain = 0.5 * (self._score(gl, hl) + self._score(G - gl, hr) - parent)
                gains.append(np.where(ok & np.isfinite(gain), gain, -np.inf))
        gain_right, gain_left = gains
        default_left = gain_left >= gain_right
        gain = np.maximum(gain_left, gain_right) - cfg.gamma

        # feature-major order so that argmax breaks ties on the feature index
        flat = gain.T.ravel()
        best = int(np.argmax(flat))
        if not flat[best] > 0:
            return None
        j, i = divmod(best, gain.shape[0])
        return feats[j], vs[i + 1, j], bool(default_left[i, j])


# -- model -------------------------------------------------------------------------


class GbtModel:
    """A trained ensemble.

    ``base_score`` is on the margin scale: the target mean for
    ``squared_error`` and the log-odds of the positive rate for
    ``logistic``.

    """

    def __init__(
        self,
        trees,
        base_score,
        config,
        feature_names,
        train_loss=None,
        best_iteration=None,
        target=None,
    ):
        self.trees = list(trees)
        self.base_score = float(base_score)
        self.config = config
        self.feature_names = list(feature_names)
        self.train_loss = list(train_loss or [])
        self.best_iteration = best_iteration
        self.target = target

    def __repr__(self):
        return (
            f"<GbtModel({self.config.objective}, {len(self.trees)} trees, "
            f"{len(self.feature_names)} features)>"
        )

    @property
    def objective(self):
        return self.config.objective

    def as_array(self, X):
        """Feature array in the model order, from an array or a FeatureMatrix."""
        if hasattr(X, "feature_names") and hasattr(X, "column"):
            unknown = set(self.feature_names) - set(X.feature_names)
            if unknown:
                raise KeyError(f"missing features: {', '.join(sorted(unknown))}")
            return np.column_stack([X.column(name) for name in self.feature_names])
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != len(self.feature_names):
            raise ValueError(
                f"expected {len(self.feature_names)} features, got {X.shape[1]}"
            )
        return X

    def predict_margin(self, X):
        X = self.as_array(X)
        margin = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            margin += tree.predict(X)
        return margin

    def predict(self, X):
        """Predicted probability (logistic) or score (squared_error)."""
        margin = self.predict_margin(X)
        return expit(margin) if self.objective == LOGISTIC else margin

    def predict_label(self, X):
        return (self.predict(X) >= 0.5).astype(int)

    def predict_row(self, row):
        """Predict one row, given as a sequence or a dict by feature name."""
        if isinstance(row, dict):
            unknown = set(row) - set(self.feature_names)
            if unknown:
                raise KeyError(f"unknown features: {', '.join(sorted(unknown))}")
            row = [row.get(name, np.nan) for name in self.feature_names]
            row = [np.nan if v is None else v for v in row]
        return float(self.predict(np.asarray(row, dtype=float))[0])

    def to_dict(self):
        return to_builtin(
            {
                "format": MODEL_FORMAT,
                "format_version": MODEL_FORMAT_VERSION,
                "base_score": self.base_score,
                "params": self.config.to_dict(),
                "feature_names": self.feature_names,
                "best_iteration": self.best_iteration,
                "target": self.target,
                "train_loss": self.train_loss,
                "trees": [tree.to_dict() for tree in self.trees],
            }
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a dysgraph model document")
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('format_version')}")
        return cls(
            [Tree.from_dict(t) for t in d["trees"]],
            d["base_score"],
            GbtConfig.from_dict(d["params"]),
            d["feature_names"],
            train_loss=d.get("train_loss"),
            best_iteration=d.get("best_iteration"),
            target=d.get("target"),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def write(self, filename, config=None):
        write_json(filename, self.to_dict(), config=config)
        logger.debug("model saved to %s", filename)
        return filename

    @classmethod
    def read(cls, filename):
        if not os.path.isfile(filename):
            raise FileNotFoundError(f"model {filename} not found")
        with open(filename) as f:
            return cls.from_dict(json.load(f))


def predict(model, row):
    """Predict one row (sequence or dict by feature name) with a model."""
    return model.predict_row(row)


# -- training ----------------------------------------------------------------------


def _base_score(y, objective):
    if objective == LOGISTIC:
        labels = np.unique(y)
        if not set(labels) <= {0.0, 1.0}:
            raise GbtTrainingError("logistic objective needs 0/1 labels")
        if labels.size < 2:
            raise GbtTrainingError("degenerate target: a single class")
        rate = y.mean()
        return math.log(rate / (1 - rate))
    if np.all(y == y[0]):
        raise GbtTrainingError("degenerate target: zero variance")
    return float(y.mean())


def _gradients(margin, y, objective, weight):
    if objective == LOGISTIC:
        p = expit(margin)
        return weight * (p - y), weight * np.maximum(p * (1 - p), HESSIAN_MIN)
    return margin - y, np.ones_like(y)


def _loss(margin, y, objective, weight):
    if objective == LOGISTIC:
        return float(np.average(np.logaddexp(0, margin) - y * margin, weights=weight))
    return float(0.5 * np.mean((y - margin) ** 2))


def _subsample(rng, n, fraction):
    if fraction >= 1:
        return np.arange(n)
    rows = np.flatnonzero(rng.random(n) < fraction)
    if rows.size == 0:
        rows = np.array([int(rng.integers(n))])
    return rows


def _selection_score(y, margin, objective):
    """Early-stopping score, higher is better."""
    if objective == LOGISTIC:
        return classification_metrics(y, (margin >= 0).astype(int))["MCC"]
    return -float(np.mean(np.abs(y - margin)))


def fit_gbt(X, y, config, feature_names=None):
    """Train a `GbtModel` on arrays.

    Parameters
    ----------
    X : array (n, n_features)
        Feature values, NaN for missing values.
    y : array (n,)
        Target: 0/1 labels for ``logistic``, reals for ``squared_error``.
    config : `GbtConfig`
        Hyperparameters.
    feature_names : list of str, optional
        Feature names stored in the model.

    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise GbtTrainingError("X must be 2D with one row per target value")
    if X.shape[0] < 2:
        raise GbtTrainingError("at least 2 rows are needed")
    if np.isnan(y).any():
        raise GbtTrainingError("the target has missing values")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(X.shape[1])]
    objective = config.objective
    rng = np.random.default_rng(config.seed)

    X_val = y_val = None
    if config.early_stopping_rounds is not None:
        X, X_val, y, y_val = train_test_split(
            X,
            y,
            test_size=config.validation_fraction,
            random_state=int(rng.integers(2 ** 31 - 1)),
            stratify=y if objective == LOGISTIC else None,
        )

    base_score = _base_score(y, objective)
    weight = np.ones_like(y)
    if objective == LOGISTIC:
        weight[y == 1] = config.scale_pos_weight

    margin = np.full(y.shape, base_score)
    if X_val is not None:
        margin_val = np.full(y_val.shape, base_score)
        best_score, best_iteration = -np.inf, None
    trees, losses = [], []
    for iteration in range(config.n_rounds):
        grad, hess = _gradients(margin, y, objective, weight)
        rows = _subsample(rng, y.size, config.subsample)
        tree = _TreeBuilder(X, grad, hess, config, rng).build(rows)
        trees.append(tree)
        margin += tree.predict(X)
        losses.append(_loss(margin, y, objective, weight))

        if X_val is not None:
            margin_val += tree.predict(X_val)
            score = _selection_score(y_val, margin_val, objective)
            if score > best_score:
                best_score, best_iteration = score, iteration
            elif iteration - best_iteration >= config.early_stopping_rounds:
                logger.debug(
                    "early stopping at round %d (best %d)", iteration, best_iteration
                )
                break

    best = None
    if X_val is not None and best_iteration is not None:
        best = best_iteration
        trees, losses = trees[: best + 1], losses[: best + 1]
    return GbtModel(
        trees,
        base_score,
        config,
        feature_names,
        train_loss=losses,
        best_iteration=best,
    )


def train(matrix, target, config):
    """Train a model on a `~dysgraph.matrix.FeatureMatrix` target.

    Rows with a missing target are dropped.
    """
    column = matrix.resolve_target(target)
    y = matrix.target(column)
    keep = ~np.isnan(y)
    if not keep.all():
        logger.warning("%s: dropping %d rows without target", column, (~keep).sum())
    model = fit_gbt(matrix.values[keep], y[keep], config, matrix.feature_names)
    model.target = column
    logger.info(
        "%s: trained %d trees on %d rows (%s)",
        column,
        len(model.trees),
        keep.sum(),
        config.objective,
    )
    return model


# -- metrics -----------------------------------------------------------------------


def classification_metrics(y_true, y_pred):
    """Balanced accuracy, Matthews correlation, sensitivity and specificity.

    SEN (or SPE) is NaN when there are no positive (negative) rows; MCC is 0
    when its denominator vanishes.

    >>> m = classification_metrics([1, 1, 0, 0], [1, 0, 0, 0])
    >>> m['SEN'], m['SPE'], m['BACC']
    (0.5, 1.0, 0.75)

    """
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    if y_true.size == 0:
        raise ValueError("empty input")
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    sen = tp / (tp + fn) if tp + fn else np.nan
    spe = tn / (tn + fp) if tn + fp else np.nan
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom else 0.0
    return {"BACC": (sen + spe) / 2, "MCC": mcc, "SEN": sen, "SPE": spe}


def regression_metrics(y_true, y_pred, score_range):
    """MAE, MSE, RMSE and the estimation error rate EER = 100 MAE / range.

    >>> regression_metrics([10, 20], [12, 16], 40)['EER']
    7.5

    """
    if not score_range > 0:
        raise ValueError("score_range must be positive")
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.size == 0:
        raise ValueError("empty input")
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    err = y_pred - y_true
    mae = float(np.mean(np.abs(err)))
    mse = float(np.mean(err ** 2))
    return {
        "MAE": mae,
        "MSE": mse,
        "RMSE": math.sqrt(mse),
        "EER": 100 * mae / score_range,
    }


# -- cross-validation --------------------------------------------------------------


def quartile_bins(y):
    """Stratum (0-3) of each value by quartile."""
    y = np.asarray(y, dtype=float)
    edges = np.quantile(y, [0.25, 0.5, 0.75])
    return np.searchsorted(edges, y, side="left")


def stratified_repeated_kfold(y, k=10, repeats=10, seed=0, regression=False):
    """Fold assignments of a repeated stratified k-fold.

    Regression targets are stratified by quartile bins. When a stratum has
    fewer than ``k`` members, ``k`` is reduced to the smallest stratum size
    (at least 2) with a warning.

    Returns
    -------
    folds : array (repeats, n)
        Test fold index of each row in each repeat.

    """
    y = np.asarray(y)
    n = y.shape[0]
    if n < 2:
        raise ValueError("at least 2 rows are needed for cross-validation")
    strata = quartile_bins(y) if regression else y
    _, counts = np.unique(strata, return_counts=True)
    k_eff = max(2, min(k, int(counts.min())))
    if k_eff != k:
        diag = Diagnostic(
            "FOLDS_REDUCED", message=f"{k} folds reduced to {k_eff} (n={n})"
        )
        logger.warning("%s: %s", diag.code, diag.message)
    cv = RepeatedStratifiedKFold(n_splits=k_eff, n_repeats=repeats, random_state=seed)
    folds = np.empty((repeats, n), dtype=int)
    for i, (_, test) in enumerate(cv.split(np.zeros((n, 1)), strata)):
        folds[i // k_eff, test] = i % k_eff
    return folds


def cross_validate(
    X, y, config, fold_ids, confound=None, score_range=None, feature_names=None
):
    """Train and evaluate a configuration on every fold.

    Parameters
    ----------
    X, y : arrays
        Features and target.
    config : `GbtConfig`
        Hyperparameters.
    fold_ids : array (repeats, n)
        Fold assignments, see `stratified_repeated_kfold`.
    confound : array, optional
        Confound levels per row. When given, a `~dysgraph.stats.ConfoundRegressor`
        is fitted on each training fold and applied to both folds.
    score_range : float, optional
        Range for the EER of regression targets.

    Returns
    -------
    list of dict
        One dict per fold with ``repeat``, ``fold``, ``n_train``, ``n_test``
        and the metrics.

    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    fold_ids = np.asarray(fold_ids)
    if config.objective == SQUARED_ERROR and score_range is None:
        score_range = float(y.max() - y.min())

    results = []
    for repeat, assignment in enumerate(fold_ids):
        for fold in np.unique(assignment):
            test = assignment == fold
            X_train, X_test = X[~test], X[test]
            if confound is not None:
                levels = np.asarray(confound, dtype=object)
                reg = ConfoundRegressor()
                X_train = reg.fit_transform(X_train, levels[~test], feature_names)
                X_test = reg.transform(X_test, levels[test])
            model = fit_gbt(X_train, y[~test], config, feature_names)
            if config.objective == LOGISTIC:
                metrics = classification_metrics(y[test], model.predict_label(X_test))
            else:
                metrics = regression_metrics(
                    y[test], model.predict(X_test), score_range
                )
            results.append(
                {
                    "repeat": repeat,
                    "fold": int(fold),
                    "n_train": int((~test).sum()),
                    "n_test": int(test.sum()),
                    **metrics,
                }
            )
    return results


class EvalReport:
    """Cross-validated metrics of one configuration.

    Metrics are computed on each test fold, then averaged over all folds of
    all repeats (standard deviation with ``ddof=0``). Undefined fold values
    (NaN) are ignored.
    """

    def __init__(
        self, task, folds, fold_ids, params=None, target=None, score_range=None
    ):
        if task not in ("classification", "regression"):
            raise ValueError(f"invalid task {task}")
        self.task = task
        self.folds = folds
        self.fold_ids = np.asarray(fold_ids)
        self.params = params
        self.target = target
        self.score_range = score_range

    def __repr__(self):
        summary = ", ".join(
            f"{k}={v['mean']:.3f}±{v['std']:.3f}" for k, v in self.summary().items()
        )
        return f"<EvalReport({self.target}, {summary})>"

    @property
    def metrics(self):
        if self.task == "classification":
            return CLASSIFICATION_METRICS
        return REGRESSION_METRICS

    def summary(self):
        out = {}
        for name in self.metrics:
            vals = np.array([f[name] for f in self.folds], dtype=float)
            vals = vals[~np.isnan(vals)]
            out[name] = {
                "mean": float(vals.mean()) if vals.size else np.nan,
                "std": float(vals.std()) if vals.size else np.nan,
            }
        return out

    def score(self, name):
        return self.summary()[name]["mean"]

    def fold_table(self):
        names = ["repeat", "fold", "n_train", "n_test"] + list(self.metrics)
        return Table(
            rows=[[f[name] for name in names] for f in self.folds], names=names
        )

    def to_dict(self):
        return to_builtin(
            {
                "task": self.task,
                "target": self.target,
                "score_range": self.score_range,
                "params": self.params,
                "n_folds": len(self.folds),
                "metrics": self.summary(),
                "folds": self.folds,
                "fold_assignments": self.fold_ids,
            }
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    def write(self, filename, config=None):
        return write_json(filename, self.to_dict(), config=config)

    def write_folds(self, filename, config=None):
        return write_table(self.fold_table(), filename, config=config)


class SearchResult:
    """Outcome of `random_search`: the winning configuration, its
    `EvalReport` and one trial row per iteration."""

    def __init__(self, best_config, best_iteration, report, trials):
        self.best_config = best_config
        self.best_iteration = best_iteration
        self.report = report
        self.trials = trials

    def trials_table(self):
        names = ["iteration", "status", "score"] + list(PARAM_GRID)
        rows = []
        for trial in self.trials:
            row = [trial["iteration"], trial["status"], trial["score"]]
            row += [trial["params"].get(name, np.nan) for name in PARAM_GRID]
            rows.append(row)
        table = Table(rows=rows, names=names, masked=True)
        table["score"] = np.ma.masked_invalid(np.array(table["score"], dtype=float))
        return table


def _evaluate_config(config, X, y, fold_ids, confound, score_range, feature_names):
    try:
        folds = cross_validate(
            X,
            y,
            config,
            fold_ids,
            confound=confound,
            score_range=score_range,
            feature_names=feature_names,
        )
    except (ValueError, FloatingPointError) as exc:
        return None, str(exc)
    return folds, None


def random_search(
    X,
    y,
    objective,
    n_iter=500,
    seed=0,
    grid=None,
    folds=10,
    repeats=10,
    base_config=None,
    confound=None,
    score_range=None,
    feature_names=None,
    target=None,
    n_jobs=1,
):
    """Randomized hyperparameter search with repeated stratified k-fold.

    ``n_iter`` configurations are drawn uniformly (with replacement) from the
    grid, each one is cross-validated on the same folds, and the winner is
    the configuration with the highest mean MCC (classification) or lowest
    mean MAE (regression), ties going to the earliest iteration. A
    configuration whose training fails is skipped.

    Returns
    -------
    `SearchResult`

    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    _base_score(y, objective)
    grid = {**PARAM_GRID, **(grid or {})}
    base = base_config or GbtConfig()
    base = base.replace(objective=objective, seed=seed)
    regression = objective == SQUARED_ERROR
    if regression and score_range is None:
        score_range = float(y.max() - y.min())

    rng = np.random.default_rng(seed)
    configs = [base.replace(**sample_config(rng, grid)) for _ in range(n_iter)]
    fold_ids = stratified_repeated_kfold(
        y, k=folds, repeats=repeats, seed=seed, regression=regression
    )
    logger.info(
        "random search: %d iterations, %d folds x %d repeats, %d rows",
        n_iter,
        fold_ids.max() + 1,
        repeats,
        y.size,
    )
    outputs = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_config)(
            cfg, X, y, fold_ids, confound, score_range, feature_names
        )
        for cfg in progressbar(configs)
    )

    task = "regression" if regression else "classification"
    metric = "MAE" if regression else "MCC"
    sign = 1 if regression else -1
    trials = []
    best, best_key = None, np.inf
    for i, (cfg, (fold_results, error)) in enumerate(zip(configs, outputs)):
        params = {name: getattr(cfg, name) for name in grid}
        if fold_results is None:
            diag = Diagnostic("CONFIG_SKIPPED", i, error)
            logger.warning("%s: iteration %d: %s", diag.code, i, error)
            trials.append(
                {"iteration": i, "status": "skipped", "score": np.nan, "params": params}
            )
            continue
        report = EvalReport(task, fold_results, fold_ids, params=params, target=target)
        score = report.score(metric)
        trials.append(
            {"iteration": i, "status": "ok", "score": score, "params": params}
        )
        key = sign * score
        if not np.isnan(key) and key < best_key:
            best, best_key = (i, cfg, report), key

    if best is None:
        raise GbtTrainingError("every configuration of the search failed")
    i, cfg, report = best
    report.params = cfg.to_dict()
    report.score_range = score_range
    logger.info("best iteration %d: %s = %.4f", i, metric, report.score(metric))
    return SearchResult(cfg, i, report, trials)
