import numpy as np
import pytest

from dysgraph.boost import GbtConfig, fit_gbt
from dysgraph.explain import (
    brute_force_shap,
    expected_value,
    global_importance,
    shap_values,
    tree_shap,
)
from dysgraph.matrix import FeatureMatrix

NAMES = ["a", "b", "c", "d", "e"]


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(12)
    X = rng.normal(0, 1, (80, 5))
    X[:, 4] = 1.0
    X[::7, 2] = np.nan
    y = (X[:, 0] - 0.5 * X[:, 1] + 0.3 * rng.normal(0, 1, 80) > 0).astype(float)
    return X, y


@pytest.fixture(scope="module")
def model(data):
    X, y = data
    cfg = GbtConfig(n_rounds=15, max_depth=4, subsample=0.8, seed=1)
    return fit_gbt(X, y, cfg, NAMES)


def test_matches_brute_force(model, data):
    X, _ = data
    for row in X[:8]:
        expected = brute_force_shap(model, row)
        np.testing.assert_allclose(tree_shap(model, row).values, expected, atol=1e-9)


def test_regression_matches_brute_force(data):
    X, _ = data
    y = 3 * X[:, 0] + X[:, 1] ** 2
    cfg = GbtConfig(objective="squared_error", n_rounds=10, max_depth=5)
    model = fit_gbt(X, y, cfg, NAMES)
    for row in X[:5]:
        expected = brute_force_shap(model, row)
        np.testing.assert_allclose(tree_shap(model, row).values, expected, atol=1e-9)


def test_local_accuracy(model, data):
    X, _ = data
    explanation = shap_values(model, X)
    assert explanation.values.shape == (80, 5)
    assert explanation.scale == "margin"
    total = explanation.base_value + explanation.values.sum(axis=1)
    np.testing.assert_allclose(total, model.predict_margin(X), atol=1e-9)
    np.testing.assert_allclose(explanation.model_output, model.predict_margin(X))


def test_unused_feature(model, data):
    X, _ = data
    # the constant column is never split on
    np.testing.assert_array_equal(shap_values(model, X).values[:, 4], 0)


def test_missing_row(model):
    row = np.full(5, np.nan)
    explanation = tree_shap(model, row)
    total = explanation.base_value + explanation.values.sum()
    assert total == pytest.approx(model.predict_margin(row)[0])


def test_row_as_dict(model, data):
    X, _ = data
    row = dict(zip(NAMES, X[3]))
    explanation = tree_shap(model, row)
    np.testing.assert_allclose(explanation.values, tree_shap(model, X[3]).values)
    assert list(explanation.as_dict()) == NAMES

    with pytest.raises(KeyError, match="unknown features: z"):
        tree_shap(model, {"z": 1.0})
    with pytest.raises(ValueError, match="does not match"):
        tree_shap(model, X[3, :4])


def test_no_trees():
    X = np.arange(10.0)[:, None]
    cfg = GbtConfig(objective="squared_error", n_rounds=0)
    model = fit_gbt(X, np.arange(10.0), cfg)
    explanation = tree_shap(model, [3.0])
    assert explanation.values.tolist() == [0]
    assert explanation.base_value == expected_value(model) == 4.5


def test_brute_force_limit():
    X = np.random.default_rng(0).normal(0, 1, (20, 11))
    y = np.arange(20.0)
    cfg = GbtConfig(objective="squared_error", n_rounds=1)
    model = fit_gbt(X, y, cfg)
    with pytest.raises(ValueError, match="limited to 10 features"):
        brute_force_shap(model, X[0])


def test_parallel(model, data):
    X, _ = data
    serial = shap_values(model, X[:10])
    parallel = shap_values(model, X[:10], n_jobs=2)
    np.testing.assert_array_equal(serial.values, parallel.values)


def test_global_importance(model, data):
    X, _ = data
    matrix = FeatureMatrix.from_arrays(X, NAMES)
    report = global_importance(model, matrix, top_k=3, target="diagnosis")
    assert report.ranking[0] == "a"
    assert report.ranking[-1] == "e"
    assert report.sign[0] == 1
    assert report.sign[4] == 0

    top = report.top()
    assert [t["rank"] for t in top] == [1, 2, 3]
    assert top[0]["feature"] == "a"
    assert top[0]["mean_abs_shap"] >= top[1]["mean_abs_shap"]

    t = report.table()
    assert t.colnames == ["subject_id"] + NAMES + ["base_value", "model_output"]
    assert len(t) == 80
    assert len(report.long_table()) == 400

    d = report.to_dict()
    assert d["n_rows"] == 80
    assert d["target"] == "diagnosis"
    assert d["mean_abs_shap"]["e"] == 0


def test_global_importance_empty(model):
    matrix = FeatureMatrix.from_arrays(np.zeros((0, 5)), NAMES, [])
    with pytest.raises(ValueError, match="empty matrix"):
        global_importance(model, matrix)
