import json
import os
import shutil
from glob import glob

import numpy as np
import pytest
from astropy.table import Table
from click.testing import CliRunner

import dysgraph.recipes.model as model_recipes
from dysgraph import DysGraph
from dysgraph.__main__ import cli
from dysgraph.boost import random_search
from dysgraph.dysgraph import SECTIONS
from dysgraph.matrix import FeatureMatrix
from dysgraph.recipes import get_recipe_cls, recipe_classes
from dysgraph.stats import regress_out_confound
from dysgraph.synth import CohortSpec
from dysgraph.utils import load_yaml_config

SYNTH_ARGS = ["synth", "--n-intact", "8", "--n-dd", "8", "--strokes-per-session", "6"]
SEARCH_ARGS = ["--n-iter", "2", "--folds", "2", "--repeats", "1", "--n-rounds", "5"]


def invoke(*args):
    result = CliRunner().invoke(cli, list(args))
    if result.exception and not isinstance(result.exception, SystemExit):
        raise result.exception
    return result


def read_json(filename):
    with open(filename) as f:
        return json.load(f)


def test_help(workdir):
    result = invoke("--help")
    assert result.exit_code == 0
    out = result.output.splitlines()
    out = out[out.index("Commands:") + 1 :]
    commands = [line.split()[0] for line in out if line.strip()]
    assert commands == [
        "analyze",
        "evaluate",
        "explain",
        "extract",
        "report",
        "synth",
        "train",
    ]


def test_missing_settings(workdir):
    result = invoke("--settings", "missing.yml", "report")
    assert result.exit_code == 1


def test_recipe_defaults():
    # the defaults of the recipes are the ones of the settings
    conf = load_yaml_config()
    for name, cls in recipe_classes.items():
        section = conf[SECTIONS[name]]
        for key, value in cls.default_params.items():
            if key in section:
                assert section[key] == value, (name, key)
    assert get_recipe_cls("synth").default_params == CohortSpec().to_dict()
    with pytest.raises(ValueError, match="unknown recipe"):
        get_recipe_cls("reduce")


def test_pipeline(workdir):
    result = invoke(*SYNTH_ARGS)
    assert result.exit_code == 0
    assert len(glob("raw/*.svc")) == 16
    assert os.path.isfile("raw/cohort.csv")

    result = invoke("extract")
    assert result.exit_code == 0
    features = read_json("output/features.json")
    assert features["config"]["recipe"] == "extract"
    assert "n_jobs" not in features["config"]["params"]
    assert len(read_json("output/catalog.json")["features"]) == 112
    validation = read_json("output/validation.json")
    assert validation["n_valid"] == 16
    matrix = FeatureMatrix.read("output/features.csv")
    assert matrix.n_rows == 16
    assert matrix.subject_ids == sorted(matrix.subject_ids)

    result = invoke("analyze", "-t", "diagnosis", "-t", "total")
    assert result.exit_code == 0
    summary = read_json("output/stats_summary.json")
    assert sorted(summary["analyses"]) == ["diagnosis", "hpsqc_total"]
    stats = Table.read("output/stats_diagnosis.csv", format="ascii.ecsv")
    assert len(stats) == 112
    assert os.path.isfile("output/scores_overview.csv")

    result = invoke("train", "-t", "diagnosis", *SEARCH_ARGS)
    assert result.exit_code == 0
    model = read_json("output/model_diagnosis.json")
    assert model["target"] == "diagnosis"
    assert model["config"]["target"] == "diagnosis"
    assert model["params"]["n_rounds"] == 5
    evaluation = read_json("output/eval_diagnosis.json")
    assert evaluation["n_folds"] == 2
    assert sorted(evaluation["metrics"]) == ["BACC", "MCC", "SEN", "SPE"]
    assert len(Table.read("output/search_diagnosis.csv", format="ascii.ecsv")) == 2
    importance = read_json("output/importance_diagnosis.json")
    assert len(importance["top"]) == 10

    result = invoke(
        "evaluate", "output/model_diagnosis.json", "--folds", "3", "--repeats", "1"
    )
    assert result.exit_code == 0
    evaluation = read_json("output/eval_diagnosis.json")
    assert evaluation["config"]["recipe"] == "evaluate"
    assert evaluation["n_folds"] == 3

    result = invoke("explain", "output/model_diagnosis.json", "--top-k", "3")
    assert result.exit_code == 0
    importance = read_json("output/importance_diagnosis.json")
    assert importance["config"]["recipe"] == "explain"
    assert len(importance["top"]) == 3
    shap = Table.read("output/shap_diagnosis.csv", format="ascii.ecsv")
    assert len(shap) == 16

    result = invoke("report")
    assert result.exit_code == 0
    assert "16 sessions (16 ok, 0 invalid, 0 unreadable)" in result.output
    assert "Cross-validated models" in result.output
    assert "SHAP importance (diagnosis)" in result.output

    dg = DysGraph("settings.yml")
    runs = [row["recipe_name"] for row in dg.runs.find(order_by="id")]
    assert runs == ["synth", "extract", "analyze", "train", "evaluate", "explain"]
    assert all(row["status"] == "ok" for row in dg.runs.find())
    assert dg.sessions.count(status="ok") == 16


def test_train_regression(workdir):
    invoke(*SYNTH_ARGS)
    invoke("extract")
    result = invoke("train", "-t", "total", "--no-explain", *SEARCH_ARGS)
    assert result.exit_code == 0
    model = read_json("output/model_hpsqc_total.json")
    assert model["params"]["objective"] == "squared_error"
    evaluation = read_json("output/eval_hpsqc_total.json")
    assert evaluation["score_range"] == 40
    assert "EER" in evaluation["metrics"]
    assert not os.path.exists("output/importance_hpsqc_total.json")


def test_train_confound(dg, cohort_dir, monkeypatch):
    calls = []

    def search(X, y, objective, **kwargs):
        calls.append((X, kwargs["confound"]))
        return random_search(X, y, objective, **kwargs)

    monkeypatch.setattr(model_recipes, "random_search", search)
    dg.extract(cohort_dir)
    matrix = FeatureMatrix.read("output/features.csv")
    params = dict(n_iter=1, folds=2, repeats=1, n_rounds=3, explain=False)

    # the sex is regressed out of the whole matrix before the search
    dg.train("diagnosis", **params)
    X, confound = calls[0]
    expected = regress_out_confound(matrix, confound="sex").values
    np.testing.assert_allclose(X, expected, equal_nan=True)
    assert not np.allclose(X, matrix.values, equal_nan=True)
    assert confound is None

    # or inside each training fold
    dg.train("diagnosis", confound_within_folds=True, **params)
    X, confound = calls[1]
    np.testing.assert_allclose(X, matrix.values, equal_nan=True)
    assert confound == matrix.meta_column("sex")

    dg.train("diagnosis", confound=False, **params)
    np.testing.assert_allclose(calls[2][0], matrix.values, equal_nan=True)


@pytest.fixture
def class_matrix(workdir):
    """Matrix with 2 class years of 12 children, both sexes in each."""
    labels = np.arange(24) % 2
    metas = [
        {
            "subject_id": f"S{i:04d}",
            "sex": ("boy", "girl")[(i // 2) % 2],
            "class_year": 3 if i < 12 else 4,
            "diagnosis": ("intact", "dysgraphic")[labels[i]],
        }
        for i in range(24)
    ]
    values = np.random.default_rng(0).normal(size=(24, 4))
    values[:, 0] += 2 * labels
    matrix = FeatureMatrix.from_arrays(values, ["a", "b", "c", "d"], metas)
    return matrix.write("classes.csv")


def test_group_by(class_matrix):
    args = ("--group-by", "class_year")
    result = invoke("train", class_matrix, *args, *SEARCH_ARGS)
    assert result.exit_code == 0
    for name in ("diagnosis", "diagnosis_class_year3", "diagnosis_class_year4"):
        for prefix in ("model", "eval", "importance"):
            assert os.path.isfile(f"output/{prefix}_{name}.json")
        for prefix in ("search", "shap", "eval"):
            assert glob(f"output/{prefix}_{name}*.csv")

    model = read_json("output/model_diagnosis_class_year3.json")
    assert model["target"] == "diagnosis"
    assert model["config"]["group"] == {"class_year": 3}
    assert "group" not in read_json("output/model_diagnosis.json")["config"]
    shap = Table.read("output/shap_diagnosis_class_year4.csv", format="ascii.ecsv")
    assert len(shap) == 12

    model = "output/model_diagnosis.json"
    result = invoke(
        "evaluate", model, class_matrix, *args, "--folds", "2", "--repeats", "1"
    )
    assert result.exit_code == 0
    evaluation = read_json("output/eval_diagnosis_class_year4.json")
    assert evaluation["config"]["recipe"] == "evaluate"
    assert evaluation["n_folds"] == 2

    result = invoke("explain", model, class_matrix, *args, "--top-k", "2")
    assert result.exit_code == 0
    importance = read_json("output/importance_diagnosis_class_year3.json")
    assert importance["config"]["recipe"] == "explain"
    assert len(importance["top"]) == 2

    result = invoke("report")
    assert "SHAP importance (diagnosis_class_year3)" in result.output


def test_global_seed(workdir):
    result = invoke("--seed", "3", *SYNTH_ARGS)
    assert result.exit_code == 0
    assert read_json("raw/cohort.json")["spec"]["seed"] == 3


def test_extract_api(dg, cohort_dir):
    recipe = dg.extract(cohort_dir)
    assert recipe.results.n_rows == 12
    assert not recipe.partial
    assert dg.sessions.count() == 12

    # sessions are updated, not duplicated
    dg.extract(cohort_dir, bins=16)
    assert dg.sessions.count() == 12
    run = dg.runs.find_one(recipe_name="extract", order_by="-id")
    assert json.loads(run["params"])["bins"] == 16


def test_info(dg, cohort_dir, capsys):
    dg.extract(cohort_dir)
    capsys.readouterr()
    dg.info(show_sessions=True)
    out = capsys.readouterr().out
    assert "12 sessions (12 ok, 0 invalid, 0 unreadable)" in out
    assert "6 intact, 6 dysgraphic" in out
    assert "S0011" in out


@pytest.fixture
def raw_with_errors(workdir, cohort_dir):
    os.makedirs("raw")
    for path in glob(os.path.join(cohort_dir, "S000*")):
        shutil.copy(path, "raw")
    with open("raw/S9999.svc", "w") as f:
        f.write("abc\n")
    return "raw"


def test_parse_error(raw_with_errors):
    result = invoke("extract")
    assert result.exit_code == 3
    # the validation report is written before failing
    validation = read_json("output/validation.json")
    statuses = {os.path.basename(f["path"]): f["status"] for f in validation["files"]}
    assert statuses["S9999.svc"] == "unreadable"
    assert statuses["S0000.svc"] == "ok"
    assert not os.path.exists("output/features.csv")


def test_keep_going(raw_with_errors):
    result = invoke("extract", "--keep-going")
    assert result.exit_code == 6
    matrix = FeatureMatrix.read("output/features.csv")
    assert matrix.n_rows == 10

    dg = DysGraph("settings.yml")
    assert dg.sessions.count(status="unreadable") == 1
    assert dg.runs.find_one(recipe_name="extract")["status"] == "partial"


def test_validation_error(workdir):
    os.makedirs("bad")
    # no on-surface sample
    with open("bad/S0100.svc", "w") as f:
        f.write("2\n1 2 0 0 0 0 0\n1 2 5 0 0 0 0\n")
    result = invoke("extract", "bad")
    assert result.exit_code == 4
    result = invoke("extract", "--keep-going", "bad")
    assert result.exit_code == 4

    dg = DysGraph("settings.yml")
    row = dg.sessions.find_one(subject_id="S0100")
    assert row["status"] == "invalid"
    assert row["n_errors"] == 1
    assert dg.runs.find_one(recipe_name="extract")["status"] == "failed"


def test_model_error(workdir, cohort_dir):
    intact = sorted(glob(os.path.join(cohort_dir, "S000[0-2].svc")))
    assert invoke("extract", *intact).exit_code == 0
    result = invoke("train", *SEARCH_ARGS)
    assert result.exit_code == 5
