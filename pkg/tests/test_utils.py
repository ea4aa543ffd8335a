import json
import os

import dataset
import numpy as np
import pytest
import sqlalchemy
from astropy.table import Table

from dysgraph.settings import DEFAULT_SETTINGS
from dysgraph.utils import (
    deep_update,
    ensure_list,
    load_db,
    load_yaml_config,
    to_builtin,
    upsert_many,
    write_json,
    write_table,
)

CURDIR = os.path.dirname(os.path.abspath(__file__))
TESTDIR = os.path.join(CURDIR, "..", "docs", "_static")


def test_deep_update():
    conf = {"model": {"folds": 10, "repeats": 10}, "seed": 42}
    deep_update(conf, {"model": {"folds": 5}, "n_jobs": 2})
    assert conf == {"model": {"folds": 5, "repeats": 10}, "seed": 42, "n_jobs": 2}


def test_ensure_list():
    assert ensure_list("foo") == ["foo"]
    assert ensure_list(["foo"]) == ["foo"]
    assert ensure_list(np.array([1, 2])) == [1, 2]
    assert ensure_list(None) == []


def test_load_yaml_config_defaults():
    conf = load_yaml_config()
    assert conf["db"] == "./dysgraph.db"
    assert conf["log_dir"] == "./output/logs"
    assert conf["features"]["bins"] == 32
    assert conf["stats"]["targets"][0] == "diagnosis"


def test_load_yaml_config_file(tmpdir):
    filename = str(tmpdir.join("settings.yml"))
    with open(filename, "w") as f:
        f.write("workdir: /data/study\nmodel:\n  folds: 5\n")

    conf = load_yaml_config(filename)
    assert conf["raw_path"] == "/data/study/raw"
    assert conf["log_dir"] == "/data/study/output/logs"
    assert conf["model"]["folds"] == 5
    # other keys of the section keep their default
    assert conf["model"]["repeats"] == 10


def test_example_settings_match_defaults():
    example = load_yaml_config(os.path.join(TESTDIR, "settings.yml"), defaults=None)
    defaults = load_yaml_config(defaults=DEFAULT_SETTINGS)
    assert example == defaults


def test_to_builtin():
    out = to_builtin({"a": np.int64(3), "b": (np.float32(0.5), np.inf)})
    assert out == {"a": 3, "b": [0.5, None]}
    assert isinstance(out["a"], int)
    assert to_builtin(np.bool_(True)) is True


def test_upsert_many():
    db = dataset.connect("sqlite:///:memory:")
    rows = [
        {"path": "S0000.svc", "status": "ok"},
        {"path": "S0001.svc", "status": "invalid"},
    ]
    upsert_many(db, "sessions", rows, keys=["path"])
    upsert_many(db, "sessions", [{"path": "S0001.svc", "status": "ok"}], ["path"])
    table = db["sessions"]
    assert table.count() == 2
    assert table.count(status="ok") == 2


def test_load_db(tmpdir, monkeypatch):
    filename = str(tmpdir.join("db", "dysgraph.db"))
    db = load_db(filename=filename)
    assert os.path.isfile(filename)
    assert set(db.tables) == {"runs", "sessions"}
    assert db["sessions"].has_index(["subject_id"])
    assert db["runs"].has_index(["recipe_name"])
    db["sessions"].insert({"path": "S0001.svc", "subject_id": "S0001"})

    # opening again keeps the rows and does not duplicate the indexes
    db = load_db(filename=filename)
    assert db["sessions"].count() == 1
    indexes = sqlalchemy.inspect(db.engine).get_indexes("sessions")
    assert sorted(ix["name"] for ix in indexes) == [
        "ix_sessions_path",
        "ix_sessions_status",
        "ix_sessions_subject_id",
    ]

    monkeypatch.delenv("DYSGRAPH_DB", raising=False)
    with pytest.raises(ValueError, match="DYSGRAPH_DB"):
        load_db(db_env="DYSGRAPH_DB")
    with pytest.raises(ValueError):
        load_db()


def test_write_json(tmpdir):
    filename = str(tmpdir.join("out.json"))
    write_json(filename, {"b": np.float64(1.5), "a": [1, 2]}, config={"seed": 1})
    with open(filename) as f:
        doc = json.load(f)
    assert doc["a"] == [1, 2]
    assert doc["b"] == 1.5
    assert doc["config"] == {"seed": 1}
    assert "dysgraph_version" in doc

    # same payload, same bytes
    other = str(tmpdir.join("other.json"))
    write_json(other, {"a": [1, 2], "b": 1.5}, config={"seed": 1})
    with open(filename) as f1, open(other) as f2:
        assert f1.read() == f2.read()


def test_write_table(tmpdir):
    filename = str(tmpdir.join("out.csv"))
    t = Table(rows=[["velocity:on_surface:median", 0.01]], names=("feature", "p"))
    write_table(t, filename, config={"recipe": "analyze"})

    t2 = Table.read(filename, format="ascii.ecsv")
    assert t2["feature"][0] == "velocity:on_surface:median"
    assert t2.meta["config"] == {"recipe": "analyze"}
    assert "dysgraph_version" in t2.meta
    # the data section is comma separated
    with open(filename) as f:
        lines = [line for line in f if not line.startswith("#")]
    assert lines[0].strip() == "feature,p"
