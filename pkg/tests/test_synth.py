import json
import logging
import os

import numpy as np
import pytest
from conftest import SMALL_COHORT

from dysgraph.features import extract_all
from dysgraph.signals import IN_AIR, ON_SURFACE, read_session, validate
from dysgraph.stats import regress_out_confound
from dysgraph.synth import CohortSpec, generate_cohort, generate_session, write_cohort


def test_cohort_labels(cohort):
    assert cohort.subject_ids[0] == "S0000"
    assert len(cohort.sessions) == 12
    assert cohort.labels.tolist() == [0] * 6 + [1] * 6
    assert [s.diagnosis for s in cohort.sessions[5:7]] == ["intact", "dysgraphic"]
    assert np.all(np.abs(cohort.severities[:6]) <= 0.2)
    assert np.all(np.abs(cohort.severities[6:] - 1) <= 0.2)


def test_sessions_are_valid(cohort):
    for sess in cohort.sessions:
        assert validate(sess) == []
        assert sess.hpsqc.problems() == []
        assert sess.sex in ("girl", "boy")
        assert sess.class_year in (3, 4)


def test_session_layout(cohort):
    for sess in cohort.sessions:
        strokes = sess.strokes
        assert strokes[0].surface == IN_AIR
        assert strokes[-1].surface == IN_AIR
        assert sum(s.surface == ON_SURFACE for s in strokes) >= 2
        assert np.all(sess.pressure[sess.pen_status == 0] == 0)
        assert np.all(sess.pressure[sess.pen_status == 1] > 0)
        # timestamps are whole ticks
        ticks = sess.t * sess.tick_rate
        np.testing.assert_array_equal(ticks, np.round(ticks))
        np.testing.assert_array_equal(sess.x, np.round(sess.x))


def test_determinism(cohort):
    again = generate_cohort(SMALL_COHORT)
    for s1, s2 in zip(cohort.sessions, again.sessions):
        assert s1.samples == s2.samples
        assert s1.meta == s2.meta

    other = generate_cohort(CohortSpec(n_intact=6, n_dd=6, strokes_per_session=6))
    assert other.sessions[0].samples != cohort.sessions[0].samples


def test_session_stream():
    # the session of a subject does not depend on the cohort size
    spec = CohortSpec(n_intact=6, n_dd=2, strokes_per_session=6, seed=1)
    sess, severity = generate_session(spec, 3)
    ref, ref_severity = generate_session(SMALL_COHORT, 3)
    assert sess.samples == ref.samples
    assert severity == ref_severity


def test_spec_errors():
    with pytest.raises(ValueError, match="n_intact"):
        CohortSpec(n_intact=0)
    with pytest.raises(ValueError, match="strokes_per_session"):
        CohortSpec(strokes_per_session=1)
    with pytest.raises(ValueError, match="tick_rate"):
        CohortSpec(sampling_rate=300)
    with pytest.raises(ValueError, match="stroke_height_factor"):
        CohortSpec(stroke_height_factor=0)

    spec = CohortSpec.from_dict({"n_dd": 3, "unknown": 1})
    assert spec.n_dd == 3
    assert CohortSpec.from_dict(spec.to_dict()) == spec


def test_in_air_factors():
    factors = CohortSpec().in_air_factors
    duration = factors["in_air_duration_factor"]
    interruptions = factors["interruption_rate_factor"]
    tempo = factors["in_air_tempo_factor"]
    assert interruptions / duration == pytest.approx(tempo)
    # the three factors are moved by the same ratio
    assert duration / 1.6 == pytest.approx(tempo / 0.7)
    assert duration / 1.6 == pytest.approx(1.4 / interruptions)
    assert 0.7 < tempo < 1.4 / 1.6

    consistent = CohortSpec(in_air_tempo_factor=1.4 / 1.6).in_air_factors
    assert consistent == pytest.approx(
        {
            "in_air_duration_factor": 1.6,
            "interruption_rate_factor": 1.4,
            "in_air_tempo_factor": 1.4 / 1.6,
        }
    )


def _in_air_time(session):
    return sum(
        s.duration for s in session.strokes if s.surface == IN_AIR and not s.is_boundary
    )


def test_tempo_factor(caplog):
    # a lower in-air tempo makes longer in-air movements
    common = dict(n_intact=1, n_dd=10, strokes_per_session=6, seed=4)
    with caplog.at_level(logging.INFO):
        slow = generate_cohort(CohortSpec(in_air_tempo_factor=0.3, **common))
    assert "in-air factors adjusted" in caplog.text
    fast = generate_cohort(CohortSpec(in_air_tempo_factor=1.5, **common))
    slow_time = np.mean([_in_air_time(s) for s in slow.sessions[1:]])
    fast_time = np.mean([_in_air_time(s) for s in fast.sessions[1:]])
    assert slow_time > 1.3 * fast_time

    caplog.clear()
    consistent = CohortSpec(in_air_tempo_factor=1.4 / 1.6, **common)
    with caplog.at_level(logging.INFO):
        generate_cohort(consistent)
    assert "in-air factors" not in caplog.text


def test_write_cohort(tmpdir, cohort):
    directory = str(tmpdir.join("raw"))
    paths = write_cohort(cohort, directory, config={"recipe": "synth"})
    assert len(paths) == 12
    names = sorted(os.listdir(directory))
    assert "cohort.csv" in names
    assert "S0011.json" in names
    assert sum(name.endswith(".svc") for name in names) == 12

    sess = read_session(paths[7])
    assert sess.samples == cohort.sessions[7].samples
    assert sess.hpsqc == cohort.sessions[7].hpsqc

    with open(os.path.join(directory, "cohort.json")) as f:
        doc = json.load(f)
    assert doc["config"] == {"recipe": "synth"}
    assert doc["spec"]["seed"] == 1
    assert doc["subjects"][7]["diagnosis"] == "dysgraphic"
    assert doc["subjects"][7]["severity"] == pytest.approx(cohort.severities[7])


@pytest.fixture(scope="module")
def effects():
    spec = CohortSpec(n_intact=20, n_dd=20, strokes_per_session=10, seed=5)
    cohort = generate_cohort(spec)
    matrix = extract_all(cohort.sessions)
    labels = cohort.labels
    out = {}
    for name in (
        "stroke_height:on_surface:median",
        "duration_writing:in_air:none",
        "interruptions:global:none",
        "angular_velocity:on_surface:ncv",
        "tempo:in_air:none",
    ):
        col = matrix.column(name)
        out[name] = np.median(col[labels == 1]) / np.median(col[labels == 0])
    totals = np.array([s.hpsqc.total for s in cohort.sessions])
    out["total"] = totals[labels == 1].mean() - totals[labels == 0].mean()
    return out


def test_group_effects(effects):
    assert 1.3 < effects["stroke_height:on_surface:median"] < 1.7
    assert 1.2 < effects["duration_writing:in_air:none"] < 2.2
    assert 1.1 < effects["interruptions:global:none"] < 1.8
    assert effects["total"] > 8
    # less variable curvature and slower in-air movements
    assert effects["angular_velocity:on_surface:ncv"] > 1
    assert effects["tempo:in_air:none"] < 0.9


def test_sex_effect():
    spec = CohortSpec(
        n_intact=40, n_dd=1, strokes_per_session=6, seed=2, sex_effect=1.4
    )
    cohort = generate_cohort(spec)
    matrix = extract_all(cohort.sessions).subset(cohort.labels == 0)
    name = "stroke_height:on_surface:median"
    sex = np.array(matrix.meta_column("sex"))
    assert set(sex) == {"boy", "girl"}
    height = matrix.column(name)
    ratio = np.median(height[sex == "boy"]) / np.median(height[sex == "girl"])
    assert ratio > 1.2

    residuals = regress_out_confound(matrix, confound="sex").column(name)
    for level in ("boy", "girl"):
        assert np.mean(residuals[sex == level]) == pytest.approx(0, abs=1e-9)
