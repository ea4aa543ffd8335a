import numpy as np
import pytest
from conftest import make_session

from dysgraph.features import (
    ExtractionError,
    FeatureExtractor,
    aggregate,
    aggregate_azimuth,
    circular_median,
    dynamic_features,
    extract_all,
    extract_session,
    feature_catalog,
    kinematic_features,
    ncv,
    other_features,
    shannon_entropy,
    slope,
    spatial_features,
    temporal_features,
    unwrap_azimuth,
)
from dysgraph.signals import IN_AIR, ON_SURFACE, Session
from dysgraph.synth import CohortSpec, generate_session

RATE = 200.0


def as_dict(values):
    return {v.name: v.value for v in values}


def segment(pen, n, x0=0.0, dx=1.0, y=0.0):
    return (pen, x0 + dx * np.arange(n), y)


def test_catalog():
    catalog = feature_catalog()
    names = [spec.name for spec in catalog]
    assert len(names) == 112
    assert len(set(names)) == 112

    groups = {}
    for spec in catalog:
        groups[spec.group] = groups.get(spec.group, 0) + 1
    assert groups == {
        "temporal": 13,
        "kinematic": 56,
        "dynamic": 12,
        "spatial": 16,
        "other": 15,
    }

    assert names[0] == "duration_writing:global:none"
    assert "velocity:vertical:on_surface:p95" in names
    assert "entropy:horizontal:in_air:none" in names
    nonstandard = [spec.name for spec in catalog if spec.nonstandard]
    assert len(nonstandard) == 8
    assert all(":in_air:" in name for name in nonstandard)


def test_catalog_units():
    specs = {spec.name: spec for spec in feature_catalog()}
    assert specs["velocity:on_surface:median"].unit == "units/s"
    assert specs["stroke_duration:on_surface:slope"].unit == "s/stroke"
    specs = {spec.name: spec for spec in feature_catalog(units_per_mm=1000)}
    assert specs["velocity:on_surface:median"].unit == "mm/s"
    assert specs["stroke_width:on_surface:p95"].unit == "mm"


def test_unknown_option():
    with pytest.raises(TypeError, match="unknown feature options: foo"):
        FeatureExtractor(foo=1)


def test_ncv():
    assert ncv([1, 2, 3, 4, 5]) == 1.5
    assert ncv([5, 3, 1, 4, 2]) == 1.5
    assert np.isnan(ncv([7, 7, 7, 7]))
    assert np.isnan(ncv([]))


def test_slope():
    assert slope(0.3 * np.arange(10) + 2) == pytest.approx(0.3, abs=1e-12)
    assert np.isnan(slope([1.0]))
    assert np.isnan(slope([1, 2], x=[3, 3]))


def test_aggregate():
    agg = aggregate([1, 2, 3, 4, 5])
    assert agg["median"] == 3
    assert agg["p95"] == pytest.approx(4.8)
    assert agg["slope"] == 1
    assert all(np.isnan(v) for v in aggregate([]).values())

    # p95 is monotone when a new maximum is added
    values = [0.3, 0.1, 0.7, 0.4]
    assert aggregate(values + [2.0])["p95"] >= aggregate(values)["p95"]


def test_entropy():
    assert shannon_entropy(np.full(100, 3.0)) == 0
    assert shannon_entropy([0, 1, 2, 3], bins=4) == pytest.approx(2)

    rng = np.random.default_rng(12)
    x, y = rng.uniform(0, 1, (2, 100_000))
    assert shannon_entropy(x, y, bins=32) == pytest.approx(10, abs=0.05)
    assert 0 <= shannon_entropy(x, bins=32) <= 5


def test_azimuth():
    assert np.ptp(unwrap_azimuth([350, 10])) == 20
    agg = aggregate_azimuth(np.array([340.0, 350.0, 10.0]), np.arange(3.0))
    assert agg["median"] == pytest.approx(350)
    assert agg["p95"] == pytest.approx(8)
    assert agg["slope"] == pytest.approx(15)


@pytest.mark.parametrize("center", [0.0, 180.0])
def test_azimuth_ncv_continuity(center):
    # a small rotation across the seam moves the ncv a little
    offsets = np.random.default_rng(3).uniform(-3, 3, 101)
    times = np.arange(101.0)
    ncvs = [
        aggregate_azimuth(np.mod(center + delta + offsets, 360), times)["ncv"]
        for delta in (-0.1, 0.1)
    ]
    assert ncvs[0] == pytest.approx(ncvs[1], abs=0.1)


def test_circular_median():
    assert circular_median([359, 1, 2]) == 1
    assert circular_median([10, 20, 25, 30, 200]) == 25
    assert np.isnan(circular_median([]))
    assert unwrap_azimuth([359, 1, 2]).tolist() == [-1.0, 1.0, 2.0]


def test_temporal_features():
    # 2 on-surface strokes of 1 s, separated by 0.5 s in-air
    sess = make_session(
        [segment(1, 200), segment(0, 100, x0=200), segment(1, 200, x0=300)]
    )
    f = as_dict(temporal_features(sess))
    assert f["duration_writing:global:none"] == pytest.approx(2.5)
    assert f["duration_writing:on_surface:none"] == pytest.approx(2)
    assert f["duration_writing:in_air:none"] == pytest.approx(0.5)
    assert f["duration_ratio:global:none"] == pytest.approx(4)
    assert f["stroke_duration_ratio:global:none"] == pytest.approx(2)
    assert f["stroke_duration:on_surface:median"] == pytest.approx(1)


def test_temporal_no_in_air():
    sess = make_session([segment(1, 50)])
    f = as_dict(temporal_features(sess))
    assert f["duration_writing:global:none"] == pytest.approx(0.25)
    assert np.isnan(f["duration_writing:in_air:none"])
    assert np.isnan(f["duration_ratio:global:none"])
    assert np.isnan(f["stroke_duration:in_air:median"])


def test_stroke_duration_slope():
    sess = make_session(
        [
            segment(1, 40),
            segment(0, 10, x0=40),
            segment(1, 80, x0=50),
            segment(0, 10, x0=130),
            segment(1, 120, x0=140),
        ]
    )
    f = as_dict(temporal_features(sess))
    assert f["stroke_duration:on_surface:slope"] == pytest.approx(0.2)
    assert f["stroke_duration:on_surface:median"] == pytest.approx(0.4)


def test_boundary_air():
    sess = make_session([segment(0, 20), segment(1, 40, x0=20), segment(0, 20, x0=60)])
    f = as_dict(temporal_features(sess))
    assert np.isnan(f["duration_writing:in_air:none"])
    f = as_dict(temporal_features(sess, include_boundary_air=True))
    assert f["duration_writing:in_air:none"] == pytest.approx(0.2)


def test_kinematic_straight_line():
    # x(t) = 100 t, sampled at 200 Hz
    sess = make_session([segment(1, 200, dx=0.5, y=10)])
    f = as_dict(kinematic_features(sess))
    assert f["velocity:horizontal:on_surface:median"] == pytest.approx(100)
    assert f["velocity:on_surface:median"] == pytest.approx(100)
    assert f["velocity:vertical:on_surface:median"] == 0
    assert f["angular_velocity:on_surface:median"] == 0
    assert f["acceleration:on_surface:median"] == pytest.approx(0, abs=1e-6)
    assert np.isnan(f["velocity:in_air:median"])


def test_kinematic_circle():
    omega = 2 * np.pi
    t = np.arange(400) / RATE
    radius = 1000
    x, y = radius * np.cos(omega * t), radius * np.sin(omega * t)
    sess = Session(x, y, t, np.ones(t.size), sampling_rate=RATE)
    f = as_dict(kinematic_features(sess))
    assert f["angular_velocity:on_surface:median"] == pytest.approx(omega, rel=0.01)
    assert f["velocity:on_surface:median"] == pytest.approx(radius * omega, rel=1e-3)
    assert f["acceleration:on_surface:median"] == pytest.approx(
        radius * omega**2, rel=1e-2
    )


def test_dynamic_features():
    n = 2001
    t = np.arange(n) / RATE
    sess = Session(
        np.arange(n),
        np.zeros(n),
        t,
        np.ones(n),
        pressure=np.full(n, 512.0),
        tilt=np.full(n, 45.0),
        azimuth=np.full(n, 90.0),
    )
    f = as_dict(dynamic_features(sess))
    assert f["pressure:on_surface:median"] == 512
    assert np.isnan(f["pressure:on_surface:ncv"])
    assert f["pressure:on_surface:slope"] == pytest.approx(0, abs=1e-9)
    assert f["tilt:global:median"] == 45
    assert f["azimuth:global:median"] == pytest.approx(90)

    # pressure ramp 0 -> 1000 over 10 s
    f = as_dict(dynamic_features(sess.replace(pressure=100 * t)))
    assert f["pressure:on_surface:slope"] == pytest.approx(100)


def test_spatial_features():
    sess = make_session([(1, [0, 10, 10], [0, 0, 4])])
    f = as_dict(spatial_features(sess))
    assert f["stroke_width:on_surface:median"] == 10
    assert f["stroke_height:on_surface:median"] == 4
    assert np.isnan(f["stroke_width:on_surface:ncv"])
    assert np.isnan(f["stroke_width:in_air:median"])


def test_other_features():
    sess = make_session([(pen, [i], 0) for i, pen in enumerate([1, 0, 1, 0, 1])])
    f = as_dict(other_features(sess))
    assert f["interruptions:global:none"] == 2

    # 4 on-surface strokes of 0.5 s
    segments = []
    for i in range(4):
        segments.append(segment(1, 100, x0=200 * i))
        if i < 3:
            segments.append(segment(0, 10, x0=200 * i + 100))
    sess = make_session(segments)
    f = as_dict(other_features(sess))
    assert f["tempo:on_surface:none"] == pytest.approx(2)
    assert f["tempo:in_air:none"] == pytest.approx(20)
    assert f["interruptions:global:none"] == 3
    assert f["interruptions_relative:global:none"] == pytest.approx(3 / 2.15)
    # constant speed, no pen stop
    assert f["pen_stops:on_surface:none"] == 0
    assert np.isnan(f["pen_stop_duration:on_surface:median"])


def test_pen_stops():
    # 0.1 s stop in the middle of a stroke
    x = np.concatenate(
        [np.arange(100) * 2.0, np.full(20, 198.0), 198 + np.arange(100) * 2.0]
    )
    sess = make_session([(1, x, 0)])
    f = as_dict(other_features(sess))
    assert f["pen_stops:on_surface:none"] == 1
    assert f["pen_stop_duration:on_surface:median"] == pytest.approx(0.1, abs=0.011)

    f = as_dict(other_features(sess, pen_stop_min_duration=0.2))
    assert f["pen_stops:on_surface:none"] == 0


def test_no_in_air_entropy():
    sess = make_session([segment(1, 50)])
    f = as_dict(other_features(sess))
    assert np.isnan(f["entropy:in_air:none"])
    assert np.isnan(f["tempo:in_air:none"])
    assert f["entropy:vertical:on_surface:none"] == 0


def test_extract_session(cohort):
    values = extract_session(cohort.sessions[0])
    assert [v.name for v in values] == [spec.name for spec in feature_catalog()]
    assert values[0].surface == "global"
    assert values[0].aggregation == "none"


def test_invalid_session():
    sess = Session([0, 1], [0, 0], [0, 0.005], [0, 0], subject_id="S0042")
    with pytest.raises(ExtractionError, match="S0042: NO_ON_SURFACE") as excinfo:
        extract_all([sess])
    assert excinfo.value.subject_id == "S0042"


def test_extract_all(cohort, matrix):
    assert matrix.n_rows == len(cohort.sessions)
    assert matrix.feature_names == [spec.name for spec in feature_catalog()]
    assert matrix.subject_ids == cohort.subject_ids

    # same session twice gives identical rows
    sess = cohort.sessions[3]
    m = extract_all([sess, sess], n_jobs=2)
    np.testing.assert_array_equal(m.values[0], m.values[1])
    np.testing.assert_array_equal(m.values[0], matrix.values[3])


def _features(session, **options):
    return FeatureExtractor(**options).extract(session)


@pytest.fixture(scope="module")
def batch():
    """500 random synthetic sessions, with their features."""
    spec = CohortSpec(n_intact=250, n_dd=250, strokes_per_session=4, seed=11)
    sessions = [generate_session(spec, i)[0] for i in range(spec.n_subjects)]
    return [(sess, _features(sess)) for sess in sessions]


def test_scale_equivariance(batch):
    scaled_signals = ("velocity", "acceleration", "stroke_width", "stroke_height")
    catalog = feature_catalog()
    for sess, ref in batch:
        scaled = _features(sess.replace(x=sess.x * 2, y=sess.y * 2))
        for spec in catalog:
            # angular velocity, entropy and timings are unchanged
            expected = ref[spec.name]
            if spec.signal in scaled_signals and spec.aggregation != "ncv":
                expected *= 2
            assert scaled[spec.name] == pytest.approx(
                expected, rel=1e-9, abs=1e-9, nan_ok=True
            ), (sess.subject_id, spec.name)


def test_time_shift_invariance(batch):
    catalog = feature_catalog()
    for sess, ref in batch:
        shifted = _features(sess.replace(t=sess.t + 1.0))
        for spec in catalog:
            # an ncv over equal durations is ill-conditioned
            if spec.aggregation == "ncv":
                continue
            assert shifted[spec.name] == pytest.approx(
                ref[spec.name], rel=1e-6, abs=1e-6, nan_ok=True
            ), (sess.subject_id, spec.name)


def _used_strokes(sess, surface):
    return [
        s
        for s in sess.strokes
        if s.surface == surface and not (surface == IN_AIR and s.is_boundary)
    ]


def test_tempo_duration_identity(batch):
    for sess, f in batch:
        for surface in (ON_SURFACE, IN_AIR):
            count = len(_used_strokes(sess, surface))
            if count == 0:
                assert np.isnan(f[f"tempo:{surface}:none"])
                continue
            product = f[f"tempo:{surface}:none"] * f[f"duration_writing:{surface}:none"]
            assert product == pytest.approx(count, rel=1e-12), sess.subject_id


def test_entropy_bounds(batch):
    bound = np.log2(32)
    for sess, f in batch:
        for surface in (ON_SURFACE, IN_AIR):
            for name, upper in (
                (f"entropy:horizontal:{surface}:none", bound),
                (f"entropy:vertical:{surface}:none", bound),
                (f"entropy:{surface}:none", 2 * bound),
            ):
                if not np.isnan(f[name]):
                    assert 0 <= f[name] <= upper + 1e-12, (sess.subject_id, name)


def test_ncv_identity(batch):
    for sess, f in batch:
        for surface in (ON_SURFACE, IN_AIR):
            durations = [s.duration for s in _used_strokes(sess, surface)]
            if not durations:
                continue
            q1, med, q3 = np.percentile(durations, [25, 50, 75])
            expected = med / (q3 - q1) if q3 > q1 else np.nan
            assert f[f"stroke_duration:{surface}:ncv"] == pytest.approx(
                expected, rel=1e-12, nan_ok=True
            ), sess.subject_id


def test_units_per_mm(cohort):
    sess = cohort.sessions[0]
    ref = _features(sess)
    mm = _features(sess, units_per_mm=1000)
    for name in ("stroke_width:on_surface:median", "velocity:on_surface:p95"):
        assert mm[name] == pytest.approx(ref[name] / 1000)
    assert mm["tempo:on_surface:none"] == ref["tempo:on_surface:none"]
