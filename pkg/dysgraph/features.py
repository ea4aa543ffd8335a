"""Handwriting feature battery.

Each session gives one value per feature of the catalog. Vector-valued
signals (per-stroke or per-sample values) are reduced with four
aggregations: ``median``, ``ncv`` (median divided by the inter-quartile
range), ``p95`` (95th percentile) and ``slope`` (least-squares slope against
the stroke index or the time). Missing values are NaN.

Feature names follow ``<signal>[:<projection>]:<surface>:<aggregation>``,
for example ``velocity:vertical:on_surface:p95`` or
``duration_writing:in_air:none``.

"""

import logging
from typing import NamedTuple

import numpy as np
from astropy.utils.decorators import lazyproperty
from joblib import Parallel, delayed
from scipy.ndimage import uniform_filter1d

from .flags import errors
from .signals import IN_AIR, ON_SURFACE, validate

__all__ = (
    "AGGREGATIONS",
    "MISSING",
    "FeatureValue",
    "FeatureSpec",
    "ExtractionError",
    "FeatureExtractor",
    "feature_catalog",
    "temporal_features",
    "kinematic_features",
    "dynamic_features",
    "spatial_features",
    "other_features",
    "extract_session",
    "extract_all",
    "aggregate",
    "ncv",
    "slope",
    "shannon_entropy",
    "circular_median",
    "unwrap_azimuth",
)

AGGREGATIONS = ("median", "ncv", "p95", "slope")
SURFACES = (ON_SURFACE, IN_AIR)
GLOBAL = "global"
MISSING = np.nan

DEFAULT_OPTIONS = dict(
    bins=32,
    pen_stop_threshold=0.1,
    pen_stop_min_duration=0.03,
    include_boundary_air=False,
    units_per_mm=None,
    smoothing_window=None,
)

KINEMATIC_SIGNALS = {
    ("velocity", None): "v",
    ("velocity", "horizontal"): "vx",
    ("velocity", "vertical"): "vy",
    ("acceleration", None): "a",
    ("acceleration", "horizontal"): "ax",
    ("acceleration", "vertical"): "ay",
    ("angular_velocity", None): "w",
}
"""Kinematic signals (name, projection) and their key in the per-stroke
kinematics."""

logger = logging.getLogger(__name__)


class ExtractionError(ValueError):
    """A session does not satisfy the extraction preconditions."""

    def __init__(self, subject_id, diagnostics):
        self.subject_id = subject_id
        self.diagnostics = diagnostics
        codes = ", ".join(sorted({d.code for d in diagnostics}))
        super().__init__(f"session {subject_id}: {codes}")


class FeatureValue(NamedTuple):
    name: str
    value: float
    surface: str
    aggregation: str

    @property
    def missing(self):
        return bool(np.isnan(self.value))


class FeatureSpec(NamedTuple):
    """Entry of the feature catalog."""

    name: str
    group: str
    signal: str
    projection: str
    surface: str
    aggregation: str
    unit: str
    description: str
    nonstandard: bool = False

    def to_dict(self):
        return self._asdict()


def feature_name(signal, surface, aggregation="none", projection=None):
    """Build the canonical name of a feature.

    >>> feature_name('velocity', 'on_surface', 'p95', projection='vertical')
    'velocity:vertical:on_surface:p95'
    >>> feature_name('duration_writing', 'in_air')
    'duration_writing:in_air:none'

    """
    parts = [signal, projection, surface, aggregation]
    return ":".join(p for p in parts if p)


def feature_catalog(units_per_mm=None):
    """Return the list of `FeatureSpec`, in canonical order."""
    length = "mm" if units_per_mm else "units"
    entries = []

    def add(group, signal, surface, agg, unit, desc, projection=None, **kw):
        name = feature_name(signal, surface, agg, projection=projection)
        entries.append(
            FeatureSpec(name, group, signal, projection, surface, agg, unit, desc, **kw)
        )

    def add_vector(group, signal, surface, unit, desc, per, projection=None, **kw):
        units = {"median": unit, "ncv": "1", "p95": unit, "slope": f"{unit}/{per}"}
        for agg in AGGREGATIONS:
            add(group, signal, surface, agg, units[agg], desc, projection, **kw)

    # temporal
    for surface in (GLOBAL, ON_SURFACE, IN_AIR):
        add("temporal", "duration_writing", surface, "none", "s", "Duration of writing")
    add("temporal", "duration_ratio", GLOBAL, "none", "1", "On-surface/in-air duration")
    for surface in SURFACES:
        add_vector(
            "temporal", "stroke_duration", surface, "s", "Duration of strokes", "stroke"
        )
    add(
        "temporal",
        "stroke_duration_ratio",
        GLOBAL,
        "none",
        "1",
        "Median on-surface/median in-air stroke duration",
    )

    # kinematic
    kin_units = {
        "velocity": f"{length}/s",
        "acceleration": f"{length}/s^2",
        "angular_velocity": "rad/s",
    }
    for surface in SURFACES:
        for signal, projection in KINEMATIC_SIGNALS:
            desc = signal.replace("_", " ").capitalize()
            if projection:
                desc += f" ({projection} projection)"
            unit = kin_units[signal]
            add_vector(
                "kinematic", signal, surface, unit, desc, "s", projection=projection
            )

    # dynamic
    add_vector("dynamic", "pressure", ON_SURFACE, "units", "Pressure", "s")
    add_vector("dynamic", "tilt", GLOBAL, "deg", "Tilt (altitude)", "s")
    add_vector("dynamic", "azimuth", GLOBAL, "deg", "Azimuth (circular)", "s")

    # spatial
    for surface in SURFACES:
        nonstandard = surface == IN_AIR
        add_vector(
            "spatial",
            "stroke_width",
            surface,
            length,
            "Width of strokes",
            "stroke",
            nonstandard=nonstandard,
        )
        add_vector(
            "spatial",
            "stroke_height",
            surface,
            length,
            "Height of strokes",
            "stroke",
            nonstandard=nonstandard,
        )

    # other
    add("other", "interruptions", GLOBAL, "none", "1", "Number of pen elevations")
    add(
        "other",
        "interruptions_relative",
        GLOBAL,
        "none",
        "1/s",
        "Number of pen elevations per second of writing",
    )
    add("other", "pen_stops", ON_SURFACE, "none", "1", "Number of pen stops")
    add_vector(
        "other", "pen_stop_duration", ON_SURFACE, "s", "Pen stop duration", "stop"
    )
    for surface in SURFACES:
        add("other", "tempo", surface, "none", "1/s", "Strokes per second")
    for surface in SURFACES:
        for projection in (None, "horizontal", "vertical"):
            add(
                "other",
                "entropy",
                surface,
                "none",
                "bit",
                "Shannon entropy of the position histogram",
                projection=projection,
            )

    return entries


def feature_names(units_per_mm=None):
    return [spec.name for spec in feature_catalog(units_per_mm)]


# -- aggregations ----------------------------------------------------------------


def ncv(values):
    """Non-parametric coefficient of variation, median / IQR.

    >>> ncv([1, 2, 3, 4, 5])
    1.5
    >>> np.isnan(ncv([2, 2, 2]))
    True

    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return MISSING
    q1, med, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    if iqr == 0:
        return MISSING
    return float(med / iqr)


def slope(values, x=None):
    """Least-squares slope of values against x (default: the index).

    >>> round(slope([0.2, 0.4, 0.6]), 12)
    0.2
    >>> slope([1, 2, 4], x=[0, 0.5, 1.5])
    2.0

    """
    values = np.asarray(values, dtype=float)
    if x is None:
        x = np.arange(values.size, dtype=float)
    x = np.asarray(x, dtype=float)
    if values.size < 2:
        return MISSING
    xc = x - x.mean()
    denom = np.dot(xc, xc)
    if denom == 0:
        return MISSING
    return float(np.dot(xc, values - values.mean()) / denom)


def aggregate(values, x=None, slope_values=None):
    """Compute all aggregations of a vector.

    Parameters
    ----------
    values : array-like
        Values used for median, ncv and p95.
    x : array-like, optional
        Abscissa for the slope (default: index).
    slope_values : array-like, optional
        Values used for the slope, when they differ from ``values`` (signed
        values whose magnitude is aggregated).

    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return dict.fromkeys(AGGREGATIONS, MISSING)
    return {
        "median": float(np.median(values)),
        "ncv": ncv(values),
        "p95": float(np.percentile(values, 95)),
        "slope": slope(values if slope_values is None else slope_values, x),
    }


def shannon_entropy(*columns, bins=32):
    """Entropy (bits) of the histogram of one or two coordinates.

    Equal-width bins over the min-max range of each coordinate.

    >>> shannon_entropy([1, 1, 1])
    0.0
    >>> shannon_entropy([0, 1], bins=2)
    1.0

    """
    columns = [np.asarray(c, dtype=float) for c in columns]
    if columns[0].size == 0:
        return MISSING
    if len(columns) == 1:
        counts, _ = np.histogram(columns[0], bins=bins)
    else:
        counts, _, _ = np.histogram2d(columns[0], columns[1], bins=bins)
    p = counts[counts > 0].ravel() / counts.sum()
    return float(abs(-np.sum(p * np.log2(p))))


def circular_median(values):
    """Angle (degrees, in [0, 360)) minimizing the sum of the arc distances
    to the values. The minimum is searched among the values.

    >>> circular_median([350, 0, 20])
    0.0

    """
    values = np.mod(np.asarray(values, dtype=float), 360)
    if values.size == 0:
        return MISSING
    candidates, counts = np.unique(values, return_counts=True)
    best, best_cost = candidates[0], np.inf
    for start in range(0, candidates.size, 512):
        chunk = candidates[start : start + 512]
        dist = np.abs(chunk[:, None] - candidates[None, :])
        cost = np.minimum(dist, 360 - dist) @ counts
        i = int(np.argmin(cost))
        if cost[i] < best_cost - 1e-9:
            best, best_cost = chunk[i], cost[i]
    return float(best)


def unwrap_azimuth(values):
    """Unwrap angles (degrees) into the 360° window centered on their
    circular median.

    >>> unwrap_azimuth([350, 10]).tolist()
    [-10.0, 10.0]

    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values
    center = circular_median(values)
    offset = (values - center + 180) % 360 - 180
    return np.round(center + offset, 10)


def aggregate_azimuth(values, times):
    """Aggregations of angles: median and p95 are reported modulo 360, the
    dispersion and slope are computed on the unwrapped values.

    The ncv is the angular distance between the median and 0°, divided by
    the IQR, so that it does not jump when the angles cross 0°.
    """
    unwrapped = unwrap_azimuth(values)
    agg = aggregate(unwrapped, times)
    if unwrapped.size:
        q1, med, q3 = np.percentile(unwrapped, [25, 50, 75])
        distance = abs((med + 180) % 360 - 180)
        agg["ncv"] = MISSING if q3 == q1 else float(distance / (q3 - q1))
    for key in ("median", "p95"):
        if not np.isnan(agg[key]):
            agg[key] = float(agg[key] % 360)
    return agg


# -- extraction --------------------------------------------------------------------


class _SessionSignals:
    """Derived signals of a session, computed once per extraction."""

    def __init__(self, session, options):
        self.session = session
        self.options = options
        self.scale = 1 / options["units_per_mm"] if options["units_per_mm"] else 1

    @lazyproperty
    def strokes(self):
        """Strokes used by the features, per surface."""
        include_boundary = self.options["include_boundary_air"]
        out = {ON_SURFACE: [], IN_AIR: []}
        for stroke in self.session.strokes:
            if stroke.surface == IN_AIR and stroke.is_boundary and not include_boundary:
                continue
            out[stroke.surface].append(stroke)
        return out

    @lazyproperty
    def durations(self):
        return {
            surface: np.array([s.duration for s in strokes])
            for surface, strokes in self.strokes.items()
        }

    def positions(self, stroke):
        x, y = stroke.x * self.scale, stroke.y * self.scale
        window = self.options["smoothing_window"]
        if window and window > 1 and stroke.n_samples >= window:
            x = uniform_filter1d(x, size=window, mode="nearest")
            y = uniform_filter1d(y, size=window, mode="nearest")
        return x, y

    @lazyproperty
    def stroke_kinematics(self):
        """Per-surface list of (stroke, kinematics) for strokes with at least
        3 samples."""
        return {
            surface: [
                (stroke, _stroke_kinematics(*self.positions(stroke), stroke.t))
                for stroke in strokes
                if stroke.n_samples >= 3
            ]
            for surface, strokes in self.strokes.items()
        }

    @lazyproperty
    def kinematics(self):
        """Per-surface kinematic series concatenated over strokes, or None
        when no stroke is long enough."""
        out = {}
        for surface, parts in self.stroke_kinematics.items():
            if parts:
                out[surface] = {
                    key: np.concatenate([kin[key] for _, kin in parts])
                    for key in parts[0][1]
                }
            else:
                out[surface] = None
        return out


def _stroke_kinematics(x, y, t):
    vx = np.gradient(x, t)
    vy = np.gradient(y, t)
    ax = np.gradient(vx, t)
    ay = np.gradient(vy, t)

    dx, dy = np.diff(x), np.diff(y)
    moving = (dx != 0) | (dy != 0)
    phi = np.zeros(dx.size)
    if moving.any():
        idx = np.where(moving, np.arange(dx.size), -1)
        idx = np.maximum.accumulate(idx)
        idx[idx < 0] = np.flatnonzero(moving)[0]
        phi = np.arctan2(dy[idx], dx[idx])
    phi = np.unwrap(phi)
    tm = (t[:-1] + t[1:]) / 2
    w = np.diff(phi) / np.diff(tm)

    return {
        "t": t,
        "v": np.hypot(vx, vy),
        "vx": vx,
        "vy": vy,
        "a": np.hypot(ax, ay),
        "ax": ax,
        "ay": ay,
        "tw": t[1:-1],
        "w": w,
    }


class FeatureExtractor:
    """Compute the feature battery of sessions.

    Parameters
    ----------
    bins : int
        Histogram bins for the entropy features.
    pen_stop_threshold : float
        Pen stop velocity threshold, as a fraction of the session's
        on-surface p95 velocity.
    pen_stop_min_duration : float
        Minimum duration of a pen stop, in seconds.
    include_boundary_air : bool
        Use the leading and trailing in-air strokes in the in-air features.
    units_per_mm : float, optional
        If given, spatial and kinematic features are converted to mm.
    smoothing_window : int, optional
        Moving-average window (samples) applied to positions per stroke.

    """

    def __init__(self, **options):
        unknown = set(options) - set(DEFAULT_OPTIONS)
        if unknown:
            raise TypeError(f"unknown feature options: {', '.join(sorted(unknown))}")
        self.options = {**DEFAULT_OPTIONS, **options}
        self.logger = logging.getLogger(__name__)

    @lazyproperty
    def catalog(self):
        return feature_catalog(self.options["units_per_mm"])

    @lazyproperty
    def _specs(self):
        return {spec.name: spec for spec in self.catalog}

    def _signals(self, session):
        return _SessionSignals(session, self.options)

    def _values(self, computed):
        values = []
        for name, value in computed.items():
            spec = self._specs[name]
            values.append(
                FeatureValue(name, float(value), spec.surface, spec.aggregation)
            )
        return values

    def temporal(self, session, _sig=None):
        sig = _sig or self._signals(session)
        dur = sig.durations
        on, air = dur[ON_SURFACE], dur[IN_AIR]
        d_on = float(on.sum())
        d_air = float(air.sum()) if air.size else MISSING
        out = {
            "duration_writing:global:none": d_on + (0 if air.size == 0 else d_air),
            "duration_writing:on_surface:none": d_on,
            "duration_writing:in_air:none": d_air,
            "duration_ratio:global:none": d_on / d_air if air.size else MISSING,
        }
        for surface, values in dur.items():
            for agg, value in aggregate(values).items():
                out[feature_name("stroke_duration", surface, agg)] = value
        out["stroke_duration_ratio:global:none"] = (
            float(np.median(on) / np.median(air)) if on.size and air.size else MISSING
        )
        return out

    def kinematic(self, session, _sig=None):
        sig = _sig or self._signals(session)
        out = {}
        for surface in SURFACES:
            kin = sig.kinematics[surface]
            for signal, projection in KINEMATIC_SIGNALS:
                if kin is None:
                    agg = dict.fromkeys(AGGREGATIONS, MISSING)
                else:
                    key = KINEMATIC_SIGNALS[signal, projection]
                    times = kin["tw"] if key == "w" else kin["t"]
                    values = kin[key]
                    agg = aggregate(np.abs(values), times, slope_values=values)
                for name, value in agg.items():
                    out[feature_name(signal, surface, name, projection)] = value
        return out

    def dynamic(self, session, _sig=None):
        on = session.on_surface
        out = {}
        for name, value in aggregate(session.pressure[on], session.t[on]).items():
            out[feature_name("pressure", ON_SURFACE, name)] = value
        for name, value in aggregate(session.tilt, session.t).items():
            out[feature_name("tilt", GLOBAL, name)] = value
        for name, value in aggregate_azimuth(session.azimuth, session.t).items():
            out[feature_name("azimuth", GLOBAL, name)] = value
        return out

    def spatial(self, session, _sig=None):
        sig = _sig or self._signals(session)
        out = {}
        for surface, strokes in sig.strokes.items():
            widths, heights = [], []
            for stroke in strokes:
                x, y = sig.positions(stroke)
                widths.append(np.ptp(x))
                heights.append(np.ptp(y))
            pairs = (("stroke_width", widths), ("stroke_height", heights))
            for signal, values in pairs:
                for name, value in aggregate(values).items():
                    out[feature_name(signal, surface, name)] = value
        return out

    def pen_stops(self, sig):
        """Durations of the pen stops of a session."""
        kin = sig.kinematics[ON_SURFACE]
        if kin is None:
            return None
        thresh = self.options["pen_stop_threshold"] * np.percentile(kin["v"], 95)
        min_dur = self.options["pen_stop_min_duration"]
        sample_dur = sig.session.sample_durations
        stops = []
        for stroke, stroke_kin in sig.stroke_kinematics[ON_SURFACE]:
            slow = np.concatenate([[False], stroke_kin["v"] < thresh, [False]])
            edges = np.flatnonzero(np.diff(slow.astype(int)))
            for start, stop in zip(edges[::2], edges[1::2]):
                a, b = stroke.start + start, stroke.start + stop
                duration = float(np.sum(sample_dur[a:b]))
                if duration >= min_dur - 1e-9:
                    stops.append(duration)
        return np.array(stops)

    def other(self, session, _sig=None):
        sig = _sig or self._signals(session)
        status = session.pen_status
        dur = sig.durations
        d_on = dur[ON_SURFACE].sum()
        d_global = d_on + dur[IN_AIR].sum()
        n_int = int(np.sum((status[:-1] == 1) & (status[1:] == 0)))

        out = {
            "interruptions:global:none": float(n_int),
            "interruptions_relative:global:none": (
                n_int / d_global if d_global > 0 else MISSING
            ),
        }

        stops = self.pen_stops(sig)
        out["pen_stops:on_surface:none"] = MISSING if stops is None else len(stops)
        stop_agg = aggregate([] if stops is None else stops)
        for name, value in stop_agg.items():
            out[feature_name("pen_stop_duration", ON_SURFACE, name)] = value

        for surface in SURFACES:
            total = dur[surface].sum()
            count = dur[surface].size
            out[f"tempo:{surface}:none"] = count / total if count else MISSING

        bins = self.options["bins"]
        for surface, strokes in sig.strokes.items():
            if strokes:
                pos = [sig.positions(s) for s in strokes]
                x = np.concatenate([p[0] for p in pos])
                y = np.concatenate([p[1] for p in pos])
            else:
                x = y = np.zeros(0)
            out[f"entropy:{surface}:none"] = shannon_entropy(x, y, bins=bins)
            out[f"entropy:horizontal:{surface}:none"] = shannon_entropy(x, bins=bins)
            out[f"entropy:vertical:{surface}:none"] = shannon_entropy(y, bins=bins)
        return out

    def extract(self, session):
        """Compute all features of a session, as a dict in catalog order."""
        sig = self._signals(session)
        computed = {}
        for group in (self.temporal, self.kinematic, self.dynamic, self.spatial):
            computed.update(group(session, _sig=sig))
        computed.update(self.other(session, _sig=sig))
        return {spec.name: float(computed[spec.name]) for spec in self.catalog}

    def feature_values(self, session):
        return self._values(self.extract(session))


def _check_session(session):
    diags = errors(validate(session))
    if diags:
        raise ExtractionError(session.subject_id, diags)


def _group_values(method, session, options):
    _check_session(session)
    extractor = FeatureExtractor(**options)
    return extractor._values(getattr(extractor, method)(session))


def temporal_features(session, **options):
    """Durations of writing, duration ratios and stroke durations."""
    return _group_values("temporal", session, options)


def kinematic_features(session, **options):
    """Velocity, acceleration and angular velocity, per surface."""
    return _group_values("kinematic", session, options)


def dynamic_features(session, **options):
    """Pressure, tilt and azimuth."""
    return _group_values("dynamic", session, options)


def spatial_features(session, **options):
    """Width and height of strokes."""
    return _group_values("spatial", session, options)


def other_features(session, **options):
    """Interruptions, pen stops, tempo and entropy."""
    return _group_values("other", session, options)


def extract_session(session, **options):
    """All features of a session, as a list of `FeatureValue`."""
    _check_session(session)
    return FeatureExtractor(**options).feature_values(session)


def extract_all(sessions, n_jobs=1, **options):
    """Compute the feature matrix of a list of sessions.

    All sessions are validated first; the first one with an error-severity
    diagnostic aborts the extraction with an `ExtractionError`. Rows are in
    the order of the input sessions.

    Returns
    -------
    `dysgraph.matrix.FeatureMatrix`

    """
    from .matrix import FeatureMatrix

    for session in sessions:
        _check_session(session)

    extractor = FeatureExtractor(**options)
    logger.info(
        "extracting %d features from %d sessions",
        len(extractor.catalog),
        len(sessions),
    )
    rows = Parallel(n_jobs=n_jobs)(delayed(extractor.extract)(s) for s in sessions)
    return FeatureMatrix.from_rows(
        [s.meta for s in sessions],
        rows,
        feature_names=[spec.name for spec in extractor.catalog],
    )
