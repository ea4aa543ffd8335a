"""Online handwriting recordings: sessions, strokes and the SVC file format.

A session is stored column-wise (one numpy array per signal). The SVC text
format has a header line with the number of samples, followed by one line
per sample with the columns ``x y t pen_status azimuth tilt pressure``.
Timestamps are integer device ticks, converted to seconds with the tick
rate.

"""

import json
import logging
import os
from typing import NamedTuple

import numpy as np
from astropy.utils.decorators import lazyproperty

from .flags import Diagnostic
from .settings import HPSQC_RANGES
from .utils import format_number

__all__ = (
    "ON_SURFACE",
    "IN_AIR",
    "SVC_COLUMNS",
    "Sample",
    "HpsqcScore",
    "Session",
    "Stroke",
    "SvcParseError",
    "parse_svc",
    "serialize_svc",
    "read_session",
    "write_session",
    "segment_strokes",
    "validate",
)

ON_SURFACE = "on_surface"
IN_AIR = "in_air"

SVC_COLUMNS = ("x", "y", "t", "pen_status", "azimuth", "tilt", "pressure")
"""Column order of the SVC format."""

SEXES = ("girl", "boy")
DIAGNOSES = ("intact", "dysgraphic")

logger = logging.getLogger(__name__)


class SvcParseError(ValueError):
    """Error raised for a malformed SVC file, with the 1-based line number."""

    def __init__(self, message, lineno=None, filename=None):
        self.lineno = lineno
        self.filename = filename
        loc = f"line {lineno}" if lineno is not None else ""
        if filename:
            loc = f"{filename}, {loc}" if loc else filename
        super().__init__(f"{loc}: {message}" if loc else message)


class Sample(NamedTuple):
    x: float
    y: float
    t: float
    pen_status: int
    pressure: float
    tilt: float
    azimuth: float


class HpsqcScore:
    """HPSQ-C questionnaire scores.

    The total is computed from the sub-scores when not given. Use
    `HpsqcScore.problems` to check the range and sum invariants, or
    `HpsqcScore.check` to raise on invalid scores.

    """

    fields = ("legibility", "performance_time", "well_being", "total")

    def __init__(self, legibility, performance_time, well_being, total=None):
        self.legibility = int(legibility)
        self.performance_time = int(performance_time)
        self.well_being = int(well_being)
        if total is None:
            total = self.legibility + self.performance_time + self.well_being
        self.total = int(total)

    def __repr__(self):
        items = ", ".join(f"{k}={getattr(self, k)}" for k in self.fields)
        return f"HpsqcScore({items})"

    def __eq__(self, other):
        if not isinstance(other, HpsqcScore):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.fields if k in d})

    def to_dict(self):
        return {k: getattr(self, k) for k in self.fields}

    def problems(self):
        """Return a list of invariant violations (empty if valid)."""
        out = []
        for name, maxval in HPSQC_RANGES.items():
            value = getattr(self, name)
            if not 0 <= value <= maxval:
                out.append(f"{name}={value} outside [0, {maxval}]")
        subtotal = self.legibility + self.performance_time + self.well_being
        if subtotal != self.total:
            out.append(f"total={self.total} differs from the sum {subtotal}")
        return out

    def check(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid HPSQ-C scores: " + "; ".join(problems))
        return self


def _readonly(values, dtype=float):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


class Session:
    """One handwriting recording, with the subject metadata.

    Parameters
    ----------
    x, y : array-like
        Pen position, device units.
    t : array-like
        Timestamps, in seconds.
    pen_status : array-like
        1 when the pen touches the surface, 0 when in-air.
    pressure, tilt, azimuth : array-like, optional
        Pressure (device units), tilt and azimuth (degrees). Default to 0.
    sampling_rate : float
        Nominal sampling rate, in Hz.
    tick_rate : float
        Number of timestamp ticks per second, used by the SVC format.
    units_per_mm : float, optional
        Spatial resolution of the device.
    subject_id, sex, class_year, diagnosis, hpsqc
        Subject metadata, all optional.

    """

    meta_fields = (
        "subject_id",
        "sex",
        "class_year",
        "diagnosis",
        "hpsqc",
        "sampling_rate",
        "tick_rate",
        "units_per_mm",
    )

    def __init__(
        self,
        x,
        y,
        t,
        pen_status,
        pressure=None,
        tilt=None,
        azimuth=None,
        sampling_rate=200.0,
        tick_rate=1000.0,
        units_per_mm=None,
        subject_id=None,
        sex=None,
        class_year=None,
        diagnosis=None,
        hpsqc=None,
    ):
        self.x = _readonly(x)
        n = self.x.size
        zeros = np.zeros(n)
        self.y = _readonly(y)
        self.t = _readonly(t)
        self.pen_status = _readonly(pen_status)
        self.pressure = _readonly(zeros if pressure is None else pressure)
        self.tilt = _readonly(zeros if tilt is None else tilt)
        self.azimuth = _readonly(zeros if azimuth is None else azimuth)

        for name in SVC_COLUMNS:
            if getattr(self, name).shape != (n,):
                raise ValueError(f"column {name} should be 1D with {n} values")

        if sex is not None and sex not in SEXES:
            raise ValueError(f"invalid sex {sex!r}, should be in {SEXES}")
        if diagnosis is not None and diagnosis not in DIAGNOSES:
            raise ValueError(f"invalid diagnosis {diagnosis!r}")
        if sampling_rate <= 0 or tick_rate <= 0:
            raise ValueError("sampling_rate and tick_rate must be positive")
        if isinstance(hpsqc, dict):
            hpsqc = HpsqcScore.from_dict(hpsqc)

        self.sampling_rate = float(sampling_rate)
        self.tick_rate = float(tick_rate)
        self.units_per_mm = None if units_per_mm is None else float(units_per_mm)
        self.subject_id = subject_id
        self.sex = sex
        self.class_year = None if class_year is None else int(class_year)
        self.diagnosis = diagnosis
        self.hpsqc = hpsqc

    def __repr__(self):
        return (
            f"<Session({self.subject_id}, {self.n_samples} samples, "
            f"{len(self.strokes)} strokes)>"
        )

    def __len__(self):
        return self.n_samples

    @classmethod
    def from_samples(cls, samples, **kwargs):
        """Create a session from a list of `Sample`."""
        cols = {name: [getattr(s, name) for s in samples] for name in Sample._fields}
        return cls(**cols, **kwargs)

    @property
    def n_samples(self):
        return self.x.size

    @property
    def samples(self):
        """List of `Sample`, in temporal order."""
        return [
            Sample(*row)
            for row in zip(
                self.x.tolist(),
                self.y.tolist(),
                self.t.tolist(),
                self.pen_status.astype(int).tolist(),
                self.pressure.tolist(),
                self.tilt.tolist(),
                self.azimuth.tolist(),
            )
        ]

    @property
    def duration(self):
        """Total duration (s), the sum of the sample durations."""
        return float(self.sample_durations.sum())

    @property
    def on_surface(self):
        return self.pen_status == 1

    @property
    def sample_period(self):
        return 1 / self.sampling_rate

    @property
    def meta(self):
        """Subject and device metadata, as stored in the sidecar file."""
        meta = {k: getattr(self, k) for k in self.meta_fields}
        if self.hpsqc is not None:
            meta["hpsqc"] = self.hpsqc.to_dict()
        return meta

    @lazyproperty
    def strokes(self):
        return segment_strokes(self)

    @lazyproperty
    def sample_durations(self):
        """Time owned by each sample: the interval until the next sample, and
        one nominal sample period for the last one."""
        if self.n_samples == 0:
            return np.zeros(0)
        return np.append(np.diff(self.t), self.sample_period)

    def replace(self, **kwargs):
        """Return a new session with some columns or metadata replaced."""
        params = {name: getattr(self, name) for name in SVC_COLUMNS}
        params.update({k: getattr(self, k) for k in self.meta_fields})
        params.update(kwargs)
        return self.__class__(**params)


class Stroke:
    """Maximal run of samples with a constant pen status.

    Column attributes (``x``, ``t``, ...) are views of the session arrays.
    """

    def __init__(self, session, index, start, stop):
        self.session = session
        self.index = index
        self.start = start
        self.stop = stop
        status = session.pen_status[start]
        self.surface = ON_SURFACE if status == 1 else IN_AIR

    def __repr__(self):
        return f"<Stroke({self.index}, {self.surface}, {self.n_samples} samples)>"

    def __len__(self):
        return self.n_samples

    def __getattr__(self, name):
        if name in SVC_COLUMNS:
            return getattr(self.session, name)[self.start : self.stop]
        raise AttributeError(name)

    @property
    def n_samples(self):
        return self.stop - self.start

    @property
    def samples(self):
        return self.session.samples[self.start : self.stop]

    @property
    def duration(self):
        return float(np.sum(self.session.sample_durations[self.start : self.stop]))

    @property
    def is_boundary(self):
        """True for the first and last strokes of the session."""
        return self.start == 0 or self.stop == self.session.n_samples

    @property
    def width(self):
        return float(np.ptp(self.x))

    @property
    def height(self):
        return float(np.ptp(self.y))


def segment_strokes(session):
    """Split a session into strokes, maximal runs of constant pen status."""
    n = session.n_samples
    if n == 0:
        return []
    cuts = np.flatnonzero(np.diff(session.pen_status) != 0) + 1
    bounds = [0, *cuts.tolist(), n]
    return [
        Stroke(session, i, start, stop)
        for i, (start, stop) in enumerate(zip(bounds[:-1], bounds[1:]))
    ]


def parse_svc(data, tick_rate=1000.0, filename=None, **kwargs):
    """Parse the content of a SVC file.

    Parameters
    ----------
    data : bytes or str
        File content.
    tick_rate : float
        Number of timestamp ticks per second.
    filename : str, optional
        Used in error messages.
    **kwargs
        Additional `Session` parameters (metadata).

    Returns
    -------
    `Session`

    Raises
    ------
    SvcParseError
        With the line number of the first problem.

    """
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError:
            raise SvcParseError("not a text file", lineno=1, filename=filename)

    lines = data.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise SvcParseError("empty file", lineno=1, filename=filename)

    try:
        nsamples = int(lines[0].strip())
    except ValueError:
        raise SvcParseError(
            f"invalid header {lines[0]!r}, expected the sample count",
            lineno=1,
            filename=filename,
        )
    if nsamples <= 0:
        raise SvcParseError("no samples", lineno=1, filename=filename)

    body = lines[1:]
    if len(body) < nsamples:
        raise SvcParseError(
            f"expected {nsamples} samples, found {len(body)}",
            lineno=len(body) + 2,
            filename=filename,
        )
    if len(body) > nsamples:
        raise SvcParseError(
            f"unexpected line after {nsamples} samples",
            lineno=nsamples + 2,
            filename=filename,
        )

    ncol = len(SVC_COLUMNS)
    values = np.empty((nsamples, ncol))
    for i, line in enumerate(body):
        lineno = i + 2
        items = line.split()
        if len(items) != ncol:
            raise SvcParseError(
                f"expected {ncol} columns, found {len(items)}",
                lineno=lineno,
                filename=filename,
            )
        try:
            values[i] = [float(item) for item in items]
        except ValueError:
            raise SvcParseError(
                f"invalid number in {line!r}", lineno=lineno, filename=filename
            )

        status = values[i, 3]
        if status not in (0, 1):
            raise SvcParseError(
                f"pen status {format_number(status)} not in {{0, 1}}",
                lineno=lineno,
                filename=filename,
            )
        if i > 0 and not values[i, 2] > values[i - 1, 2]:
            raise SvcParseError(
                "timestamp not strictly increasing", lineno=lineno, filename=filename
            )

    cols = dict(zip(SVC_COLUMNS, values.T))
    cols["t"] = cols["t"] / tick_rate
    return Session(**cols, tick_rate=tick_rate, **kwargs)


def _format_ticks(value):
    ticks = round(value)
    if abs(value - ticks) <= 1e-6 * max(1.0, abs(value)):
        return str(int(ticks))
    return repr(float(value))


def serialize_svc(session):
    """Serialize a session to the SVC text format."""
    ticks = session.t * session.tick_rate
    lines = [str(session.n_samples)]
    for i in range(session.n_samples):
        row = [
            format_number(session.x[i]),
            format_number(session.y[i]),
            _format_ticks(ticks[i]),
            format_number(session.pen_status[i]),
            format_number(session.azimuth[i]),
            format_number(session.tilt[i]),
            format_number(session.pressure[i]),
        ]
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def sidecar_path(path):
    return os.path.splitext(path)[0] + ".json"


def read_session(path, tick_rate=1000.0, sampling_rate=200.0):
    """Read a SVC file and its JSON sidecar, if any.

    Without sidecar, the subject id is the file name without extension, and
    the given tick rate and sampling rate are used.
    """
    meta = {}
    side = sidecar_path(path)
    if os.path.isfile(side):
        with open(side) as f:
            meta = json.load(f)
        logger.debug("read sidecar %s", side)

    kwargs = {k: meta[k] for k in Session.meta_fields if meta.get(k) is not None}
    kwargs.setdefault("subject_id", os.path.splitext(os.path.basename(path))[0])
    kwargs.setdefault("sampling_rate", sampling_rate)
    tick_rate = kwargs.pop("tick_rate", tick_rate)

    with open(path, "rb") as f:
        data = f.read()
    return parse_svc(data, tick_rate=tick_rate, filename=path, **kwargs)


def write_session(session, path):
    """Write a session as a SVC file with its JSON sidecar."""
    with open(path, "w") as f:
        f.write(serialize_svc(session))
    meta = {k: v for k, v in session.meta.items() if v is not None}
    with open(sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def validate(session):
    """Check the session invariants.

    Returns a list of `Diagnostic`, empty for a valid session. The session is
    not modified.
    """
    diags = []
    n = session.n_samples
    if n == 0:
        return [Diagnostic("EMPTY_SESSION")]

    for name in SVC_COLUMNS:
        for i in np.flatnonzero(~np.isfinite(getattr(session, name))):
            diags.append(Diagnostic("NONFINITE_VALUE", i, f"non-finite {name}"))

    for i in np.flatnonzero(np.diff(session.t) <= 0) + 1:
        diags.append(Diagnostic("NON_MONOTONE_TIME", i))

    status = session.pen_status
    for i in np.flatnonzero((status != 0) & (status != 1)):
        diags.append(Diagnostic("PEN_STATUS_INVALID", i))

    if not np.any(status == 1):
        diags.append(Diagnostic("NO_ON_SURFACE"))

    for i in np.flatnonzero(session.pressure < 0):
        diags.append(Diagnostic("NEGATIVE_PRESSURE", i))

    for i in np.flatnonzero((status == 0) & (session.pressure > 0)):
        diags.append(Diagnostic("PRESSURE_IN_AIR", i))

    for i in np.flatnonzero((session.tilt < 0) | (session.tilt > 90)):
        diags.append(Diagnostic("TILT_OUT_OF_RANGE", i))

    for i in np.flatnonzero((session.azimuth < 0) | (session.azimuth >= 360)):
        diags.append(Diagnostic("AZIMUTH_OUT_OF_RANGE", i))

    if n > 1:
        period = np.median(np.diff(session.t))
        if period > 2 * session.sample_period:
            diags.append(
                Diagnostic(
                    "LOW_SAMPLING_RATE",
                    message=f"median sample period {period * 1000:.1f} ms",
                )
            )

    if session.hpsqc is not None:
        problems = session.hpsqc.problems()
        if problems:
            diags.append(Diagnostic("HPSQC_INCONSISTENT", message="; ".join(problems)))

    return diags
