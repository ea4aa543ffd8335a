"""Synthetic cohorts of handwriting sessions with known group differences.

Each subject has a latent severity ``s`` (around 0 for intact children,
around 1 for dysgraphic children). Every effect factor ``f`` of the
`CohortSpec` acts as ``f ** s``, so that a factor of 1 has no effect and the
diagnosis and the questionnaire scores share one ground truth.

On-surface strokes are loops drawn by integrating a heading whose rate (the
angular velocity) is a constant plus a sum of sinusoids. They are separated
by straight in-air transitions, and the session starts and ends with the pen
hovering.

"""

import logging
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
from astropy.table import Table

from .settings import HPSQC_RANGES
from .signals import HpsqcScore, Session, write_session
from .utils import write_json, write_table

__all__ = (
    "CohortSpec",
    "Cohort",
    "generate_session",
    "generate_cohort",
    "write_cohort",
)

UNITS_PER_MM = 1000.0
PEN_SPEED = 20.0  # mm/s
LOOP_FREQUENCY = 1.5  # turns per second
LOOP_SIZE = 2.0  # mm, offset between consecutive strokes
STROKE_DURATION = 0.3  # s
IN_AIR_GAP = 0.2  # s, mean in-air transition of an intact child

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CohortSpec:
    """Parameters of a synthetic cohort.

    The ``*_factor`` fields are the ratios between a typical dysgraphic child
    (severity 1) and an intact one (severity 0).
    """

    n_intact: int = 60
    n_dd: int = 60
    seed: int = 0
    in_air_duration_factor: float = 1.6
    interruption_rate_factor: float = 1.4
    stroke_height_factor: float = 1.5
    angular_velocity_ncv_factor: float = 1.3
    in_air_tempo_factor: float = 0.7
    strokes_per_session: int = 30
    sampling_rate: float = 200.0
    tick_rate: float = 1000.0
    position_noise: float = 0.5
    duration_noise: float = 0.3
    severity_spread: float = 0.2
    score_noise: float = 2.5
    p_boy_intact: float = 0.5
    p_boy_dd: float = 0.7
    sex_effect: float = 1.0

    def __post_init__(self):
        if self.n_intact < 1 or self.n_dd < 1:
            raise ValueError("n_intact and n_dd must be >= 1")
        if self.strokes_per_session < 2:
            raise ValueError("strokes_per_session must be >= 2")
        for f in fields(self):
            if f.name.endswith("_factor") or f.name in (
                "sampling_rate",
                "tick_rate",
                "sex_effect",
            ):
                if not getattr(self, f.name) > 0:
                    raise ValueError(f"{f.name} must be positive")
        for name in ("position_noise", "duration_noise", "score_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0 <= self.severity_spread < 0.5:
            raise ValueError("severity_spread must be in [0, 0.5)")
        for name in ("p_boy_intact", "p_boy_dd"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        ticks = self.tick_rate / self.sampling_rate
        if abs(ticks - round(ticks)) > 1e-9:
            raise ValueError("tick_rate must be a multiple of sampling_rate")

    @property
    def n_subjects(self):
        return self.n_intact + self.n_dd

    @property
    def in_air_factors(self):
        """In-air duration, interruption and in-air tempo factors used by the
        generator.

        The in-air tempo is the number of in-air movements per in-air second,
        so the tempo factor must equal the interruption factor divided by the
        duration factor. When the given factors disagree, the logarithm of
        each one is moved by a third of the mismatch.

        >>> f = CohortSpec(in_air_tempo_factor=1.4 / 1.6).in_air_factors
        >>> round(f["in_air_duration_factor"], 6)
        1.6

        """
        mismatch = (
            math.log(
                self.interruption_rate_factor
                / (self.in_air_duration_factor * self.in_air_tempo_factor)
            )
            / 3
        )
        return {
            "in_air_duration_factor": self.in_air_duration_factor * math.exp(mismatch),
            "interruption_rate_factor": self.interruption_rate_factor
            * math.exp(-mismatch),
            "in_air_tempo_factor": self.in_air_tempo_factor * math.exp(mismatch),
        }

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Cohort:
    """Generated sessions with their ground truth."""

    spec: CohortSpec
    sessions: list
    severities: np.ndarray

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.sessions]

    @property
    def labels(self):
        """1 for dysgraphic, 0 for intact subjects."""
        return np.array([s.diagnosis == "dysgraphic" for s in self.sessions], dtype=int)

    @property
    def scores(self):
        return [s.hpsqc for s in self.sessions]

    def table(self):
        rows = []
        for sess, sev in zip(self.sessions, self.severities):
            rows.append(
                [
                    sess.subject_id,
                    sess.sex,
                    sess.class_year,
                    sess.diagnosis,
                    float(sev),
                    sess.n_samples,
                    len(sess.strokes),
                ]
                + [getattr(sess.hpsqc, name) for name in HPSQC_RANGES]
            )
        names = [
            "subject_id",
            "sex",
            "class_year",
            "diagnosis",
            "severity",
            "n_samples",
            "n_strokes",
        ] + [f"hpsqc_{name}" for name in HPSQC_RANGES]
        return Table(rows=rows, names=names)


def _severity(rng, dysgraphic, spread):
    center = 1.0 if dysgraphic else 0.0
    return center + rng.uniform(-spread, spread)


def _scores(rng, severity, noise):
    """HPSQ-C scores: a noisy increasing function of the severity, split into
    valid sub-scores."""
    total = int(np.clip(round(10 + 14 * severity + rng.normal(0, noise)), 0, 40))
    leg_max, perf_max, wb_max = (
        HPSQC_RANGES["legibility"],
        HPSQC_RANGES["performance_time"],
        HPSQC_RANGES["well_being"],
    )
    leg = round(total * leg_max / 40 + rng.normal(0, 1))
    leg = int(np.clip(leg, max(0, total - perf_max - wb_max), min(leg_max, total)))
    rest = total - leg
    perf = round(rest * perf_max / (perf_max + wb_max) + rng.normal(0, 1))
    perf = int(np.clip(perf, max(0, rest - wb_max), min(perf_max, rest)))
    return HpsqcScore(leg, perf, rest - perf)


def _loop(rng, n, dt, ncv_scale):
    """Pen positions (mm) of one on-surface stroke, starting at the origin."""
    omega = 2 * np.pi * LOOP_FREQUENCY
    sigma = 0.5 * omega / ncv_scale
    t = np.arange(n) * dt
    ncomp = int(rng.integers(2, 5))
    amplitudes = rng.dirichlet(np.ones(ncomp))
    freqs = rng.uniform(1, 4, ncomp)
    phases = rng.uniform(0, 2 * np.pi, ncomp)
    xi = np.sum(
        amplitudes[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None]),
        axis=0,
    )
    sign = 1 if rng.random() < 0.5 else -1
    heading = rng.uniform(0, 2 * np.pi) + sign * np.cumsum(omega + sigma * xi) * dt
    step = PEN_SPEED * dt
    x = np.concatenate([[0.0], np.cumsum(step * np.cos(heading[:-1]))])
    y = np.concatenate([[0.0], np.cumsum(step * np.sin(heading[:-1]))])
    return x, y


def generate_session(spec, index):
    """Generate the session of subject ``index`` of a cohort.

    Subjects ``0 .. n_intact - 1`` are intact, the others dysgraphic. The
    random stream only depends on ``(spec.seed, index)``.

    Returns
    -------
    session : `~dysgraph.signals.Session`
    severity : float

    """
    rng = np.random.default_rng([spec.seed, index])
    dysgraphic = index >= spec.n_intact
    severity = _severity(rng, dysgraphic, spec.severity_spread)
    p_boy = spec.p_boy_dd if dysgraphic else spec.p_boy_intact
    sex = "boy" if rng.random() < p_boy else "girl"
    class_year = int(rng.integers(3, 5))
    hpsqc = _scores(rng, severity, spec.score_noise)

    fs = spec.sampling_rate
    dt = 1 / fs
    scale = spec.stroke_height_factor ** severity
    if sex == "boy":
        scale *= spec.sex_effect
    ncv_scale = spec.angular_velocity_ncv_factor ** severity
    factors = spec.in_air_factors
    n0 = spec.strokes_per_session
    n_interruptions = n0 * factors["interruption_rate_factor"] ** severity
    n_strokes = max(2, int(rng.poisson(n_interruptions)))
    in_air_total = (
        n0
        * IN_AIR_GAP
        * factors["in_air_duration_factor"] ** severity
        * math.exp(rng.normal(0, spec.duration_noise))
    )
    gaps = in_air_total * rng.dirichlet(np.full(n_strokes - 1, 4.0))

    xs, ys, status = [], [], []

    def hover(x0, y0, x1, y1, n):
        frac = np.arange(1, n + 1) / (n + 1)
        xs.append(x0 + (x1 - x0) * frac)
        ys.append(y0 + (y1 - y0) * frac)
        status.append(np.zeros(n, dtype=int))

    origin = np.array([0.0, 0.0])
    start = origin
    lead = max(1, round(rng.uniform(0.1, 0.3) * fs))
    hover(start[0] - LOOP_SIZE, start[1] + LOOP_SIZE, start[0], start[1], lead)
    for k in range(n_strokes):
        n = max(3, round(STROKE_DURATION * math.exp(rng.normal(0, 0.2)) * fs))
        x, y = _loop(rng, n, dt, ncv_scale)
        x, y = start[0] + scale * x, start[1] + scale * y
        xs.append(x)
        ys.append(y)
        status.append(np.ones(n, dtype=int))
        end = np.array([x[-1], y[-1]])
        if k < n_strokes - 1:
            start = origin + [(k + 1) * LOOP_SIZE * 2, 0.0]
            n_gap = max(1, int(round(gaps[k] * fs)))
            hover(end[0], end[1], start[0], start[1], n_gap)
    trail = max(1, round(rng.uniform(0.1, 0.3) * fs))
    hover(end[0], end[1], end[0] + LOOP_SIZE, end[1] + LOOP_SIZE, trail)

    x = np.concatenate(xs) * UNITS_PER_MM
    y = np.concatenate(ys) * UNITS_PER_MM
    pen = np.concatenate(status)
    n = x.size
    x = np.round(x + rng.normal(0, spec.position_noise, n))
    y = np.round(y + rng.normal(0, spec.position_noise, n))
    step = int(round(spec.tick_rate / fs))
    t = np.arange(n) * step / spec.tick_rate

    pressure = np.where(
        pen == 1, np.clip(np.round(400 + rng.normal(0, 40, n)), 1, None), 0
    )
    tilt = np.clip(np.round(55 + rng.normal(0, 3, n)), 0, 90)
    azimuth = np.mod(np.round(200 + rng.normal(0, 5, n)), 360)

    session = Session(
        x,
        y,
        t,
        pen,
        pressure=pressure,
        tilt=tilt,
        azimuth=azimuth,
        sampling_rate=fs,
        tick_rate=spec.tick_rate,
        units_per_mm=UNITS_PER_MM,
        subject_id=f"S{index:04d}",
        sex=sex,
        class_year=class_year,
        diagnosis="dysgraphic" if dysgraphic else "intact",
        hpsqc=hpsqc,
    )
    return session, severity


def generate_cohort(spec):
    """Generate a reproducible synthetic cohort.

    Returns
    -------
    `Cohort`

    """
    factors = spec.in_air_factors
    if not math.isclose(
        factors["in_air_tempo_factor"], spec.in_air_tempo_factor, rel_tol=1e-6
    ):
        logger.info(
            "in-air factors adjusted to be consistent: duration %.3f, "
            "interruptions %.3f, tempo %.3f",
            factors["in_air_duration_factor"],
            factors["interruption_rate_factor"],
            factors["in_air_tempo_factor"],
        )
    sessions, severities = [], []
    for index in range(spec.n_subjects):
        session, severity = generate_session(spec, index)
        sessions.append(session)
        severities.append(severity)
    logger.info(
        "generated %d intact and %d dysgraphic sessions (seed %d)",
        spec.n_intact,
        spec.n_dd,
        spec.seed,
    )
    return Cohort(spec, sessions, np.array(severities))


def write_cohort(cohort, directory, config=None):
    """Write one SVC file and sidecar per subject, with the ground truth in
    ``cohort.csv`` and ``cohort.json``.

    Returns the list of written SVC files.
    """
    os.makedirs(directory, exist_ok=True)
    paths = []
    for session in cohort.sessions:
        path = os.path.join(directory, f"{session.subject_id}.svc")
        paths.append(write_session(session, path))
    table = cohort.table()
    write_table(table, os.path.join(directory, "cohort.csv"), config=config)
    write_json(
        os.path.join(directory, "cohort.json"),
        {
            "spec": cohort.spec.to_dict(),
            "subjects": [dict(zip(table.colnames, row)) for row in table.iterrows()],
        },
        config=config,
    )
    logger.info("cohort written to %s", directory)
    return paths
