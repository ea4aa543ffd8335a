import os
import shutil

import numpy as np
import pytest

from dysgraph import DysGraph
from dysgraph.features import extract_all
from dysgraph.signals import Session
from dysgraph.synth import CohortSpec, generate_cohort, write_cohort

CURDIR = os.path.dirname(os.path.abspath(__file__))
TESTDIR = os.path.join(CURDIR, "..", "docs", "_static")

SMALL_COHORT = CohortSpec(n_intact=6, n_dd=6, strokes_per_session=6, seed=1)


def pytest_ignore_collect(collection_path, config):
    if collection_path.name == "version.py":
        return True


@pytest.fixture
def workdir(tmpdir):
    """Temporary working directory with the example settings file."""
    cwd = os.getcwd()
    tmpdir = str(tmpdir)
    shutil.copy(os.path.join(TESTDIR, "settings.yml"), tmpdir)
    os.chdir(tmpdir)
    yield tmpdir
    os.chdir(cwd)


@pytest.fixture
def dg(workdir):
    """Fixture to get the DysGraph object."""
    return DysGraph("settings.yml")


@pytest.fixture(scope="session")
def cohort():
    return generate_cohort(SMALL_COHORT)


@pytest.fixture(scope="session")
def matrix(cohort):
    return extract_all(cohort.sessions)


@pytest.fixture(scope="session")
def cohort_dir(tmpdir_factory, cohort):
    """Directory with the SVC files of the small cohort."""
    directory = str(tmpdir_factory.mktemp("raw"))
    write_cohort(cohort, directory)
    return directory


def make_session(segments, rate=200.0, **kwargs):
    """Build a session from (pen_status, x, y) segments sampled at ``rate``.

    ``x`` and ``y`` are arrays of positions; all samples are equally spaced
    in time.
    """
    xs, ys, status = [], [], []
    for pen, x, y in segments:
        x = np.asarray(x, dtype=float)
        xs.append(x)
        ys.append(np.broadcast_to(np.asarray(y, dtype=float), x.shape))
        status.append(np.full(x.size, pen))
    x = np.concatenate(xs)
    n = x.size
    status = np.concatenate(status)
    kwargs.setdefault("pressure", np.where(status == 1, 400.0, 0.0))
    kwargs.setdefault("tilt", np.full(n, 50.0))
    kwargs.setdefault("azimuth", np.full(n, 180.0))
    return Session(
        x,
        np.concatenate(ys),
        np.arange(n) / rate,
        status,
        sampling_rate=rate,
        **kwargs,
    )
