import functools
import logging
import os
import sys
from dataclasses import fields

import click

from .boost import OBJECTIVES, GbtTrainingError
from .dysgraph import DysGraph
from .features import ExtractionError
from .settings import (
    EXIT_FAILURE,
    EXIT_MODEL_ERROR,
    EXIT_PARSE_ERROR,
    EXIT_PARTIAL,
    EXIT_VALIDATION_ERROR,
)
from .signals import SvcParseError
from .synth import CohortSpec
from .version import version as __version__

CONTEXT_SETTINGS = dict(help_option_names=["-h", "--help"])
DEFAULT_SETTINGS_FILE = "settings.yml"

EXIT_CODES = (
    (SvcParseError, EXIT_PARSE_ERROR),
    (ExtractionError, EXIT_VALIDATION_ERROR),
    (GbtTrainingError, EXIT_MODEL_ERROR),
)

logger = logging.getLogger(__name__)


def exit_code(exc):
    """Exit code for an exception.

    >>> exit_code(GbtTrainingError('degenerate target'))
    5
    >>> exit_code(KeyError('hpsqc_total'))
    1

    """
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return EXIT_FAILURE


def pipeline_step(func):
    """Pass the DysGraph object to a command, and turn its errors into a log
    message and an exit code (unless --pdb or --debug is set)."""

    @functools.wraps(func)
    @click.pass_context
    def wrapper(ctx, *args, **kwargs):
        try:
            return func(ctx.obj, *args, **kwargs)
        except Exception as exc:
            if ctx.meta.get("dysgraph.reraise"):
                raise
            logger.error("%s failed: %s", ctx.command.name, exc)
            sys.exit(exit_code(exc))

    return wrapper


@click.group(context_settings=CONTEXT_SETTINGS)
@click.version_option(version=__version__)
@click.option("--loglevel", help="log level (debug, info, warning, etc.)")
@click.option(
    "--settings",
    envvar="DYSGRAPH_SETTINGS",
    help="settings file, default to settings.yml if it exists",
)
@click.option("-j", "--jobs", type=int, help="number of parallel jobs")
@click.option("--seed", type=int, help="random seed of the model and synth steps")
@click.option("--pdb", is_flag=True, help="run pdb if an exception occurs")
@click.option("--debug", is_flag=True, help="debug log level + pdb")
@click.pass_context
def cli(ctx, loglevel, settings, jobs, seed, pdb, debug):
    """Online handwriting analysis for developmental dysgraphia.

    See the help of the sub-commands for more details.

    By default dysgraph reads a settings file (``settings.yml``) in the
    current directory if it exists, and uses the built-in settings
    otherwise. This file can also be set with ``--settings``, or with the
    ``DYSGRAPH_SETTINGS`` environment variable.

    The logging level can be set in the settings file, and overridden with
    ``--loglevel``.

    """
    if settings is None and os.path.isfile(DEFAULT_SETTINGS_FILE):
        settings = DEFAULT_SETTINGS_FILE

    if debug:
        loglevel = "debug"
        pdb = True
    ctx.meta["dysgraph.reraise"] = pdb

    settings_kw = {"n_jobs": jobs, "seed": seed}
    if seed is not None:
        settings_kw["synth"] = {"seed": seed}

    try:
        ctx.obj = DysGraph(settings, settings_kw=settings_kw, loglevel=loglevel)
    except Exception as e:
        logger.error("failed to create the DysGraph object: %s", e)
        if pdb:
            raise
        sys.exit(EXIT_FAILURE)

    logger.debug("dysgraph version %s", __version__)

    if pdb:

        def run_pdb(type, value, tb):
            import pdb
            import traceback

            traceback.print_exception(type, value, tb)
            pdb.pm()

        sys.excepthook = run_pdb


@click.argument("paths", nargs=-1, type=click.Path(exists=True))
@click.option(
    "--keep-going",
    is_flag=True,
    help="skip unreadable or invalid files (exit code 6 if any)",
)
@click.option("--bins", type=int, help="histogram bins of the entropy features")
@click.option(
    "--pen-stop-threshold",
    type=float,
    help="pen stop velocity threshold, fraction of the on-surface p95 velocity",
)
@click.option(
    "--pen-stop-min-duration", type=float, help="minimum pen stop duration (s)"
)
@click.option(
    "--include-boundary-air/--exclude-boundary-air",
    default=None,
    help="use the leading and trailing in-air strokes",
)
@click.option("--units-per-mm", type=float, help="convert lengths to mm")
@click.option(
    "--smoothing-window", type=int, help="moving-average window (samples, odd)"
)
@click.option("--tick-rate", type=float, help="timestamp ticks per second")
@click.option("--sampling-rate", type=float, help="nominal sampling rate (Hz)")
@pipeline_step
def extract(dg, paths, keep_going, **params):
    """Extract the feature matrix of SVC files.

    PATHS are SVC files or directories, default to the raw_path setting.
    """
    recipe = dg.extract(paths, keep_going=keep_going, **params)
    if recipe.partial:
        logger.warning("%d files were skipped", len(recipe.failures))
        sys.exit(EXIT_PARTIAL)


@click.argument("matrix", required=False)
@click.option(
    "-t", "--target", "targets", multiple=True, help="target, can be repeated"
)
@click.option("--alpha", type=float, help="significance level of the adjusted p")
@click.option(
    "--fdr-family",
    type=click.Choice(["separate", "joint"]),
    help="adjust each test family separately, or all together",
)
@click.option("--confound", help="metadata column regressed out of the features")
@click.option("--no-confound", is_flag=True, help="disable the confound regression")
@click.option("--top-k", type=int, help="number of top features in the summary")
@click.option("--group-by", help="also analyze each level of this column")
@pipeline_step
def analyze(dg, matrix, targets, no_confound, **params):
    """Exploratory statistical analysis of a feature matrix.

    MATRIX defaults to the features.csv file of the output directory.
    """
    if targets:
        params["targets"] = list(targets)
    if no_confound:
        params["confound"] = False
    dg.analyze(matrix, **params)


@click.argument("matrix", required=False)
@click.option("-t", "--target", default="diagnosis", help="target, default diagnosis")
@click.option(
    "--objective",
    type=click.Choice(OBJECTIVES),
    help="objective, inferred from the target by default",
)
@click.option("--n-iter", type=int, help="iterations of the random search")
@click.option("--folds", type=int, help="number of folds")
@click.option("--repeats", type=int, help="number of repeats of the k-fold")
@click.option("--n-rounds", type=int, help="boosting rounds")
@click.option("--early-stopping-rounds", type=int, help="enable early stopping")
@click.option(
    "--confound-within-folds/--no-confound-within-folds",
    default=None,
    help="regress out the confound inside each training fold",
)
@click.option(
    "--explain/--no-explain", default=None, help="SHAP exports of the final model"
)
@click.option("--top-k", type=int, help="number of top features of the SHAP report")
@click.option("--group-by", help="also train a model per level of this column")
@pipeline_step
def train(dg, matrix, target, **params):
    """Hyperparameter search and final model for a target.

    MATRIX defaults to the features.csv file of the output directory.
    """
    dg.train(target, matrix, **params)


@click.argument("model", type=click.Path(exists=True))
@click.argument("matrix", required=False)
@click.option("-t", "--target", help="target, default to the model's target")
@click.option("--folds", type=int, help="number of folds")
@click.option("--repeats", type=int, help="number of repeats of the k-fold")
@click.option(
    "--confound-within-folds/--no-confound-within-folds",
    default=None,
    help="regress out the confound inside each training fold",
)
@click.option("--group-by", help="also evaluate on each level of this column")
@pipeline_step
def evaluate(dg, model, matrix, **params):
    """Cross-validate the configuration of a saved MODEL."""
    dg.evaluate(model, matrix, **params)


@click.argument("model", type=click.Path(exists=True))
@click.argument("matrix", required=False)
@click.option("-t", "--target", help="target, default to the model's target")
@click.option("--top-k", type=int, help="number of top features")
@click.option("--group-by", help="also explain each level of this column")
@pipeline_step
def explain(dg, model, matrix, **params):
    """SHAP values of a saved MODEL on a matrix."""
    dg.explain(model, matrix, **params)


def cohort_options(func):
    """Add one option per CohortSpec field (the seed is the global one)."""
    for field in reversed(fields(CohortSpec)):
        if field.name == "seed":
            continue
        option = "--" + field.name.replace("_", "-")
        func = click.option(
            option, type=field.type, help=f"default {field.default}"
        )(func)
    return func


@click.argument("outdir", required=False)
@cohort_options
@pipeline_step
def synth(dg, outdir, **params):
    """Generate a synthetic cohort in OUTDIR (default to raw_path)."""
    dg.synth(outdir, **params)


@click.option("--sessions", is_flag=True, help="list the ingested sessions")
@click.option("--warnings", is_flag=True, help="list the runs with warnings")
@click.option("--detail", is_flag=True, help="show the warning messages")
@pipeline_step
def report(dg, sessions, warnings, detail):
    """Print the runs, sessions and results."""
    if warnings:
        dg.info_warnings(mode="detail" if detail else "list")
    else:
        dg.info(show_sessions=sessions)


for cmd in (extract, analyze, train, evaluate, explain, synth, report):
    cli.command(context_settings=CONTEXT_SETTINGS)(cmd)


def main():
    cli(prog_name="dysgraph")


if __name__ == "__main__":
    main()
