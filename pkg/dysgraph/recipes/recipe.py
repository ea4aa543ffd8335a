import datetime
import json
import logging
import os
import re
import time

from mpdaf.log import setup_logfile

__all__ = ("BaseRecipe",)


class BaseRecipe:
    """Base class for the pipeline steps.

    A recipe takes a list of inputs (files or directories), runs with a set
    of parameters merged over `default_params`, and writes its artifacts to
    `output_dir`. Each run can be logged to its own file, whose warnings are
    counted afterwards.

    """

    recipe_name = None
    """Name of the recipe."""

    output_dir = None
    """Default output directory."""

    default_params = {}
    """Default parameters."""

    version = "1"
    """Recipe version, bumped when its outputs change."""

    n_inputs_min = 1
    """Minimum number of inputs."""

    def __init__(self, output_dir=None, log_dir=".", **kwargs):
        self.nbwarn = 0
        self.timeit = 0
        self.logger = logging.getLogger(__name__)
        self.outfiles = []
        self.inputs = []
        self.log_dir = log_dir
        self.log_file = None
        self.param = {}
        self.results = None

        if output_dir is not None:
            self.output_dir = output_dir

    @property
    def config(self):
        """The resolved run configuration, embedded in the artifacts."""
        return {
            "recipe": self.recipe_name,
            "recipe_version": self.version,
            "inputs": list(self.inputs),
            "params": dict(self.param),
        }

    def dump_params(self, json_col=False):
        """Dump parameters to a JSON string."""
        return json.dumps(self.param, sort_keys=True) if json_col else self.param

    def dump(self, json_col=False):
        """Dump recipe results, stats, parameters in a dict."""
        return {
            "tottime": self.timeit,
            "nbwarn": self.nbwarn,
            "log_file": self.log_file,
            "params": self.dump_params(json_col=json_col),
            "recipe_version": self.version,
            "outputs": json.dumps(self.outfiles) if json_col else self.outfiles,
        }

    def activate_file_logger(self):
        """Send all log messages of the run to a file, at the debug level."""
        os.makedirs(self.log_dir, exist_ok=True)
        date = datetime.datetime.now().isoformat()
        self.log_file = os.path.join(self.log_dir, f"{self.recipe_name}-{date}.log")
        fmt = "%(asctime)s [%(levelname)07s] %(name)s: %(message)s"
        setup_logfile(
            name="",
            level="DEBUG",
            logfile=self.log_file,
            fmt=fmt,
            rotating=False,
            datefmt="%H:%M:%S",
        )
        self.logger.info("starting at %s", date)

    def deactivate_file_logger(self):
        """Remove the file logger, and count the warnings and errors."""
        logger = logging.getLogger("")
        for handler in list(logger.handlers):
            if isinstance(handler, logging.FileHandler):
                handler.close()
                logger.removeHandler(handler)

        if self.log_file is not None and os.path.isfile(self.log_file):
            with open(self.log_file) as f:
                self.nbwarn = len(re.findall(r"\[WARNING\]|\[  ERROR\]", f.read()))
            self.logger.info("%d warnings", self.nbwarn)

    def _run(self, inputs, **kwargs):
        raise NotImplementedError

    def add_output(self, filename):
        self.outfiles.append(filename)
        return filename

    def output_file(self, name):
        return os.path.join(self.output_dir, name)

    def run(self, inputs, params=None, **kwargs):
        """Run the recipe.

        Subclasses must implement `BaseRecipe._run` to customize this.

        Parameters
        ----------
        inputs : str or list of str
            Input files or directories.
        params : dict
            Parameters for the recipe, merged over the default ones.
        **kwargs
            Additional arguments are passed to `BaseRecipe._run`.

        """
        t0 = time.time()
        info = self.logger.info
        self.results = None

        if isinstance(inputs, str):
            inputs = [inputs]
        inputs = list(inputs)
        if len(inputs) < self.n_inputs_min:
            raise ValueError(
                f"{self.recipe_name} needs at least {self.n_inputs_min} input(s)"
            )
        self.inputs = inputs

        if self.output_dir is None:
            raise ValueError("no output directory")
        os.makedirs(self.output_dir, exist_ok=True)

        info("- Log file           : %s", self.log_file)
        info("- Output directory   : %s", self.output_dir)
        info("- Non-default params :")

        unknown = set(params or {}) - set(self.default_params)
        if unknown:
            raise ValueError(
                f"unknown parameters for {self.recipe_name}: "
                + ", ".join(sorted(unknown))
            )
        self.param = {**self.default_params, **(params or {})}
        for key, value in self.param.items():
            default = self.default_params[key]
            if value != default:
                info("%15s = %s (%s)", key, value, default)

        self.results = self._run(inputs, **kwargs)

        self.timeit = (time.time() - t0) / 60
        info("%s successfully run, %d outputs", self.recipe_name, len(self.outfiles))
        info("Execution time %.2f minutes", self.timeit)
        return self.results
