import datetime
import logging
import os

from .recipes import get_recipe_cls
from .reporter import Reporter
from .utils import deep_update, ensure_list, load_db, load_yaml_config, upsert_many
from .version import version as __version__

__all__ = ("DysGraph",)

SECTIONS = {
    "extract": "features",
    "analyze": "stats",
    "train": "model",
    "evaluate": "model",
    "explain": "explain",
    "synth": "synth",
}
"""Settings section holding the parameters of each recipe."""


class DysGraph(Reporter):
    """The main class running the pipeline steps.

    It reads the settings, opens the database where runs and ingested
    sessions are recorded, and runs each step as a recipe with the
    parameters from the settings, overridden by the keyword arguments of
    the step methods.

    Parameters
    ----------
    settings_file : str, optional
        YAML settings file. Without it the built-in defaults are used.
    settings_kw : dict, optional
        Values merged over the settings (after the file).
    loglevel : str, optional
        Log level, overrides the settings.

    """

    def __init__(self, settings_file=None, settings_kw=None, loglevel=None):
        super().__init__()

        self.logger = logging.getLogger(__name__)
        self.settings_file = settings_file
        if settings_file is not None:
            if not os.path.isfile(settings_file):
                raise FileNotFoundError(f"settings file '{settings_file}' not found")
            self.logger.debug("loading settings from %s", settings_file)
        else:
            self.logger.debug("using the default settings")

        self.conf = load_yaml_config(settings_file)
        if settings_kw:
            deep_update(
                self.conf, {k: v for k, v in settings_kw.items() if v is not None}
            )

        self.set_loglevel(loglevel or self.conf.get("loglevel", "INFO"))
        self.version = __version__
        self.raw_path = self.conf["raw_path"]
        self.output_path = self.conf["output_path"]
        self.log_dir = self.conf["log_dir"]
        self.n_jobs = self.conf["n_jobs"]

        self.db = load_db(filename=self.conf.get("db"), db_env=self.conf.get("db_env"))
        self.tables = {"runs": "runs", "sessions": "sessions"}
        for attrname, tablename in self.tables.items():
            setattr(self, attrname, self.db[tablename])

    def set_loglevel(self, level):
        """Set the log level of the terminal handler."""
        logger = logging.getLogger("")
        level = level.upper()
        logger.setLevel(level)
        if logger.handlers:
            logger.handlers[0].setLevel(level)

    def _recipe_params(self, recipe_cls, overrides):
        """Parameters of a recipe: settings section, global seed, then the
        explicit overrides (None values are ignored)."""
        section = self.conf.get(SECTIONS[recipe_cls.recipe_name], {})
        params = {k: v for k, v in section.items() if k in recipe_cls.default_params}
        if "seed" in recipe_cls.default_params and recipe_cls.recipe_name != "synth":
            params["seed"] = self.conf["seed"]
        if "confound" in recipe_cls.default_params and "confound" not in section:
            params["confound"] = self.conf["stats"]["confound"]
        if recipe_cls.recipe_name in ("train", "explain"):
            params.setdefault("top_k", self.conf["explain"]["top_k"])
        if recipe_cls.recipe_name == "explain":
            params.setdefault("group_by", self.conf["model"].get("group_by"))
        params.update({k: v for k, v in overrides.items() if v is not None})
        return params

    def _instantiate_recipe(self, recipe_cls, output_dir=None):
        """Instantiate the recipe object, with the output and log directories
        from the settings."""
        output_dir = output_dir or self.output_path
        return recipe_cls(output_dir=output_dir, log_dir=self.log_dir)

    def run_recipe(self, recipe_name, inputs, params=None, output_dir=None, **kwargs):
        """Run a recipe and record the run in the database.

        Parameters
        ----------
        recipe_name : str
            Name of the recipe.
        inputs : list of str
            Input files or directories.
        params : dict
            Parameters overriding the settings.
        output_dir : str
            Output directory, default to ``output_path``.
        **kwargs
            Passed to the recipe's ``run`` method.

        Returns
        -------
        The recipe object, with its results in ``recipe.results``.

        """
        recipe_cls = get_recipe_cls(recipe_name)
        self.logger.info("Running %s", recipe_name)
        recipe = self._instantiate_recipe(recipe_cls, output_dir=output_dir)
        params = self._recipe_params(recipe_cls, params or {})
        date_run = datetime.datetime.now().isoformat()

        recipe.activate_file_logger()
        status = "failed"
        try:
            recipe.run(inputs, params=params, **kwargs)
            status = "partial" if getattr(recipe, "partial", False) else "ok"
        finally:
            recipe.deactivate_file_logger()
            self._save_run(recipe, date_run, status)
        return recipe

    def _save_run(self, recipe, date_run, status):
        row = {
            "recipe_name": recipe.recipe_name,
            "date_run": date_run,
            "output_dir": recipe.output_dir,
            "inputs": ", ".join(recipe.inputs),
            "dysgraph_version": __version__,
            "status": status,
            **recipe.dump(json_col=True),
        }
        with self.db as tx:
            tx[self.tables["runs"]].insert(row)

        sessions = getattr(recipe, "sessions_info", None)
        if sessions:
            rows = [
                {
                    **{k: v for k, v in info.items() if k != "diagnostics"},
                    "date_run": date_run,
                }
                for info in sessions
            ]
            upsert_many(self.db, self.tables["sessions"], rows, keys=["path"])
        self.logger.debug("run saved in the database (%s)", status)

    # -- pipeline steps ------------------------------------------------------------

    def extract(self, paths=None, keep_going=False, **params):
        """Extract the features of SVC files or directories (default to
        ``raw_path``)."""
        paths = ensure_list(paths) or [self.raw_path]
        return self.run_recipe(
            "extract", paths, params, n_jobs=self.n_jobs, keep_going=keep_going
        )

    def _matrix_file(self, matrix):
        return matrix or os.path.join(self.output_path, "features.csv")

    def analyze(self, matrix=None, **params):
        """Exploratory analysis of a feature matrix (default to the last
        extracted one)."""
        return self.run_recipe(
            "analyze", [self._matrix_file(matrix)], params, n_jobs=self.n_jobs
        )

    def train(self, target="diagnosis", matrix=None, **params):
        """Hyperparameter search and final model for a target."""
        return self.run_recipe(
            "train",
            [self._matrix_file(matrix)],
            params,
            target=target,
            n_jobs=self.n_jobs,
        )

    def evaluate(self, model, matrix=None, **params):
        """Cross-validate the configuration of a saved model."""
        return self.run_recipe(
            "evaluate", [model, self._matrix_file(matrix)], params, n_jobs=self.n_jobs
        )

    def explain(self, model, matrix=None, **params):
        """SHAP exports of a saved model."""
        return self.run_recipe(
            "explain", [model, self._matrix_file(matrix)], params, n_jobs=self.n_jobs
        )

    def synth(self, outdir=None, **params):
        """Generate a synthetic cohort (default to ``raw_path``)."""
        return self.run_recipe("synth", [], params, output_dir=outdir or self.raw_path)
